//! LOCF alignment of raw telemetry onto the downlink-slot timeline, and
//! row filtering (retransmissions, disallowed cells).

use std::collections::BTreeSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::channelsim::{LogEntry, LogRecord, RawTelemetryLog};
use crate::error::{Error, Result};
use crate::tdd;

/// Largest run of removed downlink slots a window or horizon may span.
pub const DEFAULT_MAX_GAP: u32 = 16;

/// One downlink slot with every slow metric carried forward to its tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotRecord {
    pub dl_slot_index: usize,
    pub tick: u64,
    pub num_rb: u16,
    /// Raw scheduled MCS; values 28..=31 mark retransmissions until filtered.
    pub mcs: u8,
    pub crc_pass: bool,
    pub ss_rsrp: f64,
    pub ss_sinr: f64,
    pub csi_rsrp: f64,
    pub csi_sinr: f64,
    pub dl_cqi: u8,
    pub pci: u16,
}

/// Dense per-downlink-slot table.
///
/// `gap_before[i]` counts downlink slots removed by filtering between row
/// `i - 1` and row `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotTable {
    pub rows: Vec<SlotRecord>,
    pub gap_before: Vec<u32>,
    pub max_gap: u32,
}

impl SlotTable {
    pub const TDD_PERIOD_SLOTS: u64 = tdd::PERIOD_SLOTS;
    pub const DL_SLOTS_PER_PERIOD: u64 = tdd::DL_SLOTS_PER_PERIOD;

    pub fn from_rows(rows: Vec<SlotRecord>) -> Self {
        let gap_before = vec![0; rows.len()];
        Self {
            rows,
            gap_before,
            max_gap: DEFAULT_MAX_GAP,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Whether rows `start..=end` contain no filtered gap above `max_gap`.
    pub fn span_is_contiguous(&self, start: usize, end: usize) -> bool {
        self.gap_before[start.saturating_add(1)..=end]
            .iter()
            .all(|&g| g <= self.max_gap)
    }

    /// Renders the table back into a log holding exactly the aligned values.
    pub fn render_log(&self) -> RawTelemetryLog {
        let mut entries = Vec::with_capacity(self.rows.len() * 5);
        let mut pci = None;
        for r in &self.rows {
            if pci != Some(r.pci) {
                pci = Some(r.pci);
                entries.push(LogEntry {
                    tick: r.tick,
                    record: LogRecord::PciChange { pci: r.pci },
                });
            }
            let records = [
                LogRecord::RsrpReport {
                    ss_rsrp_dbm: r.ss_rsrp,
                    csi_rsrp_dbm: r.csi_rsrp,
                },
                LogRecord::SinrReport {
                    ss_sinr_db: r.ss_sinr,
                    csi_sinr_db: r.csi_sinr,
                },
                LogRecord::CsfReport { dl_cqi: r.dl_cqi },
                LogRecord::PdschStatus {
                    mcs: r.mcs,
                    num_rb: r.num_rb,
                    crc_pass: r.crc_pass,
                },
            ];
            entries.extend(records.into_iter().map(|record| LogEntry {
                tick: r.tick,
                record,
            }));
        }
        RawTelemetryLog { entries }
    }

    const CSV_HEADER: [&'static str; 12] = [
        "dl_slot_index",
        "tick",
        "num_rb",
        "mcs",
        "crc_pass",
        "ss_rsrp",
        "ss_sinr",
        "csi_rsrp",
        "csi_sinr",
        "dl_cqi",
        "pci",
        "gap_before",
    ];

    /// Writes one CSV row per downlink slot: the ten slot columns, then the
    /// serving PCI and the filtered-gap count.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::CSV_HEADER)?;
        for (r, gap) in self.rows.iter().zip(&self.gap_before) {
            w.write_record([
                r.dl_slot_index.to_string(),
                r.tick.to_string(),
                r.num_rb.to_string(),
                r.mcs.to_string(),
                u8::from(r.crc_pass).to_string(),
                r.ss_rsrp.to_string(),
                r.ss_sinr.to_string(),
                r.csi_rsrp.to_string(),
                r.csi_sinr.to_string(),
                r.dl_cqi.to_string(),
                r.pci.to_string(),
                gap.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, max_gap: u32) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        if r.headers()?.iter().ne(Self::CSV_HEADER) {
            return Err(Error::Format("unexpected slot table header".into()));
        }
        let mut rows = Vec::new();
        let mut gap_before = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = |c: usize| Error::Format(format!("slot table row {}: bad column {c}", i + 2));
            macro_rules! col {
                ($c:expr) => {
                    rec.get($c)
                        .ok_or_else(|| bad($c))?
                        .parse()
                        .map_err(|_| bad($c))?
                };
            }
            let crc: u8 = col!(4);
            rows.push(SlotRecord {
                dl_slot_index: col!(0),
                tick: col!(1),
                num_rb: col!(2),
                mcs: col!(3),
                crc_pass: crc == 1,
                ss_rsrp: col!(5),
                ss_sinr: col!(6),
                csi_rsrp: col!(7),
                csi_sinr: col!(8),
                dl_cqi: col!(9),
                pci: col!(10),
            });
            gap_before.push(col!(11));
        }
        Ok(Self {
            rows,
            gap_before,
            max_gap,
        })
    }
}

#[derive(Default, Clone, Copy)]
struct CarriedState {
    cqi: Option<u8>,
    sinr: Option<(f64, f64)>,
    rsrp: Option<(f64, f64)>,
    pci: Option<u16>,
}

/// Aligns every slow-reported metric onto the downlink slots by carrying the
/// most recent report (tick ≤ slot tick) forward.
///
/// Reports sharing a tick with a PDSCH record apply to that slot regardless of
/// their order in the log. Slots preceding the first report of any metric are
/// dropped rather than back-filled.
pub fn align_locf(log: &RawTelemetryLog) -> Result<SlotTable> {
    if log.entries.is_empty() {
        return Err(Error::EmptyInput("telemetry log has no entries".into()));
    }
    let entries = &log.entries;
    let mut state = CarriedState::default();
    let mut rows = Vec::new();
    let mut i = 0;
    while i < entries.len() {
        let tick = entries[i].tick;
        let mut j = i;
        while j < entries.len() && entries[j].tick == tick {
            j += 1;
        }
        if j < entries.len() && entries[j].tick < tick {
            return Err(Error::InvalidArgument(format!(
                "log ticks decrease at entry {j} ({} after {tick})",
                entries[j].tick
            )));
        }
        let group = &entries[i..j];
        for e in group {
            match e.record {
                LogRecord::CsfReport { dl_cqi } => state.cqi = Some(dl_cqi),
                LogRecord::SinrReport {
                    ss_sinr_db,
                    csi_sinr_db,
                } => state.sinr = Some((ss_sinr_db, csi_sinr_db)),
                LogRecord::RsrpReport {
                    ss_rsrp_dbm,
                    csi_rsrp_dbm,
                } => state.rsrp = Some((ss_rsrp_dbm, csi_rsrp_dbm)),
                LogRecord::PciChange { pci } => state.pci = Some(pci),
                LogRecord::PdschStatus { .. } => {}
            }
        }
        for e in group {
            if let LogRecord::PdschStatus {
                mcs,
                num_rb,
                crc_pass,
            } = e.record
            {
                if !tdd::is_downlink(tick) {
                    return Err(Error::SlotGrammar { tick });
                }
                let (Some(dl_cqi), Some((ss_sinr, csi_sinr)), Some((ss_rsrp, csi_rsrp)), Some(pci)) =
                    (state.cqi, state.sinr, state.rsrp, state.pci)
                else {
                    continue;
                };
                rows.push(SlotRecord {
                    dl_slot_index: rows.len(),
                    tick,
                    num_rb,
                    mcs,
                    crc_pass,
                    ss_rsrp,
                    ss_sinr,
                    csi_rsrp,
                    csi_sinr,
                    dl_cqi,
                    pci,
                });
            }
        }
        i = j;
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput(
            "no downlink slot remains after warm-up trim".into(),
        ));
    }
    Ok(SlotTable::from_rows(rows))
}

/// Row filter applied after alignment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SlotFilter {
    /// Serving cells to keep; `None` keeps every cell.
    pub allowed_pcis: Option<BTreeSet<u16>>,
}

/// Drops retransmission slots (MCS 28..=31) and slots served by a disallowed
/// PCI, re-indexing survivors consecutively and recording removal gaps.
pub fn filter_slots(table: &SlotTable, filter: &SlotFilter) -> SlotTable {
    let mut rows = Vec::with_capacity(table.rows.len());
    let mut gap_before = Vec::with_capacity(table.rows.len());
    let mut pending_gap = 0u32;
    for (r, &gap) in table.rows.iter().zip(&table.gap_before) {
        let allowed = filter
            .allowed_pcis
            .as_ref()
            .is_none_or(|set| set.contains(&r.pci));
        if r.mcs >= crate::NUM_MCS as u8 || !allowed {
            pending_gap = pending_gap.saturating_add(gap).saturating_add(1);
            continue;
        }
        gap_before.push(if rows.is_empty() {
            0
        } else {
            pending_gap.saturating_add(gap)
        });
        pending_gap = 0;
        rows.push(SlotRecord {
            dl_slot_index: rows.len(),
            ..*r
        });
    }
    SlotTable {
        rows,
        gap_before,
        max_gap: table.max_gap,
    }
}
