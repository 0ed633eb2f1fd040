//! Synthetic slot-level downlink telemetry.
//!
//! The generator stands in for commercial-network UE logs. It drives a true
//! SINR process (slow shadowing, AR(1) fast fading and abrupt mobility drops)
//! at 0.5 ms resolution, lets an OLLA-controlled scheduler pick an MCS from
//! delayed, noisy CQI for every downlink slot, and draws the CRC outcome from a
//! logistic BLER curve. Measurement reports are emitted at their configured
//! periods, producing the same heterogeneous record stream a diagnostic log
//! would.

use std::collections::VecDeque;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tdd;
use crate::NUM_MCS;

/// Spectral efficiency (bit/s/Hz) of MCS 0..=27 in the 256QAM PDSCH table.
pub const MCS_SPECTRAL_EFFICIENCY: [f64; NUM_MCS] = [
    0.2344, 0.3770, 0.6016, 0.8770, 1.1758, 1.4766, 1.6953, 1.9141, 2.1602, 2.4063, 2.5703, 2.7305,
    3.0293, 3.3223, 3.6094, 3.9023, 4.2129, 4.5234, 4.8164, 5.1152, 5.3320, 5.5547, 5.8906, 6.2266,
    6.5703, 6.9141, 7.1602, 7.4063,
];

/// 50 % BLER threshold: `THRESH_INTERCEPT_DB + THRESH_DB_PER_SE * se(mcs)`.
pub const THRESH_INTERCEPT_DB: f64 = -8.5;
pub const THRESH_DB_PER_SE: f64 = 3.8;
/// Shared logistic slope of every BLER curve, per dB.
pub const BLER_SLOPE_PER_DB: f64 = 1.5;

/// Link margin above the 50 % point at which BLER equals 10 %.
const SCHEDULER_MARGIN_DB: f64 = 1.464_816_384_890_813_2; // ln(9) / 1.5

/// SINR implied by CQI `c` is `CQI_SINR_BASE_DB + CQI_SINR_STEP_DB * c`.
const CQI_SINR_BASE_DB: f64 = -8.0;
const CQI_SINR_STEP_DB: f64 = 2.0;

const OLLA_MIN_DB: f64 = -15.0;
const OLLA_MAX_DB: f64 = 6.0;

/// SINR (dB) at which `mcs` has a 50 % block error rate.
pub fn bler_threshold_db(mcs: usize) -> f64 {
    THRESH_INTERCEPT_DB + THRESH_DB_PER_SE * MCS_SPECTRAL_EFFICIENCY[mcs]
}

/// Block error probability of a first transmission at `mcs` under `sinr_db`.
pub fn sinr_to_bler(sinr_db: f64, mcs: usize) -> Result<f64> {
    if mcs >= NUM_MCS {
        return Err(Error::InvalidArgument(format!("mcs {mcs} outside 0..=27")));
    }
    Ok(logistic_bler(sinr_db, mcs))
}

fn logistic_bler(sinr_db: f64, mcs: usize) -> f64 {
    let x = BLER_SLOPE_PER_DB * (sinr_db - bler_threshold_db(mcs));
    1.0 / (1.0 + x.exp())
}

/// SINR the scheduler assumes for a reported CQI.
pub fn cqi_to_sinr_db(cqi: u8) -> f64 {
    CQI_SINR_BASE_DB + CQI_SINR_STEP_DB * f64::from(cqi.min(15))
}

/// Noise-free CQI quantization of a true SINR.
pub fn sinr_to_cqi(sinr_db: f64) -> u8 {
    ((sinr_db - CQI_SINR_BASE_DB) / CQI_SINR_STEP_DB)
        .round()
        .clamp(0.0, 15.0) as u8
}

/// Inner-loop MCS choice: the highest MCS whose 10 % BLER operating point lies
/// at or below the CQI-implied SINR corrected by the OLLA offset.
pub fn scheduler_select_mcs(cqi: u8, olla_offset_db: f64) -> u8 {
    let effective = cqi_to_sinr_db(cqi) + olla_offset_db;
    (0..NUM_MCS)
        .rev()
        .find(|&m| bler_threshold_db(m) + SCHEDULER_MARGIN_DB <= effective)
        .unwrap_or(0) as u8
}

/// Parameters of a synthetic trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelSimConfig {
    pub duration_s: f64,
    pub seed: u64,
    pub sinr_mean_db: f64,
    pub sinr_shadow_std_db: f64,
    /// Correlation time of the shadowing process.
    pub shadow_corr_ms: f64,
    /// AR(1) correlation time of fast fading.
    pub coherence_ms: f64,
    pub fast_fading_std_db: f64,
    pub mobility_events_per_min: f64,
    /// Mean depth of a mobility drop.
    pub mobility_drop_db: f64,
    /// Mean time a drop is held before recovery starts.
    pub mobility_hold_ms: f64,
    pub mobility_recovery_ms: f64,
    pub olla_target_bler: f64,
    /// OLLA decrement on NACK; the ACK increment follows from the target.
    pub olla_down_step_db: f64,
    /// Age of the CQI report the scheduler acts on.
    pub cqi_delay_ms: f64,
    pub report_period_cqi_ms: f64,
    pub report_period_sinr_ms: f64,
    pub report_period_rsrp_ms: f64,
    pub num_rb: u16,
    pub pci: u16,
}

impl Default for ChannelSimConfig {
    fn default() -> Self {
        Self {
            duration_s: 600.0,
            seed: 1,
            sinr_mean_db: 14.0,
            sinr_shadow_std_db: 3.0,
            shadow_corr_ms: 4000.0,
            coherence_ms: 5.0,
            fast_fading_std_db: 3.0,
            mobility_events_per_min: 4.0,
            mobility_drop_db: 10.0,
            mobility_hold_ms: 300.0,
            mobility_recovery_ms: 400.0,
            olla_target_bler: 0.10,
            olla_down_step_db: 0.3,
            cqi_delay_ms: 4.0,
            report_period_cqi_ms: 0.5,
            report_period_sinr_ms: 20.0,
            report_period_rsrp_ms: 160.0,
            num_rb: 273,
            pci: 441,
        }
    }
}

struct Periods {
    cqi: u64,
    sinr: u64,
    rsrp: u64,
    cqi_delay: u64,
}

impl ChannelSimConfig {
    fn periods(&self) -> Result<Periods> {
        let ticks = |name: &str, ms: f64| {
            tdd::ms_to_ticks(ms).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "{name} = {ms} ms is not a positive multiple of 0.5 ms"
                ))
            })
        };
        let cqi_delay = if self.cqi_delay_ms == 0.0 {
            0
        } else {
            ticks("cqi_delay_ms", self.cqi_delay_ms)?
        };
        Ok(Periods {
            cqi: ticks("report_period_cqi_ms", self.report_period_cqi_ms)?,
            sinr: ticks("report_period_sinr_ms", self.report_period_sinr_ms)?,
            rsrp: ticks("report_period_rsrp_ms", self.report_period_rsrp_ms)?,
            cqi_delay,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("duration_s", self.duration_s),
            ("shadow_corr_ms", self.shadow_corr_ms),
            ("coherence_ms", self.coherence_ms),
            ("olla_down_step_db", self.olla_down_step_db),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        let non_negative = [
            ("sinr_shadow_std_db", self.sinr_shadow_std_db),
            ("fast_fading_std_db", self.fast_fading_std_db),
            ("mobility_events_per_min", self.mobility_events_per_min),
            ("mobility_drop_db", self.mobility_drop_db),
            ("mobility_hold_ms", self.mobility_hold_ms),
            ("mobility_recovery_ms", self.mobility_recovery_ms),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if !(self.olla_target_bler > 0.0 && self.olla_target_bler < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "olla_target_bler must lie in (0, 1), got {}",
                self.olla_target_bler
            )));
        }
        self.periods().map(|_| ())
    }

    /// Whole TDD periods covered by `duration_s`; a trailing partial period is dropped.
    pub fn num_ticks(&self) -> u64 {
        let ticks = (self.duration_s * 1000.0 / tdd::TICK_MS + 1e-6).floor() as u64;
        ticks / tdd::PERIOD_SLOTS * tdd::PERIOD_SLOTS
    }
}

/// One time-stamped log record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogRecord {
    PdschStatus {
        mcs: u8,
        num_rb: u16,
        crc_pass: bool,
    },
    CsfReport {
        dl_cqi: u8,
    },
    SinrReport {
        ss_sinr_db: f64,
        csi_sinr_db: f64,
    },
    RsrpReport {
        ss_rsrp_dbm: f64,
        csi_rsrp_dbm: f64,
    },
    PciChange {
        pci: u16,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    /// Slot time in 0.5 ms ticks.
    pub tick: u64,
    pub record: LogRecord,
}

/// Heterogeneous telemetry stream, ordered by tick.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawTelemetryLog {
    pub entries: Vec<LogEntry>,
}

/// Per-downlink-slot hidden state recorded alongside the log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotTruth {
    pub tick: u64,
    pub sinr_db: f64,
    pub mcs: u8,
    pub crc_pass: bool,
}

#[derive(Debug, Clone)]
pub struct SimulatedTrace {
    pub log: RawTelemetryLog,
    pub truth: Vec<SlotTruth>,
}

/// Generates the telemetry log for `config`. Pure in `config`.
pub fn generate_trace(config: &ChannelSimConfig) -> Result<RawTelemetryLog> {
    simulate(config).map(|t| t.log)
}

/// Like [`generate_trace`], also returning the hidden per-slot channel state.
pub fn simulate(config: &ChannelSimConfig) -> Result<SimulatedTrace> {
    config.validate()?;
    let periods = config.periods()?;
    let n_ticks = config.num_ticks();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let rho_shadow = (-tdd::TICK_MS / config.shadow_corr_ms).exp();
    let rho_fast = (-tdd::TICK_MS / config.coherence_ms).exp();
    let shadow_innov = config.sinr_shadow_std_db * (1.0 - rho_shadow * rho_shadow).sqrt();
    let fast_innov = config.fast_fading_std_db * (1.0 - rho_fast * rho_fast).sqrt();
    let event_prob = config.mobility_events_per_min / 60.0 * tdd::TICK_MS / 1000.0;
    let hold_ticks = Exp::new(1.0).expect("unit rate");
    let report_noise = Normal::new(0.0, 1.0).expect("unit normal");

    let mut shadow = config.sinr_shadow_std_db * rng.sample::<f64, _>(StandardNormal);
    let mut fast = config.fast_fading_std_db * rng.sample::<f64, _>(StandardNormal);
    let mut drop = MobilityDrop::default();
    let mut olla = 0.0f64;
    let up_step =
        config.olla_down_step_db * config.olla_target_bler / (1.0 - config.olla_target_bler);
    let mut cqi_history: VecDeque<(u64, u8)> = VecDeque::new();

    let dl_per_tick = tdd::DL_SLOTS_PER_PERIOD as f64 / tdd::PERIOD_SLOTS as f64;
    let mut entries = Vec::with_capacity((n_ticks as f64 * (1.0 + dl_per_tick)) as usize + 16);
    let mut truth = Vec::with_capacity((n_ticks as f64 * dl_per_tick) as usize);
    entries.push(LogEntry {
        tick: 0,
        record: LogRecord::PciChange { pci: config.pci },
    });

    for tick in 0..n_ticks {
        if tick > 0 {
            shadow = rho_shadow * shadow + shadow_innov * rng.sample::<f64, _>(StandardNormal);
            fast = rho_fast * fast + fast_innov * rng.sample::<f64, _>(StandardNormal);
        }
        if rng.random::<f64>() < event_prob {
            let depth = config.mobility_drop_db * (0.5 + rng.random::<f64>());
            let hold = config.mobility_hold_ms / tdd::TICK_MS * hold_ticks.sample(&mut rng);
            drop.start(depth, hold, config.mobility_recovery_ms / tdd::TICK_MS);
        }
        let drop_db = drop.advance();
        let large_scale = config.sinr_mean_db + shadow - drop_db;
        let sinr = large_scale + fast;

        if tick % periods.rsrp == 0 {
            let ss = (-88.0 + (shadow - drop_db) + 0.8 * report_noise.sample(&mut rng))
                .clamp(-140.0, -44.0);
            let csi = (ss - 1.5 + 0.8 * report_noise.sample(&mut rng)).clamp(-140.0, -44.0);
            entries.push(LogEntry {
                tick,
                record: LogRecord::RsrpReport {
                    ss_rsrp_dbm: round_to(ss, 100.0),
                    csi_rsrp_dbm: round_to(csi, 100.0),
                },
            });
        }
        if tick % periods.sinr == 0 {
            let ss = sinr + report_noise.sample(&mut rng);
            let csi = ss - 0.5 + 1.5 * report_noise.sample(&mut rng);
            entries.push(LogEntry {
                tick,
                record: LogRecord::SinrReport {
                    ss_sinr_db: round_to(ss, 100.0),
                    csi_sinr_db: round_to(csi, 100.0),
                },
            });
        }
        if tick % periods.cqi == 0 {
            let jitter = rng.random_range(-1i32..=1);
            let cqi = (i32::from(sinr_to_cqi(sinr)) + jitter).clamp(0, 15) as u8;
            cqi_history.push_back((tick, cqi));
            entries.push(LogEntry {
                tick,
                record: LogRecord::CsfReport { dl_cqi: cqi },
            });
        }
        if tdd::is_downlink(tick) {
            while cqi_history.len() > 1 && cqi_history[1].0 + periods.cqi_delay <= tick {
                cqi_history.pop_front();
            }
            let cqi = cqi_history.front().map_or(0, |&(_, c)| c);
            let mcs = scheduler_select_mcs(cqi, olla);
            let bler = logistic_bler(sinr, usize::from(mcs));
            let crc_pass = rng.random::<f64>() >= bler;
            olla = if crc_pass {
                olla + up_step
            } else {
                olla - config.olla_down_step_db
            }
            .clamp(OLLA_MIN_DB, OLLA_MAX_DB);
            // The special slot carries fewer PDSCH symbols.
            let num_rb = if tick % tdd::PERIOD_SLOTS == tdd::DL_SLOTS_PER_PERIOD - 1 {
                config.num_rb / 2
            } else {
                config.num_rb
            };
            entries.push(LogEntry {
                tick,
                record: LogRecord::PdschStatus {
                    mcs,
                    num_rb,
                    crc_pass,
                },
            });
            truth.push(SlotTruth {
                tick,
                sinr_db: sinr,
                mcs,
                crc_pass,
            });
        }
    }

    Ok(SimulatedTrace {
        log: RawTelemetryLog { entries },
        truth,
    })
}

fn round_to(x: f64, scale: f64) -> f64 {
    (x * scale).round() / scale
}

/// Step drop held for a random time, then ramped back to zero.
#[derive(Debug, Default)]
struct MobilityDrop {
    depth: f64,
    hold_left: f64,
    ramp_per_tick: f64,
}

impl MobilityDrop {
    fn start(&mut self, depth: f64, hold_ticks: f64, recovery_ticks: f64) {
        if depth > self.depth {
            self.depth = depth;
            self.hold_left = hold_ticks;
            self.ramp_per_tick = depth / recovery_ticks.max(1.0);
        } else {
            self.hold_left = self.hold_left.max(hold_ticks);
        }
    }

    fn advance(&mut self) -> f64 {
        let current = self.depth;
        if self.hold_left > 0.0 {
            self.hold_left -= 1.0;
        } else if self.depth > 0.0 {
            self.depth = (self.depth - self.ramp_per_tick).max(0.0);
        }
        current
    }
}

/// Summary statistics printed by `mcsprob generate`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSummary {
    pub dl_slots: usize,
    pub bler: f64,
    pub mcs_histogram: [usize; 32],
}

impl RawTelemetryLog {
    pub fn summary(&self) -> TraceSummary {
        let mut dl_slots = 0;
        let mut fails = 0;
        let mut mcs_histogram = [0usize; 32];
        for e in &self.entries {
            if let LogRecord::PdschStatus { mcs, crc_pass, .. } = e.record {
                dl_slots += 1;
                fails += usize::from(!crc_pass);
                mcs_histogram[usize::from(mcs.min(31))] += 1;
            }
        }
        TraceSummary {
            dl_slots,
            bler: if dl_slots == 0 {
                0.0
            } else {
                fails as f64 / dl_slots as f64
            },
            mcs_histogram,
        }
    }

    /// Writes the log as `tick,record_type,field1,field2,field3` CSV.
    ///
    /// | record_type | field1      | field2       | field3     |
    /// |-------------|-------------|--------------|------------|
    /// | `PDSCH`     | mcs         | num_rb       | crc (1/0)  |
    /// | `CSF`       | dl_cqi      |              |            |
    /// | `SINR`      | ss_sinr_db  | csi_sinr_db  |            |
    /// | `RSRP`      | ss_rsrp_dbm | csi_rsrp_dbm |            |
    /// | `PCI`       | pci         |              |            |
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["tick", "record_type", "field1", "field2", "field3"])?;
        for e in &self.entries {
            let tick = e.tick.to_string();
            match e.record {
                LogRecord::PdschStatus {
                    mcs,
                    num_rb,
                    crc_pass,
                } => w.write_record([
                    tick.as_str(),
                    "PDSCH",
                    &mcs.to_string(),
                    &num_rb.to_string(),
                    if crc_pass { "1" } else { "0" },
                ])?,
                LogRecord::CsfReport { dl_cqi } => {
                    w.write_record([tick.as_str(), "CSF", &dl_cqi.to_string(), "", ""])?
                }
                LogRecord::SinrReport {
                    ss_sinr_db,
                    csi_sinr_db,
                } => w.write_record([
                    tick.as_str(),
                    "SINR",
                    &ss_sinr_db.to_string(),
                    &csi_sinr_db.to_string(),
                    "",
                ])?,
                LogRecord::RsrpReport {
                    ss_rsrp_dbm,
                    csi_rsrp_dbm,
                } => w.write_record([
                    tick.as_str(),
                    "RSRP",
                    &ss_rsrp_dbm.to_string(),
                    &csi_rsrp_dbm.to_string(),
                    "",
                ])?,
                LogRecord::PciChange { pci } => {
                    w.write_record([tick.as_str(), "PCI", &pci.to_string(), "", ""])?
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.get(0) != Some("tick") || headers.get(1) != Some("record_type") {
            return Err(Error::Format(
                "trace CSV header must start with tick,record_type".into(),
            ));
        }
        let mut entries = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let field = |i: usize| -> Result<&str> {
                rec.get(i)
                    .ok_or_else(|| Error::Format(format!("row {}: missing column {i}", line + 2)))
            };
            let bad = |what: &str| Error::Format(format!("row {}: bad {what}", line + 2));
            let tick: u64 = field(0)?.parse().map_err(|_| bad("tick"))?;
            let record = match field(1)? {
                "PDSCH" => LogRecord::PdschStatus {
                    mcs: field(2)?.parse().map_err(|_| bad("mcs"))?,
                    num_rb: field(3)?.parse().map_err(|_| bad("num_rb"))?,
                    crc_pass: match field(4)? {
                        "1" => true,
                        "0" => false,
                        _ => return Err(bad("crc")),
                    },
                },
                "CSF" => LogRecord::CsfReport {
                    dl_cqi: field(2)?.parse().map_err(|_| bad("dl_cqi"))?,
                },
                "SINR" => LogRecord::SinrReport {
                    ss_sinr_db: field(2)?.parse().map_err(|_| bad("ss_sinr"))?,
                    csi_sinr_db: field(3)?.parse().map_err(|_| bad("csi_sinr"))?,
                },
                "RSRP" => LogRecord::RsrpReport {
                    ss_rsrp_dbm: field(2)?.parse().map_err(|_| bad("ss_rsrp"))?,
                    csi_rsrp_dbm: field(3)?.parse().map_err(|_| bad("csi_rsrp"))?,
                },
                "PCI" => LogRecord::PciChange {
                    pci: field(2)?.parse().map_err(|_| bad("pci"))?,
                },
                other => {
                    return Err(Error::Format(format!(
                        "row {}: unknown record {other}",
                        line + 2
                    )))
                }
            };
            entries.push(LogEntry { tick, record });
        }
        Ok(Self { entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(duration_s: f64, seed: u64) -> ChannelSimConfig {
        ChannelSimConfig {
            duration_s,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn bler_is_half_at_threshold() {
        let t = bler_threshold_db(10);
        assert!((sinr_to_bler(t, 10).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bler_saturates_at_high_sinr() {
        assert!(sinr_to_bler(60.0, 0).unwrap() < 1e-6);
    }

    #[test]
    fn bler_rejects_retransmission_indices() {
        assert!(matches!(
            sinr_to_bler(10.0, 28),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn bler_monotone_in_sinr_and_mcs() {
        for m in 0..NUM_MCS {
            let mut prev = f64::INFINITY;
            for s in -20..40 {
                let b = sinr_to_bler(f64::from(s), m).unwrap();
                assert!((0.0..=1.0).contains(&b));
                assert!(b <= prev);
                if b > 1e-12 && b < 1.0 - 1e-12 {
                    assert!(b < prev);
                }
                prev = b;
            }
        }
        for s in [-5.0, 3.0, 12.5, 30.0] {
            assert!(sinr_to_bler(s, 5).unwrap() <= sinr_to_bler(s, 20).unwrap());
            for m in 1..NUM_MCS {
                assert!(sinr_to_bler(s, m - 1).unwrap() <= sinr_to_bler(s, m).unwrap());
            }
        }
    }

    #[test]
    fn scheduler_endpoints_and_offset_monotonicity() {
        assert_eq!(scheduler_select_mcs(15, 0.0), 27);
        assert_eq!(scheduler_select_mcs(0, 0.0), 0);
        assert!(scheduler_select_mcs(7, -3.0) <= scheduler_select_mcs(7, 0.0));
        for cqi in 0..=15u8 {
            let mut prev = 0;
            for off in -30..=30 {
                let m = scheduler_select_mcs(cqi, f64::from(off) * 0.5);
                assert!(m >= prev && m <= 27);
                prev = m;
            }
        }
    }

    #[test]
    fn five_ms_trace_has_eight_pdsch_entries() {
        let log = generate_trace(&short(0.005, 3)).unwrap();
        let pdsch = log
            .entries
            .iter()
            .filter(|e| matches!(e.record, LogRecord::PdschStatus { .. }))
            .count();
        assert_eq!(pdsch, 8);
    }

    #[test]
    fn pdsch_only_on_downlink_slots_and_ticks_ordered() {
        let log = generate_trace(&short(2.0, 5)).unwrap();
        let mut last = 0;
        for e in &log.entries {
            assert!(e.tick >= last);
            last = e.tick;
            if let LogRecord::PdschStatus { mcs, .. } = e.record {
                assert!(tdd::is_downlink(e.tick));
                assert!(mcs <= 27);
            }
        }
    }

    #[test]
    fn same_seed_gives_identical_csv() {
        let cfg = short(3.0, 11);
        let mut a = Vec::new();
        let mut b = Vec::new();
        generate_trace(&cfg).unwrap().write_csv(&mut a).unwrap();
        generate_trace(&cfg).unwrap().write_csv(&mut b).unwrap();
        assert_eq!(a, b);
        let mut c = Vec::new();
        generate_trace(&short(3.0, 12))
            .unwrap()
            .write_csv(&mut c)
            .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn csv_round_trip() {
        let log = generate_trace(&short(1.0, 2)).unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let back = RawTelemetryLog::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, log);
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad_period = ChannelSimConfig {
            report_period_sinr_ms: 0.7,
            ..Default::default()
        };
        assert!(bad_period.validate().is_err());
        let bad_target = ChannelSimConfig {
            olla_target_bler: 1.0,
            ..Default::default()
        };
        assert!(bad_target.validate().is_err());
        let bad_duration = ChannelSimConfig {
            duration_s: 0.0,
            ..Default::default()
        };
        assert!(generate_trace(&bad_duration).is_err());
    }

    #[test]
    fn reports_follow_their_periods() {
        let log = generate_trace(&short(1.0, 9)).unwrap();
        for e in &log.entries {
            match e.record {
                LogRecord::SinrReport { .. } => assert_eq!(e.tick % 40, 0),
                LogRecord::RsrpReport { ss_rsrp_dbm, .. } => {
                    assert_eq!(e.tick % 320, 0);
                    assert!((-140.0..=-44.0).contains(&ss_rsrp_dbm));
                }
                _ => {}
            }
        }
    }
}
