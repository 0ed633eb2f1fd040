//! Engineered features, z-score normalization and 40-slot input windows.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ingest::SlotTable;

pub const NUM_FEATURES: usize = 12;
/// Input window length in downlink slots (25 ms under 8-of-10 TDD).
pub const WINDOW_LEN: usize = 40;
/// Rolling window of the trend features (10 ms).
pub const TREND_WINDOW: usize = 16;

pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "num_rb",
    "mcs",
    "crc_state",
    "ss_rsrp",
    "ss_sinr",
    "csi_rsrp",
    "csi_sinr",
    "dl_cqi",
    "consecutive_nacks",
    "time_since_last_nack",
    "mcs_trend",
    "cqi_trend",
];

/// Column of the raw MCS in a feature row.
pub const MCS_COLUMN: usize = 1;

/// Floor applied to fitted standard deviations.
pub const STD_FLOOR: f64 = 1e-6;

/// The eight slot features plus the four engineered ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureRow {
    pub num_rb: f64,
    pub mcs: f64,
    pub crc_state: f64,
    pub ss_rsrp: f64,
    pub ss_sinr: f64,
    pub csi_rsrp: f64,
    pub csi_sinr: f64,
    pub dl_cqi: f64,
    pub consecutive_nacks: u64,
    pub time_since_last_nack: u64,
    pub mcs_trend: f64,
    pub cqi_trend: f64,
}

impl FeatureRow {
    pub fn to_array(&self) -> [f64; NUM_FEATURES] {
        [
            self.num_rb,
            self.mcs,
            self.crc_state,
            self.ss_rsrp,
            self.ss_sinr,
            self.csi_rsrp,
            self.csi_sinr,
            self.dl_cqi,
            self.consecutive_nacks as f64,
            self.time_since_last_nack as f64,
            self.mcs_trend,
            self.cqi_trend,
        ]
    }
}

/// Per-slot `(consecutive_nacks, time_since_last_nack)`.
///
/// Both counters start at zero. A NACK increments the first and zeroes the
/// second; an ACK zeroes the first and increments the second, so before the
/// first NACK the second counts slots since trace start.
pub fn compute_counters(table: &SlotTable) -> Vec<(u64, u64)> {
    let mut nacks = 0u64;
    let mut since = 0u64;
    table
        .rows
        .iter()
        .map(|r| {
            if r.crc_pass {
                nacks = 0;
                since += 1;
            } else {
                nacks += 1;
                since = 0;
            }
            (nacks, since)
        })
        .collect()
}

/// Trailing rolling means of MCS and CQI over `min(window, slots so far)` slots.
pub fn compute_trends(table: &SlotTable, window: usize) -> Result<Vec<(f64, f64)>> {
    if window == 0 {
        return Err(Error::InvalidArgument(
            "trend window must be at least 1".into(),
        ));
    }
    let rows = &table.rows;
    let mut mcs_sum = 0u64;
    let mut cqi_sum = 0u64;
    let mut out = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        mcs_sum += u64::from(r.mcs);
        cqi_sum += u64::from(r.dl_cqi);
        if i >= window {
            mcs_sum -= u64::from(rows[i - window].mcs);
            cqi_sum -= u64::from(rows[i - window].dl_cqi);
        }
        let n = (i + 1).min(window) as f64;
        out.push((mcs_sum as f64 / n, cqi_sum as f64 / n));
    }
    Ok(out)
}

/// Feature rows for every slot of `table`.
pub fn compute_features(table: &SlotTable) -> Vec<FeatureRow> {
    let counters = compute_counters(table);
    let trends = compute_trends(table, TREND_WINDOW).expect("non-zero window");
    table
        .rows
        .iter()
        .zip(counters)
        .zip(trends)
        .map(|((r, (nacks, since)), (mcs_trend, cqi_trend))| FeatureRow {
            num_rb: f64::from(r.num_rb),
            mcs: f64::from(r.mcs),
            crc_state: if r.crc_pass { 1.0 } else { 0.0 },
            ss_rsrp: r.ss_rsrp,
            ss_sinr: r.ss_sinr,
            csi_rsrp: r.csi_rsrp,
            csi_sinr: r.csi_sinr,
            dl_cqi: f64::from(r.dl_cqi),
            consecutive_nacks: nacks,
            time_since_last_nack: since,
            mcs_trend,
            cqi_trend,
        })
        .collect()
}

/// Per-feature z-score statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: [f64; NUM_FEATURES],
    pub std: [f64; NUM_FEATURES],
}

impl Normalizer {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; NUM_FEATURES],
            std: [1.0; NUM_FEATURES],
        }
    }

    pub fn apply(&self, row: &[f64; NUM_FEATURES]) -> [f64; NUM_FEATURES] {
        std::array::from_fn(|j| (row[j] - self.mean[j]) / self.std[j])
    }

    pub fn invert(&self, row: &[f64; NUM_FEATURES]) -> [f64; NUM_FEATURES] {
        std::array::from_fn(|j| row[j] * self.std[j] + self.mean[j])
    }

    pub fn invert_value(&self, feature: usize, z: f64) -> f64 {
        z * self.std[feature] + self.mean[feature]
    }

    /// One `name mean std` line per feature, in column order.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# feature mean std\n");
        for (j, name) in FEATURE_NAMES.iter().enumerate() {
            writeln!(s, "{name} {} {}", self.mean[j], self.std[j]).expect("write to String");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut n = Self::identity();
        let mut seen = 0;
        for line in text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [name, mean, std] = parts[..] else {
                return Err(Error::Format(format!("normalizer line `{line}`")));
            };
            let j = FEATURE_NAMES
                .iter()
                .position(|&f| f == name)
                .ok_or_else(|| Error::Format(format!("unknown feature `{name}`")))?;
            if j != seen {
                return Err(Error::Format(format!("feature `{name}` out of order")));
            }
            n.mean[j] = mean
                .parse()
                .map_err(|_| Error::Format(format!("mean of `{name}`")))?;
            n.std[j] = std
                .parse()
                .map_err(|_| Error::Format(format!("std of `{name}`")))?;
            if n.std[j].is_nan() || n.std[j] <= 0.0 {
                return Err(Error::Format(format!("std of `{name}` must be positive")));
            }
            seen += 1;
        }
        if seen != NUM_FEATURES {
            return Err(Error::Format(format!(
                "normalizer lists {seen} of {NUM_FEATURES} features"
            )));
        }
        Ok(n)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Fits z-score statistics (population variance, floored std) to training rows.
pub fn fit_normalizer<'a, I>(train_rows: I) -> Result<Normalizer>
where
    I: IntoIterator<Item = &'a [f64; NUM_FEATURES]>,
{
    let mut count = 0usize;
    let mut mean = [0.0; NUM_FEATURES];
    let mut m2 = [0.0; NUM_FEATURES];
    for row in train_rows {
        count += 1;
        for j in 0..NUM_FEATURES {
            let delta = row[j] - mean[j];
            mean[j] += delta / count as f64;
            m2[j] += delta * (row[j] - mean[j]);
        }
    }
    if count < 2 {
        return Err(Error::InvalidArgument(format!(
            "normalizer needs at least 2 rows, got {count}"
        )));
    }
    let std = std::array::from_fn(|j| (m2[j] / count as f64).sqrt().max(STD_FLOOR));
    Ok(Normalizer { mean, std })
}

/// Normalized 40×12 model input, row-major, oldest slot first.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWindow {
    pub data: Vec<f64>,
    /// Index of the last (most recent) slot.
    pub anchor_slot: usize,
}

impl FeatureWindow {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * NUM_FEATURES..(i + 1) * NUM_FEATURES]
    }
}

/// Raw feature rows of a slot table, with the table's gap bookkeeping.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    pub rows: Vec<[f64; NUM_FEATURES]>,
    pub ticks: Vec<u64>,
    /// Largest index `j <= i` whose preceding gap exceeds the table's limit.
    last_break: Vec<Option<usize>>,
}

impl FeatureTable {
    pub fn from_slots(table: &SlotTable) -> Self {
        let rows = compute_features(table)
            .iter()
            .map(FeatureRow::to_array)
            .collect();
        let mut last = None;
        let last_break = table
            .gap_before
            .iter()
            .enumerate()
            .map(|(i, &g)| {
                if g > table.max_gap {
                    last = Some(i);
                }
                last
            })
            .collect();
        Self {
            rows,
            ticks: table.rows.iter().map(|r| r.tick).collect(),
            last_break,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Whether rows `start..=end` contain no gap violation.
    pub fn span_ok(&self, start: usize, end: usize) -> bool {
        self.last_break[end].is_none_or(|b| b <= start)
    }

    /// Unnormalized rows of the window ending at `anchor`.
    pub fn raw_window(&self, anchor: usize) -> Result<&[[f64; NUM_FEATURES]]> {
        if anchor + 1 < WINDOW_LEN {
            return Err(Error::InsufficientHistory {
                anchor,
                needed: WINDOW_LEN - 1,
            });
        }
        if anchor >= self.rows.len() {
            return Err(Error::InvalidArgument(format!(
                "anchor {anchor} beyond table of {} slots",
                self.rows.len()
            )));
        }
        let start = anchor + 1 - WINDOW_LEN;
        if !self.span_ok(start, anchor) {
            return Err(Error::GapViolation { start, end: anchor });
        }
        Ok(&self.rows[start..=anchor])
    }
}

/// Normalized 40-slot window ending at `anchor`.
pub fn extract_window(
    table: &FeatureTable,
    anchor: usize,
    normalizer: &Normalizer,
) -> Result<FeatureWindow> {
    let raw = table.raw_window(anchor)?;
    Ok(normalize_window(raw, normalizer, anchor))
}

pub fn normalize_window(
    raw: &[[f64; NUM_FEATURES]],
    normalizer: &Normalizer,
    anchor_slot: usize,
) -> FeatureWindow {
    let data = raw.iter().flat_map(|r| normalizer.apply(r)).collect();
    FeatureWindow { data, anchor_slot }
}
