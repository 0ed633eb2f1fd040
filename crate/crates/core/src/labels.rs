//! Per-MCS success labels over a future GOP horizon.
//!
//! Only the scheduled MCS of each slot is observed. A pass at MCS `m` is taken
//! as evidence that every more robust index `k <= m` would also have passed, so
//! it adds a trial and a success to all of them. A fail adds a trial at `m`
//! alone: it says nothing about lower indices.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{SlotRecord, SlotTable};
use crate::NUM_MCS;

/// Delay and GOP length of the prediction horizon, in downlink slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HorizonSpec {
    pub delay_dl_slots: usize,
    pub gop_dl_slots: usize,
}

impl Default for HorizonSpec {
    /// 100 ms delay and a 500 ms GOP under 8-of-10 TDD.
    fn default() -> Self {
        Self {
            delay_dl_slots: 160,
            gop_dl_slots: 800,
        }
    }
}

impl HorizonSpec {
    pub fn validate(&self) -> Result<()> {
        if self.delay_dl_slots == 0 || self.gop_dl_slots == 0 {
            return Err(Error::InvalidArgument(
                "horizon delay and GOP length must be positive".into(),
            ));
        }
        Ok(())
    }

    /// First and last slot of the horizon belonging to `anchor`.
    pub fn horizon(&self, anchor: usize) -> (usize, usize) {
        let first = anchor + self.delay_dl_slots + 1;
        (first, first + self.gop_dl_slots - 1)
    }
}

/// MCS decision or ground truth: an index, or no index meeting the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Selection {
    Mcs(u8),
    Outage,
}

impl Selection {
    pub fn mcs(self) -> Option<u8> {
        match self {
            Selection::Mcs(m) => Some(m),
            Selection::Outage => None,
        }
    }
}

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Selection::Mcs(m) => write!(f, "{m}"),
            Selection::Outage => f.write_str("OUTAGE"),
        }
    }
}

/// Success counts `S_k`, trial counts `T_k` and the derived probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVector {
    pub success: [u32; NUM_MCS],
    pub trials: [u32; NUM_MCS],
    /// `S_k / T_k` where valid, 0 elsewhere.
    pub prob: [f64; NUM_MCS],
    /// `T_k > 0`.
    pub valid: [bool; NUM_MCS],
}

impl LabelVector {
    pub fn from_counts(success: [u32; NUM_MCS], trials: [u32; NUM_MCS]) -> Self {
        let valid = std::array::from_fn(|k| trials[k] > 0);
        let prob = std::array::from_fn(|k| {
            if trials[k] > 0 {
                f64::from(success[k]) / f64::from(trials[k])
            } else {
                0.0
            }
        });
        Self {
            success,
            trials,
            prob,
            valid,
        }
    }

    pub fn num_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Applies the conservative counting rule to every slot of a horizon.
pub fn accumulate_counts(horizon_slots: &[SlotRecord]) -> Result<LabelVector> {
    let mut success = [0u32; NUM_MCS];
    let mut trials = [0u32; NUM_MCS];
    for slot in horizon_slots {
        let m = usize::from(slot.mcs);
        if m >= NUM_MCS {
            return Err(Error::InvalidArgument(format!(
                "slot {} carries retransmission MCS {m}",
                slot.dl_slot_index
            )));
        }
        if slot.crc_pass {
            for k in 0..=m {
                success[k] += 1;
                trials[k] += 1;
            }
        } else {
            trials[m] += 1;
        }
    }
    Ok(LabelVector::from_counts(success, trials))
}

/// Label of the horizon following `anchor` after the configured delay.
///
/// The span from the anchor to the end of the horizon must not cross a
/// filtered gap above the table's limit.
pub fn build_label(table: &SlotTable, anchor: usize, spec: &HorizonSpec) -> Result<LabelVector> {
    spec.validate()?;
    let (first, last) = spec.horizon(anchor);
    if last >= table.len() {
        return Err(Error::InsufficientFuture {
            anchor,
            needed: last,
            available: table.len(),
        });
    }
    if !table.span_is_contiguous(anchor, last) {
        return Err(Error::GapViolation {
            start: anchor,
            end: last,
        });
    }
    accumulate_counts(&table.rows[first..=last])
}

/// Highest valid index whose success probability reaches `threshold`.
pub fn ground_truth_mcs(label: &LabelVector, threshold: f64) -> Selection {
    (0..NUM_MCS)
        .rev()
        .find(|&k| label.valid[k] && label.prob[k] >= threshold)
        .map_or(Selection::Outage, |k| Selection::Mcs(k as u8))
}
