//! GOP-level trace-driven simulation of MCS selection policies and metrics.

use std::fmt::Write as _;
use std::io::Write;
use std::ops::Range;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    extract_window, FeatureTable, FeatureWindow, Normalizer, MCS_COLUMN, WINDOW_LEN,
};
use crate::ingest::SlotTable;
use crate::labels::{build_label, ground_truth_mcs, HorizonSpec, Selection};
use crate::model::{forward, ModelParams};
use crate::tdd;
use crate::NUM_MCS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyKind {
    Proposed,
    Lra,
    Maw,
    Deterministic,
    MseT,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Proposed => "PROPOSED",
            PolicyKind::Lra => "LRA",
            PolicyKind::Maw => "MAW",
            PolicyKind::Deterministic => "DETERMINISTIC",
            PolicyKind::MseT => "MSE_T",
        }
    }
}

/// A selection rule. Model policies threshold the predicted vector; the
/// heuristics read the MCS column back through the normalizer.
#[derive(Debug, Clone)]
pub struct Policy {
    pub kind: PolicyKind,
    pub threshold: f64,
    pub model: Option<ModelParams>,
    pub normalizer: Normalizer,
}

impl Policy {
    pub fn model(
        kind: PolicyKind,
        params: ModelParams,
        threshold: f64,
        normalizer: Normalizer,
    ) -> Self {
        Self {
            kind,
            threshold,
            model: Some(params),
            normalizer,
        }
    }

    pub fn heuristic(kind: PolicyKind, normalizer: Normalizer) -> Self {
        Self {
            kind,
            threshold: 0.0,
            model: None,
            normalizer,
        }
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }
}

fn mcs_history(window: &FeatureWindow, normalizer: &Normalizer) -> Vec<i64> {
    (0..WINDOW_LEN)
        .map(|i| {
            normalizer
                .invert_value(MCS_COLUMN, window.row(i)[MCS_COLUMN])
                .round() as i64
        })
        .collect()
}

/// Last MCS in the window.
pub fn lra_select(mcs: &[i64]) -> u8 {
    mcs.last()
        .copied()
        .unwrap_or(0)
        .clamp(0, NUM_MCS as i64 - 1) as u8
}

/// Mean MCS over the window, rounded half to even.
pub fn maw_select(mcs: &[i64]) -> u8 {
    if mcs.is_empty() {
        return 0;
    }
    let mean = mcs.iter().sum::<i64>() as f64 / mcs.len() as f64;
    mean.round_ties_even().clamp(0.0, NUM_MCS as f64 - 1.0) as u8
}

/// Largest index whose predicted probability reaches `threshold`.
pub fn threshold_select(probs: &[f64], threshold: f64) -> Selection {
    (0..probs.len().min(NUM_MCS))
        .rev()
        .find(|&k| probs[k] >= threshold)
        .map_or(Selection::Outage, |k| Selection::Mcs(k as u8))
}

/// Selected MCS for one window. A model that finds no index at its threshold
/// falls back to MCS 0.
pub fn decide(policy: &Policy, window: &FeatureWindow) -> Result<u8> {
    match policy.kind {
        PolicyKind::Lra => Ok(lra_select(&mcs_history(window, &policy.normalizer))),
        PolicyKind::Maw => Ok(maw_select(&mcs_history(window, &policy.normalizer))),
        PolicyKind::Proposed | PolicyKind::Deterministic | PolicyKind::MseT => {
            let params = policy.model.as_ref().ok_or_else(|| {
                Error::InvalidArgument(format!("{} policy has no model", policy.name()))
            })?;
            let (probs, _) = forward(params, window)?;
            Ok(threshold_select(&probs, policy.threshold)
                .mcs()
                .unwrap_or(0))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GopDecision {
    pub anchor: usize,
    pub selected: u8,
    pub ground_truth: Selection,
}

/// Per-policy decisions over the non-overlapping GOPs of one region.
#[derive(Debug, Clone, Default)]
pub struct GopRun {
    pub decisions: Vec<Vec<GopDecision>>,
    /// Anchors whose window or horizon crossed a gap violation.
    pub skipped: usize,
}

/// Steps an anchor through `region` one GOP at a time, starting at the first
/// slot with a full history window.
pub fn simulate_gops(
    features: &FeatureTable,
    table: &SlotTable,
    region: Range<usize>,
    policies: &[Policy],
    horizon: &HorizonSpec,
    gt_threshold: f64,
) -> Result<GopRun> {
    horizon.validate()?;
    if policies.is_empty() {
        return Err(Error::InvalidArgument("no policies to simulate".into()));
    }
    let mut run = GopRun {
        decisions: vec![Vec::new(); policies.len()],
        skipped: 0,
    };
    let mut anchor = region.start + WINDOW_LEN - 1;
    if horizon.horizon(anchor).1 >= region.end {
        return Err(Error::TraceTooShort {
            slots: region.len(),
            needed: WINDOW_LEN + horizon.delay_dl_slots + horizon.gop_dl_slots,
        });
    }
    while horizon.horizon(anchor).1 < region.end {
        let label = match build_label(table, anchor, horizon) {
            Ok(l) => Some(l),
            Err(Error::GapViolation { .. }) => None,
            Err(e) => return Err(e),
        };
        let window = match policies
            .first()
            .map(|p| extract_window(features, anchor, &p.normalizer))
        {
            Some(Ok(w)) => Some(w),
            Some(Err(Error::GapViolation { .. })) => None,
            Some(Err(e)) => return Err(e),
            None => None,
        };
        match (label, window) {
            (Some(label), Some(window)) => {
                let gt = ground_truth_mcs(&label, gt_threshold);
                for (p, out) in policies.iter().zip(run.decisions.iter_mut()) {
                    let w = if p.normalizer == policies[0].normalizer {
                        window.clone()
                    } else {
                        extract_window(features, anchor, &p.normalizer)?
                    };
                    out.push(GopDecision {
                        anchor,
                        selected: decide(p, &w)?,
                        ground_truth: gt,
                    });
                }
            }
            _ => run.skipped += 1,
        }
        anchor += horizon.gop_dl_slots;
    }
    Ok(run)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub rmse: f64,
    /// Percentage of GOPs with `selected <= ground truth`.
    pub reliability: f64,
    /// Mean of `selected − ground truth`.
    pub bias: f64,
    pub mae: f64,
    pub n_gops: usize,
    /// GOPs excluded because no index met the ground-truth threshold.
    pub n_outage: usize,
}

pub fn compute_metrics(decisions: &[GopDecision]) -> Result<MetricRow> {
    let mut n = 0usize;
    let mut outage = 0usize;
    let (mut se, mut ae, mut sum, mut reliable) = (0.0, 0.0, 0.0, 0usize);
    for d in decisions {
        let Selection::Mcs(gt) = d.ground_truth else {
            outage += 1;
            continue;
        };
        let e = d.selected as f64 - gt as f64;
        n += 1;
        se += e * e;
        ae += e.abs();
        sum += e;
        if d.selected <= gt {
            reliable += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoData("every GOP has an outage ground truth".into()));
    }
    let nf = n as f64;
    Ok(MetricRow {
        rmse: (se / nf).sqrt(),
        reliability: 100.0 * reliable as f64 / nf,
        bias: sum / nf,
        mae: ae / nf,
        n_gops: n,
        n_outage: outage,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<(String, MetricRow)>,
}

impl EvalReport {
    pub fn from_decisions(policies: &[Policy], decisions: &[Vec<GopDecision>]) -> Result<Self> {
        let rows = policies
            .iter()
            .zip(decisions)
            .map(|(p, d)| Ok((p.name().to_string(), compute_metrics(d)?)))
            .collect::<Result<_>>()?;
        Ok(Self { rows })
    }

    pub fn get(&self, name: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "policy",
            "rmse",
            "reliability",
            "bias",
            "mae",
            "n_gops",
            "n_outage",
        ])?;
        for (name, m) in &self.rows {
            w.write_record([
                name.clone(),
                format!("{:.6}", m.rmse),
                format!("{:.4}", m.reliability),
                format!("{:.6}", m.bias),
                format!("{:.6}", m.mae),
                m.n_gops.to_string(),
                m.n_outage.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<14} {:>7} {:>18} {:>13} {:>7} {:>7}",
            "Policy", "RMSE", "Reliability Score", "Average Bias", "MAE", "GOPs"
        );
        for (name, m) in &self.rows {
            let _ = writeln!(
                s,
                "{:<14} {:>7.3} {:>17.2}% {:>13.3} {:>7.3} {:>7}",
                name, m.rmse, m.reliability, m.bias, m.mae, m.n_gops
            );
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchStats {
    pub mean_ms: f64,
    pub sd_ms: f64,
    /// Mean latency as a percentage of one 0.5 ms slot.
    pub pct_of_tti: f64,
    pub n_iters: usize,
}

/// Single-window forward latency over `n_iters` random windows.
pub fn bench_inference(params: &ModelParams, n_iters: usize, seed: u64) -> Result<BenchStats> {
    if n_iters < 2 {
        return Err(Error::InvalidArgument(
            "benchmark needs at least two iterations".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let windows: Vec<FeatureWindow> = (0..n_iters.min(64))
        .map(|i| FeatureWindow {
            data: (0..WINDOW_LEN * crate::features::NUM_FEATURES)
                .map(|_| rng.random_range(-2.0..2.0))
                .collect(),
            anchor_slot: i,
        })
        .collect();
    // Warm caches before timing.
    for w in &windows {
        std::hint::black_box(forward(params, w)?);
    }
    let mut times = Vec::with_capacity(n_iters);
    for i in 0..n_iters {
        let w = &windows[i % windows.len()];
        let t0 = Instant::now();
        std::hint::black_box(forward(params, std::hint::black_box(w))?);
        times.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(BenchStats {
        mean_ms: mean,
        sd_ms: var.sqrt(),
        pct_of_tti: 100.0 * mean / tdd::TICK_MS,
        n_iters,
    })
}
