//! The `mcsprob` pipeline: configuration, stage functions and argument handling.
//!
//! Artifacts live under the output directory:
//!
//! ```text
//! traces/   trace_NNN.csv, summary.csv
//! data/     slots_NNN.csv, splits.csv, normalizer.txt, {train,val,test}.bin
//! model/    proposed.ckpt, mse.ckpt, proposed_log.csv, mse_log.csv
//! eval/     report.csv, report.txt, decisions.csv
//! bench/    bench.csv
//! report/   summary.txt, metrics.csv, loss_curve.svg, metrics.svg
//! ```

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::channelsim::{generate_trace, ChannelSimConfig, RawTelemetryLog};
use crate::dataset::{build_samples, PreparedSet, SampleFile, SplitBounds, SplitConfig};
use crate::error::{Error, Result};
use crate::evalsim::{
    bench_inference, simulate_gops, BenchStats, EvalReport, GopDecision, Policy, PolicyKind,
};
use crate::features::{fit_normalizer, FeatureTable, Normalizer};
use crate::ingest::{align_locf, filter_slots, SlotFilter, SlotTable, DEFAULT_MAX_GAP};
use crate::labels::HorizonSpec;
use crate::model::{fnv1a, Checkpoint, ModelConfig};
use crate::training::{train, LossKind, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub n_traces: usize,
    pub max_gap: u32,
    pub filter: SlotFilter,
    pub split: SplitConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_traces: 2,
            max_gap: DEFAULT_MAX_GAP,
            filter: SlotFilter::default(),
            split: SplitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Success probability the ground-truth MCS must reach.
    pub gt_threshold: f64,
    pub proposed_threshold: f64,
    pub deterministic_threshold: f64,
    pub bench_iters: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            gt_threshold: 0.9,
            proposed_threshold: 0.9,
            deterministic_threshold: 0.5,
            bench_iters: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Drives every trace seed and both training runs.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub channel: ChannelSimConfig,
    pub data: DataConfig,
    pub horizon: HorizonSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            out_dir: PathBuf::from("runs/default"),
            channel: ChannelSimConfig::default(),
            data: DataConfig::default(),
            horizon: HorizonSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        self.horizon.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.data.split.validate()?;
        if self.data.n_traces == 0 {
            return Err(Error::InvalidArgument(
                "data.n_traces must be positive".into(),
            ));
        }
        for (name, t) in [
            ("gt_threshold", self.eval.gt_threshold),
            ("proposed_threshold", self.eval.proposed_threshold),
            ("deterministic_threshold", self.eval.deterministic_threshold),
        ] {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "eval.{name} must lie in (0, 1], got {t}"
                )));
            }
        }
        Ok(())
    }

    /// FNV-1a of the serialized configuration, excluding the output directory.
    pub fn fingerprint(&self) -> u64 {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        fnv1a(c.to_toml().into_bytes())
    }

    fn trace_seed(&self, i: usize) -> u64 {
        self.seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(i as u64)
    }

    fn train_config(&self, kind: LossKind) -> TrainConfig {
        TrainConfig {
            loss_kind: kind,
            seed: self.seed,
            ..self.train.clone()
        }
    }

    fn dir(&self, stage: &str) -> PathBuf {
        self.out_dir.join(stage)
    }

    pub fn trace_path(&self, i: usize) -> PathBuf {
        self.dir("traces").join(format!("trace_{i:03}.csv"))
    }

    pub fn slots_path(&self, i: usize) -> PathBuf {
        self.dir("data").join(format!("slots_{i:03}.csv"))
    }

    pub fn split_path(&self, split: &str) -> PathBuf {
        self.dir("data").join(format!("{split}.bin"))
    }

    pub fn normalizer_path(&self) -> PathBuf {
        self.dir("data").join("normalizer.txt")
    }

    pub fn splits_csv_path(&self) -> PathBuf {
        self.dir("data").join("splits.csv")
    }

    pub fn checkpoint_path(&self, kind: LossKind) -> PathBuf {
        self.dir("model").join(format!("{}.ckpt", model_name(kind)))
    }

    pub fn train_log_path(&self, kind: LossKind) -> PathBuf {
        self.dir("model")
            .join(format!("{}_log.csv", model_name(kind)))
    }

    pub fn report_csv_path(&self) -> PathBuf {
        self.dir("eval").join("report.csv")
    }

    pub fn bench_path(&self) -> PathBuf {
        self.dir("bench").join("bench.csv")
    }
}

fn model_name(kind: LossKind) -> &'static str {
    match kind {
        LossKind::Asl => "proposed",
        LossKind::Mse => "mse",
    }
}

fn require(path: &Path, stage: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            stage: format!("mcsprob {stage}"),
        })
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    ensure_parent(path)?;
    Ok(BufWriter::new(File::create(path)?))
}

fn header_line(cfg: &RunConfig) -> String {
    format!("# config_fingerprint={:016x}\n", cfg.fingerprint())
}

/// Reads a CSV written with a fingerprint comment line.
fn csv_reader(path: &Path) -> Result<csv::Reader<BufReader<File>>> {
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(BufReader::new(File::open(path)?)))
}

fn warn_fingerprint(cfg: &RunConfig, found: u64, what: &str) {
    if found != cfg.fingerprint() {
        eprintln!(
            "warning: {what} was produced under config {found:016x}, current config is {:016x}",
            cfg.fingerprint()
        );
    }
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateSummary {
    pub dl_slots: Vec<usize>,
    pub bler: Vec<f64>,
    pub mcs_histogram: [usize; 32],
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<GenerateSummary> {
    cfg.validate()?;
    let mut out = GenerateSummary {
        dl_slots: Vec::new(),
        bler: Vec::new(),
        mcs_histogram: [0; 32],
    };
    for i in 0..cfg.data.n_traces {
        let sim = ChannelSimConfig {
            seed: cfg.trace_seed(i),
            ..cfg.channel.clone()
        };
        let log = generate_trace(&sim)?;
        let s = log.summary();
        let mut w = create(&cfg.trace_path(i))?;
        log.write_csv(&mut w)?;
        w.flush()?;
        out.dl_slots.push(s.dl_slots);
        out.bler.push(s.bler);
        for (h, c) in out.mcs_histogram.iter_mut().zip(s.mcs_histogram) {
            *h += c;
        }
    }
    let mut w = create(&cfg.dir("traces").join("summary.csv"))?;
    w.write_all(header_line(cfg).as_bytes())?;
    writeln!(w, "trace,dl_slots,bler")?;
    for (i, (n, b)) in out.dl_slots.iter().zip(&out.bler).enumerate() {
        writeln!(w, "{i},{n},{b:.6}")?;
    }
    w.flush()?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessSummary {
    pub bounds: Vec<SplitBounds>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

pub fn cmd_preprocess(cfg: &RunConfig) -> Result<PreprocessSummary> {
    cfg.validate()?;
    let fp = cfg.fingerprint();
    let mut tables = Vec::new();
    for i in 0..cfg.data.n_traces {
        let path = cfg.trace_path(i);
        require(&path, "generate")?;
        let log = RawTelemetryLog::read_csv(BufReader::new(File::open(&path)?))?;
        let mut aligned = align_locf(&log)?;
        aligned.max_gap = cfg.data.max_gap;
        let table = filter_slots(&aligned, &cfg.data.filter);
        if table.is_empty() {
            return Err(Error::EmptyInput(format!(
                "trace {} has no slots after filtering",
                path.display()
            )));
        }
        let mut w = create(&cfg.slots_path(i))?;
        table.write_csv(&mut w)?;
        w.flush()?;
        tables.push(table);
    }

    let features: Vec<FeatureTable> = tables.iter().map(FeatureTable::from_slots).collect();
    let bounds: Vec<SplitBounds> = tables
        .iter()
        .map(|t| SplitBounds::new(t.len(), &cfg.data.split))
        .collect();
    let normalizer = fit_normalizer(
        features
            .iter()
            .zip(&bounds)
            .flat_map(|(f, b)| f.rows[b.train.clone()].iter()),
    )?;
    ensure_parent(&cfg.normalizer_path())?;
    normalizer.save(&cfg.normalizer_path())?;

    let mut splits = [Vec::new(), Vec::new(), Vec::new()];
    for (i, ((t, f), b)) in tables.iter().zip(&features).zip(&bounds).enumerate() {
        for (out, region) in splits.iter_mut().zip([&b.train, &b.val, &b.test]) {
            out.extend(build_samples(
                i as u32,
                f,
                t,
                region.clone(),
                &cfg.horizon,
                cfg.data.split.anchor_stride,
            )?);
        }
    }
    let counts = splits.each_ref().map(Vec::len);
    for (name, samples) in ["train", "val", "test"].into_iter().zip(splits) {
        SampleFile {
            config_fingerprint: fp,
            samples,
        }
        .save(&cfg.split_path(name))?;
    }

    let mut w = create(&cfg.splits_csv_path())?;
    w.write_all(header_line(cfg).as_bytes())?;
    writeln!(w, "trace,n_slots,train_end,val_end")?;
    for (i, b) in bounds.iter().enumerate() {
        writeln!(w, "{i},{},{},{}", b.test.end, b.train.end, b.val.end)?;
    }
    w.flush()?;
    Ok(PreprocessSummary {
        bounds,
        n_train: counts[0],
        n_val: counts[1],
        n_test: counts[2],
    })
}

fn load_split(cfg: &RunConfig, name: &str) -> Result<SampleFile> {
    let path = cfg.split_path(name);
    require(&path, "preprocess")?;
    let f = SampleFile::load(&path)?;
    warn_fingerprint(cfg, f.config_fingerprint, &format!("{name} split"));
    Ok(f)
}

fn load_normalizer(cfg: &RunConfig) -> Result<Normalizer> {
    let path = cfg.normalizer_path();
    require(&path, "preprocess")?;
    Normalizer::load(&path)
}

/// Trains the ASL model and its MSE twin.
pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<TrainOutcome>> {
    cfg.validate()?;
    let normalizer = load_normalizer(cfg)?;
    let train_set = PreparedSet::new(&load_split(cfg, "train")?.samples, &normalizer);
    let val_set = PreparedSet::new(&load_split(cfg, "val")?.samples, &normalizer);
    let mut outcomes = Vec::new();
    for kind in [LossKind::Asl, LossKind::Mse] {
        let outcome = train(&train_set, &val_set, &cfg.model, &cfg.train_config(kind))?;
        ensure_parent(&cfg.checkpoint_path(kind))?;
        Checkpoint {
            params: outcome.best.clone(),
            config_fingerprint: cfg.fingerprint(),
        }
        .save(&cfg.checkpoint_path(kind))?;
        let mut w = create(&cfg.train_log_path(kind))?;
        outcome.write_log_csv(&mut w)?;
        w.flush()?;
        outcomes.push(outcome);
    }
    Ok(outcomes)
}

fn load_checkpoint(cfg: &RunConfig, kind: LossKind) -> Result<Checkpoint> {
    let path = cfg.checkpoint_path(kind);
    require(&path, "train")?;
    let c = Checkpoint::load(&path)?;
    warn_fingerprint(cfg, c.config_fingerprint, &path.display().to_string());
    Ok(c)
}

/// The five policies in report order.
pub fn build_policies(cfg: &RunConfig, normalizer: &Normalizer) -> Result<Vec<Policy>> {
    let asl = load_checkpoint(cfg, LossKind::Asl)?.params;
    let mse = load_checkpoint(cfg, LossKind::Mse)?.params;
    Ok(vec![
        Policy::model(
            PolicyKind::Proposed,
            asl,
            cfg.eval.proposed_threshold,
            normalizer.clone(),
        ),
        Policy::heuristic(PolicyKind::Lra, normalizer.clone()),
        Policy::heuristic(PolicyKind::Maw, normalizer.clone()),
        Policy::model(
            PolicyKind::Deterministic,
            mse.clone(),
            cfg.eval.deterministic_threshold,
            normalizer.clone(),
        ),
        Policy::model(
            PolicyKind::MseT,
            mse,
            cfg.eval.proposed_threshold,
            normalizer.clone(),
        ),
    ])
}

fn read_bounds(cfg: &RunConfig) -> Result<Vec<SplitBounds>> {
    let path = cfg.splits_csv_path();
    require(&path, "preprocess")?;
    let mut out = Vec::new();
    for rec in csv_reader(&path)?.records() {
        let rec = rec?;
        let field = |i: usize| -> Result<usize> {
            rec.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("{}: bad row {rec:?}", path.display())))
        };
        let (n, a, b) = (field(1)?, field(2)?, field(3)?);
        out.push(SplitBounds {
            train: 0..a,
            val: a..b,
            test: b..n,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    /// Per trace, per policy.
    pub decisions: Vec<Vec<Vec<GopDecision>>>,
    pub skipped: usize,
}

/// Runs the GOP simulation for all five policies over every test region.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<Evaluation> {
    cfg.validate()?;
    let normalizer = load_normalizer(cfg)?;
    let policies = build_policies(cfg, &normalizer)?;
    let bounds = read_bounds(cfg)?;
    let mut merged = vec![Vec::new(); policies.len()];
    let mut per_trace = Vec::new();
    let mut skipped = 0;
    for (i, b) in bounds.iter().enumerate() {
        let path = cfg.slots_path(i);
        require(&path, "preprocess")?;
        let table = SlotTable::read_csv(BufReader::new(File::open(&path)?), cfg.data.max_gap)?;
        let features = FeatureTable::from_slots(&table);
        let run = simulate_gops(
            &features,
            &table,
            b.test.clone(),
            &policies,
            &cfg.horizon,
            cfg.eval.gt_threshold,
        )?;
        skipped += run.skipped;
        for (m, d) in merged.iter_mut().zip(&run.decisions) {
            m.extend_from_slice(d);
        }
        per_trace.push(run.decisions);
    }
    let report = EvalReport::from_decisions(&policies, &merged)?;

    let mut w = create(&cfg.report_csv_path())?;
    w.write_all(header_line(cfg).as_bytes())?;
    report.write_csv(&mut w)?;
    w.flush()?;
    fs::write(cfg.dir("eval").join("report.txt"), report.to_table())?;

    let mut w = create(&cfg.dir("eval").join("decisions.csv"))?;
    w.write_all(header_line(cfg).as_bytes())?;
    let names: Vec<&str> = policies.iter().map(Policy::name).collect();
    writeln!(w, "trace,gop,anchor,ground_truth,{}", names.join(","))?;
    for (t, decisions) in per_trace.iter().enumerate() {
        for g in 0..decisions[0].len() {
            let d0 = &decisions[0][g];
            let sel: Vec<String> = decisions
                .iter()
                .map(|d| d[g].selected.to_string())
                .collect();
            writeln!(
                w,
                "{t},{g},{},{},{}",
                d0.anchor,
                d0.ground_truth,
                sel.join(",")
            )?;
        }
    }
    w.flush()?;
    Ok(Evaluation {
        report,
        decisions: per_trace,
        skipped,
    })
}

pub fn cmd_bench(cfg: &RunConfig) -> Result<BenchStats> {
    cfg.validate()?;
    let ckpt = load_checkpoint(cfg, LossKind::Asl)?;
    let stats = bench_inference(&ckpt.params, cfg.eval.bench_iters, cfg.seed)?;
    let mut w = create(&cfg.bench_path())?;
    w.write_all(header_line(cfg).as_bytes())?;
    writeln!(w, "n_iters,mean_ms,sd_ms,pct_of_tti")?;
    writeln!(
        w,
        "{},{:.6},{:.6},{:.4}",
        stats.n_iters, stats.mean_ms, stats.sd_ms, stats.pct_of_tti
    )?;
    w.flush()?;
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq)]
struct LossPoint {
    step: usize,
    train: f64,
    val: Option<f64>,
}

fn read_train_log(path: &Path) -> Result<Vec<LossPoint>> {
    let mut out = Vec::new();
    for rec in csv_reader(path)?.records() {
        let rec = rec?;
        let parse = |i: usize| rec.get(i).and_then(|v| v.parse::<f64>().ok());
        let bad = || Error::Format(format!("{}: bad row {rec:?}", path.display()));
        out.push(LossPoint {
            step: parse(0).ok_or_else(bad)? as usize,
            train: parse(3).ok_or_else(bad)?,
            val: parse(4),
        });
    }
    Ok(out)
}

/// Renders the evaluation table, a loss-curve plot and metric bar charts.
pub fn cmd_report(cfg: &RunConfig) -> Result<String> {
    cfg.validate()?;
    let report_path = cfg.report_csv_path();
    require(&report_path, "evaluate")?;
    let mut rows = Vec::new();
    for rec in csv_reader(&report_path)?.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("{}: bad row {rec:?}", report_path.display())))
        };
        rows.push((
            rec.get(0).unwrap_or_default().to_string(),
            [num(1)?, num(2)?, num(3)?, num(4)?],
            num(5)? as usize,
        ));
    }
    let mut logs = Vec::new();
    for kind in [LossKind::Asl, LossKind::Mse] {
        let path = cfg.train_log_path(kind);
        require(&path, "train")?;
        logs.push((model_name(kind), read_train_log(&path)?));
    }
    let bench = if cfg.bench_path().exists() {
        csv_reader(&cfg.bench_path())?
            .records()
            .next()
            .transpose()?
            .map(|r| r.iter().map(str::to_string).collect::<Vec<_>>())
    } else {
        None
    };

    let dir = cfg.dir("report");
    fs::create_dir_all(&dir)?;
    let mut text = String::new();
    let _ = writeln!(text, "config fingerprint {:016x}\n", cfg.fingerprint());
    let _ = writeln!(
        text,
        "{:<14} {:>7} {:>18} {:>13} {:>7} {:>7}",
        "Policy", "RMSE", "Reliability Score", "Average Bias", "MAE", "GOPs"
    );
    for (name, m, n) in &rows {
        let _ = writeln!(
            text,
            "{:<14} {:>7.3} {:>17.2}% {:>13.3} {:>7.3} {:>7}",
            name, m[0], m[1], m[2], m[3], n
        );
    }
    if let Some(b) = &bench {
        let get = |i: usize| b.get(i).map_or("?", String::as_str);
        let _ = writeln!(
            text,
            "\ninference: mean {} ms, sd {} ms, {} % of TTI over {} iterations",
            get(1),
            get(2),
            get(3),
            get(0)
        );
    }
    fs::write(dir.join("summary.txt"), &text)?;
    fs::copy(&report_path, dir.join("metrics.csv"))?;
    fs::write(dir.join("loss_curve.svg"), loss_curve_svg(&logs))?;
    fs::write(dir.join("metrics.svg"), metrics_svg(&rows))?;
    Ok(text)
}

const PALETTE: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd"];

fn loss_curve_svg(logs: &[(&str, Vec<LossPoint>)]) -> String {
    let (w, h, pad) = (640.0, 360.0, 50.0);
    let values = logs
        .iter()
        .flat_map(|(_, l)| l.iter().flat_map(|p| [Some(p.train), p.val]).flatten());
    let (lo, hi) = values
        .filter(|v| *v > 0.0)
        .fold((f64::MAX, f64::MIN), |(a, b), v| {
            (a.min(v.ln()), b.max(v.ln()))
        });
    let (lo, hi) = if lo < hi {
        (lo, hi)
    } else {
        (lo - 1.0, lo + 1.0)
    };
    let max_step = logs
        .iter()
        .flat_map(|(_, l)| l.last().map(|p| p.step))
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let x = |s: usize| pad + (w - 2.0 * pad) * s as f64 / max_step;
    let y = |v: f64| h - pad - (h - 2.0 * pad) * (v.max(1e-300).ln() - lo) / (hi - lo);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\">training loss (log scale)</text>\n\
         <line x1=\"{pad}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{}\" stroke=\"black\"/>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">step</text>\n",
        w / 2.0,
        h - pad,
        w - pad,
        h - pad,
        h - pad,
        w / 2.0,
        h - 15.0
    );
    for (i, (name, log)) in logs.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = log
            .iter()
            .map(|p| format!("{:.1},{:.1}", x(p.step), y(p.train)))
            .collect();
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"1\" opacity=\"0.6\" points=\"{}\"/>",
            pts.join(" ")
        );
        for p in log.iter().filter(|p| p.val.is_some()) {
            let _ = writeln!(
                s,
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{colour}\"/>",
                x(p.step),
                y(p.val.unwrap_or_default())
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" fill=\"{colour}\">{name} (line: train, dots: validation)</text>",
            w - pad - 250.0,
            pad + 16.0 * i as f64
        );
    }
    s.push_str("</svg>\n");
    s
}

fn metrics_svg(rows: &[(String, [f64; 4], usize)]) -> String {
    let titles = ["RMSE", "Reliability Score (%)", "Average Bias", "MAE"];
    let (pw, ph, pad) = (300.0, 220.0, 30.0);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
        2.0 * pw,
        2.0 * ph
    );
    for (m, title) in titles.iter().enumerate() {
        let (ox, oy) = ((m % 2) as f64 * pw, (m / 2) as f64 * ph);
        let vals: Vec<f64> = rows.iter().map(|r| r.1[m]).collect();
        let hi = vals.iter().cloned().fold(0.0, f64::max);
        let lo = vals.iter().cloned().fold(0.0, f64::min);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let plot_h = ph - 3.0 * pad;
        let zero_y = oy + pad + plot_h * hi / span;
        let bar_w = (pw - 2.0 * pad) / rows.len().max(1) as f64;
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{title}</text>",
            ox + pw / 2.0,
            oy + 18.0
        );
        let _ = writeln!(
            s,
            "<line x1=\"{}\" y1=\"{zero_y:.1}\" x2=\"{}\" y2=\"{zero_y:.1}\" stroke=\"black\"/>",
            ox + pad,
            ox + pw - pad
        );
        for (i, (name, v)) in rows.iter().map(|r| &r.0).zip(&vals).enumerate() {
            let bh = plot_h * v.abs() / span;
            let top = if *v >= 0.0 { zero_y - bh } else { zero_y };
            let bx = ox + pad + bar_w * i as f64 + 4.0;
            let _ = writeln!(
                s,
                "<rect x=\"{bx:.1}\" y=\"{top:.1}\" width=\"{:.1}\" height=\"{bh:.1}\" fill=\"{}\"/>",
                bar_w - 8.0,
                PALETTE[i % PALETTE.len()]
            );
            let _ = writeln!(
                s,
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{v:.2}</text>",
                bx + (bar_w - 8.0) / 2.0,
                top - 3.0
            );
            let _ = writeln!(
                s,
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"9\">{name}</text>",
                bx + (bar_w - 8.0) / 2.0,
                oy + ph - pad
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

// ---------------------------------------------------------------------------
// Argument handling
// ---------------------------------------------------------------------------

#[derive(Debug, Parser)]
#[command(
    name = "mcsprob",
    version,
    about = "MCS success-probability forecasting pipeline"
)]
pub struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured global seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate telemetry traces.
    Generate,
    /// Align, filter, featurize, normalize and split the traces.
    Preprocess,
    /// Train the ASL model and its MSE twin.
    Train,
    /// Simulate the five policies on the test regions.
    Evaluate,
    /// Time single-window inference.
    Bench,
    /// Render tables and plots from earlier stages.
    Report,
    /// Run every stage in order.
    All,
    /// Print the effective configuration as TOML.
    Config,
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_MISSING_ARTIFACT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::MissingArtifact { .. } => EXIT_MISSING_ARTIFACT,
        Error::NonFinite(_) | Error::Divergence { .. } | Error::StaleCache => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_command(cfg: &RunConfig, command: &Command) -> Result<()> {
    match command {
        Command::Generate => {
            let s = cmd_generate(cfg)?;
            for (i, (n, b)) in s.dl_slots.iter().zip(&s.bler).enumerate() {
                println!("trace {i}: {n} downlink slots, empirical BLER {b:.4}");
            }
            let total: usize = s.mcs_histogram.iter().sum();
            println!("MCS histogram (share of slots):");
            for (m, c) in s.mcs_histogram.iter().enumerate().filter(|(_, c)| **c > 0) {
                println!("  {m:>2}: {:.4}", *c as f64 / total as f64);
            }
        }
        Command::Preprocess => {
            let s = cmd_preprocess(cfg)?;
            println!(
                "samples: train {}, val {}, test {} from {} traces",
                s.n_train,
                s.n_val,
                s.n_test,
                s.bounds.len()
            );
        }
        Command::Train => {
            for (name, o) in ["proposed", "mse"].iter().zip(cmd_train(cfg)?) {
                println!(
                    "{name}: best epoch {} with validation loss {:.6}",
                    o.best_epoch, o.best_val_loss
                );
            }
        }
        Command::Evaluate => {
            let e = cmd_evaluate(cfg)?;
            print!("{}", e.report.to_table());
            if e.skipped > 0 {
                println!("{} GOPs skipped for gap violations", e.skipped);
            }
        }
        Command::Bench => {
            let b = cmd_bench(cfg)?;
            println!(
                "inference over {} iterations: mean {:.4} ms, sd {:.4} ms, {:.2} % of TTI",
                b.n_iters, b.mean_ms, b.sd_ms, b.pct_of_tti
            );
        }
        Command::Report => print!("{}", cmd_report(cfg)?),
        Command::All => {
            for c in [
                Command::Generate,
                Command::Preprocess,
                Command::Train,
                Command::Evaluate,
                Command::Bench,
                Command::Report,
            ] {
                run_command(cfg, &c)?;
            }
        }
        Command::Config => print!("{}", cfg.to_toml()),
    }
    Ok(())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = resolve_config(&cli).and_then(|cfg| run_command(&cfg, &cli.command));
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
