//! Temporal train/validation/test splits, sample construction and the binary
//! sample file.

use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{normalize_window, FeatureTable, Normalizer, NUM_FEATURES, WINDOW_LEN};
use crate::ingest::SlotTable;
use crate::labels::{build_label, HorizonSpec, LabelVector};
use crate::NUM_MCS;

const MAGIC: &[u8; 8] = b"MCSPDSET";
const VERSION: u32 = 1;
/// Flattened window length.
pub const INPUT_LEN: usize = WINDOW_LEN * NUM_FEATURES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub val_fraction: f64,
    /// Distance between consecutive training anchors, in DL slots.
    pub anchor_stride: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.70,
            val_fraction: 0.15,
            anchor_stride: 32,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.train_fraction > 0.0
            && self.val_fraction > 0.0
            && self.train_fraction + self.val_fraction < 1.0
            && self.anchor_stride > 0;
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "invalid split configuration {self:?}"
            )));
        }
        Ok(())
    }
}

/// Contiguous row ranges of one trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitBounds {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl SplitBounds {
    pub fn new(n_rows: usize, config: &SplitConfig) -> Self {
        let a = (config.train_fraction * n_rows as f64).floor() as usize;
        let b = ((config.train_fraction + config.val_fraction) * n_rows as f64).floor() as usize;
        Self {
            train: 0..a,
            val: a..b,
            test: b..n_rows,
        }
    }
}

/// One anchor with its raw window and label counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub trace: u32,
    pub anchor: u64,
    pub window: Vec<f32>,
    pub success: [u32; NUM_MCS],
    pub trials: [u32; NUM_MCS],
}

impl Sample {
    pub fn label(&self) -> LabelVector {
        LabelVector::from_counts(self.success, self.trials)
    }
}

/// Anchors inside `region` whose window and horizon both stay inside it.
///
/// Anchors that cross a gap violation are skipped.
pub fn build_samples(
    trace: u32,
    features: &FeatureTable,
    table: &SlotTable,
    region: Range<usize>,
    horizon: &HorizonSpec,
    stride: usize,
) -> Result<Vec<Sample>> {
    horizon.validate()?;
    if stride == 0 {
        return Err(Error::InvalidArgument(
            "anchor stride must be positive".into(),
        ));
    }
    let mut out = Vec::new();
    let mut anchor = region.start + WINDOW_LEN - 1;
    while horizon.horizon(anchor).1 < region.end {
        let raw = match features.raw_window(anchor) {
            Ok(r) => r,
            Err(Error::GapViolation { .. }) => {
                anchor += stride;
                continue;
            }
            Err(e) => return Err(e),
        };
        match build_label(table, anchor, horizon) {
            Ok(label) => out.push(Sample {
                trace,
                anchor: anchor as u64,
                window: raw.iter().flatten().map(|&v| v as f32).collect(),
                success: label.success,
                trials: label.trials,
            }),
            Err(Error::GapViolation { .. }) => {}
            Err(e) => return Err(e),
        }
        anchor += stride;
    }
    Ok(out)
}

/// Samples of one split, tagged with the configuration fingerprint.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleFile {
    pub config_fingerprint: u64,
    pub samples: Vec<Sample>,
}

impl SampleFile {
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.config_fingerprint.to_le_bytes())?;
        w.write_all(&(self.samples.len() as u64).to_le_bytes())?;
        for s in &self.samples {
            if s.window.len() != INPUT_LEN {
                return Err(Error::InvalidArgument(format!(
                    "window of length {}",
                    s.window.len()
                )));
            }
            w.write_all(&s.trace.to_le_bytes())?;
            w.write_all(&s.anchor.to_le_bytes())?;
            for v in &s.window {
                w.write_all(&v.to_le_bytes())?;
            }
            for v in s.success.iter().chain(&s.trials) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a sample file".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported sample file version {version}"
            )));
        }
        let config_fingerprint = read_u64(&mut r)?;
        let n = read_u64(&mut r)? as usize;
        let mut samples = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let trace = read_u32(&mut r)?;
            let anchor = read_u64(&mut r)?;
            let mut window = Vec::with_capacity(INPUT_LEN);
            for _ in 0..INPUT_LEN {
                let mut b = [0u8; 4];
                r.read_exact(&mut b)?;
                window.push(f32::from_le_bytes(b));
            }
            let mut success = [0u32; NUM_MCS];
            let mut trials = [0u32; NUM_MCS];
            for v in success.iter_mut().chain(trials.iter_mut()) {
                *v = read_u32(&mut r)?;
            }
            samples.push(Sample {
                trace,
                anchor,
                window,
                success,
                trials,
            });
        }
        Ok(Self {
            config_fingerprint,
            samples,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(BufReader::new(std::fs::File::open(path)?))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Normalized inputs and labels ready for the model.
#[derive(Debug, Clone, Default)]
pub struct PreparedSet {
    inputs: Vec<f64>,
    pub labels: Vec<LabelVector>,
}

impl PreparedSet {
    pub fn new(samples: &[Sample], normalizer: &Normalizer) -> Self {
        let mut inputs = Vec::with_capacity(samples.len() * INPUT_LEN);
        let mut labels = Vec::with_capacity(samples.len());
        for s in samples {
            let raw: Vec<[f64; NUM_FEATURES]> = s
                .window
                .chunks(NUM_FEATURES)
                .map(|c| std::array::from_fn(|j| c[j] as f64))
                .collect();
            inputs.extend(normalize_window(&raw, normalizer, s.anchor as usize).data);
            labels.push(s.label());
        }
        Self { inputs, labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * INPUT_LEN..(i + 1) * INPUT_LEN]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::SlotRecord;
    use crate::tdd;

    fn table(n: usize) -> SlotTable {
        let rows = (0..n)
            .map(|i| SlotRecord {
                dl_slot_index: i,
                tick: tdd::dl_index_to_tick(i as u64),
                num_rb: 273,
                mcs: (i % 28) as u8,
                crc_pass: i % 7 != 0,
                ss_rsrp: -80.0,
                ss_sinr: 15.0,
                csi_rsrp: -81.0,
                csi_sinr: 14.0,
                dl_cqi: 11,
                pci: 1,
            })
            .collect();
        SlotTable::from_rows(rows)
    }

    #[test]
    fn split_bounds_partition_rows() {
        let b = SplitBounds::new(1000, &SplitConfig::default());
        assert_eq!(b.train, 0..700);
        assert_eq!(b.val, 700..850);
        assert_eq!(b.test, 850..1000);
    }

    #[test]
    fn samples_stay_inside_region() {
        let t = table(3000);
        let ft = FeatureTable::from_slots(&t);
        let h = HorizonSpec {
            delay_dl_slots: 16,
            gop_dl_slots: 80,
        };
        let region = 500..1500;
        let s = build_samples(0, &ft, &t, region.clone(), &h, 10).unwrap();
        assert!(!s.is_empty());
        for x in &s {
            let a = x.anchor as usize;
            assert!(a + 1 >= region.start + WINDOW_LEN);
            assert!(h.horizon(a).1 < region.end);
            assert_eq!(x.label(), build_label(&t, a, &h).unwrap());
        }
        assert_eq!(s[0].anchor as usize, 539);
    }

    #[test]
    fn sample_file_round_trip() {
        let t = table(400);
        let ft = FeatureTable::from_slots(&t);
        let h = HorizonSpec {
            delay_dl_slots: 8,
            gop_dl_slots: 40,
        };
        let samples = build_samples(3, &ft, &t, 0..400, &h, 7).unwrap();
        let f = SampleFile {
            config_fingerprint: 0xdead_beef,
            samples,
        };
        let mut buf = Vec::new();
        f.write(&mut buf).unwrap();
        assert_eq!(SampleFile::read(&buf[..]).unwrap(), f);
        assert!(SampleFile::read(&buf[..buf.len() - 3]).is_err());
    }

    #[test]
    fn prepared_set_matches_extracted_window() {
        let t = table(400);
        let ft = FeatureTable::from_slots(&t);
        let h = HorizonSpec {
            delay_dl_slots: 8,
            gop_dl_slots: 40,
        };
        let samples = build_samples(0, &ft, &t, 0..400, &h, 50).unwrap();
        let norm = crate::features::fit_normalizer(ft.rows.iter()).unwrap();
        let set = PreparedSet::new(&samples, &norm);
        for (i, s) in samples.iter().enumerate() {
            let w = crate::features::extract_window(&ft, s.anchor as usize, &norm).unwrap();
            for (a, b) in set.input(i).iter().zip(&w.data) {
                assert!((a - b).abs() < 1e-4 * (1.0 + b.abs()));
            }
        }
    }
}
