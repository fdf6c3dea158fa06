//! Synthetic subjects with known calibration, for oracle tests and demos.
//!
//! Randomness is counter based: every (seed, stream, block) triple maps to a
//! fixed ChaCha8 keystream position, so generation is reproducible bit for bit
//! and independent of how voxels are split across threads.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, MethodInput, MethodKind, SubjectEntry};
use crate::maps::{LabelMap, ProbMap, SampleStack};
use crate::measures::binary_entropy;
use crate::tensor::{write_tensor, Tensor};

const BLOCK: usize = 4096;

const PURPOSE_BASE: u64 = 0;
const PURPOSE_LABELS: u64 = 1;
const PURPOSE_PAIR_LABELS: u64 = 2;
const PURPOSE_STACK: u64 = 1 << 28;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CalibrationCurve {
    #[default]
    Identity,
    /// `p + delta`, clamped to `[0, 1]`.
    Shift { delta: f64 },
    /// `p^gamma`, `gamma > 0`.
    Power { gamma: f64 },
}

impl CalibrationCurve {
    pub fn apply(&self, p: f64) -> f64 {
        match *self {
            CalibrationCurve::Identity => p,
            CalibrationCurve::Shift { delta } => (p + delta).clamp(0.0, 1.0),
            CalibrationCurve::Power { gamma } => p.powf(gamma),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            CalibrationCurve::Identity => Ok(()),
            CalibrationCurve::Shift { delta } if delta.is_finite() => Ok(()),
            CalibrationCurve::Power { gamma } if gamma > 0.0 && gamma.is_finite() => Ok(()),
            other => Err(Error::InvalidConfig(format!("bad calibration curve {other:?}"))),
        }
    }
}

fn default_prior() -> f64 {
    0.2
}

fn default_samples() -> usize {
    20
}

fn default_jitter() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub dims: Vec<usize>,
    /// Share of voxels whose generating probability lies above 0.5.
    #[serde(default = "default_prior")]
    pub foreground_prior: f64,
    #[serde(default)]
    pub calibration_curve: CalibrationCurve,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    /// Relative spread of stack samples around the reported probability, in `[0, 1]`.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(dims: Vec<usize>, seed: u64) -> Self {
        Self {
            dims,
            foreground_prior: default_prior(),
            calibration_curve: CalibrationCurve::Identity,
            n_samples: default_samples(),
            jitter: default_jitter(),
            seed,
        }
    }

    pub fn with_curve(mut self, curve: CalibrationCurve) -> Self {
        self.calibration_curve = curve;
        self
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.contains(&0) {
            return Err(Error::InvalidConfig(format!("bad dims {:?}", self.dims)));
        }
        if !(self.foreground_prior > 0.0 && self.foreground_prior < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "foreground_prior {} outside (0, 1)",
                self.foreground_prior
            )));
        }
        if !(0.0..=1.0).contains(&self.jitter) {
            return Err(Error::InvalidConfig(format!("jitter {} outside [0, 1]", self.jitter)));
        }
        self.calibration_curve.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSubject {
    pub ground_truth: LabelMap,
    /// What the model reports.
    pub prob: ProbMap,
    pub stack: Option<SampleStack>,
    /// Probability each ground-truth voxel was drawn with.
    pub true_prob: ProbMap,
}

fn rng_for(seed: u64, subject: u64, purpose: u64, block: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((subject << 32) | purpose);
    rng.set_word_pos((block as u128) << 32);
    rng
}

/// Fills `len` values block by block, each block from its own keystream position.
fn fill_blocks<T: Send + Default + Clone>(
    len: usize,
    seed: u64,
    subject: u64,
    purpose: u64,
    f: impl Fn(&mut ChaCha8Rng, usize) -> T + Sync,
) -> Vec<T> {
    let mut out = vec![T::default(); len];
    out.par_chunks_mut(BLOCK).enumerate().for_each(|(b, chunk)| {
        let mut rng = rng_for(seed, subject, purpose, b);
        for (j, slot) in chunk.iter_mut().enumerate() {
            *slot = f(&mut rng, b * BLOCK + j);
        }
    });
    out
}

/// Generating probabilities: with probability `prior` uniform on `[0.5, 1)`,
/// otherwise uniform on `[0, 0.5)`.
fn base_probabilities(config: &SynthConfig, subject: u64) -> Vec<f64> {
    let prior = config.foreground_prior;
    fill_blocks(config.len(), config.seed, subject, PURPOSE_BASE, |rng, _| {
        let fg = rng.random::<f64>() < prior;
        let u = rng.random::<f64>();
        if fg {
            0.5 + 0.5 * u
        } else {
            0.5 * u
        }
    })
}

fn sample_labels(true_prob: &[f64], seed: u64, subject: u64, purpose: u64) -> Vec<u8> {
    fill_blocks(true_prob.len(), seed, subject, purpose, |rng, i| {
        (rng.random::<f64>() < true_prob[i]) as u8
    })
}

/// One subject; `index` selects an independent random stream under the same seed.
pub fn generate_subject(config: &SynthConfig, index: u64) -> Result<SynthSubject> {
    config.validate()?;
    let true_prob = base_probabilities(config, index);
    let labels = sample_labels(&true_prob, config.seed, index, PURPOSE_LABELS);
    let reported: Vec<f64> = true_prob.iter().map(|&p| config.calibration_curve.apply(p)).collect();
    let dims = config.dims.clone();
    let prob = ProbMap::new(dims.clone(), reported)?;
    let stack = (config.n_samples > 0)
        .then(|| generate_sample_stack(&prob, config.n_samples, config.jitter, config.seed, index, 0))
        .transpose()?;
    Ok(SynthSubject {
        ground_truth: LabelMap::new(dims.clone(), labels)?,
        prob,
        stack,
        true_prob: ProbMap::new(dims, true_prob)?,
    })
}

/// `n_samples` slices drawn uniformly within `± jitter · min(p, 1 − p)` of each
/// voxel's probability, so every slice stays in `[0, 1]` and the expected
/// sample mean is `p`. `variant` separates stacks of different methods.
pub fn generate_sample_stack(
    prob: &ProbMap,
    n_samples: usize,
    jitter: f64,
    seed: u64,
    subject: u64,
    variant: u64,
) -> Result<SampleStack> {
    if n_samples == 0 {
        return Err(Error::InvalidConfig("n_samples must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&jitter) {
        return Err(Error::InvalidConfig(format!("jitter {jitter} outside [0, 1]")));
    }
    let p = prob.values();
    let mut data = Vec::with_capacity(n_samples * p.len());
    for t in 0..n_samples as u64 {
        let purpose = PURPOSE_STACK + (variant << 16) + t;
        let slice = fill_blocks(p.len(), seed, subject, purpose, |rng, i| {
            let u = rng.random::<f64>();
            let v = p[i] + jitter * (2.0 * u - 1.0) * p[i].min(1.0 - p[i]);
            v.clamp(0.0, 1.0) as f32
        });
        data.extend(slice);
    }
    SampleStack::new(n_samples, prob.dims().to_vec(), data)
}

/// Two subjects miscalibrated in opposite directions by `delta` whose reported
/// confidences are identical, so pooled bins are calibrated in expectation.
///
/// Both report `r = delta + (1 − 2·delta)·m` with the same `m`; subject A's
/// labels are drawn with probability `r − delta` (overconfident) and subject
/// B's with `r + delta` (underconfident).
pub fn generate_masking_pair(delta: f64, config: &SynthConfig) -> Result<(SynthSubject, SynthSubject)> {
    if !(delta > 0.0 && delta <= 0.3) {
        return Err(Error::InvalidConfig(format!("delta {delta} outside (0, 0.3]")));
    }
    config.validate()?;
    let m = fill_blocks(config.len(), config.seed, 0, PURPOSE_BASE, |rng, _| rng.random::<f64>());
    let reported: Vec<f64> = m.iter().map(|&m| delta + (1.0 - 2.0 * delta) * m).collect();
    let dims = config.dims.clone();
    let make = |sign: f64, stream: u64| -> Result<SynthSubject> {
        let truth: Vec<f64> = reported.iter().map(|&r| (r + sign * delta).clamp(0.0, 1.0)).collect();
        let labels = sample_labels(&truth, config.seed, stream, PURPOSE_PAIR_LABELS);
        Ok(SynthSubject {
            ground_truth: LabelMap::new(dims.clone(), labels)?,
            prob: ProbMap::new(dims.clone(), reported.clone())?,
            stack: None,
            true_prob: ProbMap::new(dims.clone(), truth)?,
        })
    };
    Ok((make(-1.0, 0)?, make(1.0, 1)?))
}

/// How a synthetic method's uncertainty relates to the data.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyModel {
    /// Largest near `p = 0.5`.
    #[default]
    Spread,
    /// One exactly on misclassified voxels, zero elsewhere.
    ErrorIndicator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthMethod {
    pub name: String,
    pub kind: MethodKind,
    /// Overrides the subject-level curve.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<CalibrationCurve>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jitter: Option<f64>,
    #[serde(default)]
    pub uncertainty: UncertaintyModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthDatasetConfig {
    pub dataset_name: String,
    pub n_subjects: usize,
    pub subject: SynthConfig,
    #[serde(rename = "declared_T", default = "default_samples")]
    pub declared_t: usize,
    #[serde(rename = "declared_K", default = "default_k")]
    pub declared_k: usize,
    pub methods: Vec<SynthMethod>,
}

fn default_k() -> usize {
    10
}

impl SynthDatasetConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.subject.validate()?;
        if self.n_subjects == 0 {
            return Err(Error::InvalidConfig("n_subjects must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("no methods configured".into()));
        }
        if self.declared_t == 0 || self.declared_k == 0 {
            return Err(Error::InvalidConfig("declared_T and declared_K must be positive".into()));
        }
        let mut names: Vec<&str> = self.methods.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig("duplicate method name".into()));
        }
        for m in &self.methods {
            if m.name.is_empty() {
                return Err(Error::InvalidConfig("empty method name".into()));
            }
            if let Some(c) = m.curve {
                c.validate()?;
            }
            if let Some(j) = m.jitter {
                if !(0.0..=1.0).contains(&j) {
                    return Err(Error::InvalidConfig(format!("jitter {j} outside [0, 1]")));
                }
            }
        }
        Ok(())
    }
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn put(dir: &Path, rel: String, t: &Tensor) -> Result<PathBuf> {
    write_tensor(t, dir.join(&rel))?;
    Ok(PathBuf::from(rel))
}

/// Writes tensors for every subject and method plus `manifest.json` into `out`.
/// Paths in the manifest are relative to `out`. Returns the manifest path.
pub fn write_dataset(config: &SynthDatasetConfig, out: &Path) -> Result<PathBuf> {
    config.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut subjects = Vec::with_capacity(config.n_subjects);
    for s in 0..config.n_subjects {
        let sid = format!("S{:03}", s + 1);
        let base_cfg = SynthConfig {
            n_samples: 0,
            ..config.subject.clone()
        };
        let base = generate_subject(&base_cfg, s as u64)?;
        let dims = base_cfg.dims.clone();
        let ground_truth = put(out, format!("{sid}_gt.suqt"), &base.ground_truth.to_tensor())?;
        let mut methods = std::collections::BTreeMap::new();
        for (mi, m) in config.methods.iter().enumerate() {
            let curve = m.curve.unwrap_or(config.subject.calibration_curve);
            let reported: Vec<f64> = base.true_prob.values().iter().map(|&p| curve.apply(p)).collect();
            let prob = ProbMap::new(dims.clone(), reported)?;
            let prediction = prob.predict();
            let errors: Vec<f64> = prediction
                .values()
                .iter()
                .zip(base.ground_truth.values())
                .map(|(a, b)| if a != b { 1.0 } else { 0.0 })
                .collect();
            let stem = format!("{sid}_{}", file_stem(&m.name));
            let f32_map = |v: &[f64]| {
                Tensor::from_f32(dims.clone(), v.iter().map(|&x| x as f32).collect()).expect("dims match")
            };
            let jitter = m.jitter.unwrap_or(config.subject.jitter);
            let input = match m.kind {
                MethodKind::SingleProb => MethodInput::SingleProb {
                    prob: put(out, format!("{stem}_prob.suqt"), &prob.to_tensor())?,
                },
                MethodKind::SampleStack | MethodKind::EnsembleStack => {
                    let n = if m.kind == MethodKind::SampleStack {
                        config.declared_t
                    } else {
                        config.declared_k
                    };
                    let stack =
                        generate_sample_stack(&prob, n, jitter, config.subject.seed, s as u64, mi as u64 + 1)?;
                    let stack = put(out, format!("{stem}_stack.suqt"), &stack.to_tensor())?;
                    if m.kind == MethodKind::SampleStack {
                        MethodInput::SampleStack { stack }
                    } else {
                        MethodInput::EnsembleStack { stack }
                    }
                }
                MethodKind::Aleatoric => {
                    let variance: Vec<f64> = match m.uncertainty {
                        UncertaintyModel::Spread => prob.values().iter().map(|&p| p * (1.0 - p)).collect(),
                        UncertaintyModel::ErrorIndicator => errors.clone(),
                    };
                    MethodInput::Aleatoric {
                        prob: put(out, format!("{stem}_prob.suqt"), &prob.to_tensor())?,
                        variance: put(out, format!("{stem}_var.suqt"), &f32_map(&variance))?,
                    }
                }
                MethodKind::Auxiliary => {
                    let raw: Vec<f64> = match m.uncertainty {
                        UncertaintyModel::Spread => prob.values().iter().map(|&p| binary_entropy(p)).collect(),
                        UncertaintyModel::ErrorIndicator => errors.clone(),
                    };
                    MethodInput::Auxiliary {
                        labels: put(out, format!("{stem}_labels.suqt"), &prediction.to_tensor())?,
                        uncertainty: put(out, format!("{stem}_unc.suqt"), &f32_map(&raw))?,
                    }
                }
            };
            methods.insert(m.name.clone(), input);
        }
        subjects.push(SubjectEntry {
            subject_id: sid,
            ground_truth,
            mask: None,
            methods,
        });
    }
    let manifest = DatasetManifest {
        dataset_name: config.dataset_name.clone(),
        declared_t: config.declared_t,
        declared_k: config.declared_k,
        subjects,
    };
    let path = out.join("manifest.json");
    fs::write(&path, manifest.to_json()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
