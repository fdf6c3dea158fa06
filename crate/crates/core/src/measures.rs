//! Voxel-wise uncertainty maps and fused probabilities for the five method kinds.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, MethodInput, MethodKind, SubjectEntry};
use crate::maps::{same_dims, LabelMap, NonNegField, ProbMap, SampleStack, UncertaintyMap};
use crate::tensor::read_tensor;

// Minimum elements per rayon task for element-wise maps.
pub(crate) const PAR_MIN_LEN: usize = 1 << 14;

/// Only used inside the logarithm; the `p * ln p` product is still exactly 0 at p = 0.
const LOG_EPS: f64 = 1e-12;

/// Binary entropy of `p` normalized by `ln 2`, in `[0, 1]`.
///
/// The two terms are always summed smaller-probability first, so `p` and
/// `1 - p` give bit-identical results whenever `1 - (1 - p) == p`.
#[inline]
pub fn binary_entropy(p: f64) -> f64 {
    let (lo, hi) = if p <= 0.5 { (p, 1.0 - p) } else { (1.0 - p, p) };
    let a = lo * lo.max(LOG_EPS).ln();
    let b = hi * hi.max(LOG_EPS).ln();
    let h = -(a + b) / std::f64::consts::LN_2;
    if h > 0.0 {
        h.min(1.0)
    } else {
        0.0
    }
}

pub fn normalized_entropy(prob: &ProbMap) -> UncertaintyMap {
    let values: Vec<f64> = prob
        .values()
        .par_iter()
        .with_min_len(PAR_MIN_LEN)
        .map(|&p| binary_entropy(p))
        .collect();
    UncertaintyMap::from_parts_unchecked(prob.dims().to_vec(), values)
}

/// Voxel-wise mean over the sample axis. Samples are added in stack order,
/// so the result does not depend on how voxels are split across threads.
pub fn mean_probability(stack: &SampleStack) -> ProbMap {
    let n = stack.slice_len();
    let t = stack.n_samples() as f64;
    let mut acc = vec![0.0f64; n];
    for sample in stack.samples() {
        acc.par_iter_mut()
            .with_min_len(PAR_MIN_LEN)
            .zip(sample.par_iter())
            .for_each(|(a, &p)| *a += p as f64);
    }
    acc.par_iter_mut()
        .with_min_len(PAR_MIN_LEN)
        .for_each(|a| *a = (*a / t).clamp(0.0, 1.0));
    ProbMap::from_parts_unchecked(stack.dims().to_vec(), acc)
}

/// Extrema used for min-max normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueRange {
    pub min: f64,
    pub max: f64,
}

impl ValueRange {
    pub fn of(field: &NonNegField) -> Option<Self> {
        let v = field.values();
        if v.is_empty() {
            return None;
        }
        let (min, max) = v
            .par_iter()
            .with_min_len(PAR_MIN_LEN)
            .fold(
                || (f64::INFINITY, f64::NEG_INFINITY),
                |(lo, hi), &x| (lo.min(x), hi.max(x)),
            )
            .reduce(
                || (f64::INFINITY, f64::NEG_INFINITY),
                |(a, b), (c, d)| (a.min(c), b.max(d)),
            );
        Some(Self { min, max })
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            min: self.min.min(other.min),
            max: self.max.max(other.max),
        }
    }

    /// Min-max maps into `[0, 1]`; a zero-width range maps everything to 0.
    pub fn normalize(&self, field: &NonNegField) -> UncertaintyMap {
        let lo = self.min;
        let width = self.max - self.min;
        let values: Vec<f64> = field
            .values()
            .par_iter()
            .with_min_len(PAR_MIN_LEN)
            .map(|&x| {
                if width > 0.0 {
                    ((x - lo) / width).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect();
        UncertaintyMap::from_parts_unchecked(field.dims().to_vec(), values)
    }
}

/// Range over every voxel of every field.
pub fn global_range(fields: &[NonNegField]) -> Result<ValueRange> {
    fields
        .iter()
        .filter_map(ValueRange::of)
        .reduce(ValueRange::merge)
        .ok_or(Error::Empty("variance fields"))
}

/// Normalizes variances with extrema taken over the whole dataset.
pub fn normalize_variance_global(variances: &[NonNegField]) -> Result<Vec<UncertaintyMap>> {
    let range = global_range(variances)?;
    Ok(variances.iter().map(|v| range.normalize(v)).collect())
}

/// Per-subject min-max normalization.
pub fn normalize_subjectwise(raw: &NonNegField) -> UncertaintyMap {
    match ValueRange::of(raw) {
        Some(r) => r.normalize(raw),
        None => UncertaintyMap::from_parts_unchecked(raw.dims().to_vec(), Vec::new()),
    }
}

/// Foreground confidence implied by a predicted label and its uncertainty:
/// `y (1 - q/2) + (1 - y) q/2`.
#[inline]
pub fn uncertainty_to_confidence(label: u8, q: f64) -> f64 {
    let half = 0.5 * q;
    if label == 1 {
        1.0 - half
    } else {
        half
    }
}

pub fn translate_to_confidence(labels: &LabelMap, q: &UncertaintyMap) -> Result<ProbMap> {
    same_dims(labels.dims(), q.dims())?;
    let values: Vec<f64> = labels
        .values()
        .par_iter()
        .with_min_len(PAR_MIN_LEN)
        .zip(q.values().par_iter())
        .map(|(&y, &u)| uncertainty_to_confidence(y, u))
        .collect();
    Ok(ProbMap::from_parts_unchecked(labels.dims().to_vec(), values))
}

/// Where the calibration confidence of a method comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfidenceSource {
    /// The fused foreground probability.
    Probability,
    /// Translated from prediction and normalized uncertainty.
    Translated,
}

/// Everything the metrics need from one method on one subject.
#[derive(Debug, Clone)]
pub struct MethodOutputs {
    pub kind: MethodKind,
    pub prediction: LabelMap,
    /// Fused foreground probability, when the method produces one.
    pub probability: Option<ProbMap>,
    pub uncertainty: UncertaintyMap,
    /// Foreground confidence used for reliability binning.
    pub confidence: ProbMap,
    pub confidence_source: ConfidenceSource,
}

/// Dataset-level statistics some methods need before per-subject derivation.
#[derive(Debug, Clone, Default)]
pub struct DerivationContext {
    variance_ranges: HashMap<String, ValueRange>,
}

impl DerivationContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_variance_range(&mut self, method: impl Into<String>, range: ValueRange) {
        self.variance_ranges.insert(method.into(), range);
    }

    pub fn variance_range(&self, method: &str) -> Option<ValueRange> {
        self.variance_ranges.get(method).copied()
    }

    /// Reads every subject's variance for `method` and records the global range.
    /// Subjects lacking the method are skipped.
    pub fn prepare_aleatoric(&mut self, manifest: &DatasetManifest, method: &str) -> Result<ValueRange> {
        let ranges: Vec<Option<ValueRange>> = manifest
            .subjects
            .par_iter()
            .filter_map(|s| match s.methods.get(method) {
                Some(MethodInput::Aleatoric { variance, .. }) => Some(variance),
                _ => None,
            })
            .map(|path| Ok(ValueRange::of(&NonNegField::from_tensor(&read_tensor(path)?)?)))
            .collect::<Result<_>>()?;
        let range = ranges
            .into_iter()
            .flatten()
            .reduce(ValueRange::merge)
            .ok_or(Error::Empty("variance fields"))?;
        self.set_variance_range(method, range);
        Ok(range)
    }
}

pub fn load_prob(path: &std::path::Path) -> Result<ProbMap> {
    ProbMap::from_tensor(&read_tensor(path)?)
}

pub fn load_labels(path: &std::path::Path) -> Result<LabelMap> {
    LabelMap::from_tensor(&read_tensor(path)?)
}

fn load_stack(path: &std::path::Path) -> Result<SampleStack> {
    SampleStack::from_tensor(read_tensor(path)?)
}

fn from_probability(kind: MethodKind, prob: ProbMap) -> MethodOutputs {
    let uncertainty = normalized_entropy(&prob);
    MethodOutputs {
        kind,
        prediction: prob.predict(),
        confidence: prob.clone(),
        probability: Some(prob),
        uncertainty,
        confidence_source: ConfidenceSource::Probability,
    }
}

/// Loads a method's inputs for one subject and derives prediction, uncertainty
/// and calibration confidence.
pub fn derive_method_outputs(
    subject: &SubjectEntry,
    method: &str,
    ctx: &DerivationContext,
) -> Result<MethodOutputs> {
    let input = subject.methods.get(method).ok_or_else(|| Error::UnknownMethod {
        subject: subject.subject_id.clone(),
        method: method.to_string(),
    })?;
    let kind = input.kind();
    Ok(match input {
        MethodInput::SingleProb { prob } => from_probability(kind, load_prob(prob)?),
        MethodInput::SampleStack { stack } | MethodInput::EnsembleStack { stack } => {
            let stack = load_stack(stack)?;
            let mean = mean_probability(&stack);
            drop(stack);
            from_probability(kind, mean)
        }
        MethodInput::Aleatoric { prob, variance } => {
            let range = ctx
                .variance_range(method)
                .ok_or_else(|| Error::MissingGlobalRange(method.to_string()))?;
            let prob = load_prob(prob)?;
            let variance = NonNegField::from_tensor(&read_tensor(variance)?)?;
            same_dims(prob.dims(), variance.dims())?;
            let uncertainty = range.normalize(&variance);
            let prediction = prob.predict();
            let confidence = translate_to_confidence(&prediction, &uncertainty)?;
            MethodOutputs {
                kind,
                prediction,
                probability: Some(prob),
                uncertainty,
                confidence,
                confidence_source: ConfidenceSource::Translated,
            }
        }
        MethodInput::Auxiliary { labels, uncertainty } => {
            let prediction = load_labels(labels)?;
            let raw = NonNegField::from_tensor(&read_tensor(uncertainty)?)?;
            same_dims(prediction.dims(), raw.dims())?;
            let uncertainty = normalize_subjectwise(&raw);
            let confidence = translate_to_confidence(&prediction, &uncertainty)?;
            MethodOutputs {
                kind,
                prediction,
                probability: None,
                uncertainty,
                confidence,
                confidence_source: ConfidenceSource::Translated,
            }
        }
    })
}
