//! Per-subject and dataset-level evaluation of every method in a manifest.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{
    bin_predictions, merge_bins, CalibrationClass, CalibrationReport, DiagramRow, Level, ReliabilityBins, DEFAULT_BINS, DEFAULT_EPSILON,
};
use crate::error::{Error, Result};
use crate::error_analysis::{
    confusion, default_tau_grid, dice, fp_removal_benefit, sweep_thresholds, threshold_profile, validate_grid,
    ConfusionCounts, DiceScore, SubjectThresholdStats, SweepTable,
};
use crate::exact::exact_mean;
use crate::manifest::{load_manifest, DatasetManifest, ManifestOptions, MethodInput, MethodKind, SubjectEntry};
use crate::maps::{same_dims, LabelMap, NonNegField};
use crate::measures::{derive_method_outputs, load_labels, DerivationContext, ValueRange};
use crate::report::rank::{rank_methods, MethodMeans, RankTable};
use crate::tensor::read_tensor;

fn default_bins() -> usize {
    DEFAULT_BINS
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    #[serde(default = "default_bins")]
    pub n_bins: usize,
    pub tau_grid: Vec<f64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Restrict every metric to `mask == 1` for subjects that provide a mask.
    pub use_mask: bool,
    /// Thread count; 0 uses all available cores. Never affects results.
    pub workers: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            n_bins: DEFAULT_BINS,
            tau_grid: default_tau_grid(),
            epsilon: DEFAULT_EPSILON,
            use_mask: false,
            workers: 0,
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<()> {
        if self.n_bins == 0 {
            return Err(Error::InvalidConfig("bin count must be positive".into()));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!("epsilon {} must be finite and >= 0", self.epsilon)));
        }
        validate_grid(&self.tau_grid)
    }
}

/// Metrics for one (method, subject) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectMetrics {
    pub calibration: CalibrationReport,
    pub class: CalibrationClass,
    pub confusion: ConfusionCounts,
    pub dice: DiceScore,
    pub thresholds: SubjectThresholdStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectResult {
    pub subject_id: String,
    /// Error message when the subject was skipped.
    pub outcome: std::result::Result<SubjectMetrics, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodResult {
    pub name: String,
    pub kind: MethodKind,
    pub subjects: Vec<SubjectResult>,
    /// Calibration over all voxels of all evaluated subjects.
    pub pooled: Option<CalibrationReport>,
    pub pooled_class: Option<CalibrationClass>,
    pub mean_ece: Option<f64>,
    /// Mean over subjects with a non-degenerate Dice.
    pub mean_dice: Option<f64>,
    pub pooled_dice: Option<DiceScore>,
    pub sweep: SweepTable,
}

impl MethodResult {
    pub fn ok_subjects(&self) -> impl Iterator<Item = (&str, &SubjectMetrics)> {
        self.subjects
            .iter()
            .filter_map(|s| s.outcome.as_ref().ok().map(|m| (s.subject_id.as_str(), m)))
    }

    pub fn n_failed(&self) -> usize {
        self.subjects.iter().filter(|s| s.outcome.is_err()).count()
    }

    pub fn class_counts(&self) -> BTreeMap<CalibrationClass, usize> {
        let mut out = BTreeMap::new();
        for c in [
            CalibrationClass::Underconfident,
            CalibrationClass::WellCalibrated,
            CalibrationClass::Overconfident,
        ] {
            out.insert(c, 0);
        }
        for (_, m) in self.ok_subjects() {
            *out.entry(m.class).or_default() += 1;
        }
        out
    }

    pub fn means(&self) -> MethodMeans {
        MethodMeans {
            method: self.name.clone(),
            ece: self.mean_ece,
            u_e: self.sweep.best_ue_row().and_then(|r| r.mean_ue),
            bnf: self.sweep.best_bnf_row().and_then(|r| r.bnf),
            dice: self.mean_dice,
        }
    }

    /// Subject U-E at the method's best overlap threshold; `None` when undefined.
    pub fn subject_ue(&self, m: &SubjectMetrics) -> Option<f64> {
        let i = self.sweep.best_ue?;
        let d = m.thresholds.per_tau[i].overlap_with_errors(&m.confusion);
        (!d.degenerate).then_some(d.value)
    }

    /// Whether the subject meets the removal condition at the best BnF threshold.
    pub fn subject_benefit(&self, m: &SubjectMetrics) -> Option<bool> {
        let i = self.sweep.best_bnf?;
        if m.thresholds.is_degenerate() {
            return None;
        }
        Some(fp_removal_benefit(&m.confusion, &m.thresholds.per_tau[i]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub dataset_name: String,
    pub options: EvalOptions,
    /// Sorted by method name.
    pub methods: Vec<MethodResult>,
    pub ranks: RankTable,
}

impl Evaluation {
    pub fn n_failed(&self) -> usize {
        self.methods.iter().map(MethodResult::n_failed).sum()
    }

    pub fn method(&self, name: &str) -> Option<&MethodResult> {
        self.methods.iter().find(|m| m.name == name)
    }
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if workers > 0 {
        b = b.num_threads(workers);
    }
    let pool = b
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Loads the manifest at `path` and evaluates every method on every subject.
pub fn evaluate(path: impl AsRef<Path>, options: &EvalOptions) -> Result<Evaluation> {
    let manifest = load_manifest(path, ManifestOptions { eager: false })?;
    evaluate_manifest(&manifest, options)
}

/// Global variance range per aleatoric method, skipping unreadable subjects.
fn prepare_context(manifest: &DatasetManifest) -> DerivationContext {
    let mut ctx = DerivationContext::new();
    for (name, kind) in manifest.methods() {
        if kind != MethodKind::Aleatoric {
            continue;
        }
        let ranges: Vec<Option<ValueRange>> = manifest
            .subjects
            .par_iter()
            .map(|s| match s.methods.get(name) {
                Some(MethodInput::Aleatoric { variance, .. }) => read_tensor(variance)
                    .and_then(|t| NonNegField::from_tensor(&t))
                    .ok()
                    .and_then(|f| ValueRange::of(&f)),
                _ => None,
            })
            .collect();
        if let Some(r) = ranges.into_iter().flatten().reduce(ValueRange::merge) {
            ctx.set_variance_range(name, r);
        }
    }
    ctx
}

fn load_subject_maps(
    s: &SubjectEntry,
    use_mask: bool,
) -> Result<(LabelMap, Option<LabelMap>)> {
    let gt = load_labels(&s.ground_truth)?;
    let mask = match (&s.mask, use_mask) {
        (Some(p), true) => {
            let m = load_labels(p)?;
            same_dims(gt.dims(), m.dims())?;
            Some(m)
        }
        _ => None,
    };
    Ok((gt, mask))
}

fn evaluate_one(
    manifest: &DatasetManifest,
    s: &SubjectEntry,
    method: &str,
    gt: &LabelMap,
    mask: Option<&LabelMap>,
    ctx: &DerivationContext,
    options: &EvalOptions,
) -> Result<SubjectMetrics> {
    let only = SubjectEntry {
        methods: s.methods.iter().filter(|(k, _)| *k == method).map(|(k, v)| (k.clone(), v.clone())).collect(),
        ..s.clone()
    };
    manifest.validate_subject(&only)?;
    let out = derive_method_outputs(s, method, ctx)?;
    same_dims(out.prediction.dims(), gt.dims())?;
    let bins = bin_predictions(&out.confidence, gt, options.n_bins, mask)?;
    let calibration = CalibrationReport::from_bins(bins, Level::Subject, Some(s.subject_id.clone()), mask.is_some())?;
    let class = CalibrationClass::from_gap(calibration.signed_gap, options.epsilon);
    let (counts, per_tau) = threshold_profile(&out.uncertainty, &out.prediction, gt, mask, &options.tau_grid)?;
    debug_assert_eq!(counts, confusion(&out.prediction, gt, mask)?);
    Ok(SubjectMetrics {
        calibration,
        class,
        confusion: counts,
        dice: dice(&counts),
        thresholds: SubjectThresholdStats {
            confusion: counts,
            per_tau,
        },
    })
}

/// Evaluates an already loaded manifest. Per-subject failures are recorded in
/// the result rather than aborting the run.
pub fn evaluate_manifest(manifest: &DatasetManifest, options: &EvalOptions) -> Result<Evaluation> {
    options.validate()?;
    let methods = manifest.methods();
    if methods.is_empty() {
        return Err(Error::Empty("method set"));
    }
    with_pool(options.workers, || {
        let ctx = prepare_context(manifest);
        // outer index: subject, inner: method in sorted order
        let per_subject: Vec<Vec<(String, std::result::Result<SubjectMetrics, String>)>> = manifest
            .subjects
            .par_iter()
            .map(|s| {
                let maps = load_subject_maps(s, options.use_mask).map_err(|e| e.to_string());
                methods
                    .keys()
                    .filter(|m| s.methods.contains_key(**m))
                    .map(|&m| {
                        let r = maps.as_ref().map_err(Clone::clone).and_then(|(gt, mask)| {
                            evaluate_one(manifest, s, m, gt, mask.as_ref(), &ctx, options).map_err(|e| e.to_string())
                        });
                        (m.to_string(), r)
                    })
                    .collect()
            })
            .collect();

        let mut results = Vec::with_capacity(methods.len());
        for (&name, &kind) in &methods {
            let subjects: Vec<SubjectResult> = manifest
                .subjects
                .iter()
                .zip(&per_subject)
                .filter_map(|(s, rows)| {
                    rows.iter().find(|(m, _)| m == name).map(|(_, r)| SubjectResult {
                        subject_id: s.subject_id.clone(),
                        outcome: r.clone(),
                    })
                })
                .collect();
            results.push(aggregate(name, kind, subjects, options)?);
        }
        let means: Vec<MethodMeans> = results.iter().map(MethodResult::means).collect();
        Ok(Evaluation {
            dataset_name: manifest.dataset_name.clone(),
            options: options.clone(),
            ranks: rank_methods(&means),
            methods: results,
        })
    })?
}

/// Reliability-diagram rows for one method, for a single subject or pooled
/// over all subjects.
pub fn reliability_diagram(
    manifest: &DatasetManifest,
    method: &str,
    subject: Option<&str>,
    options: &EvalOptions,
) -> Result<Vec<DiagramRow>> {
    options.validate()?;
    if !manifest.methods().contains_key(method) {
        return Err(Error::UnknownMethod {
            subject: subject.unwrap_or(crate::report::emit::ALL).to_string(),
            method: method.to_string(),
        });
    }
    let chosen: Vec<&SubjectEntry> = match subject {
        Some(id) => vec![manifest
            .subject(id)
            .ok_or_else(|| Error::Manifest(format!("no subject {id:?}")))?],
        None => manifest.subjects.iter().filter(|s| s.methods.contains_key(method)).collect(),
    };
    with_pool(options.workers, || {
        let ctx = prepare_context(manifest);
        let parts: Vec<ReliabilityBins> = chosen
            .iter()
            .map(|s| {
                manifest.validate_subject(s)?;
                let (gt, mask) = load_subject_maps(s, options.use_mask)?;
                let out = derive_method_outputs(s, method, &ctx)?;
                bin_predictions(&out.confidence, &gt, options.n_bins, mask.as_ref())
            })
            .collect::<Result<_>>()?;
        Ok(merge_bins(&parts)?.map(|b| b.diagram()).unwrap_or_default())
    })?
}

fn aggregate(name: &str, kind: MethodKind, subjects: Vec<SubjectResult>, options: &EvalOptions) -> Result<MethodResult> {
    let ok: Vec<&SubjectMetrics> = subjects.iter().filter_map(|s| s.outcome.as_ref().ok()).collect();
    let bins: Vec<_> = ok.iter().map(|m| m.calibration.bins.clone()).collect();
    let pooled = match merge_bins(&bins)? {
        Some(b) if b.total() > 0 => Some(CalibrationReport::from_bins(
            b,
            Level::Dataset,
            None,
            ok.iter().any(|m| m.calibration.masked),
        )?),
        _ => None,
    };
    let pooled_class = pooled
        .as_ref()
        .map(|p| CalibrationClass::from_gap(p.signed_gap, options.epsilon));
    let mean_ece = exact_mean(ok.iter().map(|m| m.calibration.ece));
    let mean_dice = exact_mean(ok.iter().filter(|m| !m.dice.degenerate).map(|m| m.dice.value));
    let pooled_dice = (!ok.is_empty()).then(|| {
        let mut c = ConfusionCounts::default();
        for m in &ok {
            c.true_pos += m.confusion.true_pos;
            c.true_neg += m.confusion.true_neg;
            c.false_pos += m.confusion.false_pos;
            c.false_neg += m.confusion.false_neg;
        }
        dice(&c)
    });
    let stats: Vec<SubjectThresholdStats> = ok.iter().map(|m| m.thresholds.clone()).collect();
    let sweep = sweep_thresholds(&stats, &options.tau_grid)?;
    Ok(MethodResult {
        name: name.to_string(),
        kind,
        subjects,
        pooled,
        pooled_class,
        mean_ece,
        mean_dice,
        pooled_dice,
        sweep,
    })
}
