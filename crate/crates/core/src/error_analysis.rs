//! Confusion partitions, Dice, uncertainty-error overlap and the correction
//! benefit conditions.
//!
//! Uncertain counts (TPU, TNU, FPU, FNU) are numbers of voxels whose
//! uncertainty is at least `tau` inside each confusion region. With that
//! reading the benefit inequalities are exactly "Dice strictly improves after
//! removing (adding) every uncertain predicted positive (negative)".

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::ExactSum;
use crate::maps::{same_dims, LabelMap, UncertaintyMap};

const COUNT_CHUNK: usize = 1 << 16;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub true_neg: u64,
    pub false_pos: u64,
    pub false_neg: u64,
}

impl ConfusionCounts {
    pub fn new(true_pos: u64, true_neg: u64, false_pos: u64, false_neg: u64) -> Self {
        Self {
            true_pos,
            true_neg,
            false_pos,
            false_neg,
        }
    }

    pub fn total(&self) -> u64 {
        self.true_pos + self.true_neg + self.false_pos + self.false_neg
    }

    pub fn errors(&self) -> u64 {
        self.false_pos + self.false_neg
    }

    /// Counts after every uncertain predicted positive is flipped to negative.
    pub fn after_fp_removal(&self, u: &UncertainConfusion) -> Self {
        Self {
            true_pos: self.true_pos - u.tpu,
            true_neg: self.true_neg + u.fpu,
            false_pos: self.false_pos - u.fpu,
            false_neg: self.false_neg + u.tpu,
        }
    }

    /// Counts after every uncertain predicted negative is flipped to positive.
    pub fn after_fn_addition(&self, u: &UncertainConfusion) -> Self {
        Self {
            true_pos: self.true_pos + u.fnu,
            true_neg: self.true_neg - u.tnu,
            false_pos: self.false_pos + u.tnu,
            false_neg: self.false_neg - u.fnu,
        }
    }
}

/// Dice value plus a flag for the empty-vs-empty convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiceScore {
    pub value: f64,
    pub degenerate: bool,
}

impl DiceScore {
    /// `2·overlap / (a + b)`; both sets empty gives 1.0 flagged as degenerate.
    pub fn from_sets(overlap: u64, a: u64, b: u64) -> Self {
        let den = a + b;
        if den == 0 {
            DiceScore {
                value: 1.0,
                degenerate: true,
            }
        } else {
            DiceScore {
                value: (2 * overlap) as f64 / den as f64,
                degenerate: false,
            }
        }
    }
}

pub fn dice(c: &ConfusionCounts) -> DiceScore {
    DiceScore::from_sets(c.true_pos, c.true_pos + c.false_pos, c.true_pos + c.false_neg)
}

/// Exact comparison `dice(after) > dice(before)` for non-degenerate counts.
pub fn dice_strictly_improves(before: &ConfusionCounts, after: &ConfusionCounts) -> bool {
    let num = |c: &ConfusionCounts| 2 * c.true_pos as u128;
    let den = |c: &ConfusionCounts| (2 * c.true_pos + c.false_pos + c.false_neg) as u128;
    match (den(before), den(after)) {
        (0, 0) => false,
        (0, _) => false,
        (_, 0) => true,
        (db, da) => num(after) * db > num(before) * da,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UncertainConfusion {
    pub tau: f64,
    pub tpu: u64,
    pub tnu: u64,
    pub fpu: u64,
    pub fnu: u64,
}

impl UncertainConfusion {
    pub fn uncertain(&self) -> u64 {
        self.tpu + self.tnu + self.fpu + self.fnu
    }

    /// Dice between `q >= tau` and the error map, from counts alone.
    pub fn overlap_with_errors(&self, c: &ConfusionCounts) -> DiceScore {
        DiceScore::from_sets(self.fpu + self.fnu, self.uncertain(), c.errors())
    }
}

#[inline]
fn category(pred: u8, gt: u8) -> usize {
    // 0 = TN, 1 = FN, 2 = FP, 3 = TP
    ((pred as usize) << 1) | gt as usize
}

fn check_inputs(
    q: Option<&UncertaintyMap>,
    pred: &LabelMap,
    gt: &LabelMap,
    mask: Option<&LabelMap>,
) -> Result<()> {
    same_dims(pred.dims(), gt.dims())?;
    if let Some(q) = q {
        same_dims(pred.dims(), q.dims())?;
    }
    if let Some(m) = mask {
        same_dims(pred.dims(), m.dims())?;
    }
    Ok(())
}

fn mask_at(mask: Option<&LabelMap>, i: usize) -> bool {
    mask.is_none_or(|m| m.values()[i] == 1)
}

/// TP/TN/FP/FN over all (or masked) voxels.
pub fn confusion(pred: &LabelMap, gt: &LabelMap, mask: Option<&LabelMap>) -> Result<ConfusionCounts> {
    check_inputs(None, pred, gt, mask)?;
    let p = pred.values();
    let g = gt.values();
    let partials: Vec<[u64; 4]> = (0..p.len().div_ceil(COUNT_CHUNK))
        .into_par_iter()
        .map(|k| {
            let mut h = [0u64; 4];
            let end = ((k + 1) * COUNT_CHUNK).min(p.len());
            for i in k * COUNT_CHUNK..end {
                if mask_at(mask, i) {
                    h[category(p[i], g[i])] += 1;
                }
            }
            h
        })
        .collect();
    let mut h = [0u64; 4];
    for part in partials {
        for (a, b) in h.iter_mut().zip(part) {
            *a += b;
        }
    }
    Ok(ConfusionCounts::new(h[3], h[0], h[2], h[1]))
}

/// Confusion counts plus uncertain counts for every threshold of `grid`,
/// in one pass over the voxels. Output is aligned with `grid`.
pub fn threshold_profile(
    q: &UncertaintyMap,
    pred: &LabelMap,
    gt: &LabelMap,
    mask: Option<&LabelMap>,
    grid: &[f64],
) -> Result<(ConfusionCounts, Vec<UncertainConfusion>)> {
    check_inputs(Some(q), pred, gt, mask)?;
    let mut sorted: Vec<f64> = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let g = sorted.len();
    let (qv, p, t) = (q.values(), pred.values(), gt.values());

    // hist[j][cat] = voxels of category cat with exactly j sorted thresholds <= q
    let partials: Vec<Vec<[u64; 4]>> = (0..p.len().div_ceil(COUNT_CHUNK))
        .into_par_iter()
        .map(|k| {
            let mut hist = vec![[0u64; 4]; g + 1];
            let end = ((k + 1) * COUNT_CHUNK).min(p.len());
            for i in k * COUNT_CHUNK..end {
                if mask_at(mask, i) {
                    let j = sorted.partition_point(|&tau| tau <= qv[i]);
                    hist[j][category(p[i], t[i])] += 1;
                }
            }
            hist
        })
        .collect();
    let mut hist = vec![[0u64; 4]; g + 1];
    for part in partials {
        for (a, b) in hist.iter_mut().zip(part) {
            for c in 0..4 {
                a[c] += b[c];
            }
        }
    }

    let mut totals = [0u64; 4];
    for h in &hist {
        for c in 0..4 {
            totals[c] += h[c];
        }
    }
    // at_least[j] = voxels with q >= sorted[j]
    let mut at_least = vec![[0u64; 4]; g];
    let mut running = [0u64; 4];
    for j in (0..g).rev() {
        for c in 0..4 {
            running[c] += hist[j + 1][c];
        }
        at_least[j] = running;
    }
    let counts = ConfusionCounts::new(totals[3], totals[0], totals[2], totals[1]);
    let per_tau = grid
        .iter()
        .map(|&tau| {
            let j = sorted.partition_point(|&s| s < tau);
            let a = at_least[j];
            UncertainConfusion {
                tau,
                tpu: a[3],
                tnu: a[0],
                fpu: a[2],
                fnu: a[1],
            }
        })
        .collect();
    Ok((counts, per_tau))
}

pub fn uncertain_confusion(
    q: &UncertaintyMap,
    tau: f64,
    pred: &LabelMap,
    gt: &LabelMap,
    mask: Option<&LabelMap>,
) -> Result<UncertainConfusion> {
    let (_, mut per_tau) = threshold_profile(q, pred, gt, mask, &[tau])?;
    Ok(per_tau.remove(0))
}

/// Dice between the thresholded uncertainty `q >= tau` and the error map `pred != gt`.
pub fn uncertainty_error_overlap(
    q: &UncertaintyMap,
    tau: f64,
    pred: &LabelMap,
    gt: &LabelMap,
    mask: Option<&LabelMap>,
) -> Result<DiceScore> {
    let (c, per_tau) = threshold_profile(q, pred, gt, mask, &[tau])?;
    Ok(per_tau[0].overlap_with_errors(&c))
}

/// `FPU · TP > TPU · (TP + FP + FN)`, in exact integer arithmetic.
pub fn fp_removal_benefit(c: &ConfusionCounts, u: &UncertainConfusion) -> bool {
    let lhs = u.fpu as u128 * c.true_pos as u128;
    let rhs = u.tpu as u128 * (c.true_pos + c.false_pos + c.false_neg) as u128;
    lhs > rhs
}

/// Accuracy-only variant of the removal condition: `FPU > TPU`.
pub fn fp_removal_accuracy_benefit(_c: &ConfusionCounts, u: &UncertainConfusion) -> bool {
    u.fpu > u.tpu
}

/// `FNU · (TP + FP + FN) > TNU · TP`. Rarely satisfiable with large backgrounds.
pub fn fn_addition_benefit(c: &ConfusionCounts, u: &UncertainConfusion) -> bool {
    let lhs = u.fnu as u128 * (c.true_pos + c.false_pos + c.false_neg) as u128;
    let rhs = u.tnu as u128 * c.true_pos as u128;
    lhs > rhs
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectionOutcome {
    pub dice_before: DiceScore,
    pub dice_after: DiceScore,
    /// Verdict of the benefit inequality, computed before correcting.
    pub benefit_predicted: bool,
    /// Exact `dice_after > dice_before`.
    pub improved: bool,
    pub voxels_removed: u64,
    pub voxels_added: u64,
}

/// Flips every predicted-positive voxel with `q >= tau` to negative.
pub fn apply_fp_removal(
    pred: &LabelMap,
    q: &UncertaintyMap,
    tau: f64,
    gt: &LabelMap,
    mask: Option<&LabelMap>,
) -> Result<(LabelMap, CorrectionOutcome)> {
    check_inputs(Some(q), pred, gt, mask)?;
    let (before, per_tau) = threshold_profile(q, pred, gt, mask, &[tau])?;
    let u = per_tau[0];
    let mut removed = 0u64;
    let values: Vec<u8> = pred
        .values()
        .iter()
        .zip(q.values())
        .map(|(&p, &qq)| {
            if p == 1 && qq >= tau {
                removed += 1;
                0
            } else {
                p
            }
        })
        .collect();
    let corrected = LabelMap::new(pred.dims().to_vec(), values)?;
    let after = confusion(&corrected, gt, mask)?;
    Ok((
        corrected,
        CorrectionOutcome {
            dice_before: dice(&before),
            dice_after: dice(&after),
            benefit_predicted: fp_removal_benefit(&before, &u),
            improved: dice_strictly_improves(&before, &after),
            voxels_removed: removed,
            voxels_added: 0,
        },
    ))
}

/// Flips every predicted-negative voxel with `q >= tau` to positive.
pub fn apply_fn_addition(
    pred: &LabelMap,
    q: &UncertaintyMap,
    tau: f64,
    gt: &LabelMap,
    mask: Option<&LabelMap>,
) -> Result<(LabelMap, CorrectionOutcome)> {
    check_inputs(Some(q), pred, gt, mask)?;
    let (before, per_tau) = threshold_profile(q, pred, gt, mask, &[tau])?;
    let u = per_tau[0];
    let mut added = 0u64;
    let values: Vec<u8> = pred
        .values()
        .iter()
        .zip(q.values())
        .map(|(&p, &qq)| {
            if p == 0 && qq >= tau {
                added += 1;
                1
            } else {
                p
            }
        })
        .collect();
    let corrected = LabelMap::new(pred.dims().to_vec(), values)?;
    let after = confusion(&corrected, gt, mask)?;
    Ok((
        corrected,
        CorrectionOutcome {
            dice_before: dice(&before),
            dice_after: dice(&after),
            benefit_predicted: fn_addition_benefit(&before, &u),
            improved: dice_strictly_improves(&before, &after),
            voxels_removed: 0,
            voxels_added: added,
        },
    ))
}

/// Proportion of subjects meeting the false-positive removal condition.
pub fn bnf(benefits: &[bool]) -> Result<f64> {
    if benefits.is_empty() {
        return Err(Error::Empty("subject list"));
    }
    Ok(benefits.iter().filter(|&&b| b).count() as f64 / benefits.len() as f64)
}

/// Default threshold grid: 0.05, 0.10, ..., 0.95.
pub fn default_tau_grid() -> Vec<f64> {
    tau_grid(0.05, 0.95, 0.05).expect("default grid is valid")
}

/// Inclusive arithmetic grid `start, start + step, ..., end`, with each value
/// rounded to 12 decimals so `0.05:0.95:0.05` yields `0.15` rather than
/// `0.15000000000000002`.
pub fn tau_grid(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    if step.is_nan() || step <= 0.0 || !start.is_finite() || !end.is_finite() || end < start {
        return Err(Error::InvalidConfig(format!("bad threshold grid {start}:{end}:{step}")));
    }
    let n = ((end - start) / step + 1e-9).floor() as usize + 1;
    let grid: Vec<f64> = (0..n)
        .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
        .collect();
    validate_grid(&grid)?;
    Ok(grid)
}

pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("threshold grid is empty".into()));
    }
    if let Some(t) = grid.iter().find(|&&t| !(t > 0.0 && t <= 1.0)) {
        return Err(Error::InvalidConfig(format!("threshold {t} outside (0, 1]")));
    }
    Ok(())
}

/// Per-subject inputs to a threshold sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectThresholdStats {
    pub confusion: ConfusionCounts,
    /// Aligned with the sweep grid.
    pub per_tau: Vec<UncertainConfusion>,
}

impl SubjectThresholdStats {
    /// Subjects with no foreground in either prediction or ground truth.
    pub fn is_degenerate(&self) -> bool {
        dice(&self.confusion).degenerate
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    /// Mean U-E over subjects with a defined overlap at this threshold.
    pub mean_ue: Option<f64>,
    pub n_ue: usize,
    pub bnf: Option<f64>,
    pub n_bnf: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub best_ue: Option<usize>,
    pub best_bnf: Option<usize>,
}

impl SweepTable {
    pub fn best_ue_row(&self) -> Option<&SweepRow> {
        self.best_ue.map(|i| &self.rows[i])
    }

    pub fn best_bnf_row(&self) -> Option<&SweepRow> {
        self.best_bnf.map(|i| &self.rows[i])
    }
}

/// Argmax over rows, ties broken toward the smaller threshold.
fn best_index(rows: &[SweepRow], value: impl Fn(&SweepRow) -> Option<f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in rows.iter().enumerate() {
        if let Some(v) = value(r) {
            best = match best {
                Some((j, bv)) if bv > v || (bv == v && rows[j].tau <= r.tau) => Some((j, bv)),
                _ => Some((i, v)),
            };
        }
    }
    best.map(|(i, _)| i)
}

/// Mean U-E and BnF per threshold, with the best threshold for each metric.
/// Degenerate subjects are left out entirely; at each threshold, subjects
/// whose overlap is degenerate (no errors and nothing uncertain) are left
/// out of the U-E mean.
pub fn sweep_thresholds(subjects: &[SubjectThresholdStats], grid: &[f64]) -> Result<SweepTable> {
    validate_grid(grid)?;
    for s in subjects {
        if s.per_tau.len() != grid.len() {
            return Err(Error::InvalidConfig(format!(
                "subject profile has {} thresholds, grid has {}",
                s.per_tau.len(),
                grid.len()
            )));
        }
    }
    let usable: Vec<&SubjectThresholdStats> = subjects.iter().filter(|s| !s.is_degenerate()).collect();
    let rows: Vec<SweepRow> = grid
        .iter()
        .enumerate()
        .map(|(j, &tau)| {
            let mut ue = ExactSum::new();
            let mut n_ue = 0usize;
            let mut benefits = Vec::with_capacity(usable.len());
            for s in &usable {
                let u = &s.per_tau[j];
                let d = u.overlap_with_errors(&s.confusion);
                if !d.degenerate {
                    ue.add_f64(d.value);
                    n_ue += 1;
                }
                benefits.push(fp_removal_benefit(&s.confusion, u));
            }
            SweepRow {
                tau,
                mean_ue: (n_ue > 0).then(|| ue.to_f64() / n_ue as f64),
                n_ue,
                bnf: bnf(&benefits).ok(),
                n_bnf: benefits.len(),
            }
        })
        .collect();
    Ok(SweepTable {
        best_ue: best_index(&rows, |r| r.mean_ue),
        best_bnf: best_index(&rows, |r| r.bnf),
        rows,
    })
}
