//! Reliability binning, expected calibration error and subject-level
//! miscalibration classes.
//!
//! Bins keep exact sufficient statistics (see [`ExactSum`]), so bins computed
//! per subject and merged are identical to bins computed over the concatenated
//! voxels, whatever the partitioning.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::ExactSum;
use crate::maps::{same_dims, LabelMap, ProbMap};

pub const DEFAULT_BINS: usize = 10;
pub const DEFAULT_EPSILON: f64 = 0.02;

// Voxels per partial histogram; partials are merged exactly.
const BIN_CHUNK: usize = 1 << 16;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BinStats {
    pub count: u64,
    pub sum_confidence: ExactSum,
    pub positives: u64,
}

impl BinStats {
    pub fn mean_confidence(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum_confidence.to_f64() / self.count as f64)
    }

    /// Fraction of ground-truth positives.
    pub fn accuracy(&self) -> Option<f64> {
        (self.count > 0).then(|| self.positives as f64 / self.count as f64)
    }
}

/// Equal-width reliability bins over `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReliabilityBins {
    bins: Vec<BinStats>,
}

impl ReliabilityBins {
    pub fn new(n_bins: usize) -> Result<Self> {
        if n_bins == 0 {
            return Err(Error::InvalidConfig("bin count must be positive".into()));
        }
        Ok(Self {
            bins: vec![BinStats::default(); n_bins],
        })
    }

    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn bins(&self) -> &[BinStats] {
        &self.bins
    }

    pub fn total(&self) -> u64 {
        self.bins.iter().map(|b| b.count).sum()
    }

    pub fn occupied(&self) -> usize {
        self.bins.iter().filter(|b| b.count > 0).count()
    }

    /// `⌊c · n⌋`, with `c = 1` folded into the last bin.
    #[inline]
    pub fn index_of(&self, confidence: f64) -> usize {
        let n = self.bins.len();
        ((confidence * n as f64) as usize).min(n - 1)
    }

    pub fn edges(&self, bin: usize) -> (f64, f64) {
        let n = self.bins.len() as f64;
        (bin as f64 / n, (bin + 1) as f64 / n)
    }

    #[inline]
    pub fn push(&mut self, confidence: f64, label: u8) {
        let i = self.index_of(confidence);
        let b = &mut self.bins[i];
        b.count += 1;
        b.sum_confidence.add_f64(confidence);
        b.positives += label as u64;
    }

    pub fn merge_from(&mut self, other: &ReliabilityBins) -> Result<()> {
        if other.n_bins() != self.n_bins() {
            return Err(Error::BinMismatch(self.n_bins(), other.n_bins()));
        }
        for (a, b) in self.bins.iter_mut().zip(&other.bins) {
            a.count += b.count;
            a.sum_confidence.add(&b.sum_confidence);
            a.positives += b.positives;
        }
        Ok(())
    }

    fn sums(&self) -> (ExactSum, ExactSum) {
        let mut conf = ExactSum::new();
        let mut pos = ExactSum::new();
        for b in &self.bins {
            conf.add(&b.sum_confidence);
            pos.add_u64(b.positives);
        }
        (conf, pos)
    }

    /// Count-weighted mean of `confidence - accuracy`.
    pub fn signed_gap(&self) -> Result<f64> {
        let n = self.total();
        if n == 0 {
            return Err(Error::EmptyBins);
        }
        let (conf, pos) = self.sums();
        Ok(conf.signed_diff_f64(&pos) / n as f64)
    }

    pub fn diagram(&self) -> Vec<DiagramRow> {
        self.bins
            .iter()
            .enumerate()
            .filter(|(_, b)| b.count > 0)
            .map(|(i, b)| {
                let (lower, upper) = self.edges(i);
                DiagramRow {
                    bin_lower: lower,
                    bin_upper: upper,
                    count: b.count,
                    mean_confidence: b.mean_confidence().unwrap_or(0.0),
                    accuracy: b.accuracy().unwrap_or(0.0),
                }
            })
            .collect()
    }
}

/// Bins voxel confidences (foreground probabilities) against ground truth,
/// optionally restricted to `mask == 1`.
pub fn bin_predictions(
    confidences: &ProbMap,
    labels: &LabelMap,
    n_bins: usize,
    mask: Option<&LabelMap>,
) -> Result<ReliabilityBins> {
    same_dims(confidences.dims(), labels.dims())?;
    if let Some(m) = mask {
        same_dims(confidences.dims(), m.dims())?;
    }
    let empty = ReliabilityBins::new(n_bins)?;
    let c = confidences.values();
    let l = labels.values();
    let partials: Vec<ReliabilityBins> = c
        .par_chunks(BIN_CHUNK)
        .zip(l.par_chunks(BIN_CHUNK))
        .enumerate()
        .map(|(k, (cc, ll))| {
            let mut bins = empty.clone();
            match mask {
                None => {
                    for (&conf, &label) in cc.iter().zip(ll) {
                        bins.push(conf, label);
                    }
                }
                Some(m) => {
                    let mm = &m.values()[k * BIN_CHUNK..k * BIN_CHUNK + cc.len()];
                    for ((&conf, &label), &keep) in cc.iter().zip(ll).zip(mm) {
                        if keep == 1 {
                            bins.push(conf, label);
                        }
                    }
                }
            }
            bins
        })
        .collect();
    merge_bins(&partials).map(|b| b.unwrap_or(empty))
}

/// Element-wise sum of bin statistics. `Ok(None)` for an empty list.
pub fn merge_bins(parts: &[ReliabilityBins]) -> Result<Option<ReliabilityBins>> {
    let mut iter = parts.iter();
    let Some(first) = iter.next() else {
        return Ok(None);
    };
    let mut out = first.clone();
    for p in iter {
        out.merge_from(p)?;
    }
    Ok(Some(out))
}

/// `Σ_b (n_b / N) |conf_b − acc_b|` over occupied bins.
///
/// Evaluated as `Σ_b |S_b − P_b| / N` on the exact per-bin confidence sums
/// `S_b` and positive counts `P_b`, so the only rounding is the final division.
pub fn ece(bins: &ReliabilityBins) -> Result<f64> {
    let n = bins.total();
    if n == 0 {
        return Err(Error::EmptyBins);
    }
    let mut total = ExactSum::new();
    for b in bins.bins.iter().filter(|b| b.count > 0) {
        total.add(&b.sum_confidence.abs_diff(&ExactSum::from_u64(b.positives)));
    }
    Ok(total.to_f64() / n as f64)
}

/// One row of reliability-diagram data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagramRow {
    pub bin_lower: f64,
    pub bin_upper: f64,
    pub count: u64,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Dataset,
    Subject,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub ece: f64,
    pub signed_gap: f64,
    pub bins: ReliabilityBins,
    pub level: Level,
    pub subject_id: Option<String>,
    pub masked: bool,
}

impl CalibrationReport {
    pub fn from_bins(
        bins: ReliabilityBins,
        level: Level,
        subject_id: Option<String>,
        masked: bool,
    ) -> Result<Self> {
        Ok(Self {
            ece: ece(&bins)?,
            signed_gap: bins.signed_gap()?,
            bins,
            level,
            subject_id,
            masked,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationClass {
    Underconfident,
    Overconfident,
    WellCalibrated,
}

impl CalibrationClass {
    pub fn as_str(self) -> &'static str {
        match self {
            CalibrationClass::Underconfident => "underconfident",
            CalibrationClass::Overconfident => "overconfident",
            CalibrationClass::WellCalibrated => "well_calibrated",
        }
    }

    pub fn from_gap(signed_gap: f64, epsilon: f64) -> Self {
        if signed_gap > epsilon {
            CalibrationClass::Overconfident
        } else if signed_gap < -epsilon {
            CalibrationClass::Underconfident
        } else {
            CalibrationClass::WellCalibrated
        }
    }
}

impl fmt::Display for CalibrationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Overconfident when confidence exceeds accuracy by more than `epsilon`
/// on average, underconfident when it falls short by more than `epsilon`.
pub fn classify_subject_calibration(report: &CalibrationReport, epsilon: f64) -> CalibrationClass {
    CalibrationClass::from_gap(report.signed_gap, epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn maps(c: &[f64], l: &[u8]) -> (ProbMap, LabelMap) {
        (
            ProbMap::new(vec![c.len()], c.to_vec()).unwrap(),
            LabelMap::new(vec![l.len()], l.to_vec()).unwrap(),
        )
    }

    #[test]
    fn four_voxel_hand_case() {
        let (c, l) = maps(&[0.95, 0.85, 0.15, 0.05], &[1, 0, 1, 0]);
        let bins = bin_predictions(&c, &l, 10, None).unwrap();
        let counts: Vec<u64> = bins.bins().iter().map(|b| b.count).collect();
        assert_eq!(counts, vec![1, 1, 0, 0, 0, 0, 0, 0, 1, 1]);
        assert_eq!(ece(&bins).unwrap(), 0.45);
    }

    #[test]
    fn confident_and_correct_is_zero() {
        let (c, l) = maps(&[1.0, 1.0, 1.0], &[1, 1, 1]);
        let bins = bin_predictions(&c, &l, 10, None).unwrap();
        assert_eq!(bins.occupied(), 1);
        assert_eq!(bins.bins()[9].count, 3);
        assert_eq!(bins.bins()[9].accuracy(), Some(1.0));
        assert_eq!(ece(&bins).unwrap(), 0.0);
        let (c, l) = maps(&[0.0, 0.0], &[0, 0]);
        assert_eq!(ece(&bin_predictions(&c, &l, 10, None).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn errors() {
        let (c, _) = maps(&[0.5, 0.5], &[1, 1]);
        let l3 = LabelMap::new(vec![3], vec![0, 0, 0]).unwrap();
        assert!(matches!(bin_predictions(&c, &l3, 10, None), Err(Error::DimMismatch { .. })));
        let empty = ReliabilityBins::new(10).unwrap();
        assert!(matches!(ece(&empty), Err(Error::EmptyBins)));
        let mut five = ReliabilityBins::new(5).unwrap();
        assert!(matches!(five.merge_from(&empty), Err(Error::BinMismatch(5, 10))));
        assert!(ReliabilityBins::new(0).is_err());
    }

    #[test]
    fn mask_restricts_voxels() {
        let (c, l) = maps(&[0.95, 0.85, 0.15, 0.05], &[1, 0, 1, 0]);
        let m = LabelMap::new(vec![4], vec![1, 0, 0, 1]).unwrap();
        let bins = bin_predictions(&c, &l, 10, Some(&m)).unwrap();
        assert_eq!(bins.total(), 2);
        assert!((ece(&bins).unwrap() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn merge_identity() {
        let (c, l) = maps(&[0.3, 0.7], &[0, 1]);
        let x = bin_predictions(&c, &l, 10, None).unwrap();
        let mut y = x.clone();
        y.merge_from(&ReliabilityBins::new(10).unwrap()).unwrap();
        assert_eq!(x, y);
        assert_eq!(merge_bins(&[]).unwrap(), None);
    }

    #[test]
    fn classification_rule() {
        assert_eq!(CalibrationClass::from_gap(0.0, 1e-9), CalibrationClass::WellCalibrated);
        assert_eq!(CalibrationClass::from_gap(-0.05, 0.02), CalibrationClass::Underconfident);
        assert_eq!(CalibrationClass::from_gap(0.05, 0.02), CalibrationClass::Overconfident);
        assert_eq!(CalibrationClass::from_gap(0.02, 0.02), CalibrationClass::WellCalibrated);
    }

    #[test]
    fn diagram_lists_occupied_bins() {
        let (c, l) = maps(&[0.95, 0.91, 0.15], &[1, 0, 1]);
        let rows = bin_predictions(&c, &l, 10, None).unwrap().diagram();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].count, 2);
        assert_eq!(rows[1].accuracy, 0.5);
        assert!((rows[1].mean_confidence - 0.93).abs() < 1e-15);
        assert_eq!((rows[0].bin_lower, rows[0].bin_upper), (0.1, 0.2));
    }

    fn arb_case() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
        (1usize..300).prop_flat_map(|n| {
            (
                prop::collection::vec(prop_oneof![0.0f64..=1.0, Just(1.0), Just(0.0), Just(0.5)], n),
                prop::collection::vec(0u8..=1, n),
            )
        })
    }

    proptest! {
        #[test]
        fn merged_parts_equal_concatenation((c, l) in arb_case(), cut in any::<prop::sample::Index>(), bins in 1usize..20) {
            let k = cut.index(c.len());
            let (whole_c, whole_l) = maps(&c, &l);
            let whole = bin_predictions(&whole_c, &whole_l, bins, None).unwrap();
            let mut parts = Vec::new();
            for (cc, ll) in [(&c[..k], &l[..k]), (&c[k..], &l[k..])] {
                if !cc.is_empty() {
                    let (a, b) = maps(cc, ll);
                    parts.push(bin_predictions(&a, &b, bins, None).unwrap());
                }
            }
            let merged = merge_bins(&parts).unwrap().unwrap();
            prop_assert_eq!(&merged, &whole);
            parts.reverse();
            prop_assert_eq!(merge_bins(&parts).unwrap().unwrap(), whole.clone());
            prop_assert_eq!(ece(&merged).unwrap().to_bits(), ece(&whole).unwrap().to_bits());
        }

        #[test]
        fn ece_bounds_and_gap((c, l) in arb_case(), bins in 1usize..20) {
            let (cm, lm) = maps(&c, &l);
            let b = bin_predictions(&cm, &lm, bins, None).unwrap();
            let e = ece(&b).unwrap();
            let gap = b.signed_gap().unwrap();
            prop_assert!((0.0..=1.0).contains(&e));
            prop_assert!(e >= gap.abs());
            prop_assert_eq!(b.total(), c.len() as u64);
            for (i, s) in b.bins().iter().enumerate() {
                prop_assert!(s.positives <= s.count);
                if s.count > 0 {
                    let (lo, hi) = b.edges(i);
                    let m = s.mean_confidence().unwrap();
                    prop_assert!(m >= lo - 1e-12 && m <= hi + 1e-12);
                }
            }
        }

        #[test]
        fn permutation_invariant((c, l) in arb_case(), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut idx: Vec<usize> = (0..c.len()).collect();
            idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let pc: Vec<f64> = idx.iter().map(|&i| c[i]).collect();
            let pl: Vec<u8> = idx.iter().map(|&i| l[i]).collect();
            let (a, b) = maps(&c, &l);
            let (pa, pb) = maps(&pc, &pl);
            let x = bin_predictions(&a, &b, 10, None).unwrap();
            let y = bin_predictions(&pa, &pb, 10, None).unwrap();
            prop_assert_eq!(ece(&x).unwrap().to_bits(), ece(&y).unwrap().to_bits());
            prop_assert_eq!(x.signed_gap().unwrap().to_bits(), y.signed_gap().unwrap().to_bits());
            prop_assert_eq!(x, y);
        }

        #[test]
        fn calibrated_bins_have_zero_ece(k in 1u64..50) {
            // every occupied bin has mean confidence equal to accuracy
            let c = vec![0.25; 4 * k as usize];
            let l: Vec<u8> = (0..4 * k).map(|i| u8::from(i % 4 == 0)).collect();
            let (a, b) = maps(&c, &l);
            prop_assert_eq!(ece(&bin_predictions(&a, &b, 10, None).unwrap()).unwrap(), 0.0);
        }
    }
}
