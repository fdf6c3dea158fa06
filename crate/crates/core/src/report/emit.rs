//! Report files: metrics, sweep and rank CSVs, reliability diagrams and a
//! JSON summary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::DiagramRow;
use crate::error::{Error, Result};
use crate::report::evaluate::{Evaluation, MethodResult};
use crate::report::rank::{rank_methods, MethodMeans, RankTable};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const RANKS_FILE: &str = "ranks.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const DIAGRAM_DIR: &str = "diagrams";
/// Subject id used for dataset-level rows.
pub const ALL: &str = "ALL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub subject_id: String,
    /// `ok` or `skipped`.
    pub status: String,
    /// Subject ECE, or the mean subject ECE on the `ALL` row.
    pub ece: Option<f64>,
    /// Pooled-voxel ECE, `ALL` row only.
    pub ece_pooled: Option<f64>,
    pub signed_gap: Option<f64>,
    pub calibration_class: Option<String>,
    /// Subject Dice, or the mean over non-degenerate subjects on the `ALL` row.
    pub dice: Option<f64>,
    pub dice_pooled: Option<f64>,
    pub dice_degenerate: Option<bool>,
    pub u_e: Option<f64>,
    pub best_tau_ue: Option<f64>,
    /// 1 or 0 per subject; the benefiting share on the `ALL` row.
    pub bnf: Option<f64>,
    pub best_tau_bnf: Option<f64>,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCsvRow {
    pub method: String,
    pub tau: f64,
    pub mean_ue: Option<f64>,
    pub n_ue: usize,
    pub bnf: Option<f64>,
    pub n_bnf: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankCsvRow {
    pub metric: String,
    pub direction: String,
    pub method: String,
    pub mean: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct SummaryConfig<'a> {
    n_bins: usize,
    tau_grid: &'a [f64],
    epsilon: f64,
    use_mask: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct MethodSummary<'a> {
    name: &'a str,
    kind: &'static str,
    n_subjects: usize,
    n_failed: usize,
    ece_mean: Option<f64>,
    ece_pooled: Option<f64>,
    signed_gap_pooled: Option<f64>,
    pooled_class: Option<&'static str>,
    subject_classes: BTreeMap<&'static str, usize>,
    dice_mean: Option<f64>,
    dice_pooled: Option<f64>,
    u_e: Option<f64>,
    best_tau_ue: Option<f64>,
    bnf: Option<f64>,
    best_tau_bnf: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct Failure<'a> {
    method: &'a str,
    subject_id: &'a str,
    reason: &'a str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct Summary<'a> {
    dataset_name: &'a str,
    config: SummaryConfig<'a>,
    methods: Vec<MethodSummary<'a>>,
    failures: Vec<Failure<'a>>,
}

pub fn metrics_rows(ev: &Evaluation) -> Vec<MetricsRow> {
    let mut rows = Vec::new();
    for m in &ev.methods {
        let best_ue = m.sweep.best_ue_row().map(|r| r.tau);
        let best_bnf = m.sweep.best_bnf_row().map(|r| r.tau);
        for s in &m.subjects {
            rows.push(match &s.outcome {
                Ok(x) => MetricsRow {
                    method: m.name.clone(),
                    subject_id: s.subject_id.clone(),
                    status: "ok".into(),
                    ece: Some(x.calibration.ece),
                    ece_pooled: None,
                    signed_gap: Some(x.calibration.signed_gap),
                    calibration_class: Some(x.class.as_str().into()),
                    dice: Some(x.dice.value),
                    dice_pooled: None,
                    dice_degenerate: Some(x.dice.degenerate),
                    u_e: m.subject_ue(x),
                    best_tau_ue: best_ue,
                    bnf: m.subject_benefit(x).map(|b| if b { 1.0 } else { 0.0 }),
                    best_tau_bnf: best_bnf,
                    reason: None,
                },
                Err(reason) => MetricsRow {
                    method: m.name.clone(),
                    subject_id: s.subject_id.clone(),
                    status: "skipped".into(),
                    ece: None,
                    ece_pooled: None,
                    signed_gap: None,
                    calibration_class: None,
                    dice: None,
                    dice_pooled: None,
                    dice_degenerate: None,
                    u_e: None,
                    best_tau_ue: None,
                    bnf: None,
                    best_tau_bnf: None,
                    reason: Some(reason.clone()),
                },
            });
        }
        let means = m.means();
        rows.push(MetricsRow {
            method: m.name.clone(),
            subject_id: ALL.into(),
            status: if m.pooled.is_some() { "ok" } else { "skipped" }.into(),
            ece: means.ece,
            ece_pooled: m.pooled.as_ref().map(|p| p.ece),
            signed_gap: m.pooled.as_ref().map(|p| p.signed_gap),
            calibration_class: m.pooled_class.map(|c| c.as_str().into()),
            dice: means.dice,
            dice_pooled: m.pooled_dice.map(|d| d.value),
            dice_degenerate: m.pooled_dice.map(|d| d.degenerate),
            u_e: means.u_e,
            best_tau_ue: best_ue,
            bnf: means.bnf,
            best_tau_bnf: best_bnf,
            reason: m.pooled.is_none().then(|| "no subject evaluated".to_string()),
        });
    }
    rows
}

fn csv_bytes<T: Serialize>(rows: &[T], header: &[&str]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner()
        .map_err(|e| Error::InvalidConfig(format!("csv buffer: {e}")))
}

const METRICS_HEADER: [&str; 15] = [
    "method",
    "subject_id",
    "status",
    "ece",
    "ece_pooled",
    "signed_gap",
    "calibration_class",
    "dice",
    "dice_pooled",
    "dice_degenerate",
    "u_e",
    "best_tau_ue",
    "bnf",
    "best_tau_bnf",
    "reason",
];

pub fn metrics_csv(rows: &[MetricsRow]) -> Result<Vec<u8>> {
    csv_bytes(rows, &METRICS_HEADER)
}

pub fn diagram_csv(rows: &[DiagramRow]) -> Result<Vec<u8>> {
    csv_bytes(rows, &["bin_lower", "bin_upper", "count", "mean_confidence", "accuracy"])
}

pub fn ranks_csv(table: &RankTable) -> Result<Vec<u8>> {
    let rows: Vec<RankCsvRow> = table
        .entries
        .iter()
        .map(|e| RankCsvRow {
            metric: e.metric.as_str().into(),
            direction: e.direction.as_str().into(),
            method: e.method.clone(),
            mean: e.mean,
            rank: e.rank,
        })
        .collect();
    csv_bytes(&rows, &["metric", "direction", "method", "mean", "rank"])
}

fn sweep_csv(ev: &Evaluation) -> Result<Vec<u8>> {
    let rows: Vec<SweepCsvRow> = ev
        .methods
        .iter()
        .flat_map(|m| {
            m.sweep.rows.iter().map(move |r| SweepCsvRow {
                method: m.name.clone(),
                tau: r.tau,
                mean_ue: r.mean_ue,
                n_ue: r.n_ue,
                bnf: r.bnf,
                n_bnf: r.n_bnf,
            })
        })
        .collect();
    csv_bytes(&rows, &["method", "tau", "mean_ue", "n_ue", "bnf", "n_bnf"])
}

/// Replaces characters outside `[A-Za-z0-9._-]` so names are safe file stems.
pub fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect()
}

pub fn diagram_file_name(method: &str, subject: &str) -> String {
    format!("{}__{}.csv", sanitize(method), sanitize(subject))
}

fn method_summary(m: &MethodResult) -> MethodSummary<'_> {
    let means = m.means();
    MethodSummary {
        name: &m.name,
        kind: m.kind.as_str(),
        n_subjects: m.subjects.len(),
        n_failed: m.n_failed(),
        ece_mean: means.ece,
        ece_pooled: m.pooled.as_ref().map(|p| p.ece),
        signed_gap_pooled: m.pooled.as_ref().map(|p| p.signed_gap),
        pooled_class: m.pooled_class.map(|c| c.as_str()),
        subject_classes: m.class_counts().into_iter().map(|(c, n)| (c.as_str(), n)).collect(),
        dice_mean: means.dice,
        dice_pooled: m.pooled_dice.map(|d| d.value),
        u_e: means.u_e,
        best_tau_ue: m.sweep.best_ue_row().map(|r| r.tau),
        bnf: means.bnf,
        best_tau_bnf: m.sweep.best_bnf_row().map(|r| r.tau),
    }
}

/// All report files as (relative path, contents), in a fixed order.
pub fn render_reports(ev: &Evaluation) -> Result<Vec<(PathBuf, Vec<u8>)>> {
    if ev.methods.is_empty() {
        return Err(Error::Empty("method set"));
    }
    let mut files = vec![
        (PathBuf::from(METRICS_FILE), metrics_csv(&metrics_rows(ev))?),
        (PathBuf::from(SWEEP_FILE), sweep_csv(ev)?),
        (PathBuf::from(RANKS_FILE), ranks_csv(&ev.ranks)?),
    ];
    for m in &ev.methods {
        for (sid, x) in m.ok_subjects() {
            files.push((
                Path::new(DIAGRAM_DIR).join(diagram_file_name(&m.name, sid)),
                diagram_csv(&x.calibration.bins.diagram())?,
            ));
        }
        if let Some(p) = &m.pooled {
            files.push((
                Path::new(DIAGRAM_DIR).join(diagram_file_name(&m.name, ALL)),
                diagram_csv(&p.bins.diagram())?,
            ));
        }
    }
    let summary = Summary {
        dataset_name: &ev.dataset_name,
        config: SummaryConfig {
            n_bins: ev.options.n_bins,
            tau_grid: &ev.options.tau_grid,
            epsilon: ev.options.epsilon,
            use_mask: ev.options.use_mask,
        },
        methods: ev.methods.iter().map(method_summary).collect(),
        failures: ev
            .methods
            .iter()
            .flat_map(|m| {
                m.subjects.iter().filter_map(move |s| {
                    s.outcome.as_ref().err().map(|reason| Failure {
                        method: &m.name,
                        subject_id: &s.subject_id,
                        reason,
                    })
                })
            })
            .collect(),
    };
    let mut json = serde_json::to_vec_pretty(&summary)?;
    json.push(b'\n');
    files.push((PathBuf::from(SUMMARY_FILE), json));
    Ok(files)
}

/// Renders every report in memory, then writes them under `out`.
/// Nothing is written if rendering fails.
pub fn emit_reports(ev: &Evaluation, out: &Path) -> Result<Vec<PathBuf>> {
    let files = render_reports(ev)?;
    let diagrams = out.join(DIAGRAM_DIR);
    fs::create_dir_all(&diagrams).map_err(|e| Error::io(&diagrams, e))?;
    let mut written = Vec::with_capacity(files.len());
    for (rel, bytes) in files {
        let path = out.join(rel);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Reads a metrics CSV written by [`emit_reports`].
pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

/// Rank table from the dataset-level rows of a metrics CSV.
pub fn ranks_from_metrics(rows: &[MetricsRow]) -> RankTable {
    let means: Vec<MethodMeans> = rows
        .iter()
        .filter(|r| r.subject_id == ALL)
        .map(|r| MethodMeans {
            method: r.method.clone(),
            ece: r.ece,
            u_e: r.u_e,
            bnf: r.bnf,
            dice: r.dice,
        })
        .collect();
    rank_methods(&means)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::MethodKind;
    use crate::report::evaluate::{evaluate, EvalOptions};
    use crate::synth::{write_dataset, SynthConfig, SynthDatasetConfig, SynthMethod, UncertaintyModel};

    fn toy(dir: &Path) -> PathBuf {
        let methods = ["single", "odd name/x"]
            .iter()
            .map(|n| SynthMethod {
                name: n.to_string(),
                kind: MethodKind::SingleProb,
                curve: None,
                jitter: None,
                uncertainty: UncertaintyModel::Spread,
            })
            .collect();
        let cfg = SynthDatasetConfig {
            dataset_name: "toy".into(),
            n_subjects: 2,
            subject: SynthConfig::new(vec![20, 20], 3),
            declared_t: 2,
            declared_k: 2,
            methods,
        };
        write_dataset(&cfg, dir).unwrap()
    }

    #[test]
    fn reports_are_deterministic_and_complete() {
        let data = tempfile::tempdir().unwrap();
        let manifest = toy(data.path());
        let ev = evaluate(&manifest, &EvalOptions::default()).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let fa = emit_reports(&ev, a.path()).unwrap();
        let ev2 = evaluate(&manifest, &EvalOptions::default()).unwrap();
        emit_reports(&ev2, b.path()).unwrap();
        for p in &fa {
            let rel = p.strip_prefix(a.path()).unwrap();
            assert_eq!(fs::read(p).unwrap(), fs::read(b.path().join(rel)).unwrap(), "{rel:?}");
        }
        assert!(a.path().join("diagrams/odd_name_x__S001.csv").exists());
        assert!(a.path().join("diagrams/single__ALL.csv").exists());
        let rows = read_metrics_csv(&a.path().join(METRICS_FILE)).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows, metrics_rows(&ev));
        assert_eq!(ranks_from_metrics(&rows), ev.ranks);
    }

    #[test]
    fn diagram_rows_match_occupied_bins() {
        let data = tempfile::tempdir().unwrap();
        let ev = evaluate(toy(data.path()), &EvalOptions::default()).unwrap();
        let out = tempfile::tempdir().unwrap();
        emit_reports(&ev, out.path()).unwrap();
        for m in &ev.methods {
            for (sid, x) in m.ok_subjects() {
                let text = fs::read_to_string(out.path().join(DIAGRAM_DIR).join(diagram_file_name(&m.name, sid))).unwrap();
                assert_eq!(text.lines().count() - 1, x.calibration.bins.occupied());
            }
        }
    }

    #[test]
    fn empty_method_set_writes_nothing() {
        let data = tempfile::tempdir().unwrap();
        let mut ev = evaluate(toy(data.path()), &EvalOptions::default()).unwrap();
        ev.methods.clear();
        let out = tempfile::tempdir().unwrap();
        let target = out.path().join("reports");
        assert!(emit_reports(&ev, &target).is_err());
        assert!(!target.exists());
    }

    #[test]
    fn sanitizing() {
        assert_eq!(sanitize("a b/c"), "a_b_c");
        assert_eq!(sanitize("mc-0.5_x"), "mc-0.5_x");
    }
}
