//! Dataset manifests binding subjects to ground truth and per-method inputs.
//!
//! The on-disk form is JSON; see `docs/formats.md`. Relative paths are resolved
//! against the directory containing the manifest.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{read_header, ElementKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    SingleProb,
    SampleStack,
    EnsembleStack,
    Aleatoric,
    Auxiliary,
}

impl MethodKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MethodKind::SingleProb => "single_prob",
            MethodKind::SampleStack => "sample_stack",
            MethodKind::EnsembleStack => "ensemble_stack",
            MethodKind::Aleatoric => "aleatoric",
            MethodKind::Auxiliary => "auxiliary",
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Files backing one method for one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodInput {
    /// One float32 foreground-probability map.
    SingleProb { prob: PathBuf },
    /// `T` stochastic passes stacked on a leading axis.
    SampleStack { stack: PathBuf },
    /// `K` ensemble members stacked on a leading axis.
    EnsembleStack { stack: PathBuf },
    /// Prediction probability plus predicted variance.
    Aleatoric { prob: PathBuf, variance: PathBuf },
    /// Binary prediction plus raw (unnormalized) uncertainty.
    Auxiliary { labels: PathBuf, uncertainty: PathBuf },
}

impl MethodInput {
    pub fn kind(&self) -> MethodKind {
        match self {
            MethodInput::SingleProb { .. } => MethodKind::SingleProb,
            MethodInput::SampleStack { .. } => MethodKind::SampleStack,
            MethodInput::EnsembleStack { .. } => MethodKind::EnsembleStack,
            MethodInput::Aleatoric { .. } => MethodKind::Aleatoric,
            MethodInput::Auxiliary { .. } => MethodKind::Auxiliary,
        }
    }

    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        match self {
            MethodInput::SingleProb { prob } => vec![prob],
            MethodInput::SampleStack { stack } | MethodInput::EnsembleStack { stack } => vec![stack],
            MethodInput::Aleatoric { prob, variance } => vec![prob, variance],
            MethodInput::Auxiliary { labels, uncertainty } => vec![labels, uncertainty],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectEntry {
    pub subject_id: String,
    pub ground_truth: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    pub methods: BTreeMap<String, MethodInput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub dataset_name: String,
    #[serde(rename = "declared_T")]
    pub declared_t: usize,
    #[serde(rename = "declared_K")]
    pub declared_k: usize,
    pub subjects: Vec<SubjectEntry>,
}

#[derive(Debug, Clone, Copy)]
pub struct ManifestOptions {
    /// Check every referenced file header at load time.
    pub eager: bool,
}

impl Default for ManifestOptions {
    fn default() -> Self {
        Self { eager: true }
    }
}

impl DatasetManifest {
    /// Parses and validates a manifest from JSON text; paths stay as written.
    pub fn from_json(text: &str) -> Result<Self> {
        let m: DatasetManifest = serde_json::from_str(text)?;
        m.validate_structure()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// Method names in sorted order with their (dataset-wide) kinds.
    pub fn methods(&self) -> BTreeMap<&str, MethodKind> {
        let mut out = BTreeMap::new();
        for s in &self.subjects {
            for (name, input) in &s.methods {
                out.entry(name.as_str()).or_insert(input.kind());
            }
        }
        out
    }

    pub fn subject(&self, id: &str) -> Option<&SubjectEntry> {
        self.subjects.iter().find(|s| s.subject_id == id)
    }

    fn validate_structure(&self) -> Result<()> {
        if self.subjects.is_empty() {
            return Err(Error::Manifest("subject list is empty".into()));
        }
        if self.declared_t == 0 || self.declared_k == 0 {
            return Err(Error::Manifest("declared_T and declared_K must be positive".into()));
        }
        let mut seen = HashSet::new();
        let mut kinds: HashMap<&str, (MethodKind, &str)> = HashMap::new();
        for s in &self.subjects {
            if s.subject_id.is_empty() {
                return Err(Error::Manifest("empty subject_id".into()));
            }
            if !seen.insert(s.subject_id.as_str()) {
                return Err(Error::Manifest(format!("duplicate subject_id {:?}", s.subject_id)));
            }
            for (name, input) in &s.methods {
                let kind = input.kind();
                match kinds.get(name.as_str()) {
                    Some(&(k, first)) if k != kind => {
                        return Err(Error::Manifest(format!(
                            "method {name:?} is {k} in subject {first:?} but {kind} in subject {:?}",
                            s.subject_id
                        )))
                    }
                    Some(_) => {}
                    None => {
                        kinds.insert(name, (kind, &s.subject_id));
                    }
                }
            }
        }
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for s in &mut self.subjects {
            join(&mut s.ground_truth);
            if let Some(m) = s.mask.as_mut() {
                join(m);
            }
            for input in s.methods.values_mut() {
                for p in input.paths_mut() {
                    join(p);
                }
            }
        }
    }

    /// Header-level checks for one subject: files exist, element kinds fit
    /// their role, spatial dims agree and stack extents match `T`/`K`.
    pub fn validate_subject(&self, subject: &SubjectEntry) -> Result<()> {
        let ctx = |e: Error| Error::Manifest(format!("subject {:?}: {e}", subject.subject_id));
        let expect = |path: &Path, kind: ElementKind| -> Result<Vec<usize>> {
            let (k, dims) = read_header(path)?;
            if k != kind {
                return Err(Error::InvalidTensor(format!(
                    "{} is {k:?}, expected {kind:?}",
                    path.display()
                )));
            }
            Ok(dims)
        };
        let gt_dims = expect(&subject.ground_truth, ElementKind::Uint8).map_err(ctx)?;
        let same = |dims: Vec<usize>| -> Result<()> {
            crate::maps::same_dims(&gt_dims, &dims).map_err(ctx)
        };
        if let Some(mask) = &subject.mask {
            same(expect(mask, ElementKind::Uint8).map_err(ctx)?)?;
        }
        for (name, input) in &subject.methods {
            let stacked = |path: &Path, extent: usize, what: &str| -> Result<()> {
                let dims = expect(path, ElementKind::Float32).map_err(ctx)?;
                if dims.len() != gt_dims.len() + 1 || dims[0] != extent {
                    return Err(ctx(Error::Manifest(format!(
                        "method {name:?}: {what} stack dims {dims:?} do not match [{extent}] + {gt_dims:?}"
                    ))));
                }
                same(dims[1..].to_vec())
            };
            match input {
                MethodInput::SingleProb { prob } => same(expect(prob, ElementKind::Float32).map_err(ctx)?)?,
                MethodInput::SampleStack { stack } => stacked(stack, self.declared_t, "sample")?,
                MethodInput::EnsembleStack { stack } => stacked(stack, self.declared_k, "ensemble")?,
                MethodInput::Aleatoric { prob, variance } => {
                    same(expect(prob, ElementKind::Float32).map_err(ctx)?)?;
                    same(expect(variance, ElementKind::Float32).map_err(ctx)?)?;
                }
                MethodInput::Auxiliary {
                    labels,
                    uncertainty,
                } => {
                    same(expect(labels, ElementKind::Uint8).map_err(ctx)?)?;
                    same(expect(uncertainty, ElementKind::Float32).map_err(ctx)?)?;
                }
            }
        }
        Ok(())
    }
}

/// Loads a manifest, resolves its paths and validates it. With `eager` set,
/// every subject's files are header-checked up front.
pub fn load_manifest(path: impl AsRef<Path>, options: ManifestOptions) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut m = DatasetManifest::from_json(&text)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    m.resolve_paths(base);
    if options.eager {
        for s in &m.subjects {
            m.validate_subject(s)?;
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{write_tensor, Tensor};

    fn write_fixture(dir: &Path) {
        write_tensor(&Tensor::from_labels(vec![2, 2], vec![0, 1, 1, 0]).unwrap(), dir.join("gt.suqt")).unwrap();
        write_tensor(&Tensor::from_f32(vec![2, 2], vec![0.1, 0.9, 0.6, 0.2]).unwrap(), dir.join("p.suqt")).unwrap();
        write_tensor(&Tensor::from_f32(vec![3, 2], vec![0.5; 6]).unwrap(), dir.join("bad.suqt")).unwrap();
        write_tensor(&Tensor::from_f32(vec![2, 2, 2], vec![0.5; 8]).unwrap(), dir.join("stack2.suqt")).unwrap();
    }

    fn single(prob: &str) -> String {
        format!(r#"{{"kind": "single_prob", "prob": "{prob}"}}"#)
    }

    fn manifest(subjects: &[(&str, &str, String)]) -> String {
        let subs: Vec<String> = subjects
            .iter()
            .map(|(id, name, method)| {
                format!(r#"{{"subject_id": "{id}", "ground_truth": "gt.suqt", "methods": {{"{name}": {method}}}}}"#)
            })
            .collect();
        format!(
            r#"{{"dataset_name": "toy", "declared_T": 2, "declared_K": 3, "subjects": [{}]}}"#,
            subs.join(",")
        )
    }

    fn load(dir: &Path, text: &str) -> Result<DatasetManifest> {
        let path = dir.join("manifest.json");
        std::fs::write(&path, text).unwrap();
        load_manifest(&path, ManifestOptions::default())
    }

    #[test]
    fn one_subject_single_prob_loads() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        let m = load(dir.path(), &manifest(&[("s1", "base", single("p.suqt"))])).unwrap();
        assert_eq!(m.subjects.len(), 1);
        assert_eq!(m.methods().get("base"), Some(&MethodKind::SingleProb));
        assert!(m.subjects[0].ground_truth.is_absolute() || m.subjects[0].ground_truth.starts_with(dir.path()));
    }

    #[test]
    fn kind_inconsistency_rejected() {
        let text = manifest(&[
            ("s1", "mc", r#"{"kind": "sample_stack", "stack": "stack2.suqt"}"#.to_string()),
            ("s2", "mc", single("p.suqt")),
        ]);
        let err = DatasetManifest::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("sample_stack"), "{err}");
    }

    #[test]
    fn duplicate_and_empty_rejected() {
        let text = manifest(&[("s1", "a", single("p.suqt")), ("s1", "a", single("p.suqt"))]);
        assert!(DatasetManifest::from_json(&text).unwrap_err().to_string().contains("duplicate"));
        let empty = r#"{"dataset_name": "x", "declared_T": 1, "declared_K": 1, "subjects": []}"#;
        assert!(DatasetManifest::from_json(empty).is_err());
    }

    #[test]
    fn eager_checks_files_and_dims() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        let missing = load(dir.path(), &manifest(&[("s1", "a", single("nope.suqt"))]));
        assert!(matches!(missing, Err(Error::Manifest(_))));
        let mismatch = load(dir.path(), &manifest(&[("s1", "a", single("bad.suqt"))]));
        assert!(mismatch.unwrap_err().to_string().contains("dimension mismatch"));
        // declared_T = 2 matches the stack extent
        let ok = load(
            dir.path(),
            &manifest(&[("s1", "mc", r#"{"kind": "sample_stack", "stack": "stack2.suqt"}"#.into())]),
        );
        assert!(ok.is_ok());
        // declared_K = 3 does not
        let bad_k = load(
            dir.path(),
            &manifest(&[("s1", "ens", r#"{"kind": "ensemble_stack", "stack": "stack2.suqt"}"#.into())]),
        );
        assert!(bad_k.is_err());
    }

    #[test]
    fn deferred_validation_skips_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        std::fs::write(&path, manifest(&[("s1", "a", single("nope.suqt"))])).unwrap();
        let m = load_manifest(&path, ManifestOptions { eager: false }).unwrap();
        assert!(m.validate_subject(&m.subjects[0]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let text = manifest(&[("s1", "a", single("p.suqt"))]);
        let m = DatasetManifest::from_json(&text).unwrap();
        assert_eq!(DatasetManifest::from_json(&m.to_json()).unwrap(), m);
        assert!(m.to_json().contains("\"declared_T\": 2"));
    }
}
