//! File-format contract shared with external exporters: tensors are built
//! byte by byte here rather than through the library writer.

use std::fs;
use std::path::Path;

use suq_core::manifest::{load_manifest, ManifestOptions};
use suq_core::report::{evaluate, EvalOptions};
use suq_core::tensor::{read_tensor, ElementKind, TensorData};
use suq_core::Error;

fn raw_tensor(kind: u8, dims: &[u32], payload: &[u8]) -> Vec<u8> {
    let mut out = b"SUQT".to_vec();
    out.push(1);
    out.push(kind);
    out.push(dims.len() as u8);
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(payload);
    out
}

fn f32_file(dims: &[u32], values: &[f32]) -> Vec<u8> {
    let payload: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    raw_tensor(1, dims, &payload)
}

fn u8_file(dims: &[u32], values: &[u8]) -> Vec<u8> {
    raw_tensor(2, dims, values)
}

const DIMS: [u32; 2] = [3, 4];

fn write_subject(dir: &Path, sid: &str, t: usize, k: usize) {
    let n = 12;
    let gt: Vec<u8> = (0..n).map(|i| (i % 3 == 0) as u8).collect();
    let prob: Vec<f32> = (0..n).map(|i| (i as f32 + 0.5) / n as f32).collect();
    let stack = |m: usize| -> Vec<f32> { (0..m).flat_map(|j| prob.iter().map(move |p| p * (0.9 + 0.05 * j as f32).min(1.0))).collect() };
    let put = |name: &str, bytes: Vec<u8>| fs::write(dir.join(format!("{sid}_{name}")), bytes).unwrap();
    put("gt.suqt", u8_file(&DIMS, &gt));
    put("mask.suqt", u8_file(&DIMS, &[1; 12]));
    put("prob.suqt", f32_file(&DIMS, &prob));
    put("mc.suqt", f32_file(&[t as u32, 3, 4], &stack(t)));
    put("ens.suqt", f32_file(&[k as u32, 3, 4], &stack(k)));
    put("var.suqt", f32_file(&DIMS, &prob.iter().map(|p| p * (1.0 - p)).collect::<Vec<_>>()));
    put("aux_labels.suqt", u8_file(&DIMS, &prob.iter().map(|&p| (p >= 0.5) as u8).collect::<Vec<_>>()));
    put("aux_unc.suqt", f32_file(&DIMS, &prob.iter().map(|p| 3.0 * (0.5 - p).abs()).collect::<Vec<_>>()));
}

fn manifest_json(t: usize, k: usize) -> String {
    let subject = |sid: &str| {
        format!(
            r#"{{
      "subject_id": "{sid}",
      "ground_truth": "{sid}_gt.suqt",
      "mask": "{sid}_mask.suqt",
      "methods": {{
        "single": {{"kind": "single_prob", "prob": "{sid}_prob.suqt"}},
        "mc": {{"kind": "sample_stack", "stack": "{sid}_mc.suqt"}},
        "ens": {{"kind": "ensemble_stack", "stack": "{sid}_ens.suqt"}},
        "alea": {{"kind": "aleatoric", "prob": "{sid}_prob.suqt", "variance": "{sid}_var.suqt"}},
        "aux": {{"kind": "auxiliary", "labels": "{sid}_aux_labels.suqt", "uncertainty": "{sid}_aux_unc.suqt"}}
      }}
    }}"#
        )
    };
    format!(
        r#"{{
  "dataset_name": "exported",
  "declared_T": {t},
  "declared_K": {k},
  "subjects": [{}, {}, {}]
}}"#,
        subject("A"),
        subject("B"),
        subject("C")
    )
}

fn exported_dataset(dir: &Path, t_files: usize, t_declared: usize) -> std::path::PathBuf {
    for sid in ["A", "B", "C"] {
        write_subject(dir, sid, t_files, 3);
    }
    let path = dir.join("manifest.json");
    fs::write(&path, manifest_json(t_declared, 3)).unwrap();
    path
}

#[test]
fn hand_built_tensors_decode() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.suqt");
    fs::write(&p, f32_file(&[2], &[0.25, 1.0])).unwrap();
    let t = read_tensor(&p).unwrap();
    assert_eq!(t.kind(), ElementKind::Float32);
    assert_eq!(t.dims(), &[2]);
    assert_eq!(t.data(), &TensorData::Float32(vec![0.25, 1.0]));
}

#[test]
fn exported_manifest_evaluates_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let path = exported_dataset(dir.path(), 5, 5);
    let m = load_manifest(&path, ManifestOptions::default()).unwrap();
    assert_eq!(m.subjects.len(), 3);
    assert_eq!(m.methods().len(), 5);
    let ev = evaluate(&path, &EvalOptions { use_mask: true, ..Default::default() }).unwrap();
    assert_eq!(ev.methods.len(), 5);
    assert_eq!(ev.n_failed(), 0);
    for method in &ev.methods {
        let pooled = method.pooled.as_ref().unwrap();
        assert!(pooled.masked);
        assert!((0.0..=1.0).contains(&pooled.ece));
        assert_eq!(pooled.bins.total(), 36);
    }
}

#[test]
fn declared_t_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = exported_dataset(dir.path(), 4, 5);
    let err = load_manifest(&path, ManifestOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Manifest(_)), "{err}");
    // evaluated lazily, only the mismatched method is skipped
    let ev = evaluate(&path, &EvalOptions::default()).unwrap();
    assert_eq!(ev.method("mc").unwrap().n_failed(), 3);
    assert_eq!(ev.n_failed(), 3);
}

#[test]
fn unknown_method_kind_is_rejected() {
    let text = manifest_json(5, 3).replace("\"single_prob\"", "\"mystery\"");
    assert!(suq_core::DatasetManifest::from_json(&text).is_err());
}
