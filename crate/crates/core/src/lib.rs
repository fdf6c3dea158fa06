//! Uncertainty maps, calibration and error-overlap metrics for binary
//! segmentation outputs.

pub mod calibration;
pub mod error;
pub mod error_analysis;
pub mod exact;
pub mod manifest;
pub mod maps;
pub mod measures;
pub mod report;
pub mod synth;
pub mod tensor;

pub use calibration::{
    bin_predictions, classify_subject_calibration, ece, merge_bins, CalibrationClass, CalibrationReport,
    DiagramRow, ReliabilityBins,
};
pub use error::{Error, Result};
pub use error_analysis::{ConfusionCounts, DiceScore, UncertainConfusion};
pub use manifest::{load_manifest, DatasetManifest, ManifestOptions, MethodInput, MethodKind, SubjectEntry};
pub use maps::{LabelMap, NonNegField, ProbMap, SampleStack, UncertaintyMap};
pub use measures::{derive_method_outputs, MethodOutputs};
pub use tensor::{read_tensor, write_tensor, ElementKind, Tensor};
pub use report::{emit_reports, evaluate, EvalOptions, Evaluation};
