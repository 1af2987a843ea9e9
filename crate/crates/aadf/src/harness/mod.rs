//! Dataset manifests, synthetic paired corpus generation, run orchestration,
//! reports, and heatmap-overlay export.
//!
//! Per-image evaluation is pure and could run concurrently; all file writes
//! funnel through one ordered writer per report so outputs are byte-stable.

mod config;
mod manifest;
mod overlay;
mod runner;
mod synth;

pub use config::RunConfig;
pub use manifest::{read_manifest, write_manifest, DataSplit, ManifestEntry};
pub use overlay::{overlay_image, render_overlay};
pub use runner::{
    read_report, run_eval, train_from_manifest, EvalReport, LocalizationSummary, SplitReport,
    TrainArtifacts,
};
pub use synth::{gen_synth, SYNTH_SIZE};
