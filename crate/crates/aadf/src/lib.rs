//! Attack-aware image forensics at desk scale.
//!
//! The crate bundles everything needed to stress-test a forgery detector
//! against counter-forensic post-processing and to report deployment-style
//! numbers:
//!
//! - [`imagecore`]: double-precision rasters, deterministic preprocessing,
//!   spatial filters, bilinear resampling and a bit-exact JPEG-simulation
//!   codec (no entropy coding).
//! - [`attacks`]: six counter-forensic families (jpeg, warp, regrain, seam,
//!   gamma, transcode) with seeded parameter sampling and deterministic
//!   application.
//! - [`priors`]: weak face-region priors built from face boxes and their
//!   transport through geometric attacks.
//! - [`detector`]: a lightweight two-stream model (content + residual
//!   features, gated fusion, scalar logit head, per-cell mask head) with
//!   exact analytic gradients.
//! - [`objective`]: the full training loss stack with gradients and a
//!   finite-difference verifier.
//! - [`protocol`]: worst-of-K red-team training (AdamW, global-norm clipping)
//!   and the randomized test-time defense with evidence aggregation.
//! - [`metrics`]: ranking, calibration, selective prediction, operating-point
//!   and weak-localization measures plus max-min threshold search.
//! - [`harness`]: manifests, synthetic paired corpus generation, run
//!   orchestration, reports and heatmap overlays.
//!
//! All computation is in `f64` and bit-reproducible from seeds; nothing in
//! the pipeline depends on thread count, wall clock or platform hash order.
//! See the crate examples for one runnable entry point per capability.

pub mod attacks;
pub mod detector;
pub mod error;
pub mod harness;
pub mod imagecore;
pub mod metrics;
pub mod objective;
pub mod priors;
pub mod protocol;

pub(crate) mod util;

pub use error::{Error, Result};
