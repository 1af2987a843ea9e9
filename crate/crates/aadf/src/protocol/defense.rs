//! Randomized test-time defense: N low-cost jittered views, logits averaged
//! for the decision, evidence maps combined by pointwise maximum so
//! localized peaks survive spatial jitter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attacks::derive_seed;
use crate::detector::{forward, DetectorParams};
use crate::error::{Error, Result};
use crate::imagecore::{pi_preprocess, resize_bilinear, Grid, Image};
use crate::util::sigmoid;

use super::super::attacks::{apply_gamma, apply_jpeg};

/// Jitter sampling ranges and view count. Every view composes a micro
/// crop/resize phase shift, a mild gamma, and a JPEG phase perturbation with
/// independently sampled parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseConfig {
    pub n: usize,
    /// Crop/resize phase shift in pixels, sampled from {0..max}.
    pub phase_max: u32,
    pub gamma_range: (f64, f64),
    pub jpeg_quality: (u8, u8),
    pub jpeg_shift_max: u8,
    pub seed: u64,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        Self {
            n: 3,
            phase_max: 3,
            gamma_range: (0.95, 1.05),
            jpeg_quality: (85, 95),
            jpeg_shift_max: 7,
            seed: 0,
        }
    }
}

/// One materialized jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterParams {
    pub phase_dx: u32,
    pub phase_dy: u32,
    pub gamma: f64,
    pub jpeg_quality: u8,
    pub jpeg_dx: u8,
    pub jpeg_dy: u8,
}

impl JitterParams {
    /// The do-nothing jitter (phase 0, gamma 1, quality 100, no shift);
    /// applying it differs from the input only by jpeg_sim rounding.
    pub fn identity() -> Self {
        Self {
            phase_dx: 0,
            phase_dy: 0,
            gamma: 1.0,
            jpeg_quality: 100,
            jpeg_dx: 0,
            jpeg_dy: 0,
        }
    }
}

/// Aggregated defended prediction.
#[derive(Debug, Clone)]
pub struct DefendedPrediction {
    /// sigmoid of the mean logit.
    pub probability: f64,
    pub mean_logit: f64,
    /// Pointwise maximum of the per-view evidence maps, working resolution.
    pub evidence: Grid,
    /// Per-view logits in view order.
    pub per_view_logits: Vec<f64>,
}

/// Sample the N per-view jitters for a defense configuration.
pub fn sample_jitters(cfg: &DefenseConfig) -> Vec<JitterParams> {
    (0..cfg.n)
        .map(|i| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "ttd-view", 0, i as u32));
            JitterParams {
                phase_dx: rng.gen_range(0..=cfg.phase_max),
                phase_dy: rng.gen_range(0..=cfg.phase_max),
                gamma: rng.gen_range(cfg.gamma_range.0..=cfg.gamma_range.1),
                jpeg_quality: rng.gen_range(cfg.jpeg_quality.0..=cfg.jpeg_quality.1),
                jpeg_dx: rng.gen_range(0..=cfg.jpeg_shift_max),
                jpeg_dy: rng.gen_range(0..=cfg.jpeg_shift_max),
            }
        })
        .collect()
}

/// Apply one jitter: crop-phase + resize back, then gamma, then JPEG phase.
pub fn apply_jitter(img: &Image, j: &JitterParams) -> Result<Image> {
    let (h, w) = (img.height(), img.width());
    let phased = if j.phase_dx == 0 && j.phase_dy == 0 {
        img.clone()
    } else {
        let dy = (j.phase_dy as usize).min(h.saturating_sub(8));
        let dx = (j.phase_dx as usize).min(w.saturating_sub(8));
        let ch = h - dy;
        let cw = w - dx;
        let plane = ch * cw;
        let mut data = vec![0.0; 3 * plane];
        for c in 0..3 {
            let src = img.channel(c);
            for y in 0..ch {
                for x in 0..cw {
                    data[c * plane + y * cw + x] = src[(y + dy) * w + (x + dx)];
                }
            }
        }
        resize_bilinear(&Image::from_planar(ch, cw, data), h, w)?
    };
    let toned = if j.gamma == 1.0 {
        phased
    } else {
        apply_gamma(&phased, j.gamma, [1.0, 1.0, 1.0])
    };
    apply_jpeg(&toned, j.jpeg_dx, j.jpeg_dy, j.jpeg_quality)
}

/// Defense with explicit jitters. The mean logit is computed over a
/// canonically ordered copy of the per-view logits, so permuting the view
/// order leaves every output bit-identical.
pub fn ttd_predict_with_jitters(
    x: &Image,
    p: &DetectorParams,
    jitters: &[JitterParams],
    working_size: usize,
) -> Result<DefendedPrediction> {
    if jitters.is_empty() {
        return Err(Error::Invalid("defense needs at least one view".into()));
    }
    let mut per_view_logits = Vec::with_capacity(jitters.len());
    let mut evidence: Option<Grid> = None;
    for j in jitters {
        let view = apply_jitter(x, j)?;
        let std = pi_preprocess(&view, working_size)?;
        let out = forward(&std, p);
        per_view_logits.push(out.logit);
        evidence = Some(match evidence {
            None => out.evidence,
            Some(mut acc) => {
                for (a, &e) in acc.data_mut().iter_mut().zip(out.evidence.data()) {
                    if e > *a {
                        *a = e;
                    }
                }
                acc
            }
        });
    }
    let mut sorted = per_view_logits.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mean_logit = sorted.iter().sum::<f64>() / sorted.len() as f64;
    Ok(DefendedPrediction {
        probability: sigmoid(mean_logit),
        mean_logit,
        evidence: evidence.expect("at least one view"),
        per_view_logits,
    })
}

/// Randomized test-time defense: sample N jitters from the config and
/// aggregate.
pub fn ttd_predict(
    x: &Image,
    p: &DetectorParams,
    cfg: &DefenseConfig,
    working_size: usize,
) -> Result<DefendedPrediction> {
    if cfg.n == 0 {
        return Err(Error::Invalid("defense needs at least one view".into()));
    }
    ttd_predict_with_jitters(x, p, &sample_jitters(cfg), working_size)
}
