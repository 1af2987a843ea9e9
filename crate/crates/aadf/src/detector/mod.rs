//! Lightweight two-stream detector: fixed-filter content and residual
//! features, gated fusion with 1x1 mixing, a scalar logit head and a
//! per-cell mask-logit head. All gradients are exact and analytic; the
//! feature extractors are fixed, so no gradient flows into them.
//!
//! forward/backward on one cache are single-threaded per sample; distinct
//! samples can run concurrently with independent caches.

mod features;
mod serialize;

pub use features::{extract_features, extract_residuals};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imagecore::{resize_grid, Grid, StandardizedImage};
use crate::util::sigmoid;

/// Content feature dimensions per cell (per-channel mean, std, low-band
/// DCT energy).
pub const CONTENT_DIMS: usize = 9;
/// Residual feature dimensions per cell (mean-abs and std of 4 planes).
pub const RESIDUAL_DIMS: usize = 8;
/// Fused input width.
pub const INPUT_DIMS: usize = CONTENT_DIMS + RESIDUAL_DIMS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamTag {
    Content,
    Residual,
    Fused,
}

/// G x G grid of per-cell feature vectors, cell-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    cells: usize,
    dims: usize,
    tag: StreamTag,
    data: Vec<f64>,
}

impl FeatureGrid {
    pub fn zeros(cells: usize, dims: usize, tag: StreamTag) -> Self {
        Self {
            cells,
            dims,
            tag,
            data: vec![0.0; cells * cells * dims],
        }
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn tag(&self) -> StreamTag {
        self.tag
    }

    pub fn cell(&self, idx: usize) -> &[f64] {
        &self.data[idx * self.dims..(idx + 1) * self.dims]
    }

    pub fn cell_mut(&mut self, idx: usize) -> &mut [f64] {
        &mut self.data[idx * self.dims..(idx + 1) * self.dims]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Model configuration: mask-grid size G and fused width d_u.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DetectorConfig {
    pub mask_grid: usize,
    pub d_u: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            mask_grid: 32,
            d_u: 16,
        }
    }
}

/// All learnable parameters: gates, 1x1 mixer, and the two heads.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorParams {
    pub mask_grid: usize,
    pub d_u: usize,
    /// Gate logits over the 17 fused input dims.
    pub gate_logits: Vec<f64>,
    /// Mixer weights, row-major [input][output]: INPUT_DIMS x d_u.
    pub mix_weights: Vec<f64>,
    pub mix_bias: Vec<f64>,
    pub cls_weights: Vec<f64>,
    pub cls_bias: f64,
    pub mask_weights: Vec<f64>,
    pub mask_bias: f64,
}

impl DetectorParams {
    pub fn zeros(cfg: &DetectorConfig) -> Self {
        Self {
            mask_grid: cfg.mask_grid,
            d_u: cfg.d_u,
            gate_logits: vec![0.0; INPUT_DIMS],
            mix_weights: vec![0.0; INPUT_DIMS * cfg.d_u],
            mix_bias: vec![0.0; cfg.d_u],
            cls_weights: vec![0.0; cfg.d_u],
            cls_bias: 0.0,
            mask_weights: vec![0.0; cfg.d_u],
            mask_bias: 0.0,
        }
    }

    /// Seeded init: gates at 0 (half-open), mixer weights uniform in
    /// [-a, a] with a = sqrt(6 / (fan_in + fan_out)), head weights with the
    /// same rule, biases 0.
    pub fn init_seeded(cfg: &DetectorConfig, seed: u64) -> Self {
        let mut p = Self::zeros(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a_mix = (6.0 / (INPUT_DIMS + cfg.d_u) as f64).sqrt();
        for w in &mut p.mix_weights {
            *w = rng.gen_range(-a_mix..=a_mix);
        }
        let a_head = (6.0 / (cfg.d_u + 1) as f64).sqrt();
        for w in &mut p.cls_weights {
            *w = rng.gen_range(-a_head..=a_head);
        }
        for w in &mut p.mask_weights {
            *w = rng.gen_range(-a_head..=a_head);
        }
        p
    }

    pub fn config(&self) -> DetectorConfig {
        DetectorConfig {
            mask_grid: self.mask_grid,
            d_u: self.d_u,
        }
    }

    /// Total scalar parameter count.
    pub fn param_count(&self) -> usize {
        INPUT_DIMS * (1 + self.d_u) + self.d_u + (self.d_u + 1) + (self.d_u + 1)
    }

    /// Flatten in checkpoint order: gates | mixer | mix bias | cls weights |
    /// cls bias | mask weights | mask bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend_from_slice(&self.gate_logits);
        out.extend_from_slice(&self.mix_weights);
        out.extend_from_slice(&self.mix_bias);
        out.extend_from_slice(&self.cls_weights);
        out.push(self.cls_bias);
        out.extend_from_slice(&self.mask_weights);
        out.push(self.mask_bias);
        out
    }

    pub fn from_flat(cfg: &DetectorConfig, flat: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(cfg);
        if flat.len() != p.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                p.param_count(),
                flat.len()
            )));
        }
        let mut i = 0;
        let mut take = |n: usize| {
            let s = &flat[i..i + n];
            i += n;
            s.to_vec()
        };
        p.gate_logits = take(INPUT_DIMS);
        p.mix_weights = take(INPUT_DIMS * cfg.d_u);
        p.mix_bias = take(cfg.d_u);
        p.cls_weights = take(cfg.d_u);
        p.cls_bias = take(1)[0];
        p.mask_weights = take(cfg.d_u);
        p.mask_bias = take(1)[0];
        Ok(p)
    }
}

/// Everything backward needs: per-cell fused inputs, gate activations and
/// mixed outputs.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    cells: usize,
    d_u: usize,
    /// Per-cell concatenated (content, residual) inputs, cell-major.
    v: Vec<f64>,
    /// sigmoid(gate_logits), length INPUT_DIMS.
    gate_sig: Vec<f64>,
    /// Per-cell mixed vectors u, cell-major.
    u: Vec<f64>,
    /// Mean of u over cells.
    u_mean: Vec<f64>,
}

/// Detector output: scalar logit, G x G mask logits, working-resolution
/// evidence map (sigmoid of mask logits, bilinearly upsampled), and the
/// cached intermediates for backprop.
#[derive(Debug, Clone)]
pub struct ModelOutput {
    pub logit: f64,
    pub mask_logits: Grid,
    pub evidence: Grid,
    pub cache: ForwardCache,
}

/// Gated fusion: per cell v = concat(content, residual); gated = sigmoid(gate)
/// ⊙ v; u = W^T gated + b.
pub fn fuse(
    content: &FeatureGrid,
    residual: &FeatureGrid,
    p: &DetectorParams,
) -> Result<FeatureGrid> {
    if content.cells() != residual.cells() {
        return Err(Error::Shape("content/residual cell grids differ".into()));
    }
    if content.dims() + residual.dims() != INPUT_DIMS
        || p.gate_logits.len() != INPUT_DIMS
        || p.mix_weights.len() != INPUT_DIMS * p.d_u
    {
        return Err(Error::Shape("fusion dimensions do not match params".into()));
    }
    let cells = content.cells();
    let mut fused = FeatureGrid::zeros(cells, p.d_u, StreamTag::Fused);
    let gate_sig: Vec<f64> = p.gate_logits.iter().map(|&g| sigmoid(g)).collect();
    for cell in 0..cells * cells {
        let mut v = [0.0; INPUT_DIMS];
        v[..CONTENT_DIMS].copy_from_slice(content.cell(cell));
        v[CONTENT_DIMS..].copy_from_slice(residual.cell(cell));
        let out = fused.cell_mut(cell);
        for (j, o) in out.iter_mut().enumerate() {
            let mut acc = p.mix_bias[j];
            for i in 0..INPUT_DIMS {
                acc += p.mix_weights[i * p.d_u + j] * gate_sig[i] * v[i];
            }
            *o = acc;
        }
    }
    Ok(fused)
}

/// Full forward pass: features -> fusion -> heads. The scalar logit is the
/// cls head on the global average of u; mask logits are the per-cell mask
/// head; evidence is sigmoid(mask logits) upsampled to working resolution.
pub fn forward(x: &StandardizedImage, p: &DetectorParams) -> ModelOutput {
    let residuals = extract_residuals(x);
    let (content, residual) = extract_features(x, &residuals, p.mask_grid);
    forward_from_features(&content, &residual, p, x.size())
}

/// Forward pass from precomputed feature grids (shared by tests that probe
/// head behavior directly).
pub fn forward_from_features(
    content: &FeatureGrid,
    residual: &FeatureGrid,
    p: &DetectorParams,
    working_size: usize,
) -> ModelOutput {
    let cells = content.cells();
    let n_cells = cells * cells;
    let gate_sig: Vec<f64> = p.gate_logits.iter().map(|&g| sigmoid(g)).collect();

    let mut v = vec![0.0; n_cells * INPUT_DIMS];
    let mut u = vec![0.0; n_cells * p.d_u];
    let mut u_mean = vec![0.0; p.d_u];
    let mut mask_logits = Grid::zeros(cells, cells);

    for cell in 0..n_cells {
        let vc = &mut v[cell * INPUT_DIMS..(cell + 1) * INPUT_DIMS];
        vc[..CONTENT_DIMS].copy_from_slice(content.cell(cell));
        vc[CONTENT_DIMS..].copy_from_slice(residual.cell(cell));
        let uc = &mut u[cell * p.d_u..(cell + 1) * p.d_u];
        let mut z = p.mask_bias;
        for j in 0..p.d_u {
            let mut acc = p.mix_bias[j];
            for i in 0..INPUT_DIMS {
                acc += p.mix_weights[i * p.d_u + j] * gate_sig[i] * vc[i];
            }
            uc[j] = acc;
            u_mean[j] += acc;
            z += p.mask_weights[j] * acc;
        }
        mask_logits.data_mut()[cell] = z;
    }
    for m in &mut u_mean {
        *m /= n_cells as f64;
    }
    let logit = p.cls_bias
        + p.cls_weights
            .iter()
            .zip(&u_mean)
            .map(|(w, m)| w * m)
            .sum::<f64>();

    let evidence = resize_grid(&mask_logits.map(sigmoid), working_size, working_size);

    ModelOutput {
        logit,
        mask_logits,
        evidence,
        cache: ForwardCache {
            cells,
            d_u: p.d_u,
            v,
            gate_sig,
            u,
            u_mean,
        },
    }
}

/// Exact analytic gradients of a scalar loss with upstream derivatives
/// `d_logit` (w.r.t. the scalar logit) and `d_mask` (w.r.t. the G x G mask
/// logits). Returns a parameter-shaped gradient record.
pub fn backward(cache: &ForwardCache, p: &DetectorParams, d_logit: f64, d_mask: &Grid) -> Result<DetectorParams> {
    let cells = cache.cells;
    let n_cells = cells * cells;
    if d_mask.h() != cells || d_mask.w() != cells {
        return Err(Error::Shape(format!(
            "mask gradient is {}x{}, cache has {cells}x{cells} cells",
            d_mask.h(),
            d_mask.w()
        )));
    }
    if cache.d_u != p.d_u {
        return Err(Error::Shape("cache width differs from params".into()));
    }
    let mut g = DetectorParams::zeros(&p.config());

    // heads
    g.cls_bias = d_logit;
    for j in 0..p.d_u {
        g.cls_weights[j] = d_logit * cache.u_mean[j];
    }
    let inv_cells = 1.0 / n_cells as f64;

    for cell in 0..n_cells {
        let dz = d_mask.data()[cell];
        let uc = &cache.u[cell * p.d_u..(cell + 1) * p.d_u];
        let vc = &cache.v[cell * INPUT_DIMS..(cell + 1) * INPUT_DIMS];
        g.mask_bias += dz;
        // du = dz * mask_w + d_logit/n * cls_w
        for j in 0..p.d_u {
            g.mask_weights[j] += dz * uc[j];
            let du = dz * p.mask_weights[j] + d_logit * inv_cells * p.cls_weights[j];
            if du == 0.0 {
                continue;
            }
            g.mix_bias[j] += du;
            for i in 0..INPUT_DIMS {
                let gated = cache.gate_sig[i] * vc[i];
                g.mix_weights[i * p.d_u + j] += du * gated;
                // d gated_i accumulated straight into the gate gradient
                g.gate_logits[i] += du * p.mix_weights[i * p.d_u + j] * vc[i];
            }
        }
    }
    // chain through sigmoid on the gates
    for i in 0..INPUT_DIMS {
        let s = cache.gate_sig[i];
        g.gate_logits[i] *= s * (1.0 - s);
    }
    Ok(g)
}

pub use serialize::{read_checkpoint, write_checkpoint};
