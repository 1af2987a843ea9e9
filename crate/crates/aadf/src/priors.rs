//! Weak face-region priors: soft [0, 1] maps built from face boxes, and
//! their transport through geometric attacks so supervision stays aligned
//! with the transformed image.
//!
//! Boxes are ingested from dataset manifests; nothing here runs a face
//! detector.

use serde::{Deserialize, Serialize};

use crate::attacks::{warp_field, AttackFamily, AttackInstance, AttackParams};
use crate::error::{Error, Result};
use crate::imagecore::{bilinear_sample, gaussian_blur, resize_grid, Grid, Mask};
use crate::util::round_half_up;

/// Axis-aligned face box in source-image pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl FaceBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        if !(x0 < x1 && y0 < y1) || x0 < 0.0 || y0 < 0.0 {
            return Err(Error::Invalid(format!(
                "degenerate face box ({x0},{y0})-({x1},{y1})"
            )));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }
}

/// Prior construction knobs; the paper-facing defaults are margin 0.15 and
/// sigma_frac 0.05.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub margin: f64,
    pub sigma_frac: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            margin: 0.15,
            sigma_frac: 0.05,
        }
    }
}

/// Per-pixel soft prior at working resolution plus the box it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakPrior {
    pub grid: Grid,
    pub source_box: FaceBox,
    pub source_h: usize,
    pub source_w: usize,
}

/// Binary stage of prior construction: the margin-expanded box, clipped to
/// the image and rasterized at working resolution by pixel centers.
pub fn expanded_box_mask(
    face: &FaceBox,
    src_h: usize,
    src_w: usize,
    working_size: usize,
    margin: f64,
) -> Result<Mask> {
    if face.x1 > src_w as f64 || face.y1 > src_h as f64 {
        return Err(Error::Invalid(format!(
            "face box ({},{})-({},{}) exceeds {}x{} image",
            face.x0, face.y0, face.x1, face.y1, src_h, src_w
        )));
    }
    let mx = margin * face.width();
    let my = margin * face.height();
    let x0 = (face.x0 - mx).max(0.0);
    let x1 = (face.x1 + mx).min(src_w as f64);
    let y0 = (face.y0 - my).max(0.0);
    let y1 = (face.y1 + my).min(src_h as f64);
    if !(x0 < x1 && y0 < y1) {
        return Err(Error::Invalid("face box degenerate after clipping".into()));
    }
    // map to working coordinates
    let sx = working_size as f64 / src_w as f64;
    let sy = working_size as f64 / src_h as f64;
    let (wx0, wx1, wy0, wy1) = (x0 * sx, x1 * sx, y0 * sy, y1 * sy);
    let mut mask = Mask::new(working_size, working_size);
    let mut any = false;
    for y in 0..working_size {
        let cy = y as f64 + 0.5;
        if cy < wy0 || cy >= wy1 {
            continue;
        }
        for x in 0..working_size {
            let cx = x as f64 + 0.5;
            if cx >= wx0 && cx < wx1 {
                mask.set(y, x, true);
                any = true;
            }
        }
    }
    if !any {
        return Err(Error::Invalid(
            "face box covers no pixel centers at working resolution".into(),
        ));
    }
    Ok(mask)
}

/// Build a weak prior: expand the box by `margin` of its own width/height on
/// each side, clip, rasterize at `working_size`, soften with a Gaussian of
/// sigma = `sigma_frac` * working_size and renormalize the maximum to 1.
/// Defaults: margin 0.15, sigma_frac 0.05.
pub fn build_prior(
    face: &FaceBox,
    src_h: usize,
    src_w: usize,
    working_size: usize,
    margin: f64,
    sigma_frac: f64,
) -> Result<WeakPrior> {
    if margin < 0.0 || sigma_frac <= 0.0 {
        return Err(Error::Invalid(
            "margin must be >= 0 and sigma_frac > 0".into(),
        ));
    }
    let mask = expanded_box_mask(face, src_h, src_w, working_size, margin)?;
    let binary = Grid::from_vec(
        working_size,
        working_size,
        mask.data().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
    );
    let blurred = gaussian_blur(&binary, sigma_frac * working_size as f64);
    let max = blurred.max_value();
    debug_assert!(max > 0.0);
    let grid = blurred.map(|v| (v / max).clamp(0.0, 1.0));
    Ok(WeakPrior {
        grid,
        source_box: *face,
        source_h: src_h,
        source_w: src_w,
    })
}

/// Transport a prior through an attack so it stays aligned with the attacked
/// image. Photometric families (jpeg, regrain, gamma, seam) leave the grid
/// bit-identical; warp replays the same displacement field rescaled to
/// working resolution; transcode replays the same down/up factors.
pub fn transform_prior(prior: &WeakPrior, inst: &AttackInstance) -> WeakPrior {
    match &inst.params {
        AttackParams::Warp {
            amplitude,
            field_seed,
        } => {
            let (h, w) = (prior.grid.h(), prior.grid.w());
            let scale_x = w as f64 / prior.source_w as f64;
            let scale_y = h as f64 / prior.source_h as f64;
            let (dx, dy) = warp_field(h, w, *amplitude, *field_seed, scale_x, scale_y);
            let mut out = Grid::zeros(h, w);
            for y in 0..h {
                for x in 0..w {
                    let v = bilinear_sample(
                        &prior.grid,
                        x as f64 + dx.at(y, x),
                        y as f64 + dy.at(y, x),
                    );
                    out.set(y, x, v.clamp(0.0, 1.0));
                }
            }
            WeakPrior {
                grid: out,
                ..prior.clone()
            }
        }
        AttackParams::Transcode { factor, .. } => {
            let (h, w) = (prior.grid.h(), prior.grid.w());
            let oh = (round_half_up(factor * h as f64) as usize).max(1);
            let ow = (round_half_up(factor * w as f64) as usize).max(1);
            let down = resize_grid(&prior.grid, oh, ow);
            let up = resize_grid(&down, h, w);
            WeakPrior {
                grid: up.map(|v| v.clamp(0.0, 1.0)),
                ..prior.clone()
            }
        }
        _ => {
            debug_assert!(inst.family.is_photometric());
            prior.clone()
        }
    }
}

/// Families whose application needs the prior itself (seam) versus pure
/// pixel transforms.
pub fn requires_prior(family: AttackFamily) -> bool {
    matches!(family, AttackFamily::Seam)
}
