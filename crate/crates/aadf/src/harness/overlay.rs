//! Evidence overlay export: blend a fixed orange tint over the image with
//! per-pixel alpha proportional to the evidence map.

use std::path::Path;

use crate::error::Result;
use crate::imagecore::{resize_grid, save_image, Grid, Image};

const ORANGE: [f64; 3] = [1.0, 0.5, 0.0];

/// Blend evidence over the image: out = (1 - a) * img + a * orange with
/// a = 0.75 * evidence, evidence resized to the image grid when needed.
pub fn overlay_image(img: &Image, evidence: &Grid) -> Image {
    let (h, w) = (img.height(), img.width());
    let ev = if evidence.h() == h && evidence.w() == w {
        evidence.clone()
    } else {
        resize_grid(evidence, h, w)
    };
    let mut out = img.clone();
    let plane = h * w;
    for c in 0..3 {
        for i in 0..plane {
            let a = 0.75 * ev.data()[i].clamp(0.0, 1.0);
            let v = (1.0 - a) * img.data()[c * plane + i] + a * ORANGE[c];
            out.data_mut()[c * plane + i] = v;
        }
    }
    out
}

/// Render and write a PNG overlay.
pub fn render_overlay(img: &Image, evidence: &Grid, out_path: impl AsRef<Path>) -> Result<()> {
    save_image(&overlay_image(img, evidence), out_path)
}
