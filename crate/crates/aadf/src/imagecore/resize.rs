//! Bilinear resampling, align-corners-false with half-pixel centers.

use super::{Grid, Image};
use crate::error::{Error, Result};

#[inline]
fn source_coord(dst: usize, scale: f64, src_len: usize) -> (usize, usize, f64) {
    let s = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, s - i0 as f64)
}

/// Bilinear resize of one grid. Source coordinate convention:
/// s = (d + 0.5) * in/out - 0.5, clamped to borders.
pub fn resize_grid(g: &Grid, oh: usize, ow: usize) -> Grid {
    assert!(oh >= 1 && ow >= 1, "resize target must be at least 1x1");
    let (ih, iw) = (g.h(), g.w());
    if oh == ih && ow == iw {
        return g.clone();
    }
    let sy = ih as f64 / oh as f64;
    let sx = iw as f64 / ow as f64;
    let mut out = Grid::zeros(oh, ow);
    for y in 0..oh {
        let (y0, y1, fy) = source_coord(y, sy, ih);
        for x in 0..ow {
            let (x0, x1, fx) = source_coord(x, sx, iw);
            let top = g.at(y0, x0) * (1.0 - fx) + g.at(y0, x1) * fx;
            let bot = g.at(y1, x0) * (1.0 - fx) + g.at(y1, x1) * fx;
            out.set(y, x, top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

/// Adjoint of `resize_grid` as a linear map: scatters output-side gradients
/// back onto the input grid.
pub(crate) fn resize_grid_adjoint(d_out: &Grid, ih: usize, iw: usize) -> Grid {
    let (oh, ow) = (d_out.h(), d_out.w());
    if oh == ih && ow == iw {
        return d_out.clone();
    }
    let sy = ih as f64 / oh as f64;
    let sx = iw as f64 / ow as f64;
    let mut d_in = Grid::zeros(ih, iw);
    for y in 0..oh {
        let (y0, y1, fy) = source_coord(y, sy, ih);
        for x in 0..ow {
            let (x0, x1, fx) = source_coord(x, sx, iw);
            let g = d_out.at(y, x);
            d_in.set(y0, x0, d_in.at(y0, x0) + g * (1.0 - fy) * (1.0 - fx));
            d_in.set(y0, x1, d_in.at(y0, x1) + g * (1.0 - fy) * fx);
            d_in.set(y1, x0, d_in.at(y1, x0) + g * fy * (1.0 - fx));
            d_in.set(y1, x1, d_in.at(y1, x1) + g * fy * fx);
        }
    }
    d_in
}

/// Bilinear resize of a 3-channel image.
pub fn resize_bilinear(img: &Image, oh: usize, ow: usize) -> Result<Image> {
    if oh < 1 || ow < 1 {
        return Err(Error::Invalid("resize target must be at least 1x1".into()));
    }
    if oh == img.height() && ow == img.width() {
        return Ok(img.clone());
    }
    let mut data = Vec::with_capacity(oh * ow * 3);
    for c in 0..3 {
        let plane = resize_grid(&img.channel_grid(c), oh, ow);
        data.extend_from_slice(plane.data());
    }
    Ok(Image::from_planar(oh, ow, data))
}

/// Bilinear point sample with border clamping; `x`, `y` in pixel coordinates.
pub fn bilinear_sample(g: &Grid, x: f64, y: f64) -> f64 {
    let (ih, iw) = (g.h(), g.w());
    let sy = y.clamp(0.0, (ih - 1) as f64);
    let sx = x.clamp(0.0, (iw - 1) as f64);
    let y0 = sy.floor() as usize;
    let x0 = sx.floor() as usize;
    let y1 = (y0 + 1).min(ih - 1);
    let x1 = (x0 + 1).min(iw - 1);
    let fy = sy - y0 as f64;
    let fx = sx - x0 as f64;
    let top = g.at(y0, x0) * (1.0 - fx) + g.at(y0, x1) * fx;
    let bot = g.at(y1, x0) * (1.0 - fx) + g.at(y1, x1) * fx;
    top * (1.0 - fy) + bot * fy
}
