//! Fixed-filter feature extraction: high-pass residual planes and per-cell
//! content/residual statistics.

use super::{FeatureGrid, StreamTag, CONTENT_DIMS, RESIDUAL_DIMS};
use crate::imagecore::{Grid, StandardizedImage};

/// 4-neighbor Laplacian.
const LAPLACIAN: [[f64; 3]; 3] = [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]];

/// 5x5 second-order residual predictor (SRM convention), center 12,
/// normalized by 12.
const KB: [[f64; 5]; 5] = [
    [1.0, -2.0, 2.0, -2.0, 1.0],
    [-2.0, 6.0, -8.0, 6.0, -2.0],
    [2.0, -8.0, 12.0, -8.0, 2.0],
    [-2.0, 6.0, -8.0, 6.0, -2.0],
    [1.0, -2.0, 2.0, -2.0, 1.0],
];

fn correlate<const K: usize>(g: &Grid, kernel: &[[f64; K]; K], scale: f64) -> Grid {
    let (h, w) = (g.h(), g.w());
    let r = (K / 2) as isize;
    let mut out = Grid::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ky, row) in kernel.iter().enumerate() {
                let sy = (y as isize + ky as isize - r).clamp(0, h as isize - 1) as usize;
                for (kx, &kv) in row.iter().enumerate() {
                    if kv == 0.0 {
                        continue;
                    }
                    let sx = (x as isize + kx as isize - r).clamp(0, w as isize - 1) as usize;
                    acc += kv * g.at(sy, sx);
                }
            }
            out.set(y, x, acc * scale);
        }
    }
    out
}

/// Forward difference along x with replicate padding: out = x(i, j+1) - x(i, j).
fn diff_x(g: &Grid) -> Grid {
    let (h, w) = (g.h(), g.w());
    let mut out = Grid::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            out.set(y, x, g.at(y, (x + 1).min(w - 1)) - g.at(y, x));
        }
    }
    out
}

fn diff_y(g: &Grid) -> Grid {
    let (h, w) = (g.h(), g.w());
    let mut out = Grid::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            out.set(y, x, g.at((y + 1).min(h - 1), x) - g.at(y, x));
        }
    }
    out
}

/// Manipulation-sensitive residual planes of the standardized luminance:
/// Laplacian, first-order horizontal, first-order vertical, and the 5x5
/// second-order predictor. Replicate padding.
pub fn extract_residuals(x: &StandardizedImage) -> [Grid; 4] {
    let luma = x.luminance();
    [
        correlate(&luma, &LAPLACIAN, 1.0),
        diff_x(&luma),
        diff_y(&luma),
        correlate(&luma, &KB, 1.0 / 12.0),
    ]
}

/// Orthonormal 2-D DCT coefficient (k, l) of a cell.
fn dct_coeff(
    g: &Grid,
    y0: usize,
    y1: usize,
    x0: usize,
    x1: usize,
    k: usize,
    l: usize,
) -> f64 {
    let nh = (y1 - y0) as f64;
    let nw = (x1 - x0) as f64;
    let ak = if k == 0 { (1.0 / nh).sqrt() } else { (2.0 / nh).sqrt() };
    let al = if l == 0 { (1.0 / nw).sqrt() } else { (2.0 / nw).sqrt() };
    let mut acc = 0.0;
    for (iy, y) in (y0..y1).enumerate() {
        let cy = (std::f64::consts::PI * (2.0 * iy as f64 + 1.0) * k as f64 / (2.0 * nh)).cos();
        for (ix, x) in (x0..x1).enumerate() {
            let cx =
                (std::f64::consts::PI * (2.0 * ix as f64 + 1.0) * l as f64 / (2.0 * nw)).cos();
            acc += g.at(y, x) * cy * cx;
        }
    }
    ak * al * acc
}

/// Per-cell feature grids over a G x G integer partition of the raster.
///
/// Content features (9 dims): per-channel mean, per-channel std, and
/// per-channel low-band DCT energy (sum of squared (0,1), (1,0), (1,1)
/// orthonormal coefficients of the cell).
/// Residual features (8 dims): mean absolute value and std of each of the 4
/// residual planes, interleaved as [mabs_0, std_0, ..., mabs_3, std_3].
pub fn extract_features(
    x: &StandardizedImage,
    residuals: &[Grid; 4],
    cells: usize,
) -> (FeatureGrid, FeatureGrid) {
    let size = x.size();
    assert!(cells >= 1 && cells <= size, "cell grid must divide into the raster");
    let channel_grids: Vec<Grid> = (0..3)
        .map(|c| Grid::from_vec(size, size, x.channel(c).to_vec()))
        .collect();

    let mut content = FeatureGrid::zeros(cells, CONTENT_DIMS, StreamTag::Content);
    let mut residual = FeatureGrid::zeros(cells, RESIDUAL_DIMS, StreamTag::Residual);

    for gy in 0..cells {
        let y0 = gy * size / cells;
        let y1 = (gy + 1) * size / cells;
        for gx in 0..cells {
            let x0 = gx * size / cells;
            let x1 = (gx + 1) * size / cells;
            let n = ((y1 - y0) * (x1 - x0)) as f64;
            let cell = gy * cells + gx;

            let cf = content.cell_mut(cell);
            for (c, ch) in channel_grids.iter().enumerate() {
                let mut sum = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        sum += ch.at(y, x);
                    }
                }
                let mean = sum / n;
                let mut var = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        let d = ch.at(y, x) - mean;
                        var += d * d;
                    }
                }
                cf[c] = mean;
                cf[3 + c] = (var / n).sqrt();
                let c01 = dct_coeff(ch, y0, y1, x0, x1, 0, 1);
                let c10 = dct_coeff(ch, y0, y1, x0, x1, 1, 0);
                let c11 = dct_coeff(ch, y0, y1, x0, x1, 1, 1);
                cf[6 + c] = c01 * c01 + c10 * c10 + c11 * c11;
            }

            let rf = residual.cell_mut(cell);
            for (r, plane) in residuals.iter().enumerate() {
                let mut abs_sum = 0.0;
                let mut sum = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        let v = plane.at(y, x);
                        abs_sum += v.abs();
                        sum += v;
                    }
                }
                let mean = sum / n;
                let mut var = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        let d = plane.at(y, x) - mean;
                        var += d * d;
                    }
                }
                rf[2 * r] = abs_sum / n;
                rf[2 * r + 1] = (var / n).sqrt();
            }
        }
    }
    (content, residual)
}
