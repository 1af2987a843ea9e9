//! Spatial filters: Sobel edge magnitude, separable Gaussian blur and
//! Chebyshev (square) binary dilation. Replicate padding everywhere.

use super::{Grid, Image, Mask};
use crate::error::{Error, Result};

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

#[inline]
fn clamp_idx(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

/// 3x3 correlation with replicate padding.
pub(crate) fn correlate3(g: &Grid, k: &[[f64; 3]; 3]) -> Grid {
    let (h, w) = (g.h(), g.w());
    let mut out = Grid::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for dy in -1..=1isize {
                let sy = clamp_idx(y as isize + dy, h);
                for dx in -1..=1isize {
                    let sx = clamp_idx(x as isize + dx, w);
                    acc += k[(dy + 1) as usize][(dx + 1) as usize] * g.at(sy, sx);
                }
            }
            out.set(y, x, acc);
        }
    }
    out
}

/// Adjoint of `correlate3` (scatter with the same border clamping).
fn correlate3_adjoint(d_out: &Grid, k: &[[f64; 3]; 3]) -> Grid {
    let (h, w) = (d_out.h(), d_out.w());
    let mut d_in = Grid::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let g = d_out.at(y, x);
            if g == 0.0 {
                continue;
            }
            for dy in -1..=1isize {
                let sy = clamp_idx(y as isize + dy, h);
                for dx in -1..=1isize {
                    let sx = clamp_idx(x as isize + dx, w);
                    let kv = k[(dy + 1) as usize][(dx + 1) as usize];
                    d_in.set(sy, sx, d_in.at(sy, sx) + kv * g);
                }
            }
        }
    }
    d_in
}

/// Both Sobel responses; shared by the magnitude and by loss gradients.
pub(crate) fn sobel_gradients(g: &Grid) -> (Grid, Grid) {
    (correlate3(g, &SOBEL_X), correlate3(g, &SOBEL_Y))
}

/// Backpropagate gradients w.r.t. (Gx, Gy) to the filtered grid.
pub(crate) fn sobel_gradients_adjoint(d_gx: &Grid, d_gy: &Grid) -> Grid {
    let a = correlate3_adjoint(d_gx, &SOBEL_X);
    let b = correlate3_adjoint(d_gy, &SOBEL_Y);
    Grid::from_vec(
        a.h(),
        a.w(),
        a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect(),
    )
}

/// Sobel edge magnitude sqrt(Gx^2 + Gy^2); grid must be at least 3x3.
pub fn sobel_edges(g: &Grid) -> Result<Grid> {
    if g.h() < 3 || g.w() < 3 {
        return Err(Error::Invalid(format!(
            "sobel needs a grid of at least 3x3, got {}x{}",
            g.h(),
            g.w()
        )));
    }
    let (gx, gy) = sobel_gradients(g);
    Ok(Grid::from_vec(
        g.h(),
        g.w(),
        gx.data()
            .iter()
            .zip(gy.data())
            .map(|(&a, &b)| (a * a + b * b).sqrt())
            .collect(),
    ))
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    assert!(sigma > 0.0, "sigma must be positive");
    let radius = (3.0 * sigma).ceil() as usize;
    let mut k = Vec::with_capacity(2 * radius + 1);
    for i in -(radius as isize)..=(radius as isize) {
        let x = i as f64;
        k.push((-x * x / (2.0 * sigma * sigma)).exp());
    }
    let s: f64 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    k
}

fn convolve_1d_rows(g: &Grid, k: &[f64]) -> Grid {
    let (h, w) = (g.h(), g.w());
    let r = (k.len() / 2) as isize;
    let mut out = Grid::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, &kv) in k.iter().enumerate() {
                let sx = clamp_idx(x as isize + j as isize - r, w);
                acc += kv * g.at(y, sx);
            }
            out.set(y, x, acc);
        }
    }
    out
}

fn convolve_1d_cols(g: &Grid, k: &[f64]) -> Grid {
    let (h, w) = (g.h(), g.w());
    let r = (k.len() / 2) as isize;
    let mut out = Grid::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, &kv) in k.iter().enumerate() {
                let sy = clamp_idx(y as isize + j as isize - r, h);
                acc += kv * g.at(sy, x);
            }
            out.set(y, x, acc);
        }
    }
    out
}

/// Separable Gaussian blur, kernel radius ceil(3*sigma), normalized to sum 1,
/// replicate padding.
pub fn gaussian_blur(g: &Grid, sigma: f64) -> Grid {
    let k = gaussian_kernel(sigma);
    convolve_1d_cols(&convolve_1d_rows(g, &k), &k)
}

/// Per-channel Gaussian blur of a 3-channel image.
pub fn gaussian_blur_image(img: &Image, sigma: f64) -> Image {
    let k = gaussian_kernel(sigma);
    let mut data = Vec::with_capacity(img.data().len());
    for c in 0..3 {
        let plane = convolve_1d_cols(&convolve_1d_rows(&img.channel_grid(c), &k), &k);
        data.extend_from_slice(plane.data());
    }
    Image::from_planar(img.height(), img.width(), data)
}

/// Binary dilation with a square structuring element: output is true where
/// any true pixel lies within Chebyshev distance <= radius. Separable.
pub fn dilate(mask: &Mask, radius: usize) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let (h, w) = (mask.h(), mask.w());
    let r = radius as isize;
    let mut rows = Mask::new(h, w);
    for y in 0..h {
        for x in 0..w {
            let lo = (x as isize - r).max(0) as usize;
            let hi = (x as isize + r).min(w as isize - 1) as usize;
            let mut any = false;
            for sx in lo..=hi {
                if mask.at(y, sx) {
                    any = true;
                    break;
                }
            }
            rows.set(y, x, any);
        }
    }
    let mut out = Mask::new(h, w);
    for y in 0..h {
        for x in 0..w {
            let lo = (y as isize - r).max(0) as usize;
            let hi = (y as isize + r).min(h as isize - 1) as usize;
            let mut any = false;
            for sy in lo..=hi {
                if rows.at(sy, x) {
                    any = true;
                    break;
                }
            }
            out.set(y, x, any);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_grid(h: usize, w: usize, seed: u64) -> Grid {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Grid::from_vec(h, w, (0..h * w).map(|_| rng.gen::<f64>()).collect())
    }

    #[test]
    fn sobel_of_constant_is_zero() {
        let g = Grid::constant(7, 9, 0.42);
        let e = sobel_edges(&g).unwrap();
        assert!(e.data().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn sobel_rejects_tiny_grids() {
        assert!(sobel_edges(&Grid::zeros(2, 5)).is_err());
    }

    #[test]
    fn sobel_step_response_is_four_at_the_step() {
        // vertical step 0 -> 1 at column c: direct 3x3 convolution oracle
        let (h, w, c) = (8, 10, 4);
        let mut g = Grid::zeros(h, w);
        for y in 0..h {
            for x in c..w {
                g.set(y, x, 1.0);
            }
        }
        let e = sobel_edges(&g).unwrap();
        let max = e.max_value();
        assert!((max - 4.0).abs() < 1e-12, "max response {max}");
        for y in 1..h - 1 {
            for x in 0..w {
                let v = e.at(y, x);
                if x == c - 1 || x == c {
                    assert!((v - 4.0).abs() < 1e-12, "expected 4 at column {x}");
                } else {
                    assert!(v.abs() < 1e-12, "expected 0 at column {x}, got {v}");
                }
            }
        }
    }

    #[test]
    fn sobel_commutes_with_transpose() {
        let g = random_grid(6, 9, 3);
        let mut gt = Grid::zeros(9, 6);
        for y in 0..6 {
            for x in 0..9 {
                gt.set(x, y, g.at(y, x));
            }
        }
        let e = sobel_edges(&g).unwrap();
        let et = sobel_edges(&gt).unwrap();
        for y in 0..6 {
            for x in 0..9 {
                assert!((e.at(y, x) - et.at(x, y)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sobel_is_positively_homogeneous() {
        let g = random_grid(5, 5, 9);
        let e1 = sobel_edges(&g).unwrap();
        let e3 = sobel_edges(&g.map(|v| 3.0 * v)).unwrap();
        for (a, b) in e1.data().iter().zip(e3.data()) {
            assert!((3.0 * a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn blur_keeps_constants() {
        let g = Grid::constant(12, 12, 0.77);
        let b = gaussian_blur(&g, 1.3);
        assert!(b.data().iter().all(|&v| (v - 0.77).abs() < 1e-12));
    }

    #[test]
    fn blur_impulse_matches_dense_convolution_oracle() {
        let sigma = 1.0;
        let k = gaussian_kernel(sigma);
        let r = k.len() / 2;
        let n = 4 * r + 1; // impulse far from borders
        let mut g = Grid::zeros(n, n);
        g.set(n / 2, n / 2, 1.0);
        let b = gaussian_blur(&g, sigma);
        // dense 2-D kernel = outer product of the normalized 1-D kernel
        for dy in 0..k.len() {
            for dx in 0..k.len() {
                let y = n / 2 + dy - r;
                let x = n / 2 + dx - r;
                assert!((b.at(y, x) - k[dy] * k[dx]).abs() < 1e-14);
            }
        }
        assert!((b.at(n / 2, n / 2) - k[r] * k[r]).abs() < 1e-14);
    }

    #[test]
    fn blur_preserves_mass_on_interior_support() {
        let mut g = Grid::zeros(30, 30);
        for y in 12..18 {
            for x in 12..18 {
                g.set(y, x, 0.9);
            }
        }
        let b = gaussian_blur(&g, 1.0);
        assert!((b.sum() - g.sum()).abs() < 1e-9);
    }

    #[test]
    fn blur_bounds_unit_interval() {
        let g = random_grid(16, 16, 1);
        let b = gaussian_blur(&g, 2.0);
        assert!(b.data().iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)));
    }

    #[test]
    fn dilate_radius_zero_is_identity() {
        let mut m = Mask::new(6, 6);
        m.set(2, 3, true);
        assert_eq!(dilate(&m, 0), m);
    }

    #[test]
    fn dilate_single_pixel_gives_square_block() {
        let mut m = Mask::new(9, 9);
        m.set(4, 4, true);
        let d = dilate(&m, 2);
        for y in 0..9 {
            for x in 0..9 {
                let inside = (2..=6).contains(&y) && (2..=6).contains(&x);
                assert_eq!(d.at(y, x), inside, "at ({y},{x})");
            }
        }
        // clipping at borders
        let mut corner = Mask::new(5, 5);
        corner.set(0, 0, true);
        let dc = dilate(&corner, 2);
        assert_eq!(dc.count(), 9);
    }

    #[test]
    fn dilate_composes_additively() {
        // brute-force distance oracle on a random mask
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let mut m = Mask::new(14, 11);
        for y in 0..14 {
            for x in 0..11 {
                if rng.gen::<f64>() < 0.1 {
                    m.set(y, x, true);
                }
            }
        }
        let once = dilate(&dilate(&m, 2), 3);
        let combined = dilate(&m, 5);
        assert_eq!(once, combined);
        // independent Chebyshev-distance check
        for y in 0..14 {
            for x in 0..11 {
                let mut near = false;
                for sy in 0..14 {
                    for sx in 0..11 {
                        if m.at(sy, sx)
                            && (sy as isize - y as isize).abs().max((sx as isize - x as isize).abs())
                                <= 5
                        {
                            near = true;
                        }
                    }
                }
                assert_eq!(combined.at(y, x), near);
            }
        }
    }

    #[test]
    fn dilate_is_monotone() {
        let mut small = Mask::new(10, 10);
        small.set(3, 3, true);
        small.set(7, 2, true);
        let mut big = small.clone();
        big.set(5, 8, true);
        assert!(dilate(&small, 2).is_subset_of(&dilate(&big, 2)));
    }

    #[test]
    fn filters_preserve_shape() {
        let g = random_grid(13, 7, 4);
        assert_eq!(
            (g.h(), g.w()),
            (sobel_edges(&g).unwrap().h(), sobel_edges(&g).unwrap().w())
        );
        let b = gaussian_blur(&g, 0.8);
        assert_eq!((b.h(), b.w()), (13, 7));
    }
}
