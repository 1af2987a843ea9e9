//! Deterministic application of attack instances to images.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::{AttackInstance, AttackParams};
use crate::error::{Error, Result};
use crate::imagecore::{
    bilinear_sample, dilate, gaussian_blur_image, jpeg_sim, resize_bilinear, resize_grid, Grid,
    Image, JpegSimParams,
};
use crate::priors::WeakPrior;
use crate::util::round_half_up;

/// Shift content by (dx, dy) pixels, filling vacated pixels by edge
/// replication. Positive offsets move content right/down.
pub fn translate_replicate(img: &Image, dx: i32, dy: i32) -> Image {
    if dx == 0 && dy == 0 {
        return img.clone();
    }
    let (h, w) = (img.height(), img.width());
    let plane = h * w;
    let mut data = vec![0.0; 3 * plane];
    for c in 0..3 {
        let src = img.channel(c);
        for y in 0..h {
            let sy = (y as i32 - dy).clamp(0, h as i32 - 1) as usize;
            for x in 0..w {
                let sx = (x as i32 - dx).clamp(0, w as i32 - 1) as usize;
                data[c * plane + y * w + x] = src[sy * w + sx];
            }
        }
    }
    Image::from_planar(h, w, data)
}

/// Realign + recompress: shift block phase, JPEG-simulate, shift back so the
/// output stays pixel-aligned with the clean view.
pub fn apply_jpeg(img: &Image, dx: u8, dy: u8, quality: u8) -> Result<Image> {
    let shifted = translate_replicate(img, dx as i32, dy as i32);
    let coded = jpeg_sim(&shifted, &JpegSimParams::new(quality)?);
    Ok(translate_replicate(&coded, -(dx as i32), -(dy as i32)))
}

/// Dense displacement field from an 8x8 control grid of i.i.d.
/// uniform[-amplitude, amplitude] 2-vectors, bilinearly upsampled to
/// (h, w). `scale_x`/`scale_y` rescale the displacements so the same field
/// can be replayed at a different resolution (prior transport).
pub fn warp_field(
    h: usize,
    w: usize,
    amplitude: f64,
    field_seed: u64,
    scale_x: f64,
    scale_y: f64,
) -> (Grid, Grid) {
    let mut rng = ChaCha8Rng::seed_from_u64(field_seed);
    let dist = Uniform::new_inclusive(-amplitude, amplitude);
    let mut cx = Grid::zeros(8, 8);
    let mut cy = Grid::zeros(8, 8);
    for i in 0..8 {
        for j in 0..8 {
            cx.set(i, j, dist.sample(&mut rng));
            cy.set(i, j, dist.sample(&mut rng));
        }
    }
    let mut dx = resize_grid(&cx, h, w);
    let mut dy = resize_grid(&cy, h, w);
    if scale_x != 1.0 {
        for v in dx.data_mut() {
            *v *= scale_x;
        }
    }
    if scale_y != 1.0 {
        for v in dy.data_mut() {
            *v *= scale_y;
        }
    }
    (dx, dy)
}

/// Sub-pixel resampling warp: output(p) = bilinear sample of input at
/// p + D(p), border-clamped.
pub fn apply_warp(img: &Image, amplitude: f64, field_seed: u64) -> Image {
    let (h, w) = (img.height(), img.width());
    let (dx, dy) = warp_field(h, w, amplitude, field_seed, 1.0, 1.0);
    let plane = h * w;
    let mut data = vec![0.0; 3 * plane];
    for c in 0..3 {
        let src = img.channel_grid(c);
        for y in 0..h {
            for x in 0..w {
                let sx = x as f64 + dx.at(y, x);
                let sy = y as f64 + dy.at(y, x);
                data[c * plane + y * w + x] = bilinear_sample(&src, sx, sy);
            }
        }
    }
    Image::from_planar(h, w, data)
}

/// Denoise then regrain: per-channel Gaussian blur at `sigma_d`, plus seeded
/// i.i.d. zero-mean Gaussian noise of std `sigma_g`, clamped to [0, 1].
pub fn apply_regrain(img: &Image, sigma_d: f64, sigma_g: f64, grain_seed: u64) -> Image {
    let mut out = gaussian_blur_image(img, sigma_d);
    let mut rng = ChaCha8Rng::seed_from_u64(grain_seed);
    let noise = Normal::new(0.0, sigma_g).expect("sigma_g > 0");
    for v in out.data_mut() {
        *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
    }
    out
}

/// Boundary smoothing: blur the pixels within `band_radius` of the prior's
/// 0.5 level set; everything else passes through untouched. The 1-px linear
/// feather clamp(1 - chebyshev_distance(p, band), 0, 1) collapses to the band
/// indicator on the integer grid.
pub fn apply_seam(
    img: &Image,
    sigma_s: f64,
    band_radius: u32,
    prior: &WeakPrior,
) -> Result<Image> {
    let (h, w) = (img.height(), img.width());
    let grid = if prior.grid.h() == h && prior.grid.w() == w {
        prior.grid.clone()
    } else {
        resize_grid(&prior.grid, h, w)
    };
    let inside = grid.threshold(0.5);
    let band = dilate(&inside, band_radius as usize).and(&dilate(&inside.not(), band_radius as usize));
    if band.count() == 0 {
        return Ok(img.clone());
    }
    let blurred = gaussian_blur_image(img, sigma_s);
    let mut out = img.clone();
    let plane = h * w;
    for c in 0..3 {
        for i in 0..plane {
            if band.data()[i] {
                out.data_mut()[c * plane + i] = blurred.data()[c * plane + i];
            }
        }
    }
    Ok(out)
}

/// Mild tone mapping: clamp(gain_c * v^gamma, 0, 1) per channel, power taken
/// on nonnegative values. gamma == 1 short-circuits the power so the
/// identity configuration is bit-exact.
pub fn apply_gamma(img: &Image, gamma: f64, gains: [f64; 3]) -> Image {
    let mut out = img.clone();
    let plane = img.height() * img.width();
    for c in 0..3 {
        let gain = gains[c];
        for v in &mut out.data_mut()[c * plane..(c + 1) * plane] {
            let base = v.max(0.0);
            let powed = if gamma == 1.0 { base } else { base.powf(gamma) };
            *v = (gain * powed).clamp(0.0, 1.0);
        }
    }
    out
}

/// Social-app style transcode: downscale by `factor`, JPEG-simulate at
/// `quality`, upscale back to the original size.
pub fn apply_transcode(img: &Image, factor: f64, quality: u8) -> Result<Image> {
    let (h, w) = (img.height(), img.width());
    let oh = (round_half_up(factor * h as f64) as usize).max(1);
    let ow = (round_half_up(factor * w as f64) as usize).max(1);
    let small = resize_bilinear(img, oh, ow)?;
    let coded = jpeg_sim(&small, &JpegSimParams::new(quality)?);
    resize_bilinear(&coded, h, w)
}

/// Apply a fully materialized instance. Seam requires a prior region.
pub fn apply_attack(
    img: &Image,
    inst: &AttackInstance,
    prior: Option<&WeakPrior>,
) -> Result<Image> {
    match &inst.params {
        AttackParams::Jpeg { dx, dy, quality } => apply_jpeg(img, *dx, *dy, *quality),
        AttackParams::Warp {
            amplitude,
            field_seed,
        } => Ok(apply_warp(img, *amplitude, *field_seed)),
        AttackParams::Regrain {
            sigma_d,
            sigma_g,
            grain_seed,
        } => Ok(apply_regrain(img, *sigma_d, *sigma_g, *grain_seed)),
        AttackParams::Seam {
            sigma_s,
            band_radius,
        } => {
            let prior = prior.ok_or_else(|| {
                Error::Invalid("seam attack requires a weak prior region".into())
            })?;
            apply_seam(img, *sigma_s, *band_radius, prior)
        }
        AttackParams::Gamma {
            gamma,
            gain_r,
            gain_g,
            gain_b,
        } => Ok(apply_gamma(img, *gamma, [*gain_r, *gain_g, *gain_b])),
        AttackParams::Transcode { factor, quality } => apply_transcode(img, *factor, *quality),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::{sample_attack, AttackFamily};
    use crate::imagecore::psnr;
    use crate::priors::{build_prior, FaceBox};
    use rand::{Rng, SeedableRng};

    fn random_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(h, w, (0..h * w * 3).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    fn laplacian_energy(img: &Image) -> f64 {
        let g = img.channel_grid(0);
        let mut acc = 0.0;
        for y in 1..g.h() - 1 {
            for x in 1..g.w() - 1 {
                let v = -4.0 * g.at(y, x)
                    + g.at(y - 1, x)
                    + g.at(y + 1, x)
                    + g.at(y, x - 1)
                    + g.at(y, x + 1);
                acc += v * v;
            }
        }
        acc
    }

    #[test]
    fn jpeg_zero_shift_quality_100_is_near_lossless() {
        let img = random_image(32, 32, 1);
        let out = apply_jpeg(&img, 0, 0, 100).unwrap();
        assert!(psnr(&img, &out) >= 50.0);
    }

    #[test]
    fn jpeg_constant_image_stays_constant() {
        let img = Image::constant(16, 16, [0.4, 0.5, 0.6]);
        let out = apply_jpeg(&img, 3, 5, 60).unwrap();
        for c in 0..3 {
            let first = out.channel(c)[0];
            assert!(out.channel(c).iter().all(|&v| (v - first).abs() < 1e-9));
            assert!((first - img.get(c, 0, 0)).abs() < 0.02);
        }
    }

    #[test]
    fn jpeg_shift_moves_the_block_phase() {
        // block-boundary energy statistic: mean |column difference| grouped
        // by column index mod 8 peaks at the compression grid phase. Needs
        // smooth content so the quantization step at block seams dominates.
        let (h, w) = (64usize, 64usize);
        let mut data = Vec::with_capacity(h * w * 3);
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let u = x as f64 / 19.0 + c as f64;
                    let v = y as f64 / 23.0;
                    data.push((0.5 + 0.35 * u.sin() * v.cos()).clamp(0.0, 1.0));
                }
            }
        }
        let img = Image::new(h, w, data).unwrap();
        let phase_profile = |im: &Image| -> Vec<f64> {
            let g = im.channel_grid(1);
            let mut sums = vec![0.0; 8];
            let mut counts = vec![0usize; 8];
            for y in 0..g.h() {
                for x in 0..g.w() - 1 {
                    sums[x % 8] += (g.at(y, x + 1) - g.at(y, x)).abs();
                    counts[x % 8] += 1;
                }
            }
            sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect()
        };
        let argmax = |v: &[f64]| {
            v.iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0
        };
        let aligned = apply_jpeg(&img, 0, 0, 50).unwrap();
        let shifted = apply_jpeg(&img, 3, 0, 50).unwrap();
        let pa = argmax(&phase_profile(&aligned));
        let ps = argmax(&phase_profile(&shifted));
        assert_eq!(pa, 7, "aligned grid discontinuity between columns 7 and 8");
        assert_eq!(ps, 4, "dx=3 moves the discontinuity to columns 4|5");
    }

    #[test]
    fn warp_with_zero_amplitude_is_identity() {
        let img = random_image(24, 24, 2);
        let out = apply_warp(&img, 0.0, 99);
        assert_eq!(img, out);
    }

    #[test]
    fn warp_of_constant_is_constant() {
        let img = Image::constant(16, 16, [0.3, 0.3, 0.3]);
        let out = apply_warp(&img, 1.0, 5);
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn warp_field_statistics_respect_the_amplitude() {
        let a = 0.8;
        let (dx, dy) = warp_field(40, 40, a, 123, 1.0, 1.0);
        let mut max_abs = 0.0f64;
        let mut mean_abs = 0.0;
        for g in [&dx, &dy] {
            for &v in g.data() {
                max_abs = max_abs.max(v.abs());
                mean_abs += v.abs();
            }
        }
        mean_abs /= (2 * 40 * 40) as f64;
        assert!(max_abs <= a + 1e-12, "max |D| = {max_abs}");
        assert!(mean_abs <= a, "mean |D| = {mean_abs}");
    }

    #[test]
    fn regrain_matches_requested_grain_std() {
        let img = Image::constant(320, 320, [0.5, 0.5, 0.5]);
        let sigma_g = 1.0 / 255.0;
        let out = apply_regrain(&img, 1.0, sigma_g, 7);
        let n = out.data().len() as f64;
        let mean: f64 = out.data().iter().sum::<f64>() / n;
        let var: f64 = out
            .data()
            .iter()
            .map(|&v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        assert!(
            (std - sigma_g).abs() <= 0.1 * sigma_g,
            "grain std {std} vs requested {sigma_g}"
        );
    }

    #[test]
    fn regrain_is_deterministic_per_instance() {
        let img = random_image(24, 24, 3);
        let a = apply_regrain(&img, 0.9, 0.01, 1234);
        let b = apply_regrain(&img, 0.9, 0.01, 1234);
        assert_eq!(a, b);
    }

    #[test]
    fn regrain_reduces_high_pass_energy_on_texture() {
        let img = random_image(48, 48, 4);
        let out = apply_regrain(&img, 1.5, 1.0 / 255.0, 5);
        assert!(laplacian_energy(&out) < laplacian_energy(&img));
    }

    fn face_prior(h: usize, w: usize) -> WeakPrior {
        build_prior(
            &FaceBox::new(10.0, 12.0, 38.0, 40.0).unwrap(),
            h,
            w,
            48,
            0.1,
            0.05,
        )
        .unwrap()
    }

    #[test]
    fn seam_with_empty_or_full_prior_is_identity() {
        let img = random_image(48, 48, 6);
        let zeros = WeakPrior {
            grid: Grid::zeros(48, 48),
            source_box: FaceBox::new(1.0, 1.0, 2.0, 2.0).unwrap(),
            source_h: 48,
            source_w: 48,
        };
        assert_eq!(apply_seam(&img, 1.5, 3, &zeros).unwrap(), img);
        let ones = WeakPrior {
            grid: Grid::constant(48, 48, 1.0),
            ..zeros
        };
        assert_eq!(apply_seam(&img, 1.5, 3, &ones).unwrap(), img);
    }

    #[test]
    fn seam_blurs_exactly_the_band() {
        let img = random_image(48, 48, 8);
        let prior = face_prior(48, 48);
        let radius = 3u32;
        let out = apply_seam(&img, 1.5, radius, &prior).unwrap();
        let inside = prior.grid.threshold(0.5);
        let band = dilate(&inside, 3).and(&dilate(&inside.not(), 3));
        let blurred = gaussian_blur_image(&img, 1.5);
        let plane = 48 * 48;
        for c in 0..3 {
            for i in 0..plane {
                let want = if band.data()[i] {
                    blurred.data()[c * plane + i]
                } else {
                    img.data()[c * plane + i]
                };
                assert_eq!(out.data()[c * plane + i], want);
            }
        }
        assert!(band.count() > 0, "fixture band must be nonempty");
    }

    #[test]
    fn gamma_identity_configuration_is_bit_exact() {
        let img = random_image(16, 16, 9);
        let out = apply_gamma(&img, 1.0, [1.0, 1.0, 1.0]);
        assert_eq!(img, out);
    }

    #[test]
    fn gamma_fixed_points_and_scalar_value() {
        let mut img = Image::constant(8, 8, [0.25, 0.0, 1.0]);
        img.set(0, 1, 1, 0.0);
        let out = apply_gamma(&img, 0.8, [1.0, 1.0, 1.0]);
        assert!((out.get(0, 0, 0) - 0.329876977693).abs() < 1e-9);
        assert_eq!(out.get(1, 0, 0), 0.0);
        assert_eq!(out.get(2, 0, 0), 1.0);
    }

    #[test]
    fn transcode_keeps_size_and_constants() {
        let img = Image::constant(20, 28, [0.6, 0.5, 0.4]);
        let out = apply_transcode(&img, 0.5, 40).unwrap();
        assert_eq!((out.height(), out.width()), (20, 28));
        for c in 0..3 {
            let first = out.channel(c)[0];
            assert!((first - img.get(c, 0, 0)).abs() < 0.03);
            assert!(out.channel(c).iter().all(|&v| (v - first).abs() < 1e-9));
        }
    }

    #[test]
    fn transcode_degrades_more_than_plain_jpeg() {
        let img = random_image(64, 64, 10);
        let transcoded = apply_transcode(&img, 0.5, 40).unwrap();
        let jpeg_only = apply_jpeg(&img, 0, 0, 50).unwrap();
        assert!(psnr(&img, &transcoded) < psnr(&img, &jpeg_only));
    }

    #[test]
    fn every_family_is_deterministic_and_shape_preserving() {
        let img = random_image(40, 40, 11);
        let prior = face_prior(40, 40);
        for family in AttackFamily::ALL {
            let inst = sample_attack(family, 2024);
            let a = apply_attack(&img, &inst, Some(&prior)).unwrap();
            let b = apply_attack(&img, &inst, Some(&prior)).unwrap();
            assert_eq!(a, b, "{family:?} must be deterministic");
            assert_eq!((a.height(), a.width()), (40, 40));
            assert!(a.data().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn seam_without_prior_is_an_error() {
        let img = random_image(16, 16, 12);
        let inst = sample_attack(AttackFamily::Seam, 1);
        assert!(apply_attack(&img, &inst, None).is_err());
    }
}
