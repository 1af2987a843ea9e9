//! Synthetic paired corpus: procedurally generated "portraits" with an
//! elliptical face-like region, plus face-swapped counterparts whose inner
//! ellipse is replaced by another image's region with an alpha feather and a
//! small chroma offset. Fully deterministic from one seed.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::{write_manifest, DataSplit, ManifestEntry};
use crate::attacks::derive_seed;
use crate::error::{Error, Result};
use crate::imagecore::{save_image, Image};
use crate::priors::FaceBox;

/// Source resolution of generated images.
pub const SYNTH_SIZE: usize = 256;

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
}

impl Ellipse {
    /// Normalized squared radius; < 1 inside.
    fn rho2(&self, x: f64, y: f64) -> f64 {
        let dx = (x - self.cx) / self.rx;
        let dy = (y - self.cy) / self.ry;
        dx * dx + dy * dy
    }

    fn bbox(&self, size: usize) -> FaceBox {
        FaceBox {
            x0: (self.cx - self.rx).max(0.0),
            y0: (self.cy - self.ry).max(0.0),
            x1: (self.cx + self.rx).min(size as f64),
            y1: (self.cy + self.ry).min(size as f64),
        }
    }
}

/// One procedurally generated bona fide portrait and its face ellipse.
fn generate_real(seed: u64, index: u32) -> (Image, Ellipse) {
    let s = SYNTH_SIZE;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "synth-real", 0, index));

    // smooth low-frequency background per channel
    let mut bias = [0.0; 3];
    let mut waves = [[0.0; 5]; 6]; // amp, fx, fy, phase_x, phase_y
    for c in 0..3 {
        bias[c] = rng.gen_range(0.30..=0.65);
        for t in 0..2 {
            waves[c * 2 + t] = [
                rng.gen_range(0.04..=0.12),
                rng.gen_range(1.0..=3.0f64).round(),
                rng.gen_range(1.0..=3.0f64).round(),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.0..std::f64::consts::TAU),
            ];
        }
    }
    let texture_sigma = rng.gen_range(0.015..=0.030);

    let ellipse = Ellipse {
        cx: rng.gen_range(0.38..=0.62) * s as f64,
        cy: rng.gen_range(0.38..=0.62) * s as f64,
        rx: rng.gen_range(0.14..=0.20) * s as f64,
        ry: rng.gen_range(0.18..=0.26) * s as f64,
    };
    let tone_r = rng.gen_range(0.68..=0.84);
    let tone = [
        tone_r,
        tone_r * rng.gen_range(0.72..=0.82),
        tone_r * rng.gen_range(0.58..=0.70),
    ];
    let face_texture_sigma = rng.gen_range(0.012..=0.022);

    let mut img = Image::constant(s, s, [0.0, 0.0, 0.0]);
    for c in 0..3 {
        let [a1, fx1, fy1, px1, py1] = waves[c * 2];
        let [a2, fx2, fy2, px2, py2] = waves[c * 2 + 1];
        for y in 0..s {
            for x in 0..s {
                let u = x as f64 / s as f64 * std::f64::consts::TAU;
                let v = y as f64 / s as f64 * std::f64::consts::TAU;
                let val = bias[c]
                    + a1 * (fx1 * u + px1).sin() * (fy1 * v + py1).cos()
                    + a2 * (fx2 * u + px2).cos() * (fy2 * v + py2).sin();
                img.set(c, y, x, val);
            }
        }
    }
    // face region: blend toward skin tone with a ~2 px soft edge and a mild
    // vertical shading ramp
    for y in 0..s {
        for x in 0..s {
            let rho = ellipse.rho2(x as f64 + 0.5, y as f64 + 0.5).sqrt();
            if rho >= 1.0 {
                continue;
            }
            let feather = ((1.0 - rho) * ellipse.rx.min(ellipse.ry) / 2.0).clamp(0.0, 1.0);
            let shade = 1.0 - 0.12 * ((y as f64 + 0.5 - ellipse.cy) / ellipse.ry);
            for c in 0..3 {
                let base = img.get(c, y, x);
                img.set(c, y, x, base + feather * (tone[c] * shade - base));
            }
        }
    }
    // sensor-like texture everywhere, a touch stronger on the face
    let mut noise_rng =
        ChaCha8Rng::seed_from_u64(derive_seed(seed, "synth-real-noise", 0, index));
    for c in 0..3 {
        for y in 0..s {
            for x in 0..s {
                let inside = ellipse.rho2(x as f64 + 0.5, y as f64 + 0.5) < 1.0;
                let sigma = if inside {
                    texture_sigma + face_texture_sigma
                } else {
                    texture_sigma
                };
                let n = (noise_rng.gen::<f64>() - 0.5) * 2.0 * sigma * 1.7320508075688772;
                let v = (img.get(c, y, x) + n).clamp(0.0, 1.0);
                img.set(c, y, x, v);
            }
        }
    }
    (img, ellipse)
}

/// Face-swap a donor's ellipse region into the base image's ellipse with an
/// alpha feather and a small chroma offset.
fn generate_fake(seed: u64, index: u32, n_pairs: u32) -> (Image, Ellipse) {
    let (base, ellipse) = generate_real(seed, index);
    let donor_index = {
        let cand = (index.wrapping_mul(7).wrapping_add(3)) % n_pairs;
        if cand == index {
            (cand + 1) % n_pairs
        } else {
            cand
        }
    };
    let (donor, donor_ellipse) = generate_real(seed, donor_index);

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "synth-fake", 0, index));
    let delta = rng.gen_range(0.015..=0.035);
    let chroma = [delta, -0.5 * delta, 0.8 * delta];
    let feather_px = rng.gen_range(2.0..=4.0);

    let s = SYNTH_SIZE;
    let mut img = base.clone();
    let donor_grids: Vec<crate::imagecore::Grid> =
        (0..3).map(|c| donor.channel_grid(c)).collect();
    for y in 0..s {
        for x in 0..s {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let rho = ellipse.rho2(px, py).sqrt();
            if rho >= 1.0 {
                continue;
            }
            let alpha = ((1.0 - rho) * ellipse.rx.min(ellipse.ry) / feather_px).clamp(0.0, 1.0);
            if alpha == 0.0 {
                continue;
            }
            // map into the donor's ellipse frame
            let qx = donor_ellipse.cx + (px - ellipse.cx) * donor_ellipse.rx / ellipse.rx;
            let qy = donor_ellipse.cy + (py - ellipse.cy) * donor_ellipse.ry / ellipse.ry;
            for c in 0..3 {
                let sample =
                    crate::imagecore::bilinear_sample(&donor_grids[c], qx - 0.5, qy - 0.5);
                let donor_val = (sample + chroma[c]).clamp(0.0, 1.0);
                let out = alpha * donor_val + (1.0 - alpha) * img.get(c, y, x);
                img.set(c, y, x, out);
            }
        }
    }
    (img, ellipse)
}

/// Generate a paired corpus: `count`/2 bona fide images and `count`/2
/// face-swapped counterparts, split 80/20 by pair into train/test. Writes
/// PNGs under `<out_dir>/images/` and the manifest to
/// `<out_dir>/manifest.jsonl`; returns the manifest path.
pub fn gen_synth(
    count: usize,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<std::path::PathBuf> {
    if count < 2 || count % 2 != 0 {
        return Err(Error::Invalid(format!(
            "count must be even and >= 2, got {count}"
        )));
    }
    let out_dir = out_dir.as_ref();
    let images_dir = out_dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;

    let n_pairs = (count / 2) as u32;
    let train_pairs = (n_pairs as usize * 4) / 5;
    let mut entries = Vec::with_capacity(count);
    for i in 0..n_pairs {
        let split = if (i as usize) < train_pairs {
            DataSplit::Train
        } else {
            DataSplit::Test
        };
        let (real, real_ellipse) = generate_real(seed, i);
        let real_id = format!("real_{i:04}");
        let real_rel = format!("images/{real_id}.png");
        save_image(&real, out_dir.join(&real_rel))?;
        entries.push(ManifestEntry::new(
            real_id,
            real_rel,
            0,
            Some(real_ellipse.bbox(SYNTH_SIZE)),
            split,
        ));

        let (fake, fake_ellipse) = generate_fake(seed, i, n_pairs);
        let fake_id = format!("fake_{i:04}");
        let fake_rel = format!("images/{fake_id}.png");
        save_image(&fake, out_dir.join(&fake_rel))?;
        entries.push(ManifestEntry::new(
            fake_id,
            fake_rel,
            1,
            Some(fake_ellipse.bbox(SYNTH_SIZE)),
            split,
        ));
    }
    let manifest_path = out_dir.join("manifest.jsonl");
    write_manifest(&entries, &manifest_path)?;
    Ok(manifest_path)
}
