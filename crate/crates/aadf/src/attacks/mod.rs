//! The six counter-forensic families with seeded parameter sampling and
//! deterministic application.
//!
//! Every instance is fully materialized: re-sampling with the same seed
//! reproduces the parameters bit-identically, and applying the same instance
//! to the same image twice gives bit-identical pixels. The seeded generator
//! is created per call and never shared.

mod apply;

pub use apply::{
    apply_attack, apply_gamma, apply_jpeg, apply_regrain, apply_seam, apply_transcode,
    apply_warp, translate_replicate, warp_field,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inputs for stable 64-bit seed derivation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedDerivation {
    pub global_seed: u64,
    pub image_id: String,
    pub epoch: u32,
    pub slot: u32,
}

/// Stable 64-bit hash of (global seed, image id, epoch, slot): FNV-1a over
/// the serialized fields with a splitmix64 finalizer. Identical inputs give
/// identical seeds on every platform and run.
pub fn derive_seed(global_seed: u64, image_id: &str, epoch: u32, slot: u32) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x1000_0000_01b3;
    let mut h = FNV_OFFSET;
    let eat = |h: u64, b: u8| (h ^ b as u64).wrapping_mul(FNV_PRIME);
    for b in global_seed.to_le_bytes() {
        h = eat(h, b);
    }
    for &b in image_id.as_bytes() {
        h = eat(h, b);
    }
    h = eat(h, 0xff);
    for b in epoch.to_le_bytes() {
        h = eat(h, b);
    }
    for b in slot.to_le_bytes() {
        h = eat(h, b);
    }
    // splitmix64 finalizer
    let mut z = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SeedDerivation {
    pub fn derive(&self) -> u64 {
        derive_seed(self.global_seed, &self.image_id, self.epoch, self.slot)
    }
}

/// The six counter-forensic families. Names are stable in serialized output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackFamily {
    Jpeg,
    Warp,
    Regrain,
    Seam,
    Gamma,
    Transcode,
}

impl AttackFamily {
    pub const ALL: [AttackFamily; 6] = [
        AttackFamily::Jpeg,
        AttackFamily::Warp,
        AttackFamily::Regrain,
        AttackFamily::Seam,
        AttackFamily::Gamma,
        AttackFamily::Transcode,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AttackFamily::Jpeg => "jpeg",
            AttackFamily::Warp => "warp",
            AttackFamily::Regrain => "regrain",
            AttackFamily::Seam => "seam",
            AttackFamily::Gamma => "gamma",
            AttackFamily::Transcode => "transcode",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown attack family '{s}'")))
    }

    /// True for families that do not move geometry; their prior transport is
    /// the identity.
    pub fn is_photometric(&self) -> bool {
        matches!(
            self,
            AttackFamily::Jpeg | AttackFamily::Regrain | AttackFamily::Gamma | AttackFamily::Seam
        )
    }
}

/// Documented sampling ranges per family. The defaults are this toolkit's
/// fixed, versioned choices: visually subtle but forensically meaningful.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRanges {
    pub jpeg_quality: (u8, u8),
    pub jpeg_shift_max: u8,
    pub warp_amplitude: (f64, f64),
    pub regrain_sigma_d: (f64, f64),
    pub regrain_sigma_g: (f64, f64),
    pub seam_sigma_s: (f64, f64),
    pub seam_band_radius: (u32, u32),
    pub gamma_exponent: (f64, f64),
    pub gamma_gain: (f64, f64),
    pub transcode_factor: (f64, f64),
    pub transcode_quality: (u8, u8),
}

impl Default for AttackRanges {
    fn default() -> Self {
        Self {
            jpeg_quality: (50, 90),
            jpeg_shift_max: 7,
            warp_amplitude: (0.25, 1.0),
            regrain_sigma_d: (0.6, 1.5),
            regrain_sigma_g: (1.0 / 255.0, 4.0 / 255.0),
            seam_sigma_s: (1.0, 2.0),
            seam_band_radius: (2, 6),
            gamma_exponent: (0.8, 1.25),
            gamma_gain: (0.95, 1.05),
            transcode_factor: (0.5, 0.75),
            transcode_quality: (40, 70),
        }
    }
}

/// Fully materialized per-family parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AttackParams {
    /// Realign + recompress: shift block phase by (dx, dy), recompress at
    /// `quality`, shift back.
    Jpeg { dx: u8, dy: u8, quality: u8 },
    /// Sub-pixel resampling: 8x8 control grid of uniform [-amplitude,
    /// amplitude] displacements, regenerated from `field_seed`.
    Warp { amplitude: f64, field_seed: u64 },
    /// Denoise at `sigma_d` then add seeded Gaussian grain of std `sigma_g`.
    Regrain {
        sigma_d: f64,
        sigma_g: f64,
        grain_seed: u64,
    },
    /// Blur a band of `band_radius` pixels around the prior's 0.5 level set
    /// at blur width `sigma_s`.
    Seam { sigma_s: f64, band_radius: u32 },
    /// Mild tone mapping: per-channel gain times value^gamma.
    Gamma {
        gamma: f64,
        gain_r: f64,
        gain_g: f64,
        gain_b: f64,
    },
    /// Social-app style re-encode: downscale by `factor`, recompress at
    /// `quality`, upscale back.
    Transcode { factor: f64, quality: u8 },
}

/// A named transform family plus fully materialized parameters, reproducible
/// from the recorded seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackInstance {
    pub family: AttackFamily,
    pub params: AttackParams,
    pub seed: u64,
}

/// Draw an instance with the default documented ranges.
pub fn sample_attack(family: AttackFamily, seed: u64) -> AttackInstance {
    sample_attack_with(family, seed, &AttackRanges::default())
}

/// Draw an instance with explicit ranges. Parameters are sampled uniformly
/// in a fixed order from a ChaCha8 generator seeded with `seed`.
pub fn sample_attack_with(family: AttackFamily, seed: u64, r: &AttackRanges) -> AttackInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = match family {
        AttackFamily::Jpeg => AttackParams::Jpeg {
            dx: rng.gen_range(0..=r.jpeg_shift_max),
            dy: rng.gen_range(0..=r.jpeg_shift_max),
            quality: rng.gen_range(r.jpeg_quality.0..=r.jpeg_quality.1),
        },
        AttackFamily::Warp => AttackParams::Warp {
            amplitude: rng.gen_range(r.warp_amplitude.0..=r.warp_amplitude.1),
            field_seed: rng.gen::<u64>(),
        },
        AttackFamily::Regrain => AttackParams::Regrain {
            sigma_d: rng.gen_range(r.regrain_sigma_d.0..=r.regrain_sigma_d.1),
            sigma_g: rng.gen_range(r.regrain_sigma_g.0..=r.regrain_sigma_g.1),
            grain_seed: rng.gen::<u64>(),
        },
        AttackFamily::Seam => AttackParams::Seam {
            sigma_s: rng.gen_range(r.seam_sigma_s.0..=r.seam_sigma_s.1),
            band_radius: rng.gen_range(r.seam_band_radius.0..=r.seam_band_radius.1),
        },
        AttackFamily::Gamma => AttackParams::Gamma {
            gamma: rng.gen_range(r.gamma_exponent.0..=r.gamma_exponent.1),
            gain_r: rng.gen_range(r.gamma_gain.0..=r.gamma_gain.1),
            gain_g: rng.gen_range(r.gamma_gain.0..=r.gamma_gain.1),
            gain_b: rng.gen_range(r.gamma_gain.0..=r.gamma_gain.1),
        },
        AttackFamily::Transcode => AttackParams::Transcode {
            factor: rng.gen_range(r.transcode_factor.0..=r.transcode_factor.1),
            quality: rng.gen_range(r.transcode_quality.0..=r.transcode_quality.1),
        },
    };
    AttackInstance {
        family,
        params,
        seed,
    }
}

impl AttackInstance {
    /// Text record `family;key=value;...;seed=N` with family-specific
    /// alphabetical key order; embedded in run manifests.
    pub fn serialize(&self) -> String {
        let body = match &self.params {
            AttackParams::Jpeg { dx, dy, quality } => {
                format!("dx={dx};dy={dy};quality={quality}")
            }
            AttackParams::Warp {
                amplitude,
                field_seed,
            } => format!("amplitude={amplitude};field_seed={field_seed}"),
            AttackParams::Regrain {
                sigma_d,
                sigma_g,
                grain_seed,
            } => format!("grain_seed={grain_seed};sigma_d={sigma_d};sigma_g={sigma_g}"),
            AttackParams::Seam {
                sigma_s,
                band_radius,
            } => format!("band_radius={band_radius};sigma_s={sigma_s}"),
            AttackParams::Gamma {
                gamma,
                gain_r,
                gain_g,
                gain_b,
            } => format!("gain_b={gain_b};gain_g={gain_g};gain_r={gain_r};gamma={gamma}"),
            AttackParams::Transcode { factor, quality } => {
                format!("factor={factor};quality={quality}")
            }
        };
        format!("{};{body};seed={}", self.family.name(), self.seed)
    }

    pub fn parse(s: &str) -> Result<Self> {
        let mut parts = s.split(';');
        let family = AttackFamily::parse(
            parts
                .next()
                .ok_or_else(|| Error::Invalid("empty attack record".into()))?,
        )?;
        let mut kv = std::collections::BTreeMap::new();
        for part in parts {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Invalid(format!("bad attack field '{part}'")))?;
            kv.insert(k.to_string(), v.to_string());
        }
        fn take<T: std::str::FromStr>(
            kv: &std::collections::BTreeMap<String, String>,
            k: &str,
        ) -> Result<T> {
            kv.get(k)
                .ok_or_else(|| Error::Invalid(format!("attack record missing '{k}'")))?
                .parse::<T>()
                .map_err(|_| Error::Invalid(format!("attack record field '{k}' unparsable")))
        }
        let seed: u64 = take(&kv, "seed")?;
        let params = match family {
            AttackFamily::Jpeg => AttackParams::Jpeg {
                dx: take(&kv, "dx")?,
                dy: take(&kv, "dy")?,
                quality: take(&kv, "quality")?,
            },
            AttackFamily::Warp => AttackParams::Warp {
                amplitude: take(&kv, "amplitude")?,
                field_seed: take(&kv, "field_seed")?,
            },
            AttackFamily::Regrain => AttackParams::Regrain {
                sigma_d: take(&kv, "sigma_d")?,
                sigma_g: take(&kv, "sigma_g")?,
                grain_seed: take(&kv, "grain_seed")?,
            },
            AttackFamily::Seam => AttackParams::Seam {
                sigma_s: take(&kv, "sigma_s")?,
                band_radius: take(&kv, "band_radius")?,
            },
            AttackFamily::Gamma => AttackParams::Gamma {
                gamma: take(&kv, "gamma")?,
                gain_r: take(&kv, "gain_r")?,
                gain_g: take(&kv, "gain_g")?,
                gain_b: take(&kv, "gain_b")?,
            },
            AttackFamily::Transcode => AttackParams::Transcode {
                factor: take(&kv, "factor")?,
                quality: take(&kv, "quality")?,
            },
        };
        Ok(AttackInstance {
            family,
            params,
            seed,
        })
    }
}
