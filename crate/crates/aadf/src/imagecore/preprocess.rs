//! Deterministic preprocessing: square bilinear resize to the working
//! resolution followed by per-image per-channel standardization.

use super::{resize_bilinear, Grid, Image};
use crate::error::{Error, Result};
use crate::util::kahan_sum;

/// Raster after preprocessing: zero mean / unit std per channel, with the
/// recorded statistics allowing reconstruction. Channels whose raw std falls
/// below 1e-6 are passed through mean-shifted with std recorded as 1.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedImage {
    size: usize,
    data: Vec<f64>,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl StandardizedImage {
    /// Direct constructor for tests and synthetic inputs; `data` is
    /// channel-planar with `3 * size * size` samples.
    pub fn from_parts(size: usize, data: Vec<f64>, mean: [f64; 3], std: [f64; 3]) -> Self {
        assert_eq!(data.len(), 3 * size * size);
        Self {
            size,
            data,
            mean,
            std,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.size * self.size;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[c * self.size * self.size + y * self.size + x]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// BT.601 luminance of the standardized raster.
    pub fn luminance(&self) -> Grid {
        let plane = self.size * self.size;
        let (r, g, b) = (self.channel(0), self.channel(1), self.channel(2));
        let mut out = Vec::with_capacity(plane);
        for i in 0..plane {
            out.push(0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]);
        }
        Grid::from_vec(self.size, self.size, out)
    }

    /// Undo standardization (mean/std recorded at construction).
    pub fn reconstruct(&self) -> Image {
        let plane = self.size * self.size;
        let mut data = vec![0.0; 3 * plane];
        for c in 0..3 {
            for i in 0..plane {
                data[c * plane + i] = self.data[c * plane + i] * self.std[c] + self.mean[c];
            }
        }
        Image::from_planar(self.size, self.size, data)
    }
}

/// Per-image per-channel standardization of an already-sized raster.
pub fn standardize(img: &Image) -> StandardizedImage {
    assert_eq!(img.height(), img.width(), "standardize expects a square raster");
    let size = img.height();
    let plane = size * size;
    let mut data = vec![0.0; 3 * plane];
    let mut means = [0.0; 3];
    let mut stds = [0.0; 3];
    for c in 0..3 {
        let ch = img.channel(c);
        let mean = kahan_sum(ch.iter().copied()) / plane as f64;
        let var = kahan_sum(ch.iter().map(|&v| (v - mean) * (v - mean))) / plane as f64;
        let raw_std = var.sqrt();
        let (shift, scale, recorded) = if raw_std < 1e-6 {
            (mean, 1.0, 1.0)
        } else {
            (mean, raw_std, raw_std)
        };
        for (o, &v) in data[c * plane..(c + 1) * plane].iter_mut().zip(ch.iter()) {
            *o = (v - shift) / scale;
        }
        means[c] = mean;
        stds[c] = recorded;
    }
    StandardizedImage {
        size,
        data,
        mean: means,
        std: stds,
    }
}

/// The preprocessing operator: bilinear resize to `working_size` square,
/// then per-image per-channel standardization. Default working size is 384.
pub fn pi_preprocess(img: &Image, working_size: usize) -> Result<StandardizedImage> {
    if working_size < 16 {
        return Err(Error::Invalid(format!(
            "working size must be at least 16, got {working_size}"
        )));
    }
    let resized = resize_bilinear(img, working_size, working_size)?;
    Ok(standardize(&resized))
}
