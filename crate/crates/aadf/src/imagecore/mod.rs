//! Raster types, deterministic preprocessing, spatial filters, resampling
//! and the JPEG-simulation codec.
//!
//! Everything operates on `f64` values with a nominal range of [0, 1].
//! All operations here are pure functions of their inputs; there is no
//! shared mutable state, so concurrent use on distinct images is safe.

mod filter;
mod io;
mod jpeg;
mod preprocess;
mod resize;

pub use filter::{dilate, gaussian_blur, gaussian_blur_image, sobel_edges};
pub(crate) use filter::{sobel_gradients, sobel_gradients_adjoint};
pub use io::{load_image, save_image};
pub use jpeg::{jpeg_sim, quant_table, JpegSimParams, CHROMA_BASE, LUMA_BASE};
pub use preprocess::{pi_preprocess, standardize, StandardizedImage};
pub use resize::{bilinear_sample, resize_bilinear, resize_grid};
pub(crate) use resize::resize_grid_adjoint;

use crate::error::{Error, Result};

/// Working-resolution 3-channel raster; the unit every transform and the
/// detector consume. Stored channel-planar (R plane, then G, then B).
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    /// Validated constructor: at least 8x8, 3 * h * w finite samples.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height < 8 || width < 8 {
            return Err(Error::Invalid(format!(
                "image must be at least 8x8, got {height}x{width}"
            )));
        }
        if data.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "expected {} samples for {height}x{width}x3, got {}",
                height * width * 3,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("image contains NaN or Inf".into()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Internal constructor for intermediates that are structurally valid but
    /// may be smaller than 8x8 (e.g. transcode downscales).
    pub(crate) fn from_planar(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width * 3);
        Self {
            height,
            width,
            data,
        }
    }

    pub fn constant(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let plane = height * width;
        let mut data = Vec::with_capacity(plane * 3);
        for c in 0..3 {
            data.extend(std::iter::repeat(rgb[c]).take(plane));
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Contiguous plane for one channel (0 = R, 1 = G, 2 = B).
    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let plane = self.height * self.width;
        &mut self.data[c * plane..(c + 1) * plane]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[c * self.height * self.width + y * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[c * self.height * self.width + y * self.width + x] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn channel_grid(&self, c: usize) -> Grid {
        Grid::from_vec(self.height, self.width, self.channel(c).to_vec())
    }

    /// Map every sample through `f` in place.
    pub fn map_in_place(&mut self, f: impl Fn(f64) -> f64) {
        for v in &mut self.data {
            *v = f(*v);
        }
    }
}

/// Single-channel real-valued grid (priors, evidence maps, residual planes).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            data: vec![0.0; h * w],
        }
    }

    pub fn constant(h: usize, w: usize, v: f64) -> Self {
        Self {
            h,
            w,
            data: vec![v; h * w],
        }
    }

    pub fn from_vec(h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), h * w, "grid data must be h*w");
        Self { h, w, data }
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.w + x] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        crate::util::kahan_sum(self.data.iter().copied())
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Binarize at a threshold (>= keeps the pixel).
    pub fn threshold(&self, t: f64) -> Mask {
        Mask {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| v >= t).collect(),
        }
    }

    /// Mean over integer-partition cells; used to bring working-resolution
    /// targets down to the mask grid.
    pub fn area_downsample(&self, oh: usize, ow: usize) -> Grid {
        assert!(oh >= 1 && ow >= 1 && oh <= self.h && ow <= self.w);
        let mut out = Grid::zeros(oh, ow);
        for gy in 0..oh {
            let y0 = gy * self.h / oh;
            let y1 = (gy + 1) * self.h / oh;
            for gx in 0..ow {
                let x0 = gx * self.w / ow;
                let x1 = (gx + 1) * self.w / ow;
                let mut acc = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        acc += self.at(y, x);
                    }
                }
                out.set(gy, gx, acc / ((y1 - y0) * (x1 - x0)) as f64);
            }
        }
        out
    }
}

/// Boolean grid for morphology.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    h: usize,
    w: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            data: vec![false; h * w],
        }
    }

    pub fn from_vec(h: usize, w: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), h * w);
        Self { h, w, data }
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn at(&self, y: usize, x: usize) -> bool {
        self.data[y * self.w + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.w + x] = v;
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn not(&self) -> Mask {
        Mask {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&b| !b).collect(),
        }
    }

    pub fn and(&self, other: &Mask) -> Mask {
        assert_eq!((self.h, self.w), (other.h, other.w));
        Mask {
            h: self.h,
            w: self.w,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a && b)
                .collect(),
        }
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }
}

/// Peak signal-to-noise ratio in dB for [0, 1] rasters (peak = 1).
pub fn psnr(a: &Image, b: &Image) -> f64 {
    assert_eq!(
        (a.height, a.width),
        (b.height, b.width),
        "psnr needs equal shapes"
    );
    let mse = crate::util::kahan_sum(
        a.data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| (x - y) * (x - y)),
    ) / a.data.len() as f64;
    if mse <= 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}
