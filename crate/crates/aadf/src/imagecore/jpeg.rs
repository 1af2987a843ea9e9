//! Deterministic JPEG simulation: BT.601 full-range color transform, 8x8
//! orthonormal block DCT, quality-scaled Annex-K quantization, inverse
//! transform. No entropy coding, so the output is pixels, not a bitstream.

use super::{resize_grid, Grid, Image};
use crate::error::{Error, Result};
use crate::util::round_half_up;

/// Annex-K base luminance quantization table, row-major.
pub const LUMA_BASE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Annex-K base chrominance quantization table, row-major.
pub const CHROMA_BASE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, //
    18, 21, 26, 66, 99, 99, 99, 99, //
    24, 26, 56, 99, 99, 99, 99, 99, //
    47, 66, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct JpegSimParams {
    /// Quality in [1, 100]; quantization tables derive deterministically.
    pub quality: u8,
    /// false = 4:4:4 (default), true = 4:2:0 chroma subsampling.
    pub chroma_subsample: bool,
}

impl JpegSimParams {
    pub fn new(quality: u8) -> Result<Self> {
        if !(1..=100).contains(&quality) {
            return Err(Error::Invalid(format!(
                "jpeg quality must be in [1,100], got {quality}"
            )));
        }
        Ok(Self {
            quality,
            chroma_subsample: false,
        })
    }
}

/// Quality-scaled quantization table. IJG scaling: scale = 5000/q for q < 50,
/// else 200 - 2q; entry = clamp(round(base * scale / 100), 1, 255).
pub fn quant_table(base: &[u16; 64], quality: u8) -> [u16; 64] {
    let q = quality as f64;
    let scale = if quality < 50 { 5000.0 / q } else { 200.0 - 2.0 * q };
    let mut out = [0u16; 64];
    for (o, &b) in out.iter_mut().zip(base.iter()) {
        *o = (round_half_up(b as f64 * scale / 100.0) as i64).clamp(1, 255) as u16;
    }
    out
}

/// Orthonormal 8x8 DCT-II basis: C[k][n] = a_k cos(pi (2n+1) k / 16).
fn dct_basis() -> [[f64; 8]; 8] {
    let mut c = [[0.0; 8]; 8];
    for k in 0..8 {
        let a = if k == 0 {
            (1.0f64 / 8.0).sqrt()
        } else {
            (2.0f64 / 8.0).sqrt()
        };
        for n in 0..8 {
            c[k][n] = a * (std::f64::consts::PI * (2.0 * n as f64 + 1.0) * k as f64 / 16.0).cos();
        }
    }
    c
}

/// Pad a plane to multiples of 8 by edge replication.
fn pad_to_blocks(g: &Grid) -> Grid {
    let ph = (g.h() + 7) / 8 * 8;
    let pw = (g.w() + 7) / 8 * 8;
    if ph == g.h() && pw == g.w() {
        return g.clone();
    }
    let mut out = Grid::zeros(ph, pw);
    for y in 0..ph {
        let sy = y.min(g.h() - 1);
        for x in 0..pw {
            out.set(y, x, g.at(sy, x.min(g.w() - 1)));
        }
    }
    out
}

/// Quantize one plane block by block in place. Values are expected in the
/// level-shifted [-128, 127] range.
fn quantize_plane(plane: &mut Grid, table: &[u16; 64], basis: &[[f64; 8]; 8]) {
    let (h, w) = (plane.h(), plane.w());
    debug_assert!(h % 8 == 0 && w % 8 == 0);
    let mut block = [[0.0f64; 8]; 8];
    let mut tmp = [[0.0f64; 8]; 8];
    let mut coef = [[0.0f64; 8]; 8];
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            for y in 0..8 {
                for x in 0..8 {
                    block[y][x] = plane.at(by + y, bx + x);
                }
            }
            // forward: coef = C * block * C^T
            for k in 0..8 {
                for x in 0..8 {
                    let mut acc = 0.0;
                    for n in 0..8 {
                        acc += basis[k][n] * block[n][x];
                    }
                    tmp[k][x] = acc;
                }
            }
            for k in 0..8 {
                for l in 0..8 {
                    let mut acc = 0.0;
                    for m in 0..8 {
                        acc += tmp[k][m] * basis[l][m];
                    }
                    coef[k][l] = acc;
                }
            }
            // quantize / dequantize
            for k in 0..8 {
                for l in 0..8 {
                    let q = table[k * 8 + l] as f64;
                    coef[k][l] = round_half_up(coef[k][l] / q) * q;
                }
            }
            // inverse: block = C^T * coef * C
            for n in 0..8 {
                for l in 0..8 {
                    let mut acc = 0.0;
                    for k in 0..8 {
                        acc += basis[k][n] * coef[k][l];
                    }
                    tmp[n][l] = acc;
                }
            }
            for n in 0..8 {
                for m in 0..8 {
                    let mut acc = 0.0;
                    for l in 0..8 {
                        acc += tmp[n][l] * basis[l][m];
                    }
                    plane.set(by + n, bx + m, acc);
                }
            }
        }
    }
}

/// 2x2 mean downsample (4:2:0 chroma path).
fn downsample_2x2(g: &Grid) -> Grid {
    let oh = (g.h() + 1) / 2;
    let ow = (g.w() + 1) / 2;
    let mut out = Grid::zeros(oh, ow);
    for y in 0..oh {
        for x in 0..ow {
            let y0 = 2 * y;
            let x0 = 2 * x;
            let y1 = (y0 + 1).min(g.h() - 1);
            let x1 = (x0 + 1).min(g.w() - 1);
            out.set(
                y,
                x,
                0.25 * (g.at(y0, x0) + g.at(y0, x1) + g.at(y1, x0) + g.at(y1, x1)),
            );
        }
    }
    out
}

/// Simulate one JPEG compress/decompress cycle. Deterministic: same input
/// and parameters give bit-identical output.
pub fn jpeg_sim(img: &Image, p: &JpegSimParams) -> Image {
    let (h, w) = (img.height(), img.width());
    let basis = dct_basis();
    let luma_q = quant_table(&LUMA_BASE, p.quality);
    let chroma_q = quant_table(&CHROMA_BASE, p.quality);

    // RGB -> YCbCr (BT.601 full range), scaled to [0,255] and level-shifted.
    let plane = h * w;
    let mut y_p = Grid::zeros(h, w);
    let mut cb_p = Grid::zeros(h, w);
    let mut cr_p = Grid::zeros(h, w);
    let (rs, gs, bs) = (img.channel(0), img.channel(1), img.channel(2));
    for i in 0..plane {
        let (r, g, b) = (rs[i], gs[i], bs[i]);
        let y = 0.299 * r + 0.587 * g + 0.114 * b;
        let cb = 0.5 + (b - y) / 1.772;
        let cr = 0.5 + (r - y) / 1.402;
        y_p.data_mut()[i] = y * 255.0 - 128.0;
        cb_p.data_mut()[i] = cb * 255.0 - 128.0;
        cr_p.data_mut()[i] = cr * 255.0 - 128.0;
    }

    let mut y_pad = pad_to_blocks(&y_p);
    quantize_plane(&mut y_pad, &luma_q, &basis);

    let process_chroma = |g: &Grid| -> Grid {
        if p.chroma_subsample {
            let small = downsample_2x2(g);
            let mut padded = pad_to_blocks(&small);
            quantize_plane(&mut padded, &chroma_q, &basis);
            let mut cropped = Grid::zeros(small.h(), small.w());
            for y in 0..small.h() {
                for x in 0..small.w() {
                    cropped.set(y, x, padded.at(y, x));
                }
            }
            resize_grid(&cropped, g.h(), g.w())
        } else {
            let mut padded = pad_to_blocks(g);
            quantize_plane(&mut padded, &chroma_q, &basis);
            padded
        }
    };
    let cb_done = process_chroma(&cb_p);
    let cr_done = process_chroma(&cr_p);

    // crop padding, undo level shift/scale, YCbCr -> RGB, clamp.
    let mut data = vec![0.0; plane * 3];
    for yy in 0..h {
        for xx in 0..w {
            let i = yy * w + xx;
            let y = (y_pad.at(yy, xx) + 128.0) / 255.0;
            let cb = (cb_done.at(yy, xx) + 128.0) / 255.0;
            let cr = (cr_done.at(yy, xx) + 128.0) / 255.0;
            let r = y + 1.402 * (cr - 0.5);
            let b = y + 1.772 * (cb - 0.5);
            let g = (y - 0.299 * r - 0.114 * b) / 0.587;
            data[i] = r.clamp(0.0, 1.0);
            data[plane + i] = g.clamp(0.0, 1.0);
            data[2 * plane + i] = b.clamp(0.0, 1.0);
        }
    }
    Image::from_planar(h, w, data)
}
