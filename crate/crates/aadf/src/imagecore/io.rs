//! PNG (8-bit RGB) and PPM P6 read/write. No other formats.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};
use crate::util::round_half_up;

/// Load an 8-bit PNG or binary PPM (P6). Bytes map to [0, 1] via v/255.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "png" => load_png(path),
        "ppm" => load_ppm(path),
        other => Err(Error::Format(format!(
            "unsupported extension '{other}' (png and ppm only)"
        ))),
    }
}

/// Save as 8-bit PNG or PPM P6 depending on extension. Values are clamped to
/// [0, 1] and rounded half-up to bytes.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let bytes = to_bytes_interleaved(img);
    match ext.as_str() {
        "png" => {
            let buf: image::RgbImage =
                image::ImageBuffer::from_vec(img.width() as u32, img.height() as u32, bytes)
                    .expect("byte buffer matches dimensions");
            buf.save(path)
                .map_err(|e| Error::Format(format!("png encode {}: {e}", path.display())))
        }
        "ppm" => save_ppm(path, img.height(), img.width(), &bytes),
        other => Err(Error::Format(format!(
            "unsupported extension '{other}' (png and ppm only)"
        ))),
    }
}

fn to_bytes_interleaved(img: &Image) -> Vec<u8> {
    let (h, w) = (img.height(), img.width());
    let mut bytes = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = img.get(c, y, x).clamp(0.0, 1.0);
                bytes.push(round_half_up(v * 255.0) as u8);
            }
        }
    }
    bytes
}

fn from_bytes_interleaved(h: usize, w: usize, bytes: &[u8]) -> Image {
    let plane = h * w;
    let mut data = vec![0.0; plane * 3];
    for i in 0..plane {
        for c in 0..3 {
            data[c * plane + i] = bytes[i * 3 + c] as f64 / 255.0;
        }
    }
    Image::from_planar(h, w, data)
}

fn load_png(path: &Path) -> Result<Image> {
    let dynimg = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("png decode {}: {other}", path.display())),
    })?;
    let rgb = match dynimg {
        image::DynamicImage::ImageRgb8(b) => b,
        image::DynamicImage::ImageRgba8(b) => {
            image::DynamicImage::ImageRgba8(b).to_rgb8()
        }
        image::DynamicImage::ImageLuma8(b) => image::DynamicImage::ImageLuma8(b).to_rgb8(),
        image::DynamicImage::ImageLumaA8(b) => image::DynamicImage::ImageLumaA8(b).to_rgb8(),
        other => {
            return Err(Error::Format(format!(
                "png {}: only 8-bit images are supported, got {other:?}",
                path.display()
            )))
        }
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let img = from_bytes_interleaved(h, w, rgb.as_raw());
    if h < 8 || w < 8 {
        return Err(Error::Invalid(format!(
            "image {} is {h}x{w}; need at least 8x8",
            path.display()
        )));
    }
    Ok(img)
}

fn load_ppm(path: &Path) -> Result<Image> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;

    let next_token = |raw: &[u8], pos: &mut usize| -> Result<String> {
        // skip whitespace and '#' comments
        loop {
            while *pos < raw.len() && raw[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < raw.len() && raw[*pos] == b'#' {
                while *pos < raw.len() && raw[*pos] != b'\n' {
                    *pos += 1;
                }
            } else {
                break;
            }
        }
        let start = *pos;
        while *pos < raw.len() && !raw[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::Format("ppm: truncated header".into()));
        }
        Ok(String::from_utf8_lossy(&raw[start..*pos]).into_owned())
    };

    let magic = next_token(&raw, &mut pos)?;
    if magic != "P6" {
        return Err(Error::Format(format!("ppm: expected P6, got {magic}")));
    }
    let w: usize = next_token(&raw, &mut pos)?
        .parse()
        .map_err(|_| Error::Format("ppm: bad width".into()))?;
    let h: usize = next_token(&raw, &mut pos)?
        .parse()
        .map_err(|_| Error::Format("ppm: bad height".into()))?;
    let maxval: usize = next_token(&raw, &mut pos)?
        .parse()
        .map_err(|_| Error::Format("ppm: bad maxval".into()))?;
    if maxval != 255 {
        return Err(Error::Format(format!(
            "ppm: only maxval 255 supported, got {maxval}"
        )));
    }
    // exactly one whitespace byte separates header and raster
    pos += 1;
    let need = h * w * 3;
    if raw.len() < pos + need {
        return Err(Error::Format(format!(
            "ppm: raster truncated, need {need} bytes"
        )));
    }
    if h < 8 || w < 8 {
        return Err(Error::Invalid(format!(
            "image {} is {h}x{w}; need at least 8x8",
            path.display()
        )));
    }
    Ok(from_bytes_interleaved(h, w, &raw[pos..pos + need]))
}

fn save_ppm(path: &Path, h: usize, w: usize, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write!(f, "P6\n{w} {h}\n255\n").map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}
