//! PNG decoding to linear `[0, 1]` and 16-bit linear encoding.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Rgb};

use crate::error::{Error, Result};
use crate::image::Image;

/// sRGB transfer function inverse.
pub fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb(v: f64) -> f64 {
    if v <= 0.003_130_8 {
        v * 12.92
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

/// Decode an 8-bit (sRGB) or 16-bit (linear) PNG into a three-channel image.
/// Alpha is dropped and gray is replicated.
pub fn decode_png(bytes: &[u8], source: &Path) -> Result<Image> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::load(source, format!("png decode: {e}")))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let sixteen = matches!(
        img,
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) | DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_)
    );
    let data: Vec<f64> = if sixteen {
        img.into_rgb16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect()
    } else {
        let lut: Vec<f64> = (0..256).map(|v| srgb_to_linear(v as f64 / 255.0)).collect();
        img.into_rgb8().into_raw().into_iter().map(|v| lut[v as usize]).collect()
    };
    Image::from_vec(w, h, 3, data)
}

pub fn read_png(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::load(path, e.to_string()))?;
    decode_png(&bytes, path)
}

/// Encode a three-channel linear image as a 16-bit RGB PNG, clamping to `[0, 1]`.
pub fn encode_png16(img: &Image) -> Result<Vec<u8>> {
    if img.channels() != 3 {
        return Err(Error::invalid("png export needs a three-channel image"));
    }
    let raw: Vec<u16> = img.data().iter().map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16).collect();
    let buf: ImageBuffer<Rgb<u16>, Vec<u16>> = ImageBuffer::from_raw(img.width() as u32, img.height() as u32, raw)
        .ok_or_else(|| Error::invalid("image buffer size mismatch"))?;
    let mut out = std::io::Cursor::new(Vec::new());
    DynamicImage::ImageRgb16(buf).write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    super::write_atomic(path, &encode_png16(img)?)
}

/// Single-channel maps (depth) are written as gray replicated to RGB after
/// dividing by `scale`.
pub fn gray_to_rgb(img: &Image, scale: f64) -> Image {
    Image::from_fn(img.width(), img.height(), 3, |x, y, _| img.get(x, y, 0) / scale)
}
