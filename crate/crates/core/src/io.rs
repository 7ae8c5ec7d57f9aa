//! 8-bit PNG/JPEG images and masks as `[0, 1]` tensors.

use std::path::Path;

use image::{ColorType, DynamicImage, ImageReader, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{resize_bilinear, Shape3, Tensor};

fn image_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn open(path: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|e| image_err(path, e.to_string()))?;
    match img.color() {
        ColorType::L8 | ColorType::La8 | ColorType::Rgb8 | ColorType::Rgba8 => Ok(img),
        other => Err(image_err(
            path,
            format!("unsupported bit depth: {other:?} (only 8-bit images are accepted)"),
        )),
    }
}

/// Loads an 8-bit image as a `3 x H x W` tensor in `[0, 1]`. Grayscale is
/// replicated to three channels; alpha is dropped.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let rgb = open(path)?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = rgb.as_raw();
    Ok(Tensor::from_fn(Shape3::new(3, h, w)?, |c, y, x| {
        raw[(y * w + x) * 3 + c] as f64 / 255.0
    }))
}

/// Saves a 3-channel `[0, 1]` tensor as 8-bit PNG or JPEG (by extension),
/// clamping and rounding to the nearest level.
pub fn save_image(image: &Tensor, path: &Path) -> Result<()> {
    let s = image.shape();
    if s.c != 3 {
        return Err(Error::shape(format!("can only save 3-channel images, got {s}")));
    }
    let mut raw = vec![0u8; s.plane() * 3];
    for c in 0..3 {
        for (i, v) in image.plane(c).iter().enumerate() {
            raw[i * 3 + c] = to_u8(*v);
        }
    }
    let img = RgbImage::from_raw(s.w as u32, s.h as u32, raw).expect("sized buffer");
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save(path).map_err(|e| image_err(path, e.to_string()))
}

fn to_u8(v: f64) -> u8 {
    if v.is_nan() {
        0
    } else {
        (v.clamp(0.0, 1.0) * 255.0).round() as u8
    }
}

/// Loads a grayscale mask as `1 x h x w` values in `[0, 1]`, resampling
/// bilinearly when its size differs from the requested one.
pub fn load_mask(path: &Path, h: usize, w: usize) -> Result<Tensor> {
    let gray = open(path)?.to_luma8();
    let (mw, mh) = (gray.width() as usize, gray.height() as usize);
    let raw = gray.as_raw();
    let m = Tensor::from_fn(Shape3::new(1, mh, mw)?, |_, y, x| raw[y * mw + x] as f64 / 255.0);
    if (mh, mw) == (h, w) {
        Ok(m)
    } else {
        Ok(resize_bilinear(&m, h, w)?.map(|v| v.clamp(0.0, 1.0)))
    }
}

/// Loads an 8-bit index image: each gray level is a region label.
/// Returns `(labels, height, width)`.
pub fn load_labels(path: &Path) -> Result<(Vec<u8>, usize, usize)> {
    let gray = open(path)?.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    Ok((gray.into_raw(), h, w))
}

/// Nearest-neighbour resampling of a label map.
pub fn resize_labels(labels: &[u8], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let sy = (y * h) / out_h;
        for x in 0..out_w {
            out.push(labels[sy * w + (x * w) / out_w]);
        }
    }
    out
}
