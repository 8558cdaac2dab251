//! Image preprocessing: bilinear resize to the network input resolution and
//! pixel range mapping [0,1] -> [-1,1].

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TARGET_SIZE: usize = 64;

/// Bilinear resample of a [3,H,W] image. Sample points follow the
/// half-pixel-center convention: output pixel i reads input coordinate
/// (i + 0.5) * (in/out) - 0.5, clamped at the borders. A 2x downscale of a
/// row therefore averages adjacent input pairs.
pub fn bilinear_resize(img: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    if img.ndim() != 3 {
        return Err(Error::arg(
            "resize",
            format!("expected [C,H,W], got {:?}", img.shape()),
        ));
    }
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    if h == out_h && w == out_w {
        return Ok(img.clone());
    }
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let mut out = Tensor::zeros(&[c, out_h, out_w]);
    // precompute x-axis taps
    let mut xtap = Vec::with_capacity(out_w);
    for ox in 0..out_w {
        let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
        let x0 = fx.floor() as usize;
        let x1 = (x0 + 1).min(w - 1);
        xtap.push((x0, x1, (fx - x0 as f64) as f32));
    }
    for ch in 0..c {
        for oy in 0..out_h {
            let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let wy = (fy - y0 as f64) as f32;
            for (ox, &(x0, x1, wx)) in xtap.iter().enumerate() {
                let p00 = img.at(&[ch, y0, x0]);
                let p01 = img.at(&[ch, y0, x1]);
                let p10 = img.at(&[ch, y1, x0]);
                let p11 = img.at(&[ch, y1, x1]);
                let top = p00 * (1.0 - wx) + p01 * wx;
                let bot = p10 * (1.0 - wx) + p11 * wx;
                out.set(&[ch, oy, ox], top * (1.0 - wy) + bot * wy);
            }
        }
    }
    Ok(out)
}

/// Resize to the 64x64 network resolution and map [0,1] to [-1,1].
pub fn preprocess_image(img: &Tensor<f32>) -> Result<Tensor<f32>> {
    if img.ndim() != 3 || img.shape()[0] != 3 {
        return Err(Error::arg(
            "preprocess",
            format!("expected a 3-channel [3,H,W] image, got {:?}", img.shape()),
        ));
    }
    if img.shape()[1] < 8 || img.shape()[2] < 8 {
        return Err(Error::arg(
            "preprocess",
            format!("image {:?} smaller than 8x8", img.shape()),
        ));
    }
    let resized = bilinear_resize(img, TARGET_SIZE, TARGET_SIZE)?;
    Ok(resized.map(|v| 2.0 * v - 1.0))
}
