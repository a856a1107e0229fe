//! 8-bit quantization of [−1, 1] images and grayscale PNG encoding.
//!
//! `byte = round((v + 1) / 2 · 255)` after clamping to [−1, 1]; the
//! inverse is `v = byte · 2/255 − 1`, so dequantization is within 1/255.

use base64::Engine;
use serde::Serialize;
use tlp_core::fpg::Mask;
use tlp_core::Tensor;

/// Affine map from stored bytes back to intensities: `v = byte·scale + offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Window {
    pub scale: f64,
    pub offset: f64,
}

pub const WINDOW: Window = Window { scale: 2.0 / 255.0, offset: -1.0 };

pub fn quantize(img: &Tensor) -> Vec<u8> {
    img.data()
        .iter()
        .map(|&v| (((v as f64).clamp(-1.0, 1.0) + 1.0) / 2.0 * 255.0).round() as u8)
        .collect()
}

pub fn dequantize(bytes: &[u8]) -> Vec<f64> {
    bytes.iter().map(|&b| b as f64 * WINDOW.scale + WINDOW.offset).collect()
}

pub fn png_gray(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().expect("in-memory PNG header");
        w.write_image_data(pixels).expect("in-memory PNG body");
    }
    out
}

/// Last two dimensions of an image tensor.
fn extent(img: &Tensor) -> (usize, usize) {
    let s = img.shape();
    (s[s.len() - 2], s[s.len() - 1])
}

pub fn image_png_b64(img: &Tensor) -> String {
    let (h, w) = extent(img);
    base64::engine::general_purpose::STANDARD.encode(png_gray(w, h, &quantize(img)))
}

pub fn mask_png_b64(mask: &Mask) -> String {
    let px: Vec<u8> = mask.cells().iter().map(|&c| c * 255).collect();
    base64::engine::general_purpose::STANDARD.encode(png_gray(mask.width(), mask.height(), &px))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Stats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

pub fn stats(img: &Tensor) -> Stats {
    let d = img.data();
    let min = d.iter().fold(f64::INFINITY, |a, &v| a.min(v as f64));
    let max = d.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v as f64));
    Stats { min, max, mean: img.mean_f64() }
}
