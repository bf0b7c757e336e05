//! A toy ten-class image set for smoke tests and demos.
//!
//! Each class is a bright glyph of its own shape (bar, ring, diagonal, cross
//! and so on) at a jittered position and size, on a dark background with
//! low-level noise. Classes differ by shape rather than location so that a
//! globally pooled network can tell them apart. Images already have the
//! prepared polarity and three equal channels.

use super::image::RawImage;
use super::packed::PackedDataset;
use crate::error::Result;
use crate::tensor::Rng;

/// Whether glyph-local point `(u, v)`, with the glyph spanning `[-1, 1]²`,
/// is inked for `label`. `t` is the half-width of a stroke.
fn inked(label: u8, u: f64, v: f64, t: f64) -> bool {
    if u.abs() > 1.0 || v.abs() > 1.0 {
        return false;
    }
    let r = u.hypot(v);
    match label {
        0 => (r - 0.75).abs() < t,
        1 => u.abs() < t,
        2 => v.abs() < t,
        3 => (u - v).abs() < 1.4 * t,
        4 => (u + v).abs() < 1.4 * t,
        5 => u.abs() < t || v.abs() < t,
        6 => (u - v).abs() < 1.4 * t || (u + v).abs() < 1.4 * t,
        7 => u.abs().max(v.abs()) > 1.0 - 2.0 * t,
        8 => (v - 0.6).abs() < t || (v + 0.6).abs() < t,
        _ => r < 0.55,
    }
}

/// `n` images of `size × size` with labels cycling through `0..10`.
pub fn stroke_digits(n: usize, size: usize, seed: u64) -> Result<PackedDataset> {
    let mut rng = Rng::new(seed);
    let mut out = PackedDataset::new(size, size, 3)?;
    let s = size as f64;
    for i in 0..n {
        let label = (i % 10) as u8;
        let half = s * rng.uniform(0.3, 0.4);
        let cx = s / 2.0 + rng.uniform(-0.08, 0.08) * s;
        let cy = s / 2.0 + rng.uniform(-0.08, 0.08) * s;
        // At least about one pixel wide whatever the image size.
        let t = (0.6 / half).max(0.18);
        let mut px = Vec::with_capacity(size * size * 3);
        for y in 0..size {
            for x in 0..size {
                let u = (x as f64 + 0.5 - cx) / half;
                let v = (y as f64 + 0.5 - cy) / half;
                let val = if inked(label, u, v, t) {
                    220 + rng.below(36) as u8
                } else {
                    rng.below(30) as u8
                };
                px.extend_from_slice(&[val, val, val]);
            }
        }
        out.push(label, &RawImage::new(size, size, 3, px)?)?;
    }
    Ok(out)
}
