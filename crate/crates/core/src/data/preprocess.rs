//! Raw image to network input.
//!
//! 1. grayscale with ITU-R 601 luma (`0.299 R + 0.587 G + 0.114 B`)
//! 2. bilinear resize to 28×28
//! 3. invert (`v ← 255 − v`) so strokes are bright on black
//! 4. bilinear resize to 32×32, replicate to 3 channels, round to 8 bits
//! 5. scale to `[0, 1]` and standardize per channel
//!
//! Stages 1–4 produce a [`RawImage`] that can be stored in a packed container.
//! An image that already looks like their output (32×32, three equal channels,
//! dark border) skips them, so running the pipeline on its own output is a
//! fixed point up to standardization.

use super::image::RawImage;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const GRAY_SIZE: usize = 28;
pub const INPUT_SIZE: usize = 32;
pub const INPUT_CHANNELS: usize = 3;

/// Mean border value below which a prepared-looking image counts as inverted.
const DARK_BORDER: f64 = 64.0;

/// Bilinear resize with corner-aligned sampling: output pixel `i` reads
/// source coordinate `i·(src − 1)/(dst − 1)`, so equal sizes are the identity.
pub fn resize_bilinear(
    src: &[f32],
    (sw, sh): (usize, usize),
    (dw, dh): (usize, usize),
) -> Vec<f32> {
    assert_eq!(src.len(), sw * sh, "resize_bilinear: source size");
    let taps = |d: usize, s: usize| -> Vec<(usize, usize, f32)> {
        (0..d)
            .map(|i| {
                let pos = if d > 1 {
                    (i * (s - 1)) as f64 / (d - 1) as f64
                } else {
                    (s - 1) as f64 / 2.0
                };
                let i0 = (pos.floor() as usize).min(s - 1);
                let i1 = (i0 + 1).min(s - 1);
                (i0, i1, (pos - i0 as f64) as f32)
            })
            .collect()
    };
    let xs = taps(dw, sw);
    let ys = taps(dh, sh);
    let mut out = Vec::with_capacity(dw * dh);
    for &(y0, y1, fy) in &ys {
        let r0 = &src[y0 * sw..][..sw];
        let r1 = &src[y1 * sw..][..sw];
        for &(x0, x1, fx) in &xs {
            let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
            let bottom = r1[x0] + (r1[x1] - r1[x0]) * fx;
            out.push(top + (bottom - top) * fy);
        }
    }
    out
}

/// Stage 1: luma plane on the 0–255 scale.
pub fn grayscale(img: &RawImage) -> Vec<f32> {
    match img.channels() {
        1 => img.pixels().iter().map(|&v| v as f32).collect(),
        _ => img
            .pixels()
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32)
            .collect(),
    }
}

fn quantize(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// True when `img` already has the shape and polarity of a [`prepare`] output.
pub fn is_prepared(img: &RawImage) -> bool {
    let (w, h) = (img.width(), img.height());
    if (w, h, img.channels()) != (INPUT_SIZE, INPUT_SIZE, INPUT_CHANNELS) {
        return false;
    }
    let px = img.pixels();
    if px.chunks_exact(3).any(|p| p[0] != p[1] || p[1] != p[2]) {
        return false;
    }
    let mut sum = 0.0;
    let mut n = 0.0;
    for y in 0..h {
        for x in 0..w {
            if y == 0 || x == 0 || y + 1 == h || x + 1 == w {
                sum += px[(y * w + x) * 3] as f64;
                n += 1.0;
            }
        }
    }
    sum / n < DARK_BORDER
}

/// Stages 1–4: a 32×32, 3-channel, inverted 8-bit image.
pub fn prepare(img: &RawImage) -> Result<RawImage> {
    if is_prepared(img) {
        return Ok(img.clone());
    }
    let gray = grayscale(img);
    let small = resize_bilinear(&gray, (img.width(), img.height()), (GRAY_SIZE, GRAY_SIZE));
    let inverted: Vec<f32> = small.iter().map(|&v| 255.0 - v).collect();
    let big = resize_bilinear(&inverted, (GRAY_SIZE, GRAY_SIZE), (INPUT_SIZE, INPUT_SIZE));
    let pixels = big
        .iter()
        .flat_map(|&v| [quantize(v); INPUT_CHANNELS])
        .collect();
    RawImage::new(INPUT_SIZE, INPUT_SIZE, INPUT_CHANNELS, pixels)
}

/// Planar `[C, H, W]` tensor with values in `[0, 1]`.
pub fn to_unit(img: &RawImage) -> Tensor<f32> {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let mut data = vec![0.0f32; w * h * c];
    for (i, px) in img.pixels().chunks_exact(c).enumerate() {
        for (ch, &v) in px.iter().enumerate() {
            data[ch * w * h + i] = v as f32 / 255.0;
        }
    }
    Tensor::from_vec(&[c, h, w], data).expect("shape matches pixel count")
}

/// Per-channel standardization statistics, in `[0, 1]` units.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalization {
    /// Leaves unit-scaled values unchanged.
    pub fn identity(channels: usize) -> Self {
        Normalization {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Population mean and standard deviation per channel over `images`.
    pub fn fit<'a>(images: impl IntoIterator<Item = &'a RawImage>) -> Result<Self> {
        let mut sums: Vec<(f64, f64)> = Vec::new();
        let mut count = 0usize;
        for img in images {
            let c = img.channels();
            if sums.is_empty() {
                sums = vec![(0.0, 0.0); c];
            } else if sums.len() != c {
                return Err(Error::Input(format!(
                    "mixed channel counts: {} and {c}",
                    sums.len()
                )));
            }
            for px in img.pixels().chunks_exact(c) {
                for (s, &v) in sums.iter_mut().zip(px) {
                    let v = v as f64 / 255.0;
                    s.0 += v;
                    s.1 += v * v;
                }
            }
            count += img.width() * img.height();
        }
        if count == 0 {
            return Err(Error::Input("no samples to fit normalization".into()));
        }
        let n = count as f64;
        let mut mean = Vec::with_capacity(sums.len());
        let mut std = Vec::with_capacity(sums.len());
        for (ch, (s, sq)) in sums.into_iter().enumerate() {
            let m = s / n;
            let var = (sq / n - m * m).max(0.0);
            if var.sqrt() < 1e-6 {
                return Err(Error::Input(format!(
                    "channel {ch} is constant, cannot standardize"
                )));
            }
            mean.push(m as f32);
            std.push(var.sqrt() as f32);
        }
        Ok(Normalization { mean, std })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Standardize a `[C, H, W]` or `[N, C, H, W]` tensor in place.
    pub fn apply(&self, t: &mut Tensor<f32>) -> Result<()> {
        let shape = t.shape().to_vec();
        let (c, plane) = match shape.len() {
            3 => (shape[0], shape[1] * shape[2]),
            4 => (shape[1], shape[2] * shape[3]),
            _ => {
                return Err(Error::dim(
                    "standardize",
                    format!("rank {} tensor", shape.len()),
                ))
            }
        };
        if c != self.channels() {
            return Err(Error::dim(
                "standardize",
                format!("{c} channels, statistics for {}", self.channels()),
            ));
        }
        for (i, chunk) in t.data_mut().chunks_mut(plane).enumerate() {
            let (m, s) = (self.mean[i % c], self.std[i % c]);
            for v in chunk {
                *v = (*v - m) / s;
            }
        }
        Ok(())
    }
}

/// Full pipeline: `[3, 32, 32]` standardized tensor.
pub fn preprocess(img: &RawImage, norm: &Normalization) -> Result<Tensor<f32>> {
    let mut t = to_unit(&prepare(img)?);
    norm.apply(&mut t)?;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(img: &RawImage) -> Tensor<f32> {
        to_unit(&prepare(img).unwrap())
    }

    #[test]
    fn white_page_becomes_zero() {
        let img = RawImage::new(40, 50, 3, vec![255; 40 * 50 * 3]).unwrap();
        let t = unit(&img);
        assert_eq!(t.shape(), &[3, 32, 32]);
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn black_page_becomes_one() {
        let img = RawImage::new(28, 28, 1, vec![0; 28 * 28]).unwrap();
        assert!(unit(&img).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn same_grid_resize_is_identity() {
        let src: Vec<f32> = (0..28 * 28).map(|i| (i * 37 % 255) as f32).collect();
        assert_eq!(resize_bilinear(&src, (28, 28), (28, 28)), src);
    }

    #[test]
    fn resize_preserves_linear_ramps() {
        // Bilinear interpolation reproduces affine functions exactly.
        let src: Vec<f32> = (0..5 * 3)
            .map(|i| (i % 5) as f32 * 2.0 + (i / 5) as f32)
            .collect();
        let out = resize_bilinear(&src, (5, 3), (9, 5));
        for y in 0..5 {
            for x in 0..9 {
                let expected = x as f32 * 0.5 * 2.0 + y as f32 * 0.5;
                assert!((out[y * 9 + x] - expected).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn luma_weights() {
        let img = RawImage::new(1, 1, 3, vec![100, 200, 50]).unwrap();
        let g = grayscale(&img)[0];
        assert!((g - (29.9 + 117.4 + 5.7)).abs() < 1e-4);
    }

    #[test]
    fn fixed_point_on_prepared_input() {
        let mut px = vec![255u8; 20 * 24];
        for y in 6..18 {
            for x in 8..12 {
                px[y * 20 + x] = 0;
            }
        }
        let raw = RawImage::new(20, 24, 1, px).unwrap();
        let once = prepare(&raw).unwrap();
        assert!(is_prepared(&once));
        assert_eq!(prepare(&once).unwrap(), once);
    }

    #[test]
    fn normalization_round_trip() {
        let a = RawImage::new(2, 1, 1, vec![0, 255]).unwrap();
        let norm = Normalization::fit([&a]).unwrap();
        assert!((norm.mean[0] - 0.5).abs() < 1e-7);
        assert!((norm.std[0] - 0.5).abs() < 1e-7);
        let mut t = to_unit(&a);
        norm.apply(&mut t).unwrap();
        assert_eq!(t.data(), &[-1.0, 1.0]);
    }

    #[test]
    fn constant_channel_rejected() {
        let a = RawImage::new(2, 2, 1, vec![9; 4]).unwrap();
        assert!(Normalization::fit([&a]).is_err());
    }
}
