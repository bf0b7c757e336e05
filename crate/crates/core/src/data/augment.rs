//! Training-time augmentation on unit-scaled `[C, H, W]` images.
//!
//! Each sample goes through contrast → rotation → zoom with parameters drawn
//! from a stream keyed by `(seed, epoch, sample index)`, so every epoch sees a
//! fresh but reproducible variant of the training set.

use crate::error::{Error, Result};
use crate::tensor::{Rng, Stream, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub contrast_factors: Vec<f64>,
    /// Rotation angles are drawn from `[-rotation_deg, rotation_deg)`.
    pub rotation_deg: f64,
    /// Zoom scales are drawn from `[1, 1 + zoom_max)`.
    pub zoom_max: f64,
    pub enabled: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            contrast_factors: vec![1.0, 0.2, 0.3, 0.5, 0.6, 0.7, 0.8, 0.9, 1.3, 1.5],
            rotation_deg: 15.0,
            zoom_max: 0.091,
            enabled: true,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.contrast_factors.is_empty() {
            return Err(Error::Config("contrast_factors is empty".into()));
        }
        if let Some(f) = self
            .contrast_factors
            .iter()
            .find(|f| !(f.is_finite() && **f > 0.0))
        {
            return Err(Error::Config(format!(
                "contrast factor must be positive, got {f}"
            )));
        }
        if !(self.rotation_deg.is_finite() && self.rotation_deg >= 0.0) {
            return Err(Error::Config(format!(
                "rotation_deg must be >= 0, got {}",
                self.rotation_deg
            )));
        }
        if !(self.zoom_max.is_finite() && self.zoom_max >= 0.0) {
            return Err(Error::Config(format!(
                "zoom_max must be >= 0, got {}",
                self.zoom_max
            )));
        }
        Ok(())
    }
}

/// One sample's augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub factor: f64,
    pub degrees: f64,
    pub scale: f64,
}

impl AugmentDraw {
    pub fn sample(cfg: &AugmentConfig, rng: &mut Rng) -> Self {
        let factor = cfg.contrast_factors[rng.below(cfg.contrast_factors.len() as u64) as usize];
        let degrees = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg);
        let scale = rng.uniform(1.0, 1.0 + cfg.zoom_max);
        AugmentDraw {
            factor,
            degrees,
            scale,
        }
    }
}

fn chw(t: &Tensor<f32>, op: &'static str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::dim(op, format!("expected [C, H, W], got {s:?}"))),
    }
}

/// `mean + factor·(v − mean)` with the image-wide mean, clamped to `[0, 1]`.
pub fn adjust_contrast(t: &Tensor<f32>, factor: f64) -> Result<Tensor<f32>> {
    chw(t, "adjust_contrast")?;
    if !(factor.is_finite() && factor > 0.0) {
        return Err(Error::Input(format!(
            "contrast factor must be positive, got {factor}"
        )));
    }
    let mean = t.data().iter().map(|&v| v as f64).sum::<f64>() / t.len() as f64;
    Ok(t.map(|v| (mean + factor * (v as f64 - mean)).clamp(0.0, 1.0) as f32))
}

/// Bilinear read at `(x, y)` where taps outside the plane are 0.
fn sample(plane: &[f32], w: usize, h: usize, x: f64, y: f64) -> f32 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = (x - x0) as f32;
    let fy = (y - y0) as f32;
    let at = |xi: f64, yi: f64| -> f32 {
        if xi < 0.0 || yi < 0.0 || xi >= w as f64 || yi >= h as f64 {
            0.0
        } else {
            plane[yi as usize * w + xi as usize]
        }
    };
    let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1.0, y0) * fx;
    let bottom = at(x0, y0 + 1.0) * (1.0 - fx) + at(x0 + 1.0, y0 + 1.0) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Resample every plane through `map: output (x, y) → source (x, y)`.
fn warp(t: &Tensor<f32>, map: impl Fn(f64, f64) -> (f64, f64)) -> Tensor<f32> {
    let (c, h, w) = chw(t, "warp").expect("checked by caller");
    let mut out = vec![0.0f32; c * h * w];
    for ch in 0..c {
        let plane = &t.data()[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = map(x as f64, y as f64);
                dst[y * w + x] = sample(plane, w, h, sx, sy);
            }
        }
    }
    Tensor::from_vec(&[c, h, w], out).expect("same shape")
}

/// Rotate counter-clockwise by `degrees` about the image center; uncovered
/// pixels become 0.
pub fn rotate(t: &Tensor<f32>, degrees: f64) -> Result<Tensor<f32>> {
    let (_, h, w) = chw(t, "rotate")?;
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (sin, cos) = degrees.to_radians().sin_cos();
    // Rows grow downward, so a visual counter-clockwise turn maps an output
    // offset (dx, dy) back to (cos·dx − sin·dy, sin·dx + cos·dy).
    Ok(warp(t, |x, y| {
        let (dx, dy) = (x - cx, y - cy);
        (cx + cos * dx - sin * dy, cy + sin * dx + cos * dy)
    }))
}

/// Magnify by `scale ≥ 1` about the center and crop back to the same size.
pub fn zoom(t: &Tensor<f32>, scale: f64) -> Result<Tensor<f32>> {
    let (_, h, w) = chw(t, "zoom")?;
    if !(scale.is_finite() && scale >= 1.0) {
        return Err(Error::Input(format!(
            "zoom scale must be >= 1, got {scale}"
        )));
    }
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    Ok(warp(t, |x, y| {
        (cx + (x - cx) / scale, cy + (y - cy) / scale)
    }))
}

/// Apply one draw: contrast, then rotation, then zoom.
pub fn apply_draw(t: &Tensor<f32>, d: AugmentDraw) -> Result<Tensor<f32>> {
    let t = adjust_contrast(t, d.factor)?;
    let t = rotate(&t, d.degrees)?;
    zoom(&t, d.scale)
}

/// Augment sample `index` for `epoch`; identity when `cfg` is disabled.
pub fn augment(
    t: &Tensor<f32>,
    cfg: &AugmentConfig,
    seed: u64,
    epoch: u64,
    index: u64,
) -> Result<Tensor<f32>> {
    if !cfg.enabled {
        return Ok(t.clone());
    }
    let mut rng = Rng::stream(seed, Stream::Augment, &[epoch, index]);
    apply_draw(t, AugmentDraw::sample(cfg, &mut rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(size: usize, f: impl Fn(f64, f64) -> f64) -> Tensor<f32> {
        let mut data = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                data.push(f(x as f64, y as f64) as f32);
            }
        }
        Tensor::from_vec(&[1, size, size], data).unwrap()
    }

    fn blob(size: usize, sigma: f64) -> Tensor<f32> {
        let c = (size as f64 - 1.0) / 2.0;
        pattern(size, |x, y| {
            (-((x - c).powi(2) + (y - c).powi(2)) / (2.0 * sigma * sigma)).exp()
        })
    }

    fn std(t: &Tensor<f32>) -> f64 {
        let n = t.len() as f64;
        let m = t.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        (t.data()
            .iter()
            .map(|&v| (v as f64 - m).powi(2))
            .sum::<f64>()
            / n)
            .sqrt()
    }

    fn centroid(t: &Tensor<f32>) -> (f64, f64) {
        let s = t.shape()[2];
        let (mut mx, mut my, mut m) = (0.0, 0.0, 0.0);
        for (i, &v) in t.data().iter().enumerate() {
            mx += (i % s) as f64 * v as f64;
            my += (i / s) as f64 * v as f64;
            m += v as f64;
        }
        (mx / m, my / m)
    }

    #[test]
    fn contrast_identity_and_constant() {
        let t = blob(16, 3.0);
        assert_eq!(adjust_contrast(&t, 1.0).unwrap(), t);
        let flat = Tensor::full(&[3, 4, 4], 0.3f32);
        for f in [0.2, 1.5] {
            assert_eq!(adjust_contrast(&flat, f).unwrap(), flat);
        }
    }

    #[test]
    fn contrast_half_halves_std() {
        let t = blob(32, 5.0);
        let out = adjust_contrast(&t, 0.5).unwrap();
        assert!((std(&out) - 0.5 * std(&t)).abs() < 1e-6);
    }

    #[test]
    fn zero_rotation_is_identity() {
        let t = blob(32, 4.0);
        let r = rotate(&t, 0.0).unwrap();
        let worst = t
            .data()
            .iter()
            .zip(r.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max);
        assert!(worst < 1e-6);
    }

    #[test]
    fn rotation_inverse_composition() {
        let t = pattern(32, |x, y| 0.5 + 0.25 * (x / 5.0).sin() * (y / 7.0).cos());
        let back = rotate(&rotate(&t, 15.0).unwrap(), -15.0).unwrap();
        // Compare away from the corners, which rotate out of frame.
        let mut worst = 0.0f32;
        for y in 8..24 {
            for x in 8..24 {
                worst = worst.max((t.data()[y * 32 + x] - back.data()[y * 32 + x]).abs());
            }
        }
        assert!(worst < 0.1, "L∞ {worst}");
    }

    #[test]
    fn rotation_conserves_blob_mass() {
        let t = blob(32, 3.0);
        let mass: f32 = t.data().iter().sum();
        for deg in [-15.0, -7.5, 4.0, 15.0] {
            let r: f32 = rotate(&t, deg).unwrap().data().iter().sum();
            assert!((r - mass).abs() / mass < 0.02, "{deg}: {r} vs {mass}");
        }
    }

    #[test]
    fn rotation_direction() {
        // A dot right of center moves above center after +90°.
        let mut t = Tensor::zeros(&[1, 5, 5]);
        t.data_mut()[2 * 5 + 4] = 1.0;
        let r = rotate(&t, 90.0).unwrap();
        assert!((r.data()[2] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zoom_identity_and_centering() {
        let t = blob(32, 4.0);
        assert_eq!(zoom(&t, 1.0).unwrap(), t);
        let (cx, cy) = centroid(&zoom(&t, 1.091).unwrap());
        assert!((cx - 15.5).abs() < 0.5 && (cy - 15.5).abs() < 0.5);
    }

    #[test]
    fn zoom_crops_the_original_border() {
        // At 1.091 the output corner reads source coordinate ≈ 1.29, so the
        // outermost ring of the original never reaches the output.
        let t = pattern(32, |x, y| {
            if x == 0.0 || y == 0.0 || x == 31.0 || y == 31.0 {
                1.0
            } else {
                0.0
            }
        });
        let z = zoom(&t, 1.091).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert!(zoom(&t, 1.0).unwrap().data()[0] == 1.0);
    }

    #[test]
    fn augment_disabled_and_deterministic() {
        let t = blob(32, 4.0);
        assert_eq!(augment(&t, &AugmentConfig::disabled(), 1, 3, 7).unwrap(), t);
        let cfg = AugmentConfig::default();
        let a = augment(&t, &cfg, 1, 3, 7).unwrap();
        assert_eq!(a, augment(&t, &cfg, 1, 3, 7).unwrap());
        assert_ne!(a, augment(&t, &cfg, 1, 4, 7).unwrap());
        assert_eq!(a.shape(), t.shape());
        assert!(a.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn contrast_factor_frequencies() {
        let cfg = AugmentConfig::default();
        let mut counts = [0usize; 10];
        for i in 0..10_000u64 {
            let mut rng = Rng::stream(1, Stream::Augment, &[0, i]);
            let d = AugmentDraw::sample(&cfg, &mut rng);
            let k = cfg
                .contrast_factors
                .iter()
                .position(|&f| f == d.factor)
                .unwrap();
            counts[k] += 1;
            assert!(d.degrees.abs() <= 15.0);
            assert!((1.0..1.091).contains(&d.scale));
        }
        for c in counts {
            let freq = c as f64 / 10_000.0;
            assert!((freq - 0.1).abs() <= 0.02, "{counts:?}");
        }
    }

    #[test]
    fn config_validation() {
        assert!(AugmentConfig::default().validate().is_ok());
        let bad = AugmentConfig {
            contrast_factors: vec![1.0, 0.0],
            ..AugmentConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
