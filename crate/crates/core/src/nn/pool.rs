use super::expect_shape;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct PoolCache {
    input_shape: [usize; 4],
}

/// 2×2 average pooling with stride 2.
pub fn avgpool2d<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, PoolCache)> {
    let (n, c, h, w) = x.dims4("avgpool2d")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Config(format!(
            "2x2 average pooling needs even spatial dims, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    let src = x.data();
    let mut out = vec![T::zero(); n * c * oh * ow];
    for (plane, dst) in src.chunks(h * w).zip(out.chunks_mut(oh * ow)) {
        for y in 0..oh {
            for xo in 0..ow {
                let a = plane[2 * y * w + 2 * xo];
                let b = plane[2 * y * w + 2 * xo + 1];
                let c2 = plane[(2 * y + 1) * w + 2 * xo];
                let d = plane[(2 * y + 1) * w + 2 * xo + 1];
                dst[y * ow + xo] = (a + b + c2 + d) * quarter;
            }
        }
    }
    Ok((
        Tensor::from_vec(&[n, c, oh, ow], out)?,
        PoolCache {
            input_shape: [n, c, h, w],
        },
    ))
}

/// Each input cell receives a quarter of its window's gradient.
pub fn avgpool2d_backward<T: Scalar>(cache: &PoolCache, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = cache.input_shape;
    let (oh, ow) = (h / 2, w / 2);
    expect_shape("avgpool2d_backward", grad_out, &[n, c, oh, ow])?;
    let quarter = T::from_f64(0.25);
    let mut out = vec![T::zero(); n * c * h * w];
    for (g, dst) in grad_out.data().chunks(oh * ow).zip(out.chunks_mut(h * w)) {
        for y in 0..h {
            for xo in 0..w {
                dst[y * w + xo] = g[(y / 2) * ow + xo / 2] * quarter;
            }
        }
    }
    Tensor::from_vec(&cache.input_shape, out)
}

/// Mean over all spatial positions: `[N, C, H, W] -> [N, C]`.
pub fn global_avgpool<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, PoolCache)> {
    let (n, c, h, w) = x.dims4("global_avgpool")?;
    let inv = T::from_f64(1.0 / (h * w) as f64);
    let out = x
        .data()
        .chunks(h * w)
        .map(|plane| plane.iter().copied().sum::<T>() * inv)
        .collect();
    Ok((
        Tensor::from_vec(&[n, c], out)?,
        PoolCache {
            input_shape: [n, c, h, w],
        },
    ))
}

pub fn global_avgpool_backward<T: Scalar>(
    cache: &PoolCache,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = cache.input_shape;
    expect_shape("global_avgpool_backward", grad_out, &[n, c])?;
    let inv = T::from_f64(1.0 / (h * w) as f64);
    let out = grad_out
        .data()
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g * inv, h * w))
        .collect();
    Tensor::from_vec(&cache.input_shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{assert_close, numeric_gradient};
    use crate::tensor::Rng;

    fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
        let len = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn window_mean() {
        let x = Tensor::<f32>::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(avgpool2d(&x).unwrap().0.data(), &[2.5]);
    }

    #[test]
    fn constant_halves_resolution() {
        let x = Tensor::<f32>::full(&[2, 3, 8, 6], 1.5);
        let (y, _) = avgpool2d(&x).unwrap();
        assert_eq!(y.shape(), &[2, 3, 4, 3]);
        assert!(y.data().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn backward_spreads_quarters() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let (y, cache) = avgpool2d(&x).unwrap();
        let g = avgpool2d_backward(&cache, &Tensor::full(y.shape(), 1.0)).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn odd_dims_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 1, 3, 4]);
        assert!(matches!(avgpool2d(&x), Err(Error::Config(_))));
    }

    #[test]
    fn global_pool_cases() {
        let x = Tensor::<f32>::from_vec(&[2, 2, 1, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, _) = global_avgpool(&x).unwrap();
        assert_eq!(y.shape(), &[2, 2]);
        assert_eq!(y.data(), x.data());
        let (y, _) = global_avgpool(&Tensor::<f32>::full(&[1, 3, 5, 5], -2.0)).unwrap();
        assert!(y.data().iter().all(|&v| (v + 2.0).abs() < 1e-6));
    }

    #[test]
    fn global_pool_matches_direct_sum() {
        let mut rng = Rng::new(3);
        let x = random(&[2, 3, 4, 5], &mut rng);
        let (y, _) = global_avgpool(&x).unwrap();
        for (i, plane) in x.data().chunks(20).enumerate() {
            let mut s = 0.0;
            for v in plane {
                s += v;
            }
            assert!((y.data()[i] - s / 20.0).abs() < 1e-6);
        }
    }

    #[test]
    fn pool_gradients_match_finite_differences() {
        let mut rng = Rng::new(4);
        let x = random(&[2, 2, 4, 6], &mut rng);
        let (y, cache) = avgpool2d(&x).unwrap();
        let r = random(y.shape(), &mut rng);
        let g = avgpool2d_backward(&cache, &r).unwrap();
        let n = numeric_gradient(&x, 1e-5, |t| avgpool2d(t).unwrap().0.dot(&r).unwrap());
        assert_close(g.data(), n.data(), 1e-6, 1e-3);

        let (y, cache) = global_avgpool(&x).unwrap();
        let r = random(y.shape(), &mut rng);
        let g = global_avgpool_backward(&cache, &r).unwrap();
        let n = numeric_gradient(&x, 1e-5, |t| global_avgpool(t).unwrap().0.dot(&r).unwrap());
        assert_close(g.data(), n.data(), 1e-6, 1e-3);
    }
}
