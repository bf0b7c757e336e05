use super::expect_shape;
use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct ReluCache {
    shape: Vec<usize>,
    active: Vec<bool>,
}

/// `max(0, x)` elementwise.
pub fn relu<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, ReluCache) {
    let active: Vec<bool> = x.data().iter().map(|&v| v > T::zero()).collect();
    let y = x.map(|v| if v > T::zero() { v } else { T::zero() });
    (
        y,
        ReluCache {
            shape: x.shape().to_vec(),
            active,
        },
    )
}

/// Passes the gradient where the input was strictly positive; the
/// subgradient at exactly zero is taken as zero.
pub fn relu_backward<T: Scalar>(cache: &ReluCache, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    expect_shape("relu_backward", grad_out, &cache.shape)?;
    let data = grad_out
        .data()
        .iter()
        .zip(&cache.active)
        .map(|(&g, &on)| if on { g } else { T::zero() })
        .collect();
    Tensor::from_vec(&cache.shape, data)
}

/// Row-wise softmax of `[N, K]` scores with max subtraction.
pub fn softmax<T: Scalar>(z: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, k) = z.dims2("softmax")?;
    let mut out = vec![T::zero(); n * k];
    for (row, dst) in z.data().chunks(k).zip(out.chunks_mut(k)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - max).exp();
            total = total + *d;
        }
        for d in dst.iter_mut() {
            *d = *d / total;
        }
    }
    Tensor::from_vec(&[n, k], out)
}
