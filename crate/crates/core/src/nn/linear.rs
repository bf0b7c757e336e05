use super::expect_shape;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct LinearCache<T: Scalar> {
    input: Tensor<T>,
    weight: Tensor<T>,
}

/// `x · weight + bias` for `x: [N, F]`, `weight: [F, O]`, `bias: [O]`.
pub fn linear<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(Tensor<T>, LinearCache<T>)> {
    let (_, f) = x.dims2("linear")?;
    let (wf, o) = weight.dims2("linear")?;
    if f != wf {
        return Err(Error::dim(
            "linear",
            format!("input has {f} features, weight is {:?}", weight.shape()),
        ));
    }
    expect_shape("linear", bias, &[o])?;
    let mut y = x.matmul(weight)?;
    for row in y.data_mut().chunks_mut(o) {
        for (v, &b) in row.iter_mut().zip(bias.data()) {
            *v = *v + b;
        }
    }
    Ok((
        y,
        LinearCache {
            input: x.clone(),
            weight: weight.clone(),
        },
    ))
}

/// `(grad_x, grad_weight, grad_bias)`.
pub fn linear_backward<T: Scalar>(
    cache: &LinearCache<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, _) = cache.input.dims2("linear_backward")?;
    let (_, o) = cache.weight.dims2("linear_backward")?;
    expect_shape("linear_backward", grad_out, &[n, o])?;
    let gx = grad_out.matmul(&cache.weight.transpose()?)?;
    let gw = cache.input.transpose()?.matmul(grad_out)?;
    let mut gb = vec![T::zero(); o];
    for row in grad_out.data().chunks(o) {
        for (acc, &g) in gb.iter_mut().zip(row) {
            *acc = *acc + g;
        }
    }
    Ok((gx, gw, Tensor::from_vec(&[o], gb)?))
}
