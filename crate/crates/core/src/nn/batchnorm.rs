use super::{expect_shape, Mode};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Per-channel affine parameters and inference statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: f64,
    /// Weight of the newest batch in the running averages.
    pub momentum: f64,
}

impl<T: Scalar> BatchNormParams<T> {
    /// γ = 1, β = 0, running mean 0, running variance 1.
    pub fn new(channels: usize, eps: f64, momentum: f64) -> Self {
        BatchNormParams {
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            eps,
            momentum,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn validate(&self) -> Result<()> {
        let c = self.channels();
        for (name, t) in [
            ("beta", &self.beta),
            ("running_mean", &self.running_mean),
            ("running_var", &self.running_var),
        ] {
            if t.shape() != [c] {
                return Err(Error::dim(
                    "batchnorm",
                    format!("{name} has shape {:?}, gamma has [{c}]", t.shape()),
                ));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!(
                "batchnorm eps must be > 0, got {}",
                self.eps
            )));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "batchnorm momentum must be in [0, 1], got {}",
                self.momentum
            )));
        }
        if self.running_var.data().iter().any(|&v| v < T::zero()) {
            return Err(Error::Contract("negative running variance".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum BatchNormCache<T: Scalar> {
    Train {
        x_hat: Tensor<T>,
        inv_std: Vec<f64>,
        gamma: Vec<f64>,
        batch_mean: Vec<f64>,
        batch_var: Vec<f64>,
    },
    Infer {
        shape: Vec<usize>,
    },
}

impl<T: Scalar> BatchNormCache<T> {
    /// Batch mean and biased variance per channel (train-mode caches only).
    pub fn batch_stats(&self) -> Option<(&[f64], &[f64])> {
        match self {
            BatchNormCache::Train {
                batch_mean,
                batch_var,
                ..
            } => Some((batch_mean, batch_var)),
            BatchNormCache::Infer { .. } => None,
        }
    }
}

/// Normalize `x: [N, C, H, W]` per channel over `(N, H, W)`, then scale and shift.
///
/// Train mode uses the batch statistics and folds them into the running
/// averages of `params` (the variance folded in is the unbiased estimate).
/// Infer mode uses the running statistics and leaves `params` untouched.
pub fn batchnorm_forward<T: Scalar>(
    x: &Tensor<T>,
    params: &mut BatchNormParams<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let (n, c, h, w) = x.dims4("batchnorm")?;
    params.validate()?;
    if c != params.channels() {
        return Err(Error::dim(
            "batchnorm",
            format!(
                "input has {c} channels, parameters have {}",
                params.channels()
            ),
        ));
    }
    let plane = h * w;
    let count = n * plane;
    if count == 0 {
        return Err(Error::Input("batchnorm over an empty batch".into()));
    }
    let f = |v: T| v.as_f64();
    let gamma: Vec<f64> = params.gamma.data().iter().map(|&v| f(v)).collect();
    let beta: Vec<f64> = params.beta.data().iter().map(|&v| f(v)).collect();
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];

    match mode {
        Mode::Infer => {
            for ch in 0..c {
                let mean = f(params.running_mean.data()[ch]);
                let inv = 1.0 / (f(params.running_var.data()[ch]) + params.eps).sqrt();
                let (g, b) = (gamma[ch] * inv, beta[ch] - gamma[ch] * inv * mean);
                for s in 0..n {
                    let off = (s * c + ch) * plane;
                    for i in off..off + plane {
                        out[i] = T::from_f64(g * f(src[i]) + b);
                    }
                }
            }
            Ok((
                Tensor::from_vec(x.shape(), out)?,
                BatchNormCache::Infer {
                    shape: x.shape().to_vec(),
                },
            ))
        }
        Mode::Train => {
            let mut x_hat = vec![T::zero(); src.len()];
            let mut means = vec![0.0; c];
            let mut vars = vec![0.0; c];
            let mut inv_std = vec![0.0; c];
            for ch in 0..c {
                let mut sum = 0.0;
                for s in 0..n {
                    let off = (s * c + ch) * plane;
                    sum += src[off..off + plane].iter().map(|&v| f(v)).sum::<f64>();
                }
                let mean = sum / count as f64;
                let mut sq = 0.0;
                for s in 0..n {
                    let off = (s * c + ch) * plane;
                    sq += src[off..off + plane]
                        .iter()
                        .map(|&v| (f(v) - mean).powi(2))
                        .sum::<f64>();
                }
                let var = sq / count as f64;
                let inv = 1.0 / (var + params.eps).sqrt();
                for s in 0..n {
                    let off = (s * c + ch) * plane;
                    for i in off..off + plane {
                        let xh = (f(src[i]) - mean) * inv;
                        x_hat[i] = T::from_f64(xh);
                        out[i] = T::from_f64(gamma[ch] * xh + beta[ch]);
                    }
                }
                means[ch] = mean;
                vars[ch] = var;
                inv_std[ch] = inv;
            }

            let m = params.momentum;
            let unbias = if count > 1 {
                count as f64 / (count - 1) as f64
            } else {
                1.0
            };
            for ch in 0..c {
                let rm = &mut params.running_mean.data_mut()[ch];
                *rm = T::from_f64((1.0 - m) * f(*rm) + m * means[ch]);
                let rv = &mut params.running_var.data_mut()[ch];
                *rv = T::from_f64((1.0 - m) * f(*rv) + m * vars[ch] * unbias);
            }

            Ok((
                Tensor::from_vec(x.shape(), out)?,
                BatchNormCache::Train {
                    x_hat: Tensor::from_vec(x.shape(), x_hat)?,
                    inv_std,
                    gamma,
                    batch_mean: means,
                    batch_var: vars,
                },
            ))
        }
    }
}

/// `(grad_x, grad_gamma, grad_beta)` through normalize–scale–shift, including
/// the dependence of the batch mean and variance on `x`.
pub fn batchnorm_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let BatchNormCache::Train {
        x_hat,
        inv_std,
        gamma,
        ..
    } = cache
    else {
        return Err(Error::Contract(
            "batchnorm backward needs a train-mode cache".into(),
        ));
    };
    expect_shape("batchnorm_backward", grad_out, x_hat.shape())?;
    let (n, c, h, w) = x_hat.dims4("batchnorm_backward")?;
    let plane = h * w;
    let count = (n * plane) as f64;
    let f = |v: T| v.as_f64();
    let dy = grad_out.data();
    let xh = x_hat.data();
    let mut dx = vec![T::zero(); dy.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let (mut sum_dy, mut sum_dy_xh) = (0.0, 0.0);
        for s in 0..n {
            let off = (s * c + ch) * plane;
            for i in off..off + plane {
                let g = f(dy[i]);
                sum_dy += g;
                sum_dy_xh += g * f(xh[i]);
            }
        }
        dgamma[ch] = T::from_f64(sum_dy_xh);
        dbeta[ch] = T::from_f64(sum_dy);
        let scale = gamma[ch] * inv_std[ch] / count;
        for s in 0..n {
            let off = (s * c + ch) * plane;
            for i in off..off + plane {
                dx[i] = T::from_f64(scale * (count * f(dy[i]) - sum_dy - f(xh[i]) * sum_dy_xh));
            }
        }
    }
    Ok((
        Tensor::from_vec(x_hat.shape(), dx)?,
        Tensor::from_vec(&[c], dgamma)?,
        Tensor::from_vec(&[c], dbeta)?,
    ))
}
