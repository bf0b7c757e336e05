use super::expect_shape;
use crate::error::{Error, Result};
use crate::tensor::{fold_sample, unfold_sample, ConvGeometry, Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct Conv2dCache<T: Scalar> {
    input: Tensor<T>,
    weight: Tensor<T>,
    geom: ConvGeometry,
    out_shape: [usize; 4],
}

impl<T: Scalar> Conv2dCache<T> {
    pub fn output_shape(&self) -> [usize; 4] {
        self.out_shape
    }
}

fn is_pointwise(g: ConvGeometry) -> bool {
    g.kernel_h == 1 && g.kernel_w == 1 && g.stride == 1 && g.pad == 0
}

/// Bias-free cross-correlation of `x: [N, Ci, H, W]` with `weight: [Co, Ci, kh, kw]`.
///
/// Lowered through im2col and one GEMM per sample; 1×1 kernels skip the
/// lowering because the input planes already are the columns.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor<T>, Conv2dCache<T>)> {
    let (n, ci, h, w) = x.dims4("conv2d")?;
    let (co, wci, kh, kw) = weight.dims4("conv2d")?;
    if ci != wci {
        return Err(Error::dim(
            "conv2d",
            format!(
                "input has {ci} channels but weight {:?} expects {wci}",
                weight.shape()
            ),
        ));
    }
    let geom = ConvGeometry {
        kernel_h: kh,
        kernel_w: kw,
        stride,
        pad,
    };
    let (oh, ow) = geom.output_hw(h, w)?;
    let k = ci * kh * kw;
    let p = oh * ow;
    let mut out = vec![T::zero(); n * co * p];

    if is_pointwise(geom) {
        for b in 0..n {
            T::gemm(
                co,
                k,
                p,
                T::one(),
                weight.data(),
                (k as isize, 1),
                &x.data()[b * k * p..(b + 1) * k * p],
                (p as isize, 1),
                T::zero(),
                &mut out[b * co * p..(b + 1) * co * p],
                (p as isize, 1),
            );
        }
    } else {
        let mut cols = vec![T::zero(); k * p];
        for b in 0..n {
            if geom.pad > 0 {
                cols.iter_mut().for_each(|v| *v = T::zero());
            }
            unfold_sample(
                &x.data()[b * ci * h * w..(b + 1) * ci * h * w],
                (ci, h, w),
                geom,
                (oh, ow),
                &mut cols,
                p,
                0,
            );
            T::gemm(
                co,
                k,
                p,
                T::one(),
                weight.data(),
                (k as isize, 1),
                &cols,
                (p as isize, 1),
                T::zero(),
                &mut out[b * co * p..(b + 1) * co * p],
                (p as isize, 1),
            );
        }
    }

    let out_shape = [n, co, oh, ow];
    let y = Tensor::from_vec(&out_shape, out)?;
    Ok((
        y,
        Conv2dCache {
            input: x.clone(),
            weight: weight.clone(),
            geom,
            out_shape,
        },
    ))
}

/// Gradients with respect to the input and the weight (summed over the batch).
pub fn conv2d_backward<T: Scalar>(
    cache: &Conv2dCache<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    expect_shape("conv2d_backward", grad_out, &cache.out_shape)?;
    let [n, co, oh, ow] = cache.out_shape;
    let (_, ci, h, w) = cache.input.dims4("conv2d_backward")?;
    let g = cache.geom;
    let k = ci * g.kernel_h * g.kernel_w;
    let p = oh * ow;
    let go = grad_out.data();
    let wt = cache.weight.data();
    let mut grad_w = vec![T::zero(); co * k];

    if is_pointwise(g) {
        let xs = cache.input.data();
        let mut grad_x = vec![T::zero(); n * k * p];
        for b in 0..n {
            let gob = &go[b * co * p..(b + 1) * co * p];
            // dW += G_b · X_bᵀ
            T::gemm(
                co,
                p,
                k,
                T::one(),
                gob,
                (p as isize, 1),
                &xs[b * k * p..(b + 1) * k * p],
                (1, p as isize),
                T::one(),
                &mut grad_w,
                (k as isize, 1),
            );
            // dX_b = Wᵀ · G_b
            T::gemm(
                k,
                co,
                p,
                T::one(),
                wt,
                (1, k as isize),
                gob,
                (p as isize, 1),
                T::zero(),
                &mut grad_x[b * k * p..(b + 1) * k * p],
                (p as isize, 1),
            );
        }
        return Ok((
            Tensor::from_vec(&[n, ci, h, w], grad_x)?,
            Tensor::from_vec(cache.weight.shape(), grad_w)?,
        ));
    }

    let xs = cache.input.data();
    let sample = ci * h * w;
    let mut cols = vec![T::zero(); k * p];
    let mut grad_cols = vec![T::zero(); k * p];
    let mut grad_x = vec![T::zero(); n * sample];
    for b in 0..n {
        let gob = &go[b * co * p..(b + 1) * co * p];
        if g.pad > 0 {
            cols.iter_mut().for_each(|v| *v = T::zero());
        }
        unfold_sample(
            &xs[b * sample..(b + 1) * sample],
            (ci, h, w),
            g,
            (oh, ow),
            &mut cols,
            p,
            0,
        );
        // dW += G_b · Colsᵀ
        T::gemm(
            co,
            p,
            k,
            T::one(),
            gob,
            (p as isize, 1),
            &cols,
            (1, p as isize),
            T::one(),
            &mut grad_w,
            (k as isize, 1),
        );
        // dCols = Wᵀ · G_b, folded back onto the input
        T::gemm(
            k,
            co,
            p,
            T::one(),
            wt,
            (1, k as isize),
            gob,
            (p as isize, 1),
            T::zero(),
            &mut grad_cols,
            (p as isize, 1),
        );
        fold_sample(
            &grad_cols,
            p,
            0,
            (ci, h, w),
            g,
            (oh, ow),
            &mut grad_x[b * sample..(b + 1) * sample],
        );
    }
    Ok((
        Tensor::from_vec(&[n, ci, h, w], grad_x)?,
        Tensor::from_vec(cache.weight.shape(), grad_w)?,
    ))
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

    fn naive(x: &Tensor<f64>, wt: &Tensor<f64>, pad: usize) -> Tensor<f64> {
        let (n, c, h, w) = x.dims4("").unwrap();
        let (co, _, kh, kw) = wt.dims4("").unwrap();
        let oh = h + 2 * pad + 1 - kh;
        let ow = w + 2 * pad + 1 - kw;
        let mut out = Tensor::zeros(&[n, co, oh, ow]);
        for b in 0..n {
            for o in 0..co {
                for y in 0..oh {
                    for xo in 0..ow {
                        let mut acc = 0.0;
                        for ch in 0..c {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let sy = (y + i) as isize - pad as isize;
                                    let sx = (xo + j) as isize - pad as isize;
                                    if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w
                                    {
                                        acc += x.data()
                                            [((b * c + ch) * h + sy as usize) * w + sx as usize]
                                            * wt.data()[((o * c + ch) * kh + i) * kw + j];
                                    }
                                }
                            }
                        }
                        out.data_mut()[((b * co + o) * oh + y) * ow + xo] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn ones_kernel_sums_field() {
        let x = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let (y, _) = conv2d_forward(&x, &w, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn pointwise_scaling() {
        let mut rng = Rng::new(2);
        let x = random(&[2, 1, 4, 4], &mut rng);
        let w = Tensor::full(&[1, 1, 1, 1], 2.0);
        let (y, _) = conv2d_forward(&x, &w, 1, 0).unwrap();
        assert_eq!(y, x.map(|v| 2.0 * v));
    }

    #[test]
    fn matches_naive_convolution() {
        let mut rng = Rng::new(31);
        let x = random(&[2, 3, 8, 8], &mut rng);
        for (k, pad) in [(3, 1), (3, 0), (1, 0)] {
            let w = random(&[4, 3, k, k], &mut rng);
            let (y, _) = conv2d_forward(&x, &w, 1, pad).unwrap();
            let expect = naive(&x, &w, pad);
            assert_eq!(y.shape(), expect.shape());
            assert_close(y.data(), expect.data(), 1e-5, 1e-5);
        }
    }

    #[test]
    fn channel_mismatch_is_dimension_error() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::<f32>::zeros(&[1, 3, 3, 3]);
        assert!(matches!(
            conv2d_forward(&x, &w, 1, 1),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn zero_cotangent_zero_gradients() {
        let mut rng = Rng::new(5);
        let x = random(&[2, 3, 5, 5], &mut rng);
        let w = random(&[2, 3, 3, 3], &mut rng);
        let (y, cache) = conv2d_forward(&x, &w, 1, 1).unwrap();
        let (gx, gw) = conv2d_backward(&cache, &Tensor::zeros(y.shape())).unwrap();
        assert!(gx.data().iter().chain(gw.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn pointwise_weight_gradient_is_correlation_sum() {
        let mut rng = Rng::new(6);
        let x = random(&[3, 1, 4, 4], &mut rng);
        let w = Tensor::full(&[1, 1, 1, 1], 0.7);
        let (y, cache) = conv2d_forward(&x, &w, 1, 0).unwrap();
        let g = random(y.shape(), &mut rng);
        let (_, gw) = conv2d_backward(&cache, &g).unwrap();
        let expect: f64 = x.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        assert!((gw.data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(7);
        for (k, pad) in [(3, 1), (1, 0)] {
            let x = random(&[2, 3, 5, 5], &mut rng);
            let w = random(&[4, 3, k, k], &mut rng);
            let (y, cache) = conv2d_forward(&x, &w, 1, pad).unwrap();
            let r = random(y.shape(), &mut rng);
            let (gx, gw) = conv2d_backward(&cache, &r).unwrap();
            let nx = numeric_gradient(&x, 1e-5, |xx| {
                conv2d_forward(xx, &w, 1, pad).unwrap().0.dot(&r).unwrap()
            });
            let nw = numeric_gradient(&w, 1e-5, |ww| {
                conv2d_forward(&x, ww, 1, pad).unwrap().0.dot(&r).unwrap()
            });
            assert_close(gx.data(), nx.data(), 1e-6, 1e-3);
            assert_close(gw.data(), nw.data(), 1e-6, 1e-3);
        }
    }

    #[test]
    fn wrong_grad_shape_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 1, 4, 4]);
        let w = Tensor::<f32>::zeros(&[1, 1, 3, 3]);
        let (_, cache) = conv2d_forward(&x, &w, 1, 1).unwrap();
        assert!(conv2d_backward(&cache, &Tensor::zeros(&[1, 1, 2, 2])).is_err());
    }
}
