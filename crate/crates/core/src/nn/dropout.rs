use super::{expect_shape, Mode};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct DropoutCache<T: Scalar> {
    shape: Vec<usize>,
    /// `None` when the layer acted as the identity.
    scale: Option<Vec<T>>,
}

/// Inverted dropout: in train mode each unit is zeroed with probability `p`
/// and survivors are scaled by `1 / (1 − p)`; infer mode is the identity.
pub fn dropout<T: Scalar>(
    x: &Tensor<T>,
    p: f64,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(Tensor<T>, DropoutCache<T>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!(
            "dropout probability must be in [0, 1), got {p}"
        )));
    }
    if mode == Mode::Infer || p == 0.0 {
        return Ok((
            x.clone(),
            DropoutCache {
                shape: x.shape().to_vec(),
                scale: None,
            },
        ));
    }
    let keep = T::from_f64(1.0 / (1.0 - p));
    let scale: Vec<T> = (0..x.len())
        .map(|_| if rng.bernoulli(p) { T::zero() } else { keep })
        .collect();
    let out = x.data().iter().zip(&scale).map(|(&v, &s)| v * s).collect();
    Ok((
        Tensor::from_vec(x.shape(), out)?,
        DropoutCache {
            shape: x.shape().to_vec(),
            scale: Some(scale),
        },
    ))
}

pub fn dropout_backward<T: Scalar>(
    cache: &DropoutCache<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    expect_shape("dropout_backward", grad_out, &cache.shape)?;
    match &cache.scale {
        None => Ok(grad_out.clone()),
        Some(scale) => Tensor::from_vec(
            &cache.shape,
            grad_out
                .data()
                .iter()
                .zip(scale)
                .map(|(&g, &s)| g * s)
                .collect(),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_probability_is_identity() {
        let x = Tensor::<f32>::from_vec(&[4], vec![1.0, -2.0, 3.0, 4.0]).unwrap();
        let mut rng = Rng::new(0);
        for mode in [Mode::Train, Mode::Infer] {
            assert_eq!(dropout(&x, 0.0, mode, &mut rng).unwrap().0, x);
        }
    }

    #[test]
    fn infer_is_identity_for_any_p() {
        let x = Tensor::<f32>::full(&[100], 3.0);
        let mut rng = Rng::new(0);
        for p in [0.09, 0.5, 0.99] {
            assert_eq!(dropout(&x, p, Mode::Infer, &mut rng).unwrap().0, x);
        }
    }

    #[test]
    fn out_of_range_probability() {
        let x = Tensor::<f32>::zeros(&[2]);
        let mut rng = Rng::new(0);
        assert!(matches!(
            dropout(&x, 1.0, Mode::Train, &mut rng),
            Err(Error::Config(_))
        ));
        assert!(dropout(&x, -0.1, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn expectation_preserved_at_paper_rate() {
        let x = Tensor::<f64>::full(&[1_000_000], 1.0);
        let mut rng = Rng::new(42);
        let (y, _) = dropout(&x, 0.09, Mode::Train, &mut rng).unwrap();
        let mean = y.data().iter().sum::<f64>() / 1e6;
        let zeros = y.data().iter().filter(|&&v| v == 0.0).count() as f64 / 1e6;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        assert!((zeros - 0.09).abs() < 0.005, "zero fraction {zeros}");
    }

    #[test]
    fn backward_reuses_mask() {
        let x = Tensor::<f64>::full(&[1000], 2.0);
        let mut rng = Rng::new(7);
        let (y, cache) = dropout(&x, 0.3, Mode::Train, &mut rng).unwrap();
        let g = dropout_backward(&cache, &Tensor::full(&[1000], 2.0)).unwrap();
        assert_eq!(g, y);
    }
}
