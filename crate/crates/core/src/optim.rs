//! Losses, the learning-rate schedule and momentum SGD with weight decay.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::model::{param_specs, NetworkSpec};
use crate::nn::softmax;
use crate::params::{Gradients, LayerParams, ParamMap};
use crate::tensor::{Rng, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    /// Squared error between softmax probabilities and one-hot targets.
    Mse,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross_entropy" => Ok(LossKind::CrossEntropy),
            "mse" => Ok(LossKind::Mse),
            other => Err(Error::Config(format!(
                "loss_kind must be cross_entropy or mse, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::Mse => "mse",
        })
    }
}

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainHyper {
    pub eta0: f64,
    /// Last epoch trained at `eta0`; later epochs use `eta0 · lr_drop_factor`.
    pub lr_drop_epoch: usize,
    pub lr_drop_factor: f64,
    pub momentum_mu: f64,
    pub weight_decay_lambda: f64,
    pub batch_train: usize,
    pub batch_test: usize,
    pub epochs: usize,
    pub loss_kind: LossKind,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            eta0: 0.009,
            lr_drop_epoch: 80,
            lr_drop_factor: 0.15,
            momentum_mu: 0.9,
            weight_decay_lambda: 1e-5,
            batch_train: 32,
            batch_test: 64,
            epochs: 150,
            loss_kind: LossKind::CrossEntropy,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta0 >= 0.0 && self.eta0.is_finite()) {
            return Err(Error::Config(format!(
                "eta0 must be >= 0, got {}",
                self.eta0
            )));
        }
        if !(0.0..1.0).contains(&self.momentum_mu) {
            return Err(Error::Config(format!(
                "momentum_mu must be in [0, 1), got {}",
                self.momentum_mu
            )));
        }
        if !(self.weight_decay_lambda >= 0.0) {
            return Err(Error::Config(format!(
                "weight_decay_lambda must be >= 0, got {}",
                self.weight_decay_lambda
            )));
        }
        if !(self.lr_drop_factor > 0.0) {
            return Err(Error::Config(format!(
                "lr_drop_factor must be > 0, got {}",
                self.lr_drop_factor
            )));
        }
        if self.batch_train == 0 || self.batch_test == 0 {
            return Err(Error::Config("batch sizes must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        Ok(())
    }

    /// Same schedule compressed to `epochs`, keeping the drop at the same
    /// fraction of the run (rounded, at least epoch 1).
    pub fn scaled_to(&self, epochs: usize) -> Self {
        let frac = self.lr_drop_epoch as f64 / self.epochs as f64;
        TrainHyper {
            epochs,
            lr_drop_epoch: ((frac * epochs as f64).round() as usize).max(1),
            ..self.clone()
        }
    }
}

/// Learning rate for a 1-based epoch: a single drop strictly after `lr_drop_epoch`.
pub fn lr_at(epoch: usize, h: &TrainHyper) -> f64 {
    if epoch > h.lr_drop_epoch {
        h.eta0 * h.lr_drop_factor
    } else {
        h.eta0
    }
}

/// Mean over the batch of `Σ_classes (y − ŷ)²`, and its gradient `2(ŷ − y)/N`.
pub fn mse_loss<T: Scalar>(probs: &Tensor<T>, targets: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    let (n, k) = probs.dims2("mse_loss")?;
    if targets.shape() != probs.shape() {
        return Err(Error::dim(
            "mse_loss",
            format!("targets {:?} vs probs {:?}", targets.shape(), probs.shape()),
        ));
    }
    for (i, row) in targets.data().chunks(k).enumerate() {
        let ones = row.iter().filter(|&&v| v == T::one()).count();
        let zeros = row.iter().filter(|&&v| v == T::zero()).count();
        if ones != 1 || zeros != k - 1 {
            return Err(Error::Input(format!("target row {i} is not one-hot")));
        }
    }
    let scale = 2.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(probs.len());
    for (&p, &y) in probs.data().iter().zip(targets.data()) {
        let d = p.to_f64().unwrap() - y.to_f64().unwrap();
        loss += d * d;
        grad.push(T::from_f64(scale * d));
    }
    Ok((loss / n as f64, Tensor::from_vec(&[n, k], grad)?))
}

fn check_labels(labels: &[usize], n: usize, k: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::Input(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(Error::Input(format!(
            "label {l} at position {i} is outside 0..{k}"
        )));
    }
    Ok(())
}

/// Mean negative log-likelihood of the true class and its gradient
/// `(softmax(z) − onehot)/N` with respect to the logits.
pub fn cross_entropy_loss<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(f64, Tensor<T>)> {
    let (n, k) = logits.dims2("cross_entropy_loss")?;
    check_labels(labels, n, k)?;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n * k);
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        let z: Vec<f64> = row.iter().map(|v| v.to_f64().unwrap()).collect();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - z[label];
        for (j, &v) in z.iter().enumerate() {
            let p = (v - lse).exp();
            let t = if j == label { 1.0 } else { 0.0 };
            grad.push(T::from_f64((p - t) / n as f64));
        }
    }
    Ok((loss / n as f64, Tensor::from_vec(&[n, k], grad)?))
}

pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    check_labels(labels, labels.len(), classes)?;
    let mut data = vec![T::zero(); labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        data[i * classes + l] = T::one();
    }
    Tensor::from_vec(&[labels.len(), classes], data)
}

/// Loss and gradient with respect to the logits for either loss kind.
pub fn loss_and_grad<T: Scalar>(
    kind: LossKind,
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(f64, Tensor<T>)> {
    match kind {
        LossKind::CrossEntropy => cross_entropy_loss(logits, labels),
        LossKind::Mse => {
            let (n, k) = logits.dims2("loss")?;
            check_labels(labels, n, k)?;
            let probs = softmax(logits)?;
            let (loss, gp) = mse_loss(&probs, &one_hot(labels, k)?)?;
            // Back through softmax: dz_i = p_i (dp_i − Σ_j p_j dp_j).
            let mut gz = Vec::with_capacity(n * k);
            for (p, g) in probs.data().chunks(k).zip(gp.data().chunks(k)) {
                let dot: T = p.iter().zip(g).map(|(&a, &b)| a * b).sum();
                gz.extend(p.iter().zip(g).map(|(&a, &b)| a * (b - dot)));
            }
            Ok((loss, Tensor::from_vec(&[n, k], gz)?))
        }
    }
}

/// Momentum buffers, one per trainable parameter, plus which of them decay.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState<T: Scalar = f32> {
    pub velocity: ParamMap<T>,
    decayed: BTreeSet<String>,
}

impl<T: Scalar> SgdState<T> {
    /// Zero velocity for every trainable parameter of `spec`.
    pub fn for_spec(spec: &NetworkSpec) -> Result<Self> {
        let entries = param_specs(spec)?
            .into_iter()
            .filter(|p| p.kind.trainable())
            .map(|p| (p.name, p.shape, p.kind.decays()));
        Ok(Self::from_entries(entries))
    }

    /// Zero velocity for `(name, shape, decays)` entries.
    pub fn from_entries<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = (S, Vec<usize>, bool)>,
        S: Into<String>,
    {
        let mut velocity = ParamMap::new();
        let mut decayed = BTreeSet::new();
        for (name, shape, decays) in entries {
            let name = name.into();
            if decays {
                decayed.insert(name.clone());
            }
            velocity.insert(name, Tensor::zeros(&shape));
        }
        SgdState { velocity, decayed }
    }

    pub fn decays(&self, name: &str) -> bool {
        self.decayed.contains(name)
    }
}

/// One update: `v ← μ·v + (∇J + λ·W)`, `W ← W − η·v`, with `λ` applied only
/// to decaying parameters. With `μ = 0` this is `W ← W − η·∇J − η·λ·W`.
pub fn sgd_step<T: Scalar>(
    params: &mut LayerParams<T>,
    grads: &Gradients<T>,
    state: &mut SgdState<T>,
    eta: f64,
    h: &TrainHyper,
) -> Result<()> {
    let gk: Vec<&str> = grads.names().collect();
    let vk: Vec<&str> = state.velocity.names().collect();
    if gk != vk {
        return Err(Error::Contract(format!(
            "gradient keys ({} entries) differ from optimizer keys ({} entries)",
            gk.len(),
            vk.len()
        )));
    }
    for name in &gk {
        let p = params.get(name)?;
        if p.shape() != grads.get(name)?.shape() {
            return Err(Error::dim(
                "sgd_step",
                format!("gradient shape mismatch for {name}"),
            ));
        }
    }
    let mu = T::from_f64(h.momentum_mu);
    let eta = T::from_f64(eta);
    let names: Vec<String> = gk.iter().map(|s| s.to_string()).collect();
    for name in names {
        let lambda = if state.decays(&name) {
            T::from_f64(h.weight_decay_lambda)
        } else {
            T::zero()
        };
        let g = grads.get(&name)?;
        let v = state.velocity.get_mut(&name)?;
        let w = params.get_mut(&name)?;
        for ((wi, vi), &gi) in w.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vi = mu * *vi + (gi + lambda * *wi);
            *wi = *wi - eta * *vi;
        }
    }
    Ok(())
}

/// Uniform Fisher–Yates permutation of `indices`.
pub fn shuffle_epoch(indices: &[usize], rng: &mut Rng) -> Vec<usize> {
    let mut out = indices.to_vec();
    rng.shuffle(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{assert_close, numeric_gradient};
    use crate::tensor::Stream;

    fn single(w: f64, decays: bool) -> (LayerParams<f64>, SgdState<f64>) {
        let mut p = LayerParams::new();
        p.insert("w", Tensor::full(&[1], w));
        (p, SgdState::from_entries([("w", vec![1], decays)]))
    }

    fn grad(g: f64) -> Gradients<f64> {
        let mut m = Gradients::new();
        m.insert("w", Tensor::full(&[1], g));
        m
    }

    fn hyper(mu: f64, lambda: f64) -> TrainHyper {
        TrainHyper {
            momentum_mu: mu,
            weight_decay_lambda: lambda,
            ..TrainHyper::default()
        }
    }

    #[test]
    fn schedule_boundaries() {
        let h = TrainHyper::default();
        assert_eq!(lr_at(1, &h), 0.009);
        assert_eq!(lr_at(80, &h), 0.009);
        assert!((lr_at(81, &h) - 0.00135).abs() < 1e-15);
        assert!((lr_at(150, &h) - 0.00135).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        let mut drops = 0;
        for e in 1..=150 {
            let lr = lr_at(e, &h);
            assert!(lr <= prev);
            if lr < prev && prev.is_finite() {
                drops += 1;
            }
            prev = lr;
        }
        assert_eq!(drops, 1);
    }

    #[test]
    fn scaled_schedule() {
        let h = TrainHyper::default().scaled_to(15);
        assert_eq!(h.epochs, 15);
        assert_eq!(h.lr_drop_epoch, 8);
    }

    #[test]
    fn weight_decay_only_step() {
        let (mut p, mut s) = single(1.0, true);
        sgd_step(&mut p, &grad(0.0), &mut s, 0.1, &hyper(0.0, 0.01)).unwrap();
        assert!((p.get("w").unwrap().data()[0] - 0.999).abs() < 1e-12);
    }

    #[test]
    fn plain_gradient_step() {
        let (mut p, mut s) = single(2.0, true);
        sgd_step(&mut p, &grad(0.5), &mut s, 0.1, &hyper(0.0, 0.0)).unwrap();
        assert!((p.get("w").unwrap().data()[0] - 1.95).abs() < 1e-12);
    }

    #[test]
    fn momentum_two_steps() {
        let g = 0.3;
        let eta = 0.1;
        let (mut p, mut s) = single(1.0, true);
        for _ in 0..2 {
            sgd_step(&mut p, &grad(g), &mut s, eta, &hyper(0.9, 0.0)).unwrap();
        }
        assert!((s.velocity.get("w").unwrap().data()[0] - 1.9 * g).abs() < 1e-12);
        let dw = p.get("w").unwrap().data()[0] - 1.0;
        assert!((dw + eta * 2.9 * g).abs() < 1e-12);
    }

    #[test]
    fn non_decaying_parameter_ignores_lambda() {
        let (mut p, mut s) = single(1.0, false);
        sgd_step(&mut p, &grad(0.0), &mut s, 0.1, &hyper(0.0, 0.5)).unwrap();
        assert_eq!(p.get("w").unwrap().data()[0], 1.0);
    }

    #[test]
    fn quadratic_decreases() {
        let (mut p, mut s) = single(3.0, true);
        let w0 = 3.0f64;
        sgd_step(&mut p, &grad(2.0 * w0), &mut s, 0.01, &hyper(0.9, 1e-5)).unwrap();
        let w1 = p.get("w").unwrap().data()[0];
        assert!(w1 * w1 < w0 * w0);
    }

    #[test]
    fn key_mismatch_is_contract_error() {
        let (mut p, mut s) = single(1.0, true);
        let mut g = grad(1.0);
        g.insert("other", Tensor::full(&[1], 1.0));
        assert!(matches!(
            sgd_step(&mut p, &g, &mut s, 0.1, &hyper(0.0, 0.0)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn mse_cases() {
        let y = one_hot::<f64>(&[3, 7], 10).unwrap();
        assert_eq!(mse_loss(&y, &y).unwrap().0, 0.0);
        let uniform = Tensor::full(&[2, 10], 0.1);
        let (l, _) = mse_loss(&uniform, &y).unwrap();
        assert!((l - 0.90).abs() < 1e-12);
        let mut bad = y.clone();
        bad.data_mut()[0] = 1.0;
        assert!(matches!(mse_loss(&uniform, &bad), Err(Error::Input(_))));
    }

    #[test]
    fn mse_gradient_matches_finite_differences() {
        let mut rng = Rng::new(5);
        let p = Tensor::from_vec(&[3, 10], (0..30).map(|_| rng.next_f64()).collect()).unwrap();
        let y = one_hot::<f64>(&[0, 4, 9], 10).unwrap();
        let (_, g) = mse_loss(&p, &y).unwrap();
        let n = numeric_gradient(&p, 1e-5, |t| mse_loss(t, &y).unwrap().0);
        assert_close(g.data(), n.data(), 1e-8, 1.0);
    }

    #[test]
    fn cross_entropy_cases() {
        let (l, g) = cross_entropy_loss(&Tensor::<f64>::zeros(&[1, 10]), &[4]).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-12);
        assert!((g.data().iter().sum::<f64>()).abs() < 1e-15);
        let mut z = vec![0.0; 10];
        z[2] = 30.0;
        let (l, _) =
            cross_entropy_loss(&Tensor::<f64>::from_vec(&[1, 10], z).unwrap(), &[2]).unwrap();
        assert!(l < 1e-9 && l >= 0.0);
        assert!(matches!(
            cross_entropy_loss(&Tensor::<f64>::zeros(&[1, 10]), &[10]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = Rng::new(6);
        let z =
            Tensor::from_vec(&[4, 10], (0..40).map(|_| rng.uniform(-2.0, 2.0)).collect()).unwrap();
        let labels = [1, 0, 9, 5];
        for kind in [LossKind::CrossEntropy, LossKind::Mse] {
            let (_, g) = loss_and_grad(kind, &z, &labels).unwrap();
            let n = numeric_gradient(&z, 1e-5, |t| loss_and_grad(kind, t, &labels).unwrap().0);
            assert_close(g.data(), n.data(), 1e-8, 1.0);
            for row in g.data().chunks(10) {
                assert!(row.iter().sum::<f64>().abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shuffle_properties() {
        assert_eq!(shuffle_epoch(&[5], &mut Rng::new(1)), vec![5]);
        let idx: Vec<usize> = (0..50).collect();
        let a = shuffle_epoch(&idx, &mut Rng::stream(1, Stream::Shuffle, &[3]));
        let b = shuffle_epoch(&idx, &mut Rng::stream(1, Stream::Shuffle, &[3]));
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, idx);
    }

    #[test]
    fn shuffle_is_uniform_over_permutations() {
        let mut rng = Rng::new(2024);
        let mut counts = std::collections::HashMap::new();
        for _ in 0..10_000 {
            *counts
                .entry(shuffle_epoch(&[0, 1, 2], &mut rng))
                .or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 6);
        for (perm, c) in counts {
            let f = c as f64 / 10_000.0;
            assert!((f - 1.0 / 6.0).abs() < 0.02, "{perm:?}: {f}");
        }
    }

    #[test]
    fn hyper_validation() {
        assert!(TrainHyper::default().validate().is_ok());
        let bad = TrainHyper {
            momentum_mu: 1.0,
            ..TrainHyper::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainHyper {
            eta0: -0.1,
            ..TrainHyper::default()
        };
        assert!(bad.validate().is_err());
    }
}
