//! Epoch loop with per-epoch fold rotation, on-the-fly augmentation,
//! validation, metric logging and checkpointing.
//!
//! Randomness is keyed by the root seed: initialization, fold assignment,
//! batch order (per epoch), dropout (per epoch and batch) and augmentation
//! (per epoch and sample) each use their own derived stream. Two runs with the
//! same configuration and data therefore produce the same bytes.

pub mod checkpoint;

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::data::{
    fold_complement, fold_members, kfold_assign, make_batches, sequential_batches, AugmentConfig,
    Dataset, EpochAugment,
};
use crate::error::{Error, Result};
use crate::model::{self, backward, build, forward, NetworkSpec};
use crate::nn::{softmax, Mode};
use crate::optim::{loss_and_grad, lr_at, sgd_step, SgdState, TrainHyper};
use crate::params::LayerParams;
use crate::tensor::{Rng, Stream, Tensor};

pub use checkpoint::Checkpoint;

pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,val_acc,lr,wall_seconds";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hyper: TrainHyper,
    pub spec: NetworkSpec,
    pub augment: AugmentConfig,
    pub root_seed: u64,
    /// Seed of the fixed fold partition.
    pub fold_seed: u64,
    /// Number of cross-validation folds; below 2 disables validation.
    pub folds: usize,
    /// Save `last.bdnt` every this many epochs (and after the final one).
    pub checkpoint_every: usize,
    /// Where metrics and checkpoints go; `None` keeps everything in memory.
    pub output_dir: Option<PathBuf>,
    /// Log measured epoch durations. Off (the default) writes 0 so that equal
    /// seeds give byte-identical metrics files.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hyper: TrainHyper::default(),
            spec: NetworkSpec::default(),
            augment: AugmentConfig::default(),
            root_seed: 1,
            fold_seed: 1,
            folds: 10,
            checkpoint_every: 10,
            output_dir: None,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        self.spec.validate()?;
        self.augment.validate()?;
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean per-sample loss over the epoch's training batches.
    pub train_loss: f64,
    pub train_acc: f64,
    /// Accuracy on the epoch's validation fold, if validation is enabled.
    pub val_acc: Option<f64>,
    pub lr: f64,
    pub wall_seconds: f64,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch,
            self.train_loss,
            self.train_acc,
            self.val_acc.map(|v| v.to_string()).unwrap_or_default(),
            self.lr,
            self.wall_seconds
        )
    }
}

pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for m in history {
        s.push_str(&m.csv_row());
        s.push('\n');
    }
    s
}

/// Fold partition and the per-epoch split it induces.
#[derive(Debug, Clone)]
pub struct FoldPlan {
    assign: Option<Vec<usize>>,
    folds: usize,
    n: usize,
}

impl FoldPlan {
    pub fn new(n: usize, folds: usize, fold_seed: u64) -> Result<Self> {
        let assign = if folds >= 2 {
            Some(kfold_assign(n, folds, fold_seed)?)
        } else {
            None
        };
        Ok(FoldPlan { assign, folds, n })
    }

    /// `(train, validation)` indices for a 1-based epoch: epoch `e` holds out
    /// fold `(e − 1) mod k`.
    pub fn split(&self, epoch: usize) -> (Vec<usize>, Vec<usize>) {
        match &self.assign {
            Some(a) => {
                let f = (epoch - 1) % self.folds;
                (fold_complement(a, f), fold_members(a, f))
            }
            None => ((0..self.n).collect(), Vec::new()),
        }
    }
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Class probabilities for `indices` in inference mode, in order.
pub fn predict_probs(
    spec: &NetworkSpec,
    params: &LayerParams<f32>,
    dataset: &Dataset,
    indices: &[usize],
    batch_size: usize,
) -> Result<Vec<Vec<f32>>> {
    let mut out = Vec::with_capacity(indices.len());
    let mut rng = Rng::new(0);
    for batch in sequential_batches(indices, batch_size)? {
        let (x, _) = dataset.batch(&batch, None)?;
        let (logits, _) = forward(spec, params, &x, Mode::Infer, &mut rng)?;
        let probs = softmax(&logits)?;
        probs.ensure_finite("inference")?;
        out.extend(probs.data().chunks(spec.num_classes).map(<[f32]>::to_vec));
    }
    Ok(out)
}

/// Predicted classes for `indices` in inference mode.
pub fn predict(
    spec: &NetworkSpec,
    params: &LayerParams<f32>,
    dataset: &Dataset,
    indices: &[usize],
    batch_size: usize,
) -> Result<Vec<usize>> {
    Ok(predict_probs(spec, params, dataset, indices, batch_size)?
        .iter()
        .map(|p| argmax(p))
        .collect())
}

fn check_dataset(spec: &NetworkSpec, dataset: &Dataset) -> Result<()> {
    let (c, h, w) = dataset.sample_shape();
    if c != spec.input_channels || h != spec.input_size || w != spec.input_size {
        return Err(Error::dim(
            "dataset",
            format!(
                "samples are [{c}, {h}, {w}], network expects [{}, {s}, {s}]",
                spec.input_channels,
                s = spec.input_size
            ),
        ));
    }
    if dataset.is_empty() {
        return Err(Error::Input("no samples".into()));
    }
    Ok(())
}

/// One epoch: shuffled batches over the training folds with augmentation,
/// forward, loss, backward and an SGD step each, then validation.
pub fn train_epoch(
    params: &mut LayerParams<f32>,
    state: &mut SgdState<f32>,
    epoch: usize,
    config: &TrainConfig,
    dataset: &Dataset,
    plan: &FoldPlan,
) -> Result<EpochMetrics> {
    let start = Instant::now();
    let (spec, hyper) = (&config.spec, &config.hyper);
    let (train_idx, val_idx) = plan.split(epoch);
    if train_idx.iter().any(|i| val_idx.binary_search(i).is_ok()) {
        return Err(Error::Contract(format!(
            "epoch {epoch}: validation fold overlaps training indices"
        )));
    }
    let lr = lr_at(epoch, hyper);
    let seed = config.root_seed;
    let aug = config.augment.enabled.then_some(EpochAugment {
        config: &config.augment,
        seed,
        epoch: epoch as u64,
    });
    let mut shuffle = Rng::stream(seed, Stream::Shuffle, &[epoch as u64]);
    let batches = make_batches(&train_idx, hyper.batch_train, &mut shuffle)?;

    let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
    for (b, batch) in batches.iter().enumerate() {
        let (x, labels) = dataset.batch(batch, aug)?;
        let mut drop_rng = Rng::stream(seed, Stream::Dropout, &[epoch as u64, b as u64]);
        let (logits, cache) = forward(spec, params, &x, Mode::Train, &mut drop_rng)?;
        let (loss, grad) = loss_and_grad(hyper.loss_kind, &logits, &labels)?;
        if !loss.is_finite() || grad.ensure_finite("loss gradient").is_err() {
            return Err(Error::Diverged {
                epoch,
                batch: b,
                lr,
            });
        }
        let grads = backward(spec, params, &cache, &grad)?;
        sgd_step(params, &grads, state, lr, hyper)?;
        cache.apply_running_stats(params)?;
        if params.ensure_finite().is_err() {
            return Err(Error::Diverged {
                epoch,
                batch: b,
                lr,
            });
        }
        loss_sum += loss * labels.len() as f64;
        seen += labels.len();
        correct += logits
            .data()
            .chunks(spec.num_classes)
            .zip(&labels)
            .filter(|(row, &l)| argmax(row) == l)
            .count();
    }

    let val_acc = if val_idx.is_empty() {
        None
    } else {
        let pred = predict(spec, params, dataset, &val_idx, hyper.batch_test)?;
        let hits = pred
            .iter()
            .zip(&val_idx)
            .filter(|(&p, &i)| p == dataset.label(i))
            .count();
        Some(hits as f64 / val_idx.len() as f64)
    };
    Ok(EpochMetrics {
        epoch,
        train_loss: loss_sum / seen as f64,
        train_acc: correct as f64 / seen as f64,
        val_acc,
        lr,
        wall_seconds: if config.record_wall_time {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        },
    })
}

/// Result of [`fit`].
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub params: LayerParams<f32>,
    pub state: SgdState<f32>,
    pub history: Vec<EpochMetrics>,
}

pub const LAST_CHECKPOINT: &str = "last.bdnt";
pub const BEST_CHECKPOINT: &str = "best.bdnt";
pub const METRICS_FILE: &str = "metrics.csv";

fn save(
    dir: &Path,
    file: &str,
    config: &TrainConfig,
    dataset: &Dataset,
    params: &LayerParams<f32>,
    state: &SgdState<f32>,
    history: &[EpochMetrics],
) -> Result<()> {
    Checkpoint {
        spec: config.spec.clone(),
        params: params.clone(),
        state: state.clone(),
        norm: dataset.normalization().clone(),
        history: history
            .iter()
            .map(|m| EpochMetrics {
                wall_seconds: 0.0,
                ..m.clone()
            })
            .collect(),
    }
    .save(&dir.join(file))
}

/// Train from freshly initialized parameters for `config.hyper.epochs` epochs.
///
/// With an output directory, `metrics.csv` is rewritten after every epoch,
/// `last.bdnt` is saved every `checkpoint_every` epochs and after the final
/// epoch, and `best.bdnt` whenever validation accuracy reaches a new maximum.
pub fn fit(config: &TrainConfig, dataset: &Dataset) -> Result<FitOutcome> {
    fit_with(config, dataset, |_, _| Ok(()))
}

/// [`fit`] with a hook called after every epoch (after files are written).
pub fn fit_with(
    config: &TrainConfig,
    dataset: &Dataset,
    mut on_epoch: impl FnMut(&EpochMetrics, &LayerParams<f32>) -> Result<()>,
) -> Result<FitOutcome> {
    config.validate()?;
    check_dataset(&config.spec, dataset)?;
    if let Some(dir) = &config.output_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let plan = FoldPlan::new(dataset.len(), config.folds, config.fold_seed)?;
    let mut params = build(
        &config.spec,
        &mut Rng::stream(config.root_seed, Stream::Init, &[]),
    )?;
    let mut state = SgdState::for_spec(&config.spec)?;
    let mut history: Vec<EpochMetrics> = Vec::new();
    let mut best: Option<f64> = None;

    for epoch in 1..=config.hyper.epochs {
        let m = train_epoch(&mut params, &mut state, epoch, config, dataset, &plan)?;
        let improved = m.val_acc.is_some_and(|v| best.is_none_or(|b| v > b));
        if improved {
            best = m.val_acc;
        }
        history.push(m);
        if let Some(dir) = &config.output_dir {
            let path = dir.join(METRICS_FILE);
            checkpoint::write_atomic(&path, metrics_csv(&history).as_bytes())?;
            if epoch % config.checkpoint_every == 0 || epoch == config.hyper.epochs {
                save(
                    dir,
                    LAST_CHECKPOINT,
                    config,
                    dataset,
                    &params,
                    &state,
                    &history,
                )?;
            }
            if improved {
                save(
                    dir,
                    BEST_CHECKPOINT,
                    config,
                    dataset,
                    &params,
                    &state,
                    &history,
                )?;
            }
        }
        on_epoch(history.last().expect("just pushed"), &params)?;
    }
    Ok(FitOutcome {
        params,
        state,
        history,
    })
}

/// Parameter count of the configured network, for logging.
pub fn describe(spec: &NetworkSpec) -> Result<String> {
    Ok(format!(
        "n={} k={} conv_layers={} params={}",
        spec.depth_n,
        spec.growth_k,
        model::conv_layer_count(spec)?,
        model::param_count(spec)?
    ))
}

/// Stack `[C, H, W]` samples into one `[N, C, H, W]` batch.
pub fn stack(samples: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Input("nothing to stack".into()))?;
    let shape = first.shape().to_vec();
    let mut data = Vec::with_capacity(samples.len() * first.len());
    for s in samples {
        if s.shape() != shape.as_slice() {
            return Err(Error::dim(
                "stack",
                format!("{:?} vs {:?}", s.shape(), shape),
            ));
        }
        data.extend_from_slice(s.data());
    }
    let mut full = vec![samples.len()];
    full.extend(shape);
    Tensor::from_vec(&full, data)
}
