//! Training configuration: library defaults, then an optional `key=value`
//! file, then command-line flags. Keys and flags share names.

use densefold::kv::{self, list, value};
use densefold::train::TrainConfig;
use densefold::{Error, Result};

/// Every accepted key, in the order `--print-config` lists them.
pub const KEYS: &[&str] = &[
    "epochs",
    "eta0",
    "lr_drop_epoch",
    "lr_drop_factor",
    "momentum_mu",
    "weight_decay_lambda",
    "batch_train",
    "batch_test",
    "loss_kind",
    "depth_n",
    "growth_k",
    "compression_theta",
    "dropout_p",
    "bn_eps",
    "bn_momentum",
    "init",
    "augment",
    "contrast_factors",
    "rotation_deg",
    "zoom_max",
    "seed",
    "fold_seed",
    "folds",
    "checkpoint_every",
    "record_wall_time",
];

/// Set one key. Changing `growth_k` also resets the stem and bottleneck
/// widths to `2k` and `4k`.
pub fn set(cfg: &mut TrainConfig, key: &str, raw: &str) -> Result<()> {
    let raw = raw.trim();
    match key {
        "epochs" => cfg.hyper.epochs = value(key, raw)?,
        "eta0" => cfg.hyper.eta0 = value(key, raw)?,
        "lr_drop_epoch" => cfg.hyper.lr_drop_epoch = value(key, raw)?,
        "lr_drop_factor" => cfg.hyper.lr_drop_factor = value(key, raw)?,
        "momentum_mu" => cfg.hyper.momentum_mu = value(key, raw)?,
        "weight_decay_lambda" => cfg.hyper.weight_decay_lambda = value(key, raw)?,
        "batch_train" => cfg.hyper.batch_train = value(key, raw)?,
        "batch_test" => cfg.hyper.batch_test = value(key, raw)?,
        "loss_kind" => cfg.hyper.loss_kind = raw.parse()?,
        "depth_n" => cfg.spec.depth_n = value(key, raw)?,
        "growth_k" => {
            let k: usize = value(key, raw)?;
            cfg.spec.growth_k = k;
            cfg.spec.init_channels = 2 * k;
            cfg.spec.bottleneck_width = 4 * k;
        }
        "compression_theta" => cfg.spec.compression_theta = value(key, raw)?,
        "dropout_p" => cfg.spec.dropout_p = value(key, raw)?,
        "bn_eps" => cfg.spec.bn_eps = value(key, raw)?,
        "bn_momentum" => cfg.spec.bn_momentum = value(key, raw)?,
        "init" => cfg.spec.init = raw.parse()?,
        "augment" => cfg.augment.enabled = value(key, raw)?,
        "contrast_factors" => cfg.augment.contrast_factors = list(key, raw)?,
        "rotation_deg" => cfg.augment.rotation_deg = value(key, raw)?,
        "zoom_max" => cfg.augment.zoom_max = value(key, raw)?,
        "seed" => cfg.root_seed = value(key, raw)?,
        "fold_seed" => cfg.fold_seed = value(key, raw)?,
        "folds" => cfg.folds = value(key, raw)?,
        "checkpoint_every" => cfg.checkpoint_every = value(key, raw)?,
        "record_wall_time" => cfg.record_wall_time = value(key, raw)?,
        other => return Err(Error::Config(format!("unknown config key `{other}`"))),
    }
    Ok(())
}

/// Apply the lines of a config file in order.
pub fn apply_file(cfg: &mut TrainConfig, text: &str) -> Result<()> {
    for (k, v) in kv::parse(text)? {
        set(cfg, &k, &v)?;
    }
    Ok(())
}

pub fn render(cfg: &TrainConfig) -> String {
    let (h, s, a) = (&cfg.hyper, &cfg.spec, &cfg.augment);
    let pairs: Vec<(&str, String)> = vec![
        ("epochs", h.epochs.to_string()),
        ("eta0", h.eta0.to_string()),
        ("lr_drop_epoch", h.lr_drop_epoch.to_string()),
        ("lr_drop_factor", h.lr_drop_factor.to_string()),
        ("momentum_mu", h.momentum_mu.to_string()),
        ("weight_decay_lambda", h.weight_decay_lambda.to_string()),
        ("batch_train", h.batch_train.to_string()),
        ("batch_test", h.batch_test.to_string()),
        ("loss_kind", h.loss_kind.to_string()),
        ("depth_n", s.depth_n.to_string()),
        ("growth_k", s.growth_k.to_string()),
        ("compression_theta", s.compression_theta.to_string()),
        ("dropout_p", s.dropout_p.to_string()),
        ("bn_eps", s.bn_eps.to_string()),
        ("bn_momentum", s.bn_momentum.to_string()),
        ("init", s.init.to_string()),
        ("augment", a.enabled.to_string()),
        ("contrast_factors", kv::join(&a.contrast_factors)),
        ("rotation_deg", a.rotation_deg.to_string()),
        ("zoom_max", a.zoom_max.to_string()),
        ("seed", cfg.root_seed.to_string()),
        ("fold_seed", cfg.fold_seed.to_string()),
        ("folds", cfg.folds.to_string()),
        ("checkpoint_every", cfg.checkpoint_every.to_string()),
        ("record_wall_time", cfg.record_wall_time.to_string()),
    ];
    debug_assert!(pairs.iter().map(|p| p.0).eq(KEYS.iter().copied()));
    kv::render(&pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_lists_every_key_and_round_trips() {
        let cfg = TrainConfig::default();
        let text = render(&cfg);
        let keys: Vec<String> = kv::parse(&text).unwrap().into_iter().map(|p| p.0).collect();
        assert_eq!(keys, KEYS);
        let mut back = TrainConfig::default();
        back.hyper.epochs = 3;
        back.spec.growth_k = 5;
        apply_file(&mut back, &text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_is_named() {
        let err =
            apply_file(&mut TrainConfig::default(), "# tuned\nlearning_rate=0.1\n").unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
    }

    #[test]
    fn growth_rate_resizes_stem_and_bottleneck() {
        let mut cfg = TrainConfig::default();
        set(&mut cfg, "growth_k", "4").unwrap();
        assert_eq!((cfg.spec.init_channels, cfg.spec.bottleneck_width), (8, 16));
    }

    #[test]
    fn bad_value_names_key() {
        let err = set(&mut TrainConfig::default(), "momentum_mu", "fast").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("momentum_mu"));
    }
}
