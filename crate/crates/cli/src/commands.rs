use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use densefold::data::{
    class_counts, decode_image, manifest, prepare, preprocess as full_preprocess, Dataset,
    ImageFormat, ManifestEntry, ManifestMeta, Normalization, PackedDataset, RawImage, Split,
    NUM_CLASSES,
};
use densefold::eval::EvalReport;
use densefold::model::forward;
use densefold::nn::{softmax, Mode};
use densefold::train::{self, checkpoint::write_atomic, Checkpoint, TrainConfig};
use densefold::{Error, Rng};

use crate::config;
use crate::{CliError, CliResult, EvalArgs, PredictArgs, PreprocessArgs, TrainArgs};

fn read_bytes(path: &Path) -> densefold::Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Decode any supported image file.
fn load_image(path: &Path) -> densefold::Result<RawImage> {
    let bytes = read_bytes(path)?;
    let fmt = ImageFormat::sniff(&bytes).ok_or_else(|| Error::Parse {
        offset: 0,
        msg: "not a PGM, PPM or packed image".into(),
    })?;
    decode_image(&bytes, fmt)
}

/// Files under `<dir>/<class>/`, class directories `0` to `9`, sorted by name.
fn scan_classes(dir: &Path) -> densefold::Result<Vec<(PathBuf, u8)>> {
    let mut out = Vec::new();
    for class in 0..NUM_CLASSES {
        let sub = dir.join(class.to_string());
        if !sub.is_dir() {
            continue;
        }
        let mut files: Vec<PathBuf> = fs::read_dir(&sub)
            .map_err(|e| Error::io(&sub, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .filter(|p| {
                !p.file_name()
                    .is_some_and(|n| n.to_string_lossy().starts_with('.'))
            })
            .collect();
        files.sort();
        out.extend(files.into_iter().map(|p| (p, class as u8)));
    }
    Ok(out)
}

/// Path as stored in a manifest: relative to `base` when it lies below it.
fn manifest_path(path: &Path, base: &Path) -> String {
    let rel = path.strip_prefix(base).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

fn parent_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn preprocess(a: &PreprocessArgs) -> CliResult<()> {
    let split: Split = a.split.parse()?;
    let inputs: Vec<(PathBuf, u8)> = match (&a.manifest, &a.input) {
        (Some(m), _) if m.exists() => {
            let base = parent_dir(m);
            manifest::read_entries(m)?
                .into_iter()
                .map(|e| (base.join(&e.path), e.label))
                .collect()
        }
        (m, Some(dir)) => {
            let found = scan_classes(dir)?;
            if let Some(m) = m {
                let base = parent_dir(m);
                let entries: Vec<ManifestEntry> = found
                    .iter()
                    .map(|(p, label)| ManifestEntry {
                        path: manifest_path(p, &base),
                        label: *label,
                    })
                    .collect();
                manifest::write_entries(m, &entries)?;
            }
            found
        }
        (_, None) => {
            return Err(CliError::Usage(
                "give --input DIR or an existing --manifest CSV".into(),
            ))
        }
    };
    if inputs.is_empty() {
        return Err(Error::Input("no samples".into()).into());
    }

    let decoded: Vec<densefold::Result<RawImage>> = inputs
        .par_iter()
        .map(|(p, _)| load_image(p).and_then(|img| prepare(&img)))
        .collect();
    let mut packed: Option<PackedDataset> = None;
    let mut skipped = 0;
    for ((path, label), img) in inputs.iter().zip(decoded) {
        match img {
            Ok(img) => {
                let p = match &mut packed {
                    Some(p) => p,
                    None => packed.insert(PackedDataset::new(
                        img.width(),
                        img.height(),
                        img.channels(),
                    )?),
                };
                p.push(*label, &img)?;
            }
            Err(e) => {
                skipped += 1;
                eprintln!("skipped {}: {e}", path.display());
            }
        }
    }
    let packed = packed.ok_or_else(|| Error::Input("no samples".into()))?;

    let (norm, fold_seed) = match (&a.stats, split) {
        (Some(stats), _) => {
            let m = ManifestMeta::read(stats)?;
            (m.norm, m.fold_seed)
        }
        (None, Split::Train) => {
            let imgs: Vec<RawImage> = (0..packed.len())
                .map(|i| packed.get(i).map(|(_, img)| img))
                .collect::<densefold::Result<_>>()?;
            (Normalization::fit(imgs.iter())?, a.fold_seed)
        }
        (None, Split::Test) => {
            return Err(CliError::Usage(
                "--split test needs --stats with the training split's sidecar".into(),
            ))
        }
    };
    let counts = class_counts(packed.labels().iter().copied())?;
    packed.write(&a.out)?;
    ManifestMeta {
        split,
        norm,
        fold_seed,
        class_counts: counts,
    }
    .write(&ManifestMeta::sidecar_for(&a.out))?;

    for (c, n) in counts.iter().enumerate() {
        println!("class {c}: {n}");
    }
    println!("total: {}", packed.len());
    if skipped > 0 {
        return Err(CliError::Skipped {
            skipped,
            total: inputs.len(),
        });
    }
    Ok(())
}

fn load_dataset(path: &Path) -> densefold::Result<(Dataset, ManifestMeta)> {
    let packed = PackedDataset::read(path)?;
    let meta = ManifestMeta::read(&ManifestMeta::sidecar_for(path))?;
    Ok((Dataset::new(packed, meta.norm.clone())?, meta))
}

/// Defaults, then the stored fold seed, then the config file, then flags.
fn resolve_config(a: &TrainArgs, overrides: &[(String, String)]) -> CliResult<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(data) = &a.data {
        cfg.fold_seed = ManifestMeta::read(&ManifestMeta::sidecar_for(data))?.fold_seed;
    }
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        config::apply_file(&mut cfg, &text)?;
    }
    for (k, v) in overrides {
        config::set(&mut cfg, k, v)?;
    }
    Ok(cfg)
}

pub fn train(a: &TrainArgs, overrides: &[(String, String)]) -> CliResult<()> {
    let mut cfg = resolve_config(a, overrides)?;
    if a.print_config {
        print!("{}", config::render(&cfg));
        return Ok(());
    }
    cfg.validate()?;
    let (data, out) = match (&a.data, &a.out) {
        (Some(d), Some(o)) => (d, o),
        _ => return Err(CliError::Usage("--data and --out are required".into())),
    };
    let (dataset, _) = load_dataset(data)?;
    let (c, h, w) = dataset.sample_shape();
    if h != w {
        return Err(Error::dim("train", format!("samples must be square, got {h}x{w}")).into());
    }
    cfg.spec.input_channels = c;
    cfg.spec.input_size = h;
    cfg.output_dir = Some(out.clone());
    let test = match &a.test {
        Some(p) => Some(Dataset::new(
            PackedDataset::read(p)?,
            dataset.normalization().clone(),
        )?),
        None => None,
    };

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_atomic(&out.join("config.txt"), config::render(&cfg).as_bytes())?;
    eprintln!("{}", train::describe(&cfg.spec)?);

    let test_path = out.join("test_metrics.csv");
    let mut test_rows = String::from("epoch,test_acc\n");
    let epochs = cfg.hyper.epochs;
    train::fit_with(&cfg, &dataset, |m, params| {
        let mut line = format!(
            "epoch {}/{epochs} loss {:.5} train_acc {:.4}",
            m.epoch, m.train_loss, m.train_acc
        );
        if let Some(v) = m.val_acc {
            line.push_str(&format!(" val_acc {v:.4}"));
        }
        if let Some(t) = &test {
            let idx: Vec<usize> = (0..t.len()).collect();
            let pred = train::predict(&cfg.spec, params, t, &idx, cfg.hyper.batch_test)?;
            let correct = pred
                .iter()
                .zip(t.labels())
                .filter(|(p, l)| **p == *l)
                .count();
            let acc = correct as f64 / t.len() as f64;
            line.push_str(&format!(" test_acc {acc:.4}"));
            test_rows.push_str(&format!("{},{acc}\n", m.epoch));
            write_atomic(&test_path, test_rows.as_bytes())?;
        }
        println!("{line} lr {}", m.lr);
        Ok(())
    })?;
    Ok(())
}

pub fn eval(a: &EvalArgs) -> CliResult<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let packed = PackedDataset::read(&a.data)?;
    let dataset = Dataset::new(packed, ck.norm.clone())?;
    let (c, h, w) = dataset.sample_shape();
    let s = &ck.spec;
    if (c, h, w) != (s.input_channels, s.input_size, s.input_size) {
        return Err(Error::dim(
            "eval",
            format!(
                "data samples are [{c}, {h}, {w}], checkpoint expects [{}, {n}, {n}]",
                s.input_channels,
                n = s.input_size
            ),
        )
        .into());
    }
    if dataset.is_empty() {
        return Err(Error::Input("no samples".into()).into());
    }
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let pred = train::predict(s, &ck.params, &dataset, &idx, a.batch)?;
    let refs: Vec<String> = idx
        .iter()
        .map(|&i| dataset.reference(i).to_string())
        .collect();
    let report = EvalReport::new(&pred, &dataset.labels(), &refs)?;
    report.write(&a.report)?;
    print!("{}", report.summary()?);
    Ok(())
}

fn class_probs(ck: &Checkpoint, path: &Path) -> densefold::Result<Vec<f32>> {
    let x = full_preprocess(&load_image(path)?, &ck.norm)?;
    let mut shape = vec![1];
    shape.extend_from_slice(x.shape());
    let x = x.reshape(&shape)?;
    let (logits, _) = forward(&ck.spec, &ck.params, &x, Mode::Infer, &mut Rng::new(0))?;
    let probs = softmax(&logits)?;
    probs.ensure_finite("prediction")?;
    Ok(probs.into_data())
}

pub fn predict(a: &PredictArgs) -> CliResult<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let mut failed = 0;
    for path in &a.images {
        match class_probs(&ck, path) {
            Ok(p) => {
                let best = (0..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b });
                let list: Vec<String> = p.iter().map(f32::to_string).collect();
                println!("{}\t{best}\t{}", path.display(), list.join(","));
            }
            Err(e) => {
                failed += 1;
                eprintln!("{}: {e}", path.display());
            }
        }
    }
    if failed > 0 {
        return Err(CliError::Skipped {
            skipped: failed,
            total: a.images.len(),
        });
    }
    Ok(())
}
