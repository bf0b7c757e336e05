//! Dataset manifests: a `path,label` CSV plus a `key=value` metadata sidecar.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::preprocess::Normalization;
use crate::error::{Error, Result};
use crate::kv;

pub const NUM_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!(
                "unknown split {other:?} (expected train or test)"
            ))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: String,
    pub label: u8,
}

/// Read a `path,label` CSV.
pub fn read_entries(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_entries(&text)
}

pub fn parse_entries(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::Input(format!("manifest header: {e}")))?;
    if headers != vec!["path", "label"] {
        return Err(Error::Input(format!(
            "manifest header must be `path,label`, got {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Input(format!("manifest row {}: {e}", row + 2)))?;
        let label: u8 = rec[1]
            .trim()
            .parse()
            .ok()
            .filter(|&l: &u8| (l as usize) < NUM_CLASSES)
            .ok_or_else(|| {
                Error::Input(format!("manifest row {}: bad label {:?}", row + 2, &rec[1]))
            })?;
        out.push(ManifestEntry {
            path: rec[0].to_string(),
            label,
        });
    }
    Ok(out)
}

pub fn render_entries(entries: &[ManifestEntry]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(["path", "label"]).expect("in-memory write");
    for e in entries {
        w.write_record([e.path.as_str(), &e.label.to_string()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

pub fn write_entries(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    std::fs::write(path, render_entries(entries)).map_err(|e| Error::io(path, e))
}

/// Samples per class.
pub fn class_counts(labels: impl IntoIterator<Item = u8>) -> Result<[usize; NUM_CLASSES]> {
    let mut counts = [0; NUM_CLASSES];
    for l in labels {
        *counts
            .get_mut(l as usize)
            .ok_or_else(|| Error::Input(format!("label {l} outside 0..{NUM_CLASSES}")))? += 1;
    }
    Ok(counts)
}

/// Sidecar metadata for a preprocessed split.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestMeta {
    pub split: Split,
    pub norm: Normalization,
    pub fold_seed: u64,
    pub class_counts: [usize; NUM_CLASSES],
}

impl ManifestMeta {
    /// Sidecar path for a packed dataset: the same name with `.meta` appended.
    pub fn sidecar_for(packed: &Path) -> PathBuf {
        let mut s = packed.as_os_str().to_owned();
        s.push(".meta");
        PathBuf::from(s)
    }

    pub fn total(&self) -> usize {
        self.class_counts.iter().sum()
    }

    pub fn render(&self) -> String {
        kv::render(&[
            ("split", self.split.to_string()),
            ("count", self.total().to_string()),
            ("class_counts", kv::join(&self.class_counts)),
            ("norm_mean", kv::join(&self.norm.mean)),
            ("norm_std", kv::join(&self.norm.std)),
            ("fold_seed", self.fold_seed.to_string()),
        ])
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (mut split, mut count, mut counts, mut mean, mut std, mut seed) =
            (None, None, None, None, None, None);
        for (k, v) in kv::parse(text)? {
            match k.as_str() {
                "split" => split = Some(v.parse::<Split>()?),
                "count" => count = Some(kv::value::<usize>(&k, &v)?),
                "class_counts" => counts = Some(kv::list::<usize>(&k, &v)?),
                "norm_mean" => mean = Some(kv::list::<f32>(&k, &v)?),
                "norm_std" => std = Some(kv::list::<f32>(&k, &v)?),
                "fold_seed" => seed = Some(kv::value::<u64>(&k, &v)?),
                other => return Err(Error::Config(format!("unknown metadata key {other:?}"))),
            }
        }
        let missing = |k: &str| Error::Config(format!("metadata is missing {k}"));
        let counts = counts.ok_or_else(|| missing("class_counts"))?;
        let class_counts: [usize; NUM_CLASSES] = counts.try_into().map_err(|v: Vec<usize>| {
            Error::Config(format!(
                "class_counts has {} entries, expected {NUM_CLASSES}",
                v.len()
            ))
        })?;
        let norm = Normalization {
            mean: mean.ok_or_else(|| missing("norm_mean"))?,
            std: std.ok_or_else(|| missing("norm_std"))?,
        };
        if norm.mean.len() != norm.std.len() || norm.mean.is_empty() {
            return Err(Error::Config(
                "norm_mean and norm_std lengths differ".into(),
            ));
        }
        if norm.std.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::Config("norm_std must be positive".into()));
        }
        let meta = ManifestMeta {
            split: split.ok_or_else(|| missing("split"))?,
            norm,
            fold_seed: seed.ok_or_else(|| missing("fold_seed"))?,
            class_counts,
        };
        if let Some(c) = count {
            if c != meta.total() {
                return Err(Error::Config(format!(
                    "count {c} disagrees with class_counts total {}",
                    meta.total()
                )));
            }
        }
        Ok(meta)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }
}

/// A split's entries together with its metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub meta: ManifestMeta,
}
