//! Checkpoint container.
//!
//! ```text
//! "BDNT" | version u16 | count u32
//! count × ( name_len u16 | name (UTF-8) | dtype u8 | rank u8 | dims u64×rank | payload )
//! crc32 u32 of every preceding byte
//! ```
//!
//! `dtype` is 0 for f32 and 1 for f64; everything is little-endian. A model
//! checkpoint stores parameters under their model names, optimizer velocity
//! under `velocity.<name>`, and bookkeeping under `meta.*`.

use std::io::Write;
use std::path::Path;

use super::EpochMetrics;
use crate::data::Normalization;
use crate::error::{Error, Result};
use crate::model::{check_params, InitScheme, NetworkSpec};
use crate::optim::SgdState;
use crate::params::{LayerParams, ParamMap};
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"BDNT";
pub const VERSION: u16 = 1;

const VELOCITY: &str = "velocity.";
const META_SPEC: &str = "meta.spec";
const META_NORM: &str = "meta.norm";
const META_METRICS: &str = "meta.metrics";

/// A named tensor of either precision.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    fn dtype(&self) -> u8 {
        match self {
            AnyTensor::F32(_) => f32::DTYPE,
            AnyTensor::F64(_) => f64::DTYPE,
        }
    }

    fn write_payload(&self, out: &mut Vec<u8>) {
        match self {
            AnyTensor::F32(t) => out.extend(f32::to_le_bytes_vec(t.data())),
            AnyTensor::F64(t) => out.extend(f64::to_le_bytes_vec(t.data())),
        }
    }
}

/// Serialize named tensors, in the given order.
pub fn encode_tensors(entries: &[(String, AnyTensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(entries.len())
        .map_err(|_| Error::Input("too many tensors for one checkpoint".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in entries {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Input(format!("tensor name too long: {name:.40}...")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.dtype());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        t.write_payload(&mut out);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format {
                offset: self.pos,
                msg: format!("truncated while reading {what}"),
            }),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

fn read_payload<T: Scalar>(r: &mut Reader<'_>, shape: &[usize], at: usize) -> Result<Tensor<T>> {
    let width = std::mem::size_of::<T>();
    let n: usize = shape.iter().product();
    let bytes = r.take(n * width, "tensor payload")?;
    let data = bytes.chunks_exact(width).map(T::from_le_chunk).collect();
    Tensor::from_vec(shape, data).map_err(|e| Error::Format {
        offset: at,
        msg: e.to_string(),
    })
}

/// Parse a container; nothing is returned unless every check passes.
pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(String, AnyTensor)>> {
    let fail = |offset, msg: &str| Error::Format {
        offset,
        msg: msg.to_string(),
    };
    if bytes.len() < 14 {
        return Err(fail(bytes.len(), "file too short for header and checksum"));
    }
    if &bytes[..4] != MAGIC {
        return Err(fail(0, "bad magic, expected BDNT"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(fail(4, &format!("unsupported version {version}")));
    }
    let body = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body..].try_into().unwrap());
    if crc32fast::hash(&bytes[..body]) != stored {
        return Err(fail(body, "checksum mismatch"));
    }
    let mut r = Reader {
        bytes: &bytes[..body],
        pos: 6,
    };
    let count = r.u32("tensor count")?;
    let mut out = Vec::new();
    for _ in 0..count {
        let at = r.pos;
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| fail(at + 2, "tensor name is not UTF-8"))?
            .to_string();
        let dtype_at = r.pos;
        let dtype = r.u8("dtype")?;
        let rank = r.u8("rank")? as usize;
        if !(1..=4).contains(&rank) {
            return Err(fail(dtype_at + 1, &format!("rank {rank} outside 1..=4")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = r.u64("dimension")?;
            shape.push(usize::try_from(d).map_err(|_| fail(r.pos - 8, "dimension overflows"))?);
        }
        if shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .is_none()
        {
            return Err(fail(dtype_at + 2, "tensor size overflows"));
        }
        let t = match dtype {
            0 => AnyTensor::F32(read_payload(&mut r, &shape, at)?),
            1 => AnyTensor::F64(read_payload(&mut r, &shape, at)?),
            other => return Err(fail(dtype_at, &format!("unknown dtype {other}"))),
        };
        if out.iter().any(|(n, _)| *n == name) {
            return Err(fail(at, &format!("duplicate tensor {name:?}")));
        }
        out.push((name, t));
    }
    if r.pos != body {
        return Err(fail(r.pos, "trailing bytes before checksum"));
    }
    Ok(out)
}

/// Write `bytes` to `path` through a temporary file and a rename, so an
/// interrupted write never leaves a torn file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| Error::io(path, e))
}

/// Everything needed to resume training or run inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub params: LayerParams<f32>,
    pub state: SgdState<f32>,
    pub norm: Normalization,
    /// Metrics up to and including the saved epoch, without wall time.
    pub history: Vec<EpochMetrics>,
}

fn spec_to_vec(s: &NetworkSpec) -> Vec<f64> {
    vec![
        s.depth_n as f64,
        s.growth_k as f64,
        s.num_blocks as f64,
        s.compression_theta,
        s.init_channels as f64,
        s.bottleneck_width as f64,
        s.num_classes as f64,
        s.input_channels as f64,
        s.input_size as f64,
        s.bn_eps,
        s.bn_momentum,
        s.dropout_p,
        match s.init {
            InitScheme::ScaledUniform => 0.0,
            InitScheme::UnitUniform => 1.0,
            InitScheme::CenteredUniform => 2.0,
        },
    ]
}

fn spec_from_vec(v: &[f64]) -> Result<NetworkSpec> {
    if v.len() != 13 {
        return Err(Error::Contract(format!(
            "meta.spec has {} fields, expected 13",
            v.len()
        )));
    }
    let int = |x: f64| -> Result<usize> {
        if x >= 0.0 && x.fract() == 0.0 && x < u32::MAX as f64 {
            Ok(x as usize)
        } else {
            Err(Error::Contract(format!(
                "meta.spec field {x} is not a count"
            )))
        }
    };
    let spec = NetworkSpec {
        depth_n: int(v[0])?,
        growth_k: int(v[1])?,
        num_blocks: int(v[2])?,
        compression_theta: v[3],
        init_channels: int(v[4])?,
        bottleneck_width: int(v[5])?,
        num_classes: int(v[6])?,
        input_channels: int(v[7])?,
        input_size: int(v[8])?,
        bn_eps: v[9],
        bn_momentum: v[10],
        dropout_p: v[11],
        init: match v[12] {
            0.0 => InitScheme::ScaledUniform,
            1.0 => InitScheme::UnitUniform,
            2.0 => InitScheme::CenteredUniform,
            other => return Err(Error::Contract(format!("unknown init scheme {other}"))),
        },
    };
    spec.validate()?;
    Ok(spec)
}

fn metrics_to_tensor(history: &[EpochMetrics]) -> Option<Tensor<f64>> {
    if history.is_empty() {
        return None;
    }
    let data = history
        .iter()
        .flat_map(|m| {
            [
                m.epoch as f64,
                m.train_loss,
                m.train_acc,
                m.val_acc.unwrap_or(-1.0),
                m.lr,
            ]
        })
        .collect();
    Some(Tensor::from_vec(&[history.len(), 5], data).expect("5 columns per row"))
}

fn metrics_from_tensor(t: &Tensor<f64>) -> Result<Vec<EpochMetrics>> {
    let (_, cols) = t.dims2("meta.metrics")?;
    if cols != 5 {
        return Err(Error::Contract(format!(
            "meta.metrics has {cols} columns, expected 5"
        )));
    }
    Ok(t.data()
        .chunks_exact(5)
        .map(|r| EpochMetrics {
            epoch: r[0] as usize,
            train_loss: r[1],
            train_acc: r[2],
            val_acc: (r[3] >= 0.0).then_some(r[3]),
            lr: r[4],
            wall_seconds: 0.0,
        })
        .collect())
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut entries: Vec<(String, AnyTensor)> = Vec::new();
        for (name, t) in self.params.iter() {
            entries.push((name.to_string(), AnyTensor::F32(t.clone())));
        }
        for (name, t) in self.state.velocity.iter() {
            entries.push((format!("{VELOCITY}{name}"), AnyTensor::F32(t.clone())));
        }
        entries.push((
            META_SPEC.into(),
            AnyTensor::F64(Tensor::from_vec(&[13], spec_to_vec(&self.spec))?),
        ));
        let c = self.norm.channels();
        let mut norm = self.norm.mean.clone();
        norm.extend_from_slice(&self.norm.std);
        entries.push((
            META_NORM.into(),
            AnyTensor::F32(Tensor::from_vec(&[2, c], norm)?),
        ));
        if let Some(m) = metrics_to_tensor(&self.history) {
            entries.push((META_METRICS.into(), AnyTensor::F64(m)));
        }
        encode_tensors(&entries)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut spec = None;
        let mut norm = None;
        let mut history = Vec::new();
        let mut params = ParamMap::new();
        let mut velocity = ParamMap::new();
        for (name, t) in decode_tensors(bytes)? {
            match (name.as_str(), t) {
                (META_SPEC, AnyTensor::F64(t)) => spec = Some(spec_from_vec(t.data())?),
                (META_NORM, AnyTensor::F32(t)) => {
                    let (_, c) = t.dims2(META_NORM)?;
                    norm = Some(Normalization {
                        mean: t.data()[..c].to_vec(),
                        std: t.data()[c..].to_vec(),
                    });
                }
                (META_METRICS, AnyTensor::F64(t)) => history = metrics_from_tensor(&t)?,
                (n, AnyTensor::F32(t)) if n.starts_with(VELOCITY) => {
                    velocity.insert(&n[VELOCITY.len()..], t);
                }
                (n, AnyTensor::F32(t)) if !n.starts_with("meta.") => {
                    params.insert(n, t);
                }
                (n, _) => {
                    return Err(Error::Contract(format!(
                        "unexpected checkpoint entry {n:?}"
                    )))
                }
            }
        }
        let spec = spec.ok_or_else(|| Error::Contract("checkpoint lacks meta.spec".into()))?;
        let norm = norm.ok_or_else(|| Error::Contract("checkpoint lacks meta.norm".into()))?;
        check_params(&spec, &params)?;
        let mut state = SgdState::for_spec(&spec)?;
        let expected: Vec<&str> = state.velocity.names().collect();
        let found: Vec<&str> = velocity.names().collect();
        if expected != found {
            return Err(Error::Contract(format!(
                "checkpoint has {} velocity tensors, spec needs {}",
                found.len(),
                expected.len()
            )));
        }
        for (name, v) in velocity.iter() {
            let slot = state.velocity.get_mut(name)?;
            if slot.shape() != v.shape() {
                return Err(Error::dim(
                    "checkpoint",
                    format!("velocity shape for {name}"),
                ));
            }
            *slot = v.clone();
        }
        Ok(Checkpoint {
            spec,
            params,
            state,
            norm,
            history,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}
