//! The densely connected network: layout arithmetic, parameter table,
//! initialization, and the forward/backward passes.
//!
//! Topology for the default spec (input 3×32×32):
//!
//! ```text
//! stem 3×3 conv (24)
//! dense block 1 (6 bottlenecks, +12 each)   24 → 96   @ 32×32
//! transition 1 (1×1 conv, ⌊θ·c⌋, avg pool)  96 → 48   @ 16×16
//! dense block 2                             48 → 120  @ 16×16
//! transition 2                             120 → 60   @ 8×8
//! dense block 3                             60 → 132  @ 8×8
//! BN → ReLU → global avg pool → dropout → FC(132 → 10)
//! ```
//!
//! Parameter names follow `stem.conv.weight`,
//! `block{i}.bottleneck{j}.{bn1,conv1,bn2,conv2}.*`, `transition{i}.{bn,conv}.*`,
//! `head.bn.*`, `fc.{weight,bias}` with 1-based `i`, `j`. Batch-norm entries are
//! `gamma`, `beta`, `running_mean`, `running_var`.

mod network;

pub use network::{backward, forward, ForwardCache};

use crate::error::{Error, Result};
use crate::params::LayerParams;
use crate::tensor::{Rng, Scalar, Tensor};

/// How convolution and FC weights are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Uniform on `(-1/√fan_in, 1/√fan_in)`.
    CenteredUniform,
    /// Uniform on `(0, 1/√fan_in)`. Every weight starts positive, which
    /// leaves channels nearly interchangeable and stalls early training.
    ScaledUniform,
    /// Uniform on `(0, 1)`; overflows activations at full depth.
    UnitUniform,
}

impl std::str::FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "centered_uniform" => Ok(InitScheme::CenteredUniform),
            "scaled_uniform" => Ok(InitScheme::ScaledUniform),
            "unit_uniform" => Ok(InitScheme::UnitUniform),
            other => Err(Error::Config(format!(
                "init must be centered_uniform, scaled_uniform or unit_uniform, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for InitScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InitScheme::CenteredUniform => "centered_uniform",
            InitScheme::ScaledUniform => "scaled_uniform",
            InitScheme::UnitUniform => "unit_uniform",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    /// Total layer count `n` fed into the bottleneck formula.
    pub depth_n: usize,
    pub growth_k: usize,
    pub num_blocks: usize,
    pub compression_theta: f64,
    pub init_channels: usize,
    pub bottleneck_width: usize,
    pub num_classes: usize,
    pub input_channels: usize,
    pub input_size: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    /// Drop probability of the single dropout between pooling and FC.
    pub dropout_p: f64,
    pub init: InitScheme,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec::with_growth(40, 12)
    }
}

impl NetworkSpec {
    /// Defaults with the given depth and growth rate; stem and bottleneck
    /// widths follow as `2k` and `4k`.
    pub fn with_growth(depth_n: usize, growth_k: usize) -> Self {
        NetworkSpec {
            depth_n,
            growth_k,
            num_blocks: 3,
            compression_theta: 0.5,
            init_channels: 2 * growth_k,
            bottleneck_width: 4 * growth_k,
            num_classes: 10,
            input_channels: 3,
            input_size: 32,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            dropout_p: 0.09,
            init: InitScheme::CenteredUniform,
        }
    }

    pub fn validate(&self) -> Result<()> {
        nbl_per_block(self.depth_n)?;
        if self.num_blocks != 3 {
            return Err(Error::Config(format!(
                "the network has exactly 3 dense blocks, got num_blocks = {}",
                self.num_blocks
            )));
        }
        if !(self.compression_theta > 0.0 && self.compression_theta <= 1.0) {
            return Err(Error::Config(format!(
                "compression_theta must be in (0, 1], got {}",
                self.compression_theta
            )));
        }
        for (name, v) in [
            ("growth_k", self.growth_k),
            ("init_channels", self.init_channels),
            ("bottleneck_width", self.bottleneck_width),
            ("num_classes", self.num_classes),
            ("input_channels", self.input_channels),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.input_size == 0 || !self.input_size.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "input_size must be a positive multiple of 4, got {}",
                self.input_size
            )));
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Config("invalid batchnorm eps/momentum".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout_p must be in [0, 1), got {}",
                self.dropout_p
            )));
        }
        channel_trace(self).map(|_| ())
    }
}

/// Bottleneck blocks per dense block: `½·⌊(n − 4)/3⌋`, which must be integral.
pub fn nbl_per_block(n: usize) -> Result<usize> {
    if n < 10 {
        return Err(Error::Config(format!(
            "depth n = {n} is below the minimum of 10"
        )));
    }
    let q = (n - 4) / 3;
    if !q.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "depth n = {n} gives floor((n-4)/3) = {q}, which is odd; \
             bottlenecks per block would not be integral"
        )));
    }
    Ok(q / 2)
}

/// Channel counts along the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelTrace {
    pub stem: usize,
    /// `(input, output)` channels of each dense block.
    pub blocks: Vec<(usize, usize)>,
    /// `(input, output)` channels of each transition.
    pub transitions: Vec<(usize, usize)>,
    pub head: usize,
}

impl ChannelTrace {
    /// Flat sequence: stem, then block and transition outputs in order.
    pub fn flat(&self) -> Vec<usize> {
        let mut out = vec![self.stem];
        for (i, &(_, b)) in self.blocks.iter().enumerate() {
            out.push(b);
            if let Some(&(_, t)) = self.transitions.get(i) {
                out.push(t);
            }
        }
        out
    }
}

fn compress(theta: f64, c: usize) -> usize {
    // Guard against representation error such as 0.7 * 10 = 6.999...
    (theta * c as f64 + 1e-9).floor() as usize
}

pub fn channel_trace(spec: &NetworkSpec) -> Result<ChannelTrace> {
    let nbl = nbl_per_block(spec.depth_n)?;
    let mut c = spec.init_channels;
    let mut blocks = Vec::new();
    let mut transitions = Vec::new();
    for b in 0..spec.num_blocks {
        let out = c + nbl * spec.growth_k;
        blocks.push((c, out));
        c = out;
        if b + 1 < spec.num_blocks {
            let t = compress(spec.compression_theta, c);
            if t == 0 {
                return Err(Error::Config(format!(
                    "compression {} leaves no channels after block {}",
                    spec.compression_theta,
                    b + 1
                )));
            }
            transitions.push((c, t));
            c = t;
        }
    }
    Ok(ChannelTrace {
        stem: spec.init_channels,
        blocks,
        transitions,
        head: c,
    })
}

/// What a named parameter is, which decides its initialization and whether
/// the optimizer touches it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight { fan_in: usize },
    FcWeight { fan_in: usize },
    FcBias,
    BnGamma,
    BnBeta,
    BnRunningMean,
    BnRunningVar,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        !matches!(self, ParamKind::BnRunningMean | ParamKind::BnRunningVar)
    }

    /// Weight decay applies to convolution and FC weights only.
    pub fn decays(self) -> bool {
        matches!(
            self,
            ParamKind::ConvWeight { .. } | ParamKind::FcWeight { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

pub(crate) fn bottleneck_prefix(block: usize, j: usize) -> String {
    format!("block{}.bottleneck{}", block + 1, j + 1)
}

pub(crate) fn transition_prefix(t: usize) -> String {
    format!("transition{}", t + 1)
}

fn push_bn(out: &mut Vec<ParamSpec>, prefix: &str, c: usize) {
    for (suffix, kind) in [
        ("gamma", ParamKind::BnGamma),
        ("beta", ParamKind::BnBeta),
        ("running_mean", ParamKind::BnRunningMean),
        ("running_var", ParamKind::BnRunningVar),
    ] {
        out.push(ParamSpec {
            name: format!("{prefix}.{suffix}"),
            shape: vec![c],
            kind,
        });
    }
}

fn push_conv(out: &mut Vec<ParamSpec>, prefix: &str, co: usize, ci: usize, k: usize) {
    out.push(ParamSpec {
        name: format!("{prefix}.weight"),
        shape: vec![co, ci, k, k],
        kind: ParamKind::ConvWeight { fan_in: ci * k * k },
    });
}

/// Every parameter of the network in construction order.
pub fn param_specs(spec: &NetworkSpec) -> Result<Vec<ParamSpec>> {
    spec.validate()?;
    let trace = channel_trace(spec)?;
    let nbl = nbl_per_block(spec.depth_n)?;
    let k = spec.growth_k;
    let width = spec.bottleneck_width;
    let mut out = Vec::new();
    push_conv(&mut out, "stem.conv", trace.stem, spec.input_channels, 3);
    for (b, &(c0, _)) in trace.blocks.iter().enumerate() {
        for j in 0..nbl {
            let p = bottleneck_prefix(b, j);
            let cin = c0 + j * k;
            push_bn(&mut out, &format!("{p}.bn1"), cin);
            push_conv(&mut out, &format!("{p}.conv1"), width, cin, 1);
            push_bn(&mut out, &format!("{p}.bn2"), width);
            push_conv(&mut out, &format!("{p}.conv2"), k, width, 3);
        }
        if let Some(&(ci, co)) = trace.transitions.get(b) {
            let p = transition_prefix(b);
            push_bn(&mut out, &format!("{p}.bn"), ci);
            push_conv(&mut out, &format!("{p}.conv"), co, ci, 1);
        }
    }
    push_bn(&mut out, "head.bn", trace.head);
    out.push(ParamSpec {
        name: "fc.weight".into(),
        shape: vec![trace.head, spec.num_classes],
        kind: ParamKind::FcWeight { fan_in: trace.head },
    });
    out.push(ParamSpec {
        name: "fc.bias".into(),
        shape: vec![spec.num_classes],
        kind: ParamKind::FcBias,
    });
    Ok(out)
}

/// Names of the parameters the optimizer updates.
pub fn trainable_names(spec: &NetworkSpec) -> Result<Vec<String>> {
    Ok(param_specs(spec)?
        .into_iter()
        .filter(|p| p.kind.trainable())
        .map(|p| p.name)
        .collect())
}

/// Total trainable scalar count.
pub fn param_count(spec: &NetworkSpec) -> Result<usize> {
    Ok(param_specs(spec)?
        .iter()
        .filter(|p| p.kind.trainable())
        .map(|p| p.shape.iter().product::<usize>())
        .sum())
}

/// Number of convolution layers (stem, bottleneck and transition convs).
pub fn conv_layer_count(spec: &NetworkSpec) -> Result<usize> {
    Ok(param_specs(spec)?
        .iter()
        .filter(|p| matches!(p.kind, ParamKind::ConvWeight { .. }))
        .count())
}

/// Allocate and initialize every parameter. Deterministic in `rng`.
pub fn build<T: Scalar>(spec: &NetworkSpec, rng: &mut Rng) -> Result<LayerParams<T>> {
    let mut params = LayerParams::new();
    for p in param_specs(spec)? {
        let len: usize = p.shape.iter().product();
        let data: Vec<T> = match p.kind {
            ParamKind::ConvWeight { fan_in } | ParamKind::FcWeight { fan_in } => {
                let scaled = 1.0 / (fan_in as f64).sqrt();
                let (lo, hi) = match spec.init {
                    InitScheme::CenteredUniform => (-scaled, scaled),
                    InitScheme::ScaledUniform => (0.0, scaled),
                    InitScheme::UnitUniform => (0.0, 1.0),
                };
                (0..len)
                    .map(|_| T::from_f64(lo + rng.next_f64_open() * (hi - lo)))
                    .collect()
            }
            ParamKind::BnGamma | ParamKind::BnRunningVar => vec![T::one(); len],
            ParamKind::BnBeta | ParamKind::BnRunningMean | ParamKind::FcBias => {
                vec![T::zero(); len]
            }
        };
        params.insert(p.name, Tensor::from_vec(&p.shape, data)?);
    }
    Ok(params)
}

/// Checks that `params` holds exactly the tensors `spec` calls for.
pub fn check_params<T: Scalar>(spec: &NetworkSpec, params: &LayerParams<T>) -> Result<()> {
    let specs = param_specs(spec)?;
    if specs.len() != params.len() {
        return Err(Error::Contract(format!(
            "spec defines {} parameters, map holds {}",
            specs.len(),
            params.len()
        )));
    }
    for p in &specs {
        let t = params.get(&p.name)?;
        if t.shape() != p.shape.as_slice() {
            return Err(Error::dim(
                "parameters",
                format!(
                    "{} has shape {:?}, spec wants {:?}",
                    p.name,
                    t.shape(),
                    p.shape
                ),
            ));
        }
    }
    Ok(())
}
