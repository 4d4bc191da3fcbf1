//! Multimodal fusion operators.
//!
//! Every operator implements [`Fusion`] and is produced by a
//! [`FusionFactory`] registered by name in a [`FusionRegistry`]. A
//! [`FusionSpec`] describes one operator declaratively; its parameter and
//! FLOP counts are available in closed form without building the module.

mod block;
mod cmlp;
mod linear;
mod mcb;
mod mfb;
mod mfh;
mod mlb;
mod mutan;
mod params;
mod registry;

pub use block::Block;
pub use cmlp::Cmlp;
pub use linear::Linear;
pub use mcb::{Mcb, SketchTable};
pub use mfb::Mfb;
pub use mfh::Mfh;
pub use mlb::Mlb;
pub use mutan::{interleave_rank_factors, Mutan};
pub use params::{read_params, write_params, ParamSet, PARAM_MAGIC};
pub use registry::{FusionFactory, FusionRegistry};

use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::complexity::FlopConvention;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};
use crate::tensor::{DType, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    Linear,
    Cmlp,
    Mcb,
    Mlb,
    Mfb,
    Mfh,
    Mutan,
    Block,
}

impl FusionKind {
    pub const ALL: [FusionKind; 8] = [
        FusionKind::Linear,
        FusionKind::Cmlp,
        FusionKind::Mcb,
        FusionKind::Mlb,
        FusionKind::Mutan,
        FusionKind::Mfb,
        FusionKind::Block,
        FusionKind::Mfh,
    ];

    /// Registry key.
    pub fn name(self) -> &'static str {
        match self {
            FusionKind::Linear => "linear",
            FusionKind::Cmlp => "cmlp",
            FusionKind::Mcb => "mcb",
            FusionKind::Mlb => "mlb",
            FusionKind::Mfb => "mfb",
            FusionKind::Mfh => "mfh",
            FusionKind::Mutan => "mutan",
            FusionKind::Block => "block",
        }
    }

    /// Conventional display spelling.
    pub fn label(self) -> &'static str {
        match self {
            FusionKind::Linear => "Linear",
            FusionKind::Cmlp => "C-MLP",
            FusionKind::Mcb => "MCB",
            FusionKind::Mlb => "MLB",
            FusionKind::Mfb => "MFB",
            FusionKind::Mfh => "MFH",
            FusionKind::Mutan => "Mutan",
            FusionKind::Block => "Block",
        }
    }

    /// Whether the operator is multiplicative in each input.
    pub fn is_bilinear(self) -> bool {
        !matches!(self, FusionKind::Linear | FusionKind::Cmlp)
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| !matches!(c, '-' | '_'))
            .collect::<String>()
            .to_ascii_lowercase();
        FusionKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| {
                let names: Vec<&str> = FusionKind::ALL.iter().map(|k| k.name()).collect();
                Error::config(format!(
                    "unknown fusion '{s}' (valid: {})",
                    names.join(", ")
                ))
            })
    }
}

/// Kind-specific hyperparameters. [`Hyper::defaults`] gives the standard
/// settings used throughout the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Hyper {
    Linear { inter: usize, d_out: usize },
    /// Three layers: `d_v + d_q -> hidden -> hidden -> d_out`.
    Cmlp { hidden: usize, d_out: usize },
    /// `d` is the sketch (joint embedding) width.
    Mcb { d: usize, normalize: bool },
    Mlb { d_z: usize },
    Mfb { k: usize, d_z: usize },
    Mfh { k: usize, d_z: usize, m: usize },
    Mutan { d_pv: usize, d_pq: usize, d_z: usize, rank: usize },
    /// `rank` is per block; `n` is the number of blocks.
    Block { d_pv: usize, d_pq: usize, d_z: usize, rank: usize, n: usize },
}

impl Hyper {
    /// Default hyperparameters. `d_out` is only used by Linear and C-MLP,
    /// whose last layer produces the output directly.
    pub fn defaults(kind: FusionKind, d_out: usize) -> Hyper {
        match kind {
            FusionKind::Linear => Hyper::Linear { inter: 1000, d_out },
            FusionKind::Cmlp => Hyper::Cmlp { hidden: 1600, d_out },
            FusionKind::Mcb => Hyper::Mcb { d: 16000, normalize: true },
            FusionKind::Mlb => Hyper::Mlb { d_z: 1200 },
            FusionKind::Mfb => Hyper::Mfb { k: 5, d_z: 1000 },
            FusionKind::Mfh => Hyper::Mfh { k: 5, d_z: 1000, m: 2 },
            FusionKind::Mutan => Hyper::Mutan { d_pv: 700, d_pq: 700, d_z: 700, rank: 10 },
            FusionKind::Block => Hyper::Block {
                d_pv: 1600,
                d_pq: 1600,
                d_z: 1600,
                rank: 15,
                n: 18,
            },
        }
    }

    pub fn kind(&self) -> FusionKind {
        match self {
            Hyper::Linear { .. } => FusionKind::Linear,
            Hyper::Cmlp { .. } => FusionKind::Cmlp,
            Hyper::Mcb { .. } => FusionKind::Mcb,
            Hyper::Mlb { .. } => FusionKind::Mlb,
            Hyper::Mfb { .. } => FusionKind::Mfb,
            Hyper::Mfh { .. } => FusionKind::Mfh,
            Hyper::Mutan { .. } => FusionKind::Mutan,
            Hyper::Block { .. } => FusionKind::Block,
        }
    }

    /// Output width of the operator.
    pub fn d_out(&self) -> usize {
        match *self {
            Hyper::Linear { d_out, .. } | Hyper::Cmlp { d_out, .. } => d_out,
            Hyper::Mcb { d, .. } => d,
            Hyper::Mlb { d_z } | Hyper::Mfb { d_z, .. } => d_z,
            Hyper::Mfh { d_z, m, .. } => d_z * m,
            Hyper::Mutan { d_z, .. } | Hyper::Block { d_z, .. } => d_z,
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = |name: &str, x: usize| {
            if x == 0 {
                Err(Error::config(format!(
                    "{}: {name} must be at least 1",
                    self.kind().label()
                )))
            } else {
                Ok(())
            }
        };
        match *self {
            Hyper::Linear { inter, d_out } => {
                positive("inter", inter)?;
                positive("d_out", d_out)
            }
            Hyper::Cmlp { hidden, d_out } => {
                positive("hidden", hidden)?;
                positive("d_out", d_out)
            }
            Hyper::Mcb { d, .. } => positive("d", d),
            Hyper::Mlb { d_z } => positive("d_z", d_z),
            Hyper::Mfb { k, d_z } => {
                positive("k", k)?;
                positive("d_z", d_z)
            }
            Hyper::Mfh { k, d_z, m } => {
                positive("k", k)?;
                positive("d_z", d_z)?;
                positive("m", m)
            }
            Hyper::Mutan { d_pv, d_pq, d_z, rank } => {
                positive("d_pv", d_pv)?;
                positive("d_pq", d_pq)?;
                positive("d_z", d_z)?;
                positive("rank", rank)
            }
            Hyper::Block { d_pv, d_pq, d_z, rank, n } => {
                positive("d_pv", d_pv)?;
                positive("d_pq", d_pq)?;
                positive("d_z", d_z)?;
                positive("rank", rank)?;
                positive("n", n)?;
                let narrowest = d_pv.min(d_pq).min(d_z);
                if n > narrowest {
                    return Err(Error::config(format!(
                        "Block: {n} blocks exceed the narrowest projected width {narrowest}"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Declarative description of one fusion operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionSpec {
    pub d_v: usize,
    pub d_q: usize,
    pub hyper: Hyper,
    pub dtype: DType,
    pub seed: u64,
}

impl FusionSpec {
    /// Default hyperparameters for `kind`, f64, seed 0.
    pub fn new(kind: FusionKind, d_v: usize, d_q: usize, d_out: usize) -> FusionSpec {
        FusionSpec::with_hyper(d_v, d_q, Hyper::defaults(kind, d_out))
    }

    pub fn with_hyper(d_v: usize, d_q: usize, hyper: Hyper) -> FusionSpec {
        FusionSpec {
            d_v,
            d_q,
            hyper,
            dtype: DType::F64,
            seed: 0,
        }
    }

    pub fn seed(mut self, seed: u64) -> FusionSpec {
        self.seed = seed;
        self
    }

    pub fn dtype(mut self, dtype: DType) -> FusionSpec {
        self.dtype = dtype;
        self
    }

    pub fn kind(&self) -> FusionKind {
        self.hyper.kind()
    }

    pub fn d_out(&self) -> usize {
        self.hyper.d_out()
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_v == 0 || self.d_q == 0 {
            return Err(Error::config(format!(
                "{}: input widths must be at least 1 (d_v = {}, d_q = {})",
                self.kind().label(),
                self.d_v,
                self.d_q
            )));
        }
        self.hyper.validate()
    }

    fn factory(&self) -> Result<&'static dyn FusionFactory> {
        FusionRegistry::global().get(self.kind().name())
    }

    /// Builds the operator through the global registry.
    pub fn build(&self) -> Result<Box<dyn Fusion>> {
        self.validate()?;
        self.factory()?.build(self)
    }

    /// Closed-form trainable parameter count.
    pub fn param_count(&self) -> u64 {
        self.factory()
            .map(|f| f.param_count(self))
            .expect("built-in kinds are always registered")
    }

    /// Closed-form forward FLOPs for a batch of `batch` samples.
    pub fn flop_count(&self, conv: &FlopConvention, batch: u64) -> u64 {
        let per_sample = self
            .factory()
            .map(|f| f.flop_count(self, conv))
            .expect("built-in kinds are always registered");
        per_sample * batch
    }

    /// Uniform `±1/√rows` initialization, seeded per tensor name.
    pub(crate) fn init_weight(&self, name: &str, rows: usize, cols: usize) -> Tensor {
        let mut rng = Rng::new(derive_seed(self.seed, name));
        let bound = 1.0 / (rows as f64).sqrt();
        Tensor::uniform(&[rows, cols], bound, self.dtype, &mut rng)
    }

    pub(crate) fn zero_bias(&self, n: usize) -> Tensor {
        Tensor::zeros(&[n], self.dtype)
    }

    /// Checks `v: B×d_v`, `q: B×d_q` and returns `B`.
    pub(crate) fn check_inputs(&self, v: &Tensor, q: &Tensor) -> Result<usize> {
        let label = self.kind().label();
        if v.rank() != 2 || v.shape()[1] != self.d_v {
            return Err(Error::dim(format!(
                "{label}: v has shape {:?}, expected [B, {}]",
                v.shape(),
                self.d_v
            )));
        }
        if q.rank() != 2 || q.shape()[1] != self.d_q {
            return Err(Error::dim(format!(
                "{label}: q has shape {:?}, expected [B, {}]",
                q.shape(),
                self.d_q
            )));
        }
        if v.shape()[0] != q.shape()[0] {
            return Err(Error::dim(format!(
                "{label}: batch sizes differ (v {:?}, q {:?})",
                v.shape(),
                q.shape()
            )));
        }
        if v.dtype() != self.dtype || q.dtype() != self.dtype {
            return Err(Error::dim(format!(
                "{label}: inputs must be {} (v {}, q {})",
                self.dtype,
                v.dtype(),
                q.dtype()
            )));
        }
        Ok(v.shape()[0])
    }
}

/// Activations saved by [`Fusion::forward`] for the matching backward call.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    module: u64,
    version: u64,
    out_shape: Vec<usize>,
    pub(crate) saved: Vec<Tensor>,
}

impl ForwardCache {
    pub(crate) fn new(params: &ParamSet, out: &Tensor, saved: Vec<Tensor>) -> ForwardCache {
        let (module, version) = params.stamp();
        ForwardCache {
            module,
            version,
            out_shape: out.shape().to_vec(),
            saved,
        }
    }

    /// Rejects caches from another module, from before a parameter update,
    /// or gradients of the wrong shape.
    pub(crate) fn check(&self, params: &ParamSet, grad_out: &Tensor) -> Result<()> {
        if params.stamp() != (self.module, self.version) {
            return Err(Error::State(
                "forward cache does not belong to this module state".into(),
            ));
        }
        if grad_out.shape() != self.out_shape.as_slice() {
            return Err(Error::dim(format!(
                "backward: gradient shape {:?} does not match output {:?}",
                grad_out.shape(),
                self.out_shape
            )));
        }
        Ok(())
    }
}

/// Gradients returned by [`Fusion::backward`]. `params` is keyed like
/// [`Fusion::params`].
#[derive(Debug, Clone)]
pub struct FusionGrads {
    pub v: Tensor,
    pub q: Tensor,
    pub params: IndexMap<String, Tensor>,
}

/// An instantiated fusion operator.
pub trait Fusion: fmt::Debug + Send + Sync {
    fn spec(&self) -> &FusionSpec;

    /// `v: B×d_v`, `q: B×d_q` to `B×d_out`.
    fn forward(&self, v: &Tensor, q: &Tensor) -> Result<(Tensor, ForwardCache)>;

    fn backward(&self, cache: &ForwardCache, grad_out: &Tensor) -> Result<FusionGrads>;

    fn params(&self) -> &ParamSet;

    /// Mutable access invalidates outstanding forward caches.
    fn params_mut(&mut self) -> &mut ParamSet;

    /// Non-trainable state as `(name, element count)`.
    fn frozen_state(&self) -> Vec<(String, usize)> {
        Vec::new()
    }

    fn kind(&self) -> FusionKind {
        self.spec().kind()
    }

    fn d_out(&self) -> usize {
        self.spec().d_out()
    }

    fn apply(&self, v: &Tensor, q: &Tensor) -> Result<Tensor> {
        self.forward(v, q).map(|(out, _)| out)
    }

    fn param_count(&self) -> u64 {
        self.params().numel()
    }

    fn flop_count(&self, conv: &FlopConvention, batch: u64) -> u64 {
        self.spec().flop_count(conv, batch)
    }
}

/// Splits `total` into `n` parts, the first `total mod n` one larger.
pub fn even_chunks(total: usize, n: usize) -> Vec<usize> {
    let (base, extra) = (total / n, total % n);
    (0..n).map(|i| base + usize::from(i < extra)).collect()
}

/// `x·w` and its gradients: returns `(g·wᵀ, xᵀ·g)`.
pub(crate) fn project_backward(x: &Tensor, w: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor)> {
    let dx = g.matmul(&w.transpose()?)?;
    let dw = x.transpose()?.matmul(g)?;
    Ok((dx, dw))
}

#[cfg(test)]
mod tests;
