//! Two-stage co-attention and the answer classifier head.
//!
//! Stage one fuses the question with every visual location, turns the fused
//! features into `t` glimpse logits per location and normalizes them over
//! the locations. Stage two pools the visual features with each glimpse,
//! concatenates the pooled vectors and fuses them with the question again.

use indexmap::IndexMap;

use crate::complexity::FlopConvention;
use crate::error::{Error, Result};
use crate::fusion::{ForwardCache, Fusion, FusionGrads, FusionKind, FusionSpec, ParamSet};
use crate::rng::{derive_seed, Rng};
use crate::tensor::{Activation, DType, Tensor};

/// Gradients keyed by qualified parameter name (`inner.p_v`, `head.p_a`, ...).
pub type NamedGrads = IndexMap<String, Tensor>;

fn prefixed(prefix: &str, grads: IndexMap<String, Tensor>, into: &mut NamedGrads) {
    for (k, v) in grads {
        into.insert(format!("{prefix}.{k}"), v);
    }
}

/// Applies `p -= lr·g` to the parameters of `set` whose qualified names
/// start with `prefix.`.
pub(crate) fn descend_prefixed(set: &mut ParamSet, prefix: &str, grads: &NamedGrads, lr: f64) -> Result<()> {
    let lead = format!("{prefix}.");
    for (name, g) in grads {
        if let Some(local) = name.strip_prefix(&lead) {
            set.get_mut(local)?.axpy_in_place(-lr, g)?;
        }
    }
    Ok(())
}

/// How fused features become answer logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// The fusion's own last layer already produces the logits (Linear and
    /// C-MLP).
    Direct,
    /// `logits = σ(z)·P_A`.
    Projected(Activation),
}

impl HeadKind {
    pub fn for_fusion(kind: FusionKind, sigma: Activation) -> HeadKind {
        if kind.is_bilinear() {
            HeadKind::Projected(sigma)
        } else {
            HeadKind::Direct
        }
    }
}

/// Classifier onto the candidate answer set.
#[derive(Debug, Clone)]
pub struct AnswerHead {
    kind: HeadKind,
    d_in: usize,
    answers: usize,
    params: ParamSet,
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    inner: ForwardCache,
}

impl AnswerHead {
    pub fn new(kind: HeadKind, d_in: usize, answers: usize, dtype: DType, seed: u64) -> Result<AnswerHead> {
        let mut params = ParamSet::new();
        match kind {
            HeadKind::Direct if d_in != answers => {
                return Err(Error::config(format!(
                    "direct answer head needs fused width {d_in} to equal |A| = {answers}"
                )));
            }
            HeadKind::Direct => {}
            HeadKind::Projected(_) => {
                let mut rng = Rng::new(derive_seed(seed, "p_a"));
                let bound = 1.0 / (d_in as f64).sqrt();
                params.insert("p_a", Tensor::uniform(&[d_in, answers], bound, dtype, &mut rng));
            }
        }
        Ok(AnswerHead {
            kind,
            d_in,
            answers,
            params,
        })
    }

    pub fn kind(&self) -> HeadKind {
        self.kind
    }

    pub fn answers(&self) -> usize {
        self.answers
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn param_count(&self) -> u64 {
        self.params.numel()
    }

    pub fn closed_form_params(kind: HeadKind, d_in: usize, answers: usize) -> u64 {
        match kind {
            HeadKind::Direct => 0,
            HeadKind::Projected(_) => (d_in * answers) as u64,
        }
    }

    /// Per-sample FLOPs.
    pub fn closed_form_flops(kind: HeadKind, d_in: usize, answers: usize, c: &FlopConvention) -> u64 {
        match kind {
            HeadKind::Direct => 0,
            HeadKind::Projected(_) => c.transcendental(d_in as u64) + c.matmul(1, d_in as u64, answers as u64),
        }
    }

    pub fn forward(&self, z: &Tensor) -> Result<(Tensor, HeadCache)> {
        if z.rank() != 2 || z.shape()[1] != self.d_in {
            return Err(Error::dim(format!(
                "answer head: input {:?}, expected [B, {}]",
                z.shape(),
                self.d_in
            )));
        }
        let (logits, saved) = match self.kind {
            HeadKind::Direct => (z.clone(), vec![]),
            HeadKind::Projected(act) => {
                let s = z.activate(act);
                let logits = s.matmul(self.params.get("p_a")?)?;
                (logits, vec![z.clone(), s])
            }
        };
        let inner = ForwardCache::new(&self.params, &logits, saved);
        Ok((logits, HeadCache { inner }))
    }

    /// Returns the gradient with respect to the head input and the head's
    /// parameter gradients.
    pub fn backward(&self, cache: &HeadCache, g: &Tensor) -> Result<(Tensor, IndexMap<String, Tensor>)> {
        cache.inner.check(&self.params, g)?;
        let mut grads = IndexMap::new();
        match self.kind {
            HeadKind::Direct => Ok((g.clone(), grads)),
            HeadKind::Projected(act) => {
                let [z, s] = &cache.inner.saved[..] else {
                    unreachable!("head cache layout")
                };
                let p = self.params.get("p_a")?;
                let ds = g.matmul(&p.transpose()?)?;
                grads.insert("p_a".into(), s.transpose()?.matmul(g)?);
                let dz = Tensor::activation_backward(act, z, s, &ds)?;
                Ok((dz, grads))
            }
        }
    }
}

/// Configuration of the co-attention path.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionConfig {
    pub glimpses: usize,
    pub sigma: Activation,
    pub inner: FusionSpec,
    pub outer: FusionSpec,
}

impl AttentionConfig {
    /// Default configuration: two glimpses, tanh, and the same fusion kind at
    /// both stages with default hyperparameters. Linear and C-MLP produce
    /// their intermediate width at the inner stage and the answer logits at
    /// the outer stage.
    pub fn new(kind: FusionKind, d_v: usize, d_q: usize, answers: usize) -> AttentionConfig {
        let glimpses = 2;
        let inner_out = match kind {
            FusionKind::Linear => 1000,
            FusionKind::Cmlp => 1600,
            _ => 0,
        };
        AttentionConfig {
            glimpses,
            sigma: Activation::Tanh,
            inner: FusionSpec::new(kind, d_v, d_q, inner_out),
            outer: FusionSpec::new(kind, glimpses * d_v, d_q, answers),
        }
    }

    /// Applies `dtype` and per-stage seeds derived from `seed`.
    pub fn with_seed_and_dtype(mut self, seed: u64, dtype: DType) -> AttentionConfig {
        self.inner = self.inner.seed(derive_seed(seed, "inner")).dtype(dtype);
        self.outer = self.outer.seed(derive_seed(seed, "outer")).dtype(dtype);
        self
    }

    pub fn d_v(&self) -> usize {
        self.inner.d_v
    }

    pub fn validate(&self) -> Result<()> {
        if self.glimpses == 0 {
            return Err(Error::config("attention needs at least one glimpse"));
        }
        if !matches!(self.sigma, Activation::Tanh | Activation::Sigmoid) {
            return Err(Error::config(format!(
                "attention nonlinearity must be tanh or sigmoid, got {:?}",
                self.sigma
            )));
        }
        if self.outer.d_v != self.glimpses * self.inner.d_v {
            return Err(Error::config(format!(
                "outer fusion input width {} must be glimpses × d_v = {}",
                self.outer.d_v,
                self.glimpses * self.inner.d_v
            )));
        }
        if self.outer.d_q != self.inner.d_q {
            return Err(Error::config("inner and outer fusion must share d_q"));
        }
        if self.inner.dtype != self.outer.dtype {
            return Err(Error::config("inner and outer fusion must share a dtype"));
        }
        self.inner.validate()?;
        self.outer.validate()
    }

    /// Closed-form trainable parameters of both stages and the glimpse
    /// projection (the answer head is counted separately).
    pub fn param_count(&self) -> u64 {
        self.inner.param_count() + (self.inner.d_out() * self.glimpses) as u64 + self.outer.param_count()
    }

    /// Per-sample forward FLOPs over `locations` visual locations, answer
    /// head excluded.
    pub fn flop_count(&self, locations: usize, c: &FlopConvention) -> u64 {
        let (g, t, dz, dv) = (
            locations as u64,
            self.glimpses as u64,
            self.inner.d_out() as u64,
            self.inner.d_v as u64,
        );
        self.inner.flop_count(c, g)
            + c.transcendental(g * dz)
            + c.matmul(g, dz, t)
            + c.softmax(t * g)
            + c.matmul(t, g, dv)
            + self.outer.flop_count(c, 1)
    }
}

/// Instantiated co-attention stages plus the answer head.
#[derive(Debug)]
pub struct AttentionModule {
    config: AttentionConfig,
    inner: Box<dyn Fusion>,
    glimpse: ParamSet,
    outer: Box<dyn Fusion>,
    head: AnswerHead,
}

/// Activations of one attended forward pass.
#[derive(Debug)]
pub struct AttentionCache {
    locations: usize,
    v: Tensor,
    inner: ForwardCache,
    glimpse: ForwardCache,
    outer: ForwardCache,
    head: HeadCache,
}

/// Result of [`AttentionModule::attend`].
#[derive(Debug, Clone)]
pub struct Attended {
    /// `B×t×G`, each `[b, g, ·]` slice a distribution over locations.
    pub alpha: Tensor,
    /// `B×(t·d_v)`, glimpses concatenated.
    pub v_att: Tensor,
}

#[derive(Debug, Clone)]
pub struct AttentionGrads {
    pub v: Tensor,
    pub q: Tensor,
    pub params: NamedGrads,
}

impl AttentionModule {
    pub fn new(config: AttentionConfig, answers: usize, seed: u64) -> Result<AttentionModule> {
        config.validate()?;
        let inner = config.inner.build()?;
        let outer = config.outer.build()?;
        let glimpse_spec = config.inner.clone().seed(derive_seed(seed, "glimpse"));
        let mut glimpse = ParamSet::new();
        glimpse.insert(
            "p_alpha",
            glimpse_spec.init_weight("p_alpha", config.inner.d_out(), config.glimpses),
        );
        let head = AnswerHead::new(
            HeadKind::for_fusion(config.outer.kind(), config.sigma),
            config.outer.d_out(),
            answers,
            config.outer.dtype,
            derive_seed(seed, "head"),
        )?;
        Ok(AttentionModule {
            config,
            inner,
            glimpse,
            outer,
            head,
        })
    }

    pub fn config(&self) -> &AttentionConfig {
        &self.config
    }

    pub fn inner(&self) -> &dyn Fusion {
        self.inner.as_ref()
    }

    pub fn outer(&self) -> &dyn Fusion {
        self.outer.as_ref()
    }

    pub fn head(&self) -> &AnswerHead {
        &self.head
    }

    pub fn glimpse_params(&self) -> &ParamSet {
        &self.glimpse
    }

    pub fn glimpse_params_mut(&mut self) -> &mut ParamSet {
        &mut self.glimpse
    }

    pub fn head_mut(&mut self) -> &mut AnswerHead {
        &mut self.head
    }

    pub fn param_count(&self) -> u64 {
        self.inner.param_count() + self.glimpse.numel() + self.outer.param_count() + self.head.param_count()
    }

    /// All trainable tensors under qualified names.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (n, t) in self.inner.params().iter() {
            out.push((format!("inner.{n}"), t));
        }
        for (n, t) in self.glimpse.iter() {
            out.push((format!("attn.{n}"), t));
        }
        for (n, t) in self.outer.params().iter() {
            out.push((format!("outer.{n}"), t));
        }
        for (n, t) in self.head.params().iter() {
            out.push((format!("head.{n}"), t));
        }
        out
    }

    pub fn descend(&mut self, grads: &NamedGrads, lr: f64) -> Result<()> {
        descend_prefixed(self.inner.params_mut(), "inner", grads, lr)?;
        descend_prefixed(&mut self.glimpse, "attn", grads, lr)?;
        descend_prefixed(self.outer.params_mut(), "outer", grads, lr)?;
        descend_prefixed(self.head.params_mut(), "head", grads, lr)
    }

    fn check_visual(&self, v: &Tensor, q: &Tensor) -> Result<(usize, usize)> {
        let d_v = self.config.d_v();
        if v.rank() != 3 || v.shape()[2] != d_v {
            return Err(Error::dim(format!(
                "attention: v has shape {:?}, expected [B, G, {d_v}]",
                v.shape()
            )));
        }
        let (b, g) = (v.shape()[0], v.shape()[1]);
        if g == 0 {
            return Err(Error::dim("attention: G must be at least 1"));
        }
        if q.rank() != 2 || q.shape()[0] != b {
            return Err(Error::dim(format!(
                "attention: q has shape {:?}, expected [{b}, d_q]",
                q.shape()
            )));
        }
        Ok((b, g))
    }

    fn attend_cached(&self, v: &Tensor, q: &Tensor) -> Result<(Attended, ForwardCache, ForwardCache)> {
        let (b, g) = self.check_visual(v, q)?;
        let (t, d_v) = (self.config.glimpses, self.config.d_v());
        let rows = v.reshape(&[b * g, d_v])?;
        let q_tiled = q.tile_rows(g)?;
        let (z, inner_cache) = self.inner.forward(&rows, &q_tiled)?;
        let s = z.activate(self.config.sigma);
        let logits = s.matmul(self.glimpse.get("p_alpha")?)?;
        let logits = logits.reshape(&[b, g, t])?.swap_last_two()?;
        let alpha = logits.softmax(2)?;
        let v_att = alpha.bmm(v)?.reshape(&[b, t * d_v])?;
        let glimpse_cache = ForwardCache::new(&self.glimpse, &alpha, vec![z, s, alpha.clone()]);
        Ok((Attended { alpha, v_att }, inner_cache, glimpse_cache))
    }

    /// Stage one and the glimpse pooling: `v: B×G×d_v`, `q: B×d_q`.
    pub fn attend(&self, v: &Tensor, q: &Tensor) -> Result<Attended> {
        self.attend_cached(v, q).map(|(a, _, _)| a)
    }

    /// Stage two and the answer head: raw logits `B×|A|`.
    pub fn classify(&self, v_att: &Tensor, q: &Tensor) -> Result<Tensor> {
        let z = self.outer.apply(v_att, q)?;
        self.head.forward(&z).map(|(l, _)| l)
    }

    /// Full attended forward pass with everything needed for backward.
    pub fn forward(&self, v: &Tensor, q: &Tensor) -> Result<(Tensor, AttentionCache)> {
        let (att, inner, glimpse) = self.attend_cached(v, q)?;
        let (z, outer) = self.outer.forward(&att.v_att, q)?;
        let (logits, head) = self.head.forward(&z)?;
        Ok((
            logits,
            AttentionCache {
                locations: v.shape()[1],
                v: v.clone(),
                inner,
                glimpse,
                outer,
                head,
            },
        ))
    }

    pub fn backward(&self, cache: &AttentionCache, g: &Tensor) -> Result<AttentionGrads> {
        let (t, d_v, gl) = (self.config.glimpses, self.config.d_v(), cache.locations);
        let b = cache.v.shape()[0];
        let mut params = NamedGrads::new();

        let (dz_out, head_grads) = self.head.backward(&cache.head, g)?;
        let FusionGrads {
            v: dv_att,
            q: dq_outer,
            params: outer_grads,
        } = self.outer.backward(&cache.outer, &dz_out)?;

        let [z, s, alpha] = &cache.glimpse.saved[..] else {
            unreachable!("glimpse cache layout")
        };
        cache.glimpse.check(&self.glimpse, alpha)?;
        let dv_att = dv_att.reshape(&[b, t, d_v])?;
        let dalpha = dv_att.bmm(&cache.v.swap_last_two()?)?;
        let dv_pool = alpha.swap_last_two()?.bmm(&dv_att)?;
        let dlogits = Tensor::softmax_backward_last(alpha, &dalpha)?
            .swap_last_two()?
            .reshape(&[b * gl, t])?;
        let p_alpha = self.glimpse.get("p_alpha")?;
        let mut glimpse_grads = IndexMap::new();
        glimpse_grads.insert("p_alpha".to_string(), s.transpose()?.matmul(&dlogits)?);
        let ds = dlogits.matmul(&p_alpha.transpose()?)?;
        let dz_in = Tensor::activation_backward(self.config.sigma, z, s, &ds)?;
        let FusionGrads {
            v: dv_rows,
            q: dq_tiled,
            params: inner_grads,
        } = self.inner.backward(&cache.inner, &dz_in)?;

        let dv = dv_pool.add(&dv_rows.reshape(&[b, gl, d_v])?)?;
        let dq = dq_outer.add(&dq_tiled.sum_row_groups(gl)?)?;

        prefixed("inner", inner_grads, &mut params);
        prefixed("attn", glimpse_grads, &mut params);
        prefixed("outer", outer_grads, &mut params);
        prefixed("head", head_grads, &mut params);
        Ok(AttentionGrads { v: dv, q: dq, params })
    }
}
