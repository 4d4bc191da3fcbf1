use std::fmt;

use serde::{Deserialize, Serialize};

use super::{FeatureKind, FeatureProfile, SyntheticBatch};
use crate::attention::{
    descend_prefixed, AnswerHead, AttentionCache, AttentionConfig, AttentionModule, HeadCache, HeadKind,
    NamedGrads,
};
use crate::complexity::FlopConvention;
use crate::error::{Error, Result};
use crate::fusion::{ForwardCache, Fusion, FusionKind, FusionSpec, Hyper};
use crate::rng::derive_seed;
use crate::tensor::{Activation, DType, Tensor};

/// Whether visual features go through co-attention before the final fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    /// Fuse (location-averaged) features directly.
    None,
    /// Two-stage co-attention.
    Co,
}

impl AttentionMode {
    pub const ALL: [AttentionMode; 2] = [AttentionMode::None, AttentionMode::Co];

    pub fn name(self) -> &'static str {
        match self {
            AttentionMode::None => "none",
            AttentionMode::Co => "co",
        }
    }
}

impl fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AttentionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "no" | "off" => Ok(AttentionMode::None),
            "co" | "coatt" | "co-attention" => Ok(AttentionMode::Co),
            _ => Err(Error::config(format!("unknown attention mode '{s}' (valid: none, co)"))),
        }
    }
}

/// Output width of a Linear or C-MLP stage that feeds another layer rather
/// than the answer space.
fn intermediate_width(h: &Hyper) -> usize {
    match *h {
        Hyper::Linear { inter, .. } => inter,
        Hyper::Cmlp { hidden, .. } => hidden,
        _ => h.d_out(),
    }
}

fn with_d_out(h: Hyper, width: usize) -> Hyper {
    match h {
        Hyper::Linear { inter, .. } => Hyper::Linear { inter, d_out: width },
        Hyper::Cmlp { hidden, .. } => Hyper::Cmlp { hidden, d_out: width },
        other => other,
    }
}

/// Everything needed to build, count or time one end-to-end model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub profile: FeatureProfile,
    pub kind: FusionKind,
    pub attention: AttentionMode,
    pub answers: usize,
    /// Overrides the default hyperparameters of every fusion stage. For
    /// Linear and C-MLP the output width is set per stage.
    pub hyper: Option<Hyper>,
    pub sigma: Activation,
    pub glimpses: usize,
    pub dtype: DType,
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(profile: FeatureProfile, kind: FusionKind, attention: AttentionMode, answers: usize) -> ModelSpec {
        ModelSpec {
            profile,
            kind,
            attention,
            answers,
            hyper: None,
            sigma: Activation::Tanh,
            glimpses: 2,
            dtype: DType::F64,
            seed: 0,
        }
    }

    pub fn with_hyper(mut self, hyper: Hyper) -> ModelSpec {
        self.hyper = Some(hyper);
        self
    }

    pub fn dtype(mut self, dtype: DType) -> ModelSpec {
        self.dtype = dtype;
        self
    }

    pub fn seed(mut self, seed: u64) -> ModelSpec {
        self.seed = seed;
        self
    }

    /// `profile/fusion/attention`, e.g. `ResNet152:SG/mfh/co`.
    pub fn config_id(&self) -> String {
        format!("{}/{}/{}", self.profile.id(), self.kind.name(), self.attention)
    }

    fn base_hyper(&self) -> Result<Hyper> {
        match self.hyper {
            Some(h) if h.kind() != self.kind => Err(Error::config(format!(
                "hyperparameters for {} given to a {} model",
                h.kind().label(),
                self.kind.label()
            ))),
            Some(h) => Ok(h),
            None => Ok(Hyper::defaults(self.kind, self.answers)),
        }
    }

    /// The fusion of the direct path (its last stage emits the answer width
    /// for Linear and C-MLP).
    pub fn fusion_spec(&self) -> Result<FusionSpec> {
        let h = with_d_out(self.base_hyper()?, self.answers);
        Ok(FusionSpec::with_hyper(self.profile.d_v, self.profile.d_q, h)
            .dtype(self.dtype)
            .seed(derive_seed(self.seed, "fusion")))
    }

    pub fn attention_config(&self) -> Result<AttentionConfig> {
        let base = self.base_hyper()?;
        let (d_v, d_q, t) = (self.profile.d_v, self.profile.d_q, self.glimpses);
        let inner = FusionSpec::with_hyper(d_v, d_q, with_d_out(base, intermediate_width(&base)));
        let outer = FusionSpec::with_hyper(t * d_v, d_q, with_d_out(base, self.answers));
        let cfg = AttentionConfig {
            glimpses: t,
            sigma: self.sigma,
            inner,
            outer,
        };
        Ok(cfg.with_seed_and_dtype(derive_seed(self.seed, "attention"), self.dtype))
    }

    fn head_kind(&self) -> HeadKind {
        HeadKind::for_fusion(self.kind, self.sigma)
    }

    pub fn validate(&self) -> Result<()> {
        if self.answers == 0 {
            return Err(Error::config("answer set must be non-empty"));
        }
        match self.attention {
            AttentionMode::Co if self.profile.kind == FeatureKind::IL => Err(Error::config(format!(
                "{}: image-level features have no spatial layout to attend over",
                self.config_id()
            ))),
            AttentionMode::Co => self.attention_config()?.validate(),
            AttentionMode::None => self.fusion_spec()?.validate(),
        }
    }

    /// Closed-form trainable parameters (fusion stages, glimpse projection
    /// and answer head).
    pub fn param_count(&self) -> Result<u64> {
        self.validate()?;
        Ok(match self.attention {
            AttentionMode::None => {
                let f = self.fusion_spec()?;
                f.param_count() + AnswerHead::closed_form_params(self.head_kind(), f.d_out(), self.answers)
            }
            AttentionMode::Co => {
                let a = self.attention_config()?;
                a.param_count() + AnswerHead::closed_form_params(self.head_kind(), a.outer.d_out(), self.answers)
            }
        })
    }

    /// Closed-form forward FLOPs for a batch of `batch` samples.
    pub fn flop_count(&self, conv: &FlopConvention, batch: u64) -> Result<u64> {
        self.validate()?;
        let g = self.profile.locations;
        let per_sample = match self.attention {
            AttentionMode::None => {
                let f = self.fusion_spec()?;
                let pool = if g > 1 {
                    conv.elementwise((g * self.profile.d_v) as u64)
                } else {
                    0
                };
                pool + f.flop_count(conv, 1)
                    + AnswerHead::closed_form_flops(self.head_kind(), f.d_out(), self.answers, conv)
            }
            AttentionMode::Co => {
                let a = self.attention_config()?;
                a.flop_count(g, conv)
                    + AnswerHead::closed_form_flops(self.head_kind(), a.outer.d_out(), self.answers, conv)
            }
        };
        Ok(per_sample * batch)
    }

    pub fn build(&self) -> Result<VqaModel> {
        self.validate()?;
        let path = match self.attention {
            AttentionMode::None => {
                let spec = self.fusion_spec()?;
                let fusion = spec.build()?;
                let head = AnswerHead::new(
                    self.head_kind(),
                    spec.d_out(),
                    self.answers,
                    self.dtype,
                    derive_seed(self.seed, "head"),
                )?;
                Path::Direct { fusion, head }
            }
            AttentionMode::Co => Path::Attention(Box::new(AttentionModule::new(
                self.attention_config()?,
                self.answers,
                derive_seed(self.seed, "attention"),
            )?)),
        };
        Ok(VqaModel {
            spec: self.clone(),
            path,
        })
    }
}

#[derive(Debug)]
enum Path {
    Direct { fusion: Box<dyn Fusion>, head: AnswerHead },
    Attention(Box<AttentionModule>),
}

/// Activations of [`VqaModel::forward`], consumed by [`VqaModel::backward`].
#[derive(Debug)]
pub struct ModelCache(CacheKind);

#[derive(Debug)]
enum CacheKind {
    Direct { fusion: ForwardCache, head: HeadCache },
    Attention(Box<AttentionCache>),
}

/// End-to-end model: visual features and question in, answer logits out.
#[derive(Debug)]
pub struct VqaModel {
    spec: ModelSpec,
    path: Path,
}

impl VqaModel {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn attention(&self) -> Option<&AttentionModule> {
        match &self.path {
            Path::Attention(a) => Some(a),
            Path::Direct { .. } => None,
        }
    }

    pub fn fusion(&self) -> Option<&dyn Fusion> {
        match &self.path {
            Path::Direct { fusion, .. } => Some(fusion.as_ref()),
            Path::Attention(_) => None,
        }
    }

    /// Exact number of trainable scalars in the built model.
    pub fn param_count(&self) -> u64 {
        match &self.path {
            Path::Direct { fusion, head } => fusion.param_count() + head.param_count(),
            Path::Attention(a) => a.param_count(),
        }
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        match &self.path {
            Path::Direct { fusion, head } => fusion
                .params()
                .iter()
                .map(|(n, t)| (format!("fusion.{n}"), t))
                .chain(head.params().iter().map(|(n, t)| (format!("head.{n}"), t)))
                .collect(),
            Path::Attention(a) => a.named_params(),
        }
    }

    /// `p -= lr·g` for every parameter named in `grads`.
    pub fn descend(&mut self, grads: &NamedGrads, lr: f64) -> Result<()> {
        match &mut self.path {
            Path::Direct { fusion, head } => {
                descend_prefixed(fusion.params_mut(), "fusion", grads, lr)?;
                descend_prefixed(head.params_mut(), "head", grads, lr)
            }
            Path::Attention(a) => a.descend(grads, lr),
        }
    }

    fn check_features(&self, v: &Tensor, q: &Tensor) -> Result<()> {
        let p = &self.spec.profile;
        let want = [v.shape().first().copied().unwrap_or(0), p.locations, p.d_v];
        if v.rank() != 3 || v.shape() != want {
            return Err(Error::dim(format!(
                "{}: v has shape {:?}, expected [B, {}, {}]",
                self.spec.config_id(),
                v.shape(),
                p.locations,
                p.d_v
            )));
        }
        if q.shape() != [want[0], p.d_q] {
            return Err(Error::dim(format!(
                "{}: q has shape {:?}, expected [{}, {}]",
                self.spec.config_id(),
                q.shape(),
                want[0],
                p.d_q
            )));
        }
        Ok(())
    }

    /// Raw answer logits `B×|A|` for `v: B×G×d_v`, `q: B×d_q`.
    pub fn forward(&self, v: &Tensor, q: &Tensor) -> Result<(Tensor, ModelCache)> {
        self.check_features(v, q)?;
        match &self.path {
            Path::Direct { fusion, head } => {
                let pooled = if v.shape()[1] == 1 {
                    v.reshape(&[v.shape()[0], v.shape()[2]])?
                } else {
                    v.mean_axis1()?
                };
                let (z, fc) = fusion.forward(&pooled, q)?;
                let (logits, hc) = head.forward(&z)?;
                Ok((logits, ModelCache(CacheKind::Direct { fusion: fc, head: hc })))
            }
            Path::Attention(a) => {
                let (logits, c) = a.forward(v, q)?;
                Ok((logits, ModelCache(CacheKind::Attention(Box::new(c)))))
            }
        }
    }

    pub fn logits(&self, batch: &SyntheticBatch) -> Result<Tensor> {
        self.check_batch(batch)?;
        self.forward(&batch.v, &batch.q).map(|(l, _)| l)
    }

    fn check_batch(&self, batch: &SyntheticBatch) -> Result<()> {
        if batch.profile != self.spec.profile {
            return Err(Error::config(format!(
                "batch profile {} does not match model profile {}",
                batch.profile.id(),
                self.spec.profile.id()
            )));
        }
        Ok(())
    }

    /// Parameter gradients for upstream gradient `g` on the logits.
    pub fn backward(&self, cache: &ModelCache, g: &Tensor) -> Result<NamedGrads> {
        match (&self.path, &cache.0) {
            (Path::Direct { fusion, head }, CacheKind::Direct { fusion: fc, head: hc }) => {
                let (dz, head_grads) = head.backward(hc, g)?;
                let fg = fusion.backward(fc, &dz)?;
                let mut out = NamedGrads::new();
                for (n, t) in fg.params {
                    out.insert(format!("fusion.{n}"), t);
                }
                for (n, t) in head_grads {
                    out.insert(format!("head.{n}"), t);
                }
                Ok(out)
            }
            (Path::Attention(a), CacheKind::Attention(c)) => Ok(a.backward(c, g)?.params),
            _ => Err(Error::State("cache was produced by a different model path".into())),
        }
    }

    /// Highest-scoring answer per sample.
    pub fn predict(&self, batch: &SyntheticBatch) -> Result<Vec<usize>> {
        argmax_rows(&self.logits(batch)?)
    }
}

/// Index of the largest entry in each row of a matrix; ties go to the lowest
/// index. A row containing NaN yields the index of its first NaN.
pub fn argmax_rows(logits: &Tensor) -> Result<Vec<usize>> {
    if logits.rank() != 2 || logits.shape()[1] == 0 {
        return Err(Error::dim(format!(
            "argmax_rows: expected a non-empty B×|A| matrix, got {:?}",
            logits.shape()
        )));
    }
    let n = logits.shape()[1];
    Ok(logits
        .to_vec()
        .chunks_exact(n)
        .map(|row| {
            let mut best = 0;
            for (i, &x) in row.iter().enumerate() {
                if x.is_nan() {
                    return i;
                }
                if x > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect())
}
