use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};
use crate::tensor::{DType, Tensor};

/// How visual features are laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureKind {
    /// One global vector per image.
    IL,
    /// A regular grid of CNN cells.
    SG,
    /// Detector region features.
    BU,
}

impl FeatureKind {
    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::IL => "IL",
            FeatureKind::SG => "SG",
            FeatureKind::BU => "BU",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "IL" => Ok(FeatureKind::IL),
            "SG" => Ok(FeatureKind::SG),
            "BU" => Ok(FeatureKind::BU),
            _ => Err(Error::config(format!("unknown feature kind '{s}' (valid: IL, SG, BU)"))),
        }
    }
}

/// Shape of the synthetic visual and question features fed to a model.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureProfile {
    pub name: String,
    pub kind: FeatureKind,
    pub d_v: usize,
    /// Number of visual locations `G` (1 for IL).
    pub locations: usize,
    pub d_q: usize,
}

/// Question embedding width used by every catalog profile.
pub const D_Q: usize = 2400;

/// `(name, d_v, spatial locations)` of the catalog backbones. The bottom-up
/// entry has no image-level variant.
const BACKBONES: [(&str, usize, usize); 6] = [
    ("InceptionV4", 1536, 12 * 12),
    ("ResNet152", 2048, 14 * 14),
    ("ResNext101", 2048, 14 * 14),
    ("SeNet154", 2048, 14 * 14),
    ("PolyNet", 2048, 12 * 12),
    ("BU", 2048, 36),
];

impl FeatureProfile {
    /// A profile with arbitrary dimensions. `IL` forces `locations == 1`.
    pub fn custom(name: &str, kind: FeatureKind, d_v: usize, locations: usize, d_q: usize) -> Result<Self> {
        if d_v == 0 || d_q == 0 || locations == 0 {
            return Err(Error::config(format!(
                "profile {name}: d_v, d_q and G must be positive (got {d_v}, {d_q}, {locations})"
            )));
        }
        if kind == FeatureKind::IL && locations != 1 {
            return Err(Error::config(format!(
                "profile {name}: image-level features have exactly one location, got {locations}"
            )));
        }
        Ok(FeatureProfile {
            name: name.to_string(),
            kind,
            d_v,
            locations,
            d_q,
        })
    }

    /// The six spatial profiles: five grid backbones and bottom-up regions.
    pub fn catalog() -> Vec<FeatureProfile> {
        BACKBONES
            .iter()
            .map(|&(name, d_v, g)| {
                let kind = if name == "BU" { FeatureKind::BU } else { FeatureKind::SG };
                FeatureProfile::custom(name, kind, d_v, g, D_Q).expect("catalog dims are valid")
            })
            .collect()
    }

    /// Image-level variants of the five grid backbones.
    pub fn image_level_catalog() -> Vec<FeatureProfile> {
        FeatureProfile::catalog()
            .into_iter()
            .filter_map(|p| p.image_level().ok())
            .collect()
    }

    /// Looks up a catalog backbone (case-insensitive) in the given layout.
    pub fn lookup(name: &str, kind: FeatureKind) -> Result<FeatureProfile> {
        let &(canon, d_v, g) = BACKBONES
            .iter()
            .find(|(n, _, _)| n.eq_ignore_ascii_case(name))
            .ok_or_else(|| {
                let names: Vec<&str> = BACKBONES.iter().map(|b| b.0).collect();
                Error::config(format!("unknown feature profile '{name}' (valid: {})", names.join(", ")))
            })?;
        match (canon, kind) {
            ("BU", FeatureKind::BU) => FeatureProfile::custom(canon, kind, d_v, g, D_Q),
            ("BU", _) => Err(Error::config("BU features only exist as region features")),
            (_, FeatureKind::BU) => Err(Error::config(format!("{canon} has no bottom-up variant"))),
            (_, FeatureKind::SG) => FeatureProfile::custom(canon, kind, d_v, g, D_Q),
            (_, FeatureKind::IL) => FeatureProfile::custom(canon, kind, d_v, 1, D_Q),
        }
    }

    /// Parses `Name`, `Name:KIND` or `Name-KIND` (`ResNet152`,
    /// `resnet152:il`, `InceptionV4-IL`, `BU`). A bare name means the spatial
    /// layout.
    pub fn parse(s: &str) -> Result<FeatureProfile> {
        let split = s.split_once(':').or_else(|| {
            s.rsplit_once('-')
                .filter(|(_, k)| k.parse::<FeatureKind>().is_ok())
        });
        match split {
            Some((name, kind)) => FeatureProfile::lookup(name, kind.parse()?),
            None if s.eq_ignore_ascii_case("BU") => FeatureProfile::lookup(s, FeatureKind::BU),
            None => FeatureProfile::lookup(s, FeatureKind::SG),
        }
    }

    /// Same backbone with one pooled location.
    pub fn image_level(&self) -> Result<FeatureProfile> {
        if self.kind == FeatureKind::BU {
            return Err(Error::config("BU features have no image-level variant"));
        }
        FeatureProfile::custom(&self.name, FeatureKind::IL, self.d_v, 1, self.d_q)
    }

    pub fn with_d_q(mut self, d_q: usize) -> Result<FeatureProfile> {
        if d_q == 0 {
            return Err(Error::config("d_q must be positive"));
        }
        self.d_q = d_q;
        Ok(self)
    }

    /// `Name:KIND`, accepted back by [`FeatureProfile::parse`].
    pub fn id(&self) -> String {
        format!("{}:{}", self.name, self.kind)
    }
}

impl fmt::Display for FeatureProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({}×{}, d_q {})", self.id(), self.locations, self.d_v, self.d_q)
    }
}

/// Synthetic features and answer labels for one mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBatch {
    pub profile: FeatureProfile,
    /// `B×G×d_v`.
    pub v: Tensor,
    /// `B×d_q`.
    pub q: Tensor,
    pub labels: Vec<usize>,
    pub answers: usize,
    pub planted: bool,
}

impl SyntheticBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Rank of the hidden labelling map.
const PLANT_RANK: usize = 8;

/// Draws standard-normal features. With `planted`, each label is the argmax
/// of a fixed low-rank linear map of `[√G·mean_G(v), q]`; the map depends
/// only on the profile and `answers`, so every batch of a profile shares it.
/// Otherwise labels are uniform.
pub fn synth_batch(
    profile: &FeatureProfile,
    batch: usize,
    seed: u64,
    answers: usize,
    planted: bool,
    dtype: DType,
) -> Result<SyntheticBatch> {
    if batch == 0 {
        return Err(Error::config("synthetic batch size must be at least 1"));
    }
    if answers == 0 {
        return Err(Error::config("answer set must be non-empty"));
    }
    let (g, d_v, d_q) = (profile.locations, profile.d_v, profile.d_q);
    let mut rng = Rng::new(derive_seed(seed, &format!("batch:{}", profile.id())));
    let v = Tensor::randn(&[batch, g, d_v], DType::F64, &mut rng);
    let q = Tensor::randn(&[batch, d_q], DType::F64, &mut rng);

    let labels = if planted {
        let pooled = v.mean_axis1()?.scale((g as f64).sqrt());
        let x = Tensor::concat_last(&[&pooled, &q])?;
        let mut plant_rng = Rng::new(derive_seed(
            0x5eed_ab1e,
            &format!("plant:{}:{}:{}:{answers}", profile.name, d_v, d_q),
        ));
        let reduce = Tensor::randn(&[d_v + d_q, PLANT_RANK], DType::F64, &mut plant_rng);
        let spread = Tensor::randn(&[PLANT_RANK, answers], DType::F64, &mut plant_rng);
        let scores = x.matmul(&reduce)?.matmul(&spread)?;
        super::argmax_rows(&scores)?
    } else {
        (0..batch).map(|_| rng.below(answers)).collect()
    };

    Ok(SyntheticBatch {
        profile: profile.clone(),
        v: v.cast(dtype),
        q: q.cast(dtype),
        labels,
        answers,
        planted,
    })
}
