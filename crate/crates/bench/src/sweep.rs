//! Complexity sweeps over the (profile, fusion, attention) grid.

use std::collections::HashSet;

use log::{info, warn};
use vqa_fusion::assembly::{AttentionMode, FeatureKind, FeatureProfile, ModelSpec, ANSWERS_VQA};
use vqa_fusion::complexity::{time_forward, ComplexityReport, FlopConvention, TimingProtocol};
use vqa_fusion::fusion::FusionKind;
use vqa_fusion::DType;

use crate::error::{BenchError, Result};
use crate::key::ConfigKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionChoice {
    None,
    Co,
    Both,
}

impl AttentionChoice {
    pub fn modes(self) -> &'static [AttentionMode] {
        match self {
            AttentionChoice::None => &[AttentionMode::None],
            AttentionChoice::Co => &[AttentionMode::Co],
            AttentionChoice::Both => &AttentionMode::ALL,
        }
    }
}

impl std::str::FromStr for AttentionChoice {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(AttentionChoice::None),
            "co" => Ok(AttentionChoice::Co),
            "both" => Ok(AttentionChoice::Both),
            _ => Err(BenchError::Config(format!("unknown attention choice '{s}' (valid: none, co, both)"))),
        }
    }
}

/// Every catalog profile: each grid backbone as IL and SG, then BU.
pub fn all_profiles() -> Vec<FeatureProfile> {
    let mut out = Vec::new();
    for p in FeatureProfile::catalog() {
        if let Ok(il) = p.image_level() {
            out.push(il);
        }
        out.push(p);
    }
    out
}

/// Comma-separated profile names, or `all`, `spatial` (SG and BU) or
/// `image-level`.
pub fn parse_profiles(list: &str) -> Result<Vec<FeatureProfile>> {
    let mut out = Vec::new();
    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match item.to_ascii_lowercase().as_str() {
            "all" => out.extend(all_profiles()),
            "spatial" => out.extend(FeatureProfile::catalog()),
            "image-level" | "il" => out.extend(FeatureProfile::image_level_catalog()),
            _ => out.push(FeatureProfile::parse(item)?),
        }
    }
    Ok(out)
}

/// Comma-separated fusion names, or `all`.
pub fn parse_fusions(list: &str) -> Result<Vec<FusionKind>> {
    let mut out = Vec::new();
    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if item.eq_ignore_ascii_case("all") {
            out.extend(FusionKind::ALL);
        } else {
            out.push(item.parse()?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub profiles: Vec<FeatureProfile>,
    pub fusions: Vec<FusionKind>,
    pub attention: AttentionChoice,
    pub answers: usize,
    pub dtype: DType,
    pub seed: u64,
    pub convention: FlopConvention,
    /// Forward passes are only timed when set.
    pub timing: Option<TimingProtocol>,
}

impl SweepConfig {
    pub fn new(profiles: Vec<FeatureProfile>, fusions: Vec<FusionKind>, attention: AttentionChoice) -> SweepConfig {
        SweepConfig {
            profiles,
            fusions,
            attention,
            answers: ANSWERS_VQA,
            dtype: DType::F64,
            seed: 0,
            convention: FlopConvention::MAC2,
            timing: None,
        }
    }

    /// All profiles, all fusions, both attention modes.
    pub fn full_grid() -> SweepConfig {
        SweepConfig::new(all_profiles(), FusionKind::ALL.to_vec(), AttentionChoice::Both)
    }

    pub fn validate(&self) -> Result<()> {
        if self.profiles.is_empty() || self.fusions.is_empty() {
            return Err(BenchError::Config("a sweep needs at least one profile and one fusion".into()));
        }
        if self.answers == 0 {
            return Err(BenchError::Config("answer set must be non-empty".into()));
        }
        if let Some(t) = &self.timing {
            t.validate()?;
        }
        Ok(())
    }

    /// The legal model specs in grid order, plus one notice per profile
    /// whose co-attention variants were skipped. Repeated entries are dropped.
    pub fn specs(&self) -> Result<(Vec<ModelSpec>, Vec<String>)> {
        self.validate()?;
        let mut specs = Vec::new();
        let mut skipped = Vec::new();
        let mut seen = HashSet::new();
        for profile in &self.profiles {
            let attendable = profile.kind != FeatureKind::IL;
            if !attendable && self.attention.modes().contains(&AttentionMode::Co) {
                let notice = format!(
                    "co-attention for {}: image-level features have a single location",
                    profile.id()
                );
                if !skipped.contains(&notice) {
                    skipped.push(notice);
                }
            }
            for &kind in &self.fusions {
                for &mode in self.attention.modes() {
                    if !attendable && mode == AttentionMode::Co {
                        continue;
                    }
                    let spec = ModelSpec::new(profile.clone(), kind, mode, self.answers)
                        .dtype(self.dtype)
                        .seed(self.seed);
                    if seen.insert(spec.config_id()) {
                        specs.push(spec);
                    }
                }
            }
        }
        Ok((specs, skipped))
    }
}

/// One counted configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub key: ConfigKey,
    pub report: ComplexityReport,
}

/// Counts every legal configuration of `cfg` in closed form, timing each
/// forward pass when requested. Skipped combinations are logged. Records
/// come back sorted by config key.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRecord>> {
    let (specs, skipped) = cfg.specs()?;
    for s in &skipped {
        warn!("skipping {s}");
    }
    let batch = cfg.timing.map_or(1, |t| t.batch);
    let mut records = Vec::with_capacity(specs.len());
    for spec in &specs {
        let wall = match &cfg.timing {
            Some(protocol) => {
                info!("timing {}", spec.config_id());
                let model = spec.build()?;
                Some(time_forward(&model, protocol)?)
            }
            None => None,
        };
        let report = ComplexityReport::for_spec(spec, &cfg.convention, batch, wall)?;
        records.push(SweepRecord {
            key: ConfigKey::of_spec(spec),
            report,
        });
    }
    records.sort_by_key(|r| r.report.config_id.clone());
    Ok(records)
}
