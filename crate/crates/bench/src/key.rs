use std::fmt;

use serde::{Deserialize, Serialize};
use vqa_fusion::assembly::{AttentionMode, FeatureKind, ModelSpec};
use vqa_fusion::fusion::FusionKind;

/// Identity of one model configuration, shared by sweep reports and
/// accuracy fixtures. Displays as `ResNet152:SG/mfh/co`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfigKey {
    pub feature: String,
    pub feature_kind: FeatureKind,
    pub fusion: FusionKind,
    pub attention: AttentionMode,
}

impl ConfigKey {
    pub fn of_spec(spec: &ModelSpec) -> ConfigKey {
        ConfigKey {
            feature: spec.profile.name.clone(),
            feature_kind: spec.profile.kind,
            fusion: spec.kind,
            attention: spec.attention,
        }
    }
}

impl fmt::Display for ConfigKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}/{}/{}",
            self.feature,
            self.feature_kind,
            self.fusion.name(),
            self.attention
        )
    }
}
