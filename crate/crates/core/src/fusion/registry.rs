use std::sync::OnceLock;

use indexmap::IndexMap;

use super::{block, cmlp, linear, mcb, mfb, mfh, mlb, mutan};
use super::{Fusion, FusionSpec};
use crate::complexity::FlopConvention;
use crate::error::{Error, Result};

/// Builds one operator family and knows its closed-form costs.
pub trait FusionFactory: Send + Sync {
    fn name(&self) -> &'static str;

    /// Expects a spec that has already been validated.
    fn build(&self, spec: &FusionSpec) -> Result<Box<dyn Fusion>>;

    fn param_count(&self, spec: &FusionSpec) -> u64;

    /// Forward FLOPs for one sample.
    fn flop_count(&self, spec: &FusionSpec, conv: &FlopConvention) -> u64;
}

/// Name → factory table used to select operators at runtime.
pub struct FusionRegistry {
    factories: IndexMap<String, Box<dyn FusionFactory>>,
}

impl FusionRegistry {
    pub fn empty() -> FusionRegistry {
        FusionRegistry {
            factories: IndexMap::new(),
        }
    }

    /// All eight built-in operators.
    pub fn builtin() -> FusionRegistry {
        let mut r = FusionRegistry::empty();
        r.register(Box::new(linear::Factory));
        r.register(Box::new(cmlp::Factory));
        r.register(Box::new(mcb::Factory));
        r.register(Box::new(mlb::Factory));
        r.register(Box::new(mfb::Factory));
        r.register(Box::new(mfh::Factory));
        r.register(Box::new(mutan::Factory));
        r.register(Box::new(block::Factory));
        r
    }

    pub fn global() -> &'static FusionRegistry {
        static GLOBAL: OnceLock<FusionRegistry> = OnceLock::new();
        GLOBAL.get_or_init(FusionRegistry::builtin)
    }

    /// Registers a factory under its own name, replacing any previous one.
    pub fn register(&mut self, factory: Box<dyn FusionFactory>) {
        self.factories.insert(factory.name().to_string(), factory);
    }

    pub fn get(&self, name: &str) -> Result<&dyn FusionFactory> {
        self.factories
            .get(&name.to_ascii_lowercase())
            .map(|f| f.as_ref())
            .ok_or_else(|| {
                Error::config(format!(
                    "no fusion registered as '{name}' (valid: {})",
                    self.names().collect::<Vec<_>>().join(", ")
                ))
            })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }
}
