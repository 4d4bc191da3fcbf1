//! Low-rank bilinear pooling: Hadamard product of two projections.

use indexmap::IndexMap;

use super::{project_backward, ForwardCache, Fusion, FusionFactory, FusionGrads, FusionSpec, Hyper, ParamSet};
use crate::complexity::FlopConvention;
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug)]
pub struct Mlb {
    spec: FusionSpec,
    params: ParamSet,
}

fn d_z(spec: &FusionSpec) -> usize {
    match spec.hyper {
        Hyper::Mlb { d_z } => d_z,
        _ => unreachable!("MLB built from a non-MLB spec"),
    }
}

impl Mlb {
    pub fn new(spec: &FusionSpec) -> Mlb {
        let dz = d_z(spec);
        let mut params = ParamSet::new();
        params.insert("p_v", spec.init_weight("p_v", spec.d_v, dz));
        params.insert("p_q", spec.init_weight("p_q", spec.d_q, dz));
        Mlb {
            spec: spec.clone(),
            params,
        }
    }
}

impl Fusion for Mlb {
    fn spec(&self) -> &FusionSpec {
        &self.spec
    }

    fn forward(&self, v: &Tensor, q: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.spec.check_inputs(v, q)?;
        let a = v.matmul(self.params.get("p_v")?)?;
        let b = q.matmul(self.params.get("p_q")?)?;
        let out = a.mul(&b)?;
        let cache = ForwardCache::new(&self.params, &out, vec![v.clone(), q.clone(), a, b]);
        Ok((out, cache))
    }

    fn backward(&self, cache: &ForwardCache, g: &Tensor) -> Result<FusionGrads> {
        cache.check(&self.params, g)?;
        let [v, q, a, b] = &cache.saved[..] else {
            unreachable!("MLB cache layout")
        };
        let (dv, dp_v) = project_backward(v, self.params.get("p_v")?, &g.mul(b)?)?;
        let (dq, dp_q) = project_backward(q, self.params.get("p_q")?, &g.mul(a)?)?;
        let mut params = IndexMap::new();
        params.insert("p_v".into(), dp_v);
        params.insert("p_q".into(), dp_q);
        Ok(FusionGrads { v: dv, q: dq, params })
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }
}

pub(super) struct Factory;

impl FusionFactory for Factory {
    fn name(&self) -> &'static str {
        "mlb"
    }

    fn build(&self, spec: &FusionSpec) -> Result<Box<dyn Fusion>> {
        Ok(Box::new(Mlb::new(spec)))
    }

    fn param_count(&self, spec: &FusionSpec) -> u64 {
        let dz = d_z(spec) as u64;
        (spec.d_v as u64 + spec.d_q as u64) * dz
    }

    fn flop_count(&self, spec: &FusionSpec, c: &FlopConvention) -> u64 {
        let dz = d_z(spec) as u64;
        c.matmul(1, spec.d_v as u64, dz) + c.matmul(1, spec.d_q as u64, dz) + c.elementwise(dz)
    }
}
