//! Factorized bilinear pooling: expand to `k·d_z`, multiply, sum-pool by `k`.

use indexmap::IndexMap;

use super::{project_backward, ForwardCache, Fusion, FusionFactory, FusionGrads, FusionSpec, Hyper, ParamSet};
use crate::complexity::FlopConvention;
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug)]
pub struct Mfb {
    spec: FusionSpec,
    params: ParamSet,
}

fn dims(spec: &FusionSpec) -> (usize, usize) {
    match spec.hyper {
        Hyper::Mfb { k, d_z } => (k, d_z),
        _ => unreachable!("MFB built from a non-MFB spec"),
    }
}

impl Mfb {
    pub fn new(spec: &FusionSpec) -> Mfb {
        let (k, dz) = dims(spec);
        let mut params = ParamSet::new();
        params.insert("p_v", spec.init_weight("p_v", spec.d_v, k * dz));
        params.insert("p_q", spec.init_weight("p_q", spec.d_q, k * dz));
        Mfb {
            spec: spec.clone(),
            params,
        }
    }
}

impl Fusion for Mfb {
    fn spec(&self) -> &FusionSpec {
        &self.spec
    }

    fn forward(&self, v: &Tensor, q: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.spec.check_inputs(v, q)?;
        let (k, _) = dims(&self.spec);
        let a = v.matmul(self.params.get("p_v")?)?;
        let b = q.matmul(self.params.get("p_q")?)?;
        let out = a.mul(&b)?.sum_pool_1d(k)?;
        let cache = ForwardCache::new(&self.params, &out, vec![v.clone(), q.clone(), a, b]);
        Ok((out, cache))
    }

    fn backward(&self, cache: &ForwardCache, g: &Tensor) -> Result<FusionGrads> {
        cache.check(&self.params, g)?;
        let (k, _) = dims(&self.spec);
        let [v, q, a, b] = &cache.saved[..] else {
            unreachable!("MFB cache layout")
        };
        let ge = g.repeat_last(k)?;
        let (dv, dp_v) = project_backward(v, self.params.get("p_v")?, &ge.mul(b)?)?;
        let (dq, dp_q) = project_backward(q, self.params.get("p_q")?, &ge.mul(a)?)?;
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
        "mfb"
    }

    fn build(&self, spec: &FusionSpec) -> Result<Box<dyn Fusion>> {
        Ok(Box::new(Mfb::new(spec)))
    }

    fn param_count(&self, spec: &FusionSpec) -> u64 {
        let (k, dz) = dims(spec);
        (spec.d_v as u64 + spec.d_q as u64) * (k * dz) as u64
    }

    fn flop_count(&self, spec: &FusionSpec, c: &FlopConvention) -> u64 {
        let (k, dz) = dims(spec);
        let e = (k * dz) as u64;
        c.matmul(1, spec.d_v as u64, e)
            + c.matmul(1, spec.d_q as u64, e)
            + c.elementwise(e)
            + c.sum_pool(e, dz as u64)
    }
}
