//! Additive baseline: both inputs are projected to a shared width, summed,
//! and projected to the output.

use indexmap::IndexMap;

use super::{project_backward, ForwardCache, Fusion, FusionFactory, FusionGrads, FusionSpec, Hyper, ParamSet};
use crate::complexity::FlopConvention;
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug)]
pub struct Linear {
    spec: FusionSpec,
    params: ParamSet,
}

fn dims(spec: &FusionSpec) -> (usize, usize) {
    match spec.hyper {
        Hyper::Linear { inter, d_out } => (inter, d_out),
        _ => unreachable!("Linear built from a non-Linear spec"),
    }
}

impl Linear {
    pub fn new(spec: &FusionSpec) -> Linear {
        let (inter, d_out) = dims(spec);
        let mut params = ParamSet::new();
        params.insert("w_v", spec.init_weight("w_v", spec.d_v, inter));
        params.insert("b_v", spec.zero_bias(inter));
        params.insert("w_q", spec.init_weight("w_q", spec.d_q, inter));
        params.insert("b_q", spec.zero_bias(inter));
        params.insert("w_o", spec.init_weight("w_o", inter, d_out));
        params.insert("b_o", spec.zero_bias(d_out));
        Linear {
            spec: spec.clone(),
            params,
        }
    }
}

impl Fusion for Linear {
    fn spec(&self) -> &FusionSpec {
        &self.spec
    }

    fn forward(&self, v: &Tensor, q: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.spec.check_inputs(v, q)?;
        let p = &self.params;
        let hv = v.matmul(p.get("w_v")?)?.add_row_vector(p.get("b_v")?)?;
        let hq = q.matmul(p.get("w_q")?)?.add_row_vector(p.get("b_q")?)?;
        let h = hv.add(&hq)?;
        let out = h.matmul(p.get("w_o")?)?.add_row_vector(p.get("b_o")?)?;
        let cache = ForwardCache::new(p, &out, vec![v.clone(), q.clone(), h]);
        Ok((out, cache))
    }

    fn backward(&self, cache: &ForwardCache, g: &Tensor) -> Result<FusionGrads> {
        cache.check(&self.params, g)?;
        let p = &self.params;
        let [v, q, h] = &cache.saved[..] else {
            unreachable!("Linear cache layout")
        };
        let (dh, dw_o) = project_backward(h, p.get("w_o")?, g)?;
        let (dv, dw_v) = project_backward(v, p.get("w_v")?, &dh)?;
        let (dq, dw_q) = project_backward(q, p.get("w_q")?, &dh)?;
        let db = dh.column_sums();
        let mut params = IndexMap::new();
        params.insert("w_v".into(), dw_v);
        params.insert("b_v".into(), db.clone());
        params.insert("w_q".into(), dw_q);
        params.insert("b_q".into(), db);
        params.insert("w_o".into(), dw_o);
        params.insert("b_o".into(), g.column_sums());
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
        "linear"
    }

    fn build(&self, spec: &FusionSpec) -> Result<Box<dyn Fusion>> {
        Ok(Box::new(Linear::new(spec)))
    }

    fn param_count(&self, spec: &FusionSpec) -> u64 {
        let (i, o) = dims(spec);
        let (i, o, dv, dq) = (i as u64, o as u64, spec.d_v as u64, spec.d_q as u64);
        dv * i + i + dq * i + i + i * o + o
    }

    fn flop_count(&self, spec: &FusionSpec, c: &FlopConvention) -> u64 {
        let (i, o) = dims(spec);
        let (i, o, dv, dq) = (i as u64, o as u64, spec.d_v as u64, spec.d_q as u64);
        c.matmul(1, dv, i)
            + c.elementwise(i)
            + c.matmul(1, dq, i)
            + c.elementwise(i)
            + c.elementwise(i)
            + c.matmul(1, i, o)
            + c.elementwise(o)
    }
}
