//! Concatenation followed by a three-layer ReLU perceptron.

use indexmap::IndexMap;

use super::{project_backward, ForwardCache, Fusion, FusionFactory, FusionGrads, FusionSpec, Hyper, ParamSet};
use crate::complexity::FlopConvention;
use crate::error::Result;
use crate::tensor::{Activation, Tensor};

#[derive(Debug)]
pub struct Cmlp {
    spec: FusionSpec,
    params: ParamSet,
}

fn dims(spec: &FusionSpec) -> (usize, usize) {
    match spec.hyper {
        Hyper::Cmlp { hidden, d_out } => (hidden, d_out),
        _ => unreachable!("C-MLP built from a non-C-MLP spec"),
    }
}

impl Cmlp {
    pub fn new(spec: &FusionSpec) -> Cmlp {
        let (h, o) = dims(spec);
        let mut params = ParamSet::new();
        params.insert("w1", spec.init_weight("w1", spec.d_v + spec.d_q, h));
        params.insert("b1", spec.zero_bias(h));
        params.insert("w2", spec.init_weight("w2", h, h));
        params.insert("b2", spec.zero_bias(h));
        params.insert("w3", spec.init_weight("w3", h, o));
        params.insert("b3", spec.zero_bias(o));
        Cmlp {
            spec: spec.clone(),
            params,
        }
    }
}

impl Fusion for Cmlp {
    fn spec(&self) -> &FusionSpec {
        &self.spec
    }

    fn forward(&self, v: &Tensor, q: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.spec.check_inputs(v, q)?;
        let p = &self.params;
        let x = Tensor::concat_last(&[v, q])?;
        let a1 = x.matmul(p.get("w1")?)?.add_row_vector(p.get("b1")?)?;
        let h1 = a1.relu();
        let a2 = h1.matmul(p.get("w2")?)?.add_row_vector(p.get("b2")?)?;
        let h2 = a2.relu();
        let out = h2.matmul(p.get("w3")?)?.add_row_vector(p.get("b3")?)?;
        let cache = ForwardCache::new(p, &out, vec![x, a1, h1, a2, h2]);
        Ok((out, cache))
    }

    fn backward(&self, cache: &ForwardCache, g: &Tensor) -> Result<FusionGrads> {
        cache.check(&self.params, g)?;
        let p = &self.params;
        let [x, a1, h1, a2, h2] = &cache.saved[..] else {
            unreachable!("C-MLP cache layout")
        };
        let (dh2, dw3) = project_backward(h2, p.get("w3")?, g)?;
        let da2 = Tensor::activation_backward(Activation::Relu, a2, h2, &dh2)?;
        let (dh1, dw2) = project_backward(h1, p.get("w2")?, &da2)?;
        let da1 = Tensor::activation_backward(Activation::Relu, a1, h1, &dh1)?;
        let (dx, dw1) = project_backward(x, p.get("w1")?, &da1)?;
        let mut params = IndexMap::new();
        params.insert("w1".into(), dw1);
        params.insert("b1".into(), da1.column_sums());
        params.insert("w2".into(), dw2);
        params.insert("b2".into(), da2.column_sums());
        params.insert("w3".into(), dw3);
        params.insert("b3".into(), g.column_sums());
        Ok(FusionGrads {
            v: dx.slice_last(0, self.spec.d_v)?,
            q: dx.slice_last(self.spec.d_v, self.spec.d_q)?,
            params,
        })
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
        "cmlp"
    }

    fn build(&self, spec: &FusionSpec) -> Result<Box<dyn Fusion>> {
        Ok(Box::new(Cmlp::new(spec)))
    }

    fn param_count(&self, spec: &FusionSpec) -> u64 {
        let (h, o) = dims(spec);
        let (h, o, d_in) = (h as u64, o as u64, (spec.d_v + spec.d_q) as u64);
        d_in * h + h * h + h * o + (h + h + o)
    }

    fn flop_count(&self, spec: &FusionSpec, c: &FlopConvention) -> u64 {
        let (h, o) = dims(spec);
        let (h, o, d_in) = (h as u64, o as u64, (spec.d_v + spec.d_q) as u64);
        c.matmul(1, d_in, h)
            + c.elementwise(h) // bias
            + c.elementwise(h) // relu
            + c.matmul(1, h, h)
            + c.elementwise(h)
            + c.elementwise(h)
            + c.matmul(1, h, o)
            + c.elementwise(o)
    }
}
