//! High-order factorized pooling: a cascade of `m` factorized stages. Stage
//! `i` multiplies its own expanded product into the running product of the
//! previous stage, and every stage's pooled output is concatenated.

use indexmap::IndexMap;

use super::{project_backward, ForwardCache, Fusion, FusionFactory, FusionGrads, FusionSpec, Hyper, ParamSet};
use crate::complexity::FlopConvention;
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug)]
pub struct Mfh {
    spec: FusionSpec,
    params: ParamSet,
}

fn dims(spec: &FusionSpec) -> (usize, usize, usize) {
    match spec.hyper {
        Hyper::Mfh { k, d_z, m } => (k, d_z, m),
        _ => unreachable!("MFH built from a non-MFH spec"),
    }
}

/// Parameter names for stage `i` (1-based).
fn names(i: usize) -> (String, String) {
    (format!("p_v.{i}"), format!("p_q.{i}"))
}

impl Mfh {
    pub fn new(spec: &FusionSpec) -> Mfh {
        let (k, dz, m) = dims(spec);
        let mut params = ParamSet::new();
        for i in 1..=m {
            let (nv, nq) = names(i);
            params.insert(&nv, spec.init_weight(&nv, spec.d_v, k * dz));
            params.insert(&nq, spec.init_weight(&nq, spec.d_q, k * dz));
        }
        Mfh {
            spec: spec.clone(),
            params,
        }
    }
}

impl Fusion for Mfh {
    fn spec(&self) -> &FusionSpec {
        &self.spec
    }

    fn forward(&self, v: &Tensor, q: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.spec.check_inputs(v, q)?;
        let (k, _, m) = dims(&self.spec);
        // Saved: v, q, then (a_i, b_i, running product z_i) per stage.
        let mut saved = vec![v.clone(), q.clone()];
        let mut pooled = Vec::with_capacity(m);
        let mut running: Option<Tensor> = None;
        for i in 1..=m {
            let (nv, nq) = names(i);
            let a = v.matmul(self.params.get(&nv)?)?;
            let b = q.matmul(self.params.get(&nq)?)?;
            let e = a.mul(&b)?;
            let z = match &running {
                Some(prev) => prev.mul(&e)?,
                None => e,
            };
            pooled.push(z.sum_pool_1d(k)?);
            saved.extend([a, b, z.clone()]);
            running = Some(z);
        }
        let out = Tensor::concat_last(&pooled.iter().collect::<Vec<_>>())?;
        let cache = ForwardCache::new(&self.params, &out, saved);
        Ok((out, cache))
    }

    fn backward(&self, cache: &ForwardCache, g: &Tensor) -> Result<FusionGrads> {
        cache.check(&self.params, g)?;
        let (k, dz, m) = dims(&self.spec);
        let v = &cache.saved[0];
        let q = &cache.saved[1];
        let stage = |i: usize| &cache.saved[2 + 3 * (i - 1)..2 + 3 * i];

        let mut dv: Option<Tensor> = None;
        let mut dq: Option<Tensor> = None;
        let mut grads = Vec::with_capacity(m);
        // Gradient reaching stage i's running product from stage i + 1.
        let mut carry: Option<Tensor> = None;
        for i in (1..=m).rev() {
            let [a, b, _] = stage(i) else { unreachable!() };
            let mut dz_run = g.slice_last((i - 1) * dz, dz)?.repeat_last(k)?;
            if let Some(c) = &carry {
                dz_run = dz_run.add(c)?;
            }
            let e = a.mul(b)?;
            let de = if i > 1 {
                let [_, _, z_prev] = stage(i - 1) else { unreachable!() };
                carry = Some(dz_run.mul(&e)?);
                dz_run.mul(z_prev)?
            } else {
                dz_run
            };
            let (nv, nq) = names(i);
            let (gv, dp_v) = project_backward(v, self.params.get(&nv)?, &de.mul(b)?)?;
            let (gq, dp_q) = project_backward(q, self.params.get(&nq)?, &de.mul(a)?)?;
            dv = Some(match dv {
                Some(acc) => acc.add(&gv)?,
                None => gv,
            });
            dq = Some(match dq {
                Some(acc) => acc.add(&gq)?,
                None => gq,
            });
            grads.push((nv, dp_v, nq, dp_q));
        }
        let mut params = IndexMap::new();
        for (nv, dp_v, nq, dp_q) in grads.into_iter().rev() {
            params.insert(nv, dp_v);
            params.insert(nq, dp_q);
        }
        Ok(FusionGrads {
            v: dv.expect("m >= 1"),
            q: dq.expect("m >= 1"),
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
        "mfh"
    }

    fn build(&self, spec: &FusionSpec) -> Result<Box<dyn Fusion>> {
        Ok(Box::new(Mfh::new(spec)))
    }

    fn param_count(&self, spec: &FusionSpec) -> u64 {
        let (k, dz, m) = dims(spec);
        m as u64 * (spec.d_v as u64 + spec.d_q as u64) * (k * dz) as u64
    }

    fn flop_count(&self, spec: &FusionSpec, c: &FlopConvention) -> u64 {
        let (k, dz, m) = dims(spec);
        let e = (k * dz) as u64;
        let stage = c.matmul(1, spec.d_v as u64, e)
            + c.matmul(1, spec.d_q as u64, e)
            + c.elementwise(e)
            + c.sum_pool(e, dz as u64);
        // Every stage after the first multiplies into the running product.
        m as u64 * stage + (m as u64 - 1) * c.elementwise(e)
    }
}
