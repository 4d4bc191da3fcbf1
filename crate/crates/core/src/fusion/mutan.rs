//! Tucker-decomposed bilinear fusion with a rank-constrained core.
//!
//! The inputs are first reduced by factor matrices, `ṽ = vF_v` and
//! `q̃ = qF_q`. The core interaction is a sum of `R` Hadamard branches,
//! `z = Σ_r (ṽA_r) ⊙ (q̃B_r)`. The branches are stored side by side in one
//! matrix per modality: column `j·R + r` of `core_v` is column `j` of `A_r`,
//! so the sum over `r` becomes a sum-pool with window `R`.

use indexmap::IndexMap;

use super::{project_backward, ForwardCache, Fusion, FusionFactory, FusionGrads, FusionSpec, Hyper, ParamSet};
use crate::complexity::FlopConvention;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug)]
pub struct Mutan {
    spec: FusionSpec,
    params: ParamSet,
}

/// `(d_pv, d_pq, d_z, rank)`.
fn dims(spec: &FusionSpec) -> (usize, usize, usize, usize) {
    match spec.hyper {
        Hyper::Mutan { d_pv, d_pq, d_z, rank } => (d_pv, d_pq, d_z, rank),
        _ => unreachable!("Mutan built from a non-Mutan spec"),
    }
}

/// Packs per-rank factors `A_1..A_R` (each `d×d_z`) into the `d×(d_z·R)`
/// core layout used by [`Mutan`] and [`super::Block`].
pub fn interleave_rank_factors(factors: &[Tensor]) -> Result<Tensor> {
    let first = factors
        .first()
        .ok_or_else(|| Error::config("at least one rank factor is required"))?;
    first.expect_rank(2, "interleave_rank_factors")?;
    let (d, dz) = (first.shape()[0], first.shape()[1]);
    let r = factors.len();
    if factors.iter().any(|f| f.shape() != first.shape()) {
        return Err(Error::dim("rank factors must share one shape"));
    }
    let mut out = Tensor::zeros(&[d, dz * r], first.dtype());
    for (ri, f) in factors.iter().enumerate() {
        for i in 0..d {
            for j in 0..dz {
                out.set_at(i * dz * r + j * r + ri, f.at(i * dz + j));
            }
        }
    }
    Ok(out)
}

/// Rank-sum core on already-reduced inputs. Returns `(z, a, b)` with
/// `a = tv·core_v` and `b = tq·core_q` kept for the backward pass.
pub(super) fn core_forward(
    tv: &Tensor,
    tq: &Tensor,
    core_v: &Tensor,
    core_q: &Tensor,
    rank: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    let a = tv.matmul(core_v)?;
    let b = tq.matmul(core_q)?;
    let z = a.mul(&b)?.sum_pool_1d(rank)?;
    Ok((z, a, b))
}

/// Gradients of [`core_forward`]: `(d tv, d tq, d core_v, d core_q)`.
#[allow(clippy::too_many_arguments)]
pub(super) fn core_backward(
    tv: &Tensor,
    tq: &Tensor,
    core_v: &Tensor,
    core_q: &Tensor,
    a: &Tensor,
    b: &Tensor,
    g: &Tensor,
    rank: usize,
) -> Result<(Tensor, Tensor, Tensor, Tensor)> {
    let ge = g.repeat_last(rank)?;
    let (dtv, dcv) = project_backward(tv, core_v, &ge.mul(b)?)?;
    let (dtq, dcq) = project_backward(tq, core_q, &ge.mul(a)?)?;
    Ok((dtv, dtq, dcv, dcq))
}

pub(super) fn core_flops(c: &FlopConvention, d_pv: u64, d_pq: u64, d_z: u64, rank: u64) -> u64 {
    let e = d_z * rank;
    c.matmul(1, d_pv, e) + c.matmul(1, d_pq, e) + c.elementwise(e) + c.sum_pool(e, d_z)
}

impl Mutan {
    pub fn new(spec: &FusionSpec) -> Mutan {
        let (d_pv, d_pq, d_z, rank) = dims(spec);
        let mut params = ParamSet::new();
        params.insert("f_v", spec.init_weight("f_v", spec.d_v, d_pv));
        params.insert("f_q", spec.init_weight("f_q", spec.d_q, d_pq));
        params.insert("core_v", spec.init_weight("core_v", d_pv, d_z * rank));
        params.insert("core_q", spec.init_weight("core_q", d_pq, d_z * rank));
        Mutan {
            spec: spec.clone(),
            params,
        }
    }
}

impl Fusion for Mutan {
    fn spec(&self) -> &FusionSpec {
        &self.spec
    }

    fn forward(&self, v: &Tensor, q: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.spec.check_inputs(v, q)?;
        let (_, _, _, rank) = dims(&self.spec);
        let p = &self.params;
        let tv = v.matmul(p.get("f_v")?)?;
        let tq = q.matmul(p.get("f_q")?)?;
        let (out, a, b) = core_forward(&tv, &tq, p.get("core_v")?, p.get("core_q")?, rank)?;
        let cache = ForwardCache::new(p, &out, vec![v.clone(), q.clone(), tv, tq, a, b]);
        Ok((out, cache))
    }

    fn backward(&self, cache: &ForwardCache, g: &Tensor) -> Result<FusionGrads> {
        cache.check(&self.params, g)?;
        let (_, _, _, rank) = dims(&self.spec);
        let p = &self.params;
        let [v, q, tv, tq, a, b] = &cache.saved[..] else {
            unreachable!("Mutan cache layout")
        };
        let (dtv, dtq, dcv, dcq) =
            core_backward(tv, tq, p.get("core_v")?, p.get("core_q")?, a, b, g, rank)?;
        let (dv, df_v) = project_backward(v, p.get("f_v")?, &dtv)?;
        let (dq, df_q) = project_backward(q, p.get("f_q")?, &dtq)?;
        let mut params = IndexMap::new();
        params.insert("f_v".into(), df_v);
        params.insert("f_q".into(), df_q);
        params.insert("core_v".into(), dcv);
        params.insert("core_q".into(), dcq);
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
        "mutan"
    }

    fn build(&self, spec: &FusionSpec) -> Result<Box<dyn Fusion>> {
        Ok(Box::new(Mutan::new(spec)))
    }

    fn param_count(&self, spec: &FusionSpec) -> u64 {
        let (d_pv, d_pq, d_z, rank) = dims(spec);
        (spec.d_v * d_pv + spec.d_q * d_pq + (d_pv + d_pq) * d_z * rank) as u64
    }

    fn flop_count(&self, spec: &FusionSpec, c: &FlopConvention) -> u64 {
        let (d_pv, d_pq, d_z, rank) = dims(spec);
        c.matmul(1, spec.d_v as u64, d_pv as u64)
            + c.matmul(1, spec.d_q as u64, d_pq as u64)
            + core_flops(c, d_pv as u64, d_pq as u64, d_z as u64, rank as u64)
    }
}
