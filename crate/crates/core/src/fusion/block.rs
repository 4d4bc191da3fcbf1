//! Block-superdiagonal fusion: the reduced inputs are cut into `n` chunks
//! and each chunk pair goes through its own small rank-constrained core.
//! Chunk widths follow [`even_chunks`](super::even_chunks), the same rule for
//! the visual, question and output axes.

use indexmap::IndexMap;

use super::mutan::{core_backward, core_flops, core_forward};
use super::{
    even_chunks, project_backward, ForwardCache, Fusion, FusionFactory, FusionGrads, FusionSpec, Hyper,
    ParamSet,
};
use crate::complexity::FlopConvention;
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug)]
pub struct Block {
    spec: FusionSpec,
    params: ParamSet,
}

struct Layout {
    rank: usize,
    /// Per block: (offset, width) on the v, q and z axes.
    v: Vec<(usize, usize)>,
    q: Vec<(usize, usize)>,
    z: Vec<(usize, usize)>,
    d_pv: usize,
    d_pq: usize,
}

fn with_offsets(widths: Vec<usize>) -> Vec<(usize, usize)> {
    let mut off = 0;
    widths
        .into_iter()
        .map(|w| {
            let at = off;
            off += w;
            (at, w)
        })
        .collect()
}

fn layout(spec: &FusionSpec) -> Layout {
    match spec.hyper {
        Hyper::Block { d_pv, d_pq, d_z, rank, n } => Layout {
            rank,
            v: with_offsets(even_chunks(d_pv, n)),
            q: with_offsets(even_chunks(d_pq, n)),
            z: with_offsets(even_chunks(d_z, n)),
            d_pv,
            d_pq,
        },
        _ => unreachable!("Block built from a non-Block spec"),
    }
}

fn core_names(i: usize) -> (String, String) {
    (format!("core_v.{i}"), format!("core_q.{i}"))
}

impl Block {
    pub fn new(spec: &FusionSpec) -> Block {
        let l = layout(spec);
        let mut params = ParamSet::new();
        params.insert("f_v", spec.init_weight("f_v", spec.d_v, l.d_pv));
        params.insert("f_q", spec.init_weight("f_q", spec.d_q, l.d_pq));
        for i in 0..l.z.len() {
            let (nv, nq) = core_names(i + 1);
            let cz = l.z[i].1 * l.rank;
            params.insert(&nv, spec.init_weight(&nv, l.v[i].1, cz));
            params.insert(&nq, spec.init_weight(&nq, l.q[i].1, cz));
        }
        Block {
            spec: spec.clone(),
            params,
        }
    }
}

impl Fusion for Block {
    fn spec(&self) -> &FusionSpec {
        &self.spec
    }

    fn forward(&self, v: &Tensor, q: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.spec.check_inputs(v, q)?;
        let l = layout(&self.spec);
        let p = &self.params;
        let tv = v.matmul(p.get("f_v")?)?;
        let tq = q.matmul(p.get("f_q")?)?;
        // Saved: v, q, tv, tq, then (a_i, b_i) per block.
        let mut saved = vec![v.clone(), q.clone(), tv.clone(), tq.clone()];
        let mut parts = Vec::with_capacity(l.z.len());
        for i in 0..l.z.len() {
            let (nv, nq) = core_names(i + 1);
            let cv = tv.slice_last(l.v[i].0, l.v[i].1)?;
            let cq = tq.slice_last(l.q[i].0, l.q[i].1)?;
            let (z, a, b) = core_forward(&cv, &cq, p.get(&nv)?, p.get(&nq)?, l.rank)?;
            parts.push(z);
            saved.extend([a, b]);
        }
        let out = Tensor::concat_last(&parts.iter().collect::<Vec<_>>())?;
        let cache = ForwardCache::new(p, &out, saved);
        Ok((out, cache))
    }

    fn backward(&self, cache: &ForwardCache, g: &Tensor) -> Result<FusionGrads> {
        cache.check(&self.params, g)?;
        let l = layout(&self.spec);
        let p = &self.params;
        let [v, q, tv, tq] = &cache.saved[..4] else {
            unreachable!("Block cache layout")
        };
        let mut dtv_parts = Vec::with_capacity(l.z.len());
        let mut dtq_parts = Vec::with_capacity(l.z.len());
        let mut core_grads = Vec::with_capacity(l.z.len());
        for i in 0..l.z.len() {
            let (nv, nq) = core_names(i + 1);
            let a = &cache.saved[4 + 2 * i];
            let b = &cache.saved[5 + 2 * i];
            let cv = tv.slice_last(l.v[i].0, l.v[i].1)?;
            let cq = tq.slice_last(l.q[i].0, l.q[i].1)?;
            let gz = g.slice_last(l.z[i].0, l.z[i].1)?;
            let (dcv_in, dcq_in, dcore_v, dcore_q) =
                core_backward(&cv, &cq, p.get(&nv)?, p.get(&nq)?, a, b, &gz, l.rank)?;
            dtv_parts.push(dcv_in);
            dtq_parts.push(dcq_in);
            core_grads.push((nv, dcore_v, nq, dcore_q));
        }
        let dtv = Tensor::concat_last(&dtv_parts.iter().collect::<Vec<_>>())?;
        let dtq = Tensor::concat_last(&dtq_parts.iter().collect::<Vec<_>>())?;
        let (dv, df_v) = project_backward(v, p.get("f_v")?, &dtv)?;
        let (dq, df_q) = project_backward(q, p.get("f_q")?, &dtq)?;
        let mut params = IndexMap::new();
        params.insert("f_v".into(), df_v);
        params.insert("f_q".into(), df_q);
        for (nv, dcv, nq, dcq) in core_grads {
            params.insert(nv, dcv);
            params.insert(nq, dcq);
        }
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
        "block"
    }

    fn build(&self, spec: &FusionSpec) -> Result<Box<dyn Fusion>> {
        Ok(Box::new(Block::new(spec)))
    }

    fn param_count(&self, spec: &FusionSpec) -> u64 {
        let l = layout(spec);
        let cores: usize = (0..l.z.len())
            .map(|i| (l.v[i].1 + l.q[i].1) * l.z[i].1 * l.rank)
            .sum();
        (spec.d_v * l.d_pv + spec.d_q * l.d_pq + cores) as u64
    }

    fn flop_count(&self, spec: &FusionSpec, c: &FlopConvention) -> u64 {
        let l = layout(spec);
        let cores: u64 = (0..l.z.len())
            .map(|i| {
                core_flops(
                    c,
                    l.v[i].1 as u64,
                    l.q[i].1 as u64,
                    l.z[i].1 as u64,
                    l.rank as u64,
                )
            })
            .sum();
        c.matmul(1, spec.d_v as u64, l.d_pv as u64)
            + c.matmul(1, spec.d_q as u64, l.d_pq as u64)
            + cores
    }
}
