//! Oracles and weight-transplant helpers shared by the integration tests
//! and the acceptance target.
#![allow(dead_code)]

use vqa_fusion::assembly::{synth_batch, AttentionMode, FeatureKind, FeatureProfile, ModelSpec};
use vqa_fusion::attention::NamedGrads;
use vqa_fusion::fusion::{read_params, write_params, Fusion, FusionKind, FusionSpec, Hyper, Mcb};
use vqa_fusion::rng::derive_seed;
use vqa_fusion::{DType, Rng, Tensor};

pub fn randn(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    Tensor::randn(&[rows, cols], DType::F64, rng)
}

/// Copies parameters from `src` into `dst` through the binary parameter
/// format, renaming `(from, to)` pairs on the way.
pub fn transplant(src: &dyn Fusion, dst: &mut dyn Fusion, rename: &[(&str, &str)]) {
    let mut buf = Vec::new();
    write_params(&mut buf, src.params().iter()).unwrap();
    for (name, t) in read_params(buf.as_slice()).unwrap() {
        let target = rename
            .iter()
            .find(|(from, _)| *from == name)
            .map(|(_, to)| to.to_string())
            .unwrap_or(name);
        dst.params_mut().set(&target, &t).unwrap();
    }
}

fn max_diff(a: &dyn Fusion, b: &dyn Fusion, trials: usize, seed: u64) -> f64 {
    let spec = a.spec();
    let mut rng = Rng::new(derive_seed(seed, "equivalence-inputs"));
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let batch = 1 + rng.below(4);
        let v = randn(batch, spec.d_v, &mut rng);
        let q = randn(batch, spec.d_q, &mut rng);
        let x = a.apply(&v, &q).unwrap();
        let y = b.apply(&v, &q).unwrap();
        worst = worst.max(x.max_abs_diff(&y).unwrap());
    }
    worst
}

/// MFB with `k = 1` carrying an MLB's projections.
pub fn mfb_vs_mlb(trials: usize, seed: u64) -> f64 {
    let mlb = FusionSpec::with_hyper(17, 13, Hyper::Mlb { d_z: 9 }).seed(seed).build().unwrap();
    let mut mfb = FusionSpec::with_hyper(17, 13, Hyper::Mfb { k: 1, d_z: 9 }).build().unwrap();
    transplant(mlb.as_ref(), mfb.as_mut(), &[]);
    max_diff(mlb.as_ref(), mfb.as_ref(), trials, seed)
}

/// MFH with a single stage carrying an MFB's projections.
pub fn mfh_vs_mfb(trials: usize, seed: u64) -> f64 {
    let mfb = FusionSpec::with_hyper(17, 13, Hyper::Mfb { k: 3, d_z: 7 }).seed(seed).build().unwrap();
    let mut mfh = FusionSpec::with_hyper(17, 13, Hyper::Mfh { k: 3, d_z: 7, m: 1 }).build().unwrap();
    transplant(mfb.as_ref(), mfh.as_mut(), &[("p_v", "p_v.1"), ("p_q", "p_q.1")]);
    max_diff(mfb.as_ref(), mfh.as_ref(), trials, seed)
}

/// Rank-1 Mutan with identity core factors and `d_pv = d_pq = d_z`,
/// carrying an MLB's projections as its factor matrices.
pub fn mutan_vs_mlb(trials: usize, seed: u64) -> f64 {
    let dz = 9;
    let mlb = FusionSpec::with_hyper(17, 13, Hyper::Mlb { d_z: dz }).seed(seed).build().unwrap();
    let mut mutan = FusionSpec::with_hyper(17, 13, Hyper::Mutan { d_pv: dz, d_pq: dz, d_z: dz, rank: 1 })
        .build()
        .unwrap();
    transplant(mlb.as_ref(), mutan.as_mut(), &[("p_v", "f_v"), ("p_q", "f_q")]);
    let eye = Tensor::identity(dz, DType::F64);
    mutan.params_mut().set("core_v", &eye).unwrap();
    mutan.params_mut().set("core_q", &eye).unwrap();
    max_diff(mlb.as_ref(), mutan.as_ref(), trials, seed)
}

/// Single-block Block carrying a Mutan's weights.
pub fn block_vs_mutan(trials: usize, seed: u64) -> f64 {
    let (d_pv, d_pq, d_z, rank) = (8, 6, 5, 3);
    let mutan = FusionSpec::with_hyper(17, 13, Hyper::Mutan { d_pv, d_pq, d_z, rank })
        .seed(seed)
        .build()
        .unwrap();
    let mut block = FusionSpec::with_hyper(17, 13, Hyper::Block { d_pv, d_pq, d_z, rank, n: 1 })
        .build()
        .unwrap();
    transplant(mutan.as_ref(), block.as_mut(), &[("core_v", "core_v.1"), ("core_q", "core_q.1")]);
    max_diff(mutan.as_ref(), block.as_ref(), trials, seed)
}

/// Count sketch of the explicit outer product `v ⊗ q` with bucket
/// `h_v(i) + h_q(j) mod D` and sign `s_v(i)·s_q(j)`.
pub fn sketch_outer_product(mcb: &Mcb, v: &[f64], q: &[f64]) -> Vec<f64> {
    let (sv, sq) = (mcb.sketch_v(), mcb.sketch_q());
    let width = sv.width();
    let mut out = vec![0.0; width];
    for (i, &vi) in v.iter().enumerate() {
        for (j, &qj) in q.iter().enumerate() {
            let bucket = (sv.buckets()[i] + sq.buckets()[j]) % width;
            out[bucket] += sv.signs()[i] * sq.signs()[j] * vi * qj;
        }
    }
    out
}

/// Largest deviation between the spectral MCB path and the outer-product
/// oracle over `trials` random instances at input width `d`, sketch `width`.
pub fn mcb_oracle_gap(d: usize, width: usize, trials: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(derive_seed(seed, "mcb-oracle"));
    let mut worst = 0.0f64;
    for t in 0..trials {
        let spec = FusionSpec::with_hyper(d, d, Hyper::Mcb { d: width, normalize: false }).seed(seed + t as u64);
        let mcb = Mcb::new(&spec).unwrap();
        let v = randn(1, d, &mut rng);
        let q = randn(1, d, &mut rng);
        let fast = mcb.apply(&v, &q).unwrap().to_vec();
        let slow = sketch_outer_product(&mcb, &v.to_vec(), &q.to_vec());
        for (a, b) in fast.iter().zip(&slow) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

#[allow(unused_imports)]
pub use vqa_fusion::assembly::{toy_hyper, toy_profile, TOY_ANSWERS, TOY_LR, TOY_STEPS};

pub fn toy_trace(kind: FusionKind, attention: AttentionMode, seed: u64) -> Vec<f64> {
    vqa_fusion::assembly::toy_trace(kind, attention, seed).unwrap()
}

/// Tiny hyperparameters for whole-model gradient checks.
pub fn tiny_hyper(kind: FusionKind, answers: usize) -> Hyper {
    match kind {
        FusionKind::Linear => Hyper::Linear { inter: 4, d_out: answers },
        FusionKind::Cmlp => Hyper::Cmlp { hidden: 4, d_out: answers },
        FusionKind::Mcb => Hyper::Mcb { d: 4, normalize: true },
        FusionKind::Mlb => Hyper::Mlb { d_z: 3 },
        FusionKind::Mfb => Hyper::Mfb { k: 2, d_z: 3 },
        FusionKind::Mfh => Hyper::Mfh { k: 2, d_z: 2, m: 2 },
        FusionKind::Mutan => Hyper::Mutan { d_pv: 3, d_pq: 4, d_z: 3, rank: 2 },
        FusionKind::Block => Hyper::Block { d_pv: 4, d_pq: 4, d_z: 4, rank: 2, n: 2 },
    }
}

/// Relative error between the analytic directional derivative of
/// `Σ logits ⊙ R` along a random parameter direction and its central
/// difference. Parameters are first shifted randomly away from the
/// initialization.
pub fn model_directional_error(kind: FusionKind, attention: AttentionMode, seed: u64) -> f64 {
    let answers = 3;
    let profile = FeatureProfile::custom("tiny", FeatureKind::SG, 6, 3, 5).unwrap();
    let mut model = ModelSpec::new(profile.clone(), kind, attention, answers)
        .with_hyper(tiny_hyper(kind, answers))
        .seed(seed)
        .build()
        .unwrap();
    let mut rng = Rng::new(derive_seed(seed, "direction"));
    let random_like = |model: &vqa_fusion::assembly::VqaModel, rng: &mut Rng| -> NamedGrads {
        model
            .named_params()
            .into_iter()
            .map(|(n, t)| (n, Tensor::randn(t.shape(), DType::F64, rng)))
            .collect()
    };
    let shift = random_like(&model, &mut rng);
    model.descend(&shift, -0.3).unwrap();
    let dir = random_like(&model, &mut rng);

    let batch = synth_batch(&profile, 3, seed, answers, false, DType::F64).unwrap();
    let r = Tensor::randn(&[3, answers], DType::F64, &mut rng);
    let loss = |m: &vqa_fusion::assembly::VqaModel| {
        let (l, _) = m.forward(&batch.v, &batch.q).unwrap();
        l.mul(&r).unwrap().sum()
    };
    let (_, cache) = model.forward(&batch.v, &batch.q).unwrap();
    let grads = model.backward(&cache, &r).unwrap();
    let analytic: f64 = dir.iter().map(|(n, d)| grads[n].mul(d).unwrap().sum()).sum();

    let eps = 1e-5;
    model.descend(&dir, -eps).unwrap();
    let plus = loss(&model);
    model.descend(&dir, 2.0 * eps).unwrap();
    let minus = loss(&model);
    let numeric = (plus - minus) / (2.0 * eps);
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-10)
}
