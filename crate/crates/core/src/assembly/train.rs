use super::{synth_batch, AttentionMode, FeatureKind, FeatureProfile, ModelSpec, SyntheticBatch, VqaModel};
use crate::error::{Error, Result};
use crate::fusion::{FusionKind, Hyper};
use crate::tensor::{DType, Tensor};

/// Mean softmax cross-entropy over the batch and its gradient with respect
/// to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    if logits.rank() != 2 || logits.shape()[0] != labels.len() {
        return Err(Error::dim(format!(
            "cross-entropy: logits {:?} for {} labels",
            logits.shape(),
            labels.len()
        )));
    }
    let (b, n) = (logits.shape()[0], logits.shape()[1]);
    if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
        return Err(Error::Validation(format!("label {bad} outside {n} answers")));
    }
    if b == 0 {
        return Ok((0.0, logits.clone()));
    }
    let probs = logits.softmax(1)?;
    let mut grad = probs.to_vec();
    let mut loss = 0.0;
    for (r, &l) in labels.iter().enumerate() {
        let p = grad[r * n + l];
        loss -= p.max(f64::MIN_POSITIVE).ln();
        grad[r * n + l] -= 1.0;
    }
    let scale = 1.0 / b as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    let loss = if probs.has_nan() { f64::NAN } else { loss * scale };
    Ok((loss, Tensor::from_f64_as(logits.shape(), grad, logits.dtype())?))
}

/// Plain gradient descent on softmax cross-entropy. `batch_fn(step)` supplies
/// the planted batch for each step. Returns the loss measured at every step
/// before its update.
pub fn train_toy<F>(model: &mut VqaModel, steps: usize, lr: f64, mut batch_fn: F) -> Result<Vec<f64>>
where
    F: FnMut(usize) -> Result<SyntheticBatch>,
{
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::config(format!("learning rate must be finite and non-negative, got {lr}")));
    }
    let mut trace = Vec::with_capacity(steps);
    for step in 0..steps {
        let batch = batch_fn(step)?;
        if !batch.planted {
            return Err(Error::config("toy training needs planted batches"));
        }
        let (logits, cache) = model.forward(&batch.v, &batch.q)?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, &batch.labels)?;
        if !loss.is_finite() {
            return Err(Error::Training { step, loss });
        }
        trace.push(loss);
        if lr > 0.0 {
            let grads = model.backward(&cache, &dlogits)?;
            model.descend(&grads, lr)?;
        }
    }
    Ok(trace)
}

/// Answer-set size of the toy problem.
pub const TOY_ANSWERS: usize = 4;
pub const TOY_LR: f64 = 1.0;
pub const TOY_STEPS: usize = 200;
/// Size of the one planted batch every toy step trains on.
pub const TOY_BATCH: usize = 64;

/// Four 32-wide grid cells and a 32-wide question.
pub fn toy_profile() -> FeatureProfile {
    FeatureProfile::custom("toy", FeatureKind::SG, 32, 4, 32).expect("valid toy dims")
}

/// Small hyperparameters with a four-way answer space for Linear and C-MLP.
pub fn toy_hyper(kind: FusionKind) -> Hyper {
    match kind {
        FusionKind::Linear => Hyper::Linear { inter: 16, d_out: TOY_ANSWERS },
        FusionKind::Cmlp => Hyper::Cmlp { hidden: 16, d_out: TOY_ANSWERS },
        FusionKind::Mcb => Hyper::Mcb { d: 64, normalize: true },
        FusionKind::Mlb => Hyper::Mlb { d_z: 16 },
        FusionKind::Mfb => Hyper::Mfb { k: 2, d_z: 16 },
        FusionKind::Mfh => Hyper::Mfh { k: 2, d_z: 16, m: 2 },
        FusionKind::Mutan => Hyper::Mutan { d_pv: 16, d_pq: 16, d_z: 16, rank: 3 },
        FusionKind::Block => Hyper::Block { d_pv: 16, d_pq: 16, d_z: 16, rank: 3, n: 4 },
    }
}

/// Loss trace of [`TOY_STEPS`] steps at [`TOY_LR`] on one fixed planted
/// batch of the toy profile.
pub fn toy_trace(kind: FusionKind, attention: AttentionMode, seed: u64) -> Result<Vec<f64>> {
    let profile = toy_profile();
    let mut model = ModelSpec::new(profile.clone(), kind, attention, TOY_ANSWERS)
        .with_hyper(toy_hyper(kind))
        .seed(seed)
        .build()?;
    let batch = synth_batch(&profile, TOY_BATCH, seed, TOY_ANSWERS, true, DType::F64)?;
    train_toy(&mut model, TOY_STEPS, TOY_LR, |_| Ok(batch.clone()))
}
