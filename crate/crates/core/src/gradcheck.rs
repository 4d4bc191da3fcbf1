//! Central finite differences, used as an independent oracle for the
//! analytic backward passes.

use std::cell::RefCell;

use crate::error::Result;
use crate::fusion::{Fusion, FusionKind, FusionSpec, Hyper};
use crate::rng::{derive_seed, Rng};
use crate::tensor::{DType, Tensor};

/// `(f(x + eps·e_i) - f(x - eps·e_i)) / (2·eps)` for every coordinate `i`.
/// The result has the shape and dtype of `x`.
pub fn finite_diff_grad<F>(f: F, x: &Tensor, eps: f64) -> Tensor
where
    F: Fn(&Tensor) -> f64,
{
    assert!(eps > 0.0, "finite difference step must be positive");
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape(), x.dtype());
    for i in 0..x.numel() {
        let orig = x.at(i);
        probe.set_at(i, orig + eps);
        let plus = f(&probe);
        probe.set_at(i, orig - eps);
        let minus = f(&probe);
        probe.set_at(i, orig);
        grad.set_at(i, (plus - minus) / (2.0 * eps));
    }
    grad
}

/// Norm-wise relative error `‖a - b‖ / max(‖a‖, ‖b‖)`, or the absolute
/// error norm when both sides are below `floor`.
pub fn relative_error(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    let av = a.to_vec();
    let bv = b.to_vec();
    assert_eq!(av.len(), bv.len(), "relative_error: length mismatch");
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = av
        .iter()
        .zip(&bv)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = norm(&av).max(norm(&bv));
    if scale < floor {
        diff
    } else {
        diff / scale
    }
}

/// Worst-case relative error per differentiated quantity of one operator.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub spec: FusionSpec,
    /// `(name, relative error)` for `v`, `q` and every parameter tensor.
    pub entries: Vec<(String, f64)>,
}

impl GradReport {
    pub fn worst(&self) -> f64 {
        self.entries.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }
}

/// Compares the analytic backward pass of `fusion` against central
/// differences of the scalar loss `Σ out ⊙ R`, with `R` a fixed random
/// tensor drawn from `seed`.
pub fn check_fusion(fusion: &mut dyn Fusion, v: &Tensor, q: &Tensor, eps: f64, seed: u64) -> Result<GradReport> {
    let out_shape = [v.shape()[0], fusion.d_out()];
    let weights = Tensor::randn(&out_shape, v.dtype(), &mut Rng::new(derive_seed(seed, "loss")));
    let w = weights.to_vec();
    let loss = |out: &Tensor| out.to_vec().iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();

    let (_, cache) = fusion.forward(v, q)?;
    let analytic = fusion.backward(&cache, &weights)?;
    let mut entries = Vec::new();

    let f_ref: &dyn Fusion = fusion;
    let num_v = finite_diff_grad(|x| loss(&f_ref.apply(x, q).expect("forward")), v, eps);
    entries.push(("v".to_string(), relative_error(&analytic.v, &num_v, 1e-10)));
    let num_q = finite_diff_grad(|x| loss(&f_ref.apply(v, x).expect("forward")), q, eps);
    entries.push(("q".to_string(), relative_error(&analytic.q, &num_q, 1e-10)));

    let names: Vec<String> = fusion.params().names().map(String::from).collect();
    let cell = RefCell::new(fusion);
    for name in names {
        let original = cell.borrow().params().get(&name)?.clone();
        let numeric = finite_diff_grad(
            |p| {
                cell.borrow_mut().params_mut().set(&name, p).expect("same shape");
                loss(&cell.borrow().apply(v, q).expect("forward"))
            },
            &original,
            eps,
        );
        cell.borrow_mut().params_mut().set(&name, &original)?;
        let err = relative_error(&analytic.params[&name], &numeric, 1e-10);
        entries.push((name, err));
    }
    Ok(GradReport {
        spec: cell.into_inner().spec().clone(),
        entries,
    })
}

/// Three small random configurations of `kind`, drawn from `seed`. The
/// MCB set exercises both the plain and the normalized output.
pub fn small_specs(kind: FusionKind, seed: u64) -> Vec<FusionSpec> {
    let mut rng = Rng::new(derive_seed(seed, kind.name()));
    let mut dim = |lo: usize, hi: usize| lo + rng.below(hi - lo + 1);
    (0..3)
        .map(|i| {
            let (mut d_v, mut d_q) = (dim(2, 6), dim(2, 6));
            let hyper = match kind {
                FusionKind::Linear => Hyper::Linear { inter: dim(2, 5), d_out: dim(1, 4) },
                FusionKind::Cmlp => Hyper::Cmlp { hidden: dim(2, 5), d_out: dim(1, 4) },
                FusionKind::Mcb if i == 2 => {
                    // Wide inputs fill every bucket; a structurally zero
                    // output would sit on the kink of the signed square root.
                    d_v = dim(8, 12);
                    d_q = dim(8, 12);
                    Hyper::Mcb { d: dim(4, 8), normalize: true }
                }
                FusionKind::Mcb => Hyper::Mcb { d: dim(4, 12), normalize: false },
                FusionKind::Mlb => Hyper::Mlb { d_z: dim(1, 5) },
                FusionKind::Mfb => Hyper::Mfb { k: dim(1, 3), d_z: dim(1, 4) },
                FusionKind::Mfh => Hyper::Mfh { k: dim(1, 3), d_z: dim(1, 3), m: dim(1, 3) },
                FusionKind::Mutan => Hyper::Mutan {
                    d_pv: dim(1, 4),
                    d_pq: dim(1, 4),
                    d_z: dim(1, 4),
                    rank: dim(1, 3),
                },
                FusionKind::Block => {
                    let n = dim(1, 3);
                    Hyper::Block {
                        d_pv: n + dim(0, 3),
                        d_pq: n + dim(0, 3),
                        d_z: n + dim(0, 3),
                        rank: dim(1, 3),
                        n,
                    }
                }
            };
            FusionSpec::with_hyper(d_v, d_q, hyper).seed(seed + i as u64)
        })
        .collect()
}

/// Builds `spec`, redraws every parameter (biases included) from a normal
/// distribution so that no ReLU sits exactly on its kink, draws a batch of
/// `batch` standard-normal inputs and runs [`check_fusion`] with step `eps`.
pub fn check_spec(spec: &FusionSpec, batch: usize, eps: f64) -> Result<GradReport> {
    let mut fusion = spec.build()?;
    let mut rng = Rng::new(derive_seed(spec.seed, "inputs"));
    for (_, p) in fusion.params_mut().iter_mut() {
        *p = Tensor::randn(p.shape(), p.dtype(), &mut rng).scale(0.5);
    }
    let v = Tensor::randn(&[batch, spec.d_v], DType::F64, &mut rng);
    let q = Tensor::randn(&[batch, spec.d_q], DType::F64, &mut rng);
    check_fusion(fusion.as_mut(), &v, &q, eps, spec.seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::vector(&[1.0, 2.0]);
        let g = finite_diff_grad(|t| t.to_vec().iter().map(|v| v * v).sum(), &x, 1e-5);
        assert!(g.max_abs_diff(&Tensor::vector(&[2.0, 4.0])).unwrap() < 1e-6);
    }

    #[test]
    fn product_of_coordinates() {
        let x = Tensor::vector(&[3.0, 5.0]);
        let g = finite_diff_grad(|t| t.at(0) * t.at(1), &x, 1e-5);
        assert!(g.max_abs_diff(&Tensor::vector(&[5.0, 3.0])).unwrap() < 1e-6);
    }

    #[test]
    fn relative_error_is_scale_free() {
        let a = Tensor::vector(&[1.0, 0.0]);
        let b = Tensor::vector(&[1.0, 1e-6]);
        assert!((relative_error(&a, &b, 1e-12) - 1e-6).abs() < 1e-9);
        assert!((relative_error(&a.scale(1e3), &b.scale(1e3), 1e-12) - 1e-6).abs() < 1e-9);
    }
}
