use proptest::prelude::*;

use super::fft::{fft, ifft, ifft_complex};
use super::*;
use crate::rng::Rng;

fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i * k + t] * b[t * n + j];
            }
            c[i * n + j] = s;
        }
    }
    c
}

fn naive_circular_convolution(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| (0..n).map(|j| x[j] * y[(i + n - j) % n]).sum())
        .collect()
}

#[test]
fn matmul_identity_and_hand_cases() {
    let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
    let eye = Tensor::identity(2, DType::F64);
    assert_eq!(a.matmul(&eye).unwrap(), a);

    let row = Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap();
    let col = Tensor::new(&[2, 1], vec![3.0, 4.0]).unwrap();
    assert_eq!(row.matmul(&col).unwrap().to_vec(), vec![11.0]);
}

#[test]
fn matmul_matches_triple_loop_exactly() {
    let mut rng = Rng::new(7);
    for &(m, k, n) in &[(5, 7, 3), (9, 300, 17), (4, 129, 600), (1, 1, 1)] {
        let a = Tensor::randn(&[m, k], DType::F64, &mut rng);
        let b = Tensor::randn(&[k, n], DType::F64, &mut rng);
        let want = naive_matmul(&a.to_vec(), &b.to_vec(), m, k, n);
        assert_eq!(a.matmul(&b).unwrap().to_vec(), want, "{m}x{k}x{n}");
    }
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let a = Tensor::zeros(&[2, 3], DType::F64);
    let b = Tensor::zeros(&[4, 5], DType::F64);
    let msg = a.matmul(&b).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
}

#[test]
fn matmul_rejects_mixed_dtypes() {
    let a = Tensor::zeros(&[2, 2], DType::F64);
    let b = Tensor::zeros(&[2, 2], DType::F32);
    assert!(a.matmul(&b).is_err());
}

#[test]
fn f32_matmul_agrees_with_f64() {
    let mut rng = Rng::new(3);
    let a = Tensor::randn(&[6, 10], DType::F64, &mut rng);
    let b = Tensor::randn(&[10, 4], DType::F64, &mut rng);
    let exact = a.matmul(&b).unwrap();
    let approx = a.cast(DType::F32).matmul(&b.cast(DType::F32)).unwrap();
    assert_eq!(approx.dtype(), DType::F32);
    assert!(approx.cast(DType::F64).max_abs_diff(&exact).unwrap() < 1e-4);
}

#[test]
fn elementwise_examples() {
    let a = Tensor::vector(&[1.0, 2.0, 3.0]);
    let b = Tensor::vector(&[4.0, 5.0, 6.0]);
    let prod = Tensor::elementwise(ElementwiseOp::Mul, &a, Some(&b)).unwrap();
    assert_eq!(prod.to_vec(), vec![4.0, 10.0, 18.0]);
    let t = Tensor::elementwise(ElementwiseOp::Tanh, &Tensor::vector(&[0.0]), None).unwrap();
    assert_eq!(t.to_vec(), vec![0.0]);
    let s = Tensor::elementwise(ElementwiseOp::SignedSqrt, &Tensor::vector(&[-4.0, 9.0]), None)
        .unwrap();
    assert_eq!(s.to_vec(), vec![-2.0, 3.0]);
    let r = Tensor::vector(&[-1.0, 0.5]).relu();
    assert_eq!(r.to_vec(), vec![0.0, 0.5]);
    assert!((Tensor::vector(&[0.0]).sigmoid().to_vec()[0] - 0.5).abs() < 1e-15);
}

#[test]
fn elementwise_requires_equal_shapes() {
    let a = Tensor::vector(&[1.0, 2.0]);
    let b = Tensor::vector(&[1.0, 2.0, 3.0]);
    assert!(matches!(a.add(&b), Err(crate::Error::Dimension(_))));
    assert!(Tensor::elementwise(ElementwiseOp::Mul, &a, None).is_err());
}

#[test]
fn softmax_examples() {
    let s = Tensor::vector(&[0.0, 0.0]).softmax(0).unwrap();
    assert_eq!(s.to_vec(), vec![0.5, 0.5]);
    let s = Tensor::vector(&[1f64.ln(), 3f64.ln()]).softmax(0).unwrap().to_vec();
    assert!((s[0] - 0.25).abs() < 1e-15 && (s[1] - 0.75).abs() < 1e-15);

    let mut rng = Rng::new(11);
    let x = Tensor::randn(&[9], DType::F64, &mut rng).scale(10.0);
    assert!((x.softmax(0).unwrap().sum() - 1.0).abs() < 1e-12);
    assert!(x.softmax(1).is_err());
}

#[test]
fn softmax_propagates_nan() {
    let s = Tensor::vector(&[0.0, f64::NAN, 1.0]).softmax(0).unwrap();
    assert!(s.to_vec().iter().all(|x| x.is_nan()));
}

#[test]
fn softmax_inner_axis() {
    let x = Tensor::new(&[2, 3], vec![0.0, 1.0, 2.0, 0.0, 1.0, 2.0]).unwrap();
    let s = x.softmax(0).unwrap();
    assert!(s.to_vec().iter().all(|&v| (v - 0.5).abs() < 1e-15));
}

#[test]
fn sum_pool_examples() {
    let a = Tensor::vector(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(a.sum_pool_1d(2).unwrap().to_vec(), vec![3.0, 7.0]);
    assert_eq!(a.sum_pool_1d(1).unwrap(), a);
    assert_eq!(Tensor::vector(&[3.0, 8.0]).sum_pool_1d(2).unwrap().to_vec(), vec![11.0]);
    assert!(matches!(a.sum_pool_1d(3), Err(crate::Error::Dimension(_))));
}

#[test]
fn fft_inverts_at_16000() {
    let mut rng = Rng::new(16000);
    let x = Tensor::randn(&[16000], DType::F64, &mut rng);
    let spectrum = fft(&x).unwrap();
    let back = ifft_complex(&spectrum).unwrap();
    assert!(back.max_imag() <= 1e-9);
    let err = ifft(&spectrum).unwrap().max_abs_diff(&x).unwrap();
    assert!(err <= 1e-9, "round-trip error {err}");
}

#[test]
fn fft_circular_convolution_hand_case() {
    let x = Tensor::vector(&[1.0, 2.0, 0.0, 0.0]);
    let y = Tensor::vector(&[3.0, 4.0, 0.0, 0.0]);
    let oracle = naive_circular_convolution(&x.to_vec(), &y.to_vec());
    assert_eq!(oracle, vec![3.0, 10.0, 8.0, 0.0]);
    let conv = ifft(&fft(&x).unwrap().mul(&fft(&y).unwrap()).unwrap()).unwrap();
    for (a, b) in conv.to_vec().iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn fft_linearity_and_parseval() {
    for (i, &n) in [4usize, 100, 16000].iter().enumerate() {
        let mut rng = Rng::new(100 + i as u64);
        let x = Tensor::randn(&[n], DType::F64, &mut rng);
        let y = Tensor::randn(&[n], DType::F64, &mut rng);
        let (fx, fy) = (fft(&x).unwrap(), fft(&y).unwrap());
        let fsum = fft(&x.scale(2.0).add(&y).unwrap()).unwrap();
        let scale = fsum.re.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for j in 0..n {
            let re = 2.0 * fx.re[j] + fy.re[j];
            let im = 2.0 * fx.im[j] + fy.im[j];
            assert!((fsum.re[j] - re).abs() <= 1e-9 * scale);
            assert!((fsum.im[j] - im).abs() <= 1e-9 * scale);
        }
        let time: f64 = x.to_vec().iter().map(|v| v * v).sum();
        let freq: f64 = fx.re.iter().zip(&fx.im).map(|(a, b)| a * a + b * b).sum::<f64>() / n as f64;
        assert!(((time - freq) / time).abs() <= 1e-9, "n = {n}");
    }
}

#[test]
fn tile_and_group_sum_are_adjoint() {
    let q = Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let t = q.tile_rows(2).unwrap();
    assert_eq!(t.shape(), &[4, 3]);
    assert_eq!(t.to_vec()[3..6], [1.0, 2.0, 3.0]);
    assert_eq!(t.sum_row_groups(2).unwrap(), q.scale(2.0));
}

#[test]
fn concat_and_slice() {
    let a = Tensor::new(&[2, 1], vec![1.0, 2.0]).unwrap();
    let b = Tensor::new(&[2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
    let c = Tensor::concat_last(&[&a, &b]).unwrap();
    assert_eq!(c.to_vec(), vec![1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
    assert_eq!(c.slice_last(1, 2).unwrap(), b);
    assert!(c.slice_last(2, 2).is_err());
}

#[test]
fn bmm_and_swap() {
    let a = Tensor::new(&[2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let b = Tensor::new(&[2, 2, 1], vec![1.0, 1.0, 2.0, 0.0]).unwrap();
    assert_eq!(a.bmm(&b).unwrap().to_vec(), vec![3.0, 6.0]);
    let s = Tensor::new(&[1, 2, 3], (0..6).map(f64::from).collect()).unwrap();
    assert_eq!(s.swap_last_two().unwrap().to_vec(), vec![0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
}

#[test]
fn empty_batch_is_representable() {
    let a = Tensor::zeros(&[0, 4], DType::F64);
    let w = Tensor::zeros(&[4, 3], DType::F64);
    assert_eq!(a.matmul(&w).unwrap().shape(), &[0, 3]);
    assert!(Tensor::new(&[], vec![]).is_err());
}

proptest! {
    #[test]
    fn flatten_unflatten_round_trip(shape in prop::collection::vec(1usize..5, 1..5), seed in any::<u64>()) {
        let t = Tensor::zeros(&shape, DType::F64);
        let mut rng = Rng::new(seed);
        let off = rng.below(t.numel());
        let idx = t.unravel(off).unwrap();
        prop_assert_eq!(t.offset(&idx).unwrap(), off);
        prop_assert!(idx.iter().zip(&shape).all(|(i, n)| i < n));
    }

    #[test]
    fn matmul_is_associative(m in 1usize..6, k in 1usize..6, l in 1usize..6, n in 1usize..6, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let a = Tensor::randn(&[m, k], DType::F64, &mut rng);
        let b = Tensor::randn(&[k, l], DType::F64, &mut rng);
        let c = Tensor::randn(&[l, n], DType::F64, &mut rng);
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        prop_assert!(left.max_abs_diff(&right).unwrap() <= 1e-10);
    }

    #[test]
    fn softmax_is_a_distribution(len in 1usize..20, rows in 1usize..4, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let x = Tensor::randn(&[rows, len], DType::F64, &mut rng).scale(5.0);
        let s = x.softmax(1).unwrap();
        let xv = x.to_vec();
        let sv = s.to_vec();
        for r in 0..rows {
            let row = &sv[r * len..(r + 1) * len];
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            let argmax = |v: &[f64]| v.iter().enumerate().fold(0, |b, (i, &x)| if x > v[b] { i } else { b });
            prop_assert_eq!(argmax(row), argmax(&xv[r * len..(r + 1) * len]));
        }
    }

    #[test]
    fn sum_pool_preserves_total(k in 1usize..6, groups in 1usize..10, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let x = Tensor::randn(&[3, k * groups], DType::F64, &mut rng);
        let pooled = x.sum_pool_1d(k).unwrap();
        prop_assert!((pooled.sum() - x.sum()).abs() <= 1e-12);
    }
}
