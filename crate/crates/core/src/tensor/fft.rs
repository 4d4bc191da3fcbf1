//! Discrete Fourier transform for arbitrary lengths.
//!
//! Lengths whose prime factors are all small use a recursive mixed-radix
//! Cooley-Tukey decomposition (16000 = 2^7 · 5^3 takes this path). Lengths
//! with a large prime factor fall back to Bluestein's chirp-z algorithm,
//! which re-expresses the transform as a convolution of power-of-two length.
//!
//! Convention: `X[k] = Σ_n x[n] · exp(-2πi·kn/N)`; the inverse carries the
//! `1/N` factor.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::{ComplexTensor, DType, Tensor};
use crate::error::{Error, Result};

/// Largest prime factor handled directly by the mixed-radix path.
const MAX_DIRECT_RADIX: usize = 61;

#[derive(Debug, Clone)]
pub struct FftPlan {
    n: usize,
    algo: Algo,
}

#[derive(Debug, Clone)]
enum Algo {
    MixedRadix {
        factors: Vec<usize>,
        twiddles: Vec<Complex64>,
    },
    Bluestein {
        inner: Box<FftPlan>,
        chirp: Vec<Complex64>,
        kernel_spectrum: Vec<Complex64>,
    },
}

fn prime_factors(mut n: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut p = 2;
    while p * p <= n {
        while n.is_multiple_of(p) {
            out.push(p);
            n /= p;
        }
        p += 1;
    }
    if n > 1 {
        out.push(n);
    }
    out
}

fn twiddle(j: usize, n: usize) -> Complex64 {
    let theta = -2.0 * PI * (j as f64) / (n as f64);
    Complex64::new(theta.cos(), theta.sin())
}

impl FftPlan {
    pub fn new(n: usize) -> Result<FftPlan> {
        if n == 0 {
            return Err(Error::dim("fft length must be at least 1"));
        }
        let factors = prime_factors(n);
        if factors.iter().all(|&p| p <= MAX_DIRECT_RADIX) {
            let twiddles = (0..n).map(|j| twiddle(j, n)).collect();
            return Ok(FftPlan {
                n,
                algo: Algo::MixedRadix { factors, twiddles },
            });
        }

        let m = (2 * n - 1).next_power_of_two();
        let inner = FftPlan::new(m)?;
        // exp(-πi·j²/N), with j² reduced mod 2N to keep the angle small.
        let chirp: Vec<Complex64> = (0..n)
            .map(|j| {
                let jj = (j as u128 * j as u128 % (2 * n as u128)) as f64;
                let theta = -PI * jj / n as f64;
                Complex64::new(theta.cos(), theta.sin())
            })
            .collect();
        let mut kernel = vec![Complex64::new(0.0, 0.0); m];
        kernel[0] = chirp[0].conj();
        for j in 1..n {
            kernel[j] = chirp[j].conj();
            kernel[m - j] = chirp[j].conj();
        }
        inner.forward_in_place(&mut kernel);
        Ok(FftPlan {
            n,
            algo: Algo::Bluestein {
                inner: Box::new(inner),
                chirp,
                kernel_spectrum: kernel,
            },
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// True when the plan uses the chirp-z fallback.
    pub fn is_bluestein(&self) -> bool {
        matches!(self.algo, Algo::Bluestein { .. })
    }

    /// Forward transform, in place. Panics if `data.len() != self.len()`.
    pub fn forward_in_place(&self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.n, "fft buffer length");
        match &self.algo {
            Algo::MixedRadix { factors, twiddles } => {
                let input = data.to_vec();
                mixed_radix(&input, 1, self.n, factors, twiddles, 1, data);
            }
            Algo::Bluestein {
                inner,
                chirp,
                kernel_spectrum,
            } => {
                let m = inner.len();
                let mut work = vec![Complex64::new(0.0, 0.0); m];
                for ((w, &x), &c) in work.iter_mut().zip(data.iter()).zip(chirp) {
                    *w = x * c;
                }
                inner.forward_in_place(&mut work);
                for (w, &k) in work.iter_mut().zip(kernel_spectrum) {
                    *w *= k;
                }
                inner.inverse_in_place(&mut work);
                for ((d, &w), &c) in data.iter_mut().zip(&work).zip(chirp) {
                    *d = w * c;
                }
            }
        }
    }

    /// Inverse transform (with the `1/N` factor), in place.
    pub fn inverse_in_place(&self, data: &mut [Complex64]) {
        for x in data.iter_mut() {
            *x = x.conj();
        }
        self.forward_in_place(data);
        let scale = 1.0 / self.n as f64;
        for x in data.iter_mut() {
            *x = x.conj() * scale;
        }
    }
}

/// Decimation-in-time step: splits the length-`n` sequence
/// `input[0], input[stride], ...` into `p` interleaved subsequences, transforms
/// each recursively, then merges them with radix-`p` butterflies.
fn mixed_radix(
    input: &[Complex64],
    stride: usize,
    n: usize,
    factors: &[usize],
    twiddles: &[Complex64],
    tw_stride: usize,
    out: &mut [Complex64],
) {
    if n == 1 {
        out[0] = input[0];
        return;
    }
    let p = factors[0];
    let m = n / p;
    for r in 0..p {
        mixed_radix(
            &input[stride * r..],
            stride * p,
            m,
            &factors[1..],
            twiddles,
            tw_stride * p,
            &mut out[r * m..(r + 1) * m],
        );
    }
    // W_n^j lives at twiddles[j * tw_stride].
    let w = |j: usize| twiddles[(j % n) * tw_stride];
    let mut tmp = vec![Complex64::new(0.0, 0.0); p];
    for k in 0..m {
        for (r, t) in tmp.iter_mut().enumerate() {
            *t = out[r * m + k] * w(r * k);
        }
        if p == 2 {
            out[k] = tmp[0] + tmp[1];
            out[k + m] = tmp[0] - tmp[1];
            continue;
        }
        for s in 0..p {
            let mut acc = Complex64::new(0.0, 0.0);
            for (r, &t) in tmp.iter().enumerate() {
                acc += t * w(m * ((r * s) % p));
            }
            out[k + m * s] = acc;
        }
    }
}

/// Forward DFT of a rank-1 real tensor.
pub fn fft(a: &Tensor) -> Result<ComplexTensor> {
    a.expect_rank(1, "fft")?;
    let plan = FftPlan::new(a.numel())?;
    let mut buf: Vec<Complex64> = a.to_vec().into_iter().map(|x| Complex64::new(x, 0.0)).collect();
    plan.forward_in_place(&mut buf);
    Ok(ComplexTensor::from_complex(a.shape(), &buf))
}

/// Inverse DFT of a rank-1 complex tensor, keeping both components.
pub fn ifft_complex(a: &ComplexTensor) -> Result<ComplexTensor> {
    if a.shape().len() != 1 {
        return Err(Error::dim(format!("ifft: expected rank 1, got {:?}", a.shape())));
    }
    let plan = FftPlan::new(a.len())?;
    let mut buf = a.to_complex();
    plan.inverse_in_place(&mut buf);
    Ok(ComplexTensor::from_complex(a.shape(), &buf))
}

/// Inverse DFT returning the real part as an `f64` tensor. Use
/// [`ifft_complex`] to inspect the imaginary residue.
pub fn ifft(a: &ComplexTensor) -> Result<Tensor> {
    let full = ifft_complex(a)?;
    let shape = full.shape().to_vec();
    Tensor::from_f64_as(&shape, full.re, DType::F64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(j, &v)| v * twiddle((j * k) % n, n))
                    .sum()
            })
            .collect()
    }

    fn random_signal(n: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = Rng::new(seed);
        (0..n)
            .map(|_| Complex64::new(rng.standard_normal(), rng.standard_normal()))
            .collect()
    }

    #[test]
    fn matches_naive_dft_for_assorted_lengths() {
        // 97 and 2·101 exercise Bluestein; the rest are mixed radix.
        for &n in &[1usize, 2, 3, 4, 5, 6, 12, 30, 49, 64, 97, 100, 202, 250] {
            let x = random_signal(n, n as u64);
            let plan = FftPlan::new(n).unwrap();
            assert_eq!(plan.is_bluestein(), n == 97 || n == 202, "n = {n}");
            let mut y = x.clone();
            plan.forward_in_place(&mut y);
            let want = naive_dft(&x);
            for (a, b) in y.iter().zip(&want) {
                assert!((a - b).norm() < 1e-9 * (n as f64), "n = {n}");
            }
        }
    }

    #[test]
    fn impulse_is_flat() {
        let out = fft(&Tensor::vector(&[1.0, 0.0, 0.0, 0.0])).unwrap();
        assert_eq!(out.re, vec![1.0; 4]);
        assert!(out.im.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_length_is_rejected() {
        assert!(FftPlan::new(0).is_err());
    }
}
