//! Compact bilinear pooling. Each input is count-sketched to width `D`; the
//! sketch of the outer product `v ⊗ q` is the circular convolution of the
//! two sketches, computed as a product of spectra.
//!
//! With `normalize` set, the result passes through a signed square root and
//! per-sample L2 normalization.

use indexmap::IndexMap;
use num_complex::Complex64;

use super::{ForwardCache, Fusion, FusionFactory, FusionGrads, FusionSpec, Hyper, ParamSet};
use crate::complexity::FlopConvention;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};
use crate::tensor::fft::FftPlan;
use crate::tensor::Tensor;

/// Fixed hash bucket and sign per input coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchTable {
    h: Vec<usize>,
    s: Vec<f64>,
    width: usize,
}

impl SketchTable {
    pub fn random(input: usize, width: usize, rng: &mut Rng) -> SketchTable {
        let mut h = Vec::with_capacity(input);
        let mut s = Vec::with_capacity(input);
        for _ in 0..input {
            h.push(rng.below(width));
            s.push(rng.sign());
        }
        SketchTable { h, s, width }
    }

    /// `h` holds 0-based buckets below `width`; `s` holds ±1.
    pub fn from_parts(h: Vec<usize>, s: Vec<f64>, width: usize) -> Result<SketchTable> {
        if h.len() != s.len() {
            return Err(Error::dim("sketch table: h and s lengths differ"));
        }
        if let Some(&bad) = h.iter().find(|&&b| b >= width) {
            return Err(Error::config(format!(
                "sketch table: bucket {bad} out of range for width {width}"
            )));
        }
        if s.iter().any(|&x| x != 1.0 && x != -1.0) {
            return Err(Error::config("sketch table: signs must be +1 or -1"));
        }
        Ok(SketchTable { h, s, width })
    }

    pub fn buckets(&self) -> &[usize] {
        &self.h
    }

    pub fn signs(&self) -> &[f64] {
        &self.s
    }

    pub fn input_width(&self) -> usize {
        self.h.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `out[b, h(i)] += s(i)·x[b, i]`, as a row-major `f64` buffer.
    fn apply_rows(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let d = self.h.len();
        let mut out = vec![0.0; rows * self.width];
        for r in 0..rows {
            let (src, dst) = (&x[r * d..(r + 1) * d], &mut out[r * self.width..(r + 1) * self.width]);
            for ((&xi, &hi), &si) in src.iter().zip(&self.h).zip(&self.s) {
                dst[hi] += si * xi;
            }
        }
        out
    }

    /// Count sketch of every row of `x: B×d`, returned as `B×D` in `f64`.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 2 || x.shape()[1] != self.h.len() {
            return Err(Error::dim(format!(
                "count sketch: input {:?} does not match table width {}",
                x.shape(),
                self.h.len()
            )));
        }
        let rows = x.shape()[0];
        Tensor::new(&[rows, self.width], self.apply_rows(&x.to_vec(), rows))
    }

    /// Transpose of the sketch: `out[b, i] = s(i)·g[b, h(i)]`.
    fn adjoint_rows(&self, g: &[f64], rows: usize) -> Vec<f64> {
        let d = self.h.len();
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            let src = &g[r * self.width..(r + 1) * self.width];
            for (i, o) in out[r * d..(r + 1) * d].iter_mut().enumerate() {
                *o = self.s[i] * src[self.h[i]];
            }
        }
        out
    }
}

#[derive(Debug)]
pub struct Mcb {
    spec: FusionSpec,
    params: ParamSet,
    sketch_v: SketchTable,
    sketch_q: SketchTable,
    plan: FftPlan,
}

fn dims(spec: &FusionSpec) -> (usize, bool) {
    match spec.hyper {
        Hyper::Mcb { d, normalize } => (d, normalize),
        _ => unreachable!("MCB built from a non-MCB spec"),
    }
}

fn l2_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn signed_sqrt(x: f64) -> f64 {
    x.signum() * x.abs().sqrt()
}

impl Mcb {
    pub fn new(spec: &FusionSpec) -> Result<Mcb> {
        let (d, _) = dims(spec);
        let sketch_v = SketchTable::random(spec.d_v, d, &mut Rng::new(derive_seed(spec.seed, "sketch_v")));
        let sketch_q = SketchTable::random(spec.d_q, d, &mut Rng::new(derive_seed(spec.seed, "sketch_q")));
        Mcb::with_sketches(spec, sketch_v, sketch_q)
    }

    /// Builds with caller-supplied tables instead of seeded ones.
    pub fn with_sketches(spec: &FusionSpec, sketch_v: SketchTable, sketch_q: SketchTable) -> Result<Mcb> {
        spec.validate()?;
        let (d, _) = dims(spec);
        if sketch_v.input_width() != spec.d_v
            || sketch_q.input_width() != spec.d_q
            || sketch_v.width() != d
            || sketch_q.width() != d
        {
            return Err(Error::dim(format!(
                "MCB: sketch tables ({}→{}, {}→{}) do not match spec ({}→{d}, {}→{d})",
                sketch_v.input_width(),
                sketch_v.width(),
                sketch_q.input_width(),
                sketch_q.width(),
                spec.d_v,
                spec.d_q
            )));
        }
        Ok(Mcb {
            spec: spec.clone(),
            params: ParamSet::new(),
            sketch_v,
            sketch_q,
            plan: FftPlan::new(d)?,
        })
    }

    pub fn sketch_v(&self) -> &SketchTable {
        &self.sketch_v
    }

    pub fn sketch_q(&self) -> &SketchTable {
        &self.sketch_q
    }

    fn spectrum(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        self.plan.forward_in_place(&mut buf);
        buf
    }

    /// Real part of the inverse transform of `x ⊙ y` (or `x ⊙ conj(y)`).
    fn spectral_product(&self, x: &[Complex64], y: &[Complex64], conj: bool) -> Vec<f64> {
        let mut buf: Vec<Complex64> = x
            .iter()
            .zip(y)
            .map(|(&a, &b)| if conj { a * b.conj() } else { a * b })
            .collect();
        self.plan.inverse_in_place(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }

    fn to_dtype(&self, shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Tensor::from_f64_as(shape, data, self.spec.dtype)
    }
}

impl Fusion for Mcb {
    fn spec(&self) -> &FusionSpec {
        &self.spec
    }

    fn forward(&self, v: &Tensor, q: &Tensor) -> Result<(Tensor, ForwardCache)> {
        let rows = self.spec.check_inputs(v, q)?;
        let (d, normalize) = dims(&self.spec);
        let a = self.sketch_v.apply_rows(&v.to_vec(), rows);
        let b = self.sketch_q.apply_rows(&q.to_vec(), rows);
        let mut raw = Vec::with_capacity(rows * d);
        for r in 0..rows {
            let fa = self.spectrum(&a[r * d..(r + 1) * d]);
            let fb = self.spectrum(&b[r * d..(r + 1) * d]);
            raw.extend(self.spectral_product(&fa, &fb, false));
        }
        let out = if normalize {
            let mut y: Vec<f64> = raw.iter().map(|&x| signed_sqrt(x)).collect();
            for row in y.chunks_exact_mut(d) {
                let n = l2_norm(row);
                // NaN rows keep propagating; an all-zero row stays zero.
                if n > 0.0 || n.is_nan() {
                    row.iter_mut().for_each(|x| *x /= n);
                }
            }
            y
        } else {
            raw.clone()
        };
        let shape = [rows, d];
        let out = self.to_dtype(&shape, out)?;
        let saved = vec![
            Tensor::new(&shape, a)?,
            Tensor::new(&shape, b)?,
            Tensor::new(&shape, raw)?,
        ];
        let cache = ForwardCache::new(&self.params, &out, saved);
        Ok((out, cache))
    }

    fn backward(&self, cache: &ForwardCache, g: &Tensor) -> Result<FusionGrads> {
        cache.check(&self.params, g)?;
        let (d, normalize) = dims(&self.spec);
        let [a, b, raw] = &cache.saved[..] else {
            unreachable!("MCB cache layout")
        };
        let rows = a.shape()[0];
        let (a, b, raw) = (a.to_vec(), b.to_vec(), raw.to_vec());
        let mut gz = g.to_vec();
        if normalize {
            for r in 0..rows {
                let span = r * d..(r + 1) * d;
                let y: Vec<f64> = raw[span.clone()].iter().map(|&x| signed_sqrt(x)).collect();
                let n = l2_norm(&y);
                let gr = &mut gz[span];
                if n == 0.0 {
                    gr.iter_mut().for_each(|x| *x = 0.0);
                    continue;
                }
                // out = y / ‖y‖, so dy = (g - out·⟨out, g⟩) / ‖y‖.
                let dot: f64 = y.iter().zip(gr.iter()).map(|(yi, gi)| yi * gi).sum::<f64>() / n;
                for (gi, &yi) in gr.iter_mut().zip(&y) {
                    let dy = (*gi - yi / n * dot) / n;
                    let r = yi.abs();
                    *gi = if r > 0.0 { dy * 0.5 / r } else { 0.0 };
                }
            }
        }
        let mut da = Vec::with_capacity(rows * d);
        let mut db = Vec::with_capacity(rows * d);
        for r in 0..rows {
            let span = r * d..(r + 1) * d;
            let fg = self.spectrum(&gz[span.clone()]);
            let fa = self.spectrum(&a[span.clone()]);
            let fb = self.spectrum(&b[span]);
            da.extend(self.spectral_product(&fg, &fb, true));
            db.extend(self.spectral_product(&fg, &fa, true));
        }
        let dv = self.sketch_v.adjoint_rows(&da, rows);
        let dq = self.sketch_q.adjoint_rows(&db, rows);
        Ok(FusionGrads {
            v: self.to_dtype(&[rows, self.spec.d_v], dv)?,
            q: self.to_dtype(&[rows, self.spec.d_q], dq)?,
            params: IndexMap::new(),
        })
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn frozen_state(&self) -> Vec<(String, usize)> {
        vec![
            ("sketch_v.h".into(), self.sketch_v.h.len()),
            ("sketch_v.s".into(), self.sketch_v.s.len()),
            ("sketch_q.h".into(), self.sketch_q.h.len()),
            ("sketch_q.s".into(), self.sketch_q.s.len()),
        ]
    }
}

pub(super) struct Factory;

impl FusionFactory for Factory {
    fn name(&self) -> &'static str {
        "mcb"
    }

    fn build(&self, spec: &FusionSpec) -> Result<Box<dyn Fusion>> {
        Ok(Box::new(Mcb::new(spec)?))
    }

    fn param_count(&self, _spec: &FusionSpec) -> u64 {
        0
    }

    fn flop_count(&self, spec: &FusionSpec, c: &FlopConvention) -> u64 {
        let (d, normalize) = dims(spec);
        let d = d as u64;
        let base = c.count_sketch(spec.d_v as u64)
            + c.count_sketch(spec.d_q as u64)
            + 3 * c.fft(d)
            + c.complex_mul(d);
        if normalize {
            base + c.transcendental(d) + c.l2_normalize(d)
        } else {
            base
        }
    }
}
