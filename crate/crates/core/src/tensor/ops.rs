use super::{map_storage, zip_storage, Element, Storage, Tensor};
use crate::error::{Error, Result};

/// Pointwise operations exposed through [`Tensor::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Mul,
    Tanh,
    Sigmoid,
    Relu,
    SignedSqrt,
}

impl ElementwiseOp {
    pub fn is_binary(self) -> bool {
        matches!(self, ElementwiseOp::Add | ElementwiseOp::Mul)
    }
}

/// Differentiable unary nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Relu,
    SignedSqrt,
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "relu" => Ok(Activation::Relu),
            "signed_sqrt" | "signed-sqrt" => Ok(Activation::SignedSqrt),
            other => Err(Error::config(format!("unknown activation '{other}'"))),
        }
    }
}

fn map<T: Element>(v: &[T], f: impl Fn(T) -> T) -> Vec<T> {
    v.iter().map(|&x| f(x)).collect()
}

fn zip<T: Element>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn sigmoid<T: Element>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn signed_sqrt<T: Element>(x: T) -> T {
    if x.is_nan() {
        x
    } else if x < T::zero() {
        -(-x).sqrt()
    } else {
        x.sqrt()
    }
}

/// `c = a · b` for row-major `a: m×k`, `b: k×n`.
///
/// Every output accumulates its products in ascending `k`, starting from
/// zero, so results are bit-identical to the textbook triple loop. Blocking
/// only reorders which outputs are touched when.
pub(crate) fn matmul_kernel<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    const KB: usize = 128;
    const NB: usize = 512;
    let mut c = vec![T::zero(); m * n];
    if m == 0 || n == 0 {
        return c;
    }
    for j0 in (0..n).step_by(NB) {
        let j1 = (j0 + NB).min(n);
        for k0 in (0..k).step_by(KB) {
            let k1 = (k0 + KB).min(k);
            let mut i = 0;
            while i + 4 <= m {
                let block = &mut c[i * n..(i + 4) * n];
                let (r0, rest) = block.split_at_mut(n);
                let (r1, rest) = rest.split_at_mut(n);
                let (r2, r3) = rest.split_at_mut(n);
                let (r0, r1, r2, r3) = (
                    &mut r0[j0..j1],
                    &mut r1[j0..j1],
                    &mut r2[j0..j1],
                    &mut r3[j0..j1],
                );
                for kk in k0..k1 {
                    let a0 = a[i * k + kk];
                    let a1 = a[(i + 1) * k + kk];
                    let a2 = a[(i + 2) * k + kk];
                    let a3 = a[(i + 3) * k + kk];
                    let brow = &b[kk * n + j0..kk * n + j1];
                    for ((((x0, x1), x2), x3), &bv) in r0
                        .iter_mut()
                        .zip(r1.iter_mut())
                        .zip(r2.iter_mut())
                        .zip(r3.iter_mut())
                        .zip(brow)
                    {
                        *x0 = *x0 + a0 * bv;
                        *x1 = *x1 + a1 * bv;
                        *x2 = *x2 + a2 * bv;
                        *x3 = *x3 + a3 * bv;
                    }
                }
                i += 4;
            }
            while i < m {
                let row = &mut c[i * n + j0..i * n + j1];
                for kk in k0..k1 {
                    let av = a[i * k + kk];
                    let brow = &b[kk * n + j0..kk * n + j1];
                    for (x, &bv) in row.iter_mut().zip(brow) {
                        *x = *x + av * bv;
                    }
                }
                i += 1;
            }
        }
    }
    c
}

fn transpose_kernel<T: Element>(a: &[T], m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

fn softmax_kernel<T: Element>(a: &[T], outer: usize, len: usize, inner: usize) -> Vec<T> {
    let mut out = vec![T::zero(); a.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |t: usize| (o * len + t) * inner + i;
            let mut max = T::neg_infinity();
            let mut nan = false;
            for t in 0..len {
                let x = a[idx(t)];
                nan |= x.is_nan();
                if x > max {
                    max = x;
                }
            }
            if nan {
                for t in 0..len {
                    out[idx(t)] = T::nan();
                }
                continue;
            }
            let mut total = T::zero();
            for t in 0..len {
                let e = (a[idx(t)] - max).exp();
                out[idx(t)] = e;
                total = total + e;
            }
            for t in 0..len {
                out[idx(t)] = out[idx(t)] / total;
            }
        }
    }
    out
}

fn sum_pool_kernel<T: Element>(a: &[T], k: usize) -> Vec<T> {
    a.chunks_exact(k)
        .map(|w| w.iter().fold(T::zero(), |s, &x| s + x))
        .collect()
}

fn repeat_kernel<T: Element>(a: &[T], k: usize) -> Vec<T> {
    a.iter()
        .flat_map(|&x| std::iter::repeat_n(x, k))
        .collect()
}

fn tile_rows_kernel<T: Element>(a: &[T], cols: usize, times: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(a.len() * times);
    for row in a.chunks_exact(cols.max(1)) {
        for _ in 0..times {
            out.extend_from_slice(row);
        }
    }
    out
}

fn sum_row_groups_kernel<T: Element>(a: &[T], cols: usize, group: usize) -> Vec<T> {
    let rows = a.len().checked_div(cols).unwrap_or(0);
    let mut out = vec![T::zero(); rows / group * cols];
    for (r, row) in a.chunks_exact(cols.max(1)).enumerate() {
        let dst = &mut out[(r / group) * cols..(r / group + 1) * cols];
        for (d, &x) in dst.iter_mut().zip(row) {
            *d = *d + x;
        }
    }
    out
}

fn add_row_vector_kernel<T: Element>(a: &[T], bias: &[T]) -> Vec<T> {
    let mut out = a.to_vec();
    for row in out.chunks_exact_mut(bias.len().max(1)) {
        for (x, &b) in row.iter_mut().zip(bias) {
            *x = *x + b;
        }
    }
    out
}

fn column_sums_kernel<T: Element>(a: &[T], cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); cols];
    for row in a.chunks_exact(cols.max(1)) {
        for (s, &x) in out.iter_mut().zip(row) {
            *s = *s + x;
        }
    }
    out
}

fn concat_last_kernel<T: Element>(parts: &[&[T]], widths: &[usize], rows: usize) -> Vec<T> {
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for (p, &w) in parts.iter().zip(widths) {
            out.extend_from_slice(&p[r * w..(r + 1) * w]);
        }
    }
    out
}

fn slice_last_kernel<T: Element>(a: &[T], cols: usize, start: usize, len: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(a.len() / cols.max(1) * len);
    for row in a.chunks_exact(cols.max(1)) {
        out.extend_from_slice(&row[start..start + len]);
    }
    out
}

fn bmm_kernel<T: Element>(a: &[T], b: &[T], batch: usize, m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(batch * m * n);
    for i in 0..batch {
        out.extend(matmul_kernel(
            &a[i * m * k..(i + 1) * m * k],
            &b[i * k * n..(i + 1) * k * n],
            m,
            k,
            n,
        ));
    }
    out
}

fn swap_last_two_kernel<T: Element>(a: &[T], batch: usize, m: usize, n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(a.len());
    for i in 0..batch {
        out.extend(transpose_kernel(&a[i * m * n..(i + 1) * m * n], m, n));
    }
    out
}

impl Tensor {
    /// Matrix product of `self: m×k` and `other: k×n`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::dim(format!(
                "matmul: cannot multiply {:?} by {:?}",
                self.shape, other.shape
            )));
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let data = zip_storage!(&self.data, &other.data, a, b => matmul_kernel(a, b, m, k, n))?;
        Tensor::from_storage(vec![m, n], data)
    }

    /// Batched product of `self: B×m×k` and `other: B×k×n`.
    pub fn bmm(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 3
            || other.rank() != 3
            || self.shape[0] != other.shape[0]
            || self.shape[2] != other.shape[1]
        {
            return Err(Error::dim(format!(
                "bmm: cannot multiply {:?} by {:?}",
                self.shape, other.shape
            )));
        }
        let (bt, m, k, n) = (self.shape[0], self.shape[1], self.shape[2], other.shape[2]);
        let data =
            zip_storage!(&self.data, &other.data, a, b => bmm_kernel(a, b, bt, m, k, n))?;
        Tensor::from_storage(vec![bt, m, n], data)
    }

    /// Transpose of a matrix.
    pub fn transpose(&self) -> Result<Tensor> {
        self.expect_rank(2, "transpose")?;
        let (m, n) = (self.shape[0], self.shape[1]);
        let data = map_storage!(&self.data, v => transpose_kernel(v, m, n));
        Tensor::from_storage(vec![n, m], data)
    }

    /// Swaps the two trailing axes of a rank-3 tensor.
    pub fn swap_last_two(&self) -> Result<Tensor> {
        self.expect_rank(3, "swap_last_two")?;
        let (b, m, n) = (self.shape[0], self.shape[1], self.shape[2]);
        let data = map_storage!(&self.data, v => swap_last_two_kernel(v, b, m, n));
        Tensor::from_storage(vec![b, n, m], data)
    }

    /// Pointwise unary or binary operation. Binary ops require `b` with an
    /// identical shape; there is no broadcasting.
    pub fn elementwise(op: ElementwiseOp, a: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
        match (op.is_binary(), b) {
            (true, Some(b)) => match op {
                ElementwiseOp::Add => a.add(b),
                _ => a.mul(b),
            },
            (true, None) => Err(Error::dim(format!("{op:?} needs two operands"))),
            (false, None) => Ok(a.activate(match op {
                ElementwiseOp::Tanh => Activation::Tanh,
                ElementwiseOp::Sigmoid => Activation::Sigmoid,
                ElementwiseOp::Relu => Activation::Relu,
                _ => Activation::SignedSqrt,
            })),
            (false, Some(_)) => Err(Error::dim(format!("{op:?} takes one operand"))),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "add")?;
        let data = zip_storage!(&self.data, &other.data, a, b => zip(a, b, |x, y| x + y))?;
        Tensor::from_storage(self.shape.clone(), data)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "sub")?;
        let data = zip_storage!(&self.data, &other.data, a, b => zip(a, b, |x, y| x - y))?;
        Tensor::from_storage(self.shape.clone(), data)
    }

    /// Hadamard product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "mul")?;
        let data = zip_storage!(&self.data, &other.data, a, b => zip(a, b, |x, y| x * y))?;
        Tensor::from_storage(self.shape.clone(), data)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let data = match &self.data {
            Storage::F32(v) => Storage::F32(map(v, |x| x * c as f32)),
            Storage::F64(v) => Storage::F64(map(v, |x| x * c)),
        };
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    /// `self -= lr * grad`, in place.
    pub fn axpy_in_place(&mut self, alpha: f64, x: &Tensor) -> Result<()> {
        self.same_shape(x, "axpy")?;
        match (&mut self.data, &x.data) {
            (Storage::F32(a), Storage::F32(b)) => {
                let alpha = alpha as f32;
                a.iter_mut().zip(b).for_each(|(p, &g)| *p += alpha * g);
            }
            (Storage::F64(a), Storage::F64(b)) => {
                a.iter_mut().zip(b).for_each(|(p, &g)| *p += alpha * g);
            }
            _ => unreachable!("dtype checked above"),
        }
        Ok(())
    }

    pub fn activate(&self, act: Activation) -> Tensor {
        let data = match act {
            Activation::Tanh => map_storage!(&self.data, v => map(v, |x| x.tanh())),
            Activation::Sigmoid => map_storage!(&self.data, v => map(v, sigmoid)),
            Activation::Relu => {
                map_storage!(&self.data, v => map(v, |x| if x > 0.0 || x.is_nan() { x } else { 0.0 }))
            }
            Activation::SignedSqrt => map_storage!(&self.data, v => map(v, signed_sqrt)),
        };
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    pub fn tanh(&self) -> Tensor {
        self.activate(Activation::Tanh)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.activate(Activation::Sigmoid)
    }

    pub fn relu(&self) -> Tensor {
        self.activate(Activation::Relu)
    }

    pub fn signed_sqrt(&self) -> Tensor {
        self.activate(Activation::SignedSqrt)
    }

    /// Gradient of an activation given its input, its output and the
    /// upstream gradient. The signed square root uses 0 as its derivative at
    /// exactly 0.
    pub fn activation_backward(
        act: Activation,
        input: &Tensor,
        output: &Tensor,
        grad: &Tensor,
    ) -> Result<Tensor> {
        input.same_shape(grad, "activation_backward")?;
        output.same_shape(grad, "activation_backward")?;
        let local = match act {
            Activation::Tanh => map_storage!(&output.data, y => map(y, |y| 1.0 - y * y)),
            Activation::Sigmoid => map_storage!(&output.data, y => map(y, |y| y * (1.0 - y))),
            Activation::Relu => {
                map_storage!(&input.data, x => map(x, |x| if x > 0.0 { 1.0 } else { 0.0 }))
            }
            Activation::SignedSqrt => map_storage!(&output.data, y => map(y, |y| {
                let r = y.abs();
                if r > 0.0 { 0.5 / r } else { 0.0 }
            })),
        };
        let local = Tensor {
            shape: grad.shape.clone(),
            data: local,
        };
        local.mul(grad)
    }

    /// Numerically stable softmax along `axis`. A slice containing NaN
    /// yields NaN throughout that slice.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(Error::dim(format!(
                "softmax: axis {axis} out of range for shape {:?}",
                self.shape
            )));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let len = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let data = map_storage!(&self.data, v => softmax_kernel(v, outer, len, inner));
        Tensor::from_storage(self.shape.clone(), data)
    }

    /// Softmax backward along the last axis given the softmax output.
    pub fn softmax_backward_last(output: &Tensor, grad: &Tensor) -> Result<Tensor> {
        output.same_shape(grad, "softmax_backward")?;
        let n = output.last_dim();
        let y = output.to_vec();
        let g = grad.to_vec();
        let mut out = vec![0.0; y.len()];
        for ((yr, gr), or) in y
            .chunks_exact(n.max(1))
            .zip(g.chunks_exact(n.max(1)))
            .zip(out.chunks_exact_mut(n.max(1)))
        {
            let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
            for ((o, &yi), &gi) in or.iter_mut().zip(yr).zip(gr) {
                *o = yi * (gi - dot);
            }
        }
        Tensor::from_f64_as(output.shape(), out, output.dtype())
    }

    /// Sums non-overlapping windows of `k` along the last axis.
    pub fn sum_pool_1d(&self, k: usize) -> Result<Tensor> {
        let last = self.last_dim();
        if k == 0 || !last.is_multiple_of(k) {
            return Err(Error::dim(format!(
                "sum_pool_1d: last extent {last} is not divisible by window {k}"
            )));
        }
        let mut shape = self.shape.clone();
        *shape.last_mut().expect("rank >= 1") = last / k;
        let data = map_storage!(&self.data, v => sum_pool_kernel(v, k));
        Tensor::from_storage(shape, data)
    }

    /// Adjoint of [`Tensor::sum_pool_1d`]: repeats each last-axis entry `k`
    /// times.
    pub fn repeat_last(&self, k: usize) -> Result<Tensor> {
        if k == 0 {
            return Err(Error::dim("repeat_last: k must be positive"));
        }
        let mut shape = self.shape.clone();
        *shape.last_mut().expect("rank >= 1") *= k;
        let data = map_storage!(&self.data, v => repeat_kernel(v, k));
        Tensor::from_storage(shape, data)
    }

    /// Adds a length-`n` vector to every row of a `[.., n]` tensor.
    pub fn add_row_vector(&self, bias: &Tensor) -> Result<Tensor> {
        if bias.rank() != 1 || bias.shape[0] != self.last_dim() || bias.dtype() != self.dtype() {
            return Err(Error::dim(format!(
                "add_row_vector: bias {:?} does not fit rows of {:?}",
                bias.shape, self.shape
            )));
        }
        let data = zip_storage!(&self.data, &bias.data, a, b => add_row_vector_kernel(a, b))?;
        Tensor::from_storage(self.shape.clone(), data)
    }

    /// Sums over all leading axes, leaving a vector of the last extent.
    pub fn column_sums(&self) -> Tensor {
        let cols = self.last_dim();
        let data = map_storage!(&self.data, v => column_sums_kernel(v, cols));
        Tensor {
            shape: vec![cols],
            data,
        }
    }

    /// Repeats every row of a matrix `times` times consecutively:
    /// `[B, d] -> [B·times, d]`.
    pub fn tile_rows(&self, times: usize) -> Result<Tensor> {
        self.expect_rank(2, "tile_rows")?;
        let cols = self.shape[1];
        let data = map_storage!(&self.data, v => tile_rows_kernel(v, cols, times));
        Tensor::from_storage(vec![self.shape[0] * times, cols], data)
    }

    /// Adjoint of [`Tensor::tile_rows`]: sums consecutive groups of rows.
    pub fn sum_row_groups(&self, group: usize) -> Result<Tensor> {
        self.expect_rank(2, "sum_row_groups")?;
        if group == 0 || !self.shape[0].is_multiple_of(group) {
            return Err(Error::dim(format!(
                "sum_row_groups: {} rows not divisible into groups of {group}",
                self.shape[0]
            )));
        }
        let cols = self.shape[1];
        let data = map_storage!(&self.data, v => sum_row_groups_kernel(v, cols, group));
        Tensor::from_storage(vec![self.shape[0] / group, cols], data)
    }

    /// Concatenates along the last axis; leading shapes must agree.
    pub fn concat_last(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat_last: no inputs"))?;
        let lead = &first.shape[..first.rank() - 1];
        for p in parts {
            if &p.shape[..p.rank() - 1] != lead || p.dtype() != first.dtype() {
                return Err(Error::dim(format!(
                    "concat_last: incompatible {:?} and {:?}",
                    first.shape, p.shape
                )));
            }
        }
        let rows = first.rows();
        let widths: Vec<usize> = parts.iter().map(|p| p.last_dim()).collect();
        let mut shape = first.shape.clone();
        *shape.last_mut().expect("rank >= 1") = widths.iter().sum();
        let data = match first.dtype() {
            super::DType::F32 => {
                let slices: Vec<&[f32]> = parts
                    .iter()
                    .map(|p| match &p.data {
                        Storage::F32(v) => v.as_slice(),
                        Storage::F64(_) => unreachable!(),
                    })
                    .collect();
                Storage::F32(concat_last_kernel(&slices, &widths, rows))
            }
            super::DType::F64 => {
                let slices: Vec<&[f64]> = parts
                    .iter()
                    .map(|p| match &p.data {
                        Storage::F64(v) => v.as_slice(),
                        Storage::F32(_) => unreachable!(),
                    })
                    .collect();
                Storage::F64(concat_last_kernel(&slices, &widths, rows))
            }
        };
        Tensor::from_storage(shape, data)
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice_last(&self, start: usize, len: usize) -> Result<Tensor> {
        let cols = self.last_dim();
        if start + len > cols {
            return Err(Error::dim(format!(
                "slice_last: {start}..{} exceeds extent {cols}",
                start + len
            )));
        }
        let mut shape = self.shape.clone();
        *shape.last_mut().expect("rank >= 1") = len;
        let data = map_storage!(&self.data, v => slice_last_kernel(v, cols, start, len));
        Tensor::from_storage(shape, data)
    }

    /// Mean over axis 1 of a `[B, G, d]` tensor.
    pub fn mean_axis1(&self) -> Result<Tensor> {
        self.expect_rank(3, "mean_axis1")?;
        let (b, g, d) = (self.shape[0], self.shape[1], self.shape[2]);
        self.reshape(&[b * g, d])?
            .sum_row_groups(g)
            .map(|t| t.scale(1.0 / g as f64))
    }
}
