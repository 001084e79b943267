use std::sync::Arc;

use super::{gelu_scalar, Op, Segments, Tape, Tensor, Var, LAYER_NORM_EPS};
use crate::error::{Error, Result};

/// `c = a·b + beta·c` for row-major buffers, with either operand optionally
/// read transposed. `a` is `m×k` and `b` is `k×n` after transposition.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x *= beta);
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: extents were asserted above and the strides describe exactly
    // the row-major (or transposed) layout of each buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn dims2(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::invalid(op, format!("expected a matrix, got shape {:?}", s))),
    }
}

impl Tape {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor {
            shape: av.shape().to_vec(),
            data,
        };
        let rg = self.any_grad(&[a, b]);
        self.push(value, op, rg)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let av = self.value(a);
        let value = Tensor {
            shape: av.shape().to_vec(),
            data: av.data().iter().map(|x| f(*x)).collect(),
        };
        let rg = self.any_grad(&[a]);
        self.push(value, op, rg)
    }

    /// Matrix product `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self.value(a), "matmul")?;
        let (k2, n) = dims2(self.value(b), "matmul")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, 0.0, &mut out);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    /// Row-wise linear map `x[n×i] · w[o×i]ᵀ`, i.e. `W·x` for every row `x`.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        let (n, i) = dims2(self.value(x), "linear")?;
        let (o, i2) = dims2(self.value(w), "linear")?;
        if i != i2 {
            return Err(Error::ShapeMismatch {
                op: "linear",
                lhs: vec![n, i],
                rhs: vec![o, i2],
            });
        }
        let mut out = vec![0.0; n * o];
        gemm(n, i, o, self.value(x).data(), false, self.value(w).data(), true, 0.0, &mut out);
        let rg = self.any_grad(&[x, w]);
        Ok(self.push(Tensor::matrix(n, o, out)?, Op::Linear(x, w), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::Scale(a, c), |x| x * c)
    }

    /// Adds the vector `b[d]` to every row of `x[..×d]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let d = self.value(x).cols();
        if self.shape(b) != [d] {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let xv = self.value(x);
        let bv = self.value(b).data();
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(d) {
            row.iter_mut().zip(bv).for_each(|(r, b)| *r += b);
        }
        let value = Tensor {
            shape: xv.shape().to_vec(),
            data,
        };
        let rg = self.any_grad(&[x, b]);
        Ok(self.push(value, Op::AddBias(x, b), rg))
    }

    /// `0.5x(1 + tanh(√(2/π)(x + 0.044715x³)))`, elementwise.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.map(x, Op::Gelu(x), gelu_scalar)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, Op::Tanh(x), f64::tanh)
    }

    /// Normalizes each row over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let d = self.value(x).cols();
        if self.value(x).shape().is_empty() || d < 2 {
            return Err(Error::invalid(
                "layer_norm",
                format!("last axis must have at least 2 entries, got shape {:?}", self.shape(x)),
            ));
        }
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(gain).to_vec(),
            });
        }
        let xv = self.value(x);
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let rows = xv.rows();
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let value = Tensor {
            shape: xv.shape().to_vec(),
            data: out,
        };
        let rg = self.any_grad(&[x, gain, bias]);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Softmax over the last axis. Where `mask` is given, entries with
    /// `mask == false` are excluded and come out exactly zero.
    pub fn softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let xv = self.value(x);
        if let Some(m) = mask {
            if m.len() != xv.len() {
                return Err(Error::ShapeMismatch {
                    op: "softmax",
                    lhs: xv.shape().to_vec(),
                    rhs: vec![m.len()],
                });
            }
        }
        let d = xv.cols();
        let mut out = vec![0.0; xv.len()];
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let keep = |j: usize| mask.is_none_or(|m| m[r * d + j]);
            let max = (0..d)
                .filter(|&j| keep(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::invalid("softmax", format!("row {} has every entry masked", r)));
            }
            let mut z = 0.0;
            for j in (0..d).filter(|&j| keep(j)) {
                let e = (row[j] - max).exp();
                out[r * d + j] = e;
                z += e;
            }
            out[r * d..(r + 1) * d].iter_mut().for_each(|v| *v /= z);
        }
        let value = Tensor {
            shape: xv.shape().to_vec(),
            data: out,
        };
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Softmax(x), rg))
    }

    /// Scaled dot-product attention restricted to per-query key groups.
    ///
    /// For query row `i`, attends over the key/value rows listed in
    /// `segments.group(i)` with weights `softmax(q_i·k_j / √d)` where `d` is
    /// the query width.
    pub fn segment_attend(&mut self, q: Var, k: Var, v: Var, segments: Arc<Segments>) -> Result<Var> {
        self.segment_attend_heads(q, k, v, segments, 1)
    }

    /// [`Tape::segment_attend`] for `heads` independent heads stored side by
    /// side: head `h` reads columns `h·w..(h+1)·w` of `q`, `k` and `v` and
    /// writes the same columns of the output. Equivalent to attending per
    /// head and concatenating the results.
    pub fn segment_attend_heads(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        segments: Arc<Segments>,
        heads: usize,
    ) -> Result<Var> {
        let (nq, d) = dims2(self.value(q), "segment_attend")?;
        let (nk, dk) = dims2(self.value(k), "segment_attend")?;
        let (nv, dv) = dims2(self.value(v), "segment_attend")?;
        if dk != d {
            return Err(Error::ShapeMismatch {
                op: "segment_attend",
                lhs: vec![nq, d],
                rhs: vec![nk, dk],
            });
        }
        if nv != nk {
            return Err(Error::ShapeMismatch {
                op: "segment_attend",
                lhs: vec![nk, dk],
                rhs: vec![nv, dv],
            });
        }
        if heads == 0 || d % heads != 0 || dv % heads != 0 {
            return Err(Error::invalid(
                "segment_attend",
                format!("widths {} and {} are not divisible into {} heads", d, dv, heads),
            ));
        }
        if segments.len() != nq {
            return Err(Error::invalid(
                "segment_attend",
                format!("{} groups for {} queries", segments.len(), nq),
            ));
        }
        if let Some(&bad) = segments.indices().iter().find(|&&j| j >= nk) {
            return Err(Error::invalid(
                "segment_attend",
                format!("key row {} out of range ({} rows)", bad, nk),
            ));
        }
        if let Some(i) = (0..nq).find(|&i| segments.group(i).is_empty()) {
            return Err(Error::invalid(
                "segment_attend",
                format!("query {} has an empty key group", i),
            ));
        }
        let (hd, hv) = (d / heads, dv / heads);
        let scale = 1.0 / (hd as f64).sqrt();
        let qd = self.value(q).data();
        let kd = self.value(k).data();
        let vd = self.value(v).data();
        let total = segments.indices().len();
        let mut weights = vec![0.0; heads * total];
        let mut out = vec![0.0; nq * dv];
        for h in 0..heads {
            for i in 0..nq {
                let group = segments.group(i);
                let qi = &qd[i * d + h * hd..i * d + (h + 1) * hd];
                let off = h * total + segments.offset(i);
                let w = &mut weights[off..off + group.len()];
                for (wj, &j) in w.iter_mut().zip(group) {
                    let kj = &kd[j * d + h * hd..j * d + (h + 1) * hd];
                    *wj = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
                }
                let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for wj in w.iter_mut() {
                    *wj = (*wj - max).exp();
                    z += *wj;
                }
                let oi = &mut out[i * dv + h * hv..i * dv + (h + 1) * hv];
                for (wj, &j) in w.iter_mut().zip(group) {
                    *wj /= z;
                    let vj = &vd[j * dv + h * hv..j * dv + (h + 1) * hv];
                    oi.iter_mut().zip(vj).for_each(|(o, x)| *o += *wj * x);
                }
            }
        }
        let rg = self.any_grad(&[q, k, v]);
        Ok(self.push(
            Tensor::matrix(nq, dv, out)?,
            Op::SegmentAttend {
                q,
                k,
                v,
                segments,
                weights,
                scale,
                heads,
            },
            rg,
        ))
    }

    /// Concatenates matrices with equal row counts along the last axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat_cols", "nothing to concatenate"))?;
        let (rows, _) = dims2(self.value(*first), "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = dims2(self.value(*p), "concat_cols")?;
            if r != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.shape(*first).to_vec(),
                    rhs: self.shape(*p).to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(*p).data()[r * w..(r + 1) * w]);
            }
        }
        let rg = self.any_grad(parts);
        Ok(self.push(Tensor::matrix(rows, total, out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Stacks matrices with equal column counts along the first axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat_rows", "nothing to concatenate"))?;
        let (_, cols) = dims2(self.value(*first), "concat_rows")?;
        let mut out = Vec::new();
        for p in parts {
            let (_, c) = dims2(self.value(*p), "concat_rows")?;
            if c != cols {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.shape(*first).to_vec(),
                    rhs: self.shape(*p).to_vec(),
                });
            }
            out.extend_from_slice(self.value(*p).data());
        }
        let rows = out.len() / cols.max(1);
        let rg = self.any_grad(parts);
        Ok(self.push(Tensor::matrix(rows, cols, out)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Output row `r` is row `idx[r]` of `x`.
    pub fn gather_rows(&mut self, x: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        let (n, d) = dims2(self.value(x), "gather_rows")?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::invalid(
                "gather_rows",
                format!("row {} out of range ({} rows)", bad, n),
            ));
        }
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx.iter() {
            out.extend_from_slice(&xd[i * d..(i + 1) * d]);
        }
        let rg = self.any_grad(&[x]);
        let m = idx.len();
        Ok(self.push(Tensor::matrix(m, d, out)?, Op::GatherRows(x, idx), rg))
    }

    /// Output row `idx[r]` accumulates row `r` of `x`; output has `n_out` rows.
    pub fn scatter_add_rows(&mut self, x: Var, idx: Arc<Vec<usize>>, n_out: usize) -> Result<Var> {
        let (m, d) = dims2(self.value(x), "scatter_add_rows")?;
        if idx.len() != m {
            return Err(Error::invalid(
                "scatter_add_rows",
                format!("{} indices for {} rows", idx.len(), m),
            ));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n_out) {
            return Err(Error::invalid(
                "scatter_add_rows",
                format!("target row {} out of range ({} rows)", bad, n_out),
            ));
        }
        let xd = self.value(x).data();
        let mut out = vec![0.0; n_out * d];
        for (r, &t) in idx.iter().enumerate() {
            out[t * d..(t + 1) * d]
                .iter_mut()
                .zip(&xd[r * d..(r + 1) * d])
                .for_each(|(o, v)| *o += v);
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::matrix(n_out, d, out)?, Op::ScatterAddRows(x, idx), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.is_empty() {
            return Err(Error::invalid("mean", "empty tensor"));
        }
        let s = xv.data().iter().sum::<f64>() / xv.len() as f64;
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::Mean(x), rg))
    }

    /// Mean Huber loss of `pred` against constant `target`.
    pub fn huber(&mut self, pred: Var, target: &[f64], delta: f64) -> Result<Var> {
        if !(delta > 0.0) {
            return Err(Error::invalid("huber", format!("delta must be positive, got {}", delta)));
        }
        let pv = self.value(pred);
        if pv.len() != target.len() || pv.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "huber",
                lhs: pv.shape().to_vec(),
                rhs: vec![target.len()],
            });
        }
        let total: f64 = pv
            .data()
            .iter()
            .zip(target)
            .map(|(p, t)| huber_scalar(p - t, delta))
            .sum();
        let value = Tensor::scalar(total / target.len() as f64);
        let rg = self.any_grad(&[pred]);
        Ok(self.push(
            value,
            Op::Huber {
                pred,
                target: target.to_vec(),
                delta,
            },
            rg,
        ))
    }
}

pub fn huber_scalar(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}
