use super::ops::gemm;
use super::{gelu_grad_scalar, Op, Tape, Var};

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

impl Tape {
    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn add_into(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl Fn(usize) -> f64) {
        if !self.needs(v) {
            return;
        }
        let n = self.value(v).len();
        let g = acc(grads, v, n);
        for (i, x) in g.iter_mut().enumerate() {
            *x += f(i);
        }
    }

    pub(super) fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.needs(*a) {
                    let ga = acc(grads, *a, m * k);
                    gemm(m, n, k, g, false, self.value(*b).data(), true, 1.0, ga);
                }
                if self.needs(*b) {
                    let gb = acc(grads, *b, k * n);
                    gemm(k, m, n, self.value(*a).data(), true, g, false, 1.0, gb);
                }
            }
            Op::Linear(x, w) => {
                // y[n×o] = x[n×i]·wᵀ
                let (n, inp) = (self.shape(*x)[0], self.shape(*x)[1]);
                let o = self.shape(*w)[0];
                if self.needs(*x) {
                    let gx = acc(grads, *x, n * inp);
                    gemm(n, o, inp, g, false, self.value(*w).data(), false, 1.0, gx);
                }
                if self.needs(*w) {
                    let gw = acc(grads, *w, o * inp);
                    gemm(o, n, inp, g, true, self.value(*x).data(), false, 1.0, gw);
                }
            }
            Op::Add(a, b) => {
                self.add_into(grads, *a, |j| g[j]);
                self.add_into(grads, *b, |j| g[j]);
            }
            Op::Sub(a, b) => {
                self.add_into(grads, *a, |j| g[j]);
                self.add_into(grads, *b, |j| -g[j]);
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                self.add_into(grads, *a, |j| g[j] * bv[j]);
                self.add_into(grads, *b, |j| g[j] * av[j]);
            }
            Op::Scale(a, c) => {
                self.add_into(grads, *a, |j| g[j] * c);
            }
            Op::AddBias(x, b) => {
                self.add_into(grads, *x, |j| g[j]);
                if self.needs(*b) {
                    let d = self.value(*b).len();
                    let gb = acc(grads, *b, d);
                    for row in g.chunks(d) {
                        gb.iter_mut().zip(row).for_each(|(o, v)| *o += v);
                    }
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                self.add_into(grads, *x, |j| g[j] * gelu_grad_scalar(xv[j]));
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                self.add_into(grads, *x, |j| g[j] * (1.0 - y[j] * y[j]));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gain).data();
                let d = gv.len();
                if self.needs(*x) {
                    let gx = acc(grads, *x, xhat.len());
                    let mut dxhat = vec![0.0; d];
                    for (r, is) in inv_std.iter().enumerate() {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..d {
                            dxhat[j] = gr[j] * gv[j];
                            m1 += dxhat[j];
                            m2 += dxhat[j] * hr[j];
                        }
                        m1 /= d as f64;
                        m2 /= d as f64;
                        for j in 0..d {
                            gx[r * d + j] += is * (dxhat[j] - m1 - hr[j] * m2);
                        }
                    }
                }
                if self.needs(*gain) {
                    let gg = acc(grads, *gain, d);
                    for (row, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] += row[j] * hr[j];
                        }
                    }
                }
                if self.needs(*bias) {
                    let gb = acc(grads, *bias, d);
                    for row in g.chunks(d) {
                        gb.iter_mut().zip(row).for_each(|(o, v)| *o += v);
                    }
                }
            }
            Op::Softmax(x) => {
                if self.needs(*x) {
                    let y = node.value.data();
                    let d = node.value.cols();
                    let gx = acc(grads, *x, y.len());
                    for r in 0..node.value.rows() {
                        let yr = &y[r * d..(r + 1) * d];
                        let gr = &g[r * d..(r + 1) * d];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..d {
                            gx[r * d + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::SegmentAttend {
                q,
                k,
                v,
                segments,
                weights,
                scale,
                heads,
            } => {
                let (nq, d) = (self.shape(*q)[0], self.shape(*q)[1]);
                let dv = self.shape(*v)[1];
                let nk = self.shape(*k)[0];
                let (hd, hv) = (d / heads, dv / heads);
                let total = segments.indices().len();
                let qd = self.value(*q).data();
                let kd = self.value(*k).data();
                let vd = self.value(*v).data();
                let mut gq = self.needs(*q).then(|| vec![0.0; nq * d]);
                let mut gk = self.needs(*k).then(|| vec![0.0; nk * d]);
                let mut gv = self.needs(*v).then(|| vec![0.0; nk * dv]);
                let mut ds = Vec::new();
                for h in 0..*heads {
                    for i in 0..nq {
                        let group = segments.group(i);
                        let off = h * total + segments.offset(i);
                        let w = &weights[off..off + group.len()];
                        let gi = &g[i * dv + h * hv..i * dv + (h + 1) * hv];
                        // dL/dw_j = g_i · v_j ; softmax adjoint gives dL/ds_j
                        ds.clear();
                        let mut dot = 0.0;
                        for (&wj, &j) in w.iter().zip(group) {
                            let vj = &vd[j * dv + h * hv..j * dv + (h + 1) * hv];
                            let dw: f64 = gi.iter().zip(vj).map(|(a, b)| a * b).sum();
                            ds.push(dw);
                            dot += wj * dw;
                        }
                        for (dsj, &wj) in ds.iter_mut().zip(w) {
                            *dsj = wj * (*dsj - dot) * scale;
                        }
                        let qi = &qd[i * d + h * hd..i * d + (h + 1) * hd];
                        for ((&wj, &j), &dsj) in w.iter().zip(group).zip(&ds) {
                            if let Some(gv) = gv.as_mut() {
                                gv[j * dv + h * hv..j * dv + (h + 1) * hv]
                                    .iter_mut()
                                    .zip(gi)
                                    .for_each(|(o, x)| *o += wj * x);
                            }
                            if let Some(gk) = gk.as_mut() {
                                gk[j * d + h * hd..j * d + (h + 1) * hd]
                                    .iter_mut()
                                    .zip(qi)
                                    .for_each(|(o, x)| *o += dsj * x);
                            }
                            if let Some(gq) = gq.as_mut() {
                                let kj = &kd[j * d + h * hd..j * d + (h + 1) * hd];
                                gq[i * d + h * hd..i * d + (h + 1) * hd]
                                    .iter_mut()
                                    .zip(kj)
                                    .for_each(|(o, x)| *o += dsj * x);
                            }
                        }
                    }
                }
                for (var, local) in [(*q, gq), (*k, gk), (*v, gv)] {
                    if let Some(local) = local {
                        let n = local.len();
                        acc(grads, var, n)
                            .iter_mut()
                            .zip(&local)
                            .for_each(|(o, x)| *o += x);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let rows = node.value.rows();
                let total = node.value.cols();
                let mut off = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.needs(*p) {
                        let gp = acc(grads, *p, rows * w);
                        for r in 0..rows {
                            let src = &g[r * total + off..r * total + off + w];
                            gp[r * w..(r + 1) * w]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(o, x)| *o += x);
                        }
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    let src = &g[off..off + n];
                    self.add_into(grads, *p, |j| src[j]);
                    off += n;
                }
            }
            Op::GatherRows(x, idx) => {
                if self.needs(*x) {
                    let d = node.value.cols();
                    let n = self.value(*x).len();
                    let gx = acc(grads, *x, n);
                    for (r, &src) in idx.iter().enumerate() {
                        gx[src * d..(src + 1) * d]
                            .iter_mut()
                            .zip(&g[r * d..(r + 1) * d])
                            .for_each(|(o, v)| *o += v);
                    }
                }
            }
            Op::ScatterAddRows(x, idx) => {
                if self.needs(*x) {
                    let d = node.value.cols();
                    let n = self.value(*x).len();
                    let gx = acc(grads, *x, n);
                    for (r, &t) in idx.iter().enumerate() {
                        gx[r * d..(r + 1) * d]
                            .iter_mut()
                            .zip(&g[t * d..(t + 1) * d])
                            .for_each(|(o, v)| *o += v);
                    }
                }
            }
            Op::Sum(x) => {
                let s = g[0];
                self.add_into(grads, *x, |_| s);
            }
            Op::Mean(x) => {
                let s = g[0] / self.value(*x).len() as f64;
                self.add_into(grads, *x, |_| s);
            }
            Op::Huber {
                pred,
                target,
                delta,
            } => {
                let p = self.value(*pred).data();
                let n = target.len() as f64;
                let s = g[0];
                self.add_into(grads, *pred, |j| {
                    let r = p[j] - target[j];
                    s * r.clamp(-*delta, *delta) / n
                });
            }
        }
    }
}
