//! Reverse-mode autodiff over a flat tape of rank-2 tensors.
//!
//! A [`Graph`] owns node values and a tape of executed ops; [`Graph::backward`]
//! walks the tape in reverse and accumulates (`+=`) exact analytic gradients
//! into every node that transitively depends on a parameter leaf, so shared
//! parameters in unrolled recurrences need no special casing.
//!
//! Shape rules are strict: no broadcasting beyond the bias add. Shape
//! mismatches are programming errors and panic with the offending dims.
//!
//! Numeric safety: elementwise ops, matmul and the softmax cross-entropy are
//! finite for inputs within |x| <= 1e3; the exp-based ops (`kl_diag_gaussian`,
//! `reparameterize`) are finite for |logvar| <= 600.

use crate::tensor::{matmul, matmul_acc_grad_a, matmul_acc_grad_b, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Matmul { a: usize, b: usize, out: usize },
    Add { a: usize, b: usize, out: usize },
    AddBias { x: usize, bias: usize, out: usize },
    Mul { a: usize, b: usize, out: usize },
    Tanh { x: usize, out: usize },
    Sigmoid { x: usize, out: usize },
    ConcatCols { parts: Vec<usize>, out: usize },
    ConcatRows { parts: Vec<usize>, out: usize },
    SliceCols { x: usize, start: usize, out: usize },
    Scale { x: usize, c: f64, out: usize },
    SoftmaxCe { logits: usize, targets: Vec<usize>, probs: Tensor, out: usize },
    Mse { pred: usize, target: Tensor, out: usize },
    KlDiag { mean: usize, logvar: usize, out: usize },
    Reparam { mean: usize, logvar: usize, eps: Tensor, out: usize },
}

#[derive(Default)]
pub struct Graph {
    values: Vec<Tensor>,
    needs_grad: Vec<bool>,
    grads: Vec<Option<Tensor>>,
    tape: Vec<Op>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, value: Tensor, needs_grad: bool) -> Var {
        self.values.push(value);
        self.needs_grad.push(needs_grad);
        self.grads.push(None);
        Var(self.values.len() - 1)
    }

    /// Leaf that gradients are not propagated into.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, false)
    }

    /// Leaf that participates in backward (a parameter).
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    /// Gradient of the last `backward` target w.r.t. `v`. Zero tensor if the
    /// node was never touched.
    pub fn grad(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.values[v.0].rows(), self.values[v.0].cols()),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert!(t.rows() == 1 && t.cols() == 1, "scalar() on non-1x1 node");
        t.data()[0]
    }

    fn out_flags(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.needs_grad[i])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = matmul(&self.values[a.0], &self.values[b.0]);
        let ng = self.out_flags(&[a.0, b.0]);
        let out = self.push(v, ng);
        self.tape.push(Op::Matmul { a: a.0, b: b.0, out: out.0 });
        out
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        assert!(
            ta.same_shape(tb),
            "add shape mismatch: {}x{} vs {}x{}",
            ta.rows(),
            ta.cols(),
            tb.rows(),
            tb.cols()
        );
        let mut v = ta.clone();
        v.add_assign(tb);
        let ng = self.out_flags(&[a.0, b.0]);
        let out = self.push(v, ng);
        self.tape.push(Op::Add { a: a.0, b: b.0, out: out.0 });
        out
    }

    /// `x` is m x n, `bias` is 1 x n, broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let (tx, tb) = (&self.values[x.0], &self.values[bias.0]);
        assert!(
            tb.rows() == 1 && tb.cols() == tx.cols(),
            "add_bias shape mismatch: {}x{} + {}x{}",
            tx.rows(),
            tx.cols(),
            tb.rows(),
            tb.cols()
        );
        let mut v = tx.clone();
        for r in 0..v.rows() {
            let row = v.row_slice_mut(r);
            for (o, &b) in row.iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        let ng = self.out_flags(&[x.0, bias.0]);
        let out = self.push(v, ng);
        self.tape.push(Op::AddBias { x: x.0, bias: bias.0, out: out.0 });
        out
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        assert!(
            ta.same_shape(tb),
            "mul shape mismatch: {}x{} vs {}x{}",
            ta.rows(),
            ta.cols(),
            tb.rows(),
            tb.cols()
        );
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let v = Tensor::from_vec(ta.rows(), ta.cols(), data);
        let ng = self.out_flags(&[a.0, b.0]);
        let out = self.push(v, ng);
        self.tape.push(Op::Mul { a: a.0, b: b.0, out: out.0 });
        out
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let tx = &self.values[x.0];
        let data = tx.data().iter().map(|v| v.tanh()).collect();
        let v = Tensor::from_vec(tx.rows(), tx.cols(), data);
        let ng = self.needs_grad[x.0];
        let out = self.push(v, ng);
        self.tape.push(Op::Tanh { x: x.0, out: out.0 });
        out
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let tx = &self.values[x.0];
        let data = tx.data().iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
        let v = Tensor::from_vec(tx.rows(), tx.cols(), data);
        let ng = self.needs_grad[x.0];
        let out = self.push(v, ng);
        self.tape.push(Op::Sigmoid { x: x.0, out: out.0 });
        out
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.values[parts[0].0].rows();
        let total: usize = parts.iter().map(|p| self.values[p.0].cols()).collect::<Vec<_>>().iter().sum();
        let mut v = Tensor::zeros(rows, total);
        let mut off = 0;
        for p in parts {
            let tp = &self.values[p.0];
            assert_eq!(tp.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                let src = tp.row_slice(r);
                let dst = &mut v.row_slice_mut(r)[off..off + tp.cols()];
                dst.copy_from_slice(src);
            }
            off += tp.cols();
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let ng = self.out_flags(&ids);
        let out = self.push(v, ng);
        self.tape.push(Op::ConcatCols { parts: ids, out: out.0 });
        out
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = self.values[parts[0].0].cols();
        let total: usize = parts.iter().map(|p| self.values[p.0].rows()).sum();
        let mut data = Vec::with_capacity(total * cols);
        for p in parts {
            let tp = &self.values[p.0];
            assert_eq!(tp.cols(), cols, "concat_rows col mismatch");
            data.extend_from_slice(tp.data());
        }
        let v = Tensor::from_vec(total, cols, data);
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let ng = self.out_flags(&ids);
        let out = self.push(v, ng);
        self.tape.push(Op::ConcatRows { parts: ids, out: out.0 });
        out
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Var {
        let tx = &self.values[x.0];
        assert!(
            start + width <= tx.cols(),
            "slice_cols out of range: {}+{} > {}",
            start,
            width,
            tx.cols()
        );
        let mut v = Tensor::zeros(tx.rows(), width);
        for r in 0..tx.rows() {
            v.row_slice_mut(r)
                .copy_from_slice(&tx.row_slice(r)[start..start + width]);
        }
        let ng = self.needs_grad[x.0];
        let out = self.push(v, ng);
        self.tape.push(Op::SliceCols { x: x.0, start, out: out.0 });
        out
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let tx = &self.values[x.0];
        let data = tx.data().iter().map(|v| c * v).collect();
        let v = Tensor::from_vec(tx.rows(), tx.cols(), data);
        let ng = self.needs_grad[x.0];
        let out = self.push(v, ng);
        self.tape.push(Op::Scale { x: x.0, c, out: out.0 });
        out
    }

    /// Mean over rows of -log softmax(logits)[target]. Computed via a stable
    /// log-sum-exp; gradient is (softmax - onehot) / rows.
    pub fn softmax_ce(&mut self, logits: Var, targets: &[usize]) -> Var {
        let tl = &self.values[logits.0];
        let (rows, k) = (tl.rows(), tl.cols());
        assert_eq!(targets.len(), rows, "softmax_ce target count mismatch");
        let mut probs = Tensor::zeros(rows, k);
        let mut loss = 0.0;
        for r in 0..rows {
            let row = tl.row_slice(r);
            let t = targets[r];
            assert!(t < k, "softmax_ce target {} out of range {}", t, k);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sumexp: f64 = row.iter().map(|&v| (v - max).exp()).sum();
            let lse = max + sumexp.ln();
            loss += lse - row[t];
            let prow = probs.row_slice_mut(r);
            for (p, &v) in prow.iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
        let v = Tensor::from_vec(1, 1, vec![loss / rows as f64]);
        let ng = self.needs_grad[logits.0];
        let out = self.push(v, ng);
        self.tape.push(Op::SoftmaxCe {
            logits: logits.0,
            targets: targets.to_vec(),
            probs,
            out: out.0,
        });
        out
    }

    /// Mean squared elementwise difference against a fixed target.
    pub fn mse(&mut self, pred: Var, target: &Tensor) -> Var {
        let tp = &self.values[pred.0];
        assert!(
            tp.same_shape(target),
            "mse shape mismatch: {}x{} vs {}x{}",
            tp.rows(),
            tp.cols(),
            target.rows(),
            target.cols()
        );
        let n = tp.len() as f64;
        let loss: f64 = tp
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        let v = Tensor::from_vec(1, 1, vec![loss]);
        let ng = self.needs_grad[pred.0];
        let out = self.push(v, ng);
        self.tape.push(Op::Mse { pred: pred.0, target: target.clone(), out: out.0 });
        out
    }

    /// KL(N(mean, diag exp(logvar)) || N(0, I)) summed over all elements:
    /// 0.5 * sum(exp(logvar) + mean^2 - 1 - logvar).
    pub fn kl_diag_gaussian(&mut self, mean: Var, logvar: Var) -> Var {
        let (tm, tl) = (&self.values[mean.0], &self.values[logvar.0]);
        assert!(
            tm.same_shape(tl),
            "kl shape mismatch: {}x{} vs {}x{}",
            tm.rows(),
            tm.cols(),
            tl.rows(),
            tl.cols()
        );
        let kl: f64 = tm
            .data()
            .iter()
            .zip(tl.data())
            .map(|(m, lv)| 0.5 * (lv.exp() + m * m - 1.0 - lv))
            .sum();
        let v = Tensor::from_vec(1, 1, vec![kl]);
        let ng = self.out_flags(&[mean.0, logvar.0]);
        let out = self.push(v, ng);
        self.tape.push(Op::KlDiag { mean: mean.0, logvar: logvar.0, out: out.0 });
        out
    }

    /// mean + exp(0.5 * logvar) * eps, with eps fixed noise supplied by the
    /// caller (so a loss stays a deterministic function of its parameters).
    pub fn reparameterize(&mut self, mean: Var, logvar: Var, eps: Tensor) -> Var {
        let (tm, tl) = (&self.values[mean.0], &self.values[logvar.0]);
        assert!(
            tm.same_shape(tl) && tm.same_shape(&eps),
            "reparameterize shape mismatch"
        );
        let data = tm
            .data()
            .iter()
            .zip(tl.data())
            .zip(eps.data())
            .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
            .collect();
        let v = Tensor::from_vec(tm.rows(), tm.cols(), data);
        let ng = self.out_flags(&[mean.0, logvar.0]);
        let out = self.push(v, ng);
        self.tape.push(Op::Reparam { mean: mean.0, logvar: logvar.0, eps, out: out.0 });
        out
    }

    fn acc(&mut self, node: usize, delta: &Tensor) {
        if !self.needs_grad[node] {
            return;
        }
        match &mut self.grads[node] {
            Some(g) => g.add_assign(delta),
            slot @ None => *slot = Some(delta.clone()),
        }
    }

    fn acc_fn(&mut self, node: usize, rows: usize, cols: usize, f: impl FnMut(&mut [f64])) {
        if !self.needs_grad[node] {
            return;
        }
        let mut f = f;
        let g = self.grads[node].get_or_insert_with(|| Tensor::zeros(rows, cols));
        f(g.data_mut());
    }

    /// Run reverse-mode accumulation from a scalar loss node.
    pub fn backward(&mut self, loss: Var) {
        let t = &self.values[loss.0];
        assert!(t.rows() == 1 && t.cols() == 1, "backward target must be scalar");
        assert!(
            self.needs_grad[loss.0],
            "backward target does not depend on any parameter"
        );
        self.grads[loss.0] = Some(Tensor::from_vec(1, 1, vec![1.0]));
        for idx in (0..self.tape.len()).rev() {
            // take the op out to appease the borrow checker; put it back after
            let op = std::mem::replace(&mut self.tape[idx], Op::Scale { x: 0, c: 0.0, out: 0 });
            self.backward_op(&op);
            self.tape[idx] = op;
        }
    }

    fn backward_op(&mut self, op: &Op) {
        match op {
            Op::Matmul { a, b, out } => {
                let dout = match &self.grads[*out] {
                    Some(g) => g.clone(),
                    None => return,
                };
                if self.needs_grad[*a] {
                    let bval = self.values[*b].clone();
                    let (r, c) = (self.values[*a].rows(), self.values[*a].cols());
                    let g = self.grads[*a].get_or_insert_with(|| Tensor::zeros(r, c));
                    matmul_acc_grad_a(g, &dout, &bval);
                }
                if self.needs_grad[*b] {
                    let aval = self.values[*a].clone();
                    let (r, c) = (self.values[*b].rows(), self.values[*b].cols());
                    let g = self.grads[*b].get_or_insert_with(|| Tensor::zeros(r, c));
                    matmul_acc_grad_b(g, &aval, &dout);
                }
            }
            Op::Add { a, b, out } => {
                let dout = match &self.grads[*out] {
                    Some(g) => g.clone(),
                    None => return,
                };
                self.acc(*a, &dout);
                self.acc(*b, &dout);
            }
            Op::AddBias { x, bias, out } => {
                let dout = match &self.grads[*out] {
                    Some(g) => g.clone(),
                    None => return,
                };
                self.acc(*x, &dout);
                let cols = dout.cols();
                self.acc_fn(*bias, 1, cols, |g| {
                    for r in 0..dout.rows() {
                        for (gb, &d) in g.iter_mut().zip(dout.row_slice(r)) {
                            *gb += d;
                        }
                    }
                });
            }
            Op::Mul { a, b, out } => {
                let dout = match &self.grads[*out] {
                    Some(g) => g.clone(),
                    None => return,
                };
                if self.needs_grad[*a] {
                    let bval = self.values[*b].clone();
                    let (r, c) = (bval.rows(), bval.cols());
                    self.acc_fn(*a, r, c, |g| {
                        for ((gv, d), bv) in g.iter_mut().zip(dout.data()).zip(bval.data()) {
                            *gv += d * bv;
                        }
                    });
                }
                if self.needs_grad[*b] {
                    let aval = self.values[*a].clone();
                    let (r, c) = (aval.rows(), aval.cols());
                    self.acc_fn(*b, r, c, |g| {
                        for ((gv, d), av) in g.iter_mut().zip(dout.data()).zip(aval.data()) {
                            *gv += d * av;
                        }
                    });
                }
            }
            Op::Tanh { x, out } => {
                let dout = match &self.grads[*out] {
                    Some(g) => g.clone(),
                    None => return,
                };
                let y = self.values[*out].clone();
                let (r, c) = (y.rows(), y.cols());
                self.acc_fn(*x, r, c, |g| {
                    for ((gv, d), yv) in g.iter_mut().zip(dout.data()).zip(y.data()) {
                        *gv += d * (1.0 - yv * yv);
                    }
                });
            }
            Op::Sigmoid { x, out } => {
                let dout = match &self.grads[*out] {
                    Some(g) => g.clone(),
                    None => return,
                };
                let y = self.values[*out].clone();
                let (r, c) = (y.rows(), y.cols());
                self.acc_fn(*x, r, c, |g| {
                    for ((gv, d), yv) in g.iter_mut().zip(dout.data()).zip(y.data()) {
                        *gv += d * yv * (1.0 - yv);
                    }
                });
            }
            Op::ConcatCols { parts, out } => {
                let dout = match &self.grads[*out] {
                    Some(g) => g.clone(),
                    None => return,
                };
                let mut off = 0;
                for &p in parts {
                    let (r, c) = (self.values[p].rows(), self.values[p].cols());
                    let start = off;
                    self.acc_fn(p, r, c, |g| {
                        for row in 0..r {
                            let src = &dout.row_slice(row)[start..start + c];
                            for (gv, &d) in g[row * c..(row + 1) * c].iter_mut().zip(src) {
                                *gv += d;
                            }
                        }
                    });
                    off += c;
                }
            }
            Op::ConcatRows { parts, out } => {
                let dout = match &self.grads[*out] {
                    Some(g) => g.clone(),
                    None => return,
                };
                let mut off = 0;
                for &p in parts {
                    let (r, c) = (self.values[p].rows(), self.values[p].cols());
                    let start = off;
                    self.acc_fn(p, r, c, |g| {
                        let src = &dout.data()[start * c..(start + r) * c];
                        for (gv, &d) in g.iter_mut().zip(src) {
                            *gv += d;
                        }
                    });
                    off += r;
                }
            }
            Op::SliceCols { x, start, out } => {
                let dout = match &self.grads[*out] {
                    Some(g) => g.clone(),
                    None => return,
                };
                let (r, c) = (self.values[*x].rows(), self.values[*x].cols());
                let (w, start) = (dout.cols(), *start);
                self.acc_fn(*x, r, c, |g| {
                    for row in 0..r {
                        let dst = &mut g[row * c + start..row * c + start + w];
                        for (gv, &d) in dst.iter_mut().zip(dout.row_slice(row)) {
                            *gv += d;
                        }
                    }
                });
            }
            Op::Scale { x, c, out } => {
                let dout = match &self.grads[*out] {
                    Some(g) => g.clone(),
                    None => return,
                };
                let (r, cc) = (self.values[*x].rows(), self.values[*x].cols());
                self.acc_fn(*x, r, cc, |g| {
                    for (gv, &d) in g.iter_mut().zip(dout.data()) {
                        *gv += c * d;
                    }
                });
            }
            Op::SoftmaxCe { logits, targets, probs, out } => {
                let dout = match &self.grads[*out] {
                    Some(g) => g.data()[0],
                    None => return,
                };
                let (r, k) = (probs.rows(), probs.cols());
                let scale = dout / r as f64;
                self.acc_fn(*logits, r, k, |g| {
                    for row in 0..r {
                        let prow = probs.row_slice(row);
                        let grow = &mut g[row * k..(row + 1) * k];
                        for (gv, &p) in grow.iter_mut().zip(prow) {
                            *gv += scale * p;
                        }
                        grow[targets[row]] -= scale;
                    }
                });
            }
            Op::Mse { pred, target, out } => {
                let dout = match &self.grads[*out] {
                    Some(g) => g.data()[0],
                    None => return,
                };
                let pval = self.values[*pred].clone();
                let (r, c) = (pval.rows(), pval.cols());
                let scale = 2.0 * dout / pval.len() as f64;
                self.acc_fn(*pred, r, c, |g| {
                    for ((gv, p), t) in g.iter_mut().zip(pval.data()).zip(target.data()) {
                        *gv += scale * (p - t);
                    }
                });
            }
            Op::KlDiag { mean, logvar, out } => {
                let dout = match &self.grads[*out] {
                    Some(g) => g.data()[0],
                    None => return,
                };
                let mval = self.values[*mean].clone();
                let lval = self.values[*logvar].clone();
                let (r, c) = (mval.rows(), mval.cols());
                self.acc_fn(*mean, r, c, |g| {
                    for (gv, m) in g.iter_mut().zip(mval.data()) {
                        *gv += dout * m;
                    }
                });
                self.acc_fn(*logvar, r, c, |g| {
                    for (gv, lv) in g.iter_mut().zip(lval.data()) {
                        *gv += dout * 0.5 * (lv.exp() - 1.0);
                    }
                });
            }
            Op::Reparam { mean, logvar, eps, out } => {
                let dout = match &self.grads[*out] {
                    Some(g) => g.clone(),
                    None => return,
                };
                let lval = self.values[*logvar].clone();
                let (r, c) = (lval.rows(), lval.cols());
                self.acc(*mean, &dout);
                self.acc_fn(*logvar, r, c, |g| {
                    for ((gv, d), (lv, e)) in g
                        .iter_mut()
                        .zip(dout.data())
                        .zip(lval.data().iter().zip(eps.data()))
                    {
                        *gv += d * 0.5 * (0.5 * lv).exp() * e;
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_at_zero() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(1, 3));
        let y = g.tanh(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 0.0]);
        let s = g.mse(y, &Tensor::from_vec(1, 3, vec![-1.0, -1.0, -1.0]));
        g.backward(s);
        // d tanh(0) = 1, so grad = 2*(0-(-1))/3 * 1
        for v in g.grad(x).data() {
            assert!((v - 2.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_ce_uniform_logits() {
        let mut g = Graph::new();
        let logits = g.param(Tensor::zeros(2, 130));
        let loss = g.softmax_ce(logits, &[5, 17]);
        assert!((g.scalar(loss) - (130.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_ce_confident_correct() {
        let mut g = Graph::new();
        let mut t = Tensor::zeros(1, 4);
        t.set(0, 2, 50.0);
        let logits = g.param(t);
        let loss = g.softmax_ce(logits, &[2]);
        assert!(g.scalar(loss) < 1e-12);
    }

    #[test]
    fn softmax_ce_extreme_logits_finite() {
        let mut g = Graph::new();
        let logits = g.param(Tensor::from_vec(1, 3, vec![1e3, -1e3, 0.0]));
        let loss = g.softmax_ce(logits, &[1]);
        assert!(g.scalar(loss).is_finite());
    }

    #[test]
    fn mse_examples() {
        let mut g = Graph::new();
        let p = g.param(Tensor::from_vec(1, 4, vec![3.0, 3.0, 3.0, 3.0]));
        let t = Tensor::from_vec(1, 4, vec![1.0, 1.0, 1.0, 1.0]);
        let l = g.mse(p, &t);
        assert_eq!(g.scalar(l), 4.0);
        let pv = g.value(p).clone();
        let l0 = g.mse(p, &pv);
        assert_eq!(g.scalar(l0), 0.0);
    }

    #[test]
    fn kl_identities() {
        let mut g = Graph::new();
        let m = g.param(Tensor::zeros(1, 8));
        let lv = g.param(Tensor::zeros(1, 8));
        let kl = g.kl_diag_gaussian(m, lv);
        assert_eq!(g.scalar(kl), 0.0);

        let m2 = g.param(Tensor::from_vec(1, 2, vec![3.0, -2.0]));
        let lv2 = g.param(Tensor::zeros(1, 2));
        let kl2 = g.kl_diag_gaussian(m2, lv2);
        assert!((g.scalar(kl2) - (9.0 / 2.0 + 4.0 / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn reparameterize_zero_eps_returns_mean() {
        let mut g = Graph::new();
        let m = g.param(Tensor::from_vec(1, 3, vec![1.0, -2.0, 0.5]));
        let lv = g.param(Tensor::from_vec(1, 3, vec![0.3, -0.7, 2.0]));
        let z = g.reparameterize(m, lv, Tensor::zeros(1, 3));
        assert_eq!(g.value(z).data(), g.value(m).data());
    }

    #[test]
    fn reparameterize_tiny_variance_approaches_mean() {
        let mut g = Graph::new();
        let m = g.param(Tensor::from_vec(1, 2, vec![1.0, -1.0]));
        let lv = g.param(Tensor::from_vec(1, 2, vec![-500.0, -500.0]));
        let z = g.reparameterize(m, lv, Tensor::from_vec(1, 2, vec![2.5, -1.5]));
        for (zv, mv) in g.value(z).data().iter().zip(g.value(m).data()) {
            assert!((zv - mv).abs() < 1e-100);
        }
    }

    #[test]
    fn concat_slice_roundtrip() {
        let mut g = Graph::new();
        let a = g.param(Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let b = g.param(Tensor::from_vec(2, 3, vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0]));
        let cat = g.concat_cols(&[a, b]);
        assert_eq!(g.value(cat).cols(), 5);
        let back = g.slice_cols(cat, 2, 3);
        assert_eq!(g.value(back).data(), g.value(b).data());
    }

    #[test]
    fn gradients_accumulate_on_shared_node() {
        // y = x + x => dy/dx = 2
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(1, 1, vec![3.0]));
        let y = g.add(x, x);
        g.backward(y);
        assert_eq!(g.grad(x).data(), &[2.0]);
    }

    #[test]
    fn constants_receive_no_grad() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(1, 2, vec![1.0, 2.0]));
        let c = g.constant(Tensor::from_vec(1, 2, vec![5.0, 5.0]));
        let y = g.add(x, c);
        let l = g.mse(y, &Tensor::zeros(1, 2));
        g.backward(l);
        assert_eq!(g.grad(c).data(), &[0.0, 0.0]);
        assert!(g.grad(x).data().iter().any(|&v| v != 0.0));
    }
}
