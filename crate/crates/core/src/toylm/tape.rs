//! Reverse-mode automatic differentiation over matrix-valued nodes.
//!
//! Nodes are appended in evaluation order, so the node index is a
//! topological order and the reverse sweep simply walks indices downward.
//! Each node keeps whatever forward activations its backward rule needs.
//! Gradients are only propagated into nodes that transitively depend on a
//! leaf marked as requiring gradients.

use super::tensor::{matmul, matmul_acc, matmul_nt_acc, matmul_tn_acc, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Shape of a batched causal self-attention call.
#[derive(Clone, Copy, Debug)]
pub struct AttentionShape {
    pub batch: usize,
    pub seq_len: usize,
    pub heads: usize,
}

const RMS_EPS: f64 = 1e-6;

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    /// Row gather from a table; backward scatter-adds.
    Gather { table: Var, ids: Vec<usize> },
    SelectRows { src: Var, rows: Vec<usize> },
    RmsNorm { x: Var, gain: Var, inv_rms: Vec<f64> },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        shape: AttentionShape,
        /// probabilities, laid out [batch][head][i][j]
        probs: Vec<f64>,
    },
    /// Per-group sums of log-softmax entries. Output is `groups × 1`.
    LogProbs {
        logits: Var,
        groups: Vec<Vec<(usize, usize)>>,
        probs: Matrix,
        picked: Vec<Vec<f64>>,
    },
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of a reverse sweep: one optional gradient per node.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads[v.0].take()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = matmul(self.value(a), self.value(b));
        self.push(value, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        self.push(value, Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "mul shape mismatch");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect();
        let value = Matrix::from_vec(x.rows, x.cols, data);
        self.push(value, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        self.push(value, Op::Scale(a, c), &[a])
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = x.data.iter().map(|&z| z / (1.0 + (-z).exp())).collect();
        let value = Matrix::from_vec(x.rows, x.cols, data);
        self.push(value, Op::Silu(a), &[a])
    }

    pub fn gather(&mut self, table: Var, ids: Vec<usize>) -> Var {
        let t = self.value(table);
        let mut value = Matrix::zeros(ids.len(), t.cols);
        for (r, &id) in ids.iter().enumerate() {
            value.row_mut(r).copy_from_slice(t.row(id));
        }
        self.push(value, Op::Gather { table, ids }, &[table])
    }

    pub fn select_rows(&mut self, src: Var, rows: Vec<usize>) -> Var {
        let s = self.value(src);
        let mut value = Matrix::zeros(rows.len(), s.cols);
        for (r, &i) in rows.iter().enumerate() {
            value.row_mut(r).copy_from_slice(s.row(i));
        }
        self.push(value, Op::SelectRows { src, rows }, &[src])
    }

    /// `y = x / rms(x) * gain` per row; `gain` is `1 × cols`.
    pub fn rms_norm(&mut self, x: Var, gain: Var) -> Var {
        let xv = self.value(x);
        let g = self.value(gain);
        assert_eq!(g.shape(), (1, xv.cols), "rms_norm gain shape");
        let d = xv.cols as f64;
        let mut value = Matrix::zeros(xv.rows, xv.cols);
        let mut inv_rms = Vec::with_capacity(xv.rows);
        for i in 0..xv.rows {
            let row = xv.row(i);
            let mut ss = 0.0;
            for &z in row {
                ss += z * z;
            }
            let inv = 1.0 / (ss / d + RMS_EPS).sqrt();
            inv_rms.push(inv);
            for ((o, &z), &gj) in value.row_mut(i).iter_mut().zip(row).zip(&g.data) {
                *o = z * inv * gj;
            }
        }
        self.push(value, Op::RmsNorm { x, gain, inv_rms }, &[x, gain])
    }

    /// Batched multi-head causal attention. `q`, `k`, `v` are
    /// `(batch·seq_len) × width`; `blocked_keys` lists positions that no
    /// query may attend to except themselves.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, shape: AttentionShape, blocked_keys: &[usize]) -> Var {
        let (qm, km, vm) = (self.value(q), self.value(k), self.value(v));
        let width = qm.cols;
        let AttentionShape {
            batch,
            seq_len: n,
            heads,
        } = shape;
        assert_eq!(qm.rows, batch * n, "attention rows");
        assert_eq!(width % heads, 0, "width not divisible by heads");
        let hd = width / heads;
        let inv_sqrt = 1.0 / (hd as f64).sqrt();
        let mut probs = vec![0.0; batch * heads * n * n];
        let mut out = Matrix::zeros(batch * n, width);
        let mut scores = vec![0.0; n];
        for b in 0..batch {
            for h in 0..heads {
                let c0 = h * hd;
                for i in 0..n {
                    let qi = &qm.row(b * n + i)[c0..c0 + hd];
                    let mut max = f64::NEG_INFINITY;
                    for (j, s) in scores.iter_mut().enumerate().take(i + 1) {
                        if j != i && blocked_keys.contains(&j) {
                            *s = f64::NEG_INFINITY;
                            continue;
                        }
                        let kj = &km.row(b * n + j)[c0..c0 + hd];
                        let mut acc = 0.0;
                        for (x, y) in qi.iter().zip(kj) {
                            acc += x * y;
                        }
                        *s = acc * inv_sqrt;
                        if *s > max {
                            max = *s;
                        }
                    }
                    let mut sum = 0.0;
                    for s in scores.iter_mut().take(i + 1) {
                        *s = (*s - max).exp();
                        sum += *s;
                    }
                    let base = ((b * heads + h) * n + i) * n;
                    let orow = &mut out.data[(b * n + i) * width + c0..(b * n + i) * width + c0 + hd];
                    for j in 0..=i {
                        let p = scores[j] / sum;
                        probs[base + j] = p;
                        let vj = &vm.row(b * n + j)[c0..c0 + hd];
                        for (o, &y) in orow.iter_mut().zip(vj) {
                            *o += p * y;
                        }
                    }
                }
            }
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                shape,
                probs,
            },
            &[q, k, v],
        )
    }

    /// For each group, `Σ log softmax(logits[row])[token]`.
    pub fn log_probs(&mut self, logits: Var, groups: Vec<Vec<(usize, usize)>>) -> Var {
        let lv = self.value(logits);
        let mut probs = Matrix::zeros(lv.rows, lv.cols);
        let mut lse = Vec::with_capacity(lv.rows);
        for i in 0..lv.rows {
            let row = lv.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for &z in row {
                sum += (z - max).exp();
            }
            let l = max + sum.ln();
            lse.push(l);
            for (p, &z) in probs.row_mut(i).iter_mut().zip(row) {
                *p = (z - l).exp();
            }
        }
        let mut value = Matrix::zeros(groups.len(), 1);
        let mut picked = Vec::with_capacity(groups.len());
        for (g, picks) in groups.iter().enumerate() {
            let mut s = 0.0;
            let mut each = Vec::with_capacity(picks.len());
            for &(r, t) in picks {
                let lp = lv.get(r, t) - lse[r];
                each.push(lp);
                s += lp;
            }
            value.data[g] = s;
            picked.push(each);
        }
        self.push(
            value,
            Op::LogProbs {
                logits,
                groups,
                probs,
                picked,
            },
            &[logits],
        )
    }

    /// Per-pick log-probabilities for a `log_probs` node, in group order.
    pub fn picked_log_probs(&self, v: Var) -> &[Vec<f64>] {
        match &self.nodes[v.0].op {
            Op::LogProbs { picked, .. } => picked,
            _ => panic!("picked_log_probs on a non log_probs node"),
        }
    }

    /// Reverse sweep from `out`, seeded with `seed` (same shape as `out`).
    pub fn backward(&self, out: Var, seed: Matrix) -> Gradients {
        assert_eq!(seed.shape(), self.value(out).shape(), "seed shape");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed);
        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(&node.op, &g, &mut grads);
            // only leaf gradients are kept; intermediates are released as the sweep passes
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Gradients { grads }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Matrix>], v: Var) -> &'g mut Matrix {
        let (r, c) = self.value(v).shape();
        grads[v.0].get_or_insert_with(|| Matrix::zeros(r, c))
    }

    fn propagate(&self, op: &Op, g: &Matrix, grads: &mut [Option<Matrix>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    let bv = self.value(*b);
                    matmul_nt_acc(g, bv, self.acc(grads, *a));
                }
                if self.wants(*b) {
                    let av = self.value(*a);
                    matmul_tn_acc(av, g, self.acc(grads, *b));
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        self.acc(grads, v).add_assign(g);
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let bv = self.value(*b).data.clone();
                    let ga = self.acc(grads, *a);
                    for ((o, &gi), &y) in ga.data.iter_mut().zip(&g.data).zip(&bv) {
                        *o += gi * y;
                    }
                }
                if self.wants(*b) {
                    let av = self.value(*a).data.clone();
                    let gb = self.acc(grads, *b);
                    for ((o, &gi), &x) in gb.data.iter_mut().zip(&g.data).zip(&av) {
                        *o += gi * x;
                    }
                }
            }
            Op::Scale(a, c) => {
                if self.wants(*a) {
                    let ga = self.acc(grads, *a);
                    for (o, &gi) in ga.data.iter_mut().zip(&g.data) {
                        *o += gi * c;
                    }
                }
            }
            Op::Silu(a) => {
                if self.wants(*a) {
                    let x = self.value(*a).data.clone();
                    let ga = self.acc(grads, *a);
                    for ((o, &gi), &z) in ga.data.iter_mut().zip(&g.data).zip(&x) {
                        let s = 1.0 / (1.0 + (-z).exp());
                        *o += gi * (s + z * s * (1.0 - s));
                    }
                }
            }
            Op::Gather { table, ids } => {
                if self.wants(*table) {
                    let gt = self.acc(grads, *table);
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, &gi) in gt.row_mut(id).iter_mut().zip(g.row(r)) {
                            *o += gi;
                        }
                    }
                }
            }
            Op::SelectRows { src, rows } => {
                if self.wants(*src) {
                    let gs = self.acc(grads, *src);
                    for (r, &i) in rows.iter().enumerate() {
                        for (o, &gi) in gs.row_mut(i).iter_mut().zip(g.row(r)) {
                            *o += gi;
                        }
                    }
                }
            }
            Op::RmsNorm { x, gain, inv_rms } => {
                let xv = self.value(*x);
                let gv = self.value(*gain);
                let d = xv.cols as f64;
                if self.wants(*gain) {
                    let mut gg = Matrix::zeros(1, xv.cols);
                    for i in 0..xv.rows {
                        for ((o, &z), &gi) in gg.data.iter_mut().zip(xv.row(i)).zip(g.row(i)) {
                            *o += gi * z * inv_rms[i];
                        }
                    }
                    self.acc(grads, *gain).add_assign(&gg);
                }
                if self.wants(*x) {
                    let mut gx = Matrix::zeros(xv.rows, xv.cols);
                    for i in 0..xv.rows {
                        let inv = inv_rms[i];
                        let row = xv.row(i);
                        // dy/dx = inv·(g·gain) − x·inv³/d·Σ(g·gain·x)
                        let mut dotp = 0.0;
                        for ((&gi, &gj), &z) in g.row(i).iter().zip(&gv.data).zip(row) {
                            dotp += gi * gj * z;
                        }
                        let c = inv * inv * inv * dotp / d;
                        for (((o, &gi), &gj), &z) in gx.row_mut(i).iter_mut().zip(g.row(i)).zip(&gv.data).zip(row) {
                            *o = gi * gj * inv - z * c;
                        }
                    }
                    self.acc(grads, *x).add_assign(&gx);
                }
            }
            Op::Attention {
                q,
                k,
                v,
                shape,
                probs,
            } => self.attention_backward(*q, *k, *v, *shape, probs, g, grads),
            Op::LogProbs {
                logits, groups, probs, ..
            } => {
                if self.wants(*logits) {
                    let gl = self.acc(grads, *logits);
                    for (gi, picks) in groups.iter().enumerate() {
                        let w = g.data[gi];
                        for &(r, t) in picks {
                            // d/dz log softmax(z)[t] = e_t − p
                            for (o, &p) in gl.row_mut(r).iter_mut().zip(probs.row(r)) {
                                *o -= w * p;
                            }
                            gl.data[r * gl.cols + t] += w;
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        shape: AttentionShape,
        probs: &[f64],
        g: &Matrix,
        grads: &mut [Option<Matrix>],
    ) {
        let (qm, km, vm) = (self.value(q), self.value(k), self.value(v));
        let width = qm.cols;
        let AttentionShape {
            batch,
            seq_len: n,
            heads,
        } = shape;
        let hd = width / heads;
        let inv_sqrt = 1.0 / (hd as f64).sqrt();
        let mut gq = Matrix::zeros(qm.rows, width);
        let mut gk = Matrix::zeros(km.rows, width);
        let mut gv = Matrix::zeros(vm.rows, width);
        let mut dp = vec![0.0; n];
        for b in 0..batch {
            for h in 0..heads {
                let c0 = h * hd;
                for i in 0..n {
                    let base = ((b * heads + h) * n + i) * n;
                    let go = &g.row(b * n + i)[c0..c0 + hd];
                    let mut sum_pdp = 0.0;
                    for j in 0..=i {
                        let p = probs[base + j];
                        let vj = &vm.row(b * n + j)[c0..c0 + hd];
                        let mut acc = 0.0;
                        for (x, y) in go.iter().zip(vj) {
                            acc += x * y;
                        }
                        dp[j] = acc;
                        sum_pdp += p * acc;
                        let gvj = &mut gv.data[(b * n + j) * width + c0..(b * n + j) * width + c0 + hd];
                        for (o, &x) in gvj.iter_mut().zip(go) {
                            *o += p * x;
                        }
                    }
                    for j in 0..=i {
                        let p = probs[base + j];
                        if p == 0.0 {
                            continue;
                        }
                        let ds = p * (dp[j] - sum_pdp) * inv_sqrt;
                        let kj = &km.row(b * n + j)[c0..c0 + hd];
                        let gqi = &mut gq.data[(b * n + i) * width + c0..(b * n + i) * width + c0 + hd];
                        for (o, &y) in gqi.iter_mut().zip(kj) {
                            *o += ds * y;
                        }
                        let qi = &qm.row(b * n + i)[c0..c0 + hd];
                        let gkj = &mut gk.data[(b * n + j) * width + c0..(b * n + j) * width + c0 + hd];
                        for (o, &x) in gkj.iter_mut().zip(qi) {
                            *o += ds * x;
                        }
                    }
                }
            }
        }
        for (var, m) in [(q, gq), (k, gk), (v, gv)] {
            if self.wants(var) {
                self.acc(grads, var).add_assign(&m);
            }
        }
    }
}

/// `x · w` without recording, for callers that only need values.
pub fn linear(x: &Matrix, w: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.rows, w.cols);
    matmul_acc(x, w, &mut out);
    out
}
