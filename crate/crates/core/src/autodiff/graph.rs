use std::collections::HashMap;
use std::ops::Range;

use super::kernels;
use super::params::{ParamId, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Key positions visible to one query, as an ordered list of ranges into the key matrix.
pub type KeySpans = Vec<Range<usize>>;

enum Op {
    Leaf,
    Param,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    MatMul {
        a: Var,
        b: Var,
    },
    MatMulBt {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        factor: f64,
    },
    Sum {
        a: Var,
    },
    ConcatRows {
        parts: Vec<Var>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu {
        x: Var,
    },
    Softmax {
        x: Var,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        spans: Vec<KeySpans>,
        probs: Vec<f64>,
        offsets: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param => "param",
            Op::Linear { .. } => "linear",
            Op::MatMul { .. } => "matmul",
            Op::MatMulBt { .. } => "matmul_bt",
            Op::Add { .. } => "add",
            Op::Scale { .. } => "scale",
            Op::Sum { .. } => "sum",
            Op::ConcatRows { .. } => "concat_rows",
            Op::Gather { .. } => "embedding_lookup",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu { .. } => "gelu",
            Op::Softmax { .. } => "softmax",
            Op::Attention { .. } => "attention",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode tape.
///
/// Operations are recorded in execution order; [`Graph::backward`] walks them
/// in exact reverse. With gradients disabled the graph only evaluates values,
/// which is how inference runs.
pub struct Graph {
    nodes: Vec<Node>,
    grad_enabled: bool,
    param_vars: HashMap<ParamId, Var>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
            param_vars: HashMap::new(),
            grads: Vec::new(),
        }
    }

    /// A graph that never records gradients.
    pub fn no_grad() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after `mark` (a previous [`Graph::len`]).
    ///
    /// Parameters loaded after the mark are forgotten too.
    pub fn truncate(&mut self, mark: usize) {
        self.nodes.truncate(mark);
        self.param_vars.retain(|_, v| v.0 < mark);
        self.grads.clear();
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        self.grad_enabled && vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that receives gradient (when the graph records them).
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        let rg = self.grad_enabled;
        self.push(value, Op::Leaf, rg)
    }

    /// Loads a parameter from the store, reusing the node if it was already loaded.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let value = store.value(id).clone();
        let rg = self.grad_enabled;
        self.nodes.push(Node {
            value,
            op: Op::Param,
            requires_grad: rg,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    /// Parameters that have been loaded into this graph.
    pub fn loaded_params(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.param_vars.keys().copied().collect();
        ids.sort();
        ids
    }

    /// `x * w + b` with `x: n x in`, `w: in x out`, `b: 1 x out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xt, wt) = (self.value(x), self.value(w));
        if xt.cols() != wt.rows() {
            return Err(shape_err("linear", xt, wt));
        }
        let (n, inp, out) = (xt.rows(), xt.cols(), wt.cols());
        let mut data = vec![0.0; n * out];
        kernels::matmul_acc(xt.data(), wt.data(), &mut data, n, inp, out);
        if let Some(b) = b {
            let bt = self.value(b);
            if bt.shape() != [1, out] {
                return Err(shape_err("linear", wt, bt));
            }
            for r in 0..n {
                for (o, bv) in data[r * out..(r + 1) * out].iter_mut().zip(bt.data()) {
                    *o += bv;
                }
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let rg = self.any_grad(&inputs);
        self.push(Tensor::new(n, out, data)?, Op::Linear { x, w, b }, rg)
    }

    /// `a * b` with `a: n x k`, `b: k x m`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.cols() != bt.rows() {
            return Err(shape_err("matmul", at, bt));
        }
        let (n, k, m) = (at.rows(), at.cols(), bt.cols());
        let mut data = vec![0.0; n * m];
        kernels::matmul_acc(at.data(), bt.data(), &mut data, n, k, m);
        let rg = self.any_grad(&[a, b]);
        self.push(Tensor::new(n, m, data)?, Op::MatMul { a, b }, rg)
    }

    /// `a * b^T` with `a: n x k`, `b: m x k`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.cols() != bt.cols() {
            return Err(shape_err("matmul_bt", at, bt));
        }
        let (n, k, m) = (at.rows(), at.cols(), bt.rows());
        let b_t = kernels::transpose(bt.data(), m, k);
        let mut data = vec![0.0; n * m];
        kernels::matmul_acc(at.data(), &b_t, &mut data, n, k, m);
        let rg = self.any_grad(&[a, b]);
        self.push(Tensor::new(n, m, data)?, Op::MatMulBt { a, b }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            return Err(shape_err("add", at, bt));
        }
        let data = at.data().iter().zip(bt.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(at.rows(), at.cols(), data)?;
        let rg = self.any_grad(&[a, b]);
        self.push(t, Op::Add { a, b }, rg)
    }

    /// Residual connection `x + y`.
    pub fn residual(&mut self, x: Var, y: Var) -> Result<Var> {
        self.add(x, y)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let at = self.value(a);
        let data = at.data().iter().map(|x| x * factor).collect();
        let t = Tensor::new(at.rows(), at.cols(), data)?;
        let rg = self.any_grad(&[a]);
        self.push(t, Op::Scale { a, factor }, rg)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).data().iter().sum();
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(s), Op::Sum { a }, rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Index("concat_rows of nothing".into()));
        };
        let cols = self.value(first).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(shape_err("concat_rows", self.value(first), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let rg = self.any_grad(parts);
        self.push(
            Tensor::new(rows, cols, data)?,
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
            rg,
        )
    }

    /// Selects rows of `table` by index.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let d = t.cols();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= t.rows() {
                return Err(Error::Index(format!(
                    "embedding index {id} outside table of {} rows",
                    t.rows()
                )));
            }
            data.extend_from_slice(t.row_slice(id));
        }
        let rg = self.any_grad(&[table]);
        self.push(
            Tensor::new(ids.len(), d, data)?,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        )
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xt = self.value(x);
        let (n, d) = (xt.rows(), xt.cols());
        let (gt, bt) = (self.value(gain), self.value(bias));
        if gt.shape() != [1, d] || bt.shape() != [1, d] {
            return Err(shape_err("layer_norm", xt, gt));
        }
        let mut xhat = vec![0.0; n * d];
        let mut inv_std = vec![0.0; n];
        let mut out = vec![0.0; n * d];
        for r in 0..n {
            let row = xt.row_slice(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let h = (row[c] - mean) * is;
                xhat[r * d + c] = h;
                out[r * d + c] = h * gt.data()[c] + bt.data()[c];
            }
        }
        let rg = self.any_grad(&[x, gain, bias]);
        let op = if rg {
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            }
        } else {
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat: Vec::new(),
                inv_std: Vec::new(),
            }
        };
        self.push(Tensor::new(n, d, out)?, op, rg)
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        let data = xt.data().iter().map(|&v| kernels::gelu(v)).collect();
        let t = Tensor::new(xt.rows(), xt.cols(), data)?;
        let rg = self.any_grad(&[x]);
        self.push(t, Op::Gelu { x }, rg)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let mut t = self.value(x).clone();
        let cols = t.cols();
        for r in 0..t.rows() {
            kernels::softmax_in_place(&mut t.data_mut()[r * cols..(r + 1) * cols]);
        }
        let rg = self.any_grad(&[x]);
        self.push(t, Op::Softmax { x }, rg)
    }

    /// Scaled dot-product attention split over `heads`.
    ///
    /// `q: nq x d`, `k, v: nk x d`. Query `i` attends to the keys listed in
    /// `spans[i]`, visited in order; that order fixes the accumulation order.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        spans: Vec<KeySpans>,
    ) -> Result<Var> {
        let (qt, kt, vt) = (self.value(q), self.value(k), self.value(v));
        let d = qt.cols();
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "feature dim {d} not divisible by {heads} heads"
            )));
        }
        if kt.cols() != d || vt.shape() != kt.shape() {
            return Err(shape_err("attention", qt, kt));
        }
        if spans.len() != qt.rows() {
            return Err(Error::Index(format!(
                "attention: {} key spans for {} queries",
                spans.len(),
                qt.rows()
            )));
        }
        let nk = kt.rows();
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut offsets = Vec::with_capacity(spans.len() + 1);
        let mut total = 0;
        for s in &spans {
            for r in s {
                if r.end > nk || r.start > r.end {
                    return Err(Error::Index(format!(
                        "attention key range {r:?} outside {nk} keys"
                    )));
                }
            }
            offsets.push(total);
            total += heads * s.iter().map(|r| r.len()).sum::<usize>();
        }
        offsets.push(total);
        let mut probs = vec![0.0; total];
        let mut out = vec![0.0; qt.rows() * d];
        for (i, s) in spans.iter().enumerate() {
            let n_keys: usize = s.iter().map(|r| r.len()).sum();
            if n_keys == 0 {
                continue;
            }
            let qrow = qt.row_slice(i);
            for h in 0..heads {
                let hs = h * dh..(h + 1) * dh;
                let p = &mut probs[offsets[i] + h * n_keys..offsets[i] + (h + 1) * n_keys];
                let mut idx = 0;
                for r in s {
                    for j in r.clone() {
                        p[idx] = kernels::dot(&qrow[hs.clone()], &kt.row_slice(j)[hs.clone()]) * scale;
                        idx += 1;
                    }
                }
                kernels::softmax_in_place(p);
                let o = &mut out[i * d + h * dh..i * d + (h + 1) * dh];
                let mut idx = 0;
                for r in s {
                    for j in r.clone() {
                        kernels::axpy(p[idx], &vt.row_slice(j)[hs.clone()], o);
                        idx += 1;
                    }
                }
            }
        }
        let rg = self.any_grad(&[q, k, v]);
        let t = Tensor::new(qt.rows(), d, out)?;
        let op = if rg {
            Op::Attention {
                q,
                k,
                v,
                heads,
                spans,
                probs,
                offsets,
            }
        } else {
            Op::Attention {
                q,
                k,
                v,
                heads,
                spans: Vec::new(),
                probs: Vec::new(),
                offsets: Vec::new(),
            }
        };
        self.push(t, op, rg)
    }

    /// `sum_i weights[i] * -log softmax(logits_i)[targets[i]]` as a `1 x 1` value.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Result<Var> {
        let lt = self.value(logits);
        let (n, v) = (lt.rows(), lt.cols());
        if targets.len() != n || weights.len() != n {
            return Err(Error::Index(format!(
                "cross_entropy: {} logit rows, {} targets, {} weights",
                n,
                targets.len(),
                weights.len()
            )));
        }
        let mut probs = vec![0.0; n * v];
        let mut loss = 0.0;
        for r in 0..n {
            let t = targets[r];
            if t >= v {
                return Err(Error::Index(format!("target id {t} outside vocabulary of {v}")));
            }
            let row = lt.row_slice(r);
            let lse = kernels::log_sum_exp(row);
            loss += weights[r] * (lse - row[t]);
            for c in 0..v {
                probs[r * v + c] = (row[c] - lse).exp();
            }
        }
        let rg = self.any_grad(&[logits]);
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            weights: weights.to_vec(),
            probs: if rg { probs } else { Vec::new() },
        };
        self.push(Tensor::scalar(loss), op, rg)
    }

    /// Runs reverse-mode differentiation from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lt = self.value(loss);
        if lt.shape() != [1, 1] {
            return Err(Error::Shape {
                op: "backward",
                left: lt.shape().to_vec(),
                right: vec![1, 1],
            });
        }
        if !lt.is_finite() {
            return Err(Error::NonFinite { op: "backward" });
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            self.grads = grads;
            return Ok(());
        }
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf | Op::Param) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(idx, &g, &mut grads)?;
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradients of every loaded parameter into `store`.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) -> Result<()> {
        for (&id, &v) in &self.param_vars {
            if let Some(g) = self.grad(v) {
                store.accumulate_grad(id, g)?;
            }
        }
        Ok(())
    }

    fn backward_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let name = node.op.name();
        let mut contribs: Vec<(Var, Vec<f64>)> = Vec::new();
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Linear { x, w, b } => {
                let (xt, wt) = (self.value(*x), self.value(*w));
                let (n, inp, out) = (xt.rows(), xt.cols(), wt.cols());
                if needs(*x) {
                    let w_t = kernels::transpose(wt.data(), inp, out);
                    let mut dx = vec![0.0; n * inp];
                    kernels::matmul_acc(g, &w_t, &mut dx, n, out, inp);
                    contribs.push((*x, dx));
                }
                if needs(*w) {
                    let mut dw = vec![0.0; inp * out];
                    kernels::matmul_at_acc(xt.data(), g, &mut dw, n, inp, out);
                    contribs.push((*w, dw));
                }
                if let Some(b) = b {
                    if needs(*b) {
                        let mut db = vec![0.0; out];
                        for r in 0..n {
                            for (d, gv) in db.iter_mut().zip(&g[r * out..(r + 1) * out]) {
                                *d += gv;
                            }
                        }
                        contribs.push((*b, db));
                    }
                }
            }
            Op::MatMul { a, b } => {
                let (at, bt) = (self.value(*a), self.value(*b));
                let (n, k, m) = (at.rows(), at.cols(), bt.cols());
                if needs(*a) {
                    let b_t = kernels::transpose(bt.data(), k, m);
                    let mut da = vec![0.0; n * k];
                    kernels::matmul_acc(g, &b_t, &mut da, n, m, k);
                    contribs.push((*a, da));
                }
                if needs(*b) {
                    let mut db = vec![0.0; k * m];
                    kernels::matmul_at_acc(at.data(), g, &mut db, n, k, m);
                    contribs.push((*b, db));
                }
            }
            Op::MatMulBt { a, b } => {
                let (at, bt) = (self.value(*a), self.value(*b));
                let (n, k, m) = (at.rows(), at.cols(), bt.rows());
                if needs(*a) {
                    let mut da = vec![0.0; n * k];
                    kernels::matmul_acc(g, bt.data(), &mut da, n, m, k);
                    contribs.push((*a, da));
                }
                if needs(*b) {
                    let mut db = vec![0.0; m * k];
                    kernels::matmul_at_acc(g, at.data(), &mut db, n, m, k);
                    contribs.push((*b, db));
                }
            }
            Op::Add { a, b } => {
                if needs(*a) {
                    contribs.push((*a, g.to_vec()));
                }
                if needs(*b) {
                    contribs.push((*b, g.to_vec()));
                }
            }
            Op::Scale { a, factor } => {
                if needs(*a) {
                    contribs.push((*a, g.iter().map(|v| v * factor).collect()));
                }
            }
            Op::Sum { a } => {
                if needs(*a) {
                    contribs.push((*a, vec![g[0]; self.value(*a).len()]));
                }
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if needs(p) {
                        contribs.push((p, g[offset..offset + len].to_vec()));
                    }
                    offset += len;
                }
            }
            Op::Gather { table, ids } => {
                if needs(*table) {
                    let tt = self.value(*table);
                    let d = tt.cols();
                    let mut dt = vec![0.0; tt.len()];
                    for (r, &id) in ids.iter().enumerate() {
                        kernels::axpy(1.0, &g[r * d..(r + 1) * d], &mut dt[id * d..(id + 1) * d]);
                    }
                    contribs.push((*table, dt));
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gt = self.value(*gain);
                let d = gt.cols();
                let n = inv_std.len();
                if needs(*x) {
                    let mut dx = vec![0.0; n * d];
                    for r in 0..n {
                        let gr = &g[r * d..(r + 1) * d];
                        let xh = &xhat[r * d..(r + 1) * d];
                        let mut mean_dxh = 0.0;
                        let mut mean_dxh_xh = 0.0;
                        for c in 0..d {
                            let dxh = gr[c] * gt.data()[c];
                            mean_dxh += dxh;
                            mean_dxh_xh += dxh * xh[c];
                        }
                        mean_dxh /= d as f64;
                        mean_dxh_xh /= d as f64;
                        for c in 0..d {
                            let dxh = gr[c] * gt.data()[c];
                            dx[r * d + c] = inv_std[r] * (dxh - mean_dxh - xh[c] * mean_dxh_xh);
                        }
                    }
                    contribs.push((*x, dx));
                }
                if needs(*gain) {
                    let mut dg = vec![0.0; d];
                    for r in 0..n {
                        for c in 0..d {
                            dg[c] += g[r * d + c] * xhat[r * d + c];
                        }
                    }
                    contribs.push((*gain, dg));
                }
                if needs(*bias) {
                    let mut db = vec![0.0; d];
                    for r in 0..n {
                        kernels::axpy(1.0, &g[r * d..(r + 1) * d], &mut db);
                    }
                    contribs.push((*bias, db));
                }
            }
            Op::Gelu { x } => {
                if needs(*x) {
                    let xt = self.value(*x);
                    let dx = xt
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&xv, &gv)| gv * kernels::gelu_grad(xv))
                        .collect();
                    contribs.push((*x, dx));
                }
            }
            Op::Softmax { x } => {
                if needs(*x) {
                    let y = &node.value;
                    let cols = y.cols();
                    let mut dx = vec![0.0; y.len()];
                    for r in 0..y.rows() {
                        let yr = y.row_slice(r);
                        let gr = &g[r * cols..(r + 1) * cols];
                        let s = kernels::dot(yr, gr);
                        for c in 0..cols {
                            dx[r * cols + c] = yr[c] * (gr[c] - s);
                        }
                    }
                    contribs.push((*x, dx));
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                spans,
                probs,
                offsets,
            } => {
                let (qt, kt, vt) = (self.value(*q), self.value(*k), self.value(*v));
                let d = qt.cols();
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut dq = vec![0.0; qt.len()];
                let mut dk = vec![0.0; kt.len()];
                let mut dv = vec![0.0; vt.len()];
                let mut dp = Vec::new();
                for (i, s) in spans.iter().enumerate() {
                    let n_keys: usize = s.iter().map(|r| r.len()).sum();
                    if n_keys == 0 {
                        continue;
                    }
                    for h in 0..*heads {
                        let hs = h * dh..(h + 1) * dh;
                        let p = &probs[offsets[i] + h * n_keys..offsets[i] + (h + 1) * n_keys];
                        let go = &g[i * d + h * dh..i * d + (h + 1) * dh];
                        dp.clear();
                        let mut idx = 0;
                        for r in s {
                            for j in r.clone() {
                                dp.push(kernels::dot(go, &vt.row_slice(j)[hs.clone()]));
                                kernels::axpy(p[idx], go, &mut dv[j * d + h * dh..j * d + (h + 1) * dh]);
                                idx += 1;
                            }
                        }
                        let pdp = kernels::dot(p, &dp);
                        let qrow = &qt.row_slice(i)[hs.clone()];
                        let mut idx = 0;
                        for r in s {
                            for j in r.clone() {
                                let ds = p[idx] * (dp[idx] - pdp) * scale;
                                kernels::axpy(ds, &kt.row_slice(j)[hs.clone()], &mut dq[i * d + h * dh..i * d + (h + 1) * dh]);
                                kernels::axpy(ds, qrow, &mut dk[j * d + h * dh..j * d + (h + 1) * dh]);
                                idx += 1;
                            }
                        }
                    }
                }
                if needs(*q) {
                    contribs.push((*q, dq));
                }
                if needs(*k) {
                    contribs.push((*k, dk));
                }
                if needs(*v) {
                    contribs.push((*v, dv));
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                probs,
            } => {
                if needs(*logits) {
                    let vcols = self.value(*logits).cols();
                    let mut dl = vec![0.0; probs.len()];
                    for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        let scale = g[0] * w;
                        for c in 0..vcols {
                            dl[r * vcols + c] = scale * probs[r * vcols + c];
                        }
                        dl[r * vcols + t] -= scale;
                    }
                    contribs.push((*logits, dl));
                }
            }
        }
        for (var, c) in contribs {
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGrad { op: name });
            }
            match &mut grads[var.0] {
                Some(acc) => kernels::axpy(1.0, &c, acc),
                slot @ None => *slot = Some(c),
            }
        }
        Ok(())
    }
}

/// Key spans for causal attention where query `i` sees keys `0..=i + kv_offset`,
/// or all `n_keys` keys when `causal` is false.
pub fn causal_spans(n_queries: usize, n_keys: usize, causal: bool, kv_offset: usize) -> Vec<KeySpans> {
    (0..n_queries)
        .map(|i| {
            let end = if causal { (i + kv_offset + 1).min(n_keys) } else { n_keys };
            vec![0..end]
        })
        .collect()
}

#[cfg(test)]
#[path = "graph_tests.rs"]
mod tests;
