use super::kernels::{self, gelu, gelu_grad, sigmoid};
use super::params::{ParamId, ParamSet};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Mul,
    Gelu,
    Tanh,
    Sigmoid,
}

#[derive(Debug, Clone)]
enum Op<F> {
    Leaf,
    Param(ParamId),
    MatMul,
    MatMulT,
    Transpose,
    Add,
    Sub,
    Mul,
    Scale(F),
    Gelu,
    Tanh,
    Sigmoid,
    LayerNorm,
    Softmax,
    ConcatRows,
    ConcatCols,
    SliceRows(usize),
    SliceCols(usize),
    Sum,
    Mean,
    Reshape,
}

enum Value<F> {
    Owned(Tensor<F>),
    Param(ParamId),
}

struct Node<F> {
    op: Op<F>,
    inputs: Vec<Var>,
    value: Value<F>,
    needs_grad: bool,
    /// Op-specific saved values (layernorm: normalized input then per-row inverse std).
    aux: Vec<F>,
}

/// Tape of tensor operations, built in topological order by construction.
///
/// Parameter leaves borrow from a [`ParamSet`]; every other node owns its value.
pub struct Graph<'p, F> {
    params: Option<&'p ParamSet<F>>,
    param_nodes: Vec<Option<Var>>,
    nodes: Vec<Node<F>>,
}

/// Result of a backward pass: gradients for every node that required one.
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    per_node: Vec<Option<Vec<F>>>,
    params: Vec<(ParamId, usize)>,
}

impl<F: Scalar> Gradients<F> {
    pub fn wrt(&self, v: Var) -> Option<&[F]> {
        self.per_node.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[F])> {
        self.params
            .iter()
            .filter_map(|&(id, node)| self.per_node[node].as_deref().map(|g| (id, g)))
    }
}

fn mat_dims(shape: &[usize]) -> Option<(usize, usize)> {
    match shape {
        [n] => Some((1, *n)),
        [m, n] => Some((*m, *n)),
        _ => None,
    }
}

/// True when `short` equals the trailing dims of `long`.
fn is_suffix(long: &[usize], short: &[usize]) -> bool {
    short.len() <= long.len() && long[long.len() - short.len()..] == *short
}

impl<'p, F: Scalar> Default for Graph<'p, F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, F: Scalar> Graph<'p, F> {
    pub fn new() -> Self {
        Self {
            params: None,
            param_nodes: Vec::new(),
            nodes: Vec::new(),
        }
    }

    pub fn with_params(params: &'p ParamSet<F>) -> Self {
        Self {
            params: Some(params),
            param_nodes: vec![None; params.len()],
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.expect("param graph").get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, op: Op<F>, inputs: Vec<Var>, value: Tensor<F>, aux: Vec<F>) -> Var {
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            op,
            inputs,
            value: Value::Owned(value),
            needs_grad,
            aux,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf node. Gradients are reported for it when `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<F>) -> Var {
        let needs_grad = tensor.requires_grad();
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            value: Value::Owned(tensor),
            needs_grad,
            aux: Vec::new(),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, tensor: Tensor<F>) -> Var {
        let mut t = tensor;
        if t.requires_grad() {
            let shape = t.shape().to_vec();
            t = Tensor::new(&shape, t.into_data()).expect("same shape");
        }
        self.leaf(t)
    }

    /// Leaf referencing a registered parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes.get(id.0).copied().flatten() {
            return v;
        }
        let params = self.params.expect("graph built without a parameter set");
        let needs_grad = params.get(id).requires_grad();
        self.nodes.push(Node {
            op: Op::Param(id),
            inputs: Vec::new(),
            value: Value::Param(id),
            needs_grad,
            aux: Vec::new(),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (Some((m, k)), Some((k2, n))) = (mat_dims(&sa), mat_dims(&sb)) else {
            return Err(Error::Shape(format!("matmul needs matrices, got {sa:?} and {sb:?}")));
        };
        if k != k2 || sa.len() != 2 || sb.len() != 2 {
            return Err(Error::Shape(format!("matmul {sa:?} × {sb:?}")));
        }
        let mut out = vec![F::zero(); m * n];
        kernels::matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let t = Tensor::new(&[m, n], out)?;
        Ok(self.push(Op::MatMul, vec![a, b], t, Vec::new()))
    }

    /// `a · bᵀ` for `a: [m×k]`, `b: [n×k]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::Shape(format!("matmul_t {sa:?} × {sb:?}ᵀ")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let mut out = vec![F::zero(); m * n];
        kernels::matmul_t_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let t = Tensor::new(&[m, n], out)?;
        Ok(self.push(Op::MatMulT, vec![a, b], t, Vec::new()))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let [m, n] = s[..] else {
            return Err(Error::Shape(format!("transpose needs a matrix, got {s:?}")));
        };
        let src = self.value(a).data();
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let t = Tensor::new(&[n, m], out)?;
        Ok(self.push(Op::Transpose, vec![a], t, Vec::new()))
    }

    fn broadcast_binary(&mut self, a: Var, b: Var, op: Op<F>, f: impl Fn(F, F) -> F) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let (out_shape, out) = if sa == sb {
            (sa, da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>())
        } else if is_suffix(&sa, &sb) && !db.is_empty() {
            let nb = db.len();
            (sa, da.iter().enumerate().map(|(i, &x)| f(x, db[i % nb])).collect())
        } else if is_suffix(&sb, &sa) && !da.is_empty() {
            let na = da.len();
            (sb, db.iter().enumerate().map(|(i, &y)| f(da[i % na], y)).collect())
        } else {
            return Err(Error::Shape(format!("cannot broadcast {sa:?} with {sb:?}")));
        };
        let t = Tensor::new(&out_shape, out)?;
        Ok(self.push(op, vec![a, b], t, Vec::new()))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary(a, b, Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary(a, b, Op::Sub, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary(a, b, Op::Mul, |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let src = self.value(a);
        let t = Tensor::new(src.shape(), src.data().iter().map(|&x| x * c).collect()).expect("same shape");
        self.push(Op::Scale(c), vec![a], t, Vec::new())
    }

    fn unary(&mut self, a: Var, op: Op<F>, f: impl Fn(F) -> F) -> Var {
        let src = self.value(a);
        let t = Tensor::new(src.shape(), src.data().iter().map(|&x| f(x)).collect()).expect("same shape");
        self.push(op, vec![a], t, Vec::new())
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Gelu, gelu)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh, F::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid, sigmoid)
    }

    /// Dispatches one of the elementwise ops by tag.
    pub fn elementwise(&mut self, op: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
        match (op, b) {
            (Elementwise::Add, Some(b)) => self.add(a, b),
            (Elementwise::Mul, Some(b)) => self.mul(a, b),
            (Elementwise::Gelu, None) => Ok(self.gelu(a)),
            (Elementwise::Tanh, None) => Ok(self.tanh(a)),
            (Elementwise::Sigmoid, None) => Ok(self.sigmoid(a)),
            (op, b) => Err(Error::Contract(format!(
                "{op:?} takes {} operand(s)",
                if b.is_some() { 1 } else { 2 }
            ))),
        }
    }

    /// Normalizes the last dimension then applies `gain` and `bias` (both `[d]`).
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var, eps: F) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let d = *s.last().ok_or_else(|| Error::Shape("layernorm on rank-0 tensor".into()))?;
        if d == 0 {
            return Err(Error::Shape("layernorm needs d ≥ 1".into()));
        }
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::Shape(format!(
                "layernorm over {d} with gain {:?} and bias {:?}",
                self.shape(gain),
                self.shape(bias)
            )));
        }
        let xs = self.value(x).data();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let rows = xs.len() / d;
        let dn = F::from_usize(d).unwrap();
        let mut out = vec![F::zero(); xs.len()];
        let mut aux = vec![F::zero(); xs.len() + rows];
        for r in 0..rows {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().fold(F::zero(), |acc, &v| acc + v) / dn;
            let var = row.iter().fold(F::zero(), |acc, &v| acc + (v - mean) * (v - mean)) / dn;
            let rstd = F::one() / (var + eps).sqrt();
            for j in 0..d {
                let xh = (row[j] - mean) * rstd;
                aux[r * d + j] = xh;
                out[r * d + j] = xh * g[j] + b[j];
            }
            aux[xs.len() + r] = rstd;
        }
        let t = Tensor::new(&s, out)?;
        Ok(self.push(Op::LayerNorm, vec![x, gain, bias], t, aux))
    }

    /// Softmax over the last dimension, max-subtracted.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let n = *s.last().ok_or_else(|| Error::Shape("softmax on rank-0 tensor".into()))?;
        if n == 0 {
            return Err(Error::Shape("softmax needs n ≥ 1".into()));
        }
        let xs = self.value(x).data();
        let mut out = vec![F::zero(); xs.len()];
        for (row, orow) in xs.chunks(n).zip(out.chunks_mut(n)) {
            let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
            let mut total = F::zero();
            for (o, &v) in orow.iter_mut().zip(row) {
                *o = (v - max).exp();
                total = total + *o;
            }
            orow.iter_mut().for_each(|o| *o = *o / total);
        }
        let t = Tensor::new(&s, out)?;
        Ok(self.push(Op::Softmax, vec![x], t, Vec::new()))
    }

    /// Stacks matrices (or vectors as single rows) along the first dimension.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let (_, n) = mat_dims(self.shape(*first)).ok_or_else(|| Error::Shape("concat_rows needs matrices".into()))?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (m, pn) = mat_dims(self.shape(p)).ok_or_else(|| Error::Shape("concat_rows needs matrices".into()))?;
            if pn != n {
                return Err(Error::Shape(format!("concat_rows width {pn} vs {n}")));
            }
            rows += m;
            out.extend_from_slice(self.value(p).data());
        }
        let t = Tensor::new(&[rows, n], out)?;
        Ok(self.push(Op::ConcatRows, parts.to_vec(), t, Vec::new()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let (m, _) = mat_dims(self.shape(*first)).ok_or_else(|| Error::Shape("concat_cols needs matrices".into()))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = mat_dims(self.shape(p)).ok_or_else(|| Error::Shape("concat_cols needs matrices".into()))?;
            if pm != m {
                return Err(Error::Shape(format!("concat_cols height {pm} vs {m}")));
            }
            widths.push(pn);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let t = Tensor::new(&[m, n], out)?;
        Ok(self.push(Op::ConcatCols, parts.to_vec(), t, Vec::new()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = mat_dims(self.shape(a)).ok_or_else(|| Error::Shape("slice_rows needs a matrix".into()))?;
        if start + len > m {
            return Err(Error::Shape(format!("rows {start}..{} of {m}", start + len)));
        }
        let out = self.value(a).data()[start * n..(start + len) * n].to_vec();
        let t = Tensor::new(&[len, n], out)?;
        Ok(self.push(Op::SliceRows(start), vec![a], t, Vec::new()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = mat_dims(self.shape(a)).ok_or_else(|| Error::Shape("slice_cols needs a matrix".into()))?;
        if start + len > n {
            return Err(Error::Shape(format!("cols {start}..{} of {n}", start + len)));
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&src[i * n + start..i * n + start + len]);
        }
        let t = Tensor::new(&[m, len], out)?;
        Ok(self.push(Op::SliceCols(start), vec![a], t, Vec::new()))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().fold(F::zero(), |acc, &v| acc + v);
        self.push(Op::Sum, vec![a], Tensor::scalar(s), Vec::new())
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let d = self.value(a).data();
        let n = F::from_usize(d.len().max(1)).unwrap();
        let s = d.iter().fold(F::zero(), |acc, &v| acc + v) / n;
        self.push(Op::Mean, vec![a], Tensor::scalar(s), Vec::new())
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = Tensor::new(shape, self.value(a).data().to_vec())?;
        Ok(self.push(Op::Reshape, vec![a], t, Vec::new()))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// The returned gradients can be added into parameter grad buffers with
    /// [`ParamSet::accumulate`]; repeated accumulation sums.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<F>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].needs_grad {
            grads[loss.0] = Some(vec![F::one()]);
        }
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || node.inputs.is_empty() {
                continue;
            }
            let Some(gout) = grads[idx].take() else { continue };
            self.backprop_node(idx, &gout, &mut grads);
            grads[idx] = Some(gout);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((id, i)),
                _ => None,
            })
            .collect();
        Ok(Gradients { per_node: grads, params })
    }

    fn backprop_node(&self, idx: usize, gout: &[F], grads: &mut [Option<Vec<F>>]) {
        let node = &self.nodes[idx];
        let out = self.value(Var(idx));
        let inp = |k: usize| node.inputs[k];
        let wants = |k: usize| self.nodes[node.inputs[k].0].needs_grad;
        let acc = |grads: &mut [Option<Vec<F>>], v: Var, f: &dyn Fn(&mut [F])| {
            let len = self.value(v).len();
            let g = grads[v.0].get_or_insert_with(|| vec![F::zero(); len]);
            f(g);
        };

        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul => {
                let (a, b) = (self.value(inp(0)), self.value(inp(1)));
                let (m, k) = (a.shape()[0], a.shape()[1]);
                let n = b.shape()[1];
                if wants(0) {
                    acc(grads, inp(0), &|g| kernels::matmul_t_acc(gout, b.data(), g, m, n, k));
                }
                if wants(1) {
                    acc(grads, inp(1), &|g| kernels::t_matmul_acc(a.data(), gout, g, m, k, n));
                }
            }
            Op::MatMulT => {
                let (a, b) = (self.value(inp(0)), self.value(inp(1)));
                let (m, k) = (a.shape()[0], a.shape()[1]);
                let n = b.shape()[0];
                if wants(0) {
                    acc(grads, inp(0), &|g| kernels::matmul_acc(gout, b.data(), g, m, n, k));
                }
                if wants(1) {
                    acc(grads, inp(1), &|g| kernels::t_matmul_acc(gout, a.data(), g, m, n, k));
                }
            }
            Op::Transpose => {
                let (m, n) = (out.shape()[1], out.shape()[0]);
                acc(grads, inp(0), &|g| {
                    for i in 0..m {
                        for j in 0..n {
                            g[i * n + j] = g[i * n + j] + gout[j * m + i];
                        }
                    }
                });
            }
            Op::Add | Op::Sub | Op::Mul => {
                let sign = if matches!(node.op, Op::Sub) { -F::one() } else { F::one() };
                let (a, b) = (self.value(inp(0)), self.value(inp(1)));
                let is_mul = matches!(node.op, Op::Mul);
                let total = out.len();
                for (k, this, other) in [(0usize, a, b), (1usize, b, a)] {
                    if !wants(k) {
                        continue;
                    }
                    let s = if k == 1 { sign } else { F::one() };
                    let (nt, no) = (this.len(), other.len());
                    acc(grads, inp(k), &|g| {
                        for i in 0..total {
                            let mut d = gout[i] * s;
                            if is_mul {
                                d = d * other.data()[i % no];
                            }
                            g[i % nt] = g[i % nt] + d;
                        }
                    });
                }
            }
            Op::Scale(c) => {
                let c = *c;
                acc(grads, inp(0), &|g| {
                    g.iter_mut().zip(gout).for_each(|(gi, &go)| *gi = *gi + go * c);
                });
            }
            Op::Gelu | Op::Tanh | Op::Sigmoid => {
                let x = self.value(inp(0)).data();
                let y = out.data();
                let op = node.op.clone();
                acc(grads, inp(0), &|g| {
                    for i in 0..g.len() {
                        let d = match op {
                            Op::Gelu => gelu_grad(x[i]),
                            Op::Tanh => F::one() - y[i] * y[i],
                            _ => y[i] * (F::one() - y[i]),
                        };
                        g[i] = g[i] + gout[i] * d;
                    }
                });
            }
            Op::LayerNorm => {
                let gain = self.value(inp(1)).data();
                let d = gain.len();
                let rows = out.len() / d;
                let (xhat, rstd) = node.aux.split_at(out.len());
                if wants(0) {
                    let dn = F::from_usize(d).unwrap();
                    acc(grads, inp(0), &|g| {
                        for r in 0..rows {
                            let mut mean_dxh = F::zero();
                            let mut mean_dxh_xh = F::zero();
                            for j in 0..d {
                                let dxh = gout[r * d + j] * gain[j];
                                mean_dxh = mean_dxh + dxh;
                                mean_dxh_xh = mean_dxh_xh + dxh * xhat[r * d + j];
                            }
                            mean_dxh = mean_dxh / dn;
                            mean_dxh_xh = mean_dxh_xh / dn;
                            for j in 0..d {
                                let dxh = gout[r * d + j] * gain[j];
                                let v = rstd[r] * (dxh - mean_dxh - xhat[r * d + j] * mean_dxh_xh);
                                g[r * d + j] = g[r * d + j] + v;
                            }
                        }
                    });
                }
                if wants(1) {
                    acc(grads, inp(1), &|g| {
                        for i in 0..out.len() {
                            g[i % d] = g[i % d] + gout[i] * xhat[i];
                        }
                    });
                }
                if wants(2) {
                    acc(grads, inp(2), &|g| {
                        for i in 0..out.len() {
                            g[i % d] = g[i % d] + gout[i];
                        }
                    });
                }
            }
            Op::Softmax => {
                let n = *out.shape().last().unwrap();
                let y = out.data();
                acc(grads, inp(0), &|g| {
                    for (r, yrow) in y.chunks(n).enumerate() {
                        let grow = &gout[r * n..(r + 1) * n];
                        let dotp = yrow.iter().zip(grow).fold(F::zero(), |s, (&a, &b)| s + a * b);
                        for j in 0..n {
                            g[r * n + j] = g[r * n + j] + yrow[j] * (grow[j] - dotp);
                        }
                    }
                });
            }
            Op::ConcatRows => {
                let mut offset = 0;
                for &p in &node.inputs {
                    let len = self.value(p).len();
                    if self.nodes[p.0].needs_grad {
                        let src = &gout[offset..offset + len];
                        acc(grads, p, &|g| g.iter_mut().zip(src).for_each(|(gi, &s)| *gi = *gi + s));
                    }
                    offset += len;
                }
            }
            Op::ConcatCols => {
                let m = out.shape()[0];
                let n = out.shape()[1];
                let mut col = 0;
                for &p in &node.inputs {
                    let w = self.value(p).len() / m.max(1);
                    if self.nodes[p.0].needs_grad {
                        acc(grads, p, &|g| {
                            for i in 0..m {
                                for j in 0..w {
                                    g[i * w + j] = g[i * w + j] + gout[i * n + col + j];
                                }
                            }
                        });
                    }
                    col += w;
                }
            }
            Op::SliceRows(start) => {
                let n = out.shape()[1];
                let off = start * n;
                acc(grads, inp(0), &|g| {
                    for (i, &v) in gout.iter().enumerate() {
                        g[off + i] = g[off + i] + v;
                    }
                });
            }
            Op::SliceCols(start) => {
                let (m, len) = (out.shape()[0], out.shape()[1]);
                let n = self.value(inp(0)).len() / m.max(1);
                let start = *start;
                acc(grads, inp(0), &|g| {
                    for i in 0..m {
                        for j in 0..len {
                            g[i * n + start + j] = g[i * n + start + j] + gout[i * len + j];
                        }
                    }
                });
            }
            Op::Sum | Op::Mean => {
                let len = self.value(inp(0)).len();
                let d = if matches!(node.op, Op::Mean) {
                    gout[0] / F::from_usize(len.max(1)).unwrap()
                } else {
                    gout[0]
                };
                acc(grads, inp(0), &|g| g.iter_mut().for_each(|gi| *gi = *gi + d));
            }
            Op::Reshape => {
                acc(grads, inp(0), &|g| {
                    g.iter_mut().zip(gout).for_each(|(gi, &go)| *gi = *gi + go);
                });
            }
        }
    }
}
