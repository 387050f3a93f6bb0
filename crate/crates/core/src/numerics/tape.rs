use super::Tensor;
use crate::{Error, Real, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul { a: Var, b: Var },
    Transpose { x: Var },
    Add { a: Var, b: Var },
    AddScalar { x: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: Real },
    Sigmoid { x: Var },
    Relu { x: Var },
    Log { x: Var },
    Clamp { x: Var, lo: Real, hi: Real },
    SoftmaxRows { x: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, eps: Real },
    BroadcastRow { v: Var, rows: usize },
    ConcatRows { parts: Vec<Var> },
    ConcatCols { parts: Vec<Var> },
    SliceCols { x: Var, start: usize, len: usize },
    SelectRowsMean { x: Var, indices: Vec<usize> },
    SumAll { x: Var },
}

/// Define-by-run tape: records every operation in topological order and
/// replays them in reverse on [`Tape::backward`]. Rebuilt per forward pass;
/// not shared between threads.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Tensor>,
    ops: Vec<Op>,
}

/// Gradients extracted by [`Tape::backward`]; the tape itself is consumed.
pub struct Gradients {
    grads: Vec<Option<Vec<Real>>>,
}

impl Gradients {
    /// Gradient buffer for `v`, if any gradient reached it.
    pub fn take(&mut self, v: Var) -> Option<Vec<Real>> {
        self.grads[v.0].take()
    }

    pub fn get(&self, v: Var) -> Option<&[Real]> {
        self.grads[v.0].as_deref()
    }
}

pub(crate) fn matmul_raw(a: &[Real], b: &[Real], m: usize, k: usize, n: usize) -> Vec<Real> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

fn transpose_raw(x: &[Real], rows: usize, cols: usize) -> Vec<Real> {
    let mut out = vec![0.0; x.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = x[i * cols + j];
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0]
    }

    fn push(&mut self, t: Tensor, op: Op) -> Var {
        self.nodes.push(t);
        self.ops.push(op);
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Insert a tensor as a leaf, keeping its `requires_grad` flag.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Insert a tensor as a constant (never differentiated).
    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.requires_grad = false;
        self.push(t, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0], &self.nodes[b.0]);
        let (m, k) = (ta.rows(), ta.cols());
        let (k2, n) = (tb.rows(), tb.cols());
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul inner dims differ: lhs {:?} vs rhs {:?}",
                ta.shape, tb.shape
            )));
        }
        let values = matmul_raw(&ta.values, &tb.values, m, k, n);
        let mut out = Tensor::new(vec![m, n], values)?;
        out.requires_grad = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Matmul { a, b }))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let tx = &self.nodes[x.0];
        let (r, c) = (tx.rows(), tx.cols());
        let values = transpose_raw(&tx.values, r, c);
        let mut out = Tensor { shape: vec![c, r], values, requires_grad: false, grad: None };
        out.requires_grad = tx.requires_grad;
        self.push(out, Op::Transpose { x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0], &self.nodes[b.0]);
        if ta.rows() != tb.rows() || ta.cols() != tb.cols() {
            return Err(Error::shape(format!(
                "add shapes differ: {:?} vs {:?}",
                ta.shape, tb.shape
            )));
        }
        let values: Vec<Real> =
            ta.values.iter().zip(&tb.values).map(|(x, y)| x + y).collect();
        let mut out = Tensor { shape: ta.shape.clone(), values, requires_grad: false, grad: None };
        out.requires_grad = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Add { a, b }))
    }

    pub fn add_scalar(&mut self, x: Var, c: Real) -> Var {
        let tx = &self.nodes[x.0];
        let values: Vec<Real> = tx.values.iter().map(|v| v + c).collect();
        let out = Tensor {
            shape: tx.shape.clone(),
            values,
            requires_grad: tx.requires_grad,
            grad: None,
        };
        self.push(out, Op::AddScalar { x })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0], &self.nodes[b.0]);
        if ta.rows() != tb.rows() || ta.cols() != tb.cols() {
            return Err(Error::shape(format!(
                "mul shapes differ: {:?} vs {:?}",
                ta.shape, tb.shape
            )));
        }
        let values: Vec<Real> =
            ta.values.iter().zip(&tb.values).map(|(x, y)| x * y).collect();
        let mut out = Tensor { shape: ta.shape.clone(), values, requires_grad: false, grad: None };
        out.requires_grad = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: Var, c: Real) -> Var {
        let tx = &self.nodes[x.0];
        let values: Vec<Real> = tx.values.iter().map(|v| v * c).collect();
        let out = Tensor {
            shape: tx.shape.clone(),
            values,
            requires_grad: tx.requires_grad,
            grad: None,
        };
        self.push(out, Op::Scale { x, c })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let tx = &self.nodes[x.0];
        let values: Vec<Real> = tx.values.iter().map(|&v| sigmoid(v)).collect();
        let out = Tensor {
            shape: tx.shape.clone(),
            values,
            requires_grad: tx.requires_grad,
            grad: None,
        };
        self.push(out, Op::Sigmoid { x })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let tx = &self.nodes[x.0];
        let values: Vec<Real> = tx.values.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let out = Tensor {
            shape: tx.shape.clone(),
            values,
            requires_grad: tx.requires_grad,
            grad: None,
        };
        self.push(out, Op::Relu { x })
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let tx = &self.nodes[x.0];
        if let Some(bad) = tx.values.iter().find(|&&v| v <= 0.0) {
            return Err(Error::domain(format!("log of non-positive value {bad}")));
        }
        let values: Vec<Real> = tx.values.iter().map(|v| v.ln()).collect();
        let out = Tensor {
            shape: tx.shape.clone(),
            values,
            requires_grad: tx.requires_grad,
            grad: None,
        };
        Ok(self.push(out, Op::Log { x }))
    }

    pub fn clamp(&mut self, x: Var, lo: Real, hi: Real) -> Var {
        let tx = &self.nodes[x.0];
        let values: Vec<Real> = tx.values.iter().map(|v| v.max(lo).min(hi)).collect();
        let out = Tensor {
            shape: tx.shape.clone(),
            values,
            requires_grad: tx.requires_grad,
            grad: None,
        };
        self.push(out, Op::Clamp { x, lo, hi })
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let tx = &self.nodes[x.0];
        debug_assert!(tx.values.iter().all(|v| v.is_finite()), "softmax on non-finite input");
        let (r, c) = (tx.rows(), tx.cols());
        let mut values = vec![0.0; r * c];
        for i in 0..r {
            let row = &tx.values[i * c..(i + 1) * c];
            let m = row.iter().copied().fold(Real::NEG_INFINITY, Real::max);
            let out = &mut values[i * c..(i + 1) * c];
            let mut sum = 0.0;
            for (o, &v) in out.iter_mut().zip(row) {
                *o = (v - m).exp();
                sum += *o;
            }
            for o in out.iter_mut() {
                *o /= sum;
            }
        }
        let out = Tensor {
            shape: tx.shape.clone(),
            values,
            requires_grad: tx.requires_grad,
            grad: None,
        };
        self.push(out, Op::SoftmaxRows { x })
    }

    /// Per-row normalization to zero mean / unit variance (population
    /// variance plus `eps`), then elementwise gain and bias over columns.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: Real) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::contract(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let (tx, tg, tb) = (&self.nodes[x.0], &self.nodes[gain.0], &self.nodes[bias.0]);
        let (r, c) = (tx.rows(), tx.cols());
        if tg.numel() != c || tb.numel() != c {
            return Err(Error::shape(format!(
                "layer_norm gain/bias must have {c} elements, got {} and {}",
                tg.numel(),
                tb.numel()
            )));
        }
        let mut values = vec![0.0; r * c];
        for i in 0..r {
            let row = &tx.values[i * c..(i + 1) * c];
            let mean = row.iter().sum::<Real>() / c as Real;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / c as Real;
            let inv = 1.0 / (var + eps).sqrt();
            let out = &mut values[i * c..(i + 1) * c];
            for j in 0..c {
                out[j] = (row[j] - mean) * inv * tg.values[j] + tb.values[j];
            }
        }
        let mut out = Tensor { shape: tx.shape.clone(), values, requires_grad: false, grad: None };
        out.requires_grad = self.any_grad(&[x, gain, bias]);
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, eps }))
    }

    /// Repeat a length-n row vector into a rows×n matrix.
    pub fn broadcast_row(&mut self, v: Var, rows: usize) -> Result<Var> {
        let tv = &self.nodes[v.0];
        if tv.rows() != 1 {
            return Err(Error::shape(format!(
                "broadcast_row needs a row vector, got {:?}",
                tv.shape
            )));
        }
        let c = tv.cols();
        let mut values = Vec::with_capacity(rows * c);
        for _ in 0..rows {
            values.extend_from_slice(&tv.values);
        }
        let out = Tensor {
            shape: vec![rows, c],
            values,
            requires_grad: tv.requires_grad,
            grad: None,
        };
        Ok(self.push(out, Op::BroadcastRow { v, rows }))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("concat_rows of zero parts"));
        }
        let cols = self.nodes[parts[0].0].cols();
        let mut values = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let tp = &self.nodes[p.0];
            if tp.cols() != cols {
                return Err(Error::shape(format!(
                    "concat_rows column mismatch: {} vs {}",
                    tp.cols(),
                    cols
                )));
            }
            rows += tp.rows();
            values.extend_from_slice(&tp.values);
        }
        let mut out = Tensor { shape: vec![rows, cols], values, requires_grad: false, grad: None };
        out.requires_grad = self.any_grad(parts);
        Ok(self.push(out, Op::ConcatRows { parts: parts.to_vec() }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("concat_cols of zero parts"));
        }
        let rows = self.nodes[parts[0].0].rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let tp = &self.nodes[p.0];
            if tp.rows() != rows {
                return Err(Error::shape(format!(
                    "concat_cols row mismatch: {} vs {}",
                    tp.rows(),
                    rows
                )));
            }
            widths.push(tp.cols());
        }
        let cols: usize = widths.iter().sum();
        let mut values = vec![0.0; rows * cols];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let tp = &self.nodes[p.0];
            for i in 0..rows {
                values[i * cols + offset..i * cols + offset + w]
                    .copy_from_slice(&tp.values[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let mut out = Tensor { shape: vec![rows, cols], values, requires_grad: false, grad: None };
        out.requires_grad = self.any_grad(parts);
        Ok(self.push(out, Op::ConcatCols { parts: parts.to_vec() }))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = &self.nodes[x.0];
        let (r, c) = (tx.rows(), tx.cols());
        if start + len > c {
            return Err(Error::shape(format!(
                "slice_cols [{start}, {}) out of width {c}",
                start + len
            )));
        }
        let mut values = Vec::with_capacity(r * len);
        for i in 0..r {
            values.extend_from_slice(&tx.values[i * c + start..i * c + start + len]);
        }
        let out = Tensor {
            shape: vec![r, len],
            values,
            requires_grad: tx.requires_grad,
            grad: None,
        };
        Ok(self.push(out, Op::SliceCols { x, start, len }))
    }

    /// Arithmetic mean of the selected rows, as a 1×n matrix.
    pub fn select_rows_mean(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        if indices.is_empty() {
            return Err(Error::contract("select_rows_mean with empty index list"));
        }
        let tx = &self.nodes[x.0];
        let (r, c) = (tx.rows(), tx.cols());
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(Error::contract(format!(
                "select_rows_mean index {bad} out of {r} rows"
            )));
        }
        let mut values = vec![0.0; c];
        for &i in indices {
            for j in 0..c {
                values[j] += tx.values[i * c + j];
            }
        }
        let inv = 1.0 / indices.len() as Real;
        values.iter_mut().for_each(|v| *v *= inv);
        let out = Tensor {
            shape: vec![1, c],
            values,
            requires_grad: tx.requires_grad,
            grad: None,
        };
        Ok(self.push(out, Op::SelectRowsMean { x, indices: indices.to_vec() }))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let tx = &self.nodes[x.0];
        let total: Real = tx.values.iter().sum();
        let out = Tensor {
            shape: vec![],
            values: vec![total],
            requires_grad: tx.requires_grad,
            grad: None,
        };
        self.push(out, Op::SumAll { x })
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.nodes[x.0].numel() as Real;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    /// Reverse sweep from a scalar loss. Consumes the tape; gradients are
    /// populated for every node with `requires_grad` reachable from `loss`.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if !self.nodes[loss.0].is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<Real>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..n).rev() {
            let out_grad = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.apply_backward(idx, &out_grad, &mut grads);
            // Leaves keep their gradient; interior grads were consumed above.
            if matches!(self.ops[idx], Op::Leaf) {
                grads[idx] = Some(out_grad);
            }
        }

        // Drop gradients of leaves that never asked for them.
        for (i, g) in grads.iter_mut().enumerate() {
            if !self.nodes[i].requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(grads: &mut [Option<Vec<Real>>], tgt: Var, contrib: &[Real]) {
        match &mut grads[tgt.0] {
            Some(g) => g.iter_mut().zip(contrib).for_each(|(a, b)| *a += b),
            None => grads[tgt.0] = Some(contrib.to_vec()),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn apply_backward(&self, idx: usize, g: &[Real], grads: &mut Vec<Option<Vec<Real>>>) {
        match &self.ops[idx] {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (ta, tb) = (&self.nodes[a.0], &self.nodes[b.0]);
                let (m, k) = (ta.rows(), ta.cols());
                let nn = tb.cols();
                if self.needs(*a) {
                    // dA = dC · Bᵀ
                    let bt = transpose_raw(&tb.values, k, nn);
                    let da = matmul_raw(g, &bt, m, nn, k);
                    Self::accumulate(grads, *a, &da);
                }
                if self.needs(*b) {
                    // dB = Aᵀ · dC
                    let at = transpose_raw(&ta.values, m, k);
                    let db = matmul_raw(&at, g, k, m, nn);
                    Self::accumulate(grads, *b, &db);
                }
            }
            Op::Transpose { x } => {
                if self.needs(*x) {
                    let t = &self.nodes[idx];
                    let dx = transpose_raw(g, t.rows(), t.cols());
                    Self::accumulate(grads, *x, &dx);
                }
            }
            Op::Add { a, b } => {
                if self.needs(*a) {
                    Self::accumulate(grads, *a, g);
                }
                if self.needs(*b) {
                    Self::accumulate(grads, *b, g);
                }
            }
            Op::AddScalar { x } => {
                if self.needs(*x) {
                    Self::accumulate(grads, *x, g);
                }
            }
            Op::Mul { a, b } => {
                if self.needs(*a) {
                    let db: Vec<Real> =
                        g.iter().zip(&self.nodes[b.0].values).map(|(g, v)| g * v).collect();
                    Self::accumulate(grads, *a, &db);
                }
                if self.needs(*b) {
                    let da: Vec<Real> =
                        g.iter().zip(&self.nodes[a.0].values).map(|(g, v)| g * v).collect();
                    Self::accumulate(grads, *b, &da);
                }
            }
            Op::Scale { x, c } => {
                if self.needs(*x) {
                    let dx: Vec<Real> = g.iter().map(|v| v * c).collect();
                    Self::accumulate(grads, *x, &dx);
                }
            }
            Op::Sigmoid { x } => {
                if self.needs(*x) {
                    let y = &self.nodes[idx].values;
                    let dx: Vec<Real> =
                        g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                    Self::accumulate(grads, *x, &dx);
                }
            }
            Op::Relu { x } => {
                if self.needs(*x) {
                    let xin = &self.nodes[x.0].values;
                    let dx: Vec<Real> =
                        g.iter().zip(xin).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }).collect();
                    Self::accumulate(grads, *x, &dx);
                }
            }
            Op::Log { x } => {
                if self.needs(*x) {
                    let xin = &self.nodes[x.0].values;
                    let dx: Vec<Real> = g.iter().zip(xin).map(|(g, x)| g / x).collect();
                    Self::accumulate(grads, *x, &dx);
                }
            }
            Op::Clamp { x, lo, hi } => {
                if self.needs(*x) {
                    let xin = &self.nodes[x.0].values;
                    let dx: Vec<Real> = g
                        .iter()
                        .zip(xin)
                        .map(|(g, x)| if *x > *lo && *x < *hi { *g } else { 0.0 })
                        .collect();
                    Self::accumulate(grads, *x, &dx);
                }
            }
            Op::SoftmaxRows { x } => {
                if self.needs(*x) {
                    let y = &self.nodes[idx];
                    let (r, c) = (y.rows(), y.cols());
                    let mut dx = vec![0.0; r * c];
                    for i in 0..r {
                        let yr = &y.values[i * c..(i + 1) * c];
                        let gr = &g[i * c..(i + 1) * c];
                        let dot: Real = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                        let dr = &mut dx[i * c..(i + 1) * c];
                        for j in 0..c {
                            dr[j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    Self::accumulate(grads, *x, &dx);
                }
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let tx = &self.nodes[x.0];
                let tg = &self.nodes[gain.0];
                let (r, c) = (tx.rows(), tx.cols());
                let mut dx = vec![0.0; r * c];
                let mut dgain = vec![0.0; c];
                let mut dbias = vec![0.0; c];
                for i in 0..r {
                    let row = &tx.values[i * c..(i + 1) * c];
                    let gr = &g[i * c..(i + 1) * c];
                    let mean = row.iter().sum::<Real>() / c as Real;
                    let var =
                        row.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / c as Real;
                    let inv = 1.0 / (var + eps).sqrt();
                    // xhat_j = (x_j - mean) * inv
                    let mut sum_gy = 0.0; // Σ g∘gain
                    let mut sum_gyx = 0.0; // Σ g∘gain∘xhat
                    for j in 0..c {
                        let xh = (row[j] - mean) * inv;
                        let gy = gr[j] * tg.values[j];
                        sum_gy += gy;
                        sum_gyx += gy * xh;
                        dgain[j] += gr[j] * xh;
                        dbias[j] += gr[j];
                    }
                    let dxr = &mut dx[i * c..(i + 1) * c];
                    for j in 0..c {
                        let xh = (row[j] - mean) * inv;
                        let gy = gr[j] * tg.values[j];
                        dxr[j] = inv
                            * (gy - sum_gy / c as Real - xh * sum_gyx / c as Real);
                    }
                }
                if self.needs(*x) {
                    Self::accumulate(grads, *x, &dx);
                }
                if self.needs(*gain) {
                    Self::accumulate(grads, *gain, &dgain);
                }
                if self.needs(*bias) {
                    Self::accumulate(grads, *bias, &dbias);
                }
            }
            Op::BroadcastRow { v, rows } => {
                if self.needs(*v) {
                    let c = self.nodes[v.0].cols();
                    let mut dv = vec![0.0; c];
                    for i in 0..*rows {
                        for j in 0..c {
                            dv[j] += g[i * c + j];
                        }
                    }
                    Self::accumulate(grads, *v, &dv);
                }
            }
            Op::ConcatRows { parts } => {
                let cols = self.nodes[idx].cols();
                let mut offset = 0;
                for &p in parts {
                    let pr = self.nodes[p.0].rows();
                    if self.needs(p) {
                        let slice = &g[offset * cols..(offset + pr) * cols];
                        Self::accumulate(grads, p, slice);
                    }
                    offset += pr;
                }
            }
            Op::ConcatCols { parts } => {
                let rows = self.nodes[idx].rows();
                let cols = self.nodes[idx].cols();
                let mut offset = 0;
                for &p in parts {
                    let pw = self.nodes[p.0].cols();
                    if self.needs(p) {
                        let mut dp = vec![0.0; rows * pw];
                        for i in 0..rows {
                            dp[i * pw..(i + 1) * pw]
                                .copy_from_slice(&g[i * cols + offset..i * cols + offset + pw]);
                        }
                        Self::accumulate(grads, p, &dp);
                    }
                    offset += pw;
                }
            }
            Op::SliceCols { x, start, len } => {
                if self.needs(*x) {
                    let tx = &self.nodes[x.0];
                    let (r, c) = (tx.rows(), tx.cols());
                    let mut dx = vec![0.0; r * c];
                    for i in 0..r {
                        dx[i * c + start..i * c + start + len]
                            .copy_from_slice(&g[i * len..(i + 1) * len]);
                    }
                    Self::accumulate(grads, *x, &dx);
                }
            }
            Op::SelectRowsMean { x, indices } => {
                if self.needs(*x) {
                    let tx = &self.nodes[x.0];
                    let (r, c) = (tx.rows(), tx.cols());
                    let mut dx = vec![0.0; r * c];
                    let inv = 1.0 / indices.len() as Real;
                    for &i in indices {
                        for j in 0..c {
                            dx[i * c + j] += g[j] * inv;
                        }
                    }
                    Self::accumulate(grads, *x, &dx);
                }
            }
            Op::SumAll { x } => {
                if self.needs(*x) {
                    let dx = vec![g[0]; self.nodes[x.0].numel()];
                    Self::accumulate(grads, *x, &dx);
                }
            }
        }
    }
}

pub(crate) fn sigmoid(v: Real) -> Real {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
