//! Hand-rolled reverse-mode differentiation over a recorded op tape.
//!
//! A [`Graph`] records every operation as it executes; [`Graph::backward`]
//! replays the tape in reverse and accumulates exact gradients for every
//! node. Tensors are dense row-major `f64` matrices; scalars are `1×1`.
//!
//! The op set is deliberately small: enough for a pre-norm decoder
//! (matmul, fused causal attention, RMS norm, GELU, embeddings, dropout
//! masks via elementwise multiply) plus the scalar algebra the loss heads
//! need (exp/ln/sqrt, dot, clamp, minimum, reductions).

use crate::error::{Error, Result};

/// Dense row-major matrix. Scalars are `1×1`, row vectors `1×n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length mismatch");
        Tensor { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    pub fn row_vec(data: Vec<f64>) -> Self {
        Tensor {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId, f64),
    MatMul(NodeId, NodeId),
    Gelu(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Sqrt(NodeId),
    RmsNorm { x: NodeId, gain: NodeId },
    CausalAttention { q: NodeId, k: NodeId, v: NodeId, heads: usize, weights: Vec<f64> },
    Embed { table: NodeId, ids: Vec<u32> },
    Row(NodeId, usize),
    LogSoftmaxRows(NodeId),
    PickLogProb { logits: NodeId, rows: Vec<usize>, cols: Vec<u32> },
    Mean(NodeId),
    Sum(NodeId),
    Dot(NodeId, NodeId),
    Minimum(NodeId, NodeId),
    Clamp(NodeId, f64, f64),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients per node, indexed by `NodeId`; untouched nodes are `None`.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    /// Gradient of a node, zeros if the loss does not depend on it.
    pub fn get_or_zeros(&self, id: NodeId, rows: usize, cols: usize) -> Tensor {
        match &self.grads[id.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(rows, cols),
        }
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        let t = &self.nodes[id.0].value;
        (t.rows, t.cols)
    }

    // ── node constructors ────────────────────────────────────────────────

    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.push(Tensor::scalar(v), Op::Leaf)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let data: Vec<f64> = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(x, y)| x + y)
            .collect();
        let (r, c) = self.shape(a);
        self.push(Tensor::new(r, c, data), Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "sub shape mismatch");
        let data: Vec<f64> = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(x, y)| x - y)
            .collect();
        let (r, c) = self.shape(a);
        self.push(Tensor::new(r, c, data), Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let data: Vec<f64> = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(x, y)| x * y)
            .collect();
        let (r, c) = self.shape(a);
        self.push(Tensor::new(r, c, data), Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "div shape mismatch");
        let data: Vec<f64> = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(x, y)| x / y)
            .collect();
        let (r, c) = self.shape(a);
        self.push(Tensor::new(r, c, data), Op::Div(a, b))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let data: Vec<f64> = self.nodes[a.0].value.data.iter().map(|x| x * s).collect();
        let (r, c) = self.shape(a);
        self.push(Tensor::new(r, c, data), Op::Scale(a, s))
    }

    pub fn add_const(&mut self, a: NodeId, s: f64) -> NodeId {
        let data: Vec<f64> = self.nodes[a.0].value.data.iter().map(|x| x + s).collect();
        let (r, c) = self.shape(a);
        self.push(Tensor::new(r, c, data), Op::AddConst(a, s))
    }

    /// `(m×k) · (k×n) → (m×n)`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (m, ka) = self.shape(a);
        let (kb, n) = self.shape(b);
        assert_eq!(ka, kb, "matmul inner dim mismatch");
        let mut out = vec![0.0; m * n];
        {
            let av = &self.nodes[a.0].value.data;
            let bv = &self.nodes[b.0].value.data;
            for i in 0..m {
                let arow = &av[i * ka..(i + 1) * ka];
                let orow = &mut out[i * n..(i + 1) * n];
                for (kk, &aik) in arow.iter().enumerate() {
                    if aik == 0.0 {
                        continue;
                    }
                    let brow = &bv[kk * n..(kk + 1) * n];
                    for (o, &bkj) in orow.iter_mut().zip(brow) {
                        *o += aik * bkj;
                    }
                }
            }
        }
        self.push(Tensor::new(m, n, out), Op::MatMul(a, b))
    }

    /// GELU, tanh approximation; smooth so finite differences behave.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let data: Vec<f64> = self.nodes[a.0].value.data.iter().map(|&x| gelu(x)).collect();
        let (r, c) = self.shape(a);
        self.push(Tensor::new(r, c, data), Op::Gelu(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let data: Vec<f64> = self.nodes[a.0].value.data.iter().map(|x| x.exp()).collect();
        let (r, c) = self.shape(a);
        self.push(Tensor::new(r, c, data), Op::Exp(a))
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let data: Vec<f64> = self.nodes[a.0].value.data.iter().map(|x| x.ln()).collect();
        let (r, c) = self.shape(a);
        self.push(Tensor::new(r, c, data), Op::Ln(a))
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let data: Vec<f64> = self.nodes[a.0].value.data.iter().map(|x| x.sqrt()).collect();
        let (r, c) = self.shape(a);
        self.push(Tensor::new(r, c, data), Op::Sqrt(a))
    }

    /// Per-row RMS normalization with a learnable gain row:
    /// `y[i] = x[i] / rms(x[i]) ⊙ gain`.
    pub fn rmsnorm(&mut self, x: NodeId, gain: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        let (gr, gc) = self.shape(gain);
        assert_eq!((gr, gc), (1, c), "rmsnorm gain must be 1×cols");
        let mut out = vec![0.0; r * c];
        {
            let xv = &self.nodes[x.0].value.data;
            let gv = &self.nodes[gain.0].value.data;
            for i in 0..r {
                let xrow = &xv[i * c..(i + 1) * c];
                let ms = xrow.iter().map(|v| v * v).sum::<f64>() / c as f64;
                let inv = 1.0 / (ms + RMS_EPS).sqrt();
                for j in 0..c {
                    out[i * c + j] = xrow[j] * inv * gv[j];
                }
            }
        }
        self.push(Tensor::new(r, c, out), Op::RmsNorm { x, gain })
    }

    /// Fused multi-head causal self-attention over a full sequence.
    /// `q`, `k`, `v` are `(n×w)`; position `i` attends to `j ≤ i`.
    pub fn causal_attention(&mut self, q: NodeId, k: NodeId, v: NodeId, heads: usize) -> NodeId {
        let (n, w) = self.shape(q);
        assert_eq!(self.shape(k), (n, w), "attention k shape mismatch");
        assert_eq!(self.shape(v), (n, w), "attention v shape mismatch");
        assert_eq!(w % heads, 0, "width not divisible by heads");
        let dh = w / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = vec![0.0; n * w];
        let mut weights = vec![0.0; heads * n * n];
        {
            let qv = &self.nodes[q.0].value.data;
            let kv = &self.nodes[k.0].value.data;
            let vv = &self.nodes[v.0].value.data;
            let mut logits = vec![0.0; n];
            for h in 0..heads {
                let off = h * dh;
                for i in 0..n {
                    let qi = &qv[i * w + off..i * w + off + dh];
                    let mut maxl = f64::NEG_INFINITY;
                    for (j, l) in logits.iter_mut().enumerate().take(i + 1) {
                        let kj = &kv[j * w + off..j * w + off + dh];
                        let dot: f64 = qi.iter().zip(kj).map(|(a, b)| a * b).sum();
                        *l = dot * scale;
                        if *l > maxl {
                            maxl = *l;
                        }
                    }
                    let mut denom = 0.0;
                    for l in logits.iter_mut().take(i + 1) {
                        *l = (*l - maxl).exp();
                        denom += *l;
                    }
                    let wrow = &mut weights[h * n * n + i * n..h * n * n + i * n + i + 1];
                    for (wij, l) in wrow.iter_mut().zip(logits.iter().take(i + 1)) {
                        *wij = l / denom;
                    }
                    let orow = &mut out[i * w + off..i * w + off + dh];
                    for (j, &wij) in wrow.iter().enumerate() {
                        if wij == 0.0 {
                            continue;
                        }
                        let vj = &vv[j * w + off..j * w + off + dh];
                        for (o, &vjd) in orow.iter_mut().zip(vj) {
                            *o += wij * vjd;
                        }
                    }
                }
            }
        }
        self.push(
            Tensor::new(n, w, out),
            Op::CausalAttention { q, k, v, heads, weights },
        )
    }

    /// Row-gather from an embedding table.
    pub fn embed(&mut self, table: NodeId, ids: &[u32]) -> NodeId {
        let (vocab, width) = self.shape(table);
        let mut out = vec![0.0; ids.len() * width];
        {
            let tv = &self.nodes[table.0].value.data;
            for (i, &id) in ids.iter().enumerate() {
                let id = id as usize;
                assert!(id < vocab, "embed id {id} out of range {vocab}");
                out[i * width..(i + 1) * width]
                    .copy_from_slice(&tv[id * width..(id + 1) * width]);
            }
        }
        self.push(
            Tensor::new(ids.len(), width, out),
            Op::Embed { table, ids: ids.to_vec() },
        )
    }

    /// Extract row `i` as a `1×cols` node.
    pub fn row(&mut self, a: NodeId, i: usize) -> NodeId {
        let (r, c) = self.shape(a);
        assert!(i < r, "row index out of range");
        let data = self.nodes[a.0].value.row(i).to_vec();
        self.push(Tensor::new(1, c, data), Op::Row(a, i))
    }

    /// Numerically stable per-row log-softmax.
    pub fn log_softmax_rows(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let mut out = vec![0.0; r * c];
        {
            let av = &self.nodes[a.0].value.data;
            for i in 0..r {
                let row = &av[i * c..(i + 1) * c];
                let maxv = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = row.iter().map(|v| (v - maxv).exp()).sum::<f64>().ln() + maxv;
                for j in 0..c {
                    out[i * c + j] = row[j] - lse;
                }
            }
        }
        self.push(Tensor::new(r, c, out), Op::LogSoftmaxRows(a))
    }

    /// Gather one entry per `(row, col)` pair into a `1×k` node.
    pub fn pick(&mut self, logits: NodeId, rows: &[usize], cols: &[u32]) -> NodeId {
        assert_eq!(rows.len(), cols.len(), "pick rows/cols length mismatch");
        let (r, c) = self.shape(logits);
        let mut out = Vec::with_capacity(rows.len());
        for (&i, &j) in rows.iter().zip(cols) {
            assert!(i < r && (j as usize) < c, "pick index out of range");
            out.push(self.nodes[logits.0].value.get(i, j as usize));
        }
        self.push(
            Tensor::row_vec(out),
            Op::PickLogProb { logits, rows: rows.to_vec(), cols: cols.to_vec() },
        )
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.nodes[a.0].value.len() as f64;
        let s = self.nodes[a.0].value.data.iter().sum::<f64>() / n;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.nodes[a.0].value.data.iter().sum::<f64>();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Elementwise dot product of same-shape tensors → scalar.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "dot shape mismatch");
        let s: f64 = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(x, y)| x * y)
            .sum();
        self.push(Tensor::scalar(s), Op::Dot(a, b))
    }

    /// Elementwise minimum; on ties the gradient routes to the first input.
    pub fn minimum(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "minimum shape mismatch");
        let data: Vec<f64> = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(x, y)| if x <= y { *x } else { *y })
            .collect();
        let (r, c) = self.shape(a);
        self.push(Tensor::new(r, c, data), Op::Minimum(a, b))
    }

    /// Clamp to `[lo, hi]`; gradient passes through inside the range.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let data: Vec<f64> = self.nodes[a.0]
            .value
            .data
            .iter()
            .map(|x| x.clamp(lo, hi))
            .collect();
        let (r, c) = self.shape(a);
        self.push(Tensor::new(r, c, data), Op::Clamp(a, lo, hi))
    }

    /// Sequential sum of scalar nodes (deterministic reduction order).
    pub fn add_n(&mut self, ids: &[NodeId]) -> NodeId {
        assert!(!ids.is_empty(), "add_n of empty list");
        let mut acc = ids[0];
        for &id in &ids[1..] {
            acc = self.add(acc, id);
        }
        acc
    }

    // ── backward ─────────────────────────────────────────────────────────

    /// Exact reverse-mode gradients of a scalar loss over the tape.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lt = &self.nodes[loss.0].value;
        if lt.len() != 1 {
            return Err(Error::Contract("backward: loss must be scalar".into()));
        }
        if !lt.data[0].is_finite() {
            return Err(Error::Numeric(self.locate_nonfinite(loss)));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            // Re-store so callers can read intermediate grads too.
            grads[idx] = Some(g.clone());
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.accum(&mut grads, *a, &g.data);
                    self.accum(&mut grads, *b, &g.data);
                }
                Op::Sub(a, b) => {
                    self.accum(&mut grads, *a, &g.data);
                    let neg: Vec<f64> = g.data.iter().map(|v| -v).collect();
                    self.accum(&mut grads, *b, &neg);
                }
                Op::Mul(a, b) => {
                    let da: Vec<f64> = g
                        .data
                        .iter()
                        .zip(&self.nodes[b.0].value.data)
                        .map(|(gv, bv)| gv * bv)
                        .collect();
                    let db: Vec<f64> = g
                        .data
                        .iter()
                        .zip(&self.nodes[a.0].value.data)
                        .map(|(gv, av)| gv * av)
                        .collect();
                    self.accum(&mut grads, *a, &da);
                    self.accum(&mut grads, *b, &db);
                }
                Op::Div(a, b) => {
                    let av = &self.nodes[a.0].value.data;
                    let bv = &self.nodes[b.0].value.data;
                    let da: Vec<f64> = g.data.iter().zip(bv).map(|(gv, b)| gv / b).collect();
                    let db: Vec<f64> = g
                        .data
                        .iter()
                        .zip(av.iter().zip(bv))
                        .map(|(gv, (a, b))| -gv * a / (b * b))
                        .collect();
                    self.accum(&mut grads, *a, &da);
                    self.accum(&mut grads, *b, &db);
                }
                Op::Scale(a, s) => {
                    let da: Vec<f64> = g.data.iter().map(|v| v * s).collect();
                    self.accum(&mut grads, *a, &da);
                }
                Op::AddConst(a, _) => self.accum(&mut grads, *a, &g.data),
                Op::MatMul(a, b) => {
                    let (m, k) = self.shape(*a);
                    let (_, n) = self.shape(*b);
                    let av = &self.nodes[a.0].value.data;
                    let bv = &self.nodes[b.0].value.data;
                    // dA = G · Bᵀ
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &g.data[i * n..(i + 1) * n];
                        let darow = &mut da[i * k..(i + 1) * k];
                        for (kk, d) in darow.iter_mut().enumerate() {
                            let brow = &bv[kk * n..(kk + 1) * n];
                            *d = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    // dB = Aᵀ · G
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &g.data[i * n..(i + 1) * n];
                        let arow = &av[i * k..(i + 1) * k];
                        for (kk, &aik) in arow.iter().enumerate() {
                            if aik == 0.0 {
                                continue;
                            }
                            let dbrow = &mut db[kk * n..(kk + 1) * n];
                            for (d, &gij) in dbrow.iter_mut().zip(grow) {
                                *d += aik * gij;
                            }
                        }
                    }
                    self.accum(&mut grads, *a, &da);
                    self.accum(&mut grads, *b, &db);
                }
                Op::Gelu(a) => {
                    let da: Vec<f64> = g
                        .data
                        .iter()
                        .zip(&self.nodes[a.0].value.data)
                        .map(|(gv, &x)| gv * gelu_deriv(x))
                        .collect();
                    self.accum(&mut grads, *a, &da);
                }
                Op::Exp(a) => {
                    let da: Vec<f64> = g
                        .data
                        .iter()
                        .zip(&node.value.data)
                        .map(|(gv, y)| gv * y)
                        .collect();
                    self.accum(&mut grads, *a, &da);
                }
                Op::Ln(a) => {
                    let da: Vec<f64> = g
                        .data
                        .iter()
                        .zip(&self.nodes[a.0].value.data)
                        .map(|(gv, x)| gv / x)
                        .collect();
                    self.accum(&mut grads, *a, &da);
                }
                Op::Sqrt(a) => {
                    let da: Vec<f64> = g
                        .data
                        .iter()
                        .zip(&node.value.data)
                        .map(|(gv, y)| gv / (2.0 * y))
                        .collect();
                    self.accum(&mut grads, *a, &da);
                }
                Op::RmsNorm { x, gain } => {
                    let (r, c) = self.shape(*x);
                    let xv = &self.nodes[x.0].value.data;
                    let gv = &self.nodes[gain.0].value.data;
                    let mut dx = vec![0.0; r * c];
                    let mut dgain = vec![0.0; c];
                    for i in 0..r {
                        let xrow = &xv[i * c..(i + 1) * c];
                        let grow = &g.data[i * c..(i + 1) * c];
                        let ms = xrow.iter().map(|v| v * v).sum::<f64>() / c as f64;
                        let inv = 1.0 / (ms + RMS_EPS).sqrt();
                        // u = g ⊙ gain is the gradient w.r.t. the normed row
                        let dot: f64 = grow
                            .iter()
                            .zip(gv.iter().zip(xrow))
                            .map(|(gj, (gaj, xj))| gj * gaj * xj)
                            .sum();
                        let k = inv * inv * inv / c as f64;
                        for j in 0..c {
                            dx[i * c + j] = grow[j] * gv[j] * inv - k * dot * xrow[j];
                            dgain[j] += grow[j] * xrow[j] * inv;
                        }
                    }
                    self.accum(&mut grads, *x, &dx);
                    self.accum(&mut grads, *gain, &dgain);
                }
                Op::CausalAttention { q, k, v, heads, weights } => {
                    let (n, w) = self.shape(*q);
                    let dh = w / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let qv = &self.nodes[q.0].value.data;
                    let kv = &self.nodes[k.0].value.data;
                    let vv = &self.nodes[v.0].value.data;
                    let mut dq = vec![0.0; n * w];
                    let mut dk = vec![0.0; n * w];
                    let mut dv = vec![0.0; n * w];
                    let mut draw = vec![0.0; n];
                    let mut dlogit = vec![0.0; n];
                    for h in 0..*heads {
                        let off = h * dh;
                        let wbase = h * n * n;
                        for i in 0..n {
                            let grow = &g.data[i * w + off..i * w + off + dh];
                            let wrow = &weights[wbase + i * n..wbase + i * n + i + 1];
                            // dV and raw weight grads
                            for (j, &wij) in wrow.iter().enumerate() {
                                let vj = &vv[j * w + off..j * w + off + dh];
                                let dvj = &mut dv[j * w + off..j * w + off + dh];
                                let mut acc = 0.0;
                                for d in 0..dh {
                                    acc += grow[d] * vj[d];
                                    dvj[d] += wij * grow[d];
                                }
                                draw[j] = acc;
                            }
                            // softmax backward
                            let dot: f64 = wrow
                                .iter()
                                .zip(draw.iter().take(i + 1))
                                .map(|(a, b)| a * b)
                                .sum();
                            for j in 0..=i {
                                dlogit[j] = wrow[j] * (draw[j] - dot);
                            }
                            // dQ and dK
                            let qi = &qv[i * w + off..i * w + off + dh];
                            let dqi_start = i * w + off;
                            for j in 0..=i {
                                let dl = dlogit[j] * scale;
                                if dl == 0.0 {
                                    continue;
                                }
                                let kj = &kv[j * w + off..j * w + off + dh];
                                let dkj = &mut dk[j * w + off..j * w + off + dh];
                                for d in 0..dh {
                                    dkj[d] += dl * qi[d];
                                }
                                let dqi = &mut dq[dqi_start..dqi_start + dh];
                                for (dqd, &kjd) in dqi.iter_mut().zip(kj) {
                                    *dqd += dl * kjd;
                                }
                            }
                        }
                    }
                    self.accum(&mut grads, *q, &dq);
                    self.accum(&mut grads, *k, &dk);
                    self.accum(&mut grads, *v, &dv);
                }
                Op::Embed { table, ids } => {
                    let (vocab, width) = self.shape(*table);
                    let mut dt = vec![0.0; vocab * width];
                    for (i, &id) in ids.iter().enumerate() {
                        let id = id as usize;
                        let grow = &g.data[i * width..(i + 1) * width];
                        let trow = &mut dt[id * width..(id + 1) * width];
                        for (t, gv) in trow.iter_mut().zip(grow) {
                            *t += gv;
                        }
                    }
                    self.accum(&mut grads, *table, &dt);
                }
                Op::Row(a, i) => {
                    let (r, c) = self.shape(*a);
                    let mut da = vec![0.0; r * c];
                    da[i * c..(i + 1) * c].copy_from_slice(&g.data);
                    self.accum(&mut grads, *a, &da);
                }
                Op::LogSoftmaxRows(a) => {
                    let (r, c) = self.shape(*a);
                    let mut da = vec![0.0; r * c];
                    for i in 0..r {
                        let grow = &g.data[i * c..(i + 1) * c];
                        let yrow = &node.value.data[i * c..(i + 1) * c];
                        let gsum: f64 = grow.iter().sum();
                        for j in 0..c {
                            da[i * c + j] = grow[j] - yrow[j].exp() * gsum;
                        }
                    }
                    self.accum(&mut grads, *a, &da);
                }
                Op::PickLogProb { logits, rows, cols } => {
                    let (r, c) = self.shape(*logits);
                    let mut da = vec![0.0; r * c];
                    for (idx, (&i, &j)) in rows.iter().zip(cols.iter()).enumerate() {
                        da[i * c + j as usize] += g.data[idx];
                    }
                    self.accum(&mut grads, *logits, &da);
                }
                Op::Mean(a) => {
                    let n = self.nodes[a.0].value.len();
                    let gv = g.data[0] / n as f64;
                    let da = vec![gv; n];
                    self.accum(&mut grads, *a, &da);
                }
                Op::Sum(a) => {
                    let n = self.nodes[a.0].value.len();
                    let da = vec![g.data[0]; n];
                    self.accum(&mut grads, *a, &da);
                }
                Op::Dot(a, b) => {
                    let gv = g.data[0];
                    let da: Vec<f64> =
                        self.nodes[b.0].value.data.iter().map(|v| gv * v).collect();
                    let db: Vec<f64> =
                        self.nodes[a.0].value.data.iter().map(|v| gv * v).collect();
                    self.accum(&mut grads, *a, &da);
                    self.accum(&mut grads, *b, &db);
                }
                Op::Minimum(a, b) => {
                    let av = &self.nodes[a.0].value.data;
                    let bv = &self.nodes[b.0].value.data;
                    let mut da = vec![0.0; av.len()];
                    let mut db = vec![0.0; bv.len()];
                    for i in 0..av.len() {
                        if av[i] <= bv[i] {
                            da[i] = g.data[i];
                        } else {
                            db[i] = g.data[i];
                        }
                    }
                    self.accum(&mut grads, *a, &da);
                    self.accum(&mut grads, *b, &db);
                }
                Op::Clamp(a, lo, hi) => {
                    let av = &self.nodes[a.0].value.data;
                    let da: Vec<f64> = g
                        .data
                        .iter()
                        .zip(av)
                        .map(|(gv, &x)| if x < *lo || x > *hi { 0.0 } else { *gv })
                        .collect();
                    self.accum(&mut grads, *a, &da);
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn accum(&self, grads: &mut [Option<Tensor>], id: NodeId, delta: &[f64]) {
        let (r, c) = self.shape(id);
        match &mut grads[id.0] {
            Some(t) => {
                for (a, b) in t.data.iter_mut().zip(delta) {
                    *a += b;
                }
            }
            None => {
                grads[id.0] = Some(Tensor::new(r, c, delta.to_vec()));
            }
        }
    }

    /// Walk the tape up to `until` and describe the first non-finite value.
    fn locate_nonfinite(&self, until: NodeId) -> String {
        for (i, node) in self.nodes.iter().enumerate().take(until.0 + 1) {
            if !node.value.all_finite() {
                return format!("non-finite value at node {i} ({})", op_name(&node.op));
            }
        }
        format!("non-finite loss at node {}", until.0)
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Div(..) => "div",
        Op::Scale(..) => "scale",
        Op::AddConst(..) => "add_const",
        Op::MatMul(..) => "matmul",
        Op::Gelu(..) => "gelu",
        Op::Exp(..) => "exp",
        Op::Ln(..) => "ln",
        Op::Sqrt(..) => "sqrt",
        Op::RmsNorm { .. } => "rmsnorm",
        Op::CausalAttention { .. } => "causal_attention",
        Op::Embed { .. } => "embed",
        Op::Row(..) => "row",
        Op::LogSoftmaxRows(..) => "log_softmax_rows",
        Op::PickLogProb { .. } => "pick",
        Op::Mean(..) => "mean",
        Op::Sum(..) => "sum",
        Op::Dot(..) => "dot",
        Op::Minimum(..) => "minimum",
        Op::Clamp(..) => "clamp",
    }
}

const RMS_EPS: f64 = 1e-8;

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_deriv(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654;
    let inner = C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let dinner = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

// ── convenience builders used by the loss heads ──────────────────────────

impl Graph {
    /// Cosine similarity of two same-shape vectors as a scalar node.
    pub fn cosine(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let num = self.dot(a, b);
        let aa = self.dot(a, a);
        let bb = self.dot(b, b);
        let na = self.sqrt(aa);
        let nb = self.sqrt(bb);
        let den = self.mul(na, nb);
        self.div(num, den)
    }
}
