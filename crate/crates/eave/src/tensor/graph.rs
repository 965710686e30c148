use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node inside a [`Graph`]. The index doubles as the node's
/// topological order: node `i` only depends on nodes `< i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum AlphaSrc<T> {
    Const(T),
    Node(NodeId),
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Matmul { a: NodeId, b: NodeId },
    /// C = A · Bᵀ where B is stored row-major as [n, k].
    MatmulNt { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    /// Row-broadcast bias add: out[i, j] = x[i, j] + bias[j].
    AddBias { x: NodeId, bias: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: T },
    Gelu { x: NodeId },
    RmsNorm { x: NodeId, gain: NodeId },
    /// Row softmax. Masked positions were zeroed in the forward pass, so the
    /// backward rule needs no record of the mask.
    SoftmaxRows { x: NodeId },
    Embedding { table: NodeId, ids: Vec<usize> },
    ConcatRows { a: NodeId, b: NodeId },
    SliceRows { x: NodeId, start: usize },
    SliceCols { x: NodeId, start: usize },
    ConcatCols { parts: Vec<NodeId> },
    /// out = (1 - α)·a + α·b with α either fixed or a trainable scalar node.
    Lerp { a: NodeId, b: NodeId, alpha: AlphaSrc<T> },
    /// Zeroes rows where `keep` is false.
    MaskRows { x: NodeId, keep: Vec<bool> },
    /// Inverted dropout with a caller-supplied keep mask.
    Dropout { x: NodeId, keep: Vec<bool>, inv_keep: T },
    /// Mean cross-entropy over rows where `valid` is true; saves the row
    /// softmax for the backward pass.
    MaskedCrossEntropy {
        logits: NodeId,
        gold: Vec<usize>,
        valid: Vec<bool>,
        probs: Vec<T>,
    },
    Sum { x: NodeId },
}

/// Wengert-style tape: eager forward evaluation plus an op record per node.
/// A graph is consumed by exactly one backward pass.
pub struct Graph<T: Scalar> {
    nodes: Vec<Tensor<T>>,
    ops: Vec<Op<T>>,
    consumed: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            ops: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0]
    }

    pub fn data(&self, id: NodeId) -> &[T] {
        self.nodes[id.0].data()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].shape()
    }

    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.nodes[id.0].grad()
    }

    /// Copies a tensor into the graph as a leaf, keeping its `requires_grad`.
    pub fn input(&mut self, t: &Tensor<T>) -> NodeId {
        self.push(t.clone(), Op::Leaf)
    }

    /// Leaf that never receives gradient.
    pub fn constant(&mut self, data: Vec<T>, shape: &[usize]) -> Result<NodeId> {
        let t = Tensor::new(data, shape)?;
        Ok(self.push(t, Op::Leaf))
    }

    fn push(&mut self, tensor: Tensor<T>, op: Op<T>) -> NodeId {
        self.nodes.push(tensor);
        self.ops.push(op);
        NodeId(self.nodes.len() - 1)
    }

    fn push_result(
        &mut self,
        data: Vec<T>,
        shape: Vec<usize>,
        requires_grad: bool,
        op: Op<T>,
    ) -> NodeId {
        let t = Tensor {
            shape,
            data,
            grad: None,
            requires_grad,
        };
        // Keep the invariant product(shape) == len(data) checked in debug runs.
        debug_assert_eq!(t.shape().iter().product::<usize>(), t.numel());
        self.push(t, op)
    }

    fn needs_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad())
    }

    fn dims2(&self, id: NodeId, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(id);
        if s.len() != 2 {
            return Err(Error::BadShape {
                op,
                shape: s.to_vec(),
                detail: "expected a rank-2 tensor".into(),
            });
        }
        Ok((s[0], s[1]))
    }

    // ── forward ops ─────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let out = mm_nn(self.data(a), self.data(b), m, k, n);
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push_result(out, vec![m, n], rg, Op::Matmul { a, b }))
    }

    /// C[m, n] = A[m, k] · B[n, k]ᵀ.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims2(a, "matmul_nt")?;
        let (n, k2) = self.dims2(b, "matmul_nt")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul_nt",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let out = mm_nt(self.data(a), self.data(b), m, k, n);
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push_result(out, vec![m, n], rg, Op::MatmulNt { a, b }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: "add",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let out: Vec<T> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push_result(out, shape, rg, Op::Add { a, b }))
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (m, n) = self.dims2(x, "add_bias")?;
        if self.shape(bias) != [n] {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                left: self.shape(x).to_vec(),
                right: self.shape(bias).to_vec(),
            });
        }
        let bias_data = self.data(bias).to_vec();
        let mut out = self.data(x).to_vec();
        for row in out.chunks_mut(n) {
            for (o, &b) in row.iter_mut().zip(&bias_data) {
                *o += b;
            }
        }
        let rg = self.needs_grad(&[x, bias]);
        Ok(self.push_result(out, vec![m, n], rg, Op::AddBias { x, bias }))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: "mul",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let out: Vec<T> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push_result(out, shape, rg, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: NodeId, c: T) -> NodeId {
        let out: Vec<T> = self.data(x).iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.needs_grad(&[x]);
        self.push_result(out, shape, rg, Op::Scale { x, c })
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let out: Vec<T> = self.data(x).iter().map(|&v| gelu_fwd(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.needs_grad(&[x]);
        self.push_result(out, shape, rg, Op::Gelu { x })
    }

    /// Row-wise RMS normalization over the last dimension with a learned gain.
    pub fn rms_norm(&mut self, x: NodeId, gain: NodeId) -> Result<NodeId> {
        let d = self.shape(x).last().copied().unwrap_or(0);
        if d == 0 {
            return Err(Error::BadShape {
                op: "rms_norm",
                shape: self.shape(x).to_vec(),
                detail: "last dimension must be positive".into(),
            });
        }
        if self.shape(gain) != [d] {
            return Err(Error::ShapeMismatch {
                op: "rms_norm",
                left: self.shape(x).to_vec(),
                right: self.shape(gain).to_vec(),
            });
        }
        let eps = T::from_f64(RMS_EPS);
        let gain_data = self.data(gain).to_vec();
        let mut out = Vec::with_capacity(self.data(x).len());
        for row in self.data(x).chunks(d) {
            let ms: T = row.iter().map(|&v| v * v).sum::<T>() / T::from_f64(d as f64);
            let inv = (ms + eps).sqrt().recip();
            for (j, &v) in row.iter().enumerate() {
                out.push(v * inv * gain_data[j]);
            }
        }
        let shape = self.shape(x).to_vec();
        let rg = self.needs_grad(&[x, gain]);
        Ok(self.push_result(out, shape, rg, Op::RmsNorm { x, gain }))
    }

    /// Numerically stable row softmax. Masked positions are exactly zero and
    /// each row must keep at least one unmasked position.
    pub fn softmax_rows(&mut self, x: NodeId, mask: Option<&[bool]>) -> Result<NodeId> {
        let (m, n) = self.dims2(x, "softmax_rows")?;
        if let Some(mk) = mask {
            if mk.len() != m * n {
                return Err(Error::ShapeMismatch {
                    op: "softmax_rows",
                    left: vec![m, n],
                    right: vec![mk.len()],
                });
            }
        }
        let data = self.data(x);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &data[i * n..(i + 1) * n];
            let live = |j: usize| mask.map_or(true, |mk| mk[i * n + j]);
            let mut maxv = T::neg_infinity();
            let mut any = false;
            for (j, &v) in row.iter().enumerate() {
                if live(j) {
                    any = true;
                    if v > maxv {
                        maxv = v;
                    }
                }
            }
            if !any {
                return Err(Error::FullyMaskedRow { row: i });
            }
            let mut sum = T::zero();
            for (j, &v) in row.iter().enumerate() {
                if live(j) {
                    let e = (v - maxv).exp();
                    out[i * n + j] = e;
                    sum += e;
                }
            }
            let inv = sum.recip();
            for j in 0..n {
                out[i * n + j] *= inv;
            }
        }
        let rg = self.needs_grad(&[x]);
        Ok(self.push_result(out, vec![m, n], rg, Op::SoftmaxRows { x }))
    }

    /// Gathers rows of `table` by id.
    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let (rows, d) = self.dims2(table, "embedding")?;
        if let Some(&bad) = ids.iter().find(|&&id| id >= rows) {
            return Err(Error::TokenOutOfRange {
                id: bad,
                vocab: rows,
            });
        }
        let data = self.data(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend_from_slice(&data[id * d..(id + 1) * d]);
        }
        let rg = self.needs_grad(&[table]);
        Ok(self.push_result(
            out,
            vec![ids.len(), d],
            rg,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Concatenates along the row (sequence) axis.
    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ra, ca) = self.dims2(a, "concat_rows")?;
        let (rb, cb) = self.dims2(b, "concat_rows")?;
        if ca != cb {
            return Err(Error::ShapeMismatch {
                op: "concat_rows",
                left: vec![ra, ca],
                right: vec![rb, cb],
            });
        }
        let mut out = Vec::with_capacity((ra + rb) * ca);
        out.extend_from_slice(self.data(a));
        out.extend_from_slice(self.data(b));
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push_result(out, vec![ra + rb, ca], rg, Op::ConcatRows { a, b }))
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (m, n) = self.dims2(x, "slice_rows")?;
        if start + len > m {
            return Err(Error::BadShape {
                op: "slice_rows",
                shape: vec![m, n],
                detail: format!("rows {start}..{} out of range", start + len),
            });
        }
        let out = self.data(x)[start * n..(start + len) * n].to_vec();
        let rg = self.needs_grad(&[x]);
        Ok(self.push_result(out, vec![len, n], rg, Op::SliceRows { x, start }))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (m, n) = self.dims2(x, "slice_cols")?;
        if start + len > n {
            return Err(Error::BadShape {
                op: "slice_cols",
                shape: vec![m, n],
                detail: format!("cols {start}..{} out of range", start + len),
            });
        }
        let data = self.data(x);
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&data[i * n + start..i * n + start + len]);
        }
        let rg = self.needs_grad(&[x]);
        Ok(self.push_result(out, vec![m, len], rg, Op::SliceCols { x, start }))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::BadShape {
                op: "concat_cols",
                shape: vec![],
                detail: "no parts to concatenate".into(),
            });
        }
        let (m, _) = self.dims2(parts[0], "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        let mut total = 0usize;
        for &p in parts {
            let (mp, np) = self.dims2(p, "concat_cols")?;
            if mp != m {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    left: self.shape(parts[0]).to_vec(),
                    right: self.shape(p).to_vec(),
                });
            }
            widths.push(np);
            total += np;
        }
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                let data = self.data(p);
                out.extend_from_slice(&data[i * w..(i + 1) * w]);
            }
        }
        let rg = self.needs_grad(parts);
        Ok(self.push_result(
            out,
            vec![m, total],
            rg,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Linear interpolation with a fixed weight: `(1-α)·a + α·b`.
    ///
    /// The endpoints are computed exactly: α = 0 returns `a` itself and α = 1
    /// returns `b` itself, so the interpolation contract `α=0 → a`, `α=1 → b`
    /// holds bit-for-bit.
    pub fn lerp_const(&mut self, a: NodeId, b: NodeId, alpha: T) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: "lerp",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        if alpha == T::zero() {
            return Ok(a);
        }
        if alpha == T::one() {
            return Ok(b);
        }
        let out = lerp_fwd(self.data(a), self.data(b), alpha);
        let shape = self.shape(a).to_vec();
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push_result(
            out,
            shape,
            rg,
            Op::Lerp {
                a,
                b,
                alpha: AlphaSrc::Const(alpha),
            },
        ))
    }

    /// Interpolation with a trainable scalar weight node (shape `[1]`).
    /// The weight receives gradient `Σ d_out·(b - a)`.
    pub fn lerp_node(&mut self, a: NodeId, b: NodeId, alpha: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: "lerp",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        if self.value(alpha).numel() != 1 {
            return Err(Error::BadShape {
                op: "lerp",
                shape: self.shape(alpha).to_vec(),
                detail: "alpha must be a scalar".into(),
            });
        }
        let av = self.data(alpha)[0];
        let out = lerp_fwd(self.data(a), self.data(b), av);
        let shape = self.shape(a).to_vec();
        let rg = self.needs_grad(&[a, b, alpha]);
        Ok(self.push_result(
            out,
            shape,
            rg,
            Op::Lerp {
                a,
                b,
                alpha: AlphaSrc::Node(alpha),
            },
        ))
    }

    /// Zeroes the rows whose `keep` entry is false.
    pub fn mask_rows(&mut self, x: NodeId, keep: &[bool]) -> Result<NodeId> {
        let (m, n) = self.dims2(x, "mask_rows")?;
        if keep.len() != m {
            return Err(Error::ShapeMismatch {
                op: "mask_rows",
                left: vec![m, n],
                right: vec![keep.len()],
            });
        }
        let mut out = self.data(x).to_vec();
        for (i, &k) in keep.iter().enumerate() {
            if !k {
                out[i * n..(i + 1) * n].fill(T::zero());
            }
        }
        let rg = self.needs_grad(&[x]);
        Ok(self.push_result(
            out,
            vec![m, n],
            rg,
            Op::MaskRows {
                x,
                keep: keep.to_vec(),
            },
        ))
    }

    /// Inverted dropout: kept positions are scaled by `1/(1-rate)`.
    pub fn dropout(&mut self, x: NodeId, keep: &[bool], rate: f64) -> Result<NodeId> {
        if keep.len() != self.value(x).numel() {
            return Err(Error::ShapeMismatch {
                op: "dropout",
                left: self.shape(x).to_vec(),
                right: vec![keep.len()],
            });
        }
        let inv_keep = T::from_f64(1.0 / (1.0 - rate));
        let out: Vec<T> = self
            .data(x)
            .iter()
            .zip(keep)
            .map(|(&v, &k)| if k { v * inv_keep } else { T::zero() })
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.needs_grad(&[x]);
        Ok(self.push_result(
            out,
            shape,
            rg,
            Op::Dropout {
                x,
                keep: keep.to_vec(),
                inv_keep,
            },
        ))
    }

    /// Mean cross-entropy of `logits[m, C]` against `gold` over rows where
    /// `valid` is true. Invalid rows contribute exactly zero.
    pub fn masked_cross_entropy(
        &mut self,
        logits: NodeId,
        gold: &[usize],
        valid: &[bool],
    ) -> Result<NodeId> {
        let (m, c) = self.dims2(logits, "masked_cross_entropy")?;
        if gold.len() != m || valid.len() != m {
            return Err(Error::ShapeMismatch {
                op: "masked_cross_entropy",
                left: vec![m, c],
                right: vec![gold.len(), valid.len()],
            });
        }
        let n_valid = valid.iter().filter(|&&v| v).count();
        if n_valid == 0 {
            return Err(Error::BadShape {
                op: "masked_cross_entropy",
                shape: vec![m, c],
                detail: "every position is masked out".into(),
            });
        }
        if let Some(&bad) = gold.iter().find(|&&g| g >= c) {
            return Err(Error::TokenOutOfRange { id: bad, vocab: c });
        }
        let data = self.data(logits);
        let mut probs = vec![T::zero(); m * c];
        let mut total = T::zero();
        for i in 0..m {
            if !valid[i] {
                continue;
            }
            let row = &data[i * c..(i + 1) * c];
            let maxv = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for (j, &v) in row.iter().enumerate() {
                let e = (v - maxv).exp();
                probs[i * c + j] = e;
                sum += e;
            }
            let inv = sum.recip();
            for j in 0..c {
                probs[i * c + j] *= inv;
            }
            total += sum.ln() - (row[gold[i]] - maxv);
        }
        let loss = total / T::from_f64(n_valid as f64);
        let rg = self.needs_grad(&[logits]);
        Ok(self.push_result(
            vec![loss],
            vec![1],
            rg,
            Op::MaskedCrossEntropy {
                logits,
                gold: gold.to_vec(),
                valid: valid.to_vec(),
                probs,
            },
        ))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total: T = self.data(x).iter().copied().sum();
        let rg = self.needs_grad(&[x]);
        self.push_result(vec![total], vec![1], rg, Op::Sum { x })
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Populates `grad` for every `requires_grad` node reachable from `loss`.
    /// Unreachable nodes keep an all-zero gradient. Gradients accumulate
    /// additively across fan-out, visiting records in exact reverse
    /// topological order.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss {
                shape: self.shape(loss).to_vec(),
            });
        }
        self.consumed = true;
        for node in &mut self.nodes {
            if node.requires_grad() {
                let n = node.numel();
                *node.grad_slot() = Some(vec![T::zero(); n]);
            }
        }
        if let Some(g) = self.nodes[loss.0].grad_slot().as_mut() {
            g[0] = T::one();
        }

        for i in (0..self.ops.len()).rev() {
            if !self.nodes[i].requires_grad() {
                continue;
            }
            let gout = match self.nodes[i].grad_slot().take() {
                Some(g) => g,
                None => continue,
            };
            let op = self.ops[i].clone();
            self.apply_backward(NodeId(i), &op, &gout);
            *self.nodes[i].grad_slot() = Some(gout);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, contrib: &[T]) {
        if !self.nodes[id.0].requires_grad() {
            return;
        }
        let slot = self.nodes[id.0]
            .grad_slot()
            .as_mut()
            .expect("grad buffer allocated for requires_grad node");
        for (g, &c) in slot.iter_mut().zip(contrib) {
            *g += c;
        }
    }

    fn apply_backward(&mut self, out: NodeId, op: &Op<T>, gout: &[T]) {
        match op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                // dA = dC · Bᵀ, dB = Aᵀ · dC
                let da = mm_nt(gout, self.data(*b), m, n, k);
                let db = mm_tn(self.data(*a), gout, m, k, n);
                self.accumulate(*a, &da);
                self.accumulate(*b, &db);
            }
            Op::MatmulNt { a, b } => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[0];
                // C = A·Bᵀ: dA = dC·B, dB = dCᵀ·A
                let da = mm_nn(gout, self.data(*b), m, n, k);
                let db = mm_tn(gout, self.data(*a), m, n, k);
                self.accumulate(*a, &da);
                self.accumulate(*b, &db);
            }
            Op::Add { a, b } => {
                self.accumulate(*a, gout);
                self.accumulate(*b, gout);
            }
            Op::AddBias { x, bias } => {
                let n = self.shape(*bias)[0];
                self.accumulate(*x, gout);
                let mut db = vec![T::zero(); n];
                for row in gout.chunks(n) {
                    for (d, &g) in db.iter_mut().zip(row) {
                        *d += g;
                    }
                }
                self.accumulate(*bias, &db);
            }
            Op::Mul { a, b } => {
                let da: Vec<T> = gout
                    .iter()
                    .zip(self.data(*b))
                    .map(|(&g, &v)| g * v)
                    .collect();
                let db: Vec<T> = gout
                    .iter()
                    .zip(self.data(*a))
                    .map(|(&g, &v)| g * v)
                    .collect();
                self.accumulate(*a, &da);
                self.accumulate(*b, &db);
            }
            Op::Scale { x, c } => {
                let dx: Vec<T> = gout.iter().map(|&g| g * *c).collect();
                self.accumulate(*x, &dx);
            }
            Op::Gelu { x } => {
                let dx: Vec<T> = gout
                    .iter()
                    .zip(self.data(*x))
                    .map(|(&g, &v)| g * gelu_bwd(v))
                    .collect();
                self.accumulate(*x, &dx);
            }
            Op::RmsNorm { x, gain } => {
                let d = self.shape(*gain)[0];
                let eps = T::from_f64(RMS_EPS);
                let inv_d = T::from_f64(d as f64).recip();
                let xdata = self.data(*x);
                let gdata = self.data(*gain);
                let mut dx = vec![T::zero(); xdata.len()];
                let mut dgain = vec![T::zero(); d];
                let rows = xdata.len() / d;
                for i in 0..rows {
                    let row = &xdata[i * d..(i + 1) * d];
                    let grow = &gout[i * d..(i + 1) * d];
                    let ms: T = row.iter().map(|&v| v * v).sum::<T>() * inv_d;
                    let r = (ms + eps).sqrt().recip();
                    // s = Σ_j dY_ij·g_j·x_ij
                    let mut s = T::zero();
                    for j in 0..d {
                        s += grow[j] * gdata[j] * row[j];
                        dgain[j] += grow[j] * row[j] * r;
                    }
                    let r3s = r * r * r * s * inv_d;
                    for j in 0..d {
                        dx[i * d + j] = grow[j] * gdata[j] * r - row[j] * r3s;
                    }
                }
                self.accumulate(*x, &dx);
                self.accumulate(*gain, &dgain);
            }
            Op::SoftmaxRows { x } => {
                // This node's output is the saved softmax.
                let y = self.data(out);
                let n = self.shape(out)[1];
                let mut dx = vec![T::zero(); y.len()];
                let rows = y.len() / n;
                for i in 0..rows {
                    let yr = &y[i * n..(i + 1) * n];
                    let gr = &gout[i * n..(i + 1) * n];
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..n {
                        dx[i * n + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(*x, &dx);
            }
            Op::Embedding { table, ids } => {
                let d = self.shape(*table)[1];
                if self.nodes[table.0].requires_grad() {
                    let slot = self.nodes[table.0]
                        .grad_slot()
                        .as_mut()
                        .expect("grad buffer for embedding table");
                    for (i, &id) in ids.iter().enumerate() {
                        let src = &gout[i * d..(i + 1) * d];
                        let dst = &mut slot[id * d..(id + 1) * d];
                        for (g, &v) in dst.iter_mut().zip(src) {
                            *g += v;
                        }
                    }
                }
            }
            Op::ConcatRows { a, b } => {
                let na = self.value(*a).numel();
                self.accumulate(*a, &gout[..na]);
                self.accumulate(*b, &gout[na..]);
            }
            Op::SliceRows { x, start } => {
                let n = self.shape(*x)[1];
                let mut dx = vec![T::zero(); self.value(*x).numel()];
                dx[start * n..start * n + gout.len()].copy_from_slice(gout);
                self.accumulate(*x, &dx);
            }
            Op::SliceCols { x, start } => {
                let (m, n) = (self.shape(*x)[0], self.shape(*x)[1]);
                let w = gout.len() / m;
                let mut dx = vec![T::zero(); m * n];
                for i in 0..m {
                    dx[i * n + start..i * n + start + w]
                        .copy_from_slice(&gout[i * w..(i + 1) * w]);
                }
                self.accumulate(*x, &dx);
            }
            Op::ConcatCols { parts } => {
                let m = self.shape(parts[0])[0];
                let total: usize = gout.len() / m;
                let mut off = 0usize;
                for &p in parts {
                    let w = self.shape(p)[1];
                    let mut dp = vec![T::zero(); m * w];
                    for i in 0..m {
                        dp[i * w..(i + 1) * w]
                            .copy_from_slice(&gout[i * total + off..i * total + off + w]);
                    }
                    self.accumulate(p, &dp);
                    off += w;
                }
            }
            Op::Lerp { a, b, alpha } => {
                let av = match alpha {
                    AlphaSrc::Const(c) => *c,
                    AlphaSrc::Node(n) => self.data(*n)[0],
                };
                let one_minus = T::one() - av;
                let da: Vec<T> = gout.iter().map(|&g| g * one_minus).collect();
                let db: Vec<T> = gout.iter().map(|&g| g * av).collect();
                self.accumulate(*a, &da);
                self.accumulate(*b, &db);
                if let AlphaSrc::Node(n) = alpha {
                    let dalpha: T = gout
                        .iter()
                        .zip(self.data(*b).iter().zip(self.data(*a)))
                        .map(|(&g, (&bv, &avl))| g * (bv - avl))
                        .sum();
                    self.accumulate(*n, &[dalpha]);
                }
            }
            Op::MaskRows { x, keep } => {
                let n = self.shape(*x)[1];
                let mut dx = gout.to_vec();
                for (i, &k) in keep.iter().enumerate() {
                    if !k {
                        dx[i * n..(i + 1) * n].fill(T::zero());
                    }
                }
                self.accumulate(*x, &dx);
            }
            Op::Dropout { x, keep, inv_keep } => {
                let dx: Vec<T> = gout
                    .iter()
                    .zip(keep)
                    .map(|(&g, &k)| if k { g * *inv_keep } else { T::zero() })
                    .collect();
                self.accumulate(*x, &dx);
            }
            Op::MaskedCrossEntropy {
                logits,
                gold,
                valid,
                probs,
            } => {
                let c = self.shape(*logits)[1];
                let n_valid = valid.iter().filter(|&&v| v).count();
                let scale = gout[0] / T::from_f64(n_valid as f64);
                let mut dx = vec![T::zero(); probs.len()];
                for (i, &v) in valid.iter().enumerate() {
                    if !v {
                        continue;
                    }
                    for j in 0..c {
                        let onehot = if j == gold[i] { T::one() } else { T::zero() };
                        dx[i * c + j] = (probs[i * c + j] - onehot) * scale;
                    }
                }
                self.accumulate(*logits, &dx);
            }
            Op::Sum { x } => {
                let dx = vec![gout[0]; self.value(*x).numel()];
                self.accumulate(*x, &dx);
            }
        }
    }

}

const RMS_EPS: f64 = 1e-6;

fn lerp_fwd<T: Scalar>(a: &[T], b: &[T], alpha: T) -> Vec<T> {
    let one_minus = T::one() - alpha;
    a.iter()
        .zip(b)
        .map(|(&x, &y)| one_minus * x + alpha * y)
        .collect()
}

/// GELU, tanh approximation. Smooth everywhere, which keeps finite-difference
/// gradient checks clean.
fn gelu_fwd<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    let c = T::from_f64(SQRT_2_OVER_PI);
    let k = T::from_f64(0.044715);
    let inner = c * (x + k * x * x * x);
    half * x * (T::one() + inner.tanh())
}

fn gelu_bwd<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    let c = T::from_f64(SQRT_2_OVER_PI);
    let k = T::from_f64(0.044715);
    let three_k = T::from_f64(3.0 * 0.044715);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let sech2 = T::one() - t * t;
    half * (T::one() + t) + half * x * sech2 * c * (T::one() + three_k * x * x)
}

const SQRT_2_OVER_PI: f64 = 0.7978845608028654;

// ── matmul kernels ──────────────────────────────────────────────────────

/// C[m,n] = A[m,k] · B[k,n]
fn mm_nn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
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

/// C[m,n] = A[m,k] · B[n,k]ᵀ
fn mm_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] = arow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
        }
    }
    c
}

/// C[m,n] = A[r,m]ᵀ · B[r,n]
fn mm_tn<T: Scalar>(a: &[T], b: &[T], r: usize, m: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..r {
        let arow = &a[i * m..(i + 1) * m];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}
