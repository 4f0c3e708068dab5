//! Dense-tensor tape with reverse-mode differentiation.
//!
//! A [`Tape`] records every operation of a forward pass in topological
//! order; [`Tape::backward`] replays the record in reverse and accumulates
//! gradients into each node that requires them. Training code builds a
//! fresh tape per step, binds persistent parameters as leaves, runs the
//! loss forward, calls `backward`, and reads the leaf gradients back out.
//!
//! The op set is deliberately small: exactly what a ResNet-style
//! convolutional extractor and a single-head self-attention block need.
//! Tensors are row-major; matrices are `[rows, cols]`, feature maps are
//! `[channels, height, width]`, conv kernels are
//! `[out_ch, in_ch, kh, kw]`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::math;
use crate::Real;

/// Epsilon added inside the square root of layer normalization.
pub const LAYER_NORM_EPS: Real = 1e-5 as Real;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Scale(TensorId, Real),
    /// `[n, c] + [1, c]`, the row broadcast used for linear-layer biases.
    AddRowBroadcast {
        x: TensorId,
        row: TensorId,
    },
    /// `[c, h, w] + [c]`, the channel broadcast used for conv biases.
    AddChannelBias {
        x: TensorId,
        bias: TensorId,
    },
    Matmul {
        a: TensorId,
        b: TensorId,
    },
    Transpose(TensorId),
    Relu(TensorId),
    SoftmaxRows(TensorId),
    LayerNormRows {
        x: TensorId,
        eps: Real,
    },
    Conv2d {
        x: TensorId,
        kernel: TensorId,
        stride: usize,
        pad: usize,
    },
    AvgPool {
        x: TensorId,
        win_h: usize,
        win_w: usize,
    },
    Reshape(TensorId),
    ConcatRows(Vec<TensorId>),
    SliceRows {
        x: TensorId,
        start: usize,
    },
    /// `[g*k, c] -> [g, c]`: mean over each contiguous block of `k` rows.
    GroupMeanRows {
        x: TensorId,
        group: usize,
    },
    MeanAll(TensorId),
    SumAll(TensorId),
    CrossEntropy {
        logits: TensorId,
        labels: Vec<usize>,
    },
    /// Cosine similarity of one `[1, d]` query row against each row of a
    /// `[c, d]` matrix, producing `[1, c]`.
    CosineScores {
        query: TensorId,
        refs: TensorId,
    },
}

#[derive(Debug, Clone)]
struct Node {
    data: Vec<Real>,
    shape: Vec<usize>,
    grad: Option<Vec<Real>>,
    requires_grad: bool,
    op: Op,
}

/// Record of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, data: Vec<Real>, shape: Vec<usize>, requires_grad: bool, op: Op) -> TensorId {
        debug_assert_eq!(data.len(), numel(&shape));
        self.nodes.push(Node { data, shape, grad: None, requires_grad, op });
        TensorId(self.nodes.len() - 1)
    }

    fn node(&self, t: TensorId) -> &Node {
        &self.nodes[t.0]
    }

    fn wants_grad(&self, inputs: &[TensorId]) -> bool {
        inputs.iter().any(|t| self.node(*t).requires_grad)
    }

    /// Insert a leaf tensor. `requires_grad` marks it as a parameter whose
    /// gradient should be populated by [`Tape::backward`].
    pub fn leaf(&mut self, data: Vec<Real>, shape: Vec<usize>, requires_grad: bool) -> Result<TensorId> {
        if shape.iter().any(|&e| e == 0) {
            return Err(CoreError::shape("zero extent in shape"));
        }
        if data.len() != numel(&shape) {
            return Err(CoreError::shape(format_args!(
                "data length {} != product of shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(self.push(data, shape, requires_grad, Op::Leaf))
    }

    /// Insert a non-differentiable constant.
    pub fn constant(&mut self, data: Vec<Real>, shape: Vec<usize>) -> Result<TensorId> {
        self.leaf(data, shape, false)
    }

    /// Insert a scalar constant with shape `[1]`.
    pub fn scalar(&mut self, v: Real) -> TensorId {
        self.push(vec![v], vec![1], false, Op::Leaf)
    }

    pub fn shape(&self, t: TensorId) -> &[usize] {
        &self.node(t).shape
    }

    pub fn value(&self, t: TensorId) -> &[Real] {
        &self.node(t).data
    }

    /// Gradient accumulated for `t`, if backward reached it.
    pub fn grad(&self, t: TensorId) -> Option<&[Real]> {
        self.node(t).grad.as_deref()
    }

    /// True once every value of `t` is finite.
    pub fn is_finite(&self, t: TensorId) -> bool {
        self.node(t).data.iter().all(|v| v.is_finite())
    }

    // ---- elementwise -----------------------------------------------------

    fn same_shape(&self, a: TensorId, b: TensorId, what: &str) -> Result<()> {
        if self.node(a).shape != self.node(b).shape {
            return Err(CoreError::shape(format_args!(
                "{what}: {:?} vs {:?}",
                self.node(a).shape,
                self.node(b).shape
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape(a, b, "add")?;
        let data = self
            .node(a)
            .data
            .iter()
            .zip(&self.node(b).data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.node(a).shape.clone();
        let rg = self.wants_grad(&[a, b]);
        Ok(self.push(data, shape, rg, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape(a, b, "sub")?;
        let data = self
            .node(a)
            .data
            .iter()
            .zip(&self.node(b).data)
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.node(a).shape.clone();
        let rg = self.wants_grad(&[a, b]);
        Ok(self.push(data, shape, rg, Op::Sub(a, b)))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .node(a)
            .data
            .iter()
            .zip(&self.node(b).data)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.node(a).shape.clone();
        let rg = self.wants_grad(&[a, b]);
        Ok(self.push(data, shape, rg, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: TensorId, c: Real) -> TensorId {
        let data = self.node(a).data.iter().map(|x| x * c).collect();
        let shape = self.node(a).shape.clone();
        let rg = self.node(a).requires_grad;
        self.push(data, shape, rg, Op::Scale(a, c))
    }

    /// `[n, c] + [1, c]` with the row broadcast over `n`.
    pub fn add_row_broadcast(&mut self, x: TensorId, row: TensorId) -> Result<TensorId> {
        let (xs, rs) = (self.node(x).shape.clone(), self.node(row).shape.clone());
        if xs.len() != 2 || rs.len() != 2 || rs[0] != 1 || rs[1] != xs[1] {
            return Err(CoreError::shape(format_args!("add_row_broadcast: {xs:?} + {rs:?}")));
        }
        let (n, c) = (xs[0], xs[1]);
        let mut data = self.node(x).data.clone();
        for i in 0..n {
            for j in 0..c {
                data[i * c + j] += self.node(row).data[j];
            }
        }
        let rg = self.wants_grad(&[x, row]);
        Ok(self.push(data, xs, rg, Op::AddRowBroadcast { x, row }))
    }

    /// `[c, h, w] + [c]` with the bias broadcast over the spatial dims.
    pub fn add_channel_bias(&mut self, x: TensorId, bias: TensorId) -> Result<TensorId> {
        let xs = self.node(x).shape.clone();
        let bs = self.node(bias).shape.clone();
        if xs.len() != 3 || bs.len() != 1 || bs[0] != xs[0] {
            return Err(CoreError::shape(format_args!("add_channel_bias: {xs:?} + {bs:?}")));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let mut data = self.node(x).data.clone();
        for ch in 0..c {
            let b = self.node(bias).data[ch];
            for i in 0..h * w {
                data[ch * h * w + i] += b;
            }
        }
        let rg = self.wants_grad(&[x, bias]);
        Ok(self.push(data, xs, rg, Op::AddChannelBias { x, bias }))
    }

    // ---- linear algebra --------------------------------------------------

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.node(a).shape.clone(), self.node(b).shape.clone());
        if sa.len() != 2 || sb.len() != 2 {
            return Err(CoreError::shape(format_args!("matmul needs matrices, got {sa:?} x {sb:?}")));
        }
        if sa[1] != sb[0] {
            return Err(CoreError::shape(format_args!("matmul inner dims: {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_raw(&self.node(a).data, &self.node(b).data, m, k, n);
        let rg = self.wants_grad(&[a, b]);
        Ok(self.push(data, vec![m, n], rg, Op::Matmul { a, b }))
    }

    pub fn transpose(&mut self, a: TensorId) -> Result<TensorId> {
        let s = self.node(a).shape.clone();
        if s.len() != 2 {
            return Err(CoreError::shape(format_args!("transpose needs a matrix, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let data = transpose_raw(&self.node(a).data, r, c);
        let rg = self.node(a).requires_grad;
        Ok(self.push(data, vec![c, r], rg, Op::Transpose(a)))
    }

    /// Linear layer `x [n, in] x w [out, in]^T (+ bias [1, out]) -> [n, out]`.
    pub fn linear(&mut self, x: TensorId, w: TensorId, bias: Option<TensorId>) -> Result<TensorId> {
        let wt = self.transpose(w)?;
        let y = self.matmul(x, wt)?;
        match bias {
            Some(b) => self.add_row_broadcast(y, b),
            None => Ok(y),
        }
    }

    // ---- nonlinearities --------------------------------------------------

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        let data = self
            .node(a)
            .data
            .iter()
            .map(|&x| if x > 0.0 { x } else { 0.0 })
            .collect();
        let shape = self.node(a).shape.clone();
        let rg = self.node(a).requires_grad;
        self.push(data, shape, rg, Op::Relu(a))
    }

    /// Row-wise softmax of a `[r, c]` matrix, stabilized by per-row max
    /// subtraction.
    pub fn softmax_rows(&mut self, a: TensorId) -> Result<TensorId> {
        let s = self.node(a).shape.clone();
        if s.len() != 2 {
            return Err(CoreError::shape(format_args!("softmax_rows needs a matrix, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let mut data = vec![0.0 as Real; r * c];
        for i in 0..r {
            let row = &self.node(a).data[i * c..(i + 1) * c];
            softmax_into(row, &mut data[i * c..(i + 1) * c]);
        }
        let rg = self.node(a).requires_grad;
        Ok(self.push(data, s, rg, Op::SoftmaxRows(a)))
    }

    /// Row-wise layer normalization of a `[r, d]` matrix: each row is
    /// shifted to zero mean and scaled to unit population variance
    /// (`eps` inside the square root, no learnable affine).
    pub fn layer_norm_rows(&mut self, a: TensorId) -> Result<TensorId> {
        let s = self.node(a).shape.clone();
        if s.len() != 2 {
            return Err(CoreError::shape(format_args!("layer_norm_rows needs a matrix, got {s:?}")));
        }
        let (r, d) = (s[0], s[1]);
        if d < 2 {
            return Err(CoreError::invalid("layer_norm needs vectors of dimension >= 2"));
        }
        let eps = LAYER_NORM_EPS;
        let mut data = vec![0.0 as Real; r * d];
        for i in 0..r {
            let row = &self.node(a).data[i * d..(i + 1) * d];
            let mean = row.iter().sum::<Real>() / d as Real;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<Real>() / d as Real;
            let inv = 1.0 / math::sqrt(var + eps);
            for j in 0..d {
                data[i * d + j] = (row[j] - mean) * inv;
            }
        }
        let rg = self.node(a).requires_grad;
        Ok(self.push(data, s, rg, Op::LayerNormRows { x: a, eps }))
    }

    // ---- convolution and pooling ------------------------------------------

    /// 2-D convolution (cross-correlation) of `x [in_ch, h, w]` with
    /// `kernel [out_ch, in_ch, kh, kw]`, zero padding `pad` on all sides,
    /// square stride. Output height is `floor((h + 2*pad - kh)/stride) + 1`.
    pub fn conv2d(&mut self, x: TensorId, kernel: TensorId, stride: usize, pad: usize) -> Result<TensorId> {
        let xs = self.node(x).shape.clone();
        let ks = self.node(kernel).shape.clone();
        if xs.len() != 3 || ks.len() != 4 {
            return Err(CoreError::shape(format_args!("conv2d: input {xs:?}, kernel {ks:?}")));
        }
        if ks[1] != xs[0] {
            return Err(CoreError::shape(format_args!(
                "conv2d channels: input has {}, kernel expects {}",
                xs[0], ks[1]
            )));
        }
        if stride == 0 {
            return Err(CoreError::invalid("conv2d stride must be positive"));
        }
        let (h, w) = (xs[1], xs[2]);
        let (kh, kw) = (ks[2], ks[3]);
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(CoreError::shape("conv2d kernel larger than padded input"));
        }
        let out_h = (h + 2 * pad - kh) / stride + 1;
        let out_w = (w + 2 * pad - kw) / stride + 1;
        let out_c = ks[0];
        let data = conv2d_raw(
            &self.node(x).data,
            &self.node(kernel).data,
            xs[0],
            h,
            w,
            out_c,
            kh,
            kw,
            stride,
            pad,
            out_h,
            out_w,
        );
        let rg = self.wants_grad(&[x, kernel]);
        Ok(self.push(data, vec![out_c, out_h, out_w], rg, Op::Conv2d { x, kernel, stride, pad }))
    }

    /// Non-overlapping average pooling of `x [c, h, w]` with window
    /// `(win_h, win_w)`; the window must tile the input exactly.
    pub fn avg_pool(&mut self, x: TensorId, win_h: usize, win_w: usize) -> Result<TensorId> {
        let xs = self.node(x).shape.clone();
        if xs.len() != 3 {
            return Err(CoreError::shape(format_args!("avg_pool input {xs:?}")));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        if win_h == 0 || win_w == 0 || h % win_h != 0 || w % win_w != 0 {
            return Err(CoreError::shape(format_args!(
                "avg_pool window {win_h}x{win_w} does not tile {h}x{w}"
            )));
        }
        let (oh, ow) = (h / win_h, w / win_w);
        let inv = 1.0 / (win_h * win_w) as Real;
        let mut data = vec![0.0 as Real; c * oh * ow];
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let mut s = 0.0;
                    for di in 0..win_h {
                        for dj in 0..win_w {
                            s += self.node(x).data[ch * h * w + (i * win_h + di) * w + (j * win_w + dj)];
                        }
                    }
                    data[ch * oh * ow + i * ow + j] = s * inv;
                }
            }
        }
        let rg = self.node(x).requires_grad;
        Ok(self.push(data, vec![c, oh, ow], rg, Op::AvgPool { x, win_h, win_w }))
    }

    // ---- shape ops ---------------------------------------------------------

    pub fn reshape(&mut self, x: TensorId, shape: Vec<usize>) -> Result<TensorId> {
        if numel(&shape) != self.node(x).data.len() {
            return Err(CoreError::shape(format_args!(
                "reshape {:?} -> {shape:?}",
                self.node(x).shape
            )));
        }
        let data = self.node(x).data.clone();
        let rg = self.node(x).requires_grad;
        Ok(self.push(data, shape, rg, Op::Reshape(x)))
    }

    /// Stack matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(CoreError::invalid("concat_rows of zero parts"));
        }
        let c = {
            let s = self.node(parts[0]).shape.clone();
            if s.len() != 2 {
                return Err(CoreError::shape(format_args!("concat_rows part {s:?}")));
            }
            s[1]
        };
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = &self.node(p).shape;
            if s.len() != 2 || s[1] != c {
                return Err(CoreError::shape(format_args!("concat_rows part {s:?}, want [_, {c}]")));
            }
            rows += s[0];
            data.extend_from_slice(&self.node(p).data);
        }
        let rg = self.wants_grad(parts);
        Ok(self.push(data, vec![rows, c], rg, Op::ConcatRows(parts.to_vec())))
    }

    /// Rows `start..start+rows` of a matrix.
    pub fn slice_rows(&mut self, x: TensorId, start: usize, rows: usize) -> Result<TensorId> {
        let s = self.node(x).shape.clone();
        if s.len() != 2 || start + rows > s[0] || rows == 0 {
            return Err(CoreError::shape(format_args!(
                "slice_rows {start}..{} of {s:?}",
                start + rows
            )));
        }
        let c = s[1];
        let data = self.node(x).data[start * c..(start + rows) * c].to_vec();
        let rg = self.node(x).requires_grad;
        Ok(self.push(data, vec![rows, c], rg, Op::SliceRows { x, start }))
    }

    /// Mean over each contiguous block of `group` rows:
    /// `[g*group, c] -> [g, c]`.
    pub fn group_mean_rows(&mut self, x: TensorId, group: usize) -> Result<TensorId> {
        let s = self.node(x).shape.clone();
        if s.len() != 2 || group == 0 || s[0] % group != 0 {
            return Err(CoreError::shape(format_args!(
                "group_mean_rows of {s:?} with group {group}"
            )));
        }
        let (g, c) = (s[0] / group, s[1]);
        let inv = 1.0 / group as Real;
        let mut data = vec![0.0 as Real; g * c];
        for b in 0..g {
            for r in 0..group {
                for j in 0..c {
                    data[b * c + j] += self.node(x).data[(b * group + r) * c + j] * inv;
                }
            }
        }
        let rg = self.node(x).requires_grad;
        Ok(self.push(data, vec![g, c], rg, Op::GroupMeanRows { x, group }))
    }

    // ---- reductions and losses ---------------------------------------------

    pub fn sum_all(&mut self, x: TensorId) -> TensorId {
        let s: Real = self.node(x).data.iter().sum();
        let rg = self.node(x).requires_grad;
        self.push(vec![s], vec![1], rg, Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: TensorId) -> TensorId {
        let n = self.node(x).data.len();
        let s: Real = self.node(x).data.iter().sum();
        let rg = self.node(x).requires_grad;
        self.push(vec![s / n as Real], vec![1], rg, Op::MeanAll(x))
    }

    /// Mean cross-entropy of `logits [b, c]` against integer labels,
    /// computed through a stabilized log-sum-exp.
    pub fn cross_entropy(&mut self, logits: TensorId, labels: &[usize]) -> Result<TensorId> {
        let s = self.node(logits).shape.clone();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(CoreError::shape(format_args!(
                "cross_entropy logits {s:?} vs {} labels",
                labels.len()
            )));
        }
        let (b, c) = (s[0], s[1]);
        for &l in labels {
            if l >= c {
                return Err(CoreError::LabelOutOfRange { label: l, classes: c });
            }
        }
        let mut total = 0.0 as Real;
        for i in 0..b {
            let row = &self.node(logits).data[i * c..(i + 1) * c];
            total += log_sum_exp(row) - row[labels[i]];
        }
        let rg = self.node(logits).requires_grad;
        Ok(self.push(
            vec![total / b as Real],
            vec![1],
            rg,
            Op::CrossEntropy { logits, labels: labels.to_vec() },
        ))
    }

    /// Cosine similarity of the single row `query [1, d]` against each row
    /// of `refs [c, d]`, producing `[1, c]`. Norms are clamped to `1e-12`
    /// so zero vectors yield zero scores rather than NaN.
    pub fn cosine_scores(&mut self, query: TensorId, refs: TensorId) -> Result<TensorId> {
        let qs = self.node(query).shape.clone();
        let rs = self.node(refs).shape.clone();
        if qs.len() != 2 || qs[0] != 1 || rs.len() != 2 || rs[1] != qs[1] {
            return Err(CoreError::shape(format_args!("cosine_scores {qs:?} vs {rs:?}")));
        }
        let (c, d) = (rs[0], rs[1]);
        let q = &self.node(query).data;
        let qn = math::norm_clamped(q);
        let mut data = vec![0.0 as Real; c];
        for i in 0..c {
            let r = &self.node(refs).data[i * d..(i + 1) * d];
            data[i] = math::dot(q, r) / (qn * math::norm_clamped(r));
        }
        let rg = self.wants_grad(&[query, refs]);
        Ok(self.push(data, vec![1, c], rg, Op::CosineScores { query, refs }))
    }

    // ---- backward ----------------------------------------------------------

    /// Reverse-mode sweep from a scalar loss. Populates `grad` on every
    /// `requires_grad` node reachable from `loss`; gradients accumulate
    /// additively, both across multiple uses of a node within this tape
    /// and across repeated `backward` calls.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.node(loss).data.len() != 1 {
            return Err(CoreError::invalid("backward needs a scalar loss"));
        }
        if !self.node(loss).requires_grad {
            // loss does not depend on any parameter; nothing to do
            return Ok(());
        }
        // seed
        let mut seeds: Vec<Option<Vec<Real>>> = vec![None; self.nodes.len()];
        seeds[loss.0] = Some(vec![1.0 as Real]);

        for i in (0..=loss.0).rev() {
            let Some(g) = seeds[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            // record the node's own gradient (leaves and intermediates alike)
            match &mut self.nodes[i].grad {
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(&g) {
                        *a += *b;
                    }
                }
                slot => *slot = Some(g.clone()),
            }
            self.propagate(i, &g, &mut seeds);
        }
        Ok(())
    }

    /// Clear accumulated gradients on every node.
    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn seed_into(seeds: &mut [Option<Vec<Real>>], t: TensorId, delta: Vec<Real>) {
        match &mut seeds[t.0] {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&delta) {
                    *a += *b;
                }
            }
            slot => *slot = Some(delta),
        }
    }

    fn propagate(&self, i: usize, g: &[Real], seeds: &mut [Option<Vec<Real>>]) {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.node(a).requires_grad {
                    Self::seed_into(seeds, a, g.to_vec());
                }
                if self.node(b).requires_grad {
                    Self::seed_into(seeds, b, g.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if self.node(a).requires_grad {
                    Self::seed_into(seeds, a, g.to_vec());
                }
                if self.node(b).requires_grad {
                    Self::seed_into(seeds, b, g.iter().map(|x| -x).collect());
                }
            }
            Op::Mul(a, b) => {
                if self.node(a).requires_grad {
                    let d = g.iter().zip(&self.node(b).data).map(|(x, y)| x * y).collect();
                    Self::seed_into(seeds, a, d);
                }
                if self.node(b).requires_grad {
                    let d = g.iter().zip(&self.node(a).data).map(|(x, y)| x * y).collect();
                    Self::seed_into(seeds, b, d);
                }
            }
            Op::Scale(a, c) => {
                if self.node(a).requires_grad {
                    Self::seed_into(seeds, a, g.iter().map(|x| x * c).collect());
                }
            }
            Op::AddRowBroadcast { x, row } => {
                let c = self.node(row).shape[1];
                if self.node(x).requires_grad {
                    Self::seed_into(seeds, x, g.to_vec());
                }
                if self.node(row).requires_grad {
                    let n = self.node(x).shape[0];
                    let mut d = vec![0.0 as Real; c];
                    for i in 0..n {
                        for j in 0..c {
                            d[j] += g[i * c + j];
                        }
                    }
                    Self::seed_into(seeds, row, d);
                }
            }
            Op::AddChannelBias { x, bias } => {
                if self.node(x).requires_grad {
                    Self::seed_into(seeds, x, g.to_vec());
                }
                if self.node(bias).requires_grad {
                    let s = &self.node(x).shape;
                    let (c, hw) = (s[0], s[1] * s[2]);
                    let mut d = vec![0.0 as Real; c];
                    for ch in 0..c {
                        for i in 0..hw {
                            d[ch] += g[ch * hw + i];
                        }
                    }
                    Self::seed_into(seeds, bias, d);
                }
            }
            Op::Matmul { a, b } => {
                let (m, k) = (self.node(a).shape[0], self.node(a).shape[1]);
                let n = self.node(b).shape[1];
                if self.node(a).requires_grad {
                    // dA = g . B^T
                    let bt = transpose_raw(&self.node(b).data, k, n);
                    Self::seed_into(seeds, a, matmul_raw(g, &bt, m, n, k));
                }
                if self.node(b).requires_grad {
                    // dB = A^T . g
                    let at = transpose_raw(&self.node(a).data, m, k);
                    Self::seed_into(seeds, b, matmul_raw(&at, g, k, m, n));
                }
            }
            Op::Transpose(a) => {
                if self.node(a).requires_grad {
                    let (r, c) = (self.node(a).shape[0], self.node(a).shape[1]);
                    // forward output is [c, r]; transpose g back
                    Self::seed_into(seeds, a, transpose_raw(g, c, r));
                }
            }
            Op::Relu(a) => {
                if self.node(a).requires_grad {
                    let d = self
                        .node(a)
                        .data
                        .iter()
                        .zip(g)
                        .map(|(&x, &gg)| if x > 0.0 { gg } else { 0.0 })
                        .collect();
                    Self::seed_into(seeds, a, d);
                }
            }
            Op::SoftmaxRows(a) => {
                if self.node(a).requires_grad {
                    let (r, c) = (self.nodes[i].shape[0], self.nodes[i].shape[1]);
                    let y = &self.nodes[i].data;
                    let mut d = vec![0.0 as Real; r * c];
                    for row in 0..r {
                        let ys = &y[row * c..(row + 1) * c];
                        let gs = &g[row * c..(row + 1) * c];
                        let dot: Real = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            d[row * c + j] = ys[j] * (gs[j] - dot);
                        }
                    }
                    Self::seed_into(seeds, a, d);
                }
            }
            Op::LayerNormRows { x, eps } => {
                if self.node(x).requires_grad {
                    let (r, dim) = (self.nodes[i].shape[0], self.nodes[i].shape[1]);
                    let y = &self.nodes[i].data;
                    let xs = &self.node(x).data;
                    let mut d = vec![0.0 as Real; r * dim];
                    for row in 0..r {
                        let xr = &xs[row * dim..(row + 1) * dim];
                        let yr = &y[row * dim..(row + 1) * dim];
                        let gr = &g[row * dim..(row + 1) * dim];
                        let mean = xr.iter().sum::<Real>() / dim as Real;
                        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / dim as Real;
                        let inv = 1.0 / math::sqrt(var + eps);
                        let g_mean = gr.iter().sum::<Real>() / dim as Real;
                        let gy_mean = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<Real>() / dim as Real;
                        for j in 0..dim {
                            d[row * dim + j] = inv * (gr[j] - g_mean - yr[j] * gy_mean);
                        }
                    }
                    Self::seed_into(seeds, x, d);
                }
            }
            Op::Conv2d { x, kernel, stride, pad } => {
                let xs = &self.node(x).shape;
                let ks = &self.node(kernel).shape;
                let os = &self.nodes[i].shape;
                let (in_c, h, w) = (xs[0], xs[1], xs[2]);
                let (out_c, kh, kw) = (ks[0], ks[2], ks[3]);
                let (oh, ow) = (os[1], os[2]);
                if self.node(x).requires_grad {
                    let mut d = vec![0.0 as Real; in_c * h * w];
                    let kd = &self.node(kernel).data;
                    for oc in 0..out_c {
                        for i0 in 0..oh {
                            for j0 in 0..ow {
                                let gg = g[oc * oh * ow + i0 * ow + j0];
                                if gg == 0.0 {
                                    continue;
                                }
                                for ic in 0..in_c {
                                    for di in 0..kh {
                                        let ii = (i0 * stride + di) as isize - pad as isize;
                                        if ii < 0 || ii as usize >= h {
                                            continue;
                                        }
                                        for dj in 0..kw {
                                            let jj = (j0 * stride + dj) as isize - pad as isize;
                                            if jj < 0 || jj as usize >= w {
                                                continue;
                                            }
                                            d[ic * h * w + ii as usize * w + jj as usize] +=
                                                gg * kd[((oc * in_c + ic) * kh + di) * kw + dj];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    Self::seed_into(seeds, x, d);
                }
                if self.node(kernel).requires_grad {
                    let mut d = vec![0.0 as Real; out_c * in_c * kh * kw];
                    let xd = &self.node(x).data;
                    for oc in 0..out_c {
                        for i0 in 0..oh {
                            for j0 in 0..ow {
                                let gg = g[oc * oh * ow + i0 * ow + j0];
                                if gg == 0.0 {
                                    continue;
                                }
                                for ic in 0..in_c {
                                    for di in 0..kh {
                                        let ii = (i0 * stride + di) as isize - pad as isize;
                                        if ii < 0 || ii as usize >= h {
                                            continue;
                                        }
                                        for dj in 0..kw {
                                            let jj = (j0 * stride + dj) as isize - pad as isize;
                                            if jj < 0 || jj as usize >= w {
                                                continue;
                                            }
                                            d[((oc * in_c + ic) * kh + di) * kw + dj] +=
                                                gg * xd[ic * h * w + ii as usize * w + jj as usize];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    Self::seed_into(seeds, kernel, d);
                }
            }
            Op::AvgPool { x, win_h, win_w } => {
                if self.node(x).requires_grad {
                    let xs = &self.node(x).shape;
                    let (c, h, w) = (xs[0], xs[1], xs[2]);
                    let (oh, ow) = (h / win_h, w / win_w);
                    let inv = 1.0 / (win_h * win_w) as Real;
                    let mut d = vec![0.0 as Real; c * h * w];
                    for ch in 0..c {
                        for i0 in 0..oh {
                            for j0 in 0..ow {
                                let gg = g[ch * oh * ow + i0 * ow + j0] * inv;
                                for di in 0..win_h {
                                    for dj in 0..win_w {
                                        d[ch * h * w + (i0 * win_h + di) * w + (j0 * win_w + dj)] += gg;
                                    }
                                }
                            }
                        }
                    }
                    Self::seed_into(seeds, x, d);
                }
            }
            Op::Reshape(x) => {
                if self.node(x).requires_grad {
                    Self::seed_into(seeds, x, g.to_vec());
                }
            }
            Op::ConcatRows(parts) => {
                let c = self.nodes[i].shape[1];
                let mut offset = 0;
                for p in parts {
                    let rows = self.node(p).shape[0];
                    if self.node(p).requires_grad {
                        Self::seed_into(seeds, p, g[offset * c..(offset + rows) * c].to_vec());
                    }
                    offset += rows;
                }
            }
            Op::SliceRows { x, start } => {
                if self.node(x).requires_grad {
                    let (xr, c) = (self.node(x).shape[0], self.node(x).shape[1]);
                    let rows = self.nodes[i].shape[0];
                    let mut d = vec![0.0 as Real; xr * c];
                    d[start * c..(start + rows) * c].copy_from_slice(g);
                    Self::seed_into(seeds, x, d);
                }
            }
            Op::GroupMeanRows { x, group } => {
                if self.node(x).requires_grad {
                    let (rows, c) = (self.node(x).shape[0], self.node(x).shape[1]);
                    let inv = 1.0 / group as Real;
                    let mut d = vec![0.0 as Real; rows * c];
                    for r in 0..rows {
                        let b = r / group;
                        for j in 0..c {
                            d[r * c + j] = g[b * c + j] * inv;
                        }
                    }
                    Self::seed_into(seeds, x, d);
                }
            }
            Op::MeanAll(x) => {
                if self.node(x).requires_grad {
                    let n = self.node(x).data.len();
                    let gg = g[0] / n as Real;
                    Self::seed_into(seeds, x, vec![gg; n]);
                }
            }
            Op::SumAll(x) => {
                if self.node(x).requires_grad {
                    let n = self.node(x).data.len();
                    Self::seed_into(seeds, x, vec![g[0]; n]);
                }
            }
            Op::CrossEntropy { logits, labels } => {
                if self.node(logits).requires_grad {
                    let (b, c) = (self.node(logits).shape[0], self.node(logits).shape[1]);
                    let mut d = vec![0.0 as Real; b * c];
                    let scale = g[0] / b as Real;
                    for row in 0..b {
                        let xr = &self.node(logits).data[row * c..(row + 1) * c];
                        softmax_into(xr, &mut d[row * c..(row + 1) * c]);
                        for j in 0..c {
                            d[row * c + j] *= scale;
                        }
                        d[row * c + labels[row]] -= scale;
                    }
                    Self::seed_into(seeds, logits, d);
                }
            }
            Op::CosineScores { query, refs } => {
                let dmq = self.node(query).shape[1];
                let c = self.node(refs).shape[0];
                let q = &self.node(query).data;
                let qn = math::norm_clamped(q);
                let y = &self.nodes[i].data;
                if self.node(query).requires_grad {
                    let mut d = vec![0.0 as Real; dmq];
                    for k in 0..c {
                        let r = &self.node(refs).data[k * dmq..(k + 1) * dmq];
                        let rn = math::norm_clamped(r);
                        for j in 0..dmq {
                            d[j] += g[k] * (r[j] / (qn * rn) - y[k] * q[j] / (qn * qn));
                        }
                    }
                    Self::seed_into(seeds, query, d);
                }
                if self.node(refs).requires_grad {
                    let mut d = vec![0.0 as Real; c * dmq];
                    for k in 0..c {
                        let r = &self.node(refs).data[k * dmq..(k + 1) * dmq];
                        let rn = math::norm_clamped(r);
                        for j in 0..dmq {
                            d[k * dmq + j] = g[k] * (q[j] / (qn * rn) - y[k] * r[j] / (rn * rn));
                        }
                    }
                    Self::seed_into(seeds, refs, d);
                }
            }
        }
    }
}

/// Plain `[m, k] x [k, n]` product on flat row-major buffers.
pub(crate) fn matmul_raw(a: &[Real], b: &[Real], m: usize, k: usize, n: usize) -> Vec<Real> {
    let mut out = vec![0.0 as Real; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

pub(crate) fn transpose_raw(a: &[Real], r: usize, c: usize) -> Vec<Real> {
    let mut out = vec![0.0 as Real; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

fn softmax_into(row: &[Real], out: &mut [Real]) {
    let max = row.iter().copied().fold(Real::NEG_INFINITY, Real::max);
    let mut sum = 0.0 as Real;
    for (o, &x) in out.iter_mut().zip(row) {
        let e = math::exp(x - max);
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn log_sum_exp(row: &[Real]) -> Real {
    let max = row.iter().copied().fold(Real::NEG_INFINITY, Real::max);
    let sum: Real = row.iter().map(|&x| math::exp(x - max)).sum();
    max + math::ln(sum)
}

#[allow(clippy::too_many_arguments)]
fn conv2d_raw(
    x: &[Real],
    k: &[Real],
    in_c: usize,
    h: usize,
    w: usize,
    out_c: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<Real> {
    let mut out = vec![0.0 as Real; out_c * oh * ow];
    for oc in 0..out_c {
        for i0 in 0..oh {
            for j0 in 0..ow {
                let mut s = 0.0 as Real;
                for ic in 0..in_c {
                    for di in 0..kh {
                        let ii = (i0 * stride + di) as isize - pad as isize;
                        if ii < 0 || ii as usize >= h {
                            continue;
                        }
                        for dj in 0..kw {
                            let jj = (j0 * stride + dj) as isize - pad as isize;
                            if jj < 0 || jj as usize >= w {
                                continue;
                            }
                            s += x[ic * h * w + ii as usize * w + jj as usize]
                                * k[((oc * in_c + ic) * kh + di) * kw + dj];
                        }
                    }
                }
                out[oc * oh * ow + i0 * ow + j0] = s;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn close(a: Real, b: Real, tol: Real) -> bool {
        math::abs(a - b) <= tol
    }

    #[test]
    fn matmul_known_product() {
        let mut t = Tape::new();
        let a = t.constant(vec![1.0, 2.0, 3.0, 4.0], vec![2, 2]).unwrap();
        let b = t.constant(vec![5.0, 6.0, 7.0, 8.0], vec![2, 2]).unwrap();
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_identity_and_zeros() {
        let mut t = Tape::new();
        let i2 = t.constant(vec![1.0, 0.0, 0.0, 1.0], vec![2, 2]).unwrap();
        let b = t.constant(vec![3.0, -1.0, 2.5, 0.0], vec![2, 2]).unwrap();
        let ib = t.matmul(i2, b).unwrap();
        assert_eq!(t.value(ib), t.value(b));
        let z = t.constant(vec![0.0; 4], vec![2, 2]).unwrap();
        let bz = t.matmul(b, z).unwrap();
        assert_eq!(t.value(bz), &[0.0; 4]);
    }

    #[test]
    fn matmul_shape_error() {
        let mut t = Tape::new();
        let a = t.constant(vec![1.0, 2.0], vec![1, 2]).unwrap();
        let b = t.constant(vec![1.0, 2.0, 3.0], vec![3, 1]).unwrap();
        assert!(matches!(t.matmul(a, b), Err(CoreError::ShapeMismatch(_))));
    }

    #[test]
    fn softmax_uniform_and_analytic() {
        let mut t = Tape::new();
        let x = t.constant(vec![0.0; 4], vec![1, 4]).unwrap();
        let y = t.softmax_rows(x).unwrap();
        for &v in t.value(y) {
            assert!(close(v, 0.25, 1e-12));
        }
        let x2 = t.constant(vec![0.0, math::ln(2.0)], vec![1, 2]).unwrap();
        let y2 = t.softmax_rows(x2).unwrap();
        assert!(close(t.value(y2)[0], 1.0 / 3.0, 1e-12));
        assert!(close(t.value(y2)[1], 2.0 / 3.0, 1e-12));
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut t = Tape::new();
        let x = t.constant(vec![0.3, -1.2, 2.0, 0.7], vec![1, 4]).unwrap();
        let xs = t.constant(vec![0.3 + 5.0, -1.2 + 5.0, 2.0 + 5.0, 0.7 + 5.0], vec![1, 4]).unwrap();
        let y = t.softmax_rows(x).unwrap();
        let ys = t.softmax_rows(xs).unwrap();
        for (a, b) in t.value(y).iter().zip(t.value(ys)) {
            assert!(close(*a, *b, 1e-12));
        }
    }

    #[test]
    fn layer_norm_basics() {
        let mut t = Tape::new();
        // constant vector -> zeros
        let x = t.constant(vec![3.0; 5], vec![1, 5]).unwrap();
        let y = t.layer_norm_rows(x).unwrap();
        for &v in t.value(y) {
            assert!(close(v, 0.0, 1e-12));
        }
        // [1, 3] -> [-1, 1] up to eps
        let x2 = t.constant(vec![1.0, 3.0], vec![1, 2]).unwrap();
        let y2 = t.layer_norm_rows(x2).unwrap();
        assert!(close(t.value(y2)[0], -1.0, 1e-4));
        assert!(close(t.value(y2)[1], 1.0, 1e-4));
        // scale invariance for alpha > 0, up to the eps inside the norm
        let x3 = t.constant(vec![0.4, -1.0, 2.2], vec![1, 3]).unwrap();
        let x3s = t.constant(vec![0.4 * 7.0, -7.0, 2.2 * 7.0], vec![1, 3]).unwrap();
        let y3 = t.layer_norm_rows(x3).unwrap();
        let y3s = t.layer_norm_rows(x3s).unwrap();
        for (a, b) in t.value(y3).iter().zip(t.value(y3s)) {
            assert!(close(*a, *b, 1e-5));
        }
    }

    #[test]
    fn layer_norm_rejects_scalars() {
        let mut t = Tape::new();
        let x = t.constant(vec![1.0], vec![1, 1]).unwrap();
        assert!(t.layer_norm_rows(x).is_err());
    }

    #[test]
    fn relu_clamps() {
        let mut t = Tape::new();
        let x = t.constant(vec![-1.0, 0.0, 2.0], vec![1, 3]).unwrap();
        let y = t.relu(x);
        assert_eq!(t.value(y), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn conv_identity_kernel() {
        let mut t = Tape::new();
        let x = t
            .constant((0..12).map(|v| v as Real).collect(), vec![1, 3, 4])
            .unwrap();
        let k = t.constant(vec![1.0], vec![1, 1, 1, 1]).unwrap();
        let y = t.conv2d(x, k, 1, 0).unwrap();
        assert_eq!(t.value(y), t.value(x));
        assert_eq!(t.shape(y), &[1, 3, 4]);
    }

    #[test]
    fn conv_sliding_window_oracle() {
        // 3x3 input, 2x2 kernel, stride 1 -> 2x2 output against direct sums
        let xv: Vec<Real> = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        let kv: Vec<Real> = vec![1.0, -1.0, 0.5, 2.0];
        let mut t = Tape::new();
        let x = t.constant(xv.clone(), vec![1, 3, 3]).unwrap();
        let k = t.constant(kv.clone(), vec![1, 1, 2, 2]).unwrap();
        let y = t.conv2d(x, k, 1, 0).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut s = 0.0;
                for di in 0..2 {
                    for dj in 0..2 {
                        s += xv[(i + di) * 3 + (j + dj)] * kv[di * 2 + dj];
                    }
                }
                assert!(close(t.value(y)[i * 2 + j], s, 1e-12));
            }
        }
    }

    #[test]
    fn avg_pool_tiles() {
        let mut t = Tape::new();
        let x = t
            .constant(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0], vec![2, 2, 2])
            .unwrap();
        let y = t.avg_pool(x, 2, 2).unwrap();
        assert_eq!(t.shape(y), &[2, 1, 1]);
        assert_eq!(t.value(y), &[2.5, 6.5]);
        assert!(t.avg_pool(x, 3, 2).is_err());
    }

    #[test]
    fn cross_entropy_uniform_is_ln_c() {
        let mut t = Tape::new();
        let x = t.constant(vec![0.0; 4], vec![1, 4]).unwrap();
        let l = t.cross_entropy(x, &[2]).unwrap();
        assert!(close(t.value(l)[0], math::ln(4.0), 1e-12));
    }

    #[test]
    fn cross_entropy_confident_is_near_zero() {
        let mut t = Tape::new();
        let x = t.constant(vec![50.0, 0.0, 0.0], vec![1, 3]).unwrap();
        let l = t.cross_entropy(x, &[0]).unwrap();
        assert!(t.value(l)[0] < 1e-12);
    }

    #[test]
    fn cross_entropy_batch_matches_scalar_oracle() {
        // independent scalar oracle for one row
        fn row_loss(row: &[Real], label: usize) -> Real {
            let mut sum = 0.0;
            for &v in row {
                sum += math::exp(v);
            }
            math::ln(sum) - row[label]
        }
        let r0 = [0.2, -0.4, 1.1];
        let r1 = [2.0, 0.0, -1.0];
        let expect = (row_loss(&r0, 2) + row_loss(&r1, 0)) / 2.0;
        let mut t = Tape::new();
        let x = t
            .constant(r0.iter().chain(&r1).copied().collect(), vec![2, 3])
            .unwrap();
        let l = t.cross_entropy(x, &[2, 0]).unwrap();
        assert!(close(t.value(l)[0], expect, 1e-12));
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let mut t = Tape::new();
        let x = t.constant(vec![0.0; 3], vec![1, 3]).unwrap();
        assert!(matches!(
            t.cross_entropy(x, &[3]),
            Err(CoreError::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn backward_sum_of_squares() {
        let mut t = Tape::new();
        let x = t.leaf(vec![1.0, 2.0], vec![1, 2], true).unwrap();
        let sq = t.mul(x, x).unwrap();
        let s = t.sum_all(sq);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_constant_has_zero_grad() {
        let mut t = Tape::new();
        let x = t.leaf(vec![1.0, 2.0], vec![1, 2], true).unwrap();
        let c = t.constant(vec![5.0], vec![1]).unwrap();
        // loss ignores x entirely
        t.backward(c).unwrap();
        assert!(t.grad(x).is_none());
    }

    #[test]
    fn backward_requires_scalar() {
        let mut t = Tape::new();
        let x = t.leaf(vec![1.0, 2.0], vec![1, 2], true).unwrap();
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn backward_is_linear() {
        // grad of (alpha*f + beta*g) == alpha*grad f + beta*grad g
        let x0 = vec![0.7, -1.3, 0.2];
        let (alpha, beta) = (1.7 as Real, -0.6 as Real);

        let grad_of = |mk: &dyn Fn(&mut Tape, TensorId) -> TensorId| -> Vec<Real> {
            let mut t = Tape::new();
            let x = t.leaf(x0.clone(), vec![1, 3], true).unwrap();
            let l = mk(&mut t, x);
            t.backward(l).unwrap();
            t.grad(x).unwrap().to_vec()
        };

        let f = |t: &mut Tape, x: TensorId| -> TensorId {
            let sq = t.mul(x, x).unwrap();
            t.sum_all(sq)
        };
        let g = |t: &mut Tape, x: TensorId| -> TensorId {
            let r = t.relu(x);
            t.mean_all(r)
        };
        let combo = |t: &mut Tape, x: TensorId| -> TensorId {
            let lf = f(t, x);
            let lg = g(t, x);
            let a = t.scale(lf, alpha);
            let b = t.scale(lg, beta);
            t.add(a, b).unwrap()
        };

        let gf = grad_of(&f);
        let gg = grad_of(&g);
        let gc = grad_of(&combo);
        for i in 0..3 {
            assert!(close(gc[i], alpha * gf[i] + beta * gg[i], 1e-10));
        }
    }

    #[test]
    fn gradients_accumulate_across_uses() {
        // y = x + x => dy/dx = 2
        let mut t = Tape::new();
        let x = t.leaf(vec![3.0], vec![1, 1], true).unwrap();
        let y = t.add(x, x).unwrap();
        let s = t.sum_all(y);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[2.0]);
        // second backward accumulates again
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[4.0]);
    }

    #[test]
    fn cosine_scores_parallel_and_orthogonal() {
        let mut t = Tape::new();
        let q = t.constant(vec![2.0, 0.0], vec![1, 2]).unwrap();
        let refs = t.constant(vec![4.0, 0.0, 0.0, 1.0], vec![2, 2]).unwrap();
        let s = t.cosine_scores(q, refs).unwrap();
        assert!(close(t.value(s)[0], 1.0, 1e-12));
        assert!(close(t.value(s)[1], 0.0, 1e-12));
    }

    #[test]
    fn concat_slice_group_mean_round_trip() {
        let mut t = Tape::new();
        let a = t.constant(vec![1.0, 2.0], vec![1, 2]).unwrap();
        let b = t.constant(vec![3.0, 4.0, 5.0, 6.0], vec![2, 2]).unwrap();
        let cat = t.concat_rows(&[a, b]).unwrap();
        assert_eq!(t.shape(cat), &[3, 2]);
        let back = t.slice_rows(cat, 1, 2).unwrap();
        assert_eq!(t.value(back), t.value(b));
        let gm = t.group_mean_rows(b, 2).unwrap();
        assert_eq!(t.value(gm), &[4.0, 5.0]);
    }

    #[test]
    fn values_stay_finite() {
        let mut t = Tape::new();
        let x = t.leaf(vec![30.0, -30.0, 0.0, 12.0], vec![1, 4], true).unwrap();
        let sm = t.softmax_rows(x).unwrap();
        let ln = t.layer_norm_rows(sm).unwrap();
        let l = t.mean_all(ln);
        t.backward(l).unwrap();
        assert!(t.is_finite(sm));
        assert!(t.is_finite(ln));
        assert!(t.grad(x).unwrap().iter().all(|v| v.is_finite()));
    }
}
