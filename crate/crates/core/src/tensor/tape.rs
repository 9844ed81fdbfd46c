//! Wengert tape: records forward operations, replays them in reverse.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ValueId(usize);

/// Elementwise operation kinds exposed through [`Tape::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseKind {
    Add,
    Sub,
    Mul,
    Square,
    Log,
    Relu,
}

/// Reduction kinds exposed through [`Tape::reduce`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    MaxAbs,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add { a: ValueId, b: ValueId },
    Sub { a: ValueId, b: ValueId },
    Mul { a: ValueId, b: ValueId },
    Square { a: ValueId },
    Log { a: ValueId },
    Relu { a: ValueId },
    Matmul { a: ValueId, b: ValueId },
    AddBias { m: ValueId, bias: ValueId },
    InfNormRows { a: ValueId },
    Reduce { kind: ReduceKind, a: ValueId, axis: Option<usize> },
    Detach { a: ValueId },
    SelectRows { a: ValueId, indices: Vec<usize> },
    SoftmaxCrossEntropy { logits: ValueId, labels: Vec<usize> },
    Conv2d { input: ValueId, weight: ValueId, bias: ValueId, stride: usize, pad: usize },
    MeanPoolSpatial { a: ValueId },
}

#[derive(Debug)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
    trainable: bool,
}

/// Ordered record of executed operations. Single-threaded; values are
/// immutable once recorded, gradients are filled by one backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    // ── Leaves and accessors ────────────────────────────────────────

    /// Register a tensor as a leaf. Its `trainable` flag decides whether
    /// backward treats it as a parameter.
    pub fn leaf(&mut self, t: &Tensor) -> ValueId {
        self.push(Op::Leaf, t.shape().to_vec(), t.values().to_vec(), t.trainable())
    }

    /// Constant scalar leaf (never trainable).
    pub fn scalar(&mut self, v: f64) -> ValueId {
        self.push(Op::Leaf, vec![1], vec![v], false)
    }

    pub fn values(&self, id: ValueId) -> &[f64] {
        &self.nodes[id.0].values
    }

    pub fn shape(&self, id: ValueId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    /// Value of a one-element node.
    pub fn scalar_value(&self, id: ValueId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].values.len(), 1);
        self.nodes[id.0].values[0]
    }

    /// Gradient of a node, if backward has populated it.
    pub fn grad(&self, id: ValueId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Extract the values of a node as a fresh tensor.
    pub fn tensor(&self, id: ValueId) -> Tensor {
        Tensor::new(self.values(id).to_vec(), self.shape(id).to_vec())
            .expect("node shape is consistent by construction")
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, values: Vec<f64>, trainable: bool) -> ValueId {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        let id = ValueId(self.nodes.len());
        self.nodes.push(Node { op, shape, values, grad: None, trainable });
        id
    }

    fn numel(&self, id: ValueId) -> usize {
        self.nodes[id.0].values.len()
    }

    // ── Elementwise ─────────────────────────────────────────────────

    /// Dispatcher over the elementwise kinds; binary kinds require `b`.
    pub fn elementwise(
        &mut self,
        kind: ElementwiseKind,
        a: ValueId,
        b: Option<ValueId>,
    ) -> Result<ValueId> {
        match (kind, b) {
            (ElementwiseKind::Add, Some(b)) => self.add(a, b),
            (ElementwiseKind::Sub, Some(b)) => self.sub(a, b),
            (ElementwiseKind::Mul, Some(b)) => self.mul(a, b),
            (ElementwiseKind::Square, None) => Ok(self.square(a)),
            (ElementwiseKind::Log, None) => self.log(a),
            (ElementwiseKind::Relu, None) => Ok(self.relu(a)),
            (k, Some(_)) => Err(Error::contract(format!("{k:?} takes one operand"))),
            (k, None) => Err(Error::contract(format!("{k:?} takes two operands"))),
        }
    }

    /// Shapes for a binary op: identical, or one side a scalar.
    fn binary_shape(&self, a: ValueId, b: ValueId, what: &str) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb || self.numel(b) == 1 {
            Ok(sa.to_vec())
        } else if self.numel(a) == 1 {
            Ok(sb.to_vec())
        } else {
            Err(Error::shape(format!("{what}: {sa:?} vs {sb:?}")))
        }
    }

    fn zip_binary(
        &mut self,
        a: ValueId,
        b: ValueId,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<ValueId> {
        let shape = self.binary_shape(a, b, what)?;
        let numel: usize = shape.iter().product();
        let (va, vb) = (&self.nodes[a.0].values, &self.nodes[b.0].values);
        let values: Vec<f64> = (0..numel)
            .map(|i| f(va[i % va.len()], vb[i % vb.len()]))
            .collect();
        Ok(self.push(op, shape, values, false))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.zip_binary(a, b, "add", |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.zip_binary(a, b, "sub", |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.zip_binary(a, b, "mul", |x, y| x * y, Op::Mul { a, b })
    }

    pub fn square(&mut self, a: ValueId) -> ValueId {
        let values: Vec<f64> = self.nodes[a.0].values.iter().map(|&x| x * x).collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(Op::Square { a }, shape, values, false)
    }

    pub fn log(&mut self, a: ValueId) -> Result<ValueId> {
        if let Some(&bad) = self.nodes[a.0].values.iter().find(|&&x| x <= 0.0) {
            return Err(Error::domain(format!("log of non-positive value {bad}")));
        }
        let values: Vec<f64> = self.nodes[a.0].values.iter().map(|&x| x.ln()).collect();
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push(Op::Log { a }, shape, values, false))
    }

    pub fn relu(&mut self, a: ValueId) -> ValueId {
        let values: Vec<f64> = self.nodes[a.0].values.iter().map(|&x| x.max(0.0)).collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(Op::Relu { a }, shape, values, false)
    }

    // ── Linear algebra ──────────────────────────────────────────────

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::shape(format!("matmul wants rank-2, got {sa:?} x {sb:?}")));
        }
        let (m, k, k2, n) = (sa[0], sa[1], sb[0], sb[1]);
        if k != k2 {
            return Err(Error::shape(format!("matmul inner extents {k} vs {k2}")));
        }
        let values = matmul_raw(&self.nodes[a.0].values, &self.nodes[b.0].values, m, k, n);
        Ok(self.push(Op::Matmul { a, b }, vec![m, n], values, false))
    }

    /// `[N×K] + [K]`: the bias row is added to every matrix row.
    pub fn add_bias(&mut self, m: ValueId, bias: ValueId) -> Result<ValueId> {
        let (sm, sb) = (self.shape(m), self.shape(bias));
        if sm.len() != 2 || sb.len() != 1 || sb[0] != sm[1] {
            return Err(Error::shape(format!("add_bias: {sm:?} + {sb:?}")));
        }
        let (rows, cols) = (sm[0], sm[1]);
        let vm = &self.nodes[m.0].values;
        let vb = &self.nodes[bias.0].values;
        let values: Vec<f64> = (0..rows * cols).map(|i| vm[i] + vb[i % cols]).collect();
        Ok(self.push(Op::AddBias { m, bias }, vec![rows, cols], values, false))
    }

    // ── Normalization ───────────────────────────────────────────────

    /// Divide each row by its infinity norm (max absolute element).
    /// Accepts rank-1 (one row) or rank-2 input. The argmax is treated
    /// as locally constant in backward; ties break to the lowest index.
    pub fn inf_norm_normalize(&mut self, a: ValueId) -> Result<ValueId> {
        let shape = self.shape(a).to_vec();
        let (rows, cols) = rows_cols(&shape)
            .ok_or_else(|| Error::shape(format!("inf_norm_normalize wants rank 1 or 2, got {shape:?}")))?;
        let va = &self.nodes[a.0].values;
        let mut values = vec![0.0; va.len()];
        for r in 0..rows {
            let row = &va[r * cols..(r + 1) * cols];
            let (_, norm) = argmax_abs(row);
            if norm == 0.0 {
                return Err(Error::degenerate(format!(
                    "inf_norm_normalize: row {r} is all zero"
                )));
            }
            for c in 0..cols {
                values[r * cols + c] = row[c] / norm;
            }
        }
        Ok(self.push(Op::InfNormRows { a }, shape, values, false))
    }

    // ── Reductions ──────────────────────────────────────────────────

    pub fn reduce(&mut self, kind: ReduceKind, a: ValueId, axis: Option<usize>) -> Result<ValueId> {
        let shape = self.shape(a).to_vec();
        if let Some(ax) = axis {
            if ax >= shape.len() {
                return Err(Error::shape(format!("axis {ax} out of rank {}", shape.len())));
            }
        }
        let (out_shape, outer, mid, inner) = reduce_geometry(&shape, axis);
        let va = &self.nodes[a.0].values;
        let mut values = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let slot = o * inner + i;
                match kind {
                    ReduceKind::Sum | ReduceKind::Mean => {
                        let mut s = 0.0;
                        for m in 0..mid {
                            s += va[(o * mid + m) * inner + i];
                        }
                        values[slot] = if kind == ReduceKind::Mean { s / mid as f64 } else { s };
                    }
                    ReduceKind::MaxAbs => {
                        let mut best = 0.0f64;
                        for m in 0..mid {
                            let x = va[(o * mid + m) * inner + i].abs();
                            if x > best {
                                best = x;
                            }
                        }
                        values[slot] = best;
                    }
                }
            }
        }
        Ok(self.push(Op::Reduce { kind, a, axis }, out_shape, values, false))
    }

    pub fn sum(&mut self, a: ValueId, axis: Option<usize>) -> Result<ValueId> {
        self.reduce(ReduceKind::Sum, a, axis)
    }

    pub fn mean(&mut self, a: ValueId, axis: Option<usize>) -> Result<ValueId> {
        self.reduce(ReduceKind::Mean, a, axis)
    }

    pub fn max_abs(&mut self, a: ValueId, axis: Option<usize>) -> Result<ValueId> {
        self.reduce(ReduceKind::MaxAbs, a, axis)
    }

    // ── Graph surgery ───────────────────────────────────────────────

    /// Identical values, but backward never crosses this node.
    pub fn detach(&mut self, a: ValueId) -> ValueId {
        let values = self.nodes[a.0].values.clone();
        let shape = self.nodes[a.0].shape.clone();
        self.push(Op::Detach { a }, shape, values, false)
    }

    /// Gather rows of a rank-2 node. Repeated indices are allowed; their
    /// gradients accumulate into the same source row.
    pub fn select_rows(&mut self, a: ValueId, indices: &[usize]) -> Result<ValueId> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 {
            return Err(Error::shape(format!("select_rows wants rank-2, got {shape:?}")));
        }
        let (rows, cols) = (shape[0], shape[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::contract(format!("select_rows: index {bad} >= {rows}")));
        }
        let va = &self.nodes[a.0].values;
        let mut values = Vec::with_capacity(indices.len() * cols);
        for &r in indices {
            values.extend_from_slice(&va[r * cols..(r + 1) * cols]);
        }
        let out_shape = vec![indices.len(), cols];
        Ok(self.push(Op::SelectRows { a, indices: indices.to_vec() }, out_shape, values, false))
    }

    // ── Classifier head ─────────────────────────────────────────────

    /// Mean over rows of `-log softmax(logits_i)[label_i]`, computed with
    /// max subtraction.
    pub fn softmax_cross_entropy(&mut self, logits: ValueId, labels: &[usize]) -> Result<ValueId> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 {
            return Err(Error::shape(format!("softmax_cross_entropy wants rank-2, got {shape:?}")));
        }
        let (n, k) = (shape[0], shape[1]);
        if labels.len() != n {
            return Err(Error::contract(format!("{n} rows but {} labels", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::contract(format!("label {bad} out of range [0, {k})")));
        }
        let v = &self.nodes[logits.0].values;
        let mut total = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = &v[r * k..(r + 1) * k];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
            total -= row[label] - lse;
        }
        let loss = total / n as f64;
        Ok(self.push(
            Op::SoftmaxCrossEntropy { logits, labels: labels.to_vec() },
            vec![1],
            vec![loss],
            false,
        ))
    }

    // ── Convolution (image encoders) ────────────────────────────────

    /// 2-D convolution over `[N,C,H,W]` input with `[OC,C,KH,KW]` weights
    /// and `[OC]` bias, zero padding `pad` and stride `stride`.
    pub fn conv2d(
        &mut self,
        input: ValueId,
        weight: ValueId,
        bias: ValueId,
        stride: usize,
        pad: usize,
    ) -> Result<ValueId> {
        let si = self.shape(input).to_vec();
        let sw = self.shape(weight).to_vec();
        let sb = self.shape(bias).to_vec();
        if si.len() != 4 || sw.len() != 4 || sb.len() != 1 {
            return Err(Error::shape(format!("conv2d: input {si:?}, weight {sw:?}, bias {sb:?}")));
        }
        if stride == 0 {
            return Err(Error::config("conv2d: stride must be positive"));
        }
        let (n, c, h, w) = (si[0], si[1], si[2], si[3]);
        let (oc, wc, kh, kw) = (sw[0], sw[1], sw[2], sw[3]);
        if wc != c || sb[0] != oc {
            return Err(Error::shape(format!("conv2d: channel mismatch {si:?} {sw:?} {sb:?}")));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::shape("conv2d: kernel larger than padded input".to_string()));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;

        let vi = &self.nodes[input.0].values;
        let vw = &self.nodes[weight.0].values;
        let vb = &self.nodes[bias.0].values;
        let mut out = vec![0.0; n * oc * oh * ow];
        for b in 0..n {
            for o in 0..oc {
                for y in 0..oh {
                    for x in 0..ow {
                        let mut acc = vb[o];
                        for ci in 0..c {
                            for ky in 0..kh {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                if iy < 0 || iy as usize >= h {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = (x * stride + kx) as isize - pad as isize;
                                    if ix < 0 || ix as usize >= w {
                                        continue;
                                    }
                                    acc += vi[((b * c + ci) * h + iy as usize) * w + ix as usize]
                                        * vw[((o * c + ci) * kh + ky) * kw + kx];
                                }
                            }
                        }
                        out[((b * oc + o) * oh + y) * ow + x] = acc;
                    }
                }
            }
        }
        Ok(self.push(
            Op::Conv2d { input, weight, bias, stride, pad },
            vec![n, oc, oh, ow],
            out,
            false,
        ))
    }

    /// `[N,C,H,W] -> [N,C]` spatial mean.
    pub fn mean_pool_spatial(&mut self, a: ValueId) -> Result<ValueId> {
        let s = self.shape(a).to_vec();
        if s.len() != 4 {
            return Err(Error::shape(format!("mean_pool_spatial wants rank-4, got {s:?}")));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let hw = (h * w) as f64;
        let va = &self.nodes[a.0].values;
        let mut out = vec![0.0; n * c];
        for b in 0..n {
            for ci in 0..c {
                let base = (b * c + ci) * h * w;
                out[b * c + ci] = va[base..base + h * w].iter().sum::<f64>() / hw;
            }
        }
        Ok(self.push(Op::MeanPoolSpatial { a }, vec![n, c], out, false))
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Visits every recorded operation
    /// at most once, in reverse execution order; gradient contributions
    /// accumulate additively across multiple uses of a value.
    pub fn backward(&mut self, loss: ValueId) -> Result<()> {
        if self.numel(loss) != 1 {
            return Err(Error::contract(format!(
                "backward wants a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        for node in self.nodes.iter_mut().take(loss.0 + 1) {
            node.grad = Some(vec![0.0; node.values.len()]);
        }
        self.nodes[loss.0].grad.as_mut().unwrap()[0] = 1.0;

        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            let g = node.grad.as_ref().unwrap().clone();
            match &node.op {
                Op::Leaf => {}
                Op::Detach { a } => {
                    debug_assert_eq!(before[a.0].values.len(), node.values.len());
                }

                Op::Add { a, b } => {
                    accumulate(before, *a, &g, Spread::Direct);
                    accumulate(before, *b, &g, Spread::Direct);
                }
                Op::Sub { a, b } => {
                    accumulate(before, *a, &g, Spread::Direct);
                    accumulate(before, *b, &g, Spread::Negate);
                }
                Op::Mul { a, b } => {
                    let va: Vec<f64> = before[a.0].values.clone();
                    let vb: Vec<f64> = before[b.0].values.clone();
                    let da: Vec<f64> =
                        (0..g.len()).map(|k| g[k] * vb[k % vb.len()]).collect();
                    let db: Vec<f64> =
                        (0..g.len()).map(|k| g[k] * va[k % va.len()]).collect();
                    accumulate(before, *a, &da, Spread::Direct);
                    accumulate(before, *b, &db, Spread::Direct);
                }
                Op::Square { a } => {
                    let da: Vec<f64> = before[a.0]
                        .values
                        .iter()
                        .zip(&g)
                        .map(|(&x, &gi)| gi * 2.0 * x)
                        .collect();
                    add_into(&mut before[a.0].grad, &da);
                }
                Op::Log { a } => {
                    let da: Vec<f64> = before[a.0]
                        .values
                        .iter()
                        .zip(&g)
                        .map(|(&x, &gi)| gi / x)
                        .collect();
                    add_into(&mut before[a.0].grad, &da);
                }
                Op::Relu { a } => {
                    let da: Vec<f64> = before[a.0]
                        .values
                        .iter()
                        .zip(&g)
                        .map(|(&x, &gi)| if x > 0.0 { gi } else { 0.0 })
                        .collect();
                    add_into(&mut before[a.0].grad, &da);
                }
                Op::Matmul { a, b } => {
                    let (m, k) = (before[a.0].shape[0], before[a.0].shape[1]);
                    let n = before[b.0].shape[1];
                    // dA = G · Bᵀ
                    let bt = transpose(&before[b.0].values, k, n);
                    let da = matmul_raw(&g, &bt, m, n, k);
                    // dB = Aᵀ · G
                    let at = transpose(&before[a.0].values, m, k);
                    let db = matmul_raw(&at, &g, k, m, n);
                    add_into(&mut before[a.0].grad, &da);
                    add_into(&mut before[b.0].grad, &db);
                }
                Op::AddBias { m, bias } => {
                    let cols = before[bias.0].values.len();
                    add_into(&mut before[m.0].grad, &g);
                    let mut db = vec![0.0; cols];
                    for (k, &gi) in g.iter().enumerate() {
                        db[k % cols] += gi;
                    }
                    add_into(&mut before[bias.0].grad, &db);
                }
                Op::InfNormRows { a } => {
                    let (rows, cols) = rows_cols(&before[a.0].shape).unwrap();
                    let va = &before[a.0].values;
                    let mut da = vec![0.0; va.len()];
                    for r in 0..rows {
                        let row = &va[r * cols..(r + 1) * cols];
                        let grow = &g[r * cols..(r + 1) * cols];
                        let (k_star, norm) = argmax_abs(row);
                        let sign = if row[k_star] >= 0.0 { 1.0 } else { -1.0 };
                        let dot: f64 = grow.iter().zip(row).map(|(&gi, &x)| gi * x).sum();
                        for c in 0..cols {
                            da[r * cols + c] = grow[c] / norm;
                        }
                        da[r * cols + k_star] -= sign * dot / (norm * norm);
                    }
                    add_into(&mut before[a.0].grad, &da);
                }
                Op::Reduce { kind, a, axis } => {
                    let shape = before[a.0].shape.clone();
                    let (_, outer, mid, inner) = reduce_geometry(&shape, *axis);
                    let mut da = vec![0.0; before[a.0].values.len()];
                    match kind {
                        ReduceKind::Sum => {
                            for o in 0..outer {
                                for m in 0..mid {
                                    for i in 0..inner {
                                        da[(o * mid + m) * inner + i] = g[o * inner + i];
                                    }
                                }
                            }
                        }
                        ReduceKind::Mean => {
                            let inv = 1.0 / mid as f64;
                            for o in 0..outer {
                                for m in 0..mid {
                                    for i in 0..inner {
                                        da[(o * mid + m) * inner + i] = g[o * inner + i] * inv;
                                    }
                                }
                            }
                        }
                        ReduceKind::MaxAbs => {
                            let va = &before[a.0].values;
                            for o in 0..outer {
                                for i in 0..inner {
                                    let mut best = 0.0f64;
                                    let mut best_m = 0;
                                    for m in 0..mid {
                                        let x = va[(o * mid + m) * inner + i].abs();
                                        if x > best {
                                            best = x;
                                            best_m = m;
                                        }
                                    }
                                    let idx = (o * mid + best_m) * inner + i;
                                    let sign = if va[idx] > 0.0 {
                                        1.0
                                    } else if va[idx] < 0.0 {
                                        -1.0
                                    } else {
                                        0.0
                                    };
                                    da[idx] = g[o * inner + i] * sign;
                                }
                            }
                        }
                    }
                    add_into(&mut before[a.0].grad, &da);
                }
                Op::SelectRows { a, indices } => {
                    let cols = before[a.0].shape[1];
                    let grad = before[a.0].grad.as_mut().unwrap();
                    for (r, &src) in indices.iter().enumerate() {
                        for c in 0..cols {
                            grad[src * cols + c] += g[r * cols + c];
                        }
                    }
                }
                Op::SoftmaxCrossEntropy { logits, labels } => {
                    let (n, k) = (before[logits.0].shape[0], before[logits.0].shape[1]);
                    let v = &before[logits.0].values;
                    let mut dl = vec![0.0; n * k];
                    for (r, &label) in labels.iter().enumerate() {
                        let row = &v[r * k..(r + 1) * k];
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
                        let z: f64 = exps.iter().sum();
                        for c in 0..k {
                            let p = exps[c] / z;
                            let y = if c == label { 1.0 } else { 0.0 };
                            dl[r * k + c] = g[0] * (p - y) / n as f64;
                        }
                    }
                    add_into(&mut before[logits.0].grad, &dl);
                }
                Op::Conv2d { input, weight, bias, stride, pad } => {
                    let (stride, pad) = (*stride, *pad);
                    let si = before[input.0].shape.clone();
                    let sw = before[weight.0].shape.clone();
                    let (n, c, h, w) = (si[0], si[1], si[2], si[3]);
                    let (oc, _, kh, kw) = (sw[0], sw[1], sw[2], sw[3]);
                    let so = &node.shape;
                    let (oh, ow) = (so[2], so[3]);
                    let vi = before[input.0].values.clone();
                    let vw = before[weight.0].values.clone();
                    let mut di = vec![0.0; vi.len()];
                    let mut dw = vec![0.0; vw.len()];
                    let mut db = vec![0.0; oc];
                    for b in 0..n {
                        for o in 0..oc {
                            for y in 0..oh {
                                for x in 0..ow {
                                    let go = g[((b * oc + o) * oh + y) * ow + x];
                                    db[o] += go;
                                    for ci in 0..c {
                                        for ky in 0..kh {
                                            let iy = (y * stride + ky) as isize - pad as isize;
                                            if iy < 0 || iy as usize >= h {
                                                continue;
                                            }
                                            for kx in 0..kw {
                                                let ix =
                                                    (x * stride + kx) as isize - pad as isize;
                                                if ix < 0 || ix as usize >= w {
                                                    continue;
                                                }
                                                let ii = ((b * c + ci) * h + iy as usize) * w
                                                    + ix as usize;
                                                let wi = ((o * c + ci) * kh + ky) * kw + kx;
                                                dw[wi] += go * vi[ii];
                                                di[ii] += go * vw[wi];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    add_into(&mut before[input.0].grad, &di);
                    add_into(&mut before[weight.0].grad, &dw);
                    add_into(&mut before[bias.0].grad, &db);
                }
                Op::MeanPoolSpatial { a } => {
                    let s = &before[a.0].shape;
                    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
                    let inv = 1.0 / (h * w) as f64;
                    let mut da = vec![0.0; n * c * h * w];
                    for b in 0..n {
                        for ci in 0..c {
                            let gv = g[b * c + ci] * inv;
                            let base = (b * c + ci) * h * w;
                            for k in 0..h * w {
                                da[base + k] = gv;
                            }
                        }
                    }
                    add_into(&mut before[a.0].grad, &da);
                }
            }
        }
        // Gradients belong to trainable leaves and interior bookkeeping;
        // frozen leaves end the pass with no gradient at all.
        for node in self.nodes.iter_mut().take(loss.0 + 1) {
            if matches!(node.op, Op::Leaf) && !node.trainable {
                node.grad = None;
            }
        }
        Ok(())
    }
}

enum Spread {
    Direct,
    Negate,
}

/// Accumulate an output-shaped gradient into an input that may be a scalar
/// broadcast over the output.
fn accumulate(nodes: &mut [Node], target: ValueId, g: &[f64], spread: Spread) {
    let sign = match spread {
        Spread::Direct => 1.0,
        Spread::Negate => -1.0,
    };
    let grad = nodes[target.0].grad.as_mut().unwrap();
    if grad.len() == g.len() {
        for (dst, &gi) in grad.iter_mut().zip(g) {
            *dst += sign * gi;
        }
    } else {
        debug_assert_eq!(grad.len(), 1);
        grad[0] += sign * g.iter().sum::<f64>();
    }
}

fn add_into(grad: &mut Option<Vec<f64>>, delta: &[f64]) {
    let grad = grad.as_mut().unwrap();
    debug_assert_eq!(grad.len(), delta.len());
    for (dst, &d) in grad.iter_mut().zip(delta) {
        *dst += d;
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// First max-|x| index (lowest index wins ties) and the max absolute value.
fn argmax_abs(row: &[f64]) -> (usize, f64) {
    let mut best = 0;
    let mut best_abs = row[0].abs();
    for (i, &x) in row.iter().enumerate().skip(1) {
        if x.abs() > best_abs {
            best = i;
            best_abs = x.abs();
        }
    }
    (best, best_abs)
}

fn rows_cols(shape: &[usize]) -> Option<(usize, usize)> {
    match shape {
        [n] => Some((1, *n)),
        [r, c] => Some((*r, *c)),
        _ => None,
    }
}

/// Output shape and (outer, mid, inner) extents for a reduction.
/// `axis: None` reduces everything to a scalar.
fn reduce_geometry(shape: &[usize], axis: Option<usize>) -> (Vec<usize>, usize, usize, usize) {
    match axis {
        None => {
            let numel: usize = shape.iter().product();
            (vec![1], 1, numel, 1)
        }
        Some(ax) => {
            let outer: usize = shape[..ax].iter().product();
            let mid = shape[ax];
            let inner: usize = shape[ax + 1..].iter().product();
            let mut out: Vec<usize> = shape.to_vec();
            out.remove(ax);
            if out.is_empty() {
                out.push(1);
            }
            (out, outer, mid, inner)
        }
    }
}
