use super::{Result, Tensor, TensorError};
use crate::scalar::{gemm, Scalar};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<T>,
        inv_std: Vec<T>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    Sum(Var),
    CrossEntropy { logits: Var, label: usize, probs: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// Execution-ordered record of primitive operations.
///
/// Nodes only ever reference earlier nodes, so the insertion order is a
/// topological order and backward is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf whose gradient is populated by [`Graph::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass, if `v` requires one.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, rg)
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.value(v).dims2(op)
    }

    /// `a·b`, shapes `p×q` and `q×r`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (p, q) = self.dims2(a, "matmul")?;
        let (q2, r) = self.dims2(b, "matmul")?;
        if q != q2 {
            return Err(self.shape_err("matmul", a, b));
        }
        let mut out = vec![T::zero(); p * r];
        gemm(p, q, r, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        let value = Tensor::new(vec![p, r], out)?;
        Ok(self.derived(value, Op::MatMul { a, b, trans_b: false }, &[a, b]))
    }

    /// `a·bᵀ`, shapes `p×q` and `r×q`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (p, q) = self.dims2(a, "matmul_t")?;
        let (r, q2) = self.dims2(b, "matmul_t")?;
        if q != q2 {
            return Err(self.shape_err("matmul_t", a, b));
        }
        let mut out = vec![T::zero(); p * r];
        gemm(p, q, r, self.value(a).data(), false, self.value(b).data(), true, &mut out, false);
        let value = Tensor::new(vec![p, r], out)?;
        Ok(self.derived(value, Op::MatMul { a, b, trans_b: true }, &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (p, q) = self.dims2(a, "transpose")?;
        let src = self.value(a).data();
        let mut out = vec![T::zero(); p * q];
        for i in 0..p {
            for j in 0..q {
                out[j * p + i] = src[i * q + j];
            }
        }
        let value = Tensor::new(vec![q, p], out)?;
        Ok(self.derived(value, Op::Transpose(a), &[a]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.shape_err("add", a, b));
        }
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.derived(value, Op::Add(a, b), &[a, b]))
    }

    /// Adds a width-`d` vector to every row of a `p×d` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (p, d) = self.dims2(x, "add_row")?;
        if self.value(row).numel() != d || self.value(row).rank() > 2 {
            return Err(self.shape_err("add_row", x, row));
        }
        let r = self.value(row).data();
        let mut data = self.value(x).data().to_vec();
        for chunk in data.chunks_exact_mut(d) {
            for (o, &b) in chunk.iter_mut().zip(r) {
                *o += b;
            }
        }
        let value = Tensor::new(vec![p, d], data)?;
        Ok(self.derived(value, Op::AddRow(x, row), &[x, row]))
    }

    /// Elementwise product of equal shapes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.shape_err("mul", a, b));
        }
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.derived(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a).map(|x| x * c);
        self.derived(value, Op::Scale(a, c), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.derived(value, Op::Relu(a), &[a])
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (p, q) = self.dims2(a, "softmax_rows")?;
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_exact_mut(q) {
            softmax_in_place(row).ok_or(TensorError::NonFinite { op: "softmax_rows" })?;
        }
        let value = Tensor::new(vec![p, q], data)?;
        Ok(self.derived(value, Op::SoftmaxRows(a), &[a]))
    }

    /// Per-row `(x − mean)/sqrt(var + eps)·gain + bias` with population
    /// variance over the row's `d` features.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let (p, d) = self.dims2(x, "layer_norm")?;
        if self.value(gain).numel() != d {
            return Err(self.shape_err("layer_norm", x, gain));
        }
        if self.value(bias).numel() != d {
            return Err(self.shape_err("layer_norm", x, bias));
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let src = self.value(x).data();
        let dn = T::lit(d as f64);
        let mut normalized = vec![T::zero(); p * d];
        let mut inv_std = vec![T::zero(); p];
        let mut out = vec![T::zero(); p * d];
        for i in 0..p {
            let row = &src[i * d..(i + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let inv = (var + eps).sqrt().recip();
            inv_std[i] = inv;
            for j in 0..d {
                let xh = (row[j] - mean) * inv;
                normalized[i * d + j] = xh;
                out[i * d + j] = xh * g[j] + b[j];
            }
        }
        let value = Tensor::new(vec![p, d], out)?;
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            normalized,
            inv_std,
        };
        Ok(self.derived(value, op, &[x, gain, bias]))
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(TensorError::Contract {
            op: "concat_cols",
            reason: "no inputs".into(),
        })?;
        let (p, _) = self.dims2(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &v in parts {
            let (r, c) = self.dims2(v, "concat_cols")?;
            if r != p {
                return Err(self.shape_err("concat_cols", first, v));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(p * total);
        for i in 0..p {
            for (&v, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(v).data()[i * w..(i + 1) * w]);
            }
        }
        let value = Tensor::new(vec![p, total], out)?;
        Ok(self.derived(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Stacks matrices with equal widths top to bottom.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(TensorError::Contract {
            op: "concat_rows",
            reason: "no inputs".into(),
        })?;
        let (_, q) = self.dims2(first, "concat_rows")?;
        let mut rows = 0;
        for &v in parts {
            let (r, c) = self.dims2(v, "concat_rows")?;
            if c != q {
                return Err(self.shape_err("concat_rows", first, v));
            }
            rows += r;
        }
        let mut out = Vec::with_capacity(rows * q);
        for &v in parts {
            out.extend_from_slice(self.value(v).data());
        }
        let value = Tensor::new(vec![rows, q], out)?;
        Ok(self.derived(value, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (p, q) = self.dims2(x, "slice_cols")?;
        check_range("slice_cols", start, len, q)?;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(p * len);
        for i in 0..p {
            out.extend_from_slice(&src[i * q + start..i * q + start + len]);
        }
        let value = Tensor::new(vec![p, len], out)?;
        Ok(self.derived(value, Op::SliceCols { x, start }, &[x]))
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (p, q) = self.dims2(x, "slice_rows")?;
        check_range("slice_rows", start, len, p)?;
        let out = self.value(x).data()[start * q..(start + len) * q].to_vec();
        let value = Tensor::new(vec![len, q], out)?;
        Ok(self.derived(value, Op::SliceRows { x, start }, &[x]))
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<T>();
        self.derived(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// `−log softmax(logits)[label]` in log-sum-exp form.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let x = self.value(logits).data();
        if label >= x.len() {
            return Err(TensorError::Contract {
                op: "cross_entropy",
                reason: format!("label {label} out of range for {} classes", x.len()),
            });
        }
        let mut probs = x.to_vec();
        let lse = softmax_in_place(&mut probs).ok_or(TensorError::NonFinite { op: "cross_entropy" })?;
        let loss = lse - x[label];
        Ok(self.derived(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                label,
                probs,
            },
            &[logits],
        ))
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> TensorError {
        TensorError::Shape {
            op,
            lhs: self.value(a).shape().to_vec(),
            rhs: self.value(b).shape().to_vec(),
        }
    }

    /// Reverse sweep from a one-element `loss`.
    ///
    /// Afterwards every node with `requires_grad` reachable from the loss
    /// holds `∂loss/∂node`; unreachable ones hold zeros. Gradients from a
    /// previous call are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let loss_val = self.value(loss);
        if loss_val.numel() != 1 {
            return Err(TensorError::NonScalarLoss(loss_val.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            node.grad = if node.requires_grad {
                let data = g.unwrap_or_else(|| vec![T::zero(); node.value.numel()]);
                Some(Tensor {
                    shape: node.value.shape().to_vec(),
                    data,
                })
            } else {
                None
            };
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let nodes = &self.nodes;
        macro_rules! with_buf {
            ($v:expr, |$b:ident| $body:expr) => {
                if let Some($b) = grad_slot(nodes, grads, $v) {
                    $body
                }
            };
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let av = &nodes[a.0].value;
                let bv = &nodes[b.0].value;
                let (p, q) = (av.shape()[0], av.shape()[1]);
                let r = node.value.shape()[1];
                if !trans_b {
                    // C = A·B: dA = dC·Bᵀ, dB = Aᵀ·dC
                    with_buf!(*a, |ga| gemm(p, r, q, g, false, bv.data(), true, ga, true));
                    with_buf!(*b, |gb| gemm(q, p, r, av.data(), true, g, false, gb, true));
                } else {
                    // C = A·Bᵀ: dA = dC·B, dB = dCᵀ·A
                    with_buf!(*a, |ga| gemm(p, r, q, g, false, bv.data(), false, ga, true));
                    with_buf!(*b, |gb| gemm(r, p, q, g, true, av.data(), false, gb, true));
                }
            }
            Op::Transpose(a) => {
                let (q, p) = (node.value.shape()[0], node.value.shape()[1]);
                with_buf!(*a, |ga| {
                    for i in 0..p {
                        for j in 0..q {
                            ga[i * q + j] += g[j * p + i];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                with_buf!(*a, |ga| add_into(ga, g));
                with_buf!(*b, |gb| add_into(gb, g));
            }
            Op::AddRow(x, row) => {
                with_buf!(*x, |gx| add_into(gx, g));
                let d = node.value.shape()[1];
                with_buf!(*row, |gr| {
                    for chunk in g.chunks_exact(d) {
                        add_into(gr, chunk);
                    }
                });
            }
            Op::Mul(a, b) => {
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                with_buf!(*a, |ga| {
                    for ((o, &gi), &bi) in ga.iter_mut().zip(g).zip(bv) {
                        *o += gi * bi;
                    }
                });
                with_buf!(*b, |gb| {
                    for ((o, &gi), &ai) in gb.iter_mut().zip(g).zip(av) {
                        *o += gi * ai;
                    }
                });
            }
            Op::Scale(a, c) => {
                with_buf!(*a, |ga| {
                    for (o, &gi) in ga.iter_mut().zip(g) {
                        *o += gi * *c;
                    }
                });
            }
            Op::Relu(a) => {
                let x = nodes[a.0].value.data();
                with_buf!(*a, |ga| {
                    for ((o, &gi), &xi) in ga.iter_mut().zip(g).zip(x) {
                        if xi > T::zero() {
                            *o += gi;
                        }
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let q = node.value.shape()[1];
                let y = node.value.data();
                with_buf!(*a, |ga| {
                    for ((gr, yr), dr) in ga.chunks_exact_mut(q).zip(y.chunks_exact(q)).zip(g.chunks_exact(q)) {
                        let dot: T = yr.iter().zip(dr).map(|(&yi, &di)| yi * di).sum();
                        for ((o, &yi), &di) in gr.iter_mut().zip(yr).zip(dr) {
                            *o += yi * (di - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let d = node.value.shape()[1];
                let gv = nodes[gain.0].value.data();
                with_buf!(*gain, |gg| {
                    for (dr, xr) in g.chunks_exact(d).zip(normalized.chunks_exact(d)) {
                        for j in 0..d {
                            gg[j] += dr[j] * xr[j];
                        }
                    }
                });
                with_buf!(*bias, |gb| {
                    for dr in g.chunks_exact(d) {
                        add_into(gb, dr);
                    }
                });
                let dn = T::lit(d as f64);
                with_buf!(*x, |gx| {
                    let mut dxh = vec![T::zero(); d];
                    for (i, (dr, xr)) in g.chunks_exact(d).zip(normalized.chunks_exact(d)).enumerate() {
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..d {
                            dxh[j] = dr[j] * gv[j];
                            s1 += dxh[j];
                            s2 += dxh[j] * xr[j];
                        }
                        let k = inv_std[i] / dn;
                        for j in 0..d {
                            gx[i * d + j] += k * (dn * dxh[j] - s1 - xr[j] * s2);
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = node.value.shape()[1];
                let p = node.value.shape()[0];
                let mut offset = 0;
                for &v in parts {
                    let w = nodes[v.0].value.shape()[1];
                    with_buf!(v, |gv| {
                        for i in 0..p {
                            add_into(&mut gv[i * w..(i + 1) * w], &g[i * total + offset..i * total + offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &v in parts {
                    let n = nodes[v.0].value.numel();
                    with_buf!(v, |gv| add_into(gv, &g[offset..offset + n]));
                    offset += n;
                }
            }
            Op::SliceCols { x, start } => {
                let q = nodes[x.0].value.shape()[1];
                let (p, len) = (node.value.shape()[0], node.value.shape()[1]);
                with_buf!(*x, |gx| {
                    for i in 0..p {
                        add_into(&mut gx[i * q + start..i * q + start + len], &g[i * len..(i + 1) * len]);
                    }
                });
            }
            Op::SliceRows { x, start } => {
                let q = node.value.shape()[1];
                with_buf!(*x, |gx| add_into(&mut gx[start * q..start * q + g.len()], g));
            }
            Op::Sum(a) => {
                with_buf!(*a, |ga| ga.iter_mut().for_each(|o| *o += g[0]));
            }
            Op::CrossEntropy { logits, label, probs } => {
                with_buf!(*logits, |gl| {
                    for (j, (o, &pj)) in gl.iter_mut().zip(probs).enumerate() {
                        let t = if j == *label { T::one() } else { T::zero() };
                        *o += g[0] * (pj - t);
                    }
                });
            }
        }
    }
}

/// Zero-initialised gradient buffer for `v`, or `None` when `v` needs none.
fn grad_slot<'g, T: Scalar>(nodes: &[Node<T>], grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
    let n = &nodes[v.0];
    if !n.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n.value.numel()]))
}

fn zip_map<T: Scalar>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (o, &s) in dst.iter_mut().zip(src) {
        *o += s;
    }
}

fn check_range(op: &'static str, start: usize, len: usize, extent: usize) -> Result<()> {
    if len == 0 || start + len > extent {
        return Err(TensorError::Range {
            op,
            start,
            end: start + len,
            extent,
        });
    }
    Ok(())
}

/// Normalises `row` into a softmax in place and returns its log-sum-exp.
/// `None` when the row holds a non-finite value.
pub fn softmax_in_place<T: Scalar>(row: &mut [T]) -> Option<T> {
    let mut max = T::neg_infinity();
    for &v in row.iter() {
        if !v.is_finite() {
            return None;
        }
        max = max.max(v);
    }
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    let inv = total.recip();
    for v in row.iter_mut() {
        *v *= inv;
    }
    Some(max + total.ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let mut g = Graph::<f64>::new();
        let i = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let m = g.constant(t(&[2, 2], &[3.0, -1.0, 0.5, 9.0]));
        let out = g.matmul(i, m).unwrap();
        assert_eq!(g.value(out).data(), &[3.0, -1.0, 0.5, 9.0]);
    }

    #[test]
    fn row_times_column() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(t(&[1, 2], &[1.0, 2.0]));
        let b = g.constant(t(&[2, 1], &[3.0, 4.0]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            TensorError::Shape {
                op: "matmul",
                lhs: vec![2, 3],
                rhs: vec![2, 3]
            }
        );
        assert!(err.to_string().contains("[2, 3] and [2, 3]"));
    }

    #[test]
    fn softmax_symmetric_and_stable() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::from_f64(vec![2, 2], &[0.0, 0.0, 1000.0, 1000.0]).unwrap());
        let s = g.softmax_rows(a).unwrap();
        assert_eq!(g.value(s).data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::from_f64(vec![1, 2], &[f64::NAN, 0.0]).unwrap());
        assert_eq!(g.softmax_rows(a).unwrap_err(), TensorError::NonFinite { op: "softmax_rows" });
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 4], &[3.0; 4]));
        let gain = g.constant(Tensor::full(vec![4], 1.0));
        let bias = g.constant(Tensor::zeros(vec![4]));
        let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_norm_unit_variance_row() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 2], &[1.0, -1.0]));
        let gain = g.constant(Tensor::full(vec![2], 1.0));
        let bias = g.constant(Tensor::zeros(vec![2]));
        let y = g.layer_norm(x, gain, bias, 0.0).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, -1.0]);
    }

    #[test]
    fn relu_and_add_identity() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[3], &[-1.0, 0.0, 2.0]));
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
        let z = g.constant(Tensor::zeros(vec![3]));
        let s = g.add(x, z).unwrap();
        assert_eq!(g.value(s), g.value(x));
    }

    #[test]
    fn slice_then_concat_round_trip() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let top = g.slice_rows(x, 0, 1).unwrap();
        let rest = g.slice_rows(x, 1, 2).unwrap();
        let back = g.concat_rows(&[top, rest]).unwrap();
        assert_eq!(g.value(back), g.value(x));
        let left = g.slice_cols(x, 0, 1).unwrap();
        let right = g.slice_cols(x, 1, 1).unwrap();
        let back = g.concat_cols(&[left, right]).unwrap();
        assert_eq!(g.value(back), g.value(x));
    }

    #[test]
    fn slice_out_of_range() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(vec![3, 2]));
        assert!(matches!(g.slice_rows(x, 2, 2), Err(TensorError::Range { .. })));
        assert!(matches!(g.slice_cols(x, 0, 3), Err(TensorError::Range { .. })));
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::full(vec![2, 3], 0.7));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::zeros(vec![2]));
        assert_eq!(g.backward(x).unwrap_err(), TensorError::NonScalarLoss(vec![2]));
    }

    #[test]
    fn constants_get_no_grad_and_unused_params_get_zeros() {
        let mut g = Graph::<f64>::new();
        let c = g.constant(t(&[2], &[1.0, 2.0]));
        let unused = g.param(t(&[2], &[5.0, 5.0]));
        let p = g.param(t(&[2], &[3.0, 4.0]));
        let prod = g.mul(c, p).unwrap();
        let s = g.sum(prod);
        g.backward(s).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(unused).unwrap().data(), &[0.0, 0.0]);
        assert_eq!(g.grad(p).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn cross_entropy_uniform_and_stable() {
        let mut g = Graph::<f64>::new();
        let l = g.param(t(&[1, 3], &[0.25, 0.25, 0.25]));
        let ce = g.cross_entropy(l, 1).unwrap();
        assert!((g.value(ce).data()[0] - 3f64.ln()).abs() < 1e-12);
        let big = g.constant(t(&[3], &[1000.0, 0.0, 0.0]));
        let ce = g.cross_entropy(big, 0).unwrap();
        assert!(g.value(ce).data()[0].abs() < 1e-12);
        assert!(g.cross_entropy(big, 3).is_err());
    }
}
