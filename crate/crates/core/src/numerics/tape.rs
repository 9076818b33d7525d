//! Reverse-mode differentiation over an eagerly evaluated operation tape.
//!
//! Every primitive computes its value at record time and appends a node, so
//! the node list is topologically ordered by construction. `backward` walks
//! it once in reverse.

use super::tensor::{mm, mm_nt, mm_tn, mm_tn_into, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug)]
enum Op<T> {
    Input,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Concat(Vec<Var>, Axis),
    Slice {
        input: Var,
        axis: Axis,
        start: usize,
    },
    Transpose(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var, Axis),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        ignore: Option<usize>,
        probs: Tensor<T>,
        count: usize,
    },
    MeanRows(Var),
    NormalizeRows {
        input: Var,
        norms: Vec<T>,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients of a scalar loss with respect to each bound parameter slot.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    slots: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, param: usize) -> Option<&Tensor<T>> {
        self.slots.get(param).and_then(Option::as_ref)
    }

    /// Dense gradient list in parameter order; unused parameters get zeros.
    pub fn into_dense(mut self, shapes: &[&[usize]]) -> Vec<Tensor<T>> {
        shapes
            .iter()
            .enumerate()
            .map(|(i, s)| {
                self.slots
                    .get_mut(i)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(s))
            })
            .collect()
    }
}

#[derive(Debug, Default)]
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant leaf; receives no gradient.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input, false)
    }

    /// Trainable leaf bound to parameter slot `index`.
    pub fn param(&mut self, index: usize, t: Tensor<T>) -> Var {
        self.push(t, Op::Param(index), true)
    }

    fn mat(&self, v: Var, op: &'static str) -> Result<&Tensor<T>> {
        let t = self.value(v);
        t.require_matrix(op)?;
        Ok(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.mat(a, "matmul")?.matmul(self.mat(b, "matmul")?)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, sa, sb));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = self.zip(a, b, |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let value = self.zip(a, b, |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let value = self.zip(a, b, |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a, b), ng))
    }

    /// `a[n,m] + row[1,m]` broadcast over rows (the only broadcast supported).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let ta = self.mat(a, "add_row")?;
        let tr = self.mat(row, "add_row")?;
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(Error::shape("add_row", ta.shape(), tr.shape()));
        }
        let m = ta.cols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + tr.data()[i % m])
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(row);
        Ok(self.push(value, Op::AddRow(a, row), ng))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let value = self.value(a).map(|x| x * s);
        let ng = self.needs(a);
        self.push(value, Op::Scale(a, s), ng)
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        let first = parts.first().ok_or(Error::Empty("concat"))?;
        let base = self.mat(*first, "concat")?.shape().to_vec();
        let mut rows = 0;
        let mut cols = 0;
        for &p in parts {
            let t = self.mat(p, "concat")?;
            match axis {
                Axis::Rows if t.cols() != base[1] => {
                    return Err(Error::shape("concat", &base, t.shape()))
                }
                Axis::Cols if t.rows() != base[0] => {
                    return Err(Error::shape("concat", &base, t.shape()))
                }
                _ => {}
            }
            rows += t.rows();
            cols += t.cols();
        }
        let value = match axis {
            Axis::Rows => {
                let mut data = Vec::with_capacity(rows * base[1]);
                for &p in parts {
                    data.extend_from_slice(self.value(p).data());
                }
                Tensor::new(vec![rows, base[1]], data)?
            }
            Axis::Cols => {
                let r = base[0];
                let mut data = Vec::with_capacity(r * cols);
                for i in 0..r {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row_slice(i));
                    }
                }
                Tensor::new(vec![r, cols], data)?
            }
        };
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::Concat(parts.to_vec(), axis), ng))
    }

    pub fn slice(&mut self, a: Var, axis: Axis, start: usize, len: usize) -> Result<Var> {
        let t = self.mat(a, "slice")?;
        let (r, c) = (t.rows(), t.cols());
        let value = match axis {
            Axis::Rows => {
                if start + len > r {
                    return Err(Error::shape("slice", t.shape(), &[start, len]));
                }
                Tensor::new(vec![len, c], t.data()[start * c..(start + len) * c].to_vec())?
            }
            Axis::Cols => {
                if start + len > c {
                    return Err(Error::shape("slice", t.shape(), &[start, len]));
                }
                let mut data = Vec::with_capacity(r * len);
                for i in 0..r {
                    data.extend_from_slice(&t.row_slice(i)[start..start + len]);
                }
                Tensor::new(vec![r, len], data)?
            }
        };
        let ng = self.needs(a);
        Ok(self.push(value, Op::Slice { input: a, axis, start }, ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.mat(a, "transpose")?.transpose()?;
        let ng = self.needs(a);
        Ok(self.push(value, Op::Transpose(a), ng))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.tanh());
        let ng = self.needs(a);
        self.push(value, Op::Tanh(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let ng = self.needs(a);
        self.push(value, Op::Sigmoid(a), ng)
    }

    pub fn softmax(&mut self, a: Var, axis: Axis) -> Result<Var> {
        let t = self.mat(a, "softmax")?;
        let value = softmax(t, axis);
        let ng = self.needs(a);
        Ok(self.push(value, Op::Softmax(a, axis), ng))
    }

    /// Gathers rows of `table` (shape `[vocab, dim]`) into `[ids.len(), dim]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.mat(table, "embedding")?;
        if ids.is_empty() {
            return Err(Error::Empty("embedding ids"));
        }
        let (v, d) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::shape("embedding", t.shape(), &[id]));
            }
            data.extend_from_slice(t.row_slice(id));
        }
        let value = Tensor::new(vec![ids.len(), d], data)?;
        let ng = self.needs(table);
        Ok(self.push(
            value,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    /// Mean token-level cross entropy of `logits[n, vocab]` against
    /// `targets`, skipping positions whose target equals `ignore`.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        ignore: Option<usize>,
    ) -> Result<Var> {
        let t = self.mat(logits, "cross_entropy")?;
        if t.rows() != targets.len() {
            return Err(Error::shape("cross_entropy", t.shape(), &[targets.len()]));
        }
        let probs = softmax(t, Axis::Rows);
        let v = t.cols();
        let mut total = 0.0f64;
        let mut count = 0usize;
        for (i, &tgt) in targets.iter().enumerate() {
            if Some(tgt) == ignore {
                continue;
            }
            if tgt >= v {
                return Err(Error::shape("cross_entropy", t.shape(), &[tgt]));
            }
            total += log_softmax_at(t.row_slice(i), tgt);
            count += 1;
        }
        if count == 0 {
            return Err(Error::Empty("cross_entropy targets"));
        }
        let value = Tensor::scalar(T::from_f64(-total / count as f64));
        let ng = self.needs(logits);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                ignore,
                probs,
                count,
            },
            ng,
        ))
    }

    /// Column means: `[n, m] -> [1, m]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.mat(a, "mean_rows")?;
        let (r, c) = (t.rows(), t.cols());
        if r == 0 {
            return Err(Error::Empty("mean_rows"));
        }
        let inv = T::from_f64(1.0 / r as f64);
        let mut out = vec![T::zero(); c];
        for i in 0..r {
            for (o, &x) in out.iter_mut().zip(t.row_slice(i)) {
                *o = *o + x;
            }
        }
        for o in &mut out {
            *o = *o * inv;
        }
        let ng = self.needs(a);
        Ok(self.push(Tensor::row(out), Op::MeanRows(a), ng))
    }

    /// Scales each row to unit L2 norm. Zero rows are rejected.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.mat(a, "normalize_rows")?;
        let (r, c) = (t.rows(), t.cols());
        let mut norms = Vec::with_capacity(r);
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = t.row_slice(i);
            let n = row.iter().map(|&x| x * x).sum::<T>().sqrt();
            if !(n > T::zero()) {
                return Err(Error::Degenerate("zero-norm vector"));
            }
            norms.push(n);
            data.extend(row.iter().map(|&x| x / n));
        }
        let value = Tensor::new(vec![r, c], data)?;
        let ng = self.needs(a);
        Ok(self.push(value, Op::NormalizeRows { input: a, norms }, ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let ng = self.needs(a);
        self.push(value, Op::Sum(a), ng)
    }

    /// Propagates d(loss)/d(node) back to every parameter leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::invalid(format!(
                "backward requires a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));
        let mut slots: Vec<Option<Tensor<T>>> = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let mut acc = |v: Var, t: Tensor<T>| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(e) => e.add_assign(&t),
                    slot => *slot = Some(t),
                }
            };
            match &node.op {
                Op::Input => {}
                Op::Param(idx) => {
                    if slots.len() <= *idx {
                        slots.resize_with(idx + 1, || None);
                    }
                    match &mut slots[*idx] {
                        Some(e) => e.add_assign(&g),
                        slot => *slot = Some(g),
                    }
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    if self.needs(*a) {
                        let d = mm_nt(g.data(), tb.data(), m, n, k);
                        acc(*a, Tensor::new(vec![m, k], d)?);
                    }
                    if self.needs(*b) {
                        // Weight gradients recur at every step; add in place.
                        match &mut grads[b.0] {
                            Some(e) => mm_tn_into(e.data_mut(), ta.data(), g.data(), m, k, n),
                            slot => *slot = Some(Tensor::new(vec![k, n], mm_tn(ta.data(), g.data(), m, k, n))?),
                        }
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, g.map(|x| -x));
                    acc(*a, g);
                }
                Op::AddRow(a, row) => {
                    let c = g.cols();
                    let mut col = vec![T::zero(); c];
                    for r in 0..g.rows() {
                        for (o, &x) in col.iter_mut().zip(g.row_slice(r)) {
                            *o = *o + x;
                        }
                    }
                    acc(*row, Tensor::row(col));
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    if self.needs(*a) {
                        acc(*a, zip_with(&g, tb, |x, y| x * y));
                    }
                    if self.needs(*b) {
                        acc(*b, zip_with(&g, ta, |x, y| x * y));
                    }
                }
                Op::Scale(a, s) => acc(*a, g.map(|x| x * *s)),
                Op::Concat(parts, axis) => {
                    let mut offset = 0;
                    for &p in parts {
                        let shape = self.value(p).shape().to_vec();
                        let piece = match axis {
                            Axis::Rows => {
                                let c = g.cols();
                                let d = g.data()[offset * c..(offset + shape[0]) * c].to_vec();
                                offset += shape[0];
                                Tensor::new(shape, d)?
                            }
                            Axis::Cols => {
                                let mut d = Vec::with_capacity(shape[0] * shape[1]);
                                for r in 0..g.rows() {
                                    d.extend_from_slice(&g.row_slice(r)[offset..offset + shape[1]]);
                                }
                                offset += shape[1];
                                Tensor::new(shape, d)?
                            }
                        };
                        acc(p, piece);
                    }
                }
                Op::Slice { input, axis, start } => {
                    let shape = self.value(*input).shape().to_vec();
                    let mut full = Tensor::zeros(&shape);
                    let c = shape[1];
                    match axis {
                        Axis::Rows => {
                            full.data_mut()[start * c..start * c + g.len()]
                                .copy_from_slice(g.data());
                        }
                        Axis::Cols => {
                            let len = g.cols();
                            for r in 0..shape[0] {
                                full.data_mut()[r * c + start..r * c + start + len]
                                    .copy_from_slice(g.row_slice(r));
                            }
                        }
                    }
                    acc(*input, full);
                }
                Op::Transpose(a) => acc(*a, g.transpose()?),
                Op::Tanh(a) => {
                    let y = &node.value;
                    acc(*a, zip_with(&g, y, |gx, yx| gx * (T::one() - yx * yx)));
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    acc(*a, zip_with(&g, y, |gx, yx| gx * yx * (T::one() - yx)));
                }
                Op::Softmax(a, axis) => {
                    acc(*a, softmax_backward(&node.value, &g, *axis));
                }
                Op::Embedding { table, ids } => {
                    let shape = self.value(*table).shape().to_vec();
                    let d = shape[1];
                    let mut full = Tensor::zeros(&shape);
                    let fd = full.data_mut();
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, &x) in fd[id * d..(id + 1) * d].iter_mut().zip(g.row_slice(r)) {
                            *o = *o + x;
                        }
                    }
                    acc(*table, full);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    ignore,
                    probs,
                    count,
                } => {
                    let scale = g.item() / T::from_f64(*count as f64);
                    let v = probs.cols();
                    let mut d = probs.data().to_vec();
                    for (r, &tgt) in targets.iter().enumerate() {
                        let row = &mut d[r * v..(r + 1) * v];
                        if Some(tgt) == *ignore {
                            row.iter_mut().for_each(|x| *x = T::zero());
                            continue;
                        }
                        row[tgt] = row[tgt] - T::one();
                        row.iter_mut().for_each(|x| *x = *x * scale);
                    }
                    acc(*logits, Tensor::new(probs.shape().to_vec(), d)?);
                }
                Op::MeanRows(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    let inv = T::from_f64(1.0 / shape[0] as f64);
                    let mut d = Vec::with_capacity(shape[0] * shape[1]);
                    for _ in 0..shape[0] {
                        d.extend(g.data().iter().map(|&x| x * inv));
                    }
                    acc(*a, Tensor::new(shape, d)?);
                }
                Op::NormalizeRows { input, norms } => {
                    let y = &node.value;
                    let c = y.cols();
                    let mut d = Vec::with_capacity(y.len());
                    for (r, &n) in norms.iter().enumerate() {
                        let yr = y.row_slice(r);
                        let gr = g.row_slice(r);
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        d.extend(yr.iter().zip(gr).map(|(&yv, &gv)| (gv - yv * dot) / n));
                    }
                    acc(*input, Tensor::new(vec![norms.len(), c], d)?);
                }
                Op::Sum(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    acc(*a, Tensor::full(&shape, g.item()));
                }
            }
        }
        Ok(Gradients { slots })
    }
}

fn zip_with<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Max-shifted softmax over rows (`Axis::Rows`: each row sums to one) or
/// columns.
pub fn softmax<T: Scalar>(t: &Tensor<T>, axis: Axis) -> Tensor<T> {
    let (r, c) = (t.rows(), t.cols());
    let mut out = t.data().to_vec();
    let normalize = |lane: &mut [T]| {
        let m = lane.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in lane.iter_mut() {
            *v = (*v - m).exp();
            z = z + *v;
        }
        for v in lane.iter_mut() {
            *v = *v / z;
        }
    };
    match axis {
        Axis::Rows => out.chunks_mut(c).for_each(normalize),
        Axis::Cols => {
            let mut lane = vec![T::zero(); r];
            for j in 0..c {
                for i in 0..r {
                    lane[i] = out[i * c + j];
                }
                normalize(&mut lane);
                for i in 0..r {
                    out[i * c + j] = lane[i];
                }
            }
        }
    }
    Tensor::new(vec![r, c], out).expect("same shape")
}

fn softmax_backward<T: Scalar>(y: &Tensor<T>, g: &Tensor<T>, axis: Axis) -> Tensor<T> {
    let (r, c) = (y.rows(), y.cols());
    let (yd, gd) = (y.data(), g.data());
    let mut out = vec![T::zero(); r * c];
    match axis {
        Axis::Rows => {
            for i in 0..r {
                let s = i * c;
                let dot: T = (0..c).map(|j| yd[s + j] * gd[s + j]).sum();
                for j in 0..c {
                    out[s + j] = yd[s + j] * (gd[s + j] - dot);
                }
            }
        }
        Axis::Cols => {
            for j in 0..c {
                let dot: T = (0..r).map(|i| yd[i * c + j] * gd[i * c + j]).sum();
                for i in 0..r {
                    out[i * c + j] = yd[i * c + j] * (gd[i * c + j] - dot);
                }
            }
        }
    }
    Tensor::new(vec![r, c], out).expect("same shape")
}

/// `log softmax(row)[target]` via log-sum-exp, in f64.
pub fn log_softmax_at<T: Scalar>(row: &[T], target: usize) -> f64 {
    let m = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v.as_f64() - m).exp()).sum::<f64>().ln() + m;
    row[target].as_f64() - lse
}

/// Plain dense product used by inference paths that do not need a tape.
pub fn matmul_plain<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.require_matrix("matmul")?;
    b.require_matrix("matmul")?;
    if a.cols() != b.rows() {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    Tensor::new(
        vec![a.rows(), b.cols()],
        mm(a.data(), b.data(), a.rows(), a.cols(), b.cols()),
    )
}
