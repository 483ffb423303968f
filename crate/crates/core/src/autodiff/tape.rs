use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use super::matrix::{dot, Matrix};
use super::params::{ParamId, ParamStore};
use crate::real::Real;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Max(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Affine(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    Dropout(Var, Matrix<T>),
    GradReverse(Var, T),
    Gather(Var, Arc<[u32]>),
    ScatterAdd(Var, Arc<[u32]>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    RowDot(Var, Var),
    MulCol(Var, Var),
    MulScalar(Var, Var),
    SegmentSoftmax(Var, Arc<[u32]>),
    ColMean(Var),
    MeanAll(Var),
    BceWithLogits(Var, Matrix<T>),
    Bce(Var, Matrix<T>),
}

struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Clamp applied to probabilities before taking logs in [`Tape::bce`].
pub const BCE_EPS: f64 = 1e-7;

/// Records a forward computation so that [`Tape::backward`] can replay it in
/// reverse.
///
/// Nodes are appended in execution order, which is therefore a topological
/// order of the computation graph. Shape errors are programming errors here
/// and panic.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by a backward pass, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Matrix<T>>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of a parameter, or `None` if the parameter did not take part
    /// in the computation.
    pub fn param(&self, id: ParamId) -> Option<&Matrix<T>> {
        self.params.get(&id).and_then(|&v| self.get(v))
    }

    /// Gradients for every parameter of `store`; unused parameters get zeros.
    pub fn for_store(&self, store: &ParamStore<T>) -> Vec<Matrix<T>> {
        store
            .ids()
            .map(|id| {
                self.param(id).cloned().unwrap_or_else(|| {
                    let (r, c) = store.get(id).shape();
                    Matrix::zeros(r, c)
                })
            })
            .collect()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> T {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "scalar() on non-scalar node");
        m.get(0, 0)
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A trainable leaf.
    pub fn var(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Binds a parameter of `store`; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.var(store.get(id).clone());
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert_eq!(sa.1, sb.0, "matmul {sa:?} x {sb:?}");
        let value = self.value(a).matmul(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert_eq!(sa.1, sb.1, "matmul_t {sa:?} x {sb:?}ᵀ");
        let value = self.value(a).matmul_t(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMulT(a, b), rg)
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) {
        assert_eq!(self.shape(a), self.shape(b), "{op}: shape mismatch");
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("add", a, b);
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("sub", a, b);
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("mul", a, b);
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    /// Element-wise maximum. Ties split the gradient evenly.
    pub fn max(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("max", a, b);
        let value = self.value(a).zip_map(self.value(b), |x, y| x.max(y));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Max(a, b), rg)
    }

    /// Element-wise mean of two tensors.
    pub fn mean2(&mut self, a: Var, b: Var) -> Var {
        let s = self.add(a, b);
        self.scale(s, T::of(0.5))
    }

    /// Adds a `1 × cols` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let (sx, sr) = (self.shape(x), self.shape(row));
        assert_eq!((1, sx.1), sr, "add_row {sx:?} + {sr:?}");
        let mut value = self.value(x).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..sx.0 {
            for (o, &b) in value.row_mut(i).iter_mut().zip(&r) {
                *o = *o + b;
            }
        }
        let rg = self.rg(x) || self.rg(row);
        self.push(value, Op::AddRow(x, row), rg)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let value = self.value(x).scale(s);
        let rg = self.rg(x);
        self.push(value, Op::Scale(x, s), rg)
    }

    /// `scale · x + shift`, element-wise.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let value = self.value(x).map(|v| scale * v + shift);
        let rg = self.rg(x);
        self.push(value, Op::Affine(x, scale), rg)
    }

    /// `1 − x`
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.affine(x, -T::one(), T::one())
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(value, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.tanh());
        let rg = self.rg(x);
        self.push(value, Op::Tanh(x), rg)
    }

    /// Exact GELU, `x · Φ(x)`.
    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(gelu);
        let rg = self.rg(x);
        self.push(value, Op::Gelu(x), rg)
    }

    /// Inverted dropout: kept entries are scaled by `1 / (1 − rate)`.
    /// A rate of zero returns `x` itself.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Var {
        assert!((0.0..1.0).contains(&rate), "dropout rate {rate}");
        if rate == 0.0 {
            return x;
        }
        let (r, c) = self.shape(x);
        let keep = T::of(1.0 / (1.0 - rate));
        let mask = Matrix::from_vec(
            r,
            c,
            (0..r * c)
                .map(|_| {
                    if rng.random::<f64>() < rate {
                        T::zero()
                    } else {
                        keep
                    }
                })
                .collect(),
        );
        let value = self.value(x).zip_map(&mask, |v, m| v * m);
        let rg = self.rg(x);
        self.push(value, Op::Dropout(x, mask), rg)
    }

    /// Gradient reversal: identity forward, gradient scaled by `−lambda`
    /// backward.
    pub fn grad_reverse(&mut self, x: Var, lambda: T) -> Var {
        let value = self.value(x).clone();
        let rg = self.rg(x);
        self.push(value, Op::GradReverse(x, lambda), rg)
    }

    pub fn gather(&mut self, x: Var, index: Arc<[u32]>) -> Var {
        let value = self.value(x).gather_rows(&index);
        let rg = self.rg(x);
        self.push(value, Op::Gather(x, index), rg)
    }

    /// Sums row `i` of `x` into row `index[i]` of an `n × cols` output.
    pub fn scatter_add(&mut self, x: Var, index: Arc<[u32]>, n: usize) -> Var {
        let (rows, cols) = self.shape(x);
        assert_eq!(rows, index.len(), "scatter_add index length");
        let mut value = Matrix::zeros(n, cols);
        let src = self.value(x);
        for (i, &dst) in index.iter().enumerate() {
            for (o, &v) in value.row_mut(dst as usize).iter_mut().zip(src.row(i)) {
                *o = *o + v;
            }
        }
        let rg = self.rg(x);
        self.push(value, Op::ScatterAdd(x, index), rg)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Var {
        let value = self.value(x).slice_rows(start, end);
        let rg = self.rg(x);
        self.push(value, Op::SliceRows(x, start), rg)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let src = self.value(x);
        let (rows, width) = (src.rows(), end - start);
        let mut data = Vec::with_capacity(rows * width);
        for i in 0..rows {
            data.extend_from_slice(&src.row(i)[start..end]);
        }
        let value = Matrix::from_vec(rows, width, data);
        let rg = self.rg(x);
        self.push(value, Op::SliceCols(x, start), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut value = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p);
                assert_eq!(src.rows(), rows, "concat_cols row count");
                let w = src.cols();
                value.row_mut(i)[off..off + w].copy_from_slice(src.row(i));
                off += w;
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.shape(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let src = self.value(p);
            assert_eq!(src.cols(), cols, "concat_rows col count");
            data.extend_from_slice(src.data());
            rows += src.rows();
        }
        let value = Matrix::from_vec(rows, cols, data);
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatRows(parts.to_vec()), rg)
    }

    /// Row-wise dot product, `n × 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("row_dot", a, b);
        let (va, vb) = (self.value(a), self.value(b));
        let data = (0..va.rows()).map(|i| dot(va.row(i), vb.row(i))).collect();
        let value = Matrix::from_vec(va.rows(), 1, data);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::RowDot(a, b), rg)
    }

    /// Scales row `i` of `x` by `col[i]`, where `col` is `n × 1`.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Var {
        let (sx, sc) = (self.shape(x), self.shape(col));
        assert_eq!((sx.0, 1), sc, "mul_col {sx:?} * {sc:?}");
        let mut value = self.value(x).clone();
        let c = self.value(col).data().to_vec();
        for (i, &s) in c.iter().enumerate() {
            for o in value.row_mut(i) {
                *o = *o * s;
            }
        }
        let rg = self.rg(x) || self.rg(col);
        self.push(value, Op::MulCol(x, col), rg)
    }

    /// Scales every entry of `x` by the 1×1 node `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Var {
        let sv = self.scalar(s);
        let value = self.value(x).scale(sv);
        let rg = self.rg(x) || self.rg(s);
        self.push(value, Op::MulScalar(x, s), rg)
    }

    /// Softmax of the `n × 1` logits within groups sharing a segment id.
    pub fn segment_softmax(&mut self, logits: Var, segments: Arc<[u32]>, n_segments: usize) -> Var {
        let x = self.value(logits);
        assert_eq!(x.shape(), (segments.len(), 1), "segment_softmax logits");
        let value = Matrix::from_vec(
            segments.len(),
            1,
            segment_softmax(x.data(), &segments, n_segments),
        );
        let rg = self.rg(logits);
        self.push(value, Op::SegmentSoftmax(logits, segments), rg)
    }

    /// Column means, `1 × cols`.
    pub fn col_mean(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let n = T::of(src.rows() as f64);
        let mut value = Matrix::zeros(1, src.cols());
        for i in 0..src.rows() {
            for (o, &v) in value.row_mut(0).iter_mut().zip(src.row(i)) {
                *o = *o + v;
            }
        }
        let value = value.map(|v| v / n);
        let rg = self.rg(x);
        self.push(value, Op::ColMean(x), rg)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let value = Matrix::scalar(src.sum() / T::of(src.len() as f64));
        let rg = self.rg(x);
        self.push(value, Op::MeanAll(x), rg)
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `targets`,
    /// computed in the numerically stable logit form.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Matrix<T>) -> Var {
        let x = self.value(logits);
        assert_eq!(x.shape(), targets.shape(), "bce_with_logits targets");
        let n = T::of(x.len() as f64);
        let total: T = x
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&z, &t)| z.max(T::zero()) - z * t + (-z.abs()).exp().ln_1p())
            .sum();
        let value = Matrix::scalar(total / n);
        let rg = self.rg(logits);
        self.push(value, Op::BceWithLogits(logits, targets), rg)
    }

    /// Mean binary cross-entropy on probabilities, clamped [`BCE_EPS`] away
    /// from 0 and 1.
    pub fn bce(&mut self, probs: Var, targets: Matrix<T>) -> Var {
        let p = self.value(probs);
        assert_eq!(p.shape(), targets.shape(), "bce targets");
        let eps = T::of(BCE_EPS);
        let n = T::of(p.len() as f64);
        let total: T = p
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&p, &t)| {
                let p = p.max(eps).min(T::one() - eps);
                -(t * p.ln() + (T::one() - t) * (T::one() - p).ln())
            })
            .sum();
        let value = Matrix::scalar(total / n);
        let rg = self.rg(probs);
        self.push(value, Op::Bce(probs, targets), rg)
    }

    /// Reverse pass from a scalar `output`.
    pub fn backward(&self, output: Var) -> Gradients<T> {
        assert_eq!(self.shape(output), (1, 1), "backward from non-scalar");
        let mut grads: Vec<Option<Matrix<T>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Matrix::scalar(T::one()));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if self.nodes[idx].requires_grad {
                self.propagate(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Gradients {
            grads,
            params: self.params.clone(),
        }
    }

    fn propagate(&self, idx: usize, g: &Matrix<T>, grads: &mut [Option<Matrix<T>>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, m: Matrix<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&m),
                slot @ None => *slot = Some(m),
            }
        };
        let half = T::of(0.5);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                acc(*a, g.matmul_t(val(*b)));
                acc(*b, val(*a).t_matmul(g));
            }
            Op::MatMulT(a, b) => {
                acc(*a, g.matmul(val(*b)));
                acc(*b, g.t_matmul(val(*a)));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-T::one()));
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(val(*b), |g, y| g * y));
                acc(*b, g.zip_map(val(*a), |g, x| g * x));
            }
            Op::Max(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let route = |first: bool| {
                    let mut out = Matrix::zeros(g.rows(), g.cols());
                    for (k, o) in out.data_mut().iter_mut().enumerate() {
                        let (x, z) = (va.data()[k], vb.data()[k]);
                        let gk = g.data()[k];
                        *o = if x == z {
                            gk * half
                        } else if (x > z) == first {
                            gk
                        } else {
                            T::zero()
                        };
                    }
                    out
                };
                acc(*a, route(true));
                acc(*b, route(false));
            }
            Op::AddRow(x, row) => {
                acc(*x, g.clone());
                let mut sums = Matrix::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for (o, &v) in sums.row_mut(0).iter_mut().zip(g.row(i)) {
                        *o = *o + v;
                    }
                }
                acc(*row, sums);
            }
            Op::Scale(x, s) | Op::Affine(x, s) => acc(*x, g.scale(*s)),
            Op::Sigmoid(x) => acc(*x, g.zip_map(y, |g, s| g * s * (T::one() - s))),
            Op::Tanh(x) => acc(*x, g.zip_map(y, |g, t| g * (T::one() - t * t))),
            Op::Gelu(x) => acc(*x, g.zip_map(val(*x), |g, v| g * gelu_grad(v))),
            Op::Dropout(x, mask) => acc(*x, g.zip_map(mask, |g, m| g * m)),
            Op::GradReverse(x, lambda) => acc(*x, g.scale(-*lambda)),
            Op::Gather(x, index) => {
                let src = val(*x);
                let mut out = Matrix::zeros(src.rows(), src.cols());
                for (i, &r) in index.iter().enumerate() {
                    for (o, &v) in out.row_mut(r as usize).iter_mut().zip(g.row(i)) {
                        *o = *o + v;
                    }
                }
                acc(*x, out);
            }
            Op::ScatterAdd(x, index) => acc(*x, g.gather_rows(index)),
            Op::SliceRows(x, start) => {
                let src = val(*x);
                let mut out = Matrix::zeros(src.rows(), src.cols());
                let c = src.cols();
                out.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                acc(*x, out);
            }
            Op::SliceCols(x, start) => {
                let src = val(*x);
                let mut out = Matrix::zeros(src.rows(), src.cols());
                for i in 0..g.rows() {
                    out.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                }
                acc(*x, out);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = val(p).cols();
                    let mut out = Matrix::zeros(g.rows(), w);
                    for i in 0..g.rows() {
                        out.row_mut(i).copy_from_slice(&g.row(i)[off..off + w]);
                    }
                    off += w;
                    acc(p, out);
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let r = val(p).rows();
                    acc(p, g.slice_rows(off, off + r));
                    off += r;
                }
            }
            Op::RowDot(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let mut ga = vb.clone();
                let mut gb = va.clone();
                for i in 0..g.rows() {
                    let s = g.get(i, 0);
                    ga.row_mut(i).iter_mut().for_each(|v| *v = *v * s);
                    gb.row_mut(i).iter_mut().for_each(|v| *v = *v * s);
                }
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::MulCol(x, col) => {
                let (vx, vc) = (val(*x), val(*col));
                let mut gx = g.clone();
                let mut gc = Matrix::zeros(vc.rows(), 1);
                for i in 0..g.rows() {
                    let s = vc.get(i, 0);
                    gc.set(i, 0, dot(g.row(i), vx.row(i)));
                    gx.row_mut(i).iter_mut().for_each(|v| *v = *v * s);
                }
                acc(*x, gx);
                acc(*col, gc);
            }
            Op::MulScalar(x, s) => {
                let (vx, vs) = (val(*x), val(*s).get(0, 0));
                acc(*x, g.scale(vs));
                acc(*s, Matrix::scalar(dot(g.data(), vx.data())));
            }
            Op::SegmentSoftmax(x, segments) => {
                let n_seg = segments.iter().map(|&s| s as usize + 1).max().unwrap_or(0);
                let mut weighted = vec![T::zero(); n_seg];
                for (i, &s) in segments.iter().enumerate() {
                    weighted[s as usize] = weighted[s as usize] + g.get(i, 0) * y.get(i, 0);
                }
                let data = segments
                    .iter()
                    .enumerate()
                    .map(|(i, &s)| y.get(i, 0) * (g.get(i, 0) - weighted[s as usize]))
                    .collect();
                acc(*x, Matrix::from_vec(segments.len(), 1, data));
            }
            Op::ColMean(x) => {
                let src = val(*x);
                let n = T::of(src.rows() as f64);
                let mut out = Matrix::zeros(src.rows(), src.cols());
                for i in 0..src.rows() {
                    for (o, &v) in out.row_mut(i).iter_mut().zip(g.row(0)) {
                        *o = v / n;
                    }
                }
                acc(*x, out);
            }
            Op::MeanAll(x) => {
                let src = val(*x);
                let gv = g.get(0, 0) / T::of(src.len() as f64);
                acc(*x, Matrix::filled(src.rows(), src.cols(), gv));
            }
            Op::BceWithLogits(x, targets) => {
                let src = val(*x);
                let gv = g.get(0, 0) / T::of(src.len() as f64);
                acc(*x, src.zip_map(targets, |z, t| (sigmoid(z) - t) * gv));
            }
            Op::Bce(p, targets) => {
                let src = val(*p);
                let eps = T::of(BCE_EPS);
                let gv = g.get(0, 0) / T::of(src.len() as f64);
                acc(
                    *p,
                    src.zip_map(targets, |p, t| {
                        if p < eps || p > T::one() - eps {
                            T::zero()
                        } else {
                            (-t / p + (T::one() - t) / (T::one() - p)) * gv
                        }
                    }),
                );
            }
        }
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    x * T::of(0.5) * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

#[inline]
fn gelu_grad<T: Real>(x: T) -> T {
    let cdf = T::of(0.5) * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * T::of(0.5)).exp() * T::of(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    cdf + x * pdf
}

/// Numerically stable softmax within segments; segments without entries are
/// never touched.
pub fn segment_softmax<T: Real>(logits: &[T], segments: &[u32], n_segments: usize) -> Vec<T> {
    let mut max = vec![T::neg_infinity(); n_segments];
    for (&x, &s) in logits.iter().zip(segments) {
        let m = &mut max[s as usize];
        *m = m.max(x);
    }
    let exp: Vec<T> = logits
        .iter()
        .zip(segments)
        .map(|(&x, &s)| (x - max[s as usize]).exp())
        .collect();
    let mut sum = vec![T::zero(); n_segments];
    for (&e, &s) in exp.iter().zip(segments) {
        sum[s as usize] = sum[s as usize] + e;
    }
    exp.iter()
        .zip(segments)
        .map(|(&e, &s)| e / sum[s as usize])
        .collect()
}
