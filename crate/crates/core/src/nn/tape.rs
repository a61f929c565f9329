//! Reverse-mode autodiff over [`Tensor`] values.
//!
//! A `Tape` records every operation applied to tracked nodes; `backward`
//! walks the record once in reverse and accumulates gradients for all
//! nodes that (transitively) depend on a leaf. Ops cover exactly what the
//! models in this crate need — dense algebra, broadcasts, pointwise
//! nonlinearities, row softmax machinery, and row gather/slice/concat.
//!
//! `leaky_relu_deriv` evaluates the derivative of `leaky_relu` as a plain
//! forward op whose own gradient is zero (the derivative is piecewise
//! constant almost everywhere). This lets a discriminator's input gradient
//! be built *on* the tape as ordinary ops, so gradient penalties can be
//! differentiated without nested backward passes.

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Const,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Matmul(NodeId, NodeId),
    MatmulNT(NodeId, NodeId),
    MatmulTN(NodeId, NodeId),
    AddRowBroadcast(NodeId, NodeId),
    BroadcastCol(NodeId),
    BroadcastRow(NodeId),
    RowSum(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    Sqrt(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId),
    Silu(NodeId),
    Tanh(NodeId),
    LeakyRelu(NodeId, f64),
    LeakyReluDeriv,
    SoftmaxRows(NodeId),
    LogSumExpRows(NodeId),
    TakeDiag(NodeId),
    GatherRows(NodeId, Vec<usize>),
    SliceRows(NodeId, usize, usize),
    SliceCols(NodeId, usize, usize),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads[id.0].take()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    // max(x,0) + ln(1+e^{-|x|}) is stable for large |x|.
    x.max(0.0) + (-x.abs()).exp().ln_1p()
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> NodeId {
        self.nodes.push(Node { value, op, tracked });
        NodeId(self.nodes.len() - 1)
    }

    fn tracked(&self, id: NodeId) -> bool {
        self.nodes[id.0].tracked
    }

    fn any_tracked(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.tracked(i))
    }

    /// A differentiable input; gradients accumulate here.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// A fixed input; backward never propagates into it.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Const, false)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).add(self.value(b));
        let t = self.any_tracked(&[a, b]);
        self.push(v, Op::Add(a, b), t)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).sub(self.value(b));
        let t = self.any_tracked(&[a, b]);
        self.push(v, Op::Sub(a, b), t)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).hadamard(self.value(b));
        let t = self.any_tracked(&[a, b]);
        self.push(v, Op::Mul(a, b), t)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).shape(), self.value(b).shape());
        let v = Tensor::from_vec(
            self.value(a).rows(),
            self.value(a).cols(),
            self.value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(&x, &y)| x / y)
                .collect(),
        );
        let t = self.any_tracked(&[a, b]);
        self.push(v, Op::Div(a, b), t)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).scale(c);
        let t = self.tracked(a);
        self.push(v, Op::Scale(a, c), t)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x + c);
        let t = self.tracked(a);
        self.push(v, Op::AddScalar(a), t)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        let t = self.any_tracked(&[a, b]);
        self.push(v, Op::Matmul(a, b), t)
    }

    /// `a @ b^T` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul_nt(self.value(b));
        let t = self.any_tracked(&[a, b]);
        self.push(v, Op::MatmulNT(a, b), t)
    }

    /// `a^T @ b` without materializing the transpose.
    pub fn matmul_tn(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul_tn(self.value(b));
        let t = self.any_tracked(&[a, b]);
        self.push(v, Op::MatmulTN(a, b), t)
    }

    /// `(m,n) + (1,n)`: add a bias row to every row.
    pub fn add_row_broadcast(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let x = self.value(a);
        let b = self.value(bias);
        assert_eq!(b.rows(), 1);
        assert_eq!(b.cols(), x.cols());
        let mut v = x.clone();
        for i in 0..v.rows() {
            for (dst, src) in v.row_mut(i).iter_mut().zip(b.row(0)) {
                *dst += src;
            }
        }
        let t = self.any_tracked(&[a, bias]);
        self.push(v, Op::AddRowBroadcast(a, bias), t)
    }

    /// `(m,1) -> (m,n)`: replicate a column across `n` columns.
    pub fn broadcast_col(&mut self, a: NodeId, n: usize) -> NodeId {
        let x = self.value(a);
        assert_eq!(x.cols(), 1);
        let m = x.rows();
        let mut v = Tensor::zeros(m, n);
        for i in 0..m {
            let s = x.get(i, 0);
            for j in 0..n {
                v.set(i, j, s);
            }
        }
        let t = self.tracked(a);
        self.push(v, Op::BroadcastCol(a), t)
    }

    /// `(1,n) -> (m,n)`: replicate a row across `m` rows.
    pub fn broadcast_row(&mut self, a: NodeId, m: usize) -> NodeId {
        let x = self.value(a);
        assert_eq!(x.rows(), 1);
        let n = x.cols();
        let mut v = Tensor::zeros(m, n);
        for i in 0..m {
            v.row_mut(i).copy_from_slice(x.row(0));
        }
        let t = self.tracked(a);
        self.push(v, Op::BroadcastRow(a), t)
    }

    /// `(m,n) -> (m,1)`: sum over each row.
    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let v = Tensor::from_fn(x.rows(), 1, |i, _| x.row(i).iter().sum());
        let t = self.tracked(a);
        self.push(v, Op::RowSum(a), t)
    }

    /// `(m,n) -> (m,1)`: mean over each row.
    pub fn row_mean(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).cols();
        let s = self.row_sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).sum());
        let t = self.tracked(a);
        self.push(v, Op::SumAll(a), t)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).mean());
        let t = self.tracked(a);
        self.push(v, Op::MeanAll(a), t)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::sqrt);
        let t = self.tracked(a);
        self.push(v, Op::Sqrt(a), t)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::exp);
        let t = self.tracked(a);
        self.push(v, Op::Exp(a), t)
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::ln);
        let t = self.tracked(a);
        self.push(v, Op::Ln(a), t)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        let t = self.tracked(a);
        self.push(v, Op::Sigmoid(a), t)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(softplus);
        let t = self.tracked(a);
        self.push(v, Op::Softplus(a), t)
    }

    pub fn silu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x * sigmoid(x));
        let t = self.tracked(a);
        self.push(v, Op::Silu(a), t)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        let t = self.tracked(a);
        self.push(v, Op::Tanh(a), t)
    }

    pub fn leaky_relu(&mut self, a: NodeId, alpha: f64) -> NodeId {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { alpha * x });
        let t = self.tracked(a);
        self.push(v, Op::LeakyRelu(a, alpha), t)
    }

    /// Pointwise derivative of `leaky_relu` as a forward value. Its own
    /// gradient is defined as zero (exact almost everywhere), which keeps
    /// penalty terms built from it first-order differentiable.
    pub fn leaky_relu_deriv(&mut self, a: NodeId, alpha: f64) -> NodeId {
        let v = self.value(a).map(|x| if x > 0.0 { 1.0 } else { alpha });
        self.push(v, Op::LeakyReluDeriv, false)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let mut v = x.clone();
        for i in 0..v.rows() {
            let row = v.row_mut(i);
            let mx = row.iter().fold(f64::NEG_INFINITY, |m, &z| m.max(z));
            let mut denom = 0.0;
            for z in row.iter_mut() {
                *z = (*z - mx).exp();
                denom += *z;
            }
            for z in row.iter_mut() {
                *z /= denom;
            }
        }
        let t = self.tracked(a);
        self.push(v, Op::SoftmaxRows(a), t)
    }

    /// `(m,n) -> (m,1)`: log(sum(exp(row))), numerically stable.
    pub fn log_sum_exp_rows(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let v = Tensor::from_fn(x.rows(), 1, |i, _| {
            let row = x.row(i);
            let mx = row.iter().fold(f64::NEG_INFINITY, |m, &z| m.max(z));
            mx + row.iter().map(|&z| (z - mx).exp()).sum::<f64>().ln()
        });
        let t = self.tracked(a);
        self.push(v, Op::LogSumExpRows(a), t)
    }

    /// `(m,m) -> (m,1)`: extract the main diagonal.
    pub fn take_diag(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        assert_eq!(x.rows(), x.cols());
        let v = Tensor::from_fn(x.rows(), 1, |i, _| x.get(i, i));
        let t = self.tracked(a);
        self.push(v, Op::TakeDiag(a), t)
    }

    /// Pick rows of `a` by index (rows may repeat); backward scatter-adds.
    pub fn gather_rows(&mut self, a: NodeId, idx: &[usize]) -> NodeId {
        let x = self.value(a);
        let mut v = Tensor::zeros(idx.len(), x.cols());
        for (k, &i) in idx.iter().enumerate() {
            v.row_mut(k).copy_from_slice(x.row(i));
        }
        let t = self.tracked(a);
        self.push(v, Op::GatherRows(a, idx.to_vec()), t)
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let x = self.value(a);
        assert!(start + len <= x.rows());
        let mut v = Tensor::zeros(len, x.cols());
        for k in 0..len {
            v.row_mut(k).copy_from_slice(x.row(start + k));
        }
        let t = self.tracked(a);
        self.push(v, Op::SliceRows(a, start, len), t)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let x = self.value(a);
        assert!(start + len <= x.cols());
        let v = Tensor::from_fn(x.rows(), len, |i, j| x.get(i, start + j));
        let t = self.tracked(a);
        self.push(v, Op::SliceCols(a, start, len), t)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols();
        let rows: usize = parts.iter().map(|&p| self.value(p).rows()).sum();
        let mut v = Tensor::zeros(rows, cols);
        let mut at = 0;
        for &p in parts {
            let x = self.value(p);
            assert_eq!(x.cols(), cols);
            for i in 0..x.rows() {
                v.row_mut(at + i).copy_from_slice(x.row(i));
            }
            at += x.rows();
        }
        let t = self.any_tracked(parts);
        self.push(v, Op::ConcatRows(parts.to_vec()), t)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut v = Tensor::zeros(rows, cols);
        let mut at = 0;
        for &p in parts {
            let x = self.value(p);
            assert_eq!(x.rows(), rows);
            for i in 0..rows {
                v.row_mut(i)[at..at + x.cols()].copy_from_slice(x.row(i));
            }
            at += x.cols();
        }
        let t = self.any_tracked(parts);
        self.push(v, Op::ConcatCols(parts.to_vec()), t)
    }

    /// Mean squared error between two same-shape nodes, as a 1x1 node.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let d = self.sub(a, b);
        let sq = self.mul(d, d);
        self.mean_all(sq)
    }

    /// Accumulate `g` into `acc[target]`, allocating on first touch.
    fn accum(acc: &mut [Option<Tensor>], target: usize, g: Tensor) {
        match &mut acc[target] {
            Some(t) => t.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Backpropagate from `root` (any shape; seed is all-ones) and return
    /// gradients for every tracked node.
    pub fn backward(&self, root: NodeId) -> Gradients {
        let seed = Tensor::from_vec(
            self.value(root).rows(),
            self.value(root).cols(),
            vec![1.0; self.value(root).len()],
        );
        self.backward_seeded(root, seed)
    }

    pub fn backward_seeded(&self, root: NodeId, seed: Tensor) -> Gradients {
        assert_eq!(seed.shape(), self.value(root).shape());
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(seed);

        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].tracked {
                grads[idx] = None;
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        // Keep only leaf/tracked gradients callers can use; interior
        // gradients stay available for inspection in tests.
        Gradients { grads }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf | Op::Const | Op::LeakyReluDeriv => {}
            Op::Add(a, b) => {
                if self.tracked(*a) {
                    Self::accum(grads, a.0, g.clone());
                }
                if self.tracked(*b) {
                    Self::accum(grads, b.0, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.tracked(*a) {
                    Self::accum(grads, a.0, g.clone());
                }
                if self.tracked(*b) {
                    Self::accum(grads, b.0, g.scale(-1.0));
                }
            }
            Op::Mul(a, b) => {
                if self.tracked(*a) {
                    Self::accum(grads, a.0, g.hadamard(self.value(*b)));
                }
                if self.tracked(*b) {
                    Self::accum(grads, b.0, g.hadamard(self.value(*a)));
                }
            }
            Op::Div(a, b) => {
                let bv = self.value(*b);
                if self.tracked(*a) {
                    let ga = Tensor::from_vec(
                        g.rows(),
                        g.cols(),
                        g.data().iter().zip(bv.data()).map(|(&gz, &y)| gz / y).collect(),
                    );
                    Self::accum(grads, a.0, ga);
                }
                if self.tracked(*b) {
                    let av = self.value(*a);
                    let gb = Tensor::from_vec(
                        g.rows(),
                        g.cols(),
                        g.data()
                            .iter()
                            .zip(av.data().iter().zip(bv.data()))
                            .map(|(&gz, (&x, &y))| -gz * x / (y * y))
                            .collect(),
                    );
                    Self::accum(grads, b.0, gb);
                }
            }
            Op::Scale(a, c) => {
                if self.tracked(*a) {
                    Self::accum(grads, a.0, g.scale(*c));
                }
            }
            Op::AddScalar(a) => {
                if self.tracked(*a) {
                    Self::accum(grads, a.0, g.clone());
                }
            }
            Op::Matmul(a, b) => {
                if self.tracked(*a) {
                    Self::accum(grads, a.0, g.matmul_nt(self.value(*b)));
                }
                if self.tracked(*b) {
                    Self::accum(grads, b.0, self.value(*a).matmul_tn(g));
                }
            }
            Op::MatmulNT(a, b) => {
                // c = a @ b^T: da = g @ b, db = g^T @ a.
                if self.tracked(*a) {
                    Self::accum(grads, a.0, g.matmul(self.value(*b)));
                }
                if self.tracked(*b) {
                    Self::accum(grads, b.0, g.matmul_tn(self.value(*a)));
                }
            }
            Op::MatmulTN(a, b) => {
                // c = a^T @ b: da = b @ g^T, db = a @ g.
                if self.tracked(*a) {
                    Self::accum(grads, a.0, self.value(*b).matmul_nt(g));
                }
                if self.tracked(*b) {
                    Self::accum(grads, b.0, self.value(*a).matmul(g));
                }
            }
            Op::AddRowBroadcast(a, bias) => {
                if self.tracked(*a) {
                    Self::accum(grads, a.0, g.clone());
                }
                if self.tracked(*bias) {
                    let mut gb = Tensor::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (dst, src) in gb.row_mut(0).iter_mut().zip(g.row(i)) {
                            *dst += src;
                        }
                    }
                    Self::accum(grads, bias.0, gb);
                }
            }
            Op::BroadcastCol(a) => {
                if self.tracked(*a) {
                    let ga = Tensor::from_fn(g.rows(), 1, |i, _| g.row(i).iter().sum());
                    Self::accum(grads, a.0, ga);
                }
            }
            Op::BroadcastRow(a) => {
                if self.tracked(*a) {
                    let mut ga = Tensor::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (dst, src) in ga.row_mut(0).iter_mut().zip(g.row(i)) {
                            *dst += src;
                        }
                    }
                    Self::accum(grads, a.0, ga);
                }
            }
            Op::RowSum(a) => {
                if self.tracked(*a) {
                    let av = self.value(*a);
                    let ga = Tensor::from_fn(av.rows(), av.cols(), |i, _| g.get(i, 0));
                    Self::accum(grads, a.0, ga);
                }
            }
            Op::SumAll(a) => {
                if self.tracked(*a) {
                    let av = self.value(*a);
                    let s = g.item();
                    Self::accum(grads, a.0, Tensor::from_fn(av.rows(), av.cols(), |_, _| s));
                }
            }
            Op::MeanAll(a) => {
                if self.tracked(*a) {
                    let av = self.value(*a);
                    let s = g.item() / av.len() as f64;
                    Self::accum(grads, a.0, Tensor::from_fn(av.rows(), av.cols(), |_, _| s));
                }
            }
            Op::Sqrt(a) => {
                if self.tracked(*a) {
                    let y = &node.value;
                    let ga = Tensor::from_vec(
                        g.rows(),
                        g.cols(),
                        g.data()
                            .iter()
                            .zip(y.data())
                            .map(|(&gz, &yv)| gz * 0.5 / yv)
                            .collect(),
                    );
                    Self::accum(grads, a.0, ga);
                }
            }
            Op::Exp(a) => {
                if self.tracked(*a) {
                    Self::accum(grads, a.0, g.hadamard(&node.value));
                }
            }
            Op::Ln(a) => {
                if self.tracked(*a) {
                    let av = self.value(*a);
                    let ga = Tensor::from_vec(
                        g.rows(),
                        g.cols(),
                        g.data()
                            .iter()
                            .zip(av.data())
                            .map(|(&gz, &x)| gz / x)
                            .collect(),
                    );
                    Self::accum(grads, a.0, ga);
                }
            }
            Op::Sigmoid(a) => {
                if self.tracked(*a) {
                    let y = &node.value;
                    let ga = Tensor::from_vec(
                        g.rows(),
                        g.cols(),
                        g.data()
                            .iter()
                            .zip(y.data())
                            .map(|(&gz, &yv)| gz * yv * (1.0 - yv))
                            .collect(),
                    );
                    Self::accum(grads, a.0, ga);
                }
            }
            Op::Softplus(a) => {
                if self.tracked(*a) {
                    let av = self.value(*a);
                    let ga = Tensor::from_vec(
                        g.rows(),
                        g.cols(),
                        g.data()
                            .iter()
                            .zip(av.data())
                            .map(|(&gz, &x)| gz * sigmoid(x))
                            .collect(),
                    );
                    Self::accum(grads, a.0, ga);
                }
            }
            Op::Silu(a) => {
                if self.tracked(*a) {
                    let av = self.value(*a);
                    let ga = Tensor::from_vec(
                        g.rows(),
                        g.cols(),
                        g.data()
                            .iter()
                            .zip(av.data())
                            .map(|(&gz, &x)| {
                                let s = sigmoid(x);
                                gz * s * (1.0 + x * (1.0 - s))
                            })
                            .collect(),
                    );
                    Self::accum(grads, a.0, ga);
                }
            }
            Op::Tanh(a) => {
                if self.tracked(*a) {
                    let y = &node.value;
                    let ga = Tensor::from_vec(
                        g.rows(),
                        g.cols(),
                        g.data()
                            .iter()
                            .zip(y.data())
                            .map(|(&gz, &yv)| gz * (1.0 - yv * yv))
                            .collect(),
                    );
                    Self::accum(grads, a.0, ga);
                }
            }
            Op::LeakyRelu(a, alpha) => {
                if self.tracked(*a) {
                    let av = self.value(*a);
                    let ga = Tensor::from_vec(
                        g.rows(),
                        g.cols(),
                        g.data()
                            .iter()
                            .zip(av.data())
                            .map(|(&gz, &x)| if x > 0.0 { gz } else { gz * alpha })
                            .collect(),
                    );
                    Self::accum(grads, a.0, ga);
                }
            }
            Op::SoftmaxRows(a) => {
                if self.tracked(*a) {
                    let y = &node.value;
                    let mut ga = Tensor::zeros(g.rows(), g.cols());
                    for i in 0..g.rows() {
                        let dot: f64 = g.row(i).iter().zip(y.row(i)).map(|(&gz, &yv)| gz * yv).sum();
                        for j in 0..g.cols() {
                            ga.set(i, j, y.get(i, j) * (g.get(i, j) - dot));
                        }
                    }
                    Self::accum(grads, a.0, ga);
                }
            }
            Op::LogSumExpRows(a) => {
                if self.tracked(*a) {
                    let av = self.value(*a);
                    let mut ga = Tensor::zeros(av.rows(), av.cols());
                    for i in 0..av.rows() {
                        let row = av.row(i);
                        let mx = row.iter().fold(f64::NEG_INFINITY, |m, &z| m.max(z));
                        let denom: f64 = row.iter().map(|&z| (z - mx).exp()).sum();
                        let gi = g.get(i, 0);
                        for j in 0..av.cols() {
                            ga.set(i, j, gi * (av.get(i, j) - mx).exp() / denom);
                        }
                    }
                    Self::accum(grads, a.0, ga);
                }
            }
            Op::TakeDiag(a) => {
                if self.tracked(*a) {
                    let av = self.value(*a);
                    let mut ga = Tensor::zeros(av.rows(), av.cols());
                    for i in 0..av.rows() {
                        ga.set(i, i, g.get(i, 0));
                    }
                    Self::accum(grads, a.0, ga);
                }
            }
            Op::GatherRows(a, idx) => {
                if self.tracked(*a) {
                    let av = self.value(*a);
                    let mut ga = Tensor::zeros(av.rows(), av.cols());
                    for (k, &i) in idx.iter().enumerate() {
                        for (dst, src) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                            *dst += src;
                        }
                    }
                    Self::accum(grads, a.0, ga);
                }
            }
            Op::SliceRows(a, start, len) => {
                if self.tracked(*a) {
                    let av = self.value(*a);
                    let mut ga = Tensor::zeros(av.rows(), av.cols());
                    for k in 0..*len {
                        ga.row_mut(start + k).copy_from_slice(g.row(k));
                    }
                    Self::accum(grads, a.0, ga);
                }
            }
            Op::SliceCols(a, start, len) => {
                if self.tracked(*a) {
                    let av = self.value(*a);
                    let mut ga = Tensor::zeros(av.rows(), av.cols());
                    for i in 0..av.rows() {
                        ga.row_mut(i)[*start..start + len].copy_from_slice(g.row(i));
                    }
                    Self::accum(grads, a.0, ga);
                }
            }
            Op::ConcatRows(parts) => {
                let mut at = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    if self.tracked(p) {
                        let mut gp = Tensor::zeros(rows, g.cols());
                        for i in 0..rows {
                            gp.row_mut(i).copy_from_slice(g.row(at + i));
                        }
                        Self::accum(grads, p.0, gp);
                    }
                    at += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut at = 0;
                for &p in parts {
                    let cols = self.value(p).cols();
                    if self.tracked(p) {
                        let gp = Tensor::from_fn(g.rows(), cols, |i, j| g.get(i, at + j));
                        Self::accum(grads, p.0, gp);
                    }
                    at += cols;
                }
            }
        }
    }
}
