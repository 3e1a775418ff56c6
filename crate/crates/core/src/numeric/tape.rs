//! Define-by-run reverse-mode differentiation over 2-D `f64` matrices.
//!
//! Every value on the tape is a row-major matrix. A node is appended for each
//! operation, so node ids are already in topological order and `backward`
//! simply walks the tape in reverse.

use super::params::{ParamId, ParamStore};
use super::tensor::{sigmoid, softmax_unchecked};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `[m,n] + [1,n]`
    AddRow(Var, Var),
    /// `[m,n] ⊙ [m,1]`
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Transpose(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    /// Row gather; each output row concatenates `width` source rows.
    Gather {
        src: Var,
        idx: Vec<usize>,
    },
    SoftmaxRows(Var),
    /// Per-row cross-entropy from logits; rows with no target contribute 0.
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
    },
    Sum(Var),
    RowSum(Var),
    RowDot(Var, Var),
    FrobNorm(Var),
    MaxPoolSegments {
        src: Var,
        argmax: Vec<usize>,
    },
}

#[derive(Clone, Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    grad: Vec<f64>,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Computation tape. Rebuilt for every batch.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    last_visits: usize,
}

fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: strides describe in-bounds views of the slices; c is row-major m×n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of records processed by the most recent `backward` call.
    pub fn last_backward_visits(&self) -> usize {
        self.last_visits
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            rows,
            cols,
            value,
            grad: Vec::new(),
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, rows: usize, cols: usize, value: Vec<f64>, requires_grad: bool) -> Var {
        assert_eq!(value.len(), rows * cols, "leaf shape mismatch");
        self.nodes.push(Node {
            rows,
            cols,
            value,
            grad: Vec::new(),
            op: Op::Leaf,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        self.leaf(rows, cols, value, false)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.constant(1, 1, vec![x])
    }

    /// Binds a parameter as a leaf. Gradients flow back into the store on
    /// [`Tape::backward`] when the tensor requires grad.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let t = store.get(id);
        let v = self.leaf(t.rows(), t.cols(), t.values().to_vec(), t.requires_grad());
        self.nodes[v.0].param = Some(id);
        v
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    /// Gradient of the last backward root w.r.t. `v`, if `v` takes part in it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        let g = &self.nodes[v.0].grad;
        (!g.is_empty()).then_some(g.as_slice())
    }

    fn check_same(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::usage(format!(
                "{what}: shape {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let (r, c) = self.shape(a);
        let value = self.nodes[a.0].value.iter().map(|&x| f(x)).collect();
        self.push(r, c, value, op, &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(Error::usage(format!(
                "matmul: [{m},{k}] x [{k2},{n}]"
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            &self.nodes[a.0].value,
            (k as isize, 1),
            &self.nodes[b.0].value,
            (n as isize, 1),
            &mut out,
        );
        Ok(self.push(m, n, out, Op::MatMul(a, b), &[a, b]))
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (r, c) = self.shape(a);
        let value = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(r, c, value, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "add")?;
        Ok(self.zip(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "sub")?;
        Ok(self.zip(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "mul")?;
        Ok(self.zip(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// Adds a `[1,n]` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.shape(a);
        if self.shape(row) != (1, n) {
            return Err(Error::usage(format!(
                "add_row: [{m},{n}] + {:?}",
                self.shape(row)
            )));
        }
        let r = &self.nodes[row.0].value;
        let value = self.nodes[a.0]
            .value
            .chunks(n)
            .flat_map(|chunk| chunk.iter().zip(r).map(|(x, y)| x + y))
            .collect();
        Ok(self.push(m, n, value, Op::AddRow(a, row), &[a, row]))
    }

    /// Scales row `i` of `a` by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (m, n) = self.shape(a);
        if self.shape(col) != (m, 1) {
            return Err(Error::usage(format!(
                "mul_col: [{m},{n}] * {:?}",
                self.shape(col)
            )));
        }
        let s = &self.nodes[col.0].value;
        let value = self.nodes[a.0]
            .value
            .chunks(n)
            .zip(s)
            .flat_map(|(chunk, &k)| chunk.iter().map(move |x| x * k))
            .collect();
        Ok(self.push(m, n, value, Op::MulCol(a, col), &[a, col]))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Op::Scale(a, k), |x| x * k)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + k)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    /// Elementwise clamp; the gradient is zero where the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let src = &self.nodes[a.0].value;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        self.push(n, m, out, Op::Transpose(a), &[a])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.shape(a);
        if start + len > n || len == 0 {
            return Err(Error::usage(format!(
                "slice_cols {start}..{} of {n} columns",
                start + len
            )));
        }
        let value = self.nodes[a.0]
            .value
            .chunks(n)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        Ok(self.push(m, len, value, Op::SliceCols(a, start), &[a]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = match parts.first() {
            Some(&p) => self.shape(p).0,
            None => return Err(Error::usage("concat_cols of nothing")),
        };
        if parts.iter().any(|&p| self.shape(p).0 != m) {
            return Err(Error::usage("concat_cols: row counts differ"));
        }
        let n: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut value = Vec::with_capacity(m * n);
        for i in 0..m {
            for &p in parts {
                let c = self.nodes[p.0].cols;
                value.extend_from_slice(&self.nodes[p.0].value[i * c..(i + 1) * c]);
            }
        }
        Ok(self.push(m, n, value, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Output row `q` is the concatenation of source rows
    /// `idx[q*width .. (q+1)*width]`.
    pub fn gather(&mut self, src: Var, idx: &[usize], width: usize) -> Result<Var> {
        let (m, n) = self.shape(src);
        if width == 0 || idx.len() % width != 0 {
            return Err(Error::usage("gather: index count not a multiple of width"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(Error::usage(format!("gather: row {bad} out of {m}")));
        }
        let s = &self.nodes[src.0].value;
        let mut value = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            value.extend_from_slice(&s[i * n..(i + 1) * n]);
        }
        let rows = idx.len() / width;
        Ok(self.push(
            rows,
            width * n,
            value,
            Op::Gather {
                src,
                idx: idx.to_vec(),
            },
            &[src],
        ))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let value = self.nodes[a.0]
            .value
            .chunks(n)
            .flat_map(softmax_unchecked)
            .collect();
        self.push(m, n, value, Op::SoftmaxRows(a), &[a])
    }

    /// Per-row negative log-likelihood `logsumexp(row) - row[target]`, as `[m,1]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let (m, n) = self.shape(logits);
        if targets.len() != m {
            return Err(Error::usage(format!(
                "cross_entropy: {} targets for {m} rows",
                targets.len()
            )));
        }
        let mut probs = Vec::with_capacity(m * n);
        let mut out = Vec::with_capacity(m);
        for (row, t) in self.nodes[logits.0].value.chunks(n).zip(targets) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let lse = max + total.ln();
            probs.extend(row.iter().map(|x| (x - lse).exp()));
            out.push(match t {
                Some(t) if *t >= n => {
                    return Err(Error::usage(format!("cross_entropy: target {t} >= {n}")))
                }
                Some(t) => lse - row[*t],
                None => 0.0,
            });
        }
        Ok(self.push(
            m,
            1,
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.iter().sum();
        self.push(1, 1, vec![s], Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let value = self.nodes[a.0]
            .value
            .chunks(n)
            .map(|r| r.iter().sum())
            .collect();
        self.push(m, 1, value, Op::RowSum(a), &[a])
    }

    /// Row-wise inner products, `[m,1]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "row_dot")?;
        let (m, n) = self.shape(a);
        let value = self.nodes[a.0]
            .value
            .chunks(n)
            .zip(self.nodes[b.0].value.chunks(n))
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum())
            .collect();
        Ok(self.push(m, 1, value, Op::RowDot(a, b), &[a, b]))
    }

    pub fn frobenius_norm(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0]
            .value
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        self.push(1, 1, vec![s], Op::FrobNorm(a), &[a])
    }

    /// Column-wise max over consecutive row segments of the given lengths.
    pub fn max_pool_segments(&mut self, a: Var, seg_lens: &[usize]) -> Result<Var> {
        let (m, n) = self.shape(a);
        if seg_lens.iter().sum::<usize>() != m || seg_lens.contains(&0) {
            return Err(Error::usage("max_pool_segments: segments must tile the rows"));
        }
        let src = &self.nodes[a.0].value;
        let mut value = Vec::with_capacity(seg_lens.len() * n);
        let mut argmax = Vec::with_capacity(seg_lens.len() * n);
        let mut start = 0;
        for &len in seg_lens {
            for j in 0..n {
                let mut best = start;
                for r in start + 1..start + len {
                    if src[r * n + j] > src[best * n + j] {
                        best = r;
                    }
                }
                value.push(src[best * n + j]);
                argmax.push(best);
            }
            start += len;
        }
        Ok(self.push(
            seg_lens.len(),
            n,
            value,
            Op::MaxPoolSegments { src: a, argmax },
            &[a],
        ))
    }

    /// Backpropagates from the scalar `root`, then adds the resulting
    /// parameter gradients into `store`. Node gradients are recomputed from
    /// scratch on every call; store gradients accumulate until the caller
    /// zeroes them.
    pub fn backward(&mut self, root: Var, store: &mut ParamStore) -> Result<()> {
        self.backward_only(root)?;
        for node in &self.nodes {
            if let (Some(pid), false) = (node.param, node.grad.is_empty()) {
                let t = store.get_mut(pid);
                if t.requires_grad() {
                    for (g, d) in t.grad_mut().iter_mut().zip(&node.grad) {
                        *g += d;
                    }
                }
            }
        }
        Ok(())
    }

    /// Backpropagates from `root` without touching any parameter store.
    pub fn backward_only(&mut self, root: Var) -> Result<()> {
        if self.shape(root) != (1, 1) {
            return Err(Error::usage(format!(
                "backward from non-scalar root of shape {:?}",
                self.shape(root)
            )));
        }
        for n in &mut self.nodes {
            n.grad.clear();
        }
        self.last_visits = 0;
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.nodes[root.0].grad = vec![1.0];
        for i in (0..=root.0).rev() {
            if self.nodes[i].grad.is_empty() || !self.nodes[i].requires_grad {
                continue;
            }
            self.last_visits += 1;
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            backprop(node, before);
        }
        Ok(())
    }
}

/// Moves `v`'s value out so `target`'s grad can be borrowed mutably; copies
/// when both are the same node.
fn borrow_value(nodes: &mut [Node], v: Var, target: Var) -> Vec<f64> {
    if v == target {
        nodes[v.0].value.clone()
    } else {
        std::mem::take(&mut nodes[v.0].value)
    }
}

fn restore_value(nodes: &mut [Node], v: Var, target: Var, value: Vec<f64>) {
    if v != target {
        nodes[v.0].value = value;
    }
}

fn grad_of(nodes: &mut [Node], v: Var) -> Option<&mut Vec<f64>> {
    let n = &mut nodes[v.0];
    if !n.requires_grad {
        return None;
    }
    if n.grad.is_empty() {
        n.grad = vec![0.0; n.rows * n.cols];
    }
    Some(&mut n.grad)
}

fn backprop(node: &Node, nodes: &mut [Node]) {
    let g = &node.grad;
    let out = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = (nodes[a.0].rows, nodes[a.0].cols);
            let n = nodes[b.0].cols;
            if nodes[a.0].requires_grad {
                let bv = borrow_value(nodes, *b, *a);
                let ga = grad_of(nodes, *a).unwrap();
                // dA = dC · Bᵀ
                gemm(m, n, k, g, (n as isize, 1), &bv, (1, n as isize), ga);
                restore_value(nodes, *b, *a, bv);
            }
            if nodes[b.0].requires_grad {
                let av = borrow_value(nodes, *a, *b);
                let gb = grad_of(nodes, *b).unwrap();
                // dB = Aᵀ · dC
                gemm(k, m, n, &av, (1, k as isize), g, (n as isize, 1), gb);
                restore_value(nodes, *a, *b, av);
            }
        }
        Op::Add(a, b) => {
            for v in [a, b] {
                if let Some(gv) = grad_of(nodes, *v) {
                    gv.iter_mut().zip(g).for_each(|(x, d)| *x += d);
                }
            }
        }
        Op::Sub(a, b) => {
            if let Some(ga) = grad_of(nodes, *a) {
                ga.iter_mut().zip(g).for_each(|(x, d)| *x += d);
            }
            if let Some(gb) = grad_of(nodes, *b) {
                gb.iter_mut().zip(g).for_each(|(x, d)| *x -= d);
            }
        }
        Op::Mul(a, b) => {
            if nodes[a.0].requires_grad {
                let bv = borrow_value(nodes, *b, *a);
                let ga = grad_of(nodes, *a).unwrap();
                for ((x, d), y) in ga.iter_mut().zip(g).zip(&bv) {
                    *x += d * y;
                }
                restore_value(nodes, *b, *a, bv);
            }
            if nodes[b.0].requires_grad {
                let av = borrow_value(nodes, *a, *b);
                let gb = grad_of(nodes, *b).unwrap();
                for ((x, d), y) in gb.iter_mut().zip(g).zip(&av) {
                    *x += d * y;
                }
                restore_value(nodes, *a, *b, av);
            }
        }
        Op::AddRow(a, row) => {
            let n = node.cols;
            if let Some(ga) = grad_of(nodes, *a) {
                ga.iter_mut().zip(g).for_each(|(x, d)| *x += d);
            }
            if let Some(gr) = grad_of(nodes, *row) {
                for chunk in g.chunks(n) {
                    gr.iter_mut().zip(chunk).for_each(|(x, d)| *x += d);
                }
            }
        }
        Op::MulCol(a, col) => {
            let n = node.cols;
            if nodes[a.0].requires_grad {
                let cv = borrow_value(nodes, *col, *a);
                let ga = grad_of(nodes, *a).unwrap();
                for ((gr, dr), k) in ga.chunks_mut(n).zip(g.chunks(n)).zip(&cv) {
                    gr.iter_mut().zip(dr).for_each(|(x, d)| *x += d * k);
                }
                restore_value(nodes, *col, *a, cv);
            }
            if nodes[col.0].requires_grad {
                let av = borrow_value(nodes, *a, *col);
                let gc = grad_of(nodes, *col).unwrap();
                for ((x, dr), ar) in gc.iter_mut().zip(g.chunks(n)).zip(av.chunks(n)) {
                    *x += dr.iter().zip(ar).map(|(d, y)| d * y).sum::<f64>();
                }
                restore_value(nodes, *a, *col, av);
            }
        }
        Op::Scale(a, k) => {
            if let Some(ga) = grad_of(nodes, *a) {
                ga.iter_mut().zip(g).for_each(|(x, d)| *x += d * k);
            }
        }
        Op::AddScalar(a) => {
            if let Some(ga) = grad_of(nodes, *a) {
                ga.iter_mut().zip(g).for_each(|(x, d)| *x += d);
            }
        }
        Op::Tanh(a) => {
            if let Some(ga) = grad_of(nodes, *a) {
                for ((x, d), y) in ga.iter_mut().zip(g).zip(out) {
                    *x += d * (1.0 - y * y);
                }
            }
        }
        Op::Sigmoid(a) => {
            if let Some(ga) = grad_of(nodes, *a) {
                for ((x, d), y) in ga.iter_mut().zip(g).zip(out) {
                    *x += d * y * (1.0 - y);
                }
            }
        }
        Op::Exp(a) => {
            if let Some(ga) = grad_of(nodes, *a) {
                for ((x, d), y) in ga.iter_mut().zip(g).zip(out) {
                    *x += d * y;
                }
            }
        }
        Op::Log(a) | Op::Relu(a) | Op::Square(a) | Op::Clamp(a, ..) => {
            if !nodes[a.0].requires_grad {
                return;
            }
            let av = std::mem::take(&mut nodes[a.0].value);
            let ga = grad_of(nodes, *a).unwrap();
            for ((x, d), &u) in ga.iter_mut().zip(g).zip(&av) {
                *x += d * match &node.op {
                    Op::Log(_) => 1.0 / u,
                    Op::Relu(_) => {
                        if u > 0.0 {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    Op::Square(_) => 2.0 * u,
                    Op::Clamp(_, lo, hi) => {
                        if u >= *lo && u <= *hi {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    _ => unreachable!(),
                };
            }
            nodes[a.0].value = av;
        }
        Op::Transpose(a) => {
            let (m, n) = (nodes[a.0].rows, nodes[a.0].cols);
            if let Some(ga) = grad_of(nodes, *a) {
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] += g[j * m + i];
                    }
                }
            }
        }
        Op::SliceCols(a, start) => {
            let n = nodes[a.0].cols;
            let len = node.cols;
            if let Some(ga) = grad_of(nodes, *a) {
                for (gr, dr) in ga.chunks_mut(n).zip(g.chunks(len)) {
                    gr[*start..start + len]
                        .iter_mut()
                        .zip(dr)
                        .for_each(|(x, d)| *x += d);
                }
            }
        }
        Op::ConcatCols(parts) => {
            let total = node.cols;
            let mut offset = 0;
            for p in parts {
                let c = nodes[p.0].cols;
                if let Some(gp) = grad_of(nodes, *p) {
                    for (gr, dr) in gp.chunks_mut(c).zip(g.chunks(total)) {
                        gr.iter_mut()
                            .zip(&dr[offset..offset + c])
                            .for_each(|(x, d)| *x += d);
                    }
                }
                offset += c;
            }
        }
        Op::Gather { src, idx, .. } => {
            let n = nodes[src.0].cols;
            if let Some(gs) = grad_of(nodes, *src) {
                for (k, &i) in idx.iter().enumerate() {
                    gs[i * n..(i + 1) * n]
                        .iter_mut()
                        .zip(&g[k * n..(k + 1) * n])
                        .for_each(|(x, d)| *x += d);
                }
            }
        }
        Op::SoftmaxRows(a) => {
            let n = node.cols;
            if let Some(ga) = grad_of(nodes, *a) {
                for ((gr, dr), yr) in ga.chunks_mut(n).zip(g.chunks(n)).zip(out.chunks(n)) {
                    let s: f64 = dr.iter().zip(yr).map(|(d, y)| d * y).sum();
                    for ((x, d), y) in gr.iter_mut().zip(dr).zip(yr) {
                        *x += y * (d - s);
                    }
                }
            }
        }
        Op::CrossEntropy {
            logits,
            targets,
            probs,
        } => {
            let n = nodes[logits.0].cols;
            if let Some(gl) = grad_of(nodes, *logits) {
                for (i, t) in targets.iter().enumerate() {
                    let Some(t) = t else { continue };
                    let d = g[i];
                    let row = &mut gl[i * n..(i + 1) * n];
                    for (x, p) in row.iter_mut().zip(&probs[i * n..(i + 1) * n]) {
                        *x += d * p;
                    }
                    row[*t] -= d;
                }
            }
        }
        Op::Sum(a) => {
            if let Some(ga) = grad_of(nodes, *a) {
                ga.iter_mut().for_each(|x| *x += g[0]);
            }
        }
        Op::RowSum(a) => {
            let n = nodes[a.0].cols;
            if let Some(ga) = grad_of(nodes, *a) {
                for (gr, d) in ga.chunks_mut(n).zip(g) {
                    gr.iter_mut().for_each(|x| *x += d);
                }
            }
        }
        Op::RowDot(a, b) => {
            let n = nodes[a.0].cols;
            for (this, other) in [(a, b), (b, a)] {
                if !nodes[this.0].requires_grad {
                    continue;
                }
                let ov = borrow_value(nodes, *other, *this);
                let gt = grad_of(nodes, *this).unwrap();
                for ((gr, orow), d) in gt.chunks_mut(n).zip(ov.chunks(n)).zip(g) {
                    gr.iter_mut().zip(orow).for_each(|(x, y)| *x += d * y);
                }
                restore_value(nodes, *other, *this, ov);
            }
        }
        Op::FrobNorm(a) => {
            let norm = out[0];
            if !nodes[a.0].requires_grad || norm == 0.0 {
                return;
            }
            let av = std::mem::take(&mut nodes[a.0].value);
            let ga = grad_of(nodes, *a).unwrap();
            for (x, u) in ga.iter_mut().zip(&av) {
                *x += g[0] * u / norm;
            }
            nodes[a.0].value = av;
        }
        Op::MaxPoolSegments { src, argmax } => {
            let n = node.cols;
            if let Some(gs) = grad_of(nodes, *src) {
                for (k, &r) in argmax.iter().enumerate() {
                    let j = k % n;
                    gs[r * n + j] += g[k];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::tensor::Tensor;

    #[test]
    fn product_rule() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::param(vec![1], vec![3.0]).unwrap());
        let y = store.add("y", Tensor::param(vec![1], vec![5.0]).unwrap());
        let mut tape = Tape::new();
        let xv = tape.param(&store, x);
        let yv = tape.param(&store, y);
        let p = tape.mul(xv, yv).unwrap();
        tape.backward(p, &mut store).unwrap();
        assert_eq!(store.get(x).grad(), &[5.0]);
        assert_eq!(store.get(y).grad(), &[3.0]);
        assert_eq!(tape.grad(p), Some(&[1.0][..]));
        // repeated backward accumulates into the store
        tape.backward(p, &mut store).unwrap();
        assert_eq!(store.get(x).grad(), &[10.0]);
    }

    #[test]
    fn constant_input_untouched() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::param(vec![1], vec![3.0]).unwrap());
        let c = store.add("c", Tensor::constant(vec![1], vec![2.0]).unwrap());
        let mut tape = Tape::new();
        let xv = tape.param(&store, x);
        let cv = tape.param(&store, c);
        let p = tape.mul(xv, cv).unwrap();
        tape.backward(p, &mut store).unwrap();
        assert_eq!(store.get(c).grad(), &[0.0]);
        assert_eq!(tape.grad(cv), None);
        assert_eq!(store.get(x).grad(), &[2.0]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut tape = Tape::new();
        let a = tape.leaf(1, 2, vec![1.0, 2.0], true);
        assert!(matches!(tape.backward_only(a), Err(Error::Usage(_))));
    }

    #[test]
    fn each_record_visited_once() {
        let mut tape = Tape::new();
        let a = tape.leaf(2, 2, vec![1.0, 2.0, 3.0, 4.0], true);
        let b = tape.leaf(2, 2, vec![0.5, -1.0, 2.0, 0.0], true);
        let m = tape.matmul(a, b).unwrap();
        let t = tape.tanh(m);
        let s = tape.add(t, a).unwrap();
        let root = tape.sum(s);
        tape.backward_only(root).unwrap();
        // every node on this tape is on a path to the root
        assert_eq!(tape.last_backward_visits(), tape.len());
        tape.backward_only(root).unwrap();
        assert_eq!(tape.last_backward_visits(), tape.len());
    }

    #[test]
    fn shape_errors() {
        let mut tape = Tape::new();
        let a = tape.leaf(2, 3, vec![0.0; 6], true);
        let b = tape.leaf(2, 3, vec![0.0; 6], true);
        assert!(tape.matmul(a, b).is_err());
        let c = tape.leaf(3, 2, vec![0.0; 6], true);
        assert!(tape.add(a, c).is_err());
        assert!(tape.slice_cols(a, 2, 2).is_err());
        assert!(tape.gather(a, &[0, 2], 1).is_err());
    }
}
