//! Reverse-mode differentiation over a linear tape.
//!
//! All tensors are 2-D, row-major, f64. A `Tape` owns every intermediate
//! value of one forward evaluation; `Var` is an index into it. Backward
//! walks the tape in reverse and accumulates gradients into leaves.
//! Repeated `backward` calls accumulate; `zero_grads` resets explicitly.
//!
//! A tape is single-threaded by construction (`&mut self` everywhere).
//! Distinct tapes may live on distinct threads.

use crate::error::{CoudaError, Result};

/// Plain tensor value: shape plus row-major data. No gradient state; that
/// lives on the tape nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(CoudaError::shape(
                "tensor",
                format!("{}x{} != data length {}", rows, cols, data.len()),
            ));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { rows: 1, cols: 1, data: vec![v] }
    }

    /// Row vector 1xn.
    pub fn row(data: Vec<f64>) -> Self {
        Tensor { rows: 1, cols: data.len(), data }
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row_slice(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Handle to a value on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    Square(Var),
    PowConst(Var, f64),
    ClampMin(Var, f64),
    SoftmaxRows(Var),
    Mean(Var),
    Sum(Var),
    ConcatRows(Var, Var),
    CosineSimRows(Var, Var),
    Reshape(Var),
    PickPerRow(Var, Vec<usize>),
    ChunkVecmat(Var, Var, usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Matmul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Log(..) => "log",
            Op::Square(..) => "square",
            Op::PowConst(..) => "pow_const",
            Op::ClampMin(..) => "clamp_min",
            Op::SoftmaxRows(..) => "softmax_rowwise",
            Op::Mean(..) => "mean",
            Op::Sum(..) => "sum",
            Op::ConcatRows(..) => "concat_rows",
            Op::CosineSimRows(..) => "cosine_similarity_rowwise",
            Op::Reshape(..) => "reshape",
            Op::PickPerRow(..) => "pick_per_row",
            Op::ChunkVecmat(..) => "chunk_vecmat",
        }
    }
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    grad: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

/// Computation tape. Owns all values of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// True if any recorded node used the named op. Used by tests to audit
    /// which code paths a forward evaluation touched.
    pub fn used_op(&self, name: &str) -> bool {
        self.nodes.iter().any(|n| n.op.name() == name)
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.push(t.rows, t.cols, t.data, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    pub fn scalar_const(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<f64>, requires_grad: bool, op: Op) -> Var {
        let grad = if requires_grad { vec![0.0; data.len()] } else { Vec::new() };
        self.nodes.push(Node { rows, cols, data, grad, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        let n = self.node(v);
        [n.rows, n.cols]
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.node(v).data
    }

    pub fn value(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor { rows: n.rows, cols: n.cols, data: n.data.clone() }
    }

    /// Scalar value of a 1x1 var.
    pub fn scalar_value(&self, v: Var) -> f64 {
        debug_assert_eq!(self.node(v).data.len(), 1);
        self.node(v).data[0]
    }

    /// Accumulated gradient of a requires_grad var. None for non-grad vars.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        let n = self.node(v);
        if n.requires_grad {
            Some(&n.grad)
        } else {
            None
        }
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            for g in &mut n.grad {
                *g = 0.0;
            }
        }
    }

    fn out_flags(&self, a: Var) -> bool {
        self.node(a).requires_grad
    }

    // ── forward ops ──────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = (self.node(a).rows, self.node(a).cols);
        let (br, bc) = (self.node(b).rows, self.node(b).cols);
        if ac != br {
            return Err(CoudaError::shape(
                "matmul",
                format!("{}x{} * {}x{}", ar, ac, br, bc),
            ));
        }
        let mut out = vec![0.0; ar * bc];
        {
            let ad = &self.node(a).data;
            let bd = &self.node(b).data;
            for i in 0..ar {
                for k in 0..ac {
                    let aik = ad[i * ac + k];
                    if aik == 0.0 {
                        continue;
                    }
                    let brow = &bd[k * bc..(k + 1) * bc];
                    let orow = &mut out[i * bc..(i + 1) * bc];
                    for (o, bv) in orow.iter_mut().zip(brow) {
                        *o += aik * bv;
                    }
                }
            }
        }
        let rg = self.out_flags(a) || self.out_flags(b);
        Ok(self.push(ar, bc, out, rg, Op::Matmul(a, b)))
    }

    fn elementwise2(&mut self, a: Var, b: Var, opname: &'static str) -> Result<(usize, usize)> {
        let (ar, ac) = (self.node(a).rows, self.node(a).cols);
        let (br, bc) = (self.node(b).rows, self.node(b).cols);
        if (ar, ac) != (br, bc) {
            return Err(CoudaError::shape(
                opname,
                format!("{}x{} vs {}x{}", ar, ac, br, bc),
            ));
        }
        Ok((ar, ac))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.elementwise2(a, b, "add")?;
        let out: Vec<f64> = self
            .node(a)
            .data
            .iter()
            .zip(&self.node(b).data)
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.out_flags(a) || self.out_flags(b);
        Ok(self.push(r, c, out, rg, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.elementwise2(a, b, "sub")?;
        let out: Vec<f64> = self
            .node(a)
            .data
            .iter()
            .zip(&self.node(b).data)
            .map(|(x, y)| x - y)
            .collect();
        let rg = self.out_flags(a) || self.out_flags(b);
        Ok(self.push(r, c, out, rg, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.elementwise2(a, b, "mul")?;
        let out: Vec<f64> = self
            .node(a)
            .data
            .iter()
            .zip(&self.node(b).data)
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.out_flags(a) || self.out_flags(b);
        Ok(self.push(r, c, out, rg, Op::Mul(a, b)))
    }

    /// n x d plus a 1 x d row vector added to every row (bias add).
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ar, ac) = (self.node(a).rows, self.node(a).cols);
        let (br, bc) = (self.node(bias).rows, self.node(bias).cols);
        if br != 1 || bc != ac {
            return Err(CoudaError::shape(
                "add_row",
                format!("{}x{} + {}x{}", ar, ac, br, bc),
            ));
        }
        let mut out = self.node(a).data.clone();
        {
            let bd = &self.node(bias).data;
            for row in out.chunks_mut(ac) {
                for (o, bv) in row.iter_mut().zip(bd) {
                    *o += bv;
                }
            }
        }
        let rg = self.out_flags(a) || self.out_flags(bias);
        Ok(self.push(ar, ac, out, rg, Op::AddRow(a, bias)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let (r, cc) = (self.node(a).rows, self.node(a).cols);
        let out: Vec<f64> = self.node(a).data.iter().map(|x| x * c).collect();
        let rg = self.out_flags(a);
        self.push(r, cc, out, rg, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let (r, c) = (self.node(a).rows, self.node(a).cols);
        let out: Vec<f64> = self.node(a).data.iter().map(|x| x.max(0.0)).collect();
        let rg = self.out_flags(a);
        self.push(r, c, out, rg, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let (r, c) = (self.node(a).rows, self.node(a).cols);
        let out: Vec<f64> = self
            .node(a)
            .data
            .iter()
            .map(|x| {
                if *x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            })
            .collect();
        let rg = self.out_flags(a);
        self.push(r, c, out, rg, Op::Sigmoid(a))
    }

    /// Natural log; strictly positive input required.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.node(a).data.iter().find(|x| **x <= 0.0) {
            return Err(CoudaError::domain("log", format!("input {} <= 0", bad)));
        }
        let (r, c) = (self.node(a).rows, self.node(a).cols);
        let out: Vec<f64> = self.node(a).data.iter().map(|x| x.ln()).collect();
        let rg = self.out_flags(a);
        Ok(self.push(r, c, out, rg, Op::Log(a)))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let (r, c) = (self.node(a).rows, self.node(a).cols);
        let out: Vec<f64> = self.node(a).data.iter().map(|x| x * x).collect();
        let rg = self.out_flags(a);
        self.push(r, c, out, rg, Op::Square(a))
    }

    /// x^p with constant exponent p >= 0; negative bases are clamped to 0.
    pub fn pow_const(&mut self, a: Var, p: f64) -> Var {
        let (r, c) = (self.node(a).rows, self.node(a).cols);
        let out: Vec<f64> = self
            .node(a)
            .data
            .iter()
            .map(|x| if p == 0.0 { 1.0 } else { x.max(0.0).powf(p) })
            .collect();
        let rg = self.out_flags(a);
        self.push(r, c, out, rg, Op::PowConst(a, p))
    }

    pub fn clamp_min(&mut self, a: Var, lo: f64) -> Var {
        let (r, c) = (self.node(a).rows, self.node(a).cols);
        let out: Vec<f64> = self.node(a).data.iter().map(|x| x.max(lo)).collect();
        let rg = self.out_flags(a);
        self.push(r, c, out, rg, Op::ClampMin(a, lo))
    }

    /// Row-wise softmax with row-max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = (self.node(a).rows, self.node(a).cols);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &self.node(a).data[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let orow = &mut out[i * c..(i + 1) * c];
            let mut z = 0.0;
            for (o, x) in orow.iter_mut().zip(row) {
                *o = (x - m).exp();
                z += *o;
            }
            for o in orow.iter_mut() {
                *o /= z;
            }
        }
        let rg = self.out_flags(a);
        self.push(r, c, out, rg, Op::SoftmaxRows(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.node(a).data.len() as f64;
        let s: f64 = self.node(a).data.iter().sum();
        let rg = self.out_flags(a);
        self.push(1, 1, vec![s / n], rg, Op::Mean(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.node(a).data.iter().sum();
        let rg = self.out_flags(a);
        self.push(1, 1, vec![s], rg, Op::Sum(a))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = (self.node(a).rows, self.node(a).cols);
        let (br, bc) = (self.node(b).rows, self.node(b).cols);
        if ac != bc {
            return Err(CoudaError::shape(
                "concat_rows",
                format!("{}x{} over {}x{}", ar, ac, br, bc),
            ));
        }
        let mut out = self.node(a).data.clone();
        out.extend_from_slice(&self.node(b).data);
        let rg = self.out_flags(a) || self.out_flags(b);
        Ok(self.push(ar + br, ac, out, rg, Op::ConcatRows(a, b)))
    }

    /// Cosine similarity of matching rows, n x d each -> n x 1.
    /// Zero-norm rows are an error, not a silent 0.
    pub fn cosine_sim_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.elementwise2(a, b, "cosine_similarity_rowwise")?;
        let mut out = vec![0.0; r];
        for i in 0..r {
            let ra = &self.node(a).data[i * c..(i + 1) * c];
            let rb = &self.node(b).data[i * c..(i + 1) * c];
            let na = ra.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = rb.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                return Err(CoudaError::domain(
                    "cosine_similarity_rowwise",
                    format!("zero-norm row {}", i),
                ));
            }
            let dot: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
            out[i] = dot / (na * nb);
        }
        let rg = self.out_flags(a) || self.out_flags(b);
        Ok(self.push(r, 1, out, rg, Op::CosineSimRows(a, b)))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let n = self.node(a);
        if n.rows * n.cols != rows * cols {
            return Err(CoudaError::shape(
                "reshape",
                format!("{}x{} -> {}x{}", n.rows, n.cols, rows, cols),
            ));
        }
        let out = n.data.clone();
        let rg = n.requires_grad;
        Ok(self.push(rows, cols, out, rg, Op::Reshape(a)))
    }

    /// out[i] = a[i, idx[i]]; n x K -> n x 1.
    pub fn pick_per_row(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = (self.node(a).rows, self.node(a).cols);
        if idx.len() != r {
            return Err(CoudaError::shape(
                "pick_per_row",
                format!("{} indices for {} rows", idx.len(), r),
            ));
        }
        if let Some(bad) = idx.iter().find(|j| **j >= c) {
            return Err(CoudaError::domain(
                "pick_per_row",
                format!("index {} out of range for {} columns", bad, c),
            ));
        }
        let out: Vec<f64> = idx
            .iter()
            .enumerate()
            .map(|(i, j)| self.node(a).data[i * c + j])
            .collect();
        let rg = self.out_flags(a);
        Ok(self.push(r, 1, out, rg, Op::PickPerRow(a, idx.to_vec())))
    }

    /// Per-row vector-matrix product over K-chunks:
    /// t is n x K*K (row i holds a K x K matrix, row-major), y is n x K,
    /// out[i, m] = sum_k t[i, k*K + m] * y[i, k].
    pub fn chunk_vecmat(&mut self, t: Var, y: Var, k: usize) -> Result<Var> {
        let (tr, tc) = (self.node(t).rows, self.node(t).cols);
        let (yr, yc) = (self.node(y).rows, self.node(y).cols);
        if tc != k * k || yc != k || tr != yr {
            return Err(CoudaError::shape(
                "chunk_vecmat",
                format!("t {}x{}, y {}x{}, k {}", tr, tc, yr, yc, k),
            ));
        }
        let mut out = vec![0.0; tr * k];
        for i in 0..tr {
            let trow = &self.node(t).data[i * tc..(i + 1) * tc];
            let yrow = &self.node(y).data[i * k..(i + 1) * k];
            let orow = &mut out[i * k..(i + 1) * k];
            for kk in 0..k {
                let w = yrow[kk];
                for m in 0..k {
                    orow[m] += trow[kk * k + m] * w;
                }
            }
        }
        let rg = self.out_flags(t) || self.out_flags(y);
        Ok(self.push(tr, k, out, rg, Op::ChunkVecmat(t, y, k)))
    }

    // ── backward ─────────────────────────────────────────────────

    /// Populate gradients of every requires_grad var reachable from `loss`.
    /// Accumulates into existing gradients; call `zero_grads` between
    /// independent passes.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let ln = self.node(loss);
        if (ln.rows, ln.cols) != (1, 1) {
            return Err(CoudaError::NonScalarLoss(vec![ln.rows, ln.cols]));
        }
        if !ln.requires_grad {
            return Err(CoudaError::NoTape);
        }
        // Seed in a separate adjoint buffer so accumulation semantics stay
        // per-call: grads from previous backward calls are kept, adjoints
        // of this call start clean.
        let n = self.nodes.len();
        let mut adj: Vec<Vec<f64>> = (0..=loss.0)
            .map(|i| {
                if self.nodes[i].requires_grad {
                    vec![0.0; self.nodes[i].data.len()]
                } else {
                    Vec::new()
                }
            })
            .collect();
        let _ = n;
        adj[loss.0][0] = 1.0;

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = std::mem::take(&mut adj[i]);
            if g.iter().all(|v| *v == 0.0) {
                adj[i] = g;
                continue;
            }
            let op = self.nodes[i].op.clone();
            self.propagate(i, &g, &op, &mut adj);
            adj[i] = g;
        }

        for (i, a) in adj.into_iter().enumerate() {
            if self.nodes[i].requires_grad {
                for (dst, src) in self.nodes[i].grad.iter_mut().zip(&a) {
                    *dst += src;
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], op: &Op, adj: &mut [Vec<f64>]) {
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (ar, ac) = (self.nodes[a.0].rows, self.nodes[a.0].cols);
                let bc = self.nodes[b.0].cols;
                if rg(*a) {
                    let bd = &self.nodes[b.0].data;
                    let da = &mut adj[a.0];
                    for r in 0..ar {
                        for k in 0..ac {
                            let mut s = 0.0;
                            for c in 0..bc {
                                s += g[r * bc + c] * bd[k * bc + c];
                            }
                            da[r * ac + k] += s;
                        }
                    }
                }
                if rg(*b) {
                    let ad = &self.nodes[a.0].data;
                    let db = &mut adj[b.0];
                    for k in 0..ac {
                        for c in 0..bc {
                            let mut s = 0.0;
                            for r in 0..ar {
                                s += ad[r * ac + k] * g[r * bc + c];
                            }
                            db[k * bc + c] += s;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if rg(*a) {
                    axpy(&mut adj[a.0], g, 1.0);
                }
                if rg(*b) {
                    axpy(&mut adj[b.0], g, 1.0);
                }
            }
            Op::Sub(a, b) => {
                if rg(*a) {
                    axpy(&mut adj[a.0], g, 1.0);
                }
                if rg(*b) {
                    axpy(&mut adj[b.0], g, -1.0);
                }
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    let bd = &self.nodes[b.0].data;
                    for (da, (gv, bv)) in adj[a.0].iter_mut().zip(g.iter().zip(bd)) {
                        *da += gv * bv;
                    }
                }
                if rg(*b) {
                    let ad = &self.nodes[a.0].data;
                    for (db, (gv, av)) in adj[b.0].iter_mut().zip(g.iter().zip(ad)) {
                        *db += gv * av;
                    }
                }
            }
            Op::AddRow(a, bias) => {
                if rg(*a) {
                    axpy(&mut adj[a.0], g, 1.0);
                }
                if rg(*bias) {
                    let c = self.nodes[bias.0].cols;
                    let db = &mut adj[bias.0];
                    for row in g.chunks(c) {
                        for (d, gv) in db.iter_mut().zip(row) {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Scale(a, c) => {
                if rg(*a) {
                    axpy(&mut adj[a.0], g, *c);
                }
            }
            Op::Relu(a) => {
                if rg(*a) {
                    let ad = &self.nodes[a.0].data;
                    for (da, (gv, av)) in adj[a.0].iter_mut().zip(g.iter().zip(ad)) {
                        if *av > 0.0 {
                            *da += gv;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                if rg(*a) {
                    let sd = &self.nodes[i].data;
                    for (da, (gv, sv)) in adj[a.0].iter_mut().zip(g.iter().zip(sd)) {
                        *da += gv * sv * (1.0 - sv);
                    }
                }
            }
            Op::Log(a) => {
                if rg(*a) {
                    let ad = &self.nodes[a.0].data;
                    for (da, (gv, av)) in adj[a.0].iter_mut().zip(g.iter().zip(ad)) {
                        *da += gv / av;
                    }
                }
            }
            Op::Square(a) => {
                if rg(*a) {
                    let ad = &self.nodes[a.0].data;
                    for (da, (gv, av)) in adj[a.0].iter_mut().zip(g.iter().zip(ad)) {
                        *da += gv * 2.0 * av;
                    }
                }
            }
            Op::PowConst(a, p) => {
                if rg(*a) && *p != 0.0 {
                    let ad = &self.nodes[a.0].data;
                    for (da, (gv, av)) in adj[a.0].iter_mut().zip(g.iter().zip(ad)) {
                        let base = av.max(if *p < 1.0 { 1e-12 } else { 0.0 });
                        *da += gv * p * base.powf(p - 1.0);
                    }
                }
            }
            Op::ClampMin(a, lo) => {
                if rg(*a) {
                    let ad = &self.nodes[a.0].data;
                    for (da, (gv, av)) in adj[a.0].iter_mut().zip(g.iter().zip(ad)) {
                        if *av >= *lo {
                            *da += gv;
                        }
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                if rg(*a) {
                    let c = self.nodes[i].cols;
                    let sd = &self.nodes[i].data;
                    let da = &mut adj[a.0];
                    for r in 0..self.nodes[i].rows {
                        let s = &sd[r * c..(r + 1) * c];
                        let gr = &g[r * c..(r + 1) * c];
                        let dot: f64 = s.iter().zip(gr).map(|(sv, gv)| sv * gv).sum();
                        for j in 0..c {
                            da[r * c + j] += s[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::Mean(a) => {
                if rg(*a) {
                    let n = self.nodes[a.0].data.len() as f64;
                    let gv = g[0] / n;
                    for da in adj[a.0].iter_mut() {
                        *da += gv;
                    }
                }
            }
            Op::Sum(a) => {
                if rg(*a) {
                    let gv = g[0];
                    for da in adj[a.0].iter_mut() {
                        *da += gv;
                    }
                }
            }
            Op::ConcatRows(a, b) => {
                let alen = self.nodes[a.0].data.len();
                if rg(*a) {
                    axpy(&mut adj[a.0], &g[..alen], 1.0);
                }
                if rg(*b) {
                    axpy(&mut adj[b.0], &g[alen..], 1.0);
                }
            }
            Op::CosineSimRows(a, b) => {
                let c = self.nodes[a.0].cols;
                let rows = self.nodes[a.0].rows;
                let cd = &self.nodes[i].data;
                for r in 0..rows {
                    let gv = g[r];
                    if gv == 0.0 {
                        continue;
                    }
                    let ra = &self.nodes[a.0].data[r * c..(r + 1) * c];
                    let rb = &self.nodes[b.0].data[r * c..(r + 1) * c];
                    let na2: f64 = ra.iter().map(|x| x * x).sum();
                    let nb2: f64 = rb.iter().map(|x| x * x).sum();
                    let na = na2.sqrt();
                    let nb = nb2.sqrt();
                    let cv = cd[r];
                    if rg(*a) {
                        let da = &mut adj[a.0];
                        for j in 0..c {
                            da[r * c + j] += gv * (rb[j] / (na * nb) - cv * ra[j] / na2);
                        }
                    }
                    if rg(*b) {
                        let db = &mut adj[b.0];
                        for j in 0..c {
                            db[r * c + j] += gv * (ra[j] / (na * nb) - cv * rb[j] / nb2);
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if rg(*a) {
                    axpy(&mut adj[a.0], g, 1.0);
                }
            }
            Op::PickPerRow(a, idx) => {
                if rg(*a) {
                    let c = self.nodes[a.0].cols;
                    let da = &mut adj[a.0];
                    for (r, j) in idx.iter().enumerate() {
                        da[r * c + j] += g[r];
                    }
                }
            }
            Op::ChunkVecmat(t, y, k) => {
                let k = *k;
                let rows = self.nodes[y.0].rows;
                for r in 0..rows {
                    let gr = &g[r * k..(r + 1) * k];
                    if rg(*t) {
                        let yrow: Vec<f64> =
                            self.nodes[y.0].data[r * k..(r + 1) * k].to_vec();
                        let dt = &mut adj[t.0];
                        for kk in 0..k {
                            for m in 0..k {
                                dt[r * k * k + kk * k + m] += gr[m] * yrow[kk];
                            }
                        }
                    }
                    if rg(*y) {
                        let trow: Vec<f64> =
                            self.nodes[t.0].data[r * k * k..(r + 1) * k * k].to_vec();
                        let dy = &mut adj[y.0];
                        for kk in 0..k {
                            let mut s = 0.0;
                            for m in 0..k {
                                s += trow[kk * k + m] * gr[m];
                            }
                            dy[r * k + kk] += s;
                        }
                    }
                }
            }
        }
    }
}

fn axpy(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}
