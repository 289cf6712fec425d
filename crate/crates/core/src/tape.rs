//! Minimal reverse-mode accumulation over dense matrices. The equivariant
//! network records its forward pass on a [`Tape`]; calling
//! [`Tape::backward`] walks the recorded ops in reverse. Forward-only
//! callers simply never call `backward`.

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Tensor { rows: r, cols: c, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Tensor { rows, cols, data }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub type NodeId = usize;

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    /// (n,m) + broadcast of a (1,m) row.
    AddRowBroadcast(NodeId, NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    GatherRows(NodeId, Vec<usize>),
    /// out[idx[r]] += in[r]; output has `usize` rows.
    ScatterAddRows(NodeId, Vec<usize>, usize),
    Silu(NodeId),
    Clamp(NodeId, f64, f64),
    MulElem(NodeId, NodeId),
    /// (n,m) * column (n,1), broadcast across columns.
    MulColBroadcast(NodeId, NodeId),
    /// Per-row Euclidean norm: (n,3) -> (n,1).
    RowL2Norm(NodeId),
    /// Gaussian radial basis over a (n,1) distance column -> (n,C).
    RbfExpand(NodeId, Vec<f64>, f64),
    Softmax(NodeId),
    /// mean_r ||row_r - target_r||^2 -> (1,1).
    MseRows(NodeId, Tensor),
    /// mean_r CE(softmax(logits_r), target_r) -> (1,1).
    CeWithLogits(NodeId, Tensor),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.rows, "matmul shape mismatch");
    let mut out = Tensor::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let av = a.data[i * a.cols + k];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn matmul_at_b(a: &Tensor, b: &Tensor) -> Tensor {
    // a^T * b, a: (n,m), b: (n,p) -> (m,p)
    assert_eq!(a.rows, b.rows);
    let mut out = Tensor::zeros(a.cols, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let av = a.data[i * a.cols + k];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[i * b.cols..(i + 1) * b.cols];
            let orow = &mut out.data[k * b.cols..(k + 1) * b.cols];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn matmul_a_bt(a: &Tensor, b: &Tensor) -> Tensor {
    // a * b^T, a: (n,m), b: (p,m) -> (n,p)
    assert_eq!(a.cols, b.cols);
    let mut out = Tensor::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let arow = &a.data[i * a.cols..(i + 1) * a.cols];
        for j in 0..b.rows {
            let brow = &b.data[j * b.cols..(j + 1) * b.cols];
            let mut s = 0.0;
            for (av, bv) in arow.iter().zip(brow) {
                s += av * bv;
            }
            out.data[i * b.rows + j] = s;
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..x.rows {
        let row = &mut out.data[r * x.cols..(r + 1) * x.cols];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    out
}

const NORM_EPS: f64 = 1e-12;

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!((ta.rows, ta.cols), (tb.rows, tb.cols));
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect();
        let v = Tensor::from_vec(ta.rows, ta.cols, data);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!((ta.rows, ta.cols), (tb.rows, tb.cols));
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x - y).collect();
        let v = Tensor::from_vec(ta.rows, ta.cols, data);
        self.push(v, Op::Sub(a, b))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let ta = &self.nodes[a].value;
        let v = Tensor::from_vec(ta.rows, ta.cols, ta.data.iter().map(|x| x * s).collect());
        self.push(v, Op::Scale(a, s))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = matmul(&self.nodes[a].value, &self.nodes[b].value);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add_row_broadcast(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (ta, tr) = (&self.nodes[a].value, &self.nodes[row].value);
        assert_eq!(tr.rows, 1);
        assert_eq!(ta.cols, tr.cols);
        let mut v = ta.clone();
        for r in 0..v.rows {
            for c in 0..v.cols {
                v.data[r * v.cols + c] += tr.data[c];
            }
        }
        self.push(v, Op::AddRowBroadcast(a, row))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.nodes[parts[0]].value.rows;
        let total: usize = parts.iter().map(|&p| self.nodes[p].value.cols).sum();
        let mut v = Tensor::zeros(rows, total);
        let mut off = 0;
        for &p in parts {
            let tp = &self.nodes[p].value;
            assert_eq!(tp.rows, rows);
            for r in 0..rows {
                for c in 0..tp.cols {
                    v.data[r * total + off + c] = tp.data[r * tp.cols + c];
                }
            }
            off += tp.cols;
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        let cols = self.nodes[parts[0]].value.cols;
        let total: usize = parts.iter().map(|&p| self.nodes[p].value.rows).sum();
        let mut data = Vec::with_capacity(total * cols);
        for &p in parts {
            let tp = &self.nodes[p].value;
            assert_eq!(tp.cols, cols);
            data.extend_from_slice(&tp.data);
        }
        self.push(Tensor::from_vec(total, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn gather_rows(&mut self, a: NodeId, idx: &[usize]) -> NodeId {
        let ta = &self.nodes[a].value;
        let mut v = Tensor::zeros(idx.len(), ta.cols);
        for (r, &i) in idx.iter().enumerate() {
            v.data[r * ta.cols..(r + 1) * ta.cols].copy_from_slice(ta.row(i));
        }
        self.push(v, Op::GatherRows(a, idx.to_vec()))
    }

    pub fn scatter_add_rows(&mut self, a: NodeId, idx: &[usize], out_rows: usize) -> NodeId {
        let ta = &self.nodes[a].value;
        assert_eq!(ta.rows, idx.len());
        let mut v = Tensor::zeros(out_rows, ta.cols);
        for (r, &i) in idx.iter().enumerate() {
            for c in 0..ta.cols {
                v.data[i * ta.cols + c] += ta.data[r * ta.cols + c];
            }
        }
        self.push(v, Op::ScatterAddRows(a, idx.to_vec(), out_rows))
    }

    pub fn silu(&mut self, a: NodeId) -> NodeId {
        let ta = &self.nodes[a].value;
        let data = ta.data.iter().map(|&x| x * sigmoid(x)).collect();
        let v = Tensor::from_vec(ta.rows, ta.cols, data);
        self.push(v, Op::Silu(a))
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let ta = &self.nodes[a].value;
        let data = ta.data.iter().map(|&x| x.clamp(lo, hi)).collect();
        let v = Tensor::from_vec(ta.rows, ta.cols, data);
        self.push(v, Op::Clamp(a, lo, hi))
    }

    pub fn mul_elem(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!((ta.rows, ta.cols), (tb.rows, tb.cols));
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect();
        let v = Tensor::from_vec(ta.rows, ta.cols, data);
        self.push(v, Op::MulElem(a, b))
    }

    pub fn mul_col_broadcast(&mut self, a: NodeId, col: NodeId) -> NodeId {
        let (ta, tc) = (&self.nodes[a].value, &self.nodes[col].value);
        assert_eq!(tc.cols, 1);
        assert_eq!(ta.rows, tc.rows);
        let mut v = ta.clone();
        for r in 0..v.rows {
            let s = tc.data[r];
            for c in 0..v.cols {
                v.data[r * v.cols + c] *= s;
            }
        }
        self.push(v, Op::MulColBroadcast(a, col))
    }

    pub fn row_l2_norm(&mut self, a: NodeId) -> NodeId {
        let ta = &self.nodes[a].value;
        let mut v = Tensor::zeros(ta.rows, 1);
        for r in 0..ta.rows {
            let s: f64 = ta.row(r).iter().map(|x| x * x).sum();
            v.data[r] = s.sqrt();
        }
        self.push(v, Op::RowL2Norm(a))
    }

    pub fn rbf_expand(&mut self, a: NodeId, centers: &[f64], width: f64) -> NodeId {
        let ta = &self.nodes[a].value;
        assert_eq!(ta.cols, 1);
        let c = centers.len();
        let mut v = Tensor::zeros(ta.rows, c);
        for r in 0..ta.rows {
            let d = ta.data[r];
            for (ci, &mu) in centers.iter().enumerate() {
                let z = (d - mu) / width;
                v.data[r * c + ci] = (-0.5 * z * z).exp();
            }
        }
        self.push(v, Op::RbfExpand(a, centers.to_vec(), width))
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let v = softmax_rows(&self.nodes[a].value);
        self.push(v, Op::Softmax(a))
    }

    pub fn mse_rows(&mut self, pred: NodeId, target: Tensor) -> NodeId {
        let tp = &self.nodes[pred].value;
        assert_eq!((tp.rows, tp.cols), (target.rows, target.cols));
        let n = tp.rows as f64;
        let s: f64 = tp
            .data
            .iter()
            .zip(&target.data)
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        let v = Tensor::from_vec(1, 1, vec![s / n]);
        self.push(v, Op::MseRows(pred, target))
    }

    pub fn ce_with_logits(&mut self, logits: NodeId, target: Tensor) -> NodeId {
        let tl = &self.nodes[logits].value;
        assert_eq!((tl.rows, tl.cols), (target.rows, target.cols));
        let probs = softmax_rows(tl);
        let n = tl.rows as f64;
        let mut s = 0.0;
        for r in 0..tl.rows {
            for c in 0..tl.cols {
                let t = target.get(r, c);
                if t != 0.0 {
                    s -= t * probs.get(r, c).max(1e-300).ln();
                }
            }
        }
        let v = Tensor::from_vec(1, 1, vec![s / n]);
        self.push(v, Op::CeWithLogits(logits, target))
    }

    /// Gradients of the scalar at `loss` w.r.t. every node; entry is None
    /// for nodes the loss does not depend on.
    pub fn backward(&self, loss: NodeId) -> Vec<Option<Tensor>> {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let lt = &self.nodes[loss].value;
        assert_eq!((lt.rows, lt.cols), (1, 1), "loss must be scalar");
        grads[loss] = Some(Tensor::from_vec(1, 1, vec![1.0]));

        let acc = |grads: &mut Vec<Option<Tensor>>, id: NodeId, g: Tensor| {
            match &mut grads[id] {
                Some(existing) => {
                    for (e, v) in existing.data.iter_mut().zip(&g.data) {
                        *e += v;
                    }
                }
                slot => *slot = Some(g),
            }
        };

        for id in (0..self.nodes.len()).rev() {
            let g = match grads[id].clone() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    let neg = Tensor::from_vec(g.rows, g.cols, g.data.iter().map(|x| -x).collect());
                    acc(&mut grads, *b, neg);
                }
                Op::Scale(a, s) => {
                    let ga = Tensor::from_vec(g.rows, g.cols, g.data.iter().map(|x| x * s).collect());
                    acc(&mut grads, *a, ga);
                }
                Op::MatMul(a, b) => {
                    let ga = matmul_a_bt(&g, &self.nodes[*b].value);
                    let gb = matmul_at_b(&self.nodes[*a].value, &g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRowBroadcast(a, row) => {
                    acc(&mut grads, *a, g.clone());
                    let mut gr = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for c in 0..g.cols {
                            gr.data[c] += g.data[r * g.cols + c];
                        }
                    }
                    acc(&mut grads, *row, gr);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let pc = self.nodes[p].value.cols;
                        let mut gp = Tensor::zeros(g.rows, pc);
                        for r in 0..g.rows {
                            for c in 0..pc {
                                gp.data[r * pc + c] = g.data[r * g.cols + off + c];
                            }
                        }
                        acc(&mut grads, p, gp);
                        off += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let pr = self.nodes[p].value.rows;
                        let gp = Tensor::from_vec(
                            pr,
                            g.cols,
                            g.data[off * g.cols..(off + pr) * g.cols].to_vec(),
                        );
                        acc(&mut grads, p, gp);
                        off += pr;
                    }
                }
                Op::GatherRows(a, idx) => {
                    let ta = &self.nodes[*a].value;
                    let mut ga = Tensor::zeros(ta.rows, ta.cols);
                    for (r, &i) in idx.iter().enumerate() {
                        for c in 0..g.cols {
                            ga.data[i * g.cols + c] += g.data[r * g.cols + c];
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ScatterAddRows(a, idx, out_rows) => {
                    debug_assert_eq!(g.rows, *out_rows);
                    let mut ga = Tensor::zeros(idx.len(), g.cols);
                    for (r, &i) in idx.iter().enumerate() {
                        ga.data[r * g.cols..(r + 1) * g.cols].copy_from_slice(
                            &g.data[i * g.cols..(i + 1) * g.cols],
                        );
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Silu(a) => {
                    let ta = &self.nodes[*a].value;
                    let data = g
                        .data
                        .iter()
                        .zip(&ta.data)
                        .map(|(gv, &x)| {
                            let s = sigmoid(x);
                            gv * (s * (1.0 + x * (1.0 - s)))
                        })
                        .collect();
                    acc(&mut grads, *a, Tensor::from_vec(g.rows, g.cols, data));
                }
                Op::Clamp(a, lo, hi) => {
                    let ta = &self.nodes[*a].value;
                    let data = g
                        .data
                        .iter()
                        .zip(&ta.data)
                        .map(|(gv, &x)| if x > *lo && x < *hi { *gv } else { 0.0 })
                        .collect();
                    acc(&mut grads, *a, Tensor::from_vec(g.rows, g.cols, data));
                }
                Op::MulElem(a, b) => {
                    let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let ga = g.data.iter().zip(&tb.data).map(|(gv, bv)| gv * bv).collect();
                    let gb = g.data.iter().zip(&ta.data).map(|(gv, av)| gv * av).collect();
                    acc(&mut grads, *a, Tensor::from_vec(g.rows, g.cols, ga));
                    acc(&mut grads, *b, Tensor::from_vec(g.rows, g.cols, gb));
                }
                Op::MulColBroadcast(a, col) => {
                    let (ta, tc) = (&self.nodes[*a].value, &self.nodes[*col].value);
                    let mut ga = Tensor::zeros(ta.rows, ta.cols);
                    let mut gc = Tensor::zeros(tc.rows, 1);
                    for r in 0..ta.rows {
                        let s = tc.data[r];
                        let mut acc_c = 0.0;
                        for c in 0..ta.cols {
                            ga.data[r * ta.cols + c] = g.data[r * ta.cols + c] * s;
                            acc_c += g.data[r * ta.cols + c] * ta.data[r * ta.cols + c];
                        }
                        gc.data[r] = acc_c;
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *col, gc);
                }
                Op::RowL2Norm(a) => {
                    let ta = &self.nodes[*a].value;
                    let y = &self.nodes[id].value;
                    let mut ga = Tensor::zeros(ta.rows, ta.cols);
                    for r in 0..ta.rows {
                        let norm = y.data[r].max(NORM_EPS);
                        for c in 0..ta.cols {
                            ga.data[r * ta.cols + c] = g.data[r] * ta.data[r * ta.cols + c] / norm;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::RbfExpand(a, centers, width) => {
                    let ta = &self.nodes[*a].value;
                    let y = &self.nodes[id].value;
                    let nc = centers.len();
                    let mut ga = Tensor::zeros(ta.rows, 1);
                    for r in 0..ta.rows {
                        let d = ta.data[r];
                        let mut s = 0.0;
                        for (ci, &mu) in centers.iter().enumerate() {
                            s += g.data[r * nc + ci] * y.data[r * nc + ci] * (-(d - mu) / (width * width));
                        }
                        ga.data[r] = s;
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Softmax(a) => {
                    let y = &self.nodes[id].value;
                    let mut ga = Tensor::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let yr = y.row(r);
                        let gr = &g.data[r * y.cols..(r + 1) * y.cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(yv, gv)| yv * gv).sum();
                        for c in 0..y.cols {
                            ga.data[r * y.cols + c] = yr[c] * (gr[c] - dot);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::MseRows(pred, target) => {
                    let tp = &self.nodes[*pred].value;
                    let n = tp.rows as f64;
                    let s = g.data[0];
                    let data = tp
                        .data
                        .iter()
                        .zip(&target.data)
                        .map(|(p, t)| s * 2.0 * (p - t) / n)
                        .collect();
                    acc(&mut grads, *pred, Tensor::from_vec(tp.rows, tp.cols, data));
                }
                Op::CeWithLogits(logits, target) => {
                    let tl = &self.nodes[*logits].value;
                    let probs = softmax_rows(tl);
                    let n = tl.rows as f64;
                    let s = g.data[0];
                    let data = probs
                        .data
                        .iter()
                        .zip(&target.data)
                        .map(|(p, t)| s * (p - t) / n)
                        .collect();
                    acc(&mut grads, *logits, Tensor::from_vec(tl.rows, tl.cols, data));
                }
            }
        }
        grads
    }
}
