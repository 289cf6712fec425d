//! SE(3)-equivariant network predicting the clean ligand [x0, v0] from a
//! noisy state, a timestep and one or two pocket-conditioned complex
//! graphs. Hidden states update through invariant edge messages; positions
//! update along relative-position vectors gated by an invariant scalar, so
//! the whole map is equivariant under proper rotations and translations.
//!
//! Composed (dual-graph) layers average the per-graph ligand messages with
//! the same parameters; each pocket's hidden states see only their own
//! graph.

use crate::graph::{ComplexGraph, DualGraphPair};
use crate::geom::Point3;
use crate::tape::{NodeId, Tape, Tensor};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EgnnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EgnnConfig {
    /// K: ligand atom-type classes.
    pub lig_classes: usize,
    /// K_P: protein feature classes.
    pub prot_classes: usize,
    /// Hidden width H.
    pub hidden: usize,
    /// Layer count L.
    pub layers: usize,
    /// Gaussian radial-basis centers spanning [0, rbf_max] Å.
    pub rbf_count: usize,
    pub rbf_max: f64,
    /// Per-edge coordinate gate clipped to [-gate_clip, gate_clip].
    pub gate_clip: f64,
    /// Sinusoidal time-feature count (even).
    pub time_features: usize,
}

impl Default for EgnnConfig {
    fn default() -> Self {
        EgnnConfig {
            lig_classes: 7,
            prot_classes: 8,
            hidden: 64,
            layers: 4,
            rbf_count: 16,
            rbf_max: 10.0,
            gate_clip: 15.0,
            time_features: 16,
        }
    }
}

impl EgnnConfig {
    /// Edge-feature width fed to both edge MLPs:
    /// h_i, h_j, raw distance, RBF expansion, edge-kind one-hot.
    pub fn edge_in(&self) -> usize {
        2 * self.hidden + 1 + self.rbf_count + 4
    }

    pub fn rbf_centers(&self) -> Vec<f64> {
        let n = self.rbf_count;
        (0..n)
            .map(|i| self.rbf_max * i as f64 / (n.max(2) - 1) as f64)
            .collect()
    }

    pub fn rbf_width(&self) -> f64 {
        self.rbf_max / (self.rbf_count.max(2) - 1) as f64
    }
}

/// Named parameter tensors in a fixed order, so checkpoints, gradient
/// flattening and optimizers all agree on the layout.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub cfg: EgnnConfig,
    tensors: Vec<(String, Tensor)>,
}

fn tensor_shapes(cfg: &EgnnConfig) -> Vec<(String, usize, usize)> {
    let h = cfg.hidden;
    let din = cfg.edge_in();
    let mut shapes = vec![
        ("embed_lig.w".to_string(), cfg.lig_classes, h),
        ("embed_prot.w".to_string(), cfg.prot_classes, h),
        ("embed_time.w".to_string(), cfg.time_features, h),
    ];
    for l in 0..cfg.layers {
        shapes.push((format!("layer{l}.msg.w1"), din, h));
        shapes.push((format!("layer{l}.msg.b1"), 1, h));
        shapes.push((format!("layer{l}.msg.w2"), h, h));
        shapes.push((format!("layer{l}.msg.b2"), 1, h));
        shapes.push((format!("layer{l}.gate.w1"), din, h));
        shapes.push((format!("layer{l}.gate.b1"), 1, h));
        shapes.push((format!("layer{l}.gate.w2"), h, 1));
        shapes.push((format!("layer{l}.gate.b2"), 1, 1));
    }
    shapes.push(("head.w".to_string(), h, cfg.lig_classes));
    shapes.push(("head.b".to_string(), 1, cfg.lig_classes));
    shapes
}

impl NetworkParams {
    /// Glorot-uniform init; the coordinate-gate output layer is shrunk so
    /// fresh models make small position updates.
    pub fn init<R: Rng>(cfg: EgnnConfig, rng: &mut R) -> Self {
        let mut tensors = Vec::new();
        for (name, r, c) in tensor_shapes(&cfg) {
            let mut t = Tensor::zeros(r, c);
            if !name.ends_with(".b1") && !name.ends_with(".b2") && !name.ends_with("head.b") {
                let scale = (6.0 / (r + c) as f64).sqrt();
                let shrink = if name.contains("gate.w2") { 0.1 } else { 1.0 };
                for v in t.data.iter_mut() {
                    *v = (rng.gen::<f64>() * 2.0 - 1.0) * scale * shrink;
                }
            }
            tensors.push((name, t));
        }
        NetworkParams { cfg, tensors }
    }

    pub fn zeros(cfg: EgnnConfig) -> Self {
        let tensors = tensor_shapes(&cfg)
            .into_iter()
            .map(|(n, r, c)| (n, Tensor::zeros(r, c)))
            .collect();
        NetworkParams { cfg, tensors }
    }

    pub fn tensor(&self, name: &str) -> &Tensor {
        &self
            .tensors
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("unknown tensor {name}"))
            .1
    }

    pub fn tensor_mut(&mut self, name: &str) -> &mut Tensor {
        &mut self
            .tensors
            .iter_mut()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("unknown tensor {name}"))
            .1
    }

    pub fn tensors(&self) -> &[(String, Tensor)] {
        &self.tensors
    }

    pub fn flat_len(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.data.len()).sum()
    }

    pub fn get_flat(&self, mut idx: usize) -> f64 {
        for (_, t) in &self.tensors {
            if idx < t.data.len() {
                return t.data[idx];
            }
            idx -= t.data.len();
        }
        panic!("flat index out of range");
    }

    pub fn set_flat(&mut self, mut idx: usize, v: f64) {
        for (_, t) in &mut self.tensors {
            if idx < t.data.len() {
                t.data[idx] = v;
                return;
            }
            idx -= t.data.len();
        }
        panic!("flat index out of range");
    }

    /// Versioned plain-text checkpoint with named tensors; floats use
    /// shortest round-trip formatting so save/load is exact.
    pub fn to_text(&self) -> String {
        let c = &self.cfg;
        let mut out = String::from("EGNN-CKPT v1\n");
        out.push_str(&format!(
            "config {} {} {} {} {} {} {} {}\n",
            c.lig_classes, c.prot_classes, c.hidden, c.layers, c.rbf_count, c.rbf_max, c.gate_clip, c.time_features
        ));
        for (name, t) in &self.tensors {
            out.push_str(&format!("TENSOR {name} {} {}\n", t.rows, t.cols));
            for r in 0..t.rows {
                let line: Vec<String> = t.row(r).iter().map(|v| format!("{v}")).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, EgnnError> {
        let mut lines = text.lines();
        let err = |m: &str| EgnnError::Checkpoint(m.to_string());
        if lines.next() != Some("EGNN-CKPT v1") {
            return Err(err("bad magic/version"));
        }
        let cfg_line = lines.next().ok_or_else(|| err("missing config"))?;
        let parts: Vec<&str> = cfg_line.split_whitespace().collect();
        if parts.len() != 9 || parts[0] != "config" {
            return Err(err("malformed config line"));
        }
        let p = |i: usize| -> Result<usize, EgnnError> {
            parts[i].parse().map_err(|_| err("bad config field"))
        };
        let pf = |i: usize| -> Result<f64, EgnnError> {
            parts[i].parse().map_err(|_| err("bad config field"))
        };
        let cfg = EgnnConfig {
            lig_classes: p(1)?,
            prot_classes: p(2)?,
            hidden: p(3)?,
            layers: p(4)?,
            rbf_count: p(5)?,
            rbf_max: pf(6)?,
            gate_clip: pf(7)?,
            time_features: p(8)?,
        };
        let mut params = NetworkParams::zeros(cfg);
        let expected: Vec<String> = params.tensors.iter().map(|(n, _)| n.clone()).collect();
        for name in &expected {
            let header = lines.next().ok_or_else(|| err("truncated checkpoint"))?;
            let hp: Vec<&str> = header.split_whitespace().collect();
            if hp.len() != 4 || hp[0] != "TENSOR" || hp[1] != name {
                return Err(err(&format!("expected tensor {name}")));
            }
            let rows: usize = hp[2].parse().map_err(|_| err("bad tensor shape"))?;
            let cols: usize = hp[3].parse().map_err(|_| err("bad tensor shape"))?;
            let t = params.tensor_mut(name);
            if (t.rows, t.cols) != (rows, cols) {
                return Err(err(&format!("shape mismatch for {name}")));
            }
            for r in 0..rows {
                let line = lines.next().ok_or_else(|| err("truncated tensor"))?;
                let vals: Vec<&str> = line.split_whitespace().collect();
                if vals.len() != cols {
                    return Err(err(&format!("row width mismatch in {name}")));
                }
                for (c, v) in vals.iter().enumerate() {
                    t.set(r, c, v.parse().map_err(|_| err("bad float"))?);
                }
            }
        }
        Ok(params)
    }
}

/// Mirror of the parameter layout holding gradients.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub tensors: Vec<(String, Tensor)>,
}

impl ParamGrads {
    pub fn get_flat(&self, mut idx: usize) -> f64 {
        for (_, t) in &self.tensors {
            if idx < t.data.len() {
                return t.data[idx];
            }
            idx -= t.data.len();
        }
        panic!("flat index out of range");
    }
}

/// Network output for the ligand: predicted clean coordinates and per-atom
/// type probabilities (softmax rows).
#[derive(Debug, Clone)]
pub struct Prediction {
    pub x0: Vec<Point3>,
    pub v0: Vec<Vec<f64>>,
}

/// One or two conditioning graphs.
#[derive(Clone, Copy)]
pub enum GraphInput<'a> {
    Single(&'a ComplexGraph),
    Pair(&'a DualGraphPair),
}

fn points_tensor(pts: &[Point3]) -> Tensor {
    let rows: Vec<Vec<f64>> = pts.iter().map(|p| vec![p.x, p.y, p.z]).collect();
    Tensor::from_rows(&rows)
}

fn tensor_points(t: &Tensor) -> Vec<Point3> {
    (0..t.rows)
        .map(|r| Point3::new(t.get(r, 0), t.get(r, 1), t.get(r, 2)))
        .collect()
}

fn time_features(cfg: &EgnnConfig, t: usize, t_max: usize) -> Tensor {
    let u = t as f64 / t_max.max(1) as f64;
    let mut row = Vec::with_capacity(cfg.time_features);
    for k in 0..cfg.time_features / 2 {
        let arg = std::f64::consts::TAU * (k + 1) as f64 * u;
        row.push(arg.sin());
        row.push(arg.cos());
    }
    row.resize(cfg.time_features, 0.0);
    Tensor::from_rows(&[row])
}

/// The recorded forward pass: tape, parameter leaf ids, and output nodes.
pub struct Forward {
    pub tape: Tape,
    param_ids: Vec<(String, NodeId)>,
    pub x0: NodeId,
    pub logits: NodeId,
}

impl Forward {
    pub fn prediction(&self) -> Prediction {
        let x0 = tensor_points(self.tape.value(self.x0));
        let mut tape_probs = Tape::new();
        let l = tape_probs.leaf(self.tape.value(self.logits).clone());
        let sm = tape_probs.softmax(l);
        let pt = tape_probs.value(sm);
        let v0 = (0..pt.rows).map(|r| pt.row(r).to_vec()).collect();
        Prediction { x0, v0 }
    }

    /// Parameter gradients of the scalar at `loss`.
    pub fn param_grads(&self, loss: NodeId) -> ParamGrads {
        let grads = self.tape.backward(loss);
        let tensors = self
            .param_ids
            .iter()
            .map(|(name, id)| {
                let g = grads[*id]
                    .clone()
                    .unwrap_or_else(|| {
                        let t = self.tape.value(*id);
                        Tensor::zeros(t.rows, t.cols)
                    });
                (name.clone(), g)
            })
            .collect();
        ParamGrads { tensors }
    }
}

struct ParamLeaves<'a> {
    params: &'a NetworkParams,
    ids: Vec<(String, NodeId)>,
}

impl<'a> ParamLeaves<'a> {
    fn new(tape: &mut Tape, params: &'a NetworkParams) -> Self {
        let ids = params
            .tensors()
            .iter()
            .map(|(name, t)| (name.clone(), tape.leaf(t.clone())))
            .collect();
        ParamLeaves { params, ids }
    }

    fn id(&self, name: &str) -> NodeId {
        self.ids
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("unknown tensor {name}"))
            .1
    }
}

struct EdgeArrays {
    src: Vec<usize>,
    dst: Vec<usize>,
    kind_onehot: Tensor,
}

fn edge_arrays(g: &ComplexGraph, src_off: impl Fn(usize) -> usize, dst_off: impl Fn(usize) -> usize) -> EdgeArrays {
    let mut src = Vec::with_capacity(g.edges.len());
    let mut dst = Vec::with_capacity(g.edges.len());
    let mut kind = Tensor::zeros(g.edges.len(), 4);
    for (r, e) in g.edges.iter().enumerate() {
        src.push(src_off(e.src));
        dst.push(dst_off(e.dst));
        kind.set(r, e.kind.index(), 1.0);
    }
    EdgeArrays {
        src,
        dst,
        kind_onehot: kind,
    }
}

/// Two-layer perceptron with SiLU after the first linear map.
fn mlp(tape: &mut Tape, leaves: &ParamLeaves, prefix: &str, input: NodeId) -> NodeId {
    let w1 = leaves.id(&format!("{prefix}.w1"));
    let b1 = leaves.id(&format!("{prefix}.b1"));
    let w2 = leaves.id(&format!("{prefix}.w2"));
    let b2 = leaves.id(&format!("{prefix}.b2"));
    let z = tape.matmul(input, w1);
    let z = tape.add_row_broadcast(z, b1);
    let z = tape.silu(z);
    let z = tape.matmul(z, w2);
    tape.add_row_broadcast(z, b2)
}

/// Per-graph layer messages: (Δh scattered to `n_nodes` rows,
/// Δx scattered and ligand-masked).
#[allow(clippy::too_many_arguments)]
fn graph_messages(
    tape: &mut Tape,
    leaves: &ParamLeaves,
    layer: usize,
    edges: &EdgeArrays,
    kind_leaf: NodeId,
    h: NodeId,
    x: NodeId,
    n_nodes: usize,
    lig_mask: NodeId,
) -> (NodeId, NodeId) {
    let cfg = &leaves.params.cfg;
    let x_dst = tape.gather_rows(x, &edges.dst);
    let x_src = tape.gather_rows(x, &edges.src);
    let rel = tape.sub(x_dst, x_src);
    let d = tape.row_l2_norm(rel);
    let rbf = tape.rbf_expand(d, &cfg.rbf_centers(), cfg.rbf_width());

    let h_dst = tape.gather_rows(h, &edges.dst);
    let h_src = tape.gather_rows(h, &edges.src);
    let msg_in = tape.concat_cols(&[h_dst, h_src, d, rbf, kind_leaf]);
    let msg = mlp(tape, leaves, &format!("layer{layer}.msg"), msg_in);
    let dh = tape.scatter_add_rows(msg, &edges.dst, n_nodes);

    // Gate uses the already-updated hidden states h^{l+1}.
    let h_next = tape.add(h, dh);
    let hn_dst = tape.gather_rows(h_next, &edges.dst);
    let hn_src = tape.gather_rows(h_next, &edges.src);
    let gate_in = tape.concat_cols(&[hn_dst, hn_src, d, rbf, kind_leaf]);
    let gate = mlp(tape, leaves, &format!("layer{layer}.gate"), gate_in);
    let gate = tape.clamp(gate, -cfg.gate_clip, cfg.gate_clip);
    let weighted = tape.mul_col_broadcast(rel, gate);
    let dx_all = tape.scatter_add_rows(weighted, &edges.dst, n_nodes);
    let dx = tape.mul_col_broadcast(dx_all, lig_mask);
    (dh, dx)
}

fn embed_nodes(
    tape: &mut Tape,
    leaves: &ParamLeaves,
    lig_types: &[Vec<f64>],
    prot_blocks: &[&[Vec<f64>]],
    t: usize,
    t_max: usize,
) -> NodeId {
    let cfg = &leaves.params.cfg;
    let v_leaf = tape.leaf(Tensor::from_rows(lig_types));
    let w_lig = leaves.id("embed_lig.w");
    let h_lig = tape.matmul(v_leaf, w_lig);
    let mut parts = vec![h_lig];
    for block in prot_blocks {
        let p_leaf = tape.leaf(Tensor::from_rows(block));
        let w_prot = leaves.id("embed_prot.w");
        parts.push(tape.matmul(p_leaf, w_prot));
    }
    let h0 = tape.concat_rows(&parts);
    let tf = tape.leaf(time_features(cfg, t, t_max));
    let w_time = leaves.id("embed_time.w");
    let temb = tape.matmul(tf, w_time);
    tape.add_row_broadcast(h0, temb)
}

fn lig_mask_tensor(n_nodes: usize, lig_count: usize, value: f64) -> Tensor {
    let mut m = Tensor::zeros(n_nodes, 1);
    for r in 0..lig_count {
        m.data[r] = value;
    }
    m
}

/// Records the full forward pass for a single- or dual-graph input.
///
/// `x_t`/`v_t` are the noisy ligand state; pocket atoms come from the
/// graph(s) and never move.
pub fn build_forward(
    params: &NetworkParams,
    input: GraphInput,
    x_t: &[Point3],
    v_t: &[Vec<f64>],
    t: usize,
    t_max: usize,
) -> Result<Forward, EgnnError> {
    let cfg = &params.cfg;
    let n_lig = x_t.len();
    if v_t.len() != n_lig {
        return Err(EgnnError::ShapeMismatch(format!(
            "{} positions vs {} type rows",
            n_lig,
            v_t.len()
        )));
    }
    if v_t.iter().any(|r| r.len() != cfg.lig_classes) {
        return Err(EgnnError::ShapeMismatch("type row width != K".into()));
    }

    let mut tape = Tape::new();
    let leaves = ParamLeaves::new(&mut tape, params);

    match input {
        GraphInput::Single(g) => {
            if g.lig_count != n_lig {
                return Err(EgnnError::ShapeMismatch("graph ligand count".into()));
            }
            let n = g.node_count();
            let mut h = embed_nodes(&mut tape, &leaves, v_t, &[&g.prot_types], t, t_max);

            let x_lig = tape.leaf(points_tensor(x_t));
            let x_prot = tape.leaf(points_tensor(&g.positions[g.lig_count..]));
            let mut x = tape.concat_rows(&[x_lig, x_prot]);

            let edges = edge_arrays(g, |i| i, |i| i);
            let lig_mask = tape.leaf(lig_mask_tensor(n, n_lig, 1.0));
            for l in 0..cfg.layers {
                let kind_leaf = tape.leaf(edges.kind_onehot.clone());
                let (dh, dx) =
                    graph_messages(&mut tape, &leaves, l, &edges, kind_leaf, h, x, n, lig_mask);
                h = tape.add(h, dh);
                x = tape.add(x, dx);
            }

            let lig_rows: Vec<usize> = (0..n_lig).collect();
            let x0 = tape.gather_rows(x, &lig_rows);
            let h_lig = tape.gather_rows(h, &lig_rows);
            let hw = leaves.id("head.w");
            let hb = leaves.id("head.b");
            let logits = tape.matmul(h_lig, hw);
            let logits = tape.add_row_broadcast(logits, hb);
            let ids = leaves.ids;
            Ok(Forward {
                tape,
                param_ids: ids,
                x0,
                logits,
            })
        }
        GraphInput::Pair(pair) => {
            if !pair.ligand_blocks_consistent() {
                return Err(EgnnError::ShapeMismatch("dual graphs disagree on ligand block".into()));
            }
            let (g1, g2) = (&pair.graph_1, &pair.graph_2);
            if g1.lig_count != n_lig {
                return Err(EgnnError::ShapeMismatch("graph ligand count".into()));
            }
            let np1 = g1.node_count() - n_lig;
            let np2 = g2.node_count() - n_lig;
            let n = n_lig + np1 + np2;
            let mut h = embed_nodes(
                &mut tape,
                &leaves,
                v_t,
                &[&g1.prot_types, &g2.prot_types],
                t,
                t_max,
            );

            let x_lig = tape.leaf(points_tensor(x_t));
            let x_p1 = tape.leaf(points_tensor(&g1.positions[n_lig..]));
            let x_p2 = tape.leaf(points_tensor(&g2.positions[n_lig..]));
            let mut x = tape.concat_rows(&[x_lig, x_p1, x_p2]);

            // Graph-local protein indices mapped into the stacked node set.
            let e1 = edge_arrays(
                g1,
                |i| if i < n_lig { i } else { i + 0 },
                |i| i,
            );
            let e2 = edge_arrays(
                g2,
                |i| if i < n_lig { i } else { i + np1 },
                |i| if i < n_lig { i } else { i + np1 },
            );
            let lig_mask = tape.leaf(lig_mask_tensor(n, n_lig, 1.0));

            // Ligand rows take the averaged composed update; each pocket's
            // rows take only their own graph's update.
            let mut m1 = lig_mask_tensor(n, n_lig, 0.5);
            for r in n_lig..n_lig + np1 {
                m1.data[r] = 1.0;
            }
            let mut m2 = lig_mask_tensor(n, n_lig, 0.5);
            for r in n_lig + np1..n {
                m2.data[r] = 1.0;
            }

            for l in 0..cfg.layers {
                let k1 = tape.leaf(e1.kind_onehot.clone());
                let k2 = tape.leaf(e2.kind_onehot.clone());
                let (dh1, dx1) =
                    graph_messages(&mut tape, &leaves, l, &e1, k1, h, x, n, lig_mask);
                let (dh2, dx2) =
                    graph_messages(&mut tape, &leaves, l, &e2, k2, h, x, n, lig_mask);
                let m1_leaf = tape.leaf(m1.clone());
                let m2_leaf = tape.leaf(m2.clone());
                let dh1m = tape.mul_col_broadcast(dh1, m1_leaf);
                let dh2m = tape.mul_col_broadcast(dh2, m2_leaf);
                let dh = tape.add(dh1m, dh2m);
                h = tape.add(h, dh);
                // Only ligand rows carry Δx; average the two graphs.
                let dx_sum = tape.add(dx1, dx2);
                let dx = tape.scale(dx_sum, 0.5);
                x = tape.add(x, dx);
            }

            let lig_rows: Vec<usize> = (0..n_lig).collect();
            let x0 = tape.gather_rows(x, &lig_rows);
            let h_lig = tape.gather_rows(h, &lig_rows);
            let hw = leaves.id("head.w");
            let hb = leaves.id("head.b");
            let logits = tape.matmul(h_lig, hw);
            let logits = tape.add_row_broadcast(logits, hb);
            let ids = leaves.ids;
            Ok(Forward {
                tape,
                param_ids: ids,
                x0,
                logits,
            })
        }
    }
}

/// Inference entry point: [x̂0, v̂0] = f_θ([x_t, v_t], t, P).
pub fn predict(
    params: &NetworkParams,
    input: GraphInput,
    x_t: &[Point3],
    v_t: &[Vec<f64>],
    t: usize,
    t_max: usize,
) -> Result<Prediction, EgnnError> {
    Ok(build_forward(params, input, x_t, v_t, t, t_max)?.prediction())
}

/// One message-passing layer on a single graph, exposed on plain matrices:
/// returns the updated hidden states (all nodes) and positions.
pub fn layer_forward(
    params: &NetworkParams,
    layer: usize,
    g: &ComplexGraph,
    h: &Tensor,
    x: &[Point3],
) -> Result<(Tensor, Vec<Point3>), EgnnError> {
    let n = g.node_count();
    if h.rows != n || x.len() != n {
        return Err(EgnnError::ShapeMismatch(format!(
            "expected {n} nodes, got h:{} x:{}",
            h.rows,
            x.len()
        )));
    }
    let mut tape = Tape::new();
    let leaves = ParamLeaves::new(&mut tape, params);
    let h_id = tape.leaf(h.clone());
    let x_id = tape.leaf(points_tensor(x));
    let edges = edge_arrays(g, |i| i, |i| i);
    let kind_leaf = tape.leaf(edges.kind_onehot.clone());
    let lig_mask = tape.leaf(lig_mask_tensor(n, g.lig_count, 1.0));
    let (dh, dx) = graph_messages(
        &mut tape, &leaves, layer, &edges, kind_leaf, h_id, x_id, n, lig_mask,
    );
    let h_out = tape.add(h_id, dh);
    let x_out = tape.add(x_id, dx);
    Ok((
        tape.value(h_out).clone(),
        tensor_points(tape.value(x_out)),
    ))
}

/// One composed layer over a dual-graph pair. Node order: shared ligand,
/// pocket-1 atoms, pocket-2 atoms; `h` and `x` cover all three blocks.
pub fn composed_layer_forward(
    params: &NetworkParams,
    layer: usize,
    pair: &DualGraphPair,
    h: &Tensor,
    x: &[Point3],
) -> Result<(Tensor, Vec<Point3>), EgnnError> {
    let n_lig = pair.lig_count();
    let np1 = pair.graph_1.node_count() - n_lig;
    let np2 = pair.graph_2.node_count() - n_lig;
    let n = n_lig + np1 + np2;
    if h.rows != n || x.len() != n {
        return Err(EgnnError::ShapeMismatch(format!(
            "expected {n} stacked nodes, got h:{} x:{}",
            h.rows,
            x.len()
        )));
    }
    let mut tape = Tape::new();
    let leaves = ParamLeaves::new(&mut tape, params);
    let h_id = tape.leaf(h.clone());
    let x_id = tape.leaf(points_tensor(x));
    let e1 = edge_arrays(&pair.graph_1, |i| i, |i| i);
    let e2 = edge_arrays(
        &pair.graph_2,
        |i| if i < n_lig { i } else { i + np1 },
        |i| if i < n_lig { i } else { i + np1 },
    );
    let lig_mask = tape.leaf(lig_mask_tensor(n, n_lig, 1.0));
    let mut m1 = lig_mask_tensor(n, n_lig, 0.5);
    for r in n_lig..n_lig + np1 {
        m1.data[r] = 1.0;
    }
    let mut m2 = lig_mask_tensor(n, n_lig, 0.5);
    for r in n_lig + np1..n {
        m2.data[r] = 1.0;
    }
    let k1 = tape.leaf(e1.kind_onehot.clone());
    let k2 = tape.leaf(e2.kind_onehot.clone());
    let (dh1, dx1) = graph_messages(&mut tape, &leaves, layer, &e1, k1, h_id, x_id, n, lig_mask);
    let (dh2, dx2) = graph_messages(&mut tape, &leaves, layer, &e2, k2, h_id, x_id, n, lig_mask);
    let m1_leaf = tape.leaf(m1);
    let m2_leaf = tape.leaf(m2);
    let dh1m = tape.mul_col_broadcast(dh1, m1_leaf);
    let dh2m = tape.mul_col_broadcast(dh2, m2_leaf);
    let dh = tape.add(dh1m, dh2m);
    let h_out = tape.add(h_id, dh);
    let dx_sum = tape.add(dx1, dx2);
    let dx = tape.scale(dx_sum, 0.5);
    let x_out = tape.add(x_id, dx);
    Ok((
        tape.value(h_out).clone(),
        tensor_points(tape.value(x_out)),
    ))
}

/// Adam over the flat parameter vector.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: usize,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, n: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn update(&mut self, params: &mut NetworkParams, grads: &ParamGrads) {
        self.step += 1;
        let b1c = 1.0 - self.beta1.powi(self.step as i32);
        let b2c = 1.0 - self.beta2.powi(self.step as i32);
        let mut i = 0;
        for ((_, t), (_, g)) in params.tensors.iter_mut().zip(&grads.tensors) {
            for (p, gv) in t.data.iter_mut().zip(&g.data) {
                self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * gv;
                self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * gv * gv;
                let mh = self.m[i] / b1c;
                let vh = self.v[i] / b2c;
                *p -= self.lr * mh / (vh.sqrt() + self.eps);
                i += 1;
            }
        }
    }
}
