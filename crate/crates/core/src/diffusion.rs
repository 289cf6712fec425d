//! Noise schedules and the forward/marginal/posterior kernels of the
//! diffusion process, over both ligand coordinates (Gaussian) and atom
//! types (categorical), plus single-target reverse sampling and the
//! training loss.
//!
//! Conventions: timesteps are 1-based, `alpha_bar(0) = 1`, and the reverse
//! variance is the posterior variance β̃_t (so β̃_1 = 0 and the terminal
//! step is noiseless).

use crate::chem::{infer_bonds, AtomTypeVocab, Molecule, Pocket};
use crate::egnn::{predict, EgnnError, GraphInput, NetworkParams, ParamGrads};
use crate::geom::Point3;
use crate::graph::{build_complex_graph, ComplexGraph, LigandState};
use crate::tape::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DiffusionError {
    #[error("bad schedule range: {0}")]
    BadRange(String),
    #[error(transparent)]
    Egnn(#[from] EgnnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Linear,
    Cosine,
    Sigmoid,
}

impl std::str::FromStr for ScheduleKind {
    type Err = DiffusionError;
    fn from_str(s: &str) -> Result<Self, DiffusionError> {
        match s {
            "linear" => Ok(ScheduleKind::Linear),
            "cosine" => Ok(ScheduleKind::Cosine),
            "sigmoid" => Ok(ScheduleKind::Sigmoid),
            other => Err(DiffusionError::BadRange(format!(
                "unknown schedule kind '{other}'"
            ))),
        }
    }
}

/// Per-step β_t with derived α_t, ᾱ_t, posterior variance β̃_t and
/// reverse variance σ_t² = β̃_t. All accessors take 1-based t.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub t_max: usize,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    /// alpha_bars[t] = ᾱ_t with ᾱ_0 = 1; length T+1.
    alpha_bars: Vec<f64>,
    beta_tildes: Vec<f64>,
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self, DiffusionError> {
        if betas.is_empty() {
            return Err(DiffusionError::BadRange("empty schedule".into()));
        }
        if betas.iter().any(|&b| b <= 0.0 || b >= 1.0) {
            return Err(DiffusionError::BadRange("β_t must lie in (0,1)".into()));
        }
        let t_max = betas.len();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(t_max + 1);
        alpha_bars.push(1.0);
        for (t, a) in alphas.iter().enumerate() {
            alpha_bars.push(alpha_bars[t] * a);
        }
        let beta_tildes = (1..=t_max)
            .map(|t| (1.0 - alpha_bars[t - 1]) / (1.0 - alpha_bars[t]) * betas[t - 1])
            .collect();
        Ok(NoiseSchedule {
            t_max,
            betas,
            alphas,
            alpha_bars,
            beta_tildes,
        })
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// ᾱ_t, defined for t = 0..=T with ᾱ_0 = 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn beta_tilde(&self, t: usize) -> f64 {
        self.beta_tildes[t - 1]
    }

    pub fn sigma2(&self, t: usize) -> f64 {
        self.beta_tilde(t)
    }
}

pub fn make_schedule(
    kind: ScheduleKind,
    t_max: usize,
    beta_min: f64,
    beta_max: f64,
) -> Result<NoiseSchedule, DiffusionError> {
    if t_max < 1 {
        return Err(DiffusionError::BadRange("T must be ≥ 1".into()));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(DiffusionError::BadRange(format!(
            "need 0 < β_min ≤ β_max < 1, got [{beta_min}, {beta_max}]"
        )));
    }
    let frac = |t: usize| {
        if t_max == 1 {
            0.0
        } else {
            (t - 1) as f64 / (t_max - 1) as f64
        }
    };
    let betas: Vec<f64> = match kind {
        ScheduleKind::Linear => (1..=t_max)
            .map(|t| beta_min + (beta_max - beta_min) * frac(t))
            .collect(),
        ScheduleKind::Sigmoid => (1..=t_max)
            .map(|t| {
                let x = -6.0 + 12.0 * frac(t);
                beta_min + (beta_max - beta_min) / (1.0 + (-x).exp())
            })
            .collect(),
        ScheduleKind::Cosine => {
            let s = 0.008;
            let f = |u: f64| ((u + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
            (1..=t_max)
                .map(|t| {
                    let b = 1.0 - f(t as f64 / t_max as f64) / f((t - 1) as f64 / t_max as f64);
                    b.clamp(beta_min, beta_max)
                })
                .collect()
        }
    };
    NoiseSchedule::from_betas(betas)
}

/// The latent M_t: ligand coordinates and per-atom type rows (one-hot
/// throughout sampling) at step t.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    pub x: Vec<Point3>,
    pub v: Vec<Vec<f64>>,
    pub t: usize,
}

/// Per-atom categorical posterior c̃ over K types.
#[derive(Debug, Clone, PartialEq)]
pub struct TypePosterior {
    pub probs: Vec<Vec<f64>>,
}

/// Source of randomness for sampling, abstracted so trajectories can be
/// recorded and replayed (e.g. with rotated Gaussian draws).
pub trait NoiseSource {
    fn standard_normal(&mut self) -> f64;
    fn uniform(&mut self) -> f64;
}

pub struct RngNoise<R: Rng> {
    pub rng: R,
}

impl<R: Rng> RngNoise<R> {
    pub fn new(rng: R) -> Self {
        RngNoise { rng }
    }
}

impl<R: Rng> NoiseSource for RngNoise<R> {
    fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    fn uniform(&mut self) -> f64 {
        self.rng.gen()
    }
}

/// Draws captured by a [`RecordingNoise`], replayable via [`ReplayNoise`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NoiseTrace {
    pub gaussians: Vec<f64>,
    pub uniforms: Vec<f64>,
}

pub struct RecordingNoise<'a> {
    pub inner: &'a mut dyn NoiseSource,
    pub trace: NoiseTrace,
}

impl<'a> RecordingNoise<'a> {
    pub fn new(inner: &'a mut dyn NoiseSource) -> Self {
        RecordingNoise {
            inner,
            trace: NoiseTrace::default(),
        }
    }
}

impl NoiseSource for RecordingNoise<'_> {
    fn standard_normal(&mut self) -> f64 {
        let v = self.inner.standard_normal();
        self.trace.gaussians.push(v);
        v
    }

    fn uniform(&mut self) -> f64 {
        let v = self.inner.uniform();
        self.trace.uniforms.push(v);
        v
    }
}

pub struct ReplayNoise {
    trace: NoiseTrace,
    gi: usize,
    ui: usize,
}

impl ReplayNoise {
    pub fn new(trace: NoiseTrace) -> Self {
        ReplayNoise { trace, gi: 0, ui: 0 }
    }
}

impl NoiseSource for ReplayNoise {
    fn standard_normal(&mut self) -> f64 {
        let v = self.trace.gaussians[self.gi];
        self.gi += 1;
        v
    }

    fn uniform(&mut self) -> f64 {
        let v = self.trace.uniforms[self.ui];
        self.ui += 1;
        v
    }
}

/// x_t = √ᾱ_t·x₀ + √(1−ᾱ_t)·ε.
pub fn q_sample_pos(x0: &[Point3], t: usize, schedule: &NoiseSchedule, eps: &[Point3]) -> Vec<Point3> {
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.iter()
        .zip(eps)
        .map(|(x, e)| Point3::new(a * x.x + b * e.x, a * x.y + b * e.y, a * x.z + b * e.z))
        .collect()
}

/// Marginal q(v_t|v₀) = ᾱ_t·v₀ + (1−ᾱ_t)/K.
pub fn marginal_type_probs(v0: &[f64], t: usize, schedule: &NoiseSchedule) -> Vec<f64> {
    let ab = schedule.alpha_bar(t);
    let k = v0.len() as f64;
    v0.iter().map(|p| ab * p + (1.0 - ab) / k).collect()
}

/// Inverse-CDF categorical draw; probabilities are renormalized defensively.
pub fn sample_categorical(probs: &[f64], u: f64) -> usize {
    let total: f64 = probs.iter().sum();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p / total;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn one_hot_row(idx: usize, k: usize) -> Vec<f64> {
    let mut row = vec![0.0; k];
    row[idx] = 1.0;
    row
}

/// Categorical draw from the marginal q(v_t|v₀); returns a one-hot row.
pub fn q_sample_type(v0: &[f64], t: usize, schedule: &NoiseSchedule, noise: &mut dyn NoiseSource) -> Vec<f64> {
    let probs = marginal_type_probs(v0, t, schedule);
    one_hot_row(sample_categorical(&probs, noise.uniform()), v0.len())
}

/// Gaussian posterior q(x_{t−1}|x_t, x̂₀): mean
/// μ̃ = √ᾱ_{t−1}β_t/(1−ᾱ_t)·x̂₀ + √α_t(1−ᾱ_{t−1})/(1−ᾱ_t)·x_t,
/// variance β̃_t.
pub fn posterior_pos(
    x_t: &[Point3],
    x0_hat: &[Point3],
    t: usize,
    schedule: &NoiseSchedule,
) -> (Vec<Point3>, f64) {
    let ab_t = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t - 1);
    let c0 = ab_prev.sqrt() * schedule.beta(t) / (1.0 - ab_t);
    let ct = schedule.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab_t);
    let mean = x_t
        .iter()
        .zip(x0_hat)
        .map(|(xt, x0)| *x0 * c0 + *xt * ct)
        .collect();
    (mean, schedule.beta_tilde(t))
}

/// One row of the categorical posterior:
/// c* = [α_t v_t + (1−α_t)/K] ⊙ [ᾱ_{t−1} v̂₀ + (1−ᾱ_{t−1})/K], c̃ = c*/Σc*.
pub fn posterior_type_row(
    v_t: &[f64],
    v0_hat: &[f64],
    t: usize,
    schedule: &NoiseSchedule,
) -> Vec<f64> {
    let a = schedule.alpha(t);
    let ab_prev = schedule.alpha_bar(t - 1);
    let k = v_t.len() as f64;
    let c_star: Vec<f64> = v_t
        .iter()
        .zip(v0_hat)
        .map(|(vt, v0)| (a * vt + (1.0 - a) / k) * (ab_prev * v0 + (1.0 - ab_prev) / k))
        .collect();
    let total: f64 = c_star.iter().sum();
    assert!(total > 0.0, "degenerate categorical posterior row");
    c_star.iter().map(|c| c / total).collect()
}

pub fn posterior_type(
    v_t: &[Vec<f64>],
    v0_hat: &[Vec<f64>],
    t: usize,
    schedule: &NoiseSchedule,
) -> TypePosterior {
    TypePosterior {
        probs: v_t
            .iter()
            .zip(v0_hat)
            .map(|(vt, v0)| posterior_type_row(vt, v0, t, schedule))
            .collect(),
    }
}

/// Draws x_{t−1} from N(mean, var·I) and v_{t−1} from the posterior rows.
/// Draw order is fixed (all position Gaussians, then one uniform per atom;
/// no Gaussians at t = 1) so every reverse-step variant consumes the noise
/// stream identically.
pub fn draw_next_state(
    mean: &[Point3],
    var: f64,
    type_probs: &[Vec<f64>],
    t: usize,
    noise: &mut dyn NoiseSource,
    argmax_final: bool,
) -> DiffusionState {
    let sd = var.sqrt();
    let x: Vec<Point3> = if t > 1 {
        mean.iter()
            .map(|m| {
                let e = Point3::new(
                    noise.standard_normal(),
                    noise.standard_normal(),
                    noise.standard_normal(),
                );
                *m + e * sd
            })
            .collect()
    } else {
        mean.to_vec()
    };
    let v = type_probs
        .iter()
        .map(|row| {
            let idx = if t == 1 && argmax_final {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0
            } else {
                sample_categorical(row, noise.uniform())
            };
            one_hot_row(idx, row.len())
        })
        .collect();
    DiffusionState { x, v, t: t - 1 }
}

/// One reverse step M_t → M_{t−1} conditioned on a single pocket graph.
pub fn reverse_step(
    params: &NetworkParams,
    graph: &ComplexGraph,
    state: &DiffusionState,
    schedule: &NoiseSchedule,
    noise: &mut dyn NoiseSource,
    argmax_final: bool,
) -> Result<DiffusionState, DiffusionError> {
    let t = state.t;
    let pred = predict(params, GraphInput::Single(graph), &state.x, &state.v, t, schedule.t_max)?;
    let (mean, var) = posterior_pos(&state.x, &pred.x0, t, schedule);
    let post = posterior_type(&state.v, &pred.v0, t, schedule);
    Ok(draw_next_state(&mean, var, &post.probs, t, noise, argmax_final))
}

/// Prior draw: positions from N(center, I), types uniform over K.
pub fn sample_prior(
    center: Point3,
    n_atoms: usize,
    k: usize,
    t_max: usize,
    noise: &mut dyn NoiseSource,
) -> DiffusionState {
    let x = (0..n_atoms)
        .map(|_| {
            center
                + Point3::new(
                    noise.standard_normal(),
                    noise.standard_normal(),
                    noise.standard_normal(),
                )
        })
        .collect();
    let uniform = vec![1.0 / k as f64; k];
    let v = (0..n_atoms)
        .map(|_| one_hot_row(sample_categorical(&uniform, noise.uniform()), k))
        .collect();
    DiffusionState { x, v, t: t_max }
}

fn decode_molecule(state: &DiffusionState, vocab: &AtomTypeVocab, name: &str) -> Molecule {
    let atoms = state
        .x
        .iter()
        .zip(&state.v)
        .map(|(p, v)| crate::chem::Atom {
            position: *p,
            type_probs: v.clone(),
        })
        .collect();
    infer_bonds(&Molecule {
        vocab: vocab.clone(),
        name: name.to_string(),
        atoms,
        bonds: None,
    })
}

/// Full single-target generation: prior around the pocket centroid, T
/// reverse steps with per-step graph rebuilds, bond inference at the end.
///
/// The trajectory runs in the pocket-centered frame (centroid subtracted)
/// because the Gaussian posterior contracts toward the frame origin; the
/// result is shifted back, which makes sampling translation-covariant.
#[allow(clippy::too_many_arguments)]
pub fn sample_single(
    params: &NetworkParams,
    pocket: &Pocket,
    vocab: &AtomTypeVocab,
    n_atoms: usize,
    schedule: &NoiseSchedule,
    k_neighbors: usize,
    noise: &mut dyn NoiseSource,
    argmax_final: bool,
    name: &str,
) -> Result<Molecule, DiffusionError> {
    let center = pocket.centroid();
    let mut centered = pocket.clone();
    for a in centered.atoms.iter_mut() {
        a.position = a.position - center;
    }
    let mut state = sample_prior(
        Point3::new(0.0, 0.0, 0.0),
        n_atoms,
        params.cfg.lig_classes,
        schedule.t_max,
        noise,
    );
    while state.t > 0 {
        let lig = LigandState {
            positions: state.x.clone(),
            types: state.v.clone(),
        };
        let graph = build_complex_graph(&centered, &lig, k_neighbors)
            .map_err(|e| DiffusionError::BadRange(e.to_string()))?;
        state = reverse_step(params, &graph, &state, schedule, noise, argmax_final)?;
    }
    for p in state.x.iter_mut() {
        *p = *p + center;
    }
    Ok(decode_molecule(&state, vocab, name))
}

/// Deterministic loss at a fixed corruption (t, x_t, v_t):
/// mean ‖x̂₀ − x₀‖² per atom + λ_v · mean cross-entropy, λ_v = 100.
pub fn training_loss_at(
    params: &NetworkParams,
    mol0: &Molecule,
    pocket: &Pocket,
    k_neighbors: usize,
    t: usize,
    x_t: &[Point3],
    v_t: &[Vec<f64>],
    schedule: &NoiseSchedule,
) -> Result<(f64, ParamGrads), DiffusionError> {
    let lig = LigandState {
        positions: x_t.to_vec(),
        types: v_t.to_vec(),
    };
    let graph = build_complex_graph(pocket, &lig, k_neighbors)
        .map_err(|e| DiffusionError::BadRange(e.to_string()))?;
    let mut fwd = crate::egnn::build_forward(
        params,
        GraphInput::Single(&graph),
        x_t,
        v_t,
        t,
        schedule.t_max,
    )?;
    let x0_target = Tensor::from_rows(
        &mol0
            .atoms
            .iter()
            .map(|a| vec![a.position.x, a.position.y, a.position.z])
            .collect::<Vec<_>>(),
    );
    let v0_target = Tensor::from_rows(
        &mol0
            .atoms
            .iter()
            .map(|a| a.type_probs.clone())
            .collect::<Vec<_>>(),
    );
    let mse = fwd.tape.mse_rows(fwd.x0, x0_target);
    let ce = fwd.tape.ce_with_logits(fwd.logits, v0_target);
    let ce_w = fwd.tape.scale(ce, 100.0);
    let loss = fwd.tape.add(mse, ce_w);
    let value = fwd.tape.value(loss).get(0, 0);
    let grads = fwd.param_grads(loss);
    Ok((value, grads))
}

/// Samples t and the corruption, then delegates to [`training_loss_at`].
pub fn training_loss(
    params: &NetworkParams,
    mol0: &Molecule,
    pocket: &Pocket,
    k_neighbors: usize,
    schedule: &NoiseSchedule,
    noise: &mut dyn NoiseSource,
) -> Result<(f64, ParamGrads), DiffusionError> {
    let t_max = schedule.t_max;
    let t = ((noise.uniform() * t_max as f64).floor() as usize + 1).min(t_max);
    let x0: Vec<Point3> = mol0.atoms.iter().map(|a| a.position).collect();
    let eps: Vec<Point3> = (0..x0.len())
        .map(|_| {
            Point3::new(
                noise.standard_normal(),
                noise.standard_normal(),
                noise.standard_normal(),
            )
        })
        .collect();
    let x_t = q_sample_pos(&x0, t, schedule, &eps);
    let v_t: Vec<Vec<f64>> = mol0
        .atoms
        .iter()
        .map(|a| q_sample_type(&a.type_probs, t, schedule, noise))
        .collect();
    training_loss_at(params, mol0, pocket, k_neighbors, t, &x_t, &v_t, schedule)
}
