//! Dual-pocket alignment and compositional reverse sampling.
//!
//! Alignment brings pocket P₂ into P₁'s frame, either by matching
//! geometric centers or via prober ligands docked to both pockets
//! (Kabsch on the pose pair). Composition then samples one molecule
//! under both pockets at once:
//!
//! - CompDiff composes at the output: two single-graph predictions are
//!   blended — positions by the η-weighted mean of the x̂₀s, types by a
//!   product of the two categorical posteriors.
//! - DualDiff composes inside the network: every message-passing layer
//!   averages the per-graph ligand updates, yielding one prediction fed
//!   to the standard posteriors.
//!
//! For positions the posterior mean is linear in x̂₀, so averaging x̂₀
//! and averaging the per-graph drifts are the same map; both forms are
//! provided and tested against each other. For types the default is the
//! tempered product (c̃⁽¹⁾c̃⁽²⁾)^η renormalized: at η = 1/2 it is the
//! geometric mean, so two identical pockets reduce exactly to the
//! single-target step — the plain product squares the distribution and
//! breaks that reduction; it remains available as an option.

use crate::chem::{serialize_structure, AtomTypeVocab, Molecule, Pocket, Structure};
use crate::diffusion::{
    draw_next_state, posterior_pos, posterior_type, DiffusionError, DiffusionState, NoiseSchedule,
    NoiseSource,
};
use crate::egnn::{predict, GraphInput, NetworkParams};
use crate::geom::{apply_transform, kabsch, rmsd, GeomError, Point3, RigidTransform};
use crate::graph::{build_dual_graphs, LigandState};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ComposeError {
    #[error("prober list is empty")]
    EmptyProbers,
    #[error("no usable prober (all poses degenerate)")]
    NoUsableProber,
    #[error("criterion {0:?} requires probers")]
    BadCriterion(AlignmentCriterion),
    #[error("prober parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignmentCriterion {
    Center,
    MinRmsd,
    MinScoreSum,
}

impl std::str::FromStr for AlignmentCriterion {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "center" => Ok(AlignmentCriterion::Center),
            "min-rmsd" => Ok(AlignmentCriterion::MinRmsd),
            "min-score-sum" => Ok(AlignmentCriterion::MinScoreSum),
            other => Err(format!("unknown alignment criterion '{other}'")),
        }
    }
}

/// One prober ligand docked to both pockets: pose₁ in the P₁ frame,
/// pose₂ in the P₂ frame, with docking scores (lower is better).
#[derive(Debug, Clone, PartialEq)]
pub struct ProberPosePair {
    pub id: String,
    pub pose_1: Molecule,
    pub pose_2: Molecule,
    pub score_1: f64,
    pub score_2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompositionMode {
    CompDiff,
    DualDiff,
}

impl std::str::FromStr for CompositionMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "compdiff" => Ok(CompositionMode::CompDiff),
            "dualdiff" => Ok(CompositionMode::DualDiff),
            other => Err(format!("unknown composition mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComposeOptions {
    pub mode: CompositionMode,
    /// Position drift weight on graph 1.
    pub eta: f64,
    /// Tempered categorical product (c̃₁c̃₂)^η; plain product when false.
    pub tempered_categorical: bool,
    /// Combine the two per-graph posterior means instead of averaging x̂₀
    /// first (algebraically identical; kept as a cross-check).
    pub eps_form_positions: bool,
    /// Deterministic argmax for the type draw at t = 1.
    pub argmax_final: bool,
}

impl Default for ComposeOptions {
    fn default() -> Self {
        ComposeOptions {
            mode: CompositionMode::CompDiff,
            eta: 0.5,
            tempered_categorical: true,
            eps_form_positions: false,
            argmax_final: false,
        }
    }
}

/// R = I, t = centroid(P₁) − centroid(P₂).
pub fn align_center(p1: &Pocket, p2: &Pocket) -> RigidTransform {
    RigidTransform::translation_only((p1.centroid() - p2.centroid()).to_vec())
}

/// Per prober: T = kabsch(pose₂ → pose₁). Selection: MinRmsd minimizes
/// post-alignment RMSD, MinScoreSum minimizes score₁ + score₂.
/// Degenerate (collinear) probers are skipped.
pub fn align_prober(
    probers: &[ProberPosePair],
    criterion: AlignmentCriterion,
) -> Result<(RigidTransform, String), ComposeError> {
    if criterion == AlignmentCriterion::Center {
        return Err(ComposeError::BadCriterion(criterion));
    }
    if probers.is_empty() {
        return Err(ComposeError::EmptyProbers);
    }
    let mut best: Option<(f64, RigidTransform, &str)> = None;
    for p in probers {
        let src: Vec<Point3> = p.pose_2.atoms.iter().map(|a| a.position).collect();
        let dst: Vec<Point3> = p.pose_1.atoms.iter().map(|a| a.position).collect();
        let tr = match kabsch(&src, &dst) {
            Ok(tr) => tr,
            Err(GeomError::DegenerateInput(_)) => continue,
            Err(e) => return Err(e.into()),
        };
        let key = match criterion {
            AlignmentCriterion::MinRmsd => rmsd(&apply_transform(&tr, &src), &dst)?,
            AlignmentCriterion::MinScoreSum => p.score_1 + p.score_2,
            AlignmentCriterion::Center => unreachable!(),
        };
        if best.as_ref().map_or(true, |(k, _, _)| key < *k) {
            best = Some((key, tr, &p.id));
        }
    }
    best.map(|(_, tr, id)| (tr, id.to_string()))
        .ok_or(ComposeError::NoUsableProber)
}

/// Alignment transform for P₂ under any criterion; prober id is None for
/// Center.
pub fn choose_alignment(
    p1: &Pocket,
    p2: &Pocket,
    probers: &[ProberPosePair],
    criterion: AlignmentCriterion,
) -> Result<(RigidTransform, Option<String>), ComposeError> {
    match criterion {
        AlignmentCriterion::Center => Ok((align_center(p1, p2), None)),
        _ => align_prober(probers, criterion).map(|(tr, id)| (tr, Some(id))),
    }
}

pub fn transform_pocket(p: &Pocket, tr: &RigidTransform) -> Pocket {
    let mut out = p.clone();
    for a in out.atoms.iter_mut() {
        a.position = tr.apply_point(a.position);
    }
    out
}

/// Composes two categorical posterior rows. Tempered: (c₁c₂)^η / Z;
/// plain: c₁c₂ / Z.
pub fn compose_type_row(c1: &[f64], c2: &[f64], eta: f64, tempered: bool) -> Vec<f64> {
    let raw: Vec<f64> = c1
        .iter()
        .zip(c2)
        .map(|(a, b)| {
            let p = a * b;
            if tempered {
                p.powf(eta)
            } else {
                p
            }
        })
        .collect();
    let total: f64 = raw.iter().sum();
    assert!(total > 0.0, "degenerate composed categorical row");
    raw.iter().map(|p| p / total).collect()
}

/// One composed reverse step M_t → M_{t−1} under two pocket graphs.
/// Noise consumption matches `reverse_step` exactly in both modes.
pub fn comp_reverse_step(
    params: &NetworkParams,
    pair: &crate::graph::DualGraphPair,
    state: &DiffusionState,
    schedule: &NoiseSchedule,
    opts: &ComposeOptions,
    noise: &mut dyn NoiseSource,
) -> Result<DiffusionState, ComposeError> {
    let t = state.t;
    let (mean, var, type_rows) = match opts.mode {
        CompositionMode::CompDiff => {
            let pred1 = predict(
                params,
                GraphInput::Single(&pair.graph_1),
                &state.x,
                &state.v,
                t,
                schedule.t_max,
            )
            .map_err(DiffusionError::from)?;
            let pred2 = predict(
                params,
                GraphInput::Single(&pair.graph_2),
                &state.x,
                &state.v,
                t,
                schedule.t_max,
            )
            .map_err(DiffusionError::from)?;
            let eta = opts.eta;
            let (mean, var) = if opts.eps_form_positions {
                let (m1, var) = posterior_pos(&state.x, &pred1.x0, t, schedule);
                let (m2, _) = posterior_pos(&state.x, &pred2.x0, t, schedule);
                let mean = m1
                    .iter()
                    .zip(&m2)
                    .map(|(a, b)| *a * eta + *b * (1.0 - eta))
                    .collect();
                (mean, var)
            } else {
                let x0: Vec<Point3> = pred1
                    .x0
                    .iter()
                    .zip(&pred2.x0)
                    .map(|(a, b)| *a * eta + *b * (1.0 - eta))
                    .collect();
                posterior_pos(&state.x, &x0, t, schedule)
            };
            let c1 = posterior_type(&state.v, &pred1.v0, t, schedule);
            let c2 = posterior_type(&state.v, &pred2.v0, t, schedule);
            let rows = c1
                .probs
                .iter()
                .zip(&c2.probs)
                .map(|(a, b)| compose_type_row(a, b, eta, opts.tempered_categorical))
                .collect();
            (mean, var, rows)
        }
        CompositionMode::DualDiff => {
            let pred = predict(
                params,
                GraphInput::Pair(pair),
                &state.x,
                &state.v,
                t,
                schedule.t_max,
            )
            .map_err(DiffusionError::from)?;
            let (mean, var) = posterior_pos(&state.x, &pred.x0, t, schedule);
            let post = posterior_type(&state.v, &pred.v0, t, schedule);
            (mean, var, post.probs)
        }
    };
    Ok(draw_next_state(
        &mean,
        var,
        &type_rows,
        t,
        noise,
        opts.argmax_final,
    ))
}

#[derive(Debug, Clone)]
pub struct DualSampleResult {
    /// Generated molecule, in the P₁ frame.
    pub molecule: Molecule,
    /// Transform that was applied to P₂.
    pub transform: RigidTransform,
    /// Winning prober, when a prober criterion was used.
    pub prober_id: Option<String>,
}

/// Full dual-target generation: align P₂, then run T composed reverse
/// steps with per-step graph rebuilds. The trajectory runs in the frame
/// centered on the midpoint of the two pocket centroids (see
/// `sample_single` for why), and the result is shifted back.
#[allow(clippy::too_many_arguments)]
pub fn sample_dual(
    params: &NetworkParams,
    p1: &Pocket,
    p2: &Pocket,
    probers: &[ProberPosePair],
    criterion: AlignmentCriterion,
    vocab: &AtomTypeVocab,
    n_atoms: usize,
    schedule: &NoiseSchedule,
    k_neighbors: usize,
    opts: &ComposeOptions,
    noise: &mut dyn NoiseSource,
    name: &str,
) -> Result<DualSampleResult, ComposeError> {
    let (transform, prober_id) = choose_alignment(p1, p2, probers, criterion)?;
    let p2_aligned = transform_pocket(p2, &transform);

    let c1 = p1.centroid();
    let c2 = p2_aligned.centroid();
    let center = Point3::new((c1.x + c2.x) / 2.0, (c1.y + c2.y) / 2.0, (c1.z + c2.z) / 2.0);
    let shift = RigidTransform::translation_only(-center.to_vec());
    let p1c = transform_pocket(p1, &shift);
    let p2c = transform_pocket(&p2_aligned, &shift);

    let mut state = crate::diffusion::sample_prior(
        Point3::zero(),
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
        let pair = build_dual_graphs(&p1c, &p2c, &lig, k_neighbors)
            .map_err(|e| DiffusionError::BadRange(e.to_string()))?;
        state = comp_reverse_step(params, &pair, &state, schedule, opts, noise)?;
    }
    for p in state.x.iter_mut() {
        *p = *p + center;
    }
    let atoms = state
        .x
        .iter()
        .zip(&state.v)
        .map(|(p, v)| crate::chem::Atom {
            position: *p,
            type_probs: v.clone(),
        })
        .collect();
    let molecule = crate::chem::infer_bonds(&Molecule {
        vocab: vocab.clone(),
        name: name.to_string(),
        atoms,
        bonds: None,
    });
    Ok(DualSampleResult {
        molecule,
        transform,
        prober_id,
    })
}

/// Splits the next structure block (count line, name line, atom lines,
/// optional BONDS block) from `lines[start..]`; returns the block text and
/// the index one past its end.
fn take_structure_block(lines: &[&str], start: usize) -> Result<(String, usize), ComposeError> {
    let err = |line: usize, reason: &str| ComposeError::Parse {
        line: line + 1,
        reason: reason.to_string(),
    };
    let n: usize = lines
        .get(start)
        .ok_or_else(|| err(start, "missing atom count"))?
        .trim()
        .parse()
        .map_err(|_| err(start, "bad atom count"))?;
    let mut end = start + 2 + n;
    if end > lines.len() {
        return Err(err(start, "truncated structure block"));
    }
    if lines.get(end).map(|l| l.trim()) == Some("BONDS") {
        end += 1;
        while end < lines.len() {
            let toks: Vec<&str> = lines[end].split_whitespace().collect();
            if toks.len() == 3 && toks.iter().all(|t| t.parse::<usize>().is_ok()) {
                end += 1;
            } else {
                break;
            }
        }
    }
    Ok((lines[start..end].join("\n"), end))
}

/// Parses a prober-pose file: repeated sections of
/// `PROBER <id> <score1> <score2>` followed by two molecule blocks.
pub fn parse_prober_file(
    input: &str,
    vocab: &AtomTypeVocab,
) -> Result<Vec<ProberPosePair>, ComposeError> {
    let lines: Vec<&str> = input.lines().collect();
    let err = |line: usize, reason: &str| ComposeError::Parse {
        line: line + 1,
        reason: reason.to_string(),
    };
    let mut out = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            i += 1;
            continue;
        }
        let toks: Vec<&str> = lines[i].split_whitespace().collect();
        if toks.len() != 4 || toks[0] != "PROBER" {
            return Err(err(i, "expected 'PROBER <id> <score1> <score2>'"));
        }
        let id = toks[1].to_string();
        let score_1: f64 = toks[2].parse().map_err(|_| err(i, "bad score1"))?;
        let score_2: f64 = toks[3].parse().map_err(|_| err(i, "bad score2"))?;
        let (block1, next) = take_structure_block(&lines, i + 1)?;
        let (block2, after) = take_structure_block(&lines, next)?;
        let as_mol = |text: &str, at: usize| -> Result<Molecule, ComposeError> {
            match crate::chem::parse_structure_with_vocab(text, vocab) {
                Ok(Structure::Molecule(m)) => Ok(m),
                Ok(Structure::Pocket(_)) => Err(err(at, "prober pose must be a molecule")),
                Err(e) => Err(err(at, &e.to_string())),
            }
        };
        let pose_1 = as_mol(&block1, i + 1)?;
        let pose_2 = as_mol(&block2, next)?;
        if pose_1.atoms.len() != pose_2.atoms.len()
            || pose_1
                .atoms
                .iter()
                .zip(&pose_2.atoms)
                .any(|(a, b)| a.element_index() != b.element_index())
        {
            return Err(err(i, "pose atom counts/types disagree"));
        }
        out.push(ProberPosePair {
            id,
            pose_1,
            pose_2,
            score_1,
            score_2,
        });
        i = after;
    }
    if out.is_empty() {
        return Err(ComposeError::EmptyProbers);
    }
    Ok(out)
}

pub fn serialize_prober_file(probers: &[ProberPosePair]) -> String {
    let mut out = String::new();
    for p in probers {
        out.push_str(&format!("PROBER {} {} {}\n", p.id, p.score_1, p.score_2));
        out.push_str(&serialize_structure(&Structure::Molecule(p.pose_1.clone())));
        out.push_str(&serialize_structure(&Structure::Molecule(p.pose_2.clone())));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::Atom;
    use crate::diffusion::{
        make_schedule, reverse_step, sample_single, RngNoise, ScheduleKind,
    };
    use crate::egnn::{EgnnConfig, NetworkParams};
    use crate::geom::random_rotation;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pocket_at(origin: Point3, ident: &str) -> Pocket {
        let vocab = AtomTypeVocab::default_ligand();
        Pocket {
            vocab,
            identifier: ident.into(),
            atoms: vec![
                Atom::one_hot(origin, 0, 7),
                Atom::one_hot(origin + Point3::new(2.0, 0.0, 0.0), 1, 7),
                Atom::one_hot(origin + Point3::new(0.0, 2.0, 0.5), 2, 7),
                Atom::one_hot(origin + Point3::new(0.5, 0.5, 1.5), 0, 7),
            ],
        }
    }

    fn mol_from_points(pts: &[Point3], name: &str) -> Molecule {
        let vocab = AtomTypeVocab::default_ligand();
        Molecule {
            vocab,
            name: name.into(),
            atoms: pts.iter().map(|p| Atom::one_hot(*p, 0, 7)).collect(),
            bonds: None,
        }
    }

    fn small_params(seed: u64) -> NetworkParams {
        let cfg = EgnnConfig {
            lig_classes: 3,
            prot_classes: 8,
            hidden: 8,
            layers: 2,
            rbf_count: 4,
            rbf_max: 6.0,
            gate_clip: 15.0,
            time_features: 4,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        NetworkParams::init(cfg, &mut rng)
    }

    #[test]
    fn align_center_examples() {
        let p1 = pocket_at(Point3::zero(), "a");
        let tr = align_center(&p1, &p1);
        assert!(tr.translation().norm() < 1e-15);

        let p2 = pocket_at(Point3::new(5.0, 0.0, 0.0), "b");
        let tr = align_center(&p1, &p2);
        assert!((tr.translation() - Vector3::new(-5.0, 0.0, 0.0)).norm() < 1e-12);
        // Applying it matches the pockets' centroids.
        let moved = transform_pocket(&p2, &tr);
        assert!(moved.centroid().dist(&p1.centroid()) < 1e-12);
    }

    #[test]
    fn align_prober_construct_recover_and_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Point3> = (0..6)
            .map(|_| Point3::new(rng.gen::<f64>() * 4.0, rng.gen::<f64>() * 4.0, rng.gen::<f64>() * 4.0))
            .collect();
        let truth = RigidTransform::new(
            random_rotation(&mut rng),
            Vector3::new(1.0, -2.0, 0.5),
        )
        .unwrap();
        let pose1 = mol_from_points(&apply_transform(&truth, &pts), "pose1");
        let pose2 = mol_from_points(&pts, "pose2");
        let probers = vec![ProberPosePair {
            id: "prb1".into(),
            pose_1: pose1,
            pose_2: pose2,
            score_1: -8.0,
            score_2: -7.0,
        }];
        let (tr, id) = align_prober(&probers, AlignmentCriterion::MinRmsd).unwrap();
        assert_eq!(id, "prb1");
        assert!((tr.rotation() - truth.rotation()).norm() < 1e-8);
        assert!((tr.translation() - truth.translation()).norm() < 1e-8);

        // Score-sum selection: (−15, −12) → first wins.
        let mut p2 = probers[0].clone();
        p2.id = "prb2".into();
        p2.score_1 = -6.0;
        p2.score_2 = -6.0;
        let mut p1 = probers[0].clone();
        p1.score_1 = -8.0;
        p1.score_2 = -7.0;
        let (_, id) = align_prober(&[p1, p2], AlignmentCriterion::MinScoreSum).unwrap();
        assert_eq!(id, "prb1");

        assert!(matches!(
            align_prober(&[], AlignmentCriterion::MinRmsd),
            Err(ComposeError::EmptyProbers)
        ));
        assert!(matches!(
            align_prober(&probers, AlignmentCriterion::Center),
            Err(ComposeError::BadCriterion(_))
        ));

        // A collinear prober is skipped, not fatal.
        let line: Vec<Point3> = (0..4).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        let degenerate = ProberPosePair {
            id: "bad".into(),
            pose_1: mol_from_points(&line, "l1"),
            pose_2: mol_from_points(&line, "l2"),
            score_1: -99.0,
            score_2: -99.0,
        };
        let (_, id) =
            align_prober(&[degenerate.clone(), probers[0].clone()], AlignmentCriterion::MinScoreSum)
                .unwrap();
        assert_eq!(id, "prb1");
        assert!(matches!(
            align_prober(&[degenerate], AlignmentCriterion::MinRmsd),
            Err(ComposeError::NoUsableProber)
        ));
    }

    #[test]
    fn min_rmsd_matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut probers = Vec::new();
        for i in 0..5 {
            let pts: Vec<Point3> = (0..5)
                .map(|_| Point3::new(rng.gen::<f64>() * 3.0, rng.gen::<f64>() * 3.0, rng.gen::<f64>() * 3.0))
                .collect();
            // Distorted pose1 so RMSD is nonzero and varies per prober.
            let pose1_pts: Vec<Point3> = pts
                .iter()
                .map(|p| *p + Point3::new(rng.gen::<f64>() * 0.5, rng.gen::<f64>() * 0.5, 0.0))
                .collect();
            probers.push(ProberPosePair {
                id: format!("p{i}"),
                pose_1: mol_from_points(&pose1_pts, "a"),
                pose_2: mol_from_points(&pts, "b"),
                score_1: 0.0,
                score_2: 0.0,
            });
        }
        let (_, winner) = align_prober(&probers, AlignmentCriterion::MinRmsd).unwrap();
        let brute = probers
            .iter()
            .map(|p| {
                let src: Vec<Point3> = p.pose_2.atoms.iter().map(|a| a.position).collect();
                let dst: Vec<Point3> = p.pose_1.atoms.iter().map(|a| a.position).collect();
                let tr = kabsch(&src, &dst).unwrap();
                (p.id.clone(), rmsd(&apply_transform(&tr, &src), &dst).unwrap())
            })
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(winner, brute);
    }

    #[test]
    fn compose_type_row_cases() {
        // Plain product hand case.
        let c = compose_type_row(&[0.5, 0.3, 0.2], &[0.2, 0.3, 0.5], 0.5, false);
        assert!((c[0] - 0.10 / 0.29).abs() < 1e-12);
        assert!((c[1] - 0.09 / 0.29).abs() < 1e-12);
        assert!((c[2] - 0.10 / 0.29).abs() < 1e-12);
        // Tempered with equal inputs is the identity.
        let c = compose_type_row(&[0.7, 0.2, 0.1], &[0.7, 0.2, 0.1], 0.5, true);
        assert!((c[0] - 0.7).abs() < 1e-12);
        assert!((c[1] - 0.2).abs() < 1e-12);
        assert!((c[2] - 0.1).abs() < 1e-12);
    }

    fn fixed_state(t: usize) -> DiffusionState {
        DiffusionState {
            x: vec![Point3::new(0.5, 0.3, 0.2), Point3::new(1.2, 0.8, -0.4), Point3::new(-0.3, 1.1, 0.7)],
            v: vec![
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
            ],
            t,
        }
    }

    #[test]
    fn both_modes_reduce_on_identical_graphs() {
        let params = small_params(21);
        let s = make_schedule(ScheduleKind::Linear, 8, 1e-4, 0.2).unwrap();
        let p = pocket_at(Point3::zero(), "p");
        let state = fixed_state(5);
        let lig = LigandState {
            positions: state.x.clone(),
            types: state.v.clone(),
        };
        let pair = build_dual_graphs(&p, &p, &lig, 3).unwrap();
        let single = reverse_step(
            &params,
            &pair.graph_1,
            &state,
            &s,
            &mut RngNoise::new(ChaCha8Rng::seed_from_u64(1)),
            false,
        )
        .unwrap();
        for mode in [CompositionMode::CompDiff, CompositionMode::DualDiff] {
            let opts = ComposeOptions { mode, ..Default::default() };
            let comp = comp_reverse_step(
                &params,
                &pair,
                &state,
                &s,
                &opts,
                &mut RngNoise::new(ChaCha8Rng::seed_from_u64(1)),
            )
            .unwrap();
            for (a, b) in comp.x.iter().zip(&single.x) {
                assert!(a.dist(b) < 1e-12, "{mode:?} positions diverge");
            }
            assert_eq!(comp.v, single.v, "{mode:?} types diverge");
        }
    }

    #[test]
    fn eta_one_position_branch_matches_graph_1() {
        let params = small_params(22);
        let s = make_schedule(ScheduleKind::Linear, 8, 1e-4, 0.2).unwrap();
        let p1 = pocket_at(Point3::zero(), "a");
        let p2 = pocket_at(Point3::new(1.0, 0.5, -0.5), "b");
        let state = fixed_state(4);
        let lig = LigandState {
            positions: state.x.clone(),
            types: state.v.clone(),
        };
        let pair = build_dual_graphs(&p1, &p2, &lig, 3).unwrap();
        let opts = ComposeOptions {
            eta: 1.0,
            ..Default::default()
        };
        let comp = comp_reverse_step(
            &params,
            &pair,
            &state,
            &s,
            &opts,
            &mut RngNoise::new(ChaCha8Rng::seed_from_u64(2)),
        )
        .unwrap();
        let single = reverse_step(
            &params,
            &pair.graph_1,
            &state,
            &s,
            &mut RngNoise::new(ChaCha8Rng::seed_from_u64(2)),
            false,
        )
        .unwrap();
        for (a, b) in comp.x.iter().zip(&single.x) {
            assert!(a.dist(b) < 1e-12);
        }
    }

    #[test]
    fn eps_form_positions_agree_with_x0_averaging() {
        let params = small_params(23);
        let s = make_schedule(ScheduleKind::Linear, 8, 1e-4, 0.2).unwrap();
        let p1 = pocket_at(Point3::zero(), "a");
        let p2 = pocket_at(Point3::new(1.5, -0.5, 0.5), "b");
        let state = fixed_state(6);
        let lig = LigandState {
            positions: state.x.clone(),
            types: state.v.clone(),
        };
        let pair = build_dual_graphs(&p1, &p2, &lig, 3).unwrap();
        let base = ComposeOptions::default();
        let eps = ComposeOptions {
            eps_form_positions: true,
            ..Default::default()
        };
        let a = comp_reverse_step(&params, &pair, &state, &s, &base, &mut RngNoise::new(ChaCha8Rng::seed_from_u64(3))).unwrap();
        let b = comp_reverse_step(&params, &pair, &state, &s, &eps, &mut RngNoise::new(ChaCha8Rng::seed_from_u64(3))).unwrap();
        for (x, y) in a.x.iter().zip(&b.x) {
            assert!(x.dist(y) < 1e-12);
        }
        assert_eq!(a.v, b.v);
    }

    #[test]
    fn sample_dual_deterministic_and_reduces_to_single() {
        let params = small_params(24);
        let vocab = AtomTypeVocab::new(vec!["C".into(), "N".into(), "O".into()]).unwrap();
        let s = make_schedule(ScheduleKind::Linear, 5, 1e-4, 0.2).unwrap();
        let p1 = pocket_at(Point3::new(1.0, 2.0, 3.0), "a");
        let run = |mode, seed| {
            let opts = ComposeOptions { mode, ..Default::default() };
            let mut noise = RngNoise::new(ChaCha8Rng::seed_from_u64(seed));
            sample_dual(
                &params, &p1, &p1, &[], AlignmentCriterion::Center, &vocab, 4, &s, 3, &opts,
                &mut noise, "m",
            )
            .unwrap()
        };
        let a = run(CompositionMode::CompDiff, 5);
        let b = run(CompositionMode::CompDiff, 5);
        assert_eq!(a.molecule, b.molecule);
        assert!(a.prober_id.is_none());

        let mut noise = RngNoise::new(ChaCha8Rng::seed_from_u64(5));
        let single = sample_single(&params, &p1, &vocab, 4, &s, 3, &mut noise, false, "m").unwrap();
        for mode in [CompositionMode::CompDiff, CompositionMode::DualDiff] {
            let d = run(mode, 5);
            for (x, y) in d.molecule.atoms.iter().zip(&single.atoms) {
                assert!(x.position.dist(&y.position) < 1e-9, "{mode:?}");
                assert_eq!(x.type_probs, y.type_probs);
            }
        }
    }

    #[test]
    fn prober_file_roundtrip() {
        let vocab = AtomTypeVocab::default_ligand();
        let pts1 = [Point3::new(0.0, 0.0, 0.0), Point3::new(1.4, 0.1, 0.0), Point3::new(2.1, 1.2, 0.3)];
        let pts2 = [Point3::new(5.0, 5.0, 5.0), Point3::new(6.4, 5.1, 5.0), Point3::new(7.1, 6.2, 5.3)];
        let probers = vec![
            ProberPosePair {
                id: "lig_A".into(),
                pose_1: crate::chem::infer_bonds(&mol_from_points(&pts1, "lig_A")),
                pose_2: crate::chem::infer_bonds(&mol_from_points(&pts2, "lig_A")),
                score_1: -9.25,
                score_2: -8.5,
            },
            ProberPosePair {
                id: "lig_B".into(),
                pose_1: mol_from_points(&pts2, "lig_B"),
                pose_2: mol_from_points(&pts1, "lig_B"),
                score_1: -7.0,
                score_2: -6.125,
            },
        ];
        let text = serialize_prober_file(&probers);
        let back = parse_prober_file(&text, &vocab).unwrap();
        assert_eq!(probers, back);

        assert!(parse_prober_file("", &vocab).is_err());
        assert!(parse_prober_file("PROBER x -1", &vocab).is_err());
    }
}
