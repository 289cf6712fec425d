//! Fragment-pair selection for linker baselines and the evaluation
//! metrics (per-pocket scores, Max-score, Dual High Affinity).

use crate::chem::{min_interfragment_distance, Fragment, Molecule, Pocket};
use crate::harness::scorer::{ScorerInterface, CLASH_RADIUS};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no feasible fragment pair (all pairs within {CLASH_RADIUS} Å)")]
    NoFeasiblePair,
    #[error("empty input: {0}")]
    EmptyInput(String),
}

#[derive(Debug, Clone)]
pub struct ScoredFragment {
    pub fragment: Fragment,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMode {
    /// Minimize the cross-pair score sum among pairs whose minimum
    /// inter-fragment distance exceeds the clash radius.
    Joint,
    /// Pick each side's best-scoring fragment independently; cross-pocket
    /// geometry is ignored.
    Independent,
}

impl std::str::FromStr for SelectionMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "joint" => Ok(SelectionMode::Joint),
            "self" => Ok(SelectionMode::Independent),
            other => Err(format!("unknown selection mode '{other}' (joint|self)")),
        }
    }
}

/// Returns indices into (frags1, frags2) of the selected pair.
pub fn select_fragment_pair(
    frags1: &[ScoredFragment],
    frags2: &[ScoredFragment],
    mode: SelectionMode,
) -> Result<(usize, usize), EvalError> {
    if frags1.is_empty() || frags2.is_empty() {
        return Err(EvalError::EmptyInput("fragment list".into()));
    }
    let argmin = |fs: &[ScoredFragment]| {
        fs.iter()
            .enumerate()
            .min_by(|a, b| a.1.score.partial_cmp(&b.1.score).unwrap())
            .unwrap()
            .0
    };
    match mode {
        SelectionMode::Independent => Ok((argmin(frags1), argmin(frags2))),
        SelectionMode::Joint => {
            let mut best: Option<(f64, usize, usize)> = None;
            for (i, f1) in frags1.iter().enumerate() {
                for (j, f2) in frags2.iter().enumerate() {
                    if min_interfragment_distance(&f1.fragment, &f2.fragment) <= CLASH_RADIUS {
                        continue;
                    }
                    let sum = f1.score + f2.score;
                    if best.map_or(true, |(s, _, _)| sum < s) {
                        best = Some((sum, i, j));
                    }
                }
            }
            best.map(|(_, i, j)| (i, j)).ok_or(EvalError::NoFeasiblePair)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MolScores {
    pub name: String,
    pub score_1: f64,
    pub score_2: f64,
    pub max_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_mol: Vec<MolScores>,
    pub mean_1: f64,
    pub mean_2: f64,
    pub mean_max: f64,
    pub median_1: f64,
    pub median_2: f64,
    pub median_max: f64,
    pub ref_score_1: f64,
    pub ref_score_2: f64,
    /// Fraction strictly better than both references.
    pub dual_high_affinity: f64,
    /// Placeholder diversity: 1 − mean pairwise cosine similarity of
    /// atom-type count histograms. Not the fingerprint diversity used in
    /// cheminformatics pipelines.
    pub diversity: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Median with the exact midpoint rule for even counts.
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn type_histogram(mol: &Molecule) -> Vec<f64> {
    let mut h = vec![0.0; mol.vocab.len()];
    for a in &mol.atoms {
        h[a.element_index()] += 1.0;
    }
    h
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub fn evaluate(
    mols: &[Molecule],
    p1: &Pocket,
    p2: &Pocket,
    reference_1: &Molecule,
    reference_2: &Molecule,
    scorer: &dyn ScorerInterface,
) -> Result<EvalReport, EvalError> {
    if mols.is_empty() {
        return Err(EvalError::EmptyInput("molecule list".into()));
    }
    let ref_score_1 = scorer.score(reference_1, p1);
    let ref_score_2 = scorer.score(reference_2, p2);
    let per_mol: Vec<MolScores> = mols
        .iter()
        .map(|m| {
            let s1 = scorer.score(m, p1);
            let s2 = scorer.score(m, p2);
            MolScores {
                name: m.name.clone(),
                score_1: s1,
                score_2: s2,
                max_score: s1.max(s2),
            }
        })
        .collect();
    let s1: Vec<f64> = per_mol.iter().map(|m| m.score_1).collect();
    let s2: Vec<f64> = per_mol.iter().map(|m| m.score_2).collect();
    let sm: Vec<f64> = per_mol.iter().map(|m| m.max_score).collect();
    let dual = per_mol
        .iter()
        .filter(|m| m.score_1 < ref_score_1 && m.score_2 < ref_score_2)
        .count() as f64
        / per_mol.len() as f64;

    let hists: Vec<Vec<f64>> = mols.iter().map(type_histogram).collect();
    let mut sim_sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..hists.len() {
        for j in i + 1..hists.len() {
            sim_sum += cosine(&hists[i], &hists[j]);
            pairs += 1;
        }
    }
    let diversity = if pairs == 0 { 0.0 } else { 1.0 - sim_sum / pairs as f64 };

    Ok(EvalReport {
        mean_1: mean(&s1),
        mean_2: mean(&s2),
        mean_max: mean(&sm),
        median_1: median(&s1),
        median_2: median(&s2),
        median_max: median(&sm),
        ref_score_1,
        ref_score_2,
        dual_high_affinity: dual,
        diversity,
        per_mol,
    })
}

/// Delimited per-molecule table plus a summary block, stable column order.
pub fn format_report(r: &EvalReport) -> String {
    let mut out = String::from("name\tscore_1\tscore_2\tmax_score\n");
    for m in &r.per_mol {
        out.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\n",
            m.name, m.score_1, m.score_2, m.max_score
        ));
    }
    out.push_str("SUMMARY\n");
    out.push_str(&format!("mean_1\t{:.6}\n", r.mean_1));
    out.push_str(&format!("mean_2\t{:.6}\n", r.mean_2));
    out.push_str(&format!("mean_max\t{:.6}\n", r.mean_max));
    out.push_str(&format!("median_1\t{:.6}\n", r.median_1));
    out.push_str(&format!("median_2\t{:.6}\n", r.median_2));
    out.push_str(&format!("median_max\t{:.6}\n", r.median_max));
    out.push_str(&format!("ref_score_1\t{:.6}\n", r.ref_score_1));
    out.push_str(&format!("ref_score_2\t{:.6}\n", r.ref_score_2));
    out.push_str(&format!("dual_high_affinity\t{:.6}\n", r.dual_high_affinity));
    out.push_str(&format!("diversity\t{:.6}\n", r.diversity));
    out
}
