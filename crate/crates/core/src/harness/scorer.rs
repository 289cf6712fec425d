//! Docking-score abstraction. Real engines (Vina and friends) sit behind
//! [`ScorerInterface`]; the deterministic [`MockScorer`] makes the full
//! selection/evaluation logic runnable offline.

use crate::chem::{Molecule, Pocket};

/// Binding-affinity estimate in kcal/mol, lower = stronger. Must be
/// deterministic for fixed inputs.
pub trait ScorerInterface {
    fn score(&self, mol: &Molecule, pocket: &Pocket) -> f64;
}

/// score = −a · #{ligand–pocket pairs within r_c} + 0.1 · #{pairs within
/// 1.4 Å}. Purely distance-based, hence invariant under jointly rigidly
/// transforming molecule and pocket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MockScorer {
    /// Contact reward per pair.
    pub a: f64,
    /// Contact radius in Å.
    pub r_c: f64,
}

pub const CLASH_RADIUS: f64 = 1.4;

impl Default for MockScorer {
    fn default() -> Self {
        MockScorer { a: 0.1, r_c: 4.0 }
    }
}

impl ScorerInterface for MockScorer {
    fn score(&self, mol: &Molecule, pocket: &Pocket) -> f64 {
        let mut contacts = 0usize;
        let mut clashes = 0usize;
        for la in &mol.atoms {
            for pa in &pocket.atoms {
                let d = la.position.dist(&pa.position);
                if d <= self.r_c {
                    contacts += 1;
                }
                if d <= CLASH_RADIUS {
                    clashes += 1;
                }
            }
        }
        -self.a * contacts as f64 + 0.1 * clashes as f64
    }
}
