//! Dual-target, pocket-conditioned 3D molecule generation by compositional
//! SE(3)-equivariant diffusion sampling, plus the supporting machinery:
//! prober-based pocket alignment, rotatable-bond fragment selection, and
//! drug-synergy scoring for target-pair curation. External docking engines
//! are abstracted behind a scorer interface with a deterministic mock.

pub mod chem;
pub mod compose;
pub mod diffusion;
pub mod egnn;
pub mod geom;
pub mod graph;
pub mod harness;
pub mod synergy;
pub mod tape;
