//! Heterogeneous protein-ligand complex graphs: joint knn over pocket and
//! ligand atoms with edge-kind labels, plus dual-graph pairs that share
//! their ligand nodes.
//!
//! Node ordering convention: ligand atoms first (indices 0..lig_count),
//! pocket atoms after. An edge (src, dst) carries the message from src to
//! dst; the in-neighbors of a node are its k nearest neighbors.

use crate::chem::Pocket;
use crate::geom::{knn_neighbors, GeomError, Point3};

/// Role of a directed edge, determined solely by the (src, dst) masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    ProtProt,
    LigLig,
    ProtLig,
    LigProt,
}

impl EdgeKind {
    pub fn from_masks(src_is_ligand: bool, dst_is_ligand: bool) -> Self {
        match (src_is_ligand, dst_is_ligand) {
            (true, true) => EdgeKind::LigLig,
            (false, false) => EdgeKind::ProtProt,
            (false, true) => EdgeKind::ProtLig,
            (true, false) => EdgeKind::LigProt,
        }
    }

    pub fn index(self) -> usize {
        match self {
            EdgeKind::ProtProt => 0,
            EdgeKind::LigLig => 1,
            EdgeKind::ProtLig => 2,
            EdgeKind::LigProt => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub kind: EdgeKind,
    pub dist: f64,
}

/// The diffusing ligand state seen by the graph: positions plus simplex
/// type vectors of length K.
#[derive(Debug, Clone, PartialEq)]
pub struct LigandState {
    pub positions: Vec<Point3>,
    pub types: Vec<Vec<f64>>,
}

/// Number of protein feature classes: the ligand vocabulary plus one
/// generic "other" slot.
pub fn protein_feature_width(ligand_vocab_size: usize) -> usize {
    ligand_vocab_size + 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGraph {
    pub lig_count: usize,
    /// Ligand positions first, then pocket positions.
    pub positions: Vec<Point3>,
    /// Ligand type rows, length K each.
    pub lig_types: Vec<Vec<f64>>,
    /// Protein one-hot rows, length K_P = K + 1 each (last slot = other).
    pub prot_types: Vec<Vec<f64>>,
    pub edges: Vec<Edge>,
    pub k: usize,
}

impl ComplexGraph {
    pub fn node_count(&self) -> usize {
        self.positions.len()
    }

    pub fn is_ligand(&self, node: usize) -> bool {
        node < self.lig_count
    }
}

fn protein_features(pocket: &Pocket, width: usize) -> Vec<Vec<f64>> {
    pocket
        .atoms
        .iter()
        .map(|a| {
            let mut row = vec![0.0; width];
            let idx = a.element_index();
            if idx < width - 1 {
                row[idx] = 1.0;
            } else {
                row[width - 1] = 1.0;
            }
            row
        })
        .collect()
}

/// Builds the joint knn graph over pocket + ligand atoms.
pub fn build_complex_graph(
    pocket: &Pocket,
    ligand: &LigandState,
    k: usize,
) -> Result<ComplexGraph, GeomError> {
    assert!(!pocket.atoms.is_empty(), "pocket must be nonempty");
    let lig_count = ligand.positions.len();
    let mut positions = ligand.positions.clone();
    positions.extend(pocket.atoms.iter().map(|a| a.position));

    let neighbors = knn_neighbors(&positions, k)?;
    let mut edges = Vec::with_capacity(positions.len() * k);
    for (dst, ns) in neighbors.iter().enumerate() {
        for &src in ns {
            edges.push(Edge {
                src,
                dst,
                kind: EdgeKind::from_masks(src < lig_count, dst < lig_count),
                dist: positions[src].dist(&positions[dst]),
            });
        }
    }
    let kp = protein_feature_width(pocket.vocab.len());
    Ok(ComplexGraph {
        lig_count,
        positions,
        lig_types: ligand.types.clone(),
        prot_types: protein_features(pocket, kp),
        edges,
        k,
    })
}

/// Two complex graphs whose ligand node blocks are identical; ligand node
/// i of graph_1 is ligand node i of graph_2.
#[derive(Debug, Clone, PartialEq)]
pub struct DualGraphPair {
    pub graph_1: ComplexGraph,
    pub graph_2: ComplexGraph,
}

impl DualGraphPair {
    pub fn lig_count(&self) -> usize {
        self.graph_1.lig_count
    }

    /// The shared-ligand contract: positions and types of the ligand block
    /// agree between the two graphs.
    pub fn ligand_blocks_consistent(&self) -> bool {
        self.graph_1.lig_count == self.graph_2.lig_count
            && self.graph_1.positions[..self.graph_1.lig_count]
                == self.graph_2.positions[..self.graph_2.lig_count]
            && self.graph_1.lig_types == self.graph_2.lig_types
    }
}

pub fn build_dual_graphs(
    p1: &Pocket,
    p2_transformed: &Pocket,
    ligand: &LigandState,
    k: usize,
) -> Result<DualGraphPair, GeomError> {
    Ok(DualGraphPair {
        graph_1: build_complex_graph(p1, ligand, k)?,
        graph_2: build_complex_graph(p2_transformed, ligand, k)?,
    })
}

/// Rebuilds edges and distances for updated ligand positions; pocket atoms
/// are fixed.
pub fn refresh_distances(
    g: &ComplexGraph,
    new_ligand: &LigandState,
) -> Result<ComplexGraph, GeomError> {
    assert_eq!(new_ligand.positions.len(), g.lig_count, "ligand atom count changed");
    let mut positions = new_ligand.positions.clone();
    positions.extend_from_slice(&g.positions[g.lig_count..]);
    let neighbors = knn_neighbors(&positions, g.k)?;
    let mut edges = Vec::with_capacity(positions.len() * g.k);
    for (dst, ns) in neighbors.iter().enumerate() {
        for &src in ns {
            edges.push(Edge {
                src,
                dst,
                kind: EdgeKind::from_masks(src < g.lig_count, dst < g.lig_count),
                dist: positions[src].dist(&positions[dst]),
            });
        }
    }
    Ok(ComplexGraph {
        lig_count: g.lig_count,
        positions,
        lig_types: new_ligand.types.clone(),
        prot_types: g.prot_types.clone(),
        edges,
        k: g.k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::{Atom, AtomTypeVocab};
    use crate::geom::{apply_transform, random_rotation, RigidTransform};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pocket_at(pts: &[(f64, f64, f64)]) -> Pocket {
        let vocab = AtomTypeVocab::default_ligand();
        Pocket {
            vocab: vocab.clone(),
            identifier: "p".into(),
            atoms: pts
                .iter()
                .map(|&(x, y, z)| Atom::one_hot(Point3::new(x, y, z), 0, vocab.len()))
                .collect(),
        }
    }

    fn ligand_at(pts: &[(f64, f64, f64)]) -> LigandState {
        LigandState {
            positions: pts.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect(),
            types: pts.iter().map(|_| {
                let mut v = vec![0.0; 7];
                v[0] = 1.0;
                v
            }).collect(),
        }
    }

    #[test]
    fn two_node_graph_edge_kinds() {
        let g = build_complex_graph(
            &pocket_at(&[(3.0, 0.0, 0.0)]),
            &ligand_at(&[(0.0, 0.0, 0.0)]),
            1,
        )
        .unwrap();
        assert_eq!(g.edges.len(), 2);
        let kinds: Vec<EdgeKind> = g.edges.iter().map(|e| e.kind).collect();
        assert!(kinds.contains(&EdgeKind::ProtLig));
        assert!(kinds.contains(&EdgeKind::LigProt));
    }

    #[test]
    #[should_panic(expected = "pocket must be nonempty")]
    fn empty_pocket_rejected() {
        let _ = build_complex_graph(&pocket_at(&[]), &ligand_at(&[(0.0, 0.0, 0.0)]), 1);
    }

    fn brute_force_knn(positions: &[Point3], k: usize) -> Vec<Vec<usize>> {
        let n = positions.len();
        (0..n)
            .map(|i| {
                let mut c: Vec<(f64, usize)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| (positions[i].dist(&positions[j]), j))
                    .collect();
                c.sort_by(|a, b| a.partial_cmp(b).unwrap());
                c.into_iter().take(k).map(|(_, j)| j).collect()
            })
            .collect()
    }

    #[test]
    fn edges_match_brute_force_knn() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let pk: Vec<(f64, f64, f64)> = (0..5).map(|_| (rng.gen::<f64>() * 8.0, rng.gen::<f64>() * 8.0, rng.gen::<f64>() * 8.0)).collect();
        let lg: Vec<(f64, f64, f64)> = (0..3).map(|_| (rng.gen::<f64>() * 8.0, rng.gen::<f64>() * 8.0, rng.gen::<f64>() * 8.0)).collect();
        let g = build_complex_graph(&pocket_at(&pk), &ligand_at(&lg), 2).unwrap();
        assert_eq!(g.edges.len(), 16);
        let oracle = brute_force_knn(&g.positions, 2);
        for (dst, ns) in oracle.iter().enumerate() {
            for &src in ns {
                let e = g
                    .edges
                    .iter()
                    .find(|e| e.src == src && e.dst == dst)
                    .expect("edge missing");
                assert_eq!(e.kind, EdgeKind::from_masks(src < 3, dst < 3));
                assert!((e.dist - g.positions[src].dist(&g.positions[dst])).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dual_graphs_identical_pockets() {
        let pk = pocket_at(&[(3.0, 0.0, 0.0), (0.0, 3.0, 0.0), (0.0, 0.0, 3.0)]);
        let lg = ligand_at(&[(0.5, 0.5, 0.5), (1.0, 1.0, 1.0)]);
        let pair = build_dual_graphs(&pk, &pk, &lg, 2).unwrap();
        assert_eq!(pair.graph_1, pair.graph_2);
        assert!(pair.ligand_blocks_consistent());
    }

    #[test]
    fn dual_graphs_distant_pockets_differ() {
        let p1 = pocket_at(&[(3.0, 0.0, 0.0), (4.0, 0.0, 0.0)]);
        let p2 = pocket_at(&[(50.0, 0.0, 0.0), (51.0, 0.0, 0.0)]);
        let lg = ligand_at(&[(0.0, 0.0, 0.0), (1.0, 0.0, 0.0)]);
        let pair = build_dual_graphs(&p1, &p2, &lg, 2).unwrap();
        assert_ne!(pair.graph_1.edges, pair.graph_2.edges);
        assert!(pair.ligand_blocks_consistent());
    }

    #[test]
    fn refresh_updates_shared_state() {
        let pk = pocket_at(&[(3.0, 0.0, 0.0), (0.0, 3.0, 0.0), (0.0, 0.0, 3.0)]);
        let lg = ligand_at(&[(0.5, 0.5, 0.5), (1.0, 1.0, 1.0)]);
        let pair = build_dual_graphs(&pk, &pk, &lg, 2).unwrap();
        let moved = ligand_at(&[(0.6, 0.5, 0.5), (1.0, 1.1, 1.0)]);
        let g1 = refresh_distances(&pair.graph_1, &moved).unwrap();
        let g2 = refresh_distances(&pair.graph_2, &moved).unwrap();
        assert_eq!(g1, g2);
        for e in &g1.edges {
            assert!((e.dist - g1.positions[e.src].dist(&g1.positions[e.dst])).abs() < 1e-9);
        }
        // Unchanged positions: identical graph back.
        let same = refresh_distances(&pair.graph_1, &lg).unwrap();
        assert_eq!(same, pair.graph_1);
    }

    #[test]
    fn topology_invariant_under_rigid_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let pk: Vec<(f64, f64, f64)> = (0..6).map(|_| (rng.gen::<f64>() * 7.0, rng.gen::<f64>() * 7.0, rng.gen::<f64>() * 7.0)).collect();
            let lg: Vec<(f64, f64, f64)> = (0..4).map(|_| (rng.gen::<f64>() * 7.0, rng.gen::<f64>() * 7.0, rng.gen::<f64>() * 7.0)).collect();
            let g = build_complex_graph(&pocket_at(&pk), &ligand_at(&lg), 3).unwrap();

            let t = RigidTransform::new(
                random_rotation(&mut rng),
                Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()),
            )
            .unwrap();
            let tp = apply_transform(&t, &pocket_at(&pk).positions());
            let tl = apply_transform(&t, &ligand_at(&lg).positions);
            let vocab = AtomTypeVocab::default_ligand();
            let pk2 = Pocket {
                vocab: vocab.clone(),
                identifier: "p".into(),
                atoms: tp.iter().map(|&p| Atom::one_hot(p, 0, vocab.len())).collect(),
            };
            let lg2 = LigandState {
                positions: tl,
                types: ligand_at(&lg).types,
            };
            let g2 = build_complex_graph(&pk2, &lg2, 3).unwrap();
            let topo = |g: &ComplexGraph| -> Vec<(usize, usize, EdgeKind)> {
                g.edges.iter().map(|e| (e.src, e.dst, e.kind)).collect()
            };
            assert_eq!(topo(&g), topo(&g2));
        }
    }
}
