//! Molecular data model: atoms with one-hot (or simplex) element types,
//! distance-based bond perception, rotatable-bond fragmentation, and the
//! plain-text structure file format.

use crate::geom::Point3;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ChemError {
    #[error("molecule has no bonds; run infer_bonds first")]
    MissingBonds,
    #[error("parse error at line {line}: {reason}")]
    ParseError { line: usize, reason: String },
    #[error("invalid atom type vector: {0}")]
    InvalidType(String),
}

/// Ordered element vocabulary of size K. Heavy atoms only; hydrogens are
/// not modeled.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomTypeVocab {
    elements: Vec<String>,
}

/// Covalent radii (Å) for the default vocabulary.
const COVALENT_RADII: &[(&str, f64)] = &[
    ("C", 0.76),
    ("N", 0.71),
    ("O", 0.66),
    ("F", 0.57),
    ("P", 1.07),
    ("S", 1.05),
    ("Cl", 1.02),
];

/// Distance slack added to the covalent-radius sum when perceiving bonds.
pub const BOND_TOLERANCE: f64 = 0.4;

impl AtomTypeVocab {
    pub fn new(elements: Vec<String>) -> Result<Self, ChemError> {
        if elements.len() < 2 {
            return Err(ChemError::InvalidType("vocabulary needs K >= 2".into()));
        }
        for (i, e) in elements.iter().enumerate() {
            if elements[..i].contains(e) {
                return Err(ChemError::InvalidType(format!("duplicate element {e}")));
            }
        }
        Ok(AtomTypeVocab { elements })
    }

    /// Default 7-element vocabulary: C, N, O, F, P, S, Cl.
    pub fn default_ligand() -> Self {
        AtomTypeVocab {
            elements: COVALENT_RADII.iter().map(|(e, _)| e.to_string()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn element(&self, idx: usize) -> &str {
        &self.elements[idx]
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.elements.iter().position(|e| e == symbol)
    }

    pub fn covalent_radius(&self, idx: usize) -> f64 {
        let sym = self.element(idx);
        COVALENT_RADII
            .iter()
            .find(|(e, _)| *e == sym)
            .map(|(_, r)| *r)
            .unwrap_or(0.77)
    }
}

/// One atom: a position and a type vector on the K-simplex (hard one-hot
/// for data, simplex-valued during diffusion).
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub position: Point3,
    pub type_probs: Vec<f64>,
}

impl Atom {
    pub fn one_hot(position: Point3, element_idx: usize, vocab_size: usize) -> Self {
        let mut type_probs = vec![0.0; vocab_size];
        type_probs[element_idx] = 1.0;
        Atom { position, type_probs }
    }

    /// Index of the most probable element.
    pub fn element_index(&self) -> usize {
        self.type_probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap()
    }

    pub fn validate_simplex(&self) -> Result<(), ChemError> {
        let sum: f64 = self.type_probs.iter().sum();
        if self.type_probs.iter().any(|&p| p < -1e-12) || (sum - 1.0).abs() > 1e-9 {
            return Err(ChemError::InvalidType(format!("type row sums to {sum}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bond {
    pub i: usize,
    pub j: usize,
    pub order: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Molecule {
    pub vocab: AtomTypeVocab,
    pub name: String,
    pub atoms: Vec<Atom>,
    pub bonds: Option<Vec<Bond>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pocket {
    pub vocab: AtomTypeVocab,
    pub identifier: String,
    pub atoms: Vec<Atom>,
}

impl Molecule {
    pub fn positions(&self) -> Vec<Point3> {
        self.atoms.iter().map(|a| a.position).collect()
    }
}

impl Pocket {
    pub fn positions(&self) -> Vec<Point3> {
        self.atoms.iter().map(|a| a.position).collect()
    }

    pub fn centroid(&self) -> Point3 {
        crate::geom::centroid(&self.positions())
    }
}

/// A connected piece of a molecule left after deleting rotatable bonds.
/// Indices refer to atoms of the parent molecule; anchors are the parent
/// indices that lost a bond in fragmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct Fragment {
    pub parent_indices: Vec<usize>,
    pub atoms: Vec<Atom>,
    pub anchors: Vec<usize>,
}

/// Distance-based bond perception: a single bond between i and j iff
/// d(i,j) <= r_cov(i) + r_cov(j) + 0.4 Å.
pub fn infer_bonds(mol: &Molecule) -> Molecule {
    let mut bonds = Vec::new();
    for i in 0..mol.atoms.len() {
        for j in (i + 1)..mol.atoms.len() {
            let ri = mol.vocab.covalent_radius(mol.atoms[i].element_index());
            let rj = mol.vocab.covalent_radius(mol.atoms[j].element_index());
            let d = mol.atoms[i].position.dist(&mol.atoms[j].position);
            if d <= ri + rj + BOND_TOLERANCE {
                bonds.push(Bond { i, j, order: 1 });
            }
        }
    }
    Molecule {
        vocab: mol.vocab.clone(),
        name: mol.name.clone(),
        atoms: mol.atoms.clone(),
        bonds: Some(bonds),
    }
}

fn adjacency(n: usize, bonds: &[Bond]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for b in bonds {
        adj[b.i].push(b.j);
        adj[b.j].push(b.i);
    }
    adj
}

/// Marks every bond that lies on some cycle of the bond graph.
fn cycle_bonds(n: usize, bonds: &[Bond]) -> Vec<bool> {
    // A bond is in a cycle iff removing it keeps its endpoints connected.
    let mut in_cycle = vec![false; bonds.len()];
    for (bi, b) in bonds.iter().enumerate() {
        let mut seen = vec![false; n];
        let mut stack = vec![b.i];
        seen[b.i] = true;
        while let Some(u) = stack.pop() {
            for (ei, e) in bonds.iter().enumerate() {
                if ei == bi {
                    continue;
                }
                let v = if e.i == u {
                    e.j
                } else if e.j == u {
                    e.i
                } else {
                    continue;
                };
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        in_cycle[bi] = seen[b.j];
    }
    in_cycle
}

/// Indices (into the molecule's bond list) of rotatable bonds: single
/// order, acyclic, and both endpoints of graph degree >= 2.
pub fn rotatable_bonds(mol: &Molecule) -> Result<Vec<usize>, ChemError> {
    let bonds = mol.bonds.as_ref().ok_or(ChemError::MissingBonds)?;
    let adj = adjacency(mol.atoms.len(), bonds);
    let in_cycle = cycle_bonds(mol.atoms.len(), bonds);
    Ok(bonds
        .iter()
        .enumerate()
        .filter(|(bi, b)| {
            b.order == 1 && !in_cycle[*bi] && adj[b.i].len() >= 2 && adj[b.j].len() >= 2
        })
        .map(|(bi, _)| bi)
        .collect())
}

/// Deletes all rotatable bonds and returns the connected components of the
/// remaining bond graph. Every atom lands in exactly one fragment; atoms
/// that lost a bond are recorded as anchors.
pub fn fragment_molecule(mol: &Molecule) -> Result<Vec<Fragment>, ChemError> {
    let bonds = mol.bonds.as_ref().ok_or(ChemError::MissingBonds)?;
    let rot: std::collections::HashSet<usize> = rotatable_bonds(mol)?.into_iter().collect();
    let kept: Vec<Bond> = bonds
        .iter()
        .enumerate()
        .filter(|(bi, _)| !rot.contains(bi))
        .map(|(_, b)| *b)
        .collect();
    let mut anchor_atoms: std::collections::BTreeSet<usize> = Default::default();
    for &bi in &rot {
        anchor_atoms.insert(bonds[bi].i);
        anchor_atoms.insert(bonds[bi].j);
    }

    let n = mol.atoms.len();
    let adj = adjacency(n, &kept);
    let mut comp = vec![usize::MAX; n];
    let mut ncomp = 0;
    for s in 0..n {
        if comp[s] != usize::MAX {
            continue;
        }
        let mut stack = vec![s];
        comp[s] = ncomp;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if comp[v] == usize::MAX {
                    comp[v] = ncomp;
                    stack.push(v);
                }
            }
        }
        ncomp += 1;
    }

    let mut frags = vec![
        Fragment {
            parent_indices: Vec::new(),
            atoms: Vec::new(),
            anchors: Vec::new(),
        };
        ncomp
    ];
    for i in 0..n {
        let f = &mut frags[comp[i]];
        f.parent_indices.push(i);
        f.atoms.push(mol.atoms[i].clone());
        if anchor_atoms.contains(&i) {
            f.anchors.push(i);
        }
    }
    Ok(frags)
}

/// Minimum pairwise Euclidean distance between atoms of two fragments.
pub fn min_interfragment_distance(a: &Fragment, b: &Fragment) -> f64 {
    let mut best = f64::INFINITY;
    for pa in &a.atoms {
        for pb in &b.atoms {
            best = best.min(pa.position.dist(&pb.position));
        }
    }
    best
}

/// Either kind of structure the file format can carry.
#[derive(Debug, Clone, PartialEq)]
pub enum Structure {
    Molecule(Molecule),
    Pocket(Pocket),
}

/// Parses the plain-text structure format:
/// line 1 = atom count N, line 2 = name (pockets prefixed `POCKET:`),
/// lines 3..N+2 = `ELEMENT x y z`, then an optional `BONDS` block of
/// `i j order` lines with 0-based indices.
pub fn parse_structure(input: &str) -> Result<Structure, ChemError> {
    parse_structure_with_vocab(input, &AtomTypeVocab::default_ligand())
}

pub fn parse_structure_with_vocab(
    input: &str,
    vocab: &AtomTypeVocab,
) -> Result<Structure, ChemError> {
    let lines: Vec<&str> = input.lines().collect();
    let err = |line: usize, reason: &str| ChemError::ParseError {
        line,
        reason: reason.to_string(),
    };
    if lines.is_empty() {
        return Err(err(1, "empty input"));
    }
    let n: usize = lines[0]
        .trim()
        .parse()
        .map_err(|_| err(1, "expected atom count"))?;
    if lines.len() < n + 2 {
        return Err(err(lines.len(), "truncated file"));
    }
    let name_line = lines[1].trim();
    let mut atoms = Vec::with_capacity(n);
    for (k, line) in lines[2..2 + n].iter().enumerate() {
        let lineno = k + 3;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 {
            return Err(err(lineno, "expected `ELEMENT x y z`"));
        }
        let idx = vocab
            .index_of(parts[0])
            .ok_or_else(|| err(lineno, &format!("unknown element symbol {}", parts[0])))?;
        let mut coords = [0.0; 3];
        for (c, p) in coords.iter_mut().zip(&parts[1..]) {
            *c = p
                .parse()
                .map_err(|_| err(lineno, &format!("malformed coordinate {p}")))?;
        }
        atoms.push(Atom::one_hot(
            Point3::new(coords[0], coords[1], coords[2]),
            idx,
            vocab.len(),
        ));
    }

    let mut bonds = None;
    let mut rest = lines[2 + n..].iter().enumerate();
    while let Some((k, line)) = rest.next() {
        let lineno = 2 + n + k + 1;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if t != "BONDS" {
            return Err(err(lineno, "expected BONDS block or end of file"));
        }
        let mut bs = Vec::new();
        for (k2, line) in rest.by_ref() {
            let lineno = 2 + n + k2 + 1;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            let parts: Vec<&str> = t.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(err(lineno, "expected `i j order`"));
            }
            let i: usize = parts[0].parse().map_err(|_| err(lineno, "bad bond index"))?;
            let j: usize = parts[1].parse().map_err(|_| err(lineno, "bad bond index"))?;
            let order: u8 = parts[2].parse().map_err(|_| err(lineno, "bad bond order"))?;
            if i >= n || j >= n || i == j {
                return Err(err(lineno, "bond endpoints out of range"));
            }
            if bs.iter().any(|b: &Bond| (b.i, b.j) == (i, j) || (b.i, b.j) == (j, i)) {
                return Err(err(lineno, "duplicate bond"));
            }
            bs.push(Bond { i, j, order });
        }
        bonds = Some(bs);
    }

    if let Some(id) = name_line.strip_prefix("POCKET:") {
        Ok(Structure::Pocket(Pocket {
            vocab: vocab.clone(),
            identifier: id.trim().to_string(),
            atoms,
        }))
    } else {
        Ok(Structure::Molecule(Molecule {
            vocab: vocab.clone(),
            name: name_line.to_string(),
            atoms,
            bonds,
        }))
    }
}

/// Serializes a structure; positions use Rust's shortest round-trip float
/// formatting so parse(serialize(m)) = m exactly.
pub fn serialize_structure(s: &Structure) -> String {
    let (atoms, name, bonds, vocab) = match s {
        Structure::Molecule(m) => (
            &m.atoms,
            m.name.clone(),
            m.bonds.as_deref(),
            &m.vocab,
        ),
        Structure::Pocket(p) => (
            &p.atoms,
            format!("POCKET: {}", p.identifier),
            None,
            &p.vocab,
        ),
    };
    let mut out = String::new();
    out.push_str(&format!("{}\n{}\n", atoms.len(), name));
    for a in atoms {
        out.push_str(&format!(
            "{} {} {} {}\n",
            vocab.element(a.element_index()),
            a.position.x,
            a.position.y,
            a.position.z
        ));
    }
    if let Some(bs) = bonds {
        out.push_str("BONDS\n");
        for b in bs {
            out.push_str(&format!("{} {} {}\n", b.i, b.j, b.order));
        }
    }
    out
}
