//! Property-based invariants over randomized inputs.

use dualgen::chem::{fragment_molecule, infer_bonds, Atom, AtomTypeVocab, Molecule};
use dualgen::compose::compose_type_row;
use dualgen::diffusion::{make_schedule, posterior_type_row, ScheduleKind};
use dualgen::geom::{
    apply_transform, kabsch, knn_neighbors, random_rotation, rmsd, Point3, RigidTransform,
};
use dualgen::harness::{MockScorer, ScorerInterface};
use dualgen::synergy::HillCurve;
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pts_strategy(min: usize, max: usize) -> impl Strategy<Value = Vec<Point3>> {
    prop::collection::vec((-8.0..8.0f64, -8.0..8.0f64, -8.0..8.0f64), min..=max)
        .prop_map(|v| v.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect())
}

fn simplex_strategy(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01..1.0f64, k).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn transform_strategy() -> impl Strategy<Value = RigidTransform> {
    (any::<u64>(), -5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64).prop_map(|(seed, x, y, z)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RigidTransform::new(random_rotation(&mut rng), Vector3::new(x, y, z)).unwrap()
    })
}

proptest! {
    #[test]
    fn knn_matches_brute_force(pts in pts_strategy(3, 12), k in 1usize..4) {
        prop_assume!(k < pts.len());
        let neigh = knn_neighbors(&pts, k).unwrap();
        for (i, ns) in neigh.iter().enumerate() {
            prop_assert_eq!(ns.len(), k);
            let mut order: Vec<usize> = (0..pts.len()).filter(|&j| j != i).collect();
            order.sort_by(|&a, &b| {
                pts[i].dist(&pts[a]).partial_cmp(&pts[i].dist(&pts[b])).unwrap()
            });
            // With continuous random coordinates ties have measure zero, so
            // the sets must agree exactly.
            let mut ours = ns.clone();
            ours.sort();
            let mut oracle = order[..k].to_vec();
            oracle.sort();
            prop_assert_eq!(ours, oracle);
        }
    }

    #[test]
    fn rmsd_is_symmetric_and_zero_on_self(pts in pts_strategy(2, 10)) {
        let shifted: Vec<Point3> = pts.iter().map(|p| *p + Point3::new(0.1, -0.2, 0.3)).collect();
        let ab = rmsd(&pts, &shifted).unwrap();
        let ba = rmsd(&shifted, &pts).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(rmsd(&pts, &pts).unwrap() < 1e-12);
    }

    #[test]
    fn kabsch_recovers_rigid_motion(pts in pts_strategy(4, 10), tr in transform_strategy()) {
        // Degenerate (collinear) clouds are rejected upstream; skip them.
        let moved = apply_transform(&tr, &pts);
        if let Ok(recovered) = kabsch(&pts, &moved) {
            let back = apply_transform(&recovered, &pts);
            prop_assert!(rmsd(&back, &moved).unwrap() < 1e-8);
        }
    }

    #[test]
    fn transform_inverse_roundtrips(pts in pts_strategy(1, 6), tr in transform_strategy()) {
        let back = apply_transform(&tr.inverse(), &apply_transform(&tr, &pts));
        for (a, b) in back.iter().zip(&pts) {
            prop_assert!(a.dist(b) < 1e-9);
        }
    }

    #[test]
    fn fragments_partition_atoms(pts in pts_strategy(2, 12)) {
        let vocab = AtomTypeVocab::default_ligand();
        let mol = infer_bonds(&Molecule {
            vocab,
            name: "m".into(),
            atoms: pts.iter().map(|p| Atom::one_hot(*p, 0, 7)).collect(),
            bonds: None,
        });
        let frags = fragment_molecule(&mol).unwrap();
        let mut seen = vec![false; pts.len()];
        for f in &frags {
            for &i in &f.parent_indices {
                prop_assert!(!seen[i], "atom {} in two fragments", i);
                seen[i] = true;
            }
        }
        prop_assert!(seen.iter().all(|&s| s), "fragments do not cover all atoms");
    }

    #[test]
    fn categorical_posterior_is_simplex(
        v0 in simplex_strategy(5),
        jt in 0usize..5,
        t in 2usize..=20,
    ) {
        let schedule = make_schedule(ScheduleKind::Linear, 20, 1e-3, 0.2).unwrap();
        let mut vt = vec![0.0; 5];
        vt[jt] = 1.0;
        let c = posterior_type_row(&vt, &v0, t, &schedule);
        prop_assert!(c.iter().all(|&p| p >= 0.0));
        prop_assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn composed_row_is_simplex_and_symmetric(
        c1 in simplex_strategy(6),
        c2 in simplex_strategy(6),
        tempered in any::<bool>(),
    ) {
        let ab = compose_type_row(&c1, &c2, 0.5, tempered);
        let ba = compose_type_row(&c2, &c1, 0.5, tempered);
        prop_assert!(ab.iter().all(|&p| p >= 0.0));
        prop_assert!((ab.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (x, y) in ab.iter().zip(&ba) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn schedule_tables_are_consistent(
        t_max in 2usize..=60,
        beta_min in 1e-5..1e-3f64,
        spread in 1.5..200.0f64,
    ) {
        let beta_max = (beta_min * spread).min(0.5);
        for kind in [ScheduleKind::Linear, ScheduleKind::Cosine, ScheduleKind::Sigmoid] {
            let s = make_schedule(kind, t_max, beta_min, beta_max).unwrap();
            prop_assert_eq!(s.alpha_bar(0), 1.0);
            for t in 1..=t_max {
                prop_assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
                prop_assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
                prop_assert!((s.alpha(t) - (1.0 - s.beta(t))).abs() < 1e-15);
                prop_assert!(s.beta_tilde(t) <= s.beta(t) + 1e-15);
            }
            prop_assert!(s.beta_tilde(1).abs() < 1e-300);
        }
    }

    #[test]
    fn hill_invert_roundtrips(
        e_max in 0.3..1.0f64,
        ec50 in 0.01..10.0f64,
        slope in 0.3..4.0f64,
        d in 0.001..100.0f64,
    ) {
        let c = HillCurve { e_max, ec50, slope };
        let e = c.eval(d);
        // Near saturation E_max − E cancels catastrophically; keep a
        // relative margin on both ends.
        prop_assume!(e > e_max * 1e-6 && e < e_max * (1.0 - 1e-6));
        let back = c.invert(e).unwrap();
        prop_assert!((back - d).abs() / d < 1e-6);
    }

    #[test]
    fn mock_score_is_rigid_invariant(
        lig in pts_strategy(2, 8),
        prot in pts_strategy(2, 8),
        tr in transform_strategy(),
    ) {
        let vocab = AtomTypeVocab::default_ligand();
        let as_mol = |pts: &[Point3]| Molecule {
            vocab: vocab.clone(),
            name: "m".into(),
            atoms: pts.iter().map(|p| Atom::one_hot(*p, 0, 7)).collect(),
            bonds: None,
        };
        let as_pocket = |pts: &[Point3]| dualgen::chem::Pocket {
            vocab: vocab.clone(),
            identifier: "p".into(),
            atoms: pts.iter().map(|p| Atom::one_hot(*p, 0, 7)).collect(),
        };
        let scorer = MockScorer::default();
        let before = scorer.score(&as_mol(&lig), &as_pocket(&prot));
        let after = scorer.score(
            &as_mol(&apply_transform(&tr, &lig)),
            &as_pocket(&apply_transform(&tr, &prot)),
        );
        // Identical pair counts up to distance-threshold roundoff.
        prop_assert!((before - after).abs() < 1e-9);
    }
}
