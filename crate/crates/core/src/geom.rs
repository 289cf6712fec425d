//! Rigid-body math: points, proper rotations, Kabsch superposition, RMSD
//! and knn neighbor lists over point clouds.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("k = {k} too large for {n} points")]
    KTooLarge { k: usize, n: usize },
    #[error("invalid rotation matrix: {0}")]
    InvalidRotation(String),
}

/// A point in 3D space, coordinates in Ångström.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn zero() -> Self {
        Point3::new(0.0, 0.0, 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_vec(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vec(v: Vector3<f64>) -> Self {
        Point3::new(v.x, v.y, v.z)
    }

    pub fn dist(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

impl std::ops::Add for Point3 {
    type Output = Point3;
    fn add(self, rhs: Point3) -> Point3 {
        Point3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl std::ops::Sub for Point3 {
    type Output = Point3;
    fn sub(self, rhs: Point3) -> Point3 {
        Point3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl std::ops::Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

pub type PointCloud = Vec<Point3>;

/// Mean of a nonempty point cloud.
pub fn centroid(pts: &[Point3]) -> Point3 {
    let n = pts.len() as f64;
    let mut c = Point3::zero();
    for p in pts {
        c = c + *p;
    }
    c * (1.0 / n)
}

const ROT_TOL: f64 = 1e-9;

/// A proper rigid transform: rotation in SO(3) followed by a translation.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    /// Builds a transform, checking that `rotation` is orthonormal with
    /// determinant +1 (within 1e-9).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeomError> {
        let rtr = rotation.transpose() * rotation;
        let dev = (rtr - Matrix3::identity()).norm();
        if dev > ROT_TOL * 10.0 {
            return Err(GeomError::InvalidRotation(format!(
                "R^T R deviates from identity by {dev:.3e}"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > 1e-6 {
            return Err(GeomError::InvalidRotation(format!(
                "det(R) = {det}, expected +1"
            )));
        }
        Ok(RigidTransform { rotation, translation })
    }

    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn translation_only(t: Vector3<f64>) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply_point(&self, p: Point3) -> Point3 {
        Point3::from_vec(self.rotation * p.to_vec() + self.translation)
    }

    /// Composition: `self` applied after `other`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

/// Applies `transform` to every point: out[i] = R·pts[i] + t.
pub fn apply_transform(transform: &RigidTransform, pts: &[Point3]) -> PointCloud {
    pts.iter().map(|p| transform.apply_point(*p)).collect()
}

/// Least-squares superposition of `source` onto `target` over SO(3)×R^3
/// (Kabsch, via SVD of the cross-covariance with determinant sign
/// correction so reflections are never returned).
///
/// Correspondence is positional: source[i] maps to target[i].
pub fn kabsch(source: &[Point3], target: &[Point3]) -> Result<RigidTransform, GeomError> {
    if source.len() != target.len() {
        return Err(GeomError::LengthMismatch(source.len(), target.len()));
    }
    if source.len() < 3 {
        return Err(GeomError::DegenerateInput(format!(
            "need >= 3 points, got {}",
            source.len()
        )));
    }
    let sc = centroid(source).to_vec();
    let tc = centroid(target).to_vec();

    let mut cov = Matrix3::<f64>::zeros();
    for (s, t) in source.iter().zip(target.iter()) {
        cov += (t.to_vec() - tc) * (s.to_vec() - sc).transpose();
    }

    let svd = cov.svd(true, true);
    let u = svd.u.ok_or_else(|| GeomError::DegenerateInput("SVD failed".into()))?;
    let v_t = svd.v_t.ok_or_else(|| GeomError::DegenerateInput("SVD failed".into()))?;
    let sing = svd.singular_values;

    // Rank < 2 (all points collinear) leaves the rotation underdetermined.
    let scale = sing[0].max(1.0);
    if sing[1] <= 1e-10 * scale {
        return Err(GeomError::DegenerateInput(
            "rank-deficient covariance (collinear points)".into(),
        ));
    }

    let d = (u * v_t).determinant();
    let mut s = Matrix3::identity();
    if d < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = u * s * v_t;
    let translation = tc - rotation * sc;
    RigidTransform::new(rotation, translation)
}

/// Root-mean-square deviation between corresponded clouds.
pub fn rmsd(a: &[Point3], b: &[Point3]) -> Result<f64, GeomError> {
    if a.len() != b.len() {
        return Err(GeomError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(GeomError::DegenerateInput("empty clouds".into()));
    }
    let ss: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(p, q)| {
            let d = *p - *q;
            d.x * d.x + d.y * d.y + d.z * d.z
        })
        .sum();
    Ok((ss / a.len() as f64).sqrt())
}

/// For each point, the indices of its `k` nearest other points by Euclidean
/// distance. Directed (not symmetrized); self excluded; ties broken by
/// ascending index so graphs are reproducible.
pub fn knn_neighbors(pts: &[Point3], k: usize) -> Result<Vec<Vec<usize>>, GeomError> {
    let n = pts.len();
    if k >= n {
        return Err(GeomError::KTooLarge { k, n });
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut cand: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (pts[i].dist(&pts[j]), j))
            .collect();
        cand.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        out.push(cand.into_iter().take(k).map(|(_, j)| j).collect());
    }
    Ok(out)
}

/// Rotation by `angle` radians about a (normalized) axis.
pub fn rotation_about_axis(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let a = axis.normalize();
    let (s, c) = angle.sin_cos();
    let k = Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0);
    Matrix3::identity() + k * s + k * k * (1.0 - c)
}

/// Uniform random proper rotation (via quaternion sampling).
pub fn random_rotation<R: rand::Rng>(rng: &mut R) -> Matrix3<f64> {
    // Shoemake's method: uniform unit quaternion.
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    let u3: f64 = rng.gen();
    let tau = std::f64::consts::TAU;
    let q = [
        (1.0 - u1).sqrt() * (tau * u2).sin(),
        (1.0 - u1).sqrt() * (tau * u2).cos(),
        u1.sqrt() * (tau * u3).sin(),
        u1.sqrt() * (tau * u3).cos(),
    ];
    let (w, x, y, z) = (q[3], q[0], q[1], q[2]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(v: &[(f64, f64, f64)]) -> PointCloud {
        v.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect()
    }

    #[test]
    fn apply_identity_is_noop() {
        let pts = cloud(&[(1.0, 2.0, 3.0), (-4.0, 0.5, 2.0)]);
        assert_eq!(apply_transform(&RigidTransform::identity(), &pts), pts);
    }

    #[test]
    fn apply_pure_translation() {
        let t = RigidTransform::translation_only(Vector3::new(1.0, 0.0, 0.0));
        let out = apply_transform(&t, &cloud(&[(0.0, 0.0, 0.0)]));
        assert_eq!(out, cloud(&[(1.0, 0.0, 0.0)]));
    }

    #[test]
    fn apply_rotation_90_about_z() {
        let r = rotation_about_axis(Vector3::z(), std::f64::consts::FRAC_PI_2);
        let t = RigidTransform::new(r, Vector3::zeros()).unwrap();
        let out = apply_transform(&t, &cloud(&[(1.0, 0.0, 0.0)]));
        // Hand rotation-matrix multiply: (1,0,0) -> (0,1,0).
        assert!(out[0].dist(&Point3::new(0.0, 1.0, 0.0)) < 1e-12);
    }

    #[test]
    fn kabsch_identity_on_equal_clouds() {
        let pts = cloud(&[(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.3, 0.2, 1.1)]);
        let t = kabsch(&pts, &pts).unwrap();
        assert!((t.rotation() - Matrix3::identity()).norm() < 1e-10);
        assert!(t.translation().norm() < 1e-10);
    }

    #[test]
    fn kabsch_recovers_random_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let src: PointCloud = (0..8)
                .map(|_| Point3::new(rng.gen::<f64>() * 10.0, rng.gen::<f64>() * 10.0, rng.gen::<f64>() * 10.0))
                .collect();
            let r = random_rotation(&mut rng);
            let tv = Vector3::new(rng.gen::<f64>() * 5.0, rng.gen::<f64>() * 5.0, rng.gen::<f64>() * 5.0);
            let t0 = RigidTransform::new(r, tv).unwrap();
            let dst = apply_transform(&t0, &src);
            let rec = kabsch(&src, &dst).unwrap();
            assert!((rec.rotation() - t0.rotation()).norm() < 1e-8);
            assert!((rec.translation() - t0.translation()).norm() < 1e-8);
        }
    }

    #[test]
    fn kabsch_improves_noisy_alignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let src: PointCloud = (0..10)
            .map(|_| Point3::new(rng.gen::<f64>() * 6.0, rng.gen::<f64>() * 6.0, rng.gen::<f64>() * 6.0))
            .collect();
        let r = random_rotation(&mut rng);
        let t0 = RigidTransform::new(r, Vector3::new(3.0, -1.0, 2.0)).unwrap();
        let mut dst = apply_transform(&t0, &src);
        for p in dst.iter_mut() {
            p.x += 0.01 * (rng.gen::<f64>() - 0.5);
            p.y += 0.01 * (rng.gen::<f64>() - 0.5);
            p.z += 0.01 * (rng.gen::<f64>() - 0.5);
        }
        let pre = rmsd(&src, &dst).unwrap();
        let rec = kabsch(&src, &dst).unwrap();
        let post = rmsd(&apply_transform(&rec, &src), &dst).unwrap();
        assert!(post <= pre);
    }

    #[test]
    fn kabsch_rejects_degenerate_input() {
        let two = cloud(&[(0.0, 0.0, 0.0), (1.0, 0.0, 0.0)]);
        assert!(matches!(kabsch(&two, &two), Err(GeomError::DegenerateInput(_))));
        let line = cloud(&[(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (2.0, 0.0, 0.0)]);
        assert!(matches!(kabsch(&line, &line), Err(GeomError::DegenerateInput(_))));
    }

    #[test]
    fn rmsd_examples() {
        let a = cloud(&[(0.0, 0.0, 0.0)]);
        assert_eq!(rmsd(&a, &a).unwrap(), 0.0);
        let b = cloud(&[(3.0, 4.0, 0.0)]);
        assert!((rmsd(&a, &b).unwrap() - 5.0).abs() < 1e-12);
        let c = cloud(&[(0.0, 0.0, 0.0), (0.0, 5.0, 0.0)]);
        let d = cloud(&[(1.0, 0.0, 0.0), (1.0, 5.0, 0.0)]);
        assert!((rmsd(&c, &d).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(rmsd(&a, &c), Err(GeomError::LengthMismatch(1, 2))));
    }

    #[test]
    fn knn_collinear_hand_case() {
        let pts = cloud(&[(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (3.0, 0.0, 0.0)]);
        let nb = knn_neighbors(&pts, 1).unwrap();
        assert_eq!(nb, vec![vec![1], vec![0], vec![1]]);
    }

    #[test]
    fn knn_full_and_ties() {
        let pts = cloud(&[(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (-1.0, 0.0, 0.0)]);
        let nb = knn_neighbors(&pts, 2).unwrap();
        for (i, ns) in nb.iter().enumerate() {
            assert_eq!(ns.len(), 2);
            assert!(!ns.contains(&i));
        }
        // Points 1 and 2 are equidistant from 0; tie broken by lower index.
        assert_eq!(nb[0][0], 1);
        assert!(matches!(knn_neighbors(&pts, 3), Err(GeomError::KTooLarge { .. })));
    }

    #[test]
    fn transform_preserves_pairwise_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: PointCloud = (0..12)
            .map(|_| Point3::new(rng.gen::<f64>() * 9.0, rng.gen::<f64>() * 9.0, rng.gen::<f64>() * 9.0))
            .collect();
        let t = RigidTransform::new(random_rotation(&mut rng), Vector3::new(1.0, 2.0, 3.0)).unwrap();
        let moved = apply_transform(&t, &pts);
        for i in 0..pts.len() {
            for j in (i + 1)..pts.len() {
                let d0 = pts[i].dist(&pts[j]);
                let d1 = moved[i].dist(&moved[j]);
                assert!((d0 - d1).abs() <= 1e-9 * d0.max(1.0));
            }
        }
    }

    #[test]
    fn rmsd_symmetric_and_rigid_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a: PointCloud = (0..6)
            .map(|_| Point3::new(rng.gen(), rng.gen(), rng.gen()))
            .collect();
        let b: PointCloud = (0..6)
            .map(|_| Point3::new(rng.gen(), rng.gen(), rng.gen()))
            .collect();
        assert!((rmsd(&a, &b).unwrap() - rmsd(&b, &a).unwrap()).abs() < 1e-15);
        let t = RigidTransform::new(random_rotation(&mut rng), Vector3::new(-2.0, 0.4, 7.0)).unwrap();
        let ra = apply_transform(&t, &a);
        let rb = apply_transform(&t, &b);
        assert!((rmsd(&a, &b).unwrap() - rmsd(&ra, &rb).unwrap()).abs() < 1e-9);
    }
}
