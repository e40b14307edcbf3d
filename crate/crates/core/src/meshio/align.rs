use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point3, RngSeed, TriMesh};
use crate::spatial::KdTree;

/// `p -> scale * rotation * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Point3,
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Point3::zeros(),
        }
    }

    pub fn new(scale: f64, rotation: Matrix3<f64>, translation: Point3) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::invalid(format!("similarity scale must be positive, got {scale}")));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if ortho >= 1e-9 || rotation.determinant() <= 0.0 {
            return Err(Error::invalid("rotation must be orthonormal with det +1"));
        }
        Ok(SimilarityTransform {
            scale,
            rotation,
            translation,
        })
    }

    #[inline]
    pub fn apply(&self, p: &Point3) -> Point3 {
        self.rotation * p * self.scale + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        SimilarityTransform {
            scale: 1.0 / self.scale,
            rotation: rt,
            translation: -(rt * self.translation) / self.scale,
        }
    }

    /// `self` after `first`.
    pub fn compose(&self, first: &SimilarityTransform) -> Self {
        SimilarityTransform {
            scale: self.scale * first.scale,
            rotation: self.rotation * first.rotation,
            translation: self.apply(&first.translation),
        }
    }

    pub fn apply_mesh(&self, mesh: &TriMesh) -> Result<TriMesh> {
        mesh.with_vertices(mesh.vertices().iter().map(|p| self.apply(p)).collect())
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }
}

/// Least-squares similarity mapping `src[i]` onto `dst[i]` (Umeyama).
pub fn estimate_similarity(src: &[Point3], dst: &[Point3]) -> SimilarityTransform {
    debug_assert_eq!(src.len(), dst.len());
    let n = src.len() as f64;
    let mu_s = src.iter().sum::<Point3>() / n;
    let mu_d = dst.iter().sum::<Point3>() / n;
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let a = s - mu_s;
        cov += (d - mu_d) * a.transpose();
        var_s += a.norm_squared();
    }
    cov /= n;
    var_s /= n;
    if var_s == 0.0 {
        return SimilarityTransform {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: mu_d - mu_s,
        };
    }
    let svd = cov.svd(true, true);
    let u = svd.u.expect("svd computes u");
    let v_t = svd.v_t.expect("svd computes v_t");
    let mut sign = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        sign[(2, 2)] = -1.0;
    }
    // nalgebra orders singular values descending, so the flip hits the smallest.
    let rotation = u * sign * v_t;
    let d = svd.singular_values;
    let trace = d[0] * sign[(0, 0)] + d[1] * sign[(1, 1)] + d[2] * sign[(2, 2)];
    let scale = trace / var_s;
    SimilarityTransform {
        scale,
        rotation,
        translation: mu_d - rotation * mu_s * scale,
    }
}

#[derive(Debug, Clone)]
pub struct IcpResult {
    pub transform: SimilarityTransform,
    /// Mean squared correspondence distance at the start of each round.
    pub costs: Vec<f64>,
}

/// Closest points on a triangle mesh, searched among the faces around the
/// nearest few vertices. A mesh without faces is treated as a point set.
struct Surface<'a> {
    mesh: &'a TriMesh,
    tree: KdTree,
    vertex_faces: Vec<Vec<usize>>,
}

impl<'a> Surface<'a> {
    const CANDIDATE_VERTICES: usize = 6;

    fn new(mesh: &'a TriMesh) -> Self {
        let mut vertex_faces = vec![Vec::new(); mesh.vertices().len()];
        for (fi, f) in mesh.faces().iter().enumerate() {
            for &v in f {
                vertex_faces[v].push(fi);
            }
        }
        Surface {
            mesh,
            tree: KdTree::new(mesh.vertices()),
            vertex_faces,
        }
    }

    fn closest(&self, q: &Point3) -> Point3 {
        let v = self.mesh.vertices();
        let near = self.tree.k_nearest(q, Self::CANDIDATE_VERTICES);
        let first = near.iter().min_by(|a, b| a.dist2.total_cmp(&b.dist2)).expect("mesh has vertices");
        let mut best = v[first.index];
        let mut best_d = first.dist2;
        for n in &near {
            for &fi in &self.vertex_faces[n.index] {
                let [a, b, c] = self.mesh.faces()[fi];
                let p = closest_on_triangle(q, &v[a], &v[b], &v[c]);
                let d = (p - q).norm_squared();
                if d < best_d {
                    best = p;
                    best_d = d;
                }
            }
        }
        best
    }
}

/// Closest point to `p` on triangle `abc`, by Voronoi region of the triangle.
pub(crate) fn closest_on_triangle(p: &Point3, a: &Point3, b: &Point3, c: &Point3) -> Point3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && d4 - d3 >= 0.0 && d5 - d6 >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Moving meshes above this size are subsampled (seeded) before ICP.
pub const ICP_MAX_POINTS: usize = 5000;

/// Similarity ICP from the identity.
pub fn similarity_icp(moving: &TriMesh, fixed: &TriMesh, iterations: usize, seed: RngSeed) -> Result<IcpResult> {
    similarity_icp_from(moving, fixed, SimilarityTransform::identity(), iterations, seed)
}

/// Alternates closest-surface-point correspondence with closed-form
/// similarity estimation. Stops after `iterations` rounds or once the cost
/// improves by less than a `1e-9` fraction.
pub fn similarity_icp_from(
    moving: &TriMesh,
    fixed: &TriMesh,
    init: SimilarityTransform,
    iterations: usize,
    seed: RngSeed,
) -> Result<IcpResult> {
    if moving.vertices().is_empty() || fixed.vertices().is_empty() {
        return Err(Error::invalid("ICP needs non-empty meshes"));
    }
    let src: Vec<Point3> = if moving.vertices().len() > ICP_MAX_POINTS {
        let mut rng = seed.rng();
        let mut idx = rand::seq::index::sample(&mut rng, moving.vertices().len(), ICP_MAX_POINTS).into_vec();
        idx.sort_unstable();
        idx.iter().map(|&i| moving.vertices()[i]).collect()
    } else {
        moving.vertices().to_vec()
    };
    let surface = Surface::new(fixed);
    let mut transform = init;
    let mut costs = Vec::new();
    for _ in 0..iterations {
        let matched: Vec<Point3> = src.iter().map(|p| surface.closest(&transform.apply(p))).collect();
        let cost = src
            .iter()
            .zip(&matched)
            .map(|(p, m)| (transform.apply(p) - m).norm_squared())
            .sum::<f64>()
            / src.len() as f64;
        let stalled = costs.last().is_some_and(|&prev: &f64| prev - cost <= 1e-9 * prev);
        costs.push(cost);
        if stalled {
            break;
        }
        transform = estimate_similarity(&src, &matched);
    }
    Ok(IcpResult { transform, costs })
}
