//! Geometric value types shared by every stage of the pipeline.
//!
//! All fields live on the fixed domain `[-1, 1]^3`. Grids are node-centred
//! with spacing `h = 2 / (V - 1)` and stored row-major with z fastest, so the
//! flat index of node `(i, j, k)` is `(i * V + j) * V + k`.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point (or displacement) in domain units.
pub type Point3 = Vector3<f64>;

/// Seed for every stochastic operation. Same seed and inputs give bit-identical output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

impl Default for RngSeed {
    fn default() -> Self {
        RngSeed(0)
    }
}

fn all_finite(p: &Point3) -> bool {
    p.iter().all(|c| c.is_finite())
}

/// Weighted point samples; weights form a probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    weights: Vec<f64>,
}

impl PointCloud {
    /// Builds a cloud with uniform weights `1/N`.
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::invalid("point cloud must contain at least one point"));
        }
        let w = 1.0 / n as f64;
        Self::with_weights(points, vec![w; n])
    }

    pub fn with_weights(points: Vec<Point3>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("point cloud must contain at least one point"));
        }
        if points.len() != weights.len() {
            return Err(Error::SizeMismatch {
                expected: points.len(),
                found: weights.len(),
            });
        }
        if let Some(i) = points.iter().position(|p| !all_finite(p)) {
            return Err(Error::invalid(format!("point {i} is not finite")));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("weights sum to {total}, expected 1")));
        }
        Ok(PointCloud { points, weights })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Same weights, new positions. Used by warps, which never change mass.
    pub(crate) fn with_points(&self, points: Vec<Point3>) -> Self {
        debug_assert_eq!(points.len(), self.weights.len());
        PointCloud {
            points,
            weights: self.weights.clone(),
        }
    }
}

/// Triangle mesh with validated face indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Point3>,
    faces: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if let Some(i) = vertices.iter().position(|p| !all_finite(p)) {
            return Err(Error::invalid(format!("vertex {i} is not finite")));
        }
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            if let Some(&bad) = f.iter().find(|&&v| v >= n) {
                return Err(Error::invalid(format!(
                    "face {fi} references vertex {bad} but mesh has {n} vertices"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::invalid(format!("face {fi} repeats a vertex index")));
            }
        }
        Ok(TriMesh { vertices, faces })
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    /// Replaces vertex positions, keeping the topology.
    pub fn with_vertices(&self, vertices: Vec<Point3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::SizeMismatch {
                expected: self.vertices.len(),
                found: vertices.len(),
            });
        }
        if let Some(i) = vertices.iter().position(|p| !all_finite(p)) {
            return Err(Error::invalid(format!("vertex {i} is not finite")));
        }
        Ok(TriMesh {
            vertices,
            faces: self.faces.clone(),
        })
    }

    /// All vertices as a uniformly weighted cloud.
    pub fn vertex_cloud(&self) -> Result<PointCloud> {
        PointCloud::new(self.vertices.clone())
    }
}

/// Physical position of node `(i, j, k)` on a `V^3` grid.
pub fn grid_node_position(v: usize, i: usize, j: usize, k: usize) -> Result<Point3> {
    if v < 2 {
        return Err(Error::invalid("grid needs at least 2 nodes per axis"));
    }
    if i >= v || j >= v || k >= v {
        return Err(Error::invalid(format!(
            "node ({i}, {j}, {k}) out of range for V = {v}"
        )));
    }
    Ok(node_position(v, i, j, k))
}

#[inline]
pub(crate) fn node_position(v: usize, i: usize, j: usize, k: usize) -> Point3 {
    let h = 2.0 / (v - 1) as f64;
    Point3::new(-1.0 + i as f64 * h, -1.0 + j as f64 * h, -1.0 + k as f64 * h)
}

/// Node-centred `V^3` grid of 3-vectors over `[-1, 1]^3`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    nodes_per_axis: usize,
    values: Vec<Point3>,
}

impl GridField {
    pub fn zeros(v: usize) -> Result<Self> {
        Self::from_values(v, vec![Point3::zeros(); v.pow(3)])
    }

    pub fn from_values(v: usize, values: Vec<Point3>) -> Result<Self> {
        if v < 2 {
            return Err(Error::invalid("grid needs at least 2 nodes per axis"));
        }
        if values.len() != v.pow(3) {
            return Err(Error::SizeMismatch {
                expected: v.pow(3),
                found: values.len(),
            });
        }
        if values.iter().any(|p| !all_finite(p)) {
            return Err(Error::invalid("grid field contains non-finite values"));
        }
        Ok(GridField {
            nodes_per_axis: v,
            values,
        })
    }

    /// Samples `f` at every node position.
    pub fn from_fn(v: usize, f: impl Fn(Point3) -> Point3) -> Result<Self> {
        if v < 2 {
            return Err(Error::invalid("grid needs at least 2 nodes per axis"));
        }
        let mut values = Vec::with_capacity(v.pow(3));
        for i in 0..v {
            for j in 0..v {
                for k in 0..v {
                    values.push(f(node_position(v, i, j, k)));
                }
            }
        }
        Self::from_values(v, values)
    }

    /// Inverse of [`GridField::to_flat`]: `3 V^3` scalars, xyz interleaved per node.
    pub fn from_flat(v: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != 3 * v.pow(3) {
            return Err(Error::SizeMismatch {
                expected: 3 * v.pow(3),
                found: flat.len(),
            });
        }
        let values = flat
            .chunks_exact(3)
            .map(|c| Point3::new(c[0], c[1], c[2]))
            .collect();
        Self::from_values(v, values)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.values.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.nodes_per_axis
    }

    pub fn spacing(&self) -> f64 {
        2.0 / (self.nodes_per_axis - 1) as f64
    }

    pub fn values(&self) -> &[Point3] {
        &self.values
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.nodes_per_axis + j) * self.nodes_per_axis + k
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> Point3 {
        self.values[self.index(i, j, k)]
    }

    pub fn max_norm(&self) -> f64 {
        self.values.iter().map(|p| p.norm()).fold(0.0, f64::max)
    }

    pub fn scaled(&self, a: f64) -> GridField {
        GridField {
            nodes_per_axis: self.nodes_per_axis,
            values: self.values.iter().map(|p| p * a).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(&Point3) -> Point3) -> Result<GridField> {
        GridField::from_values(self.nodes_per_axis, self.values.iter().map(f).collect())
    }

    pub(crate) fn from_values_unchecked(v: usize, values: Vec<Point3>) -> GridField {
        debug_assert_eq!(values.len(), v.pow(3));
        GridField {
            nodes_per_axis: v,
            values,
        }
    }
}

/// Interpolation stencil of a point: lower cell corner, fractional offsets,
/// and which axes were clamped to the domain boundary.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Stencil {
    pub base: [usize; 3],
    pub frac: [f64; 3],
    pub clamped: [bool; 3],
}

impl Stencil {
    #[inline]
    pub fn locate(v: usize, p: &Point3) -> Stencil {
        let h = 2.0 / (v - 1) as f64;
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        let mut clamped = [false; 3];
        for d in 0..3 {
            let mut c = p[d];
            if c < -1.0 {
                c = -1.0;
                clamped[d] = true;
            } else if c > 1.0 {
                c = 1.0;
                clamped[d] = true;
            }
            let t = (c + 1.0) / h;
            let cell = (t.floor() as usize).min(v - 2);
            base[d] = cell;
            frac[d] = (t - cell as f64).clamp(0.0, 1.0);
        }
        Stencil {
            base,
            frac,
            clamped,
        }
    }

    /// The 8 corner node indices and their trilinear weights.
    #[inline]
    pub fn corners(&self, v: usize) -> [(usize, f64); 8] {
        let [i, j, k] = self.base;
        let [fx, fy, fz] = self.frac;
        let wx = [1.0 - fx, fx];
        let wy = [1.0 - fy, fy];
        let wz = [1.0 - fz, fz];
        let mut out = [(0usize, 0.0); 8];
        let mut n = 0;
        for (a, wa) in wx.iter().enumerate() {
            for (b, wb) in wy.iter().enumerate() {
                for (c, wc) in wz.iter().enumerate() {
                    out[n] = (((i + a) * v + j + b) * v + k + c, wa * wb * wc);
                    n += 1;
                }
            }
        }
        out
    }

    /// Derivative of each corner weight with respect to the sample position.
    /// Axes that were clamped contribute zero.
    #[inline]
    pub fn corner_gradients(&self, v: usize) -> [(usize, Point3); 8] {
        let h = 2.0 / (v - 1) as f64;
        let [i, j, k] = self.base;
        let [fx, fy, fz] = self.frac;
        let w = [[1.0 - fx, fx], [1.0 - fy, fy], [1.0 - fz, fz]];
        let mut dw = [[-1.0 / h, 1.0 / h]; 3];
        for d in 0..3 {
            if self.clamped[d] {
                dw[d] = [0.0, 0.0];
            }
        }
        let mut out = [(0usize, Point3::zeros()); 8];
        let mut n = 0;
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    let g = Point3::new(
                        dw[0][a] * w[1][b] * w[2][c],
                        w[0][a] * dw[1][b] * w[2][c],
                        w[0][a] * w[1][b] * dw[2][c],
                    );
                    out[n] = (((i + a) * v + j + b) * v + k + c, g);
                    n += 1;
                }
            }
        }
        out
    }
}

/// Trilinear interpolation of `field` at `p`. Coordinates outside the domain
/// are clamped to the boundary first, so this is defined for every finite `p`.
pub fn trilinear_sample(field: &GridField, p: &Point3) -> Point3 {
    let v = field.nodes_per_axis;
    let st = Stencil::locate(v, p);
    let mut acc = Point3::zeros();
    for (idx, w) in st.corners(v) {
        acc += field.values[idx] * w;
    }
    acc
}

/// Whether a deformation maps the domain forward (`Exp(v)`) or back (`Exp(-v)`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Inverse,
}

/// Displacement field `u` read as the map `phi(p) = p + u(p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Deformation {
    pub displacement: GridField,
    pub direction: Direction,
    pub squaring_steps: u32,
}

impl Deformation {
    pub fn identity(v: usize) -> Result<Self> {
        Ok(Deformation {
            displacement: GridField::zeros(v)?,
            direction: Direction::Forward,
            squaring_steps: 0,
        })
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        p + trilinear_sample(&self.displacement, p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn node_positions_at_corners_and_center() {
        assert_eq!(grid_node_position(2, 0, 0, 0).unwrap(), Point3::new(-1.0, -1.0, -1.0));
        assert_eq!(grid_node_position(2, 1, 1, 1).unwrap(), Point3::new(1.0, 1.0, 1.0));
        assert_eq!(grid_node_position(3, 1, 1, 1).unwrap(), Point3::zeros());
        assert!(grid_node_position(3, 3, 0, 0).is_err());
        assert!(grid_node_position(1, 0, 0, 0).is_err());
    }

    #[test]
    fn storage_order_is_z_fastest() {
        let f = GridField::from_fn(3, |p| p).unwrap();
        assert_eq!(f.values()[1], Point3::new(-1.0, -1.0, 0.0));
        assert_eq!(f.values()[3], Point3::new(-1.0, 0.0, -1.0));
        assert_eq!(f.values()[9], Point3::new(0.0, -1.0, -1.0));
    }

    #[test]
    fn constant_field_samples_to_constant() {
        let c = Point3::new(0.3, -0.2, 1.5);
        let f = GridField::from_fn(5, |_| c).unwrap();
        for p in [Point3::new(0.1, 0.7, -0.33), Point3::new(3.0, -9.0, 0.0)] {
            assert!((trilinear_sample(&f, &p) - c).norm() < 1e-15);
        }
    }

    #[test]
    fn nodal_values_are_reproduced() {
        let f = GridField::from_fn(4, |p| Point3::new(p.x * p.y, p.z.sin(), p.x - p.z)).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    let p = node_position(4, i, j, k);
                    assert!((trilinear_sample(&f, &p) - f.at(i, j, k)).norm() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn linear_field_reproduced_at_cell_centres() {
        let a = nalgebra::Matrix3::new(0.5, -1.0, 0.25, 2.0, 0.0, -0.75, 0.1, 0.2, 0.3);
        let f = GridField::from_fn(4, |p| a * p).unwrap();
        let h = 2.0 / 3.0;
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    let p = Point3::new(
                        -1.0 + (i as f64 + 0.5) * h,
                        -1.0 + (j as f64 + 0.5) * h,
                        -1.0 + (k as f64 + 0.5) * h,
                    );
                    assert!((trilinear_sample(&f, &p) - a * p).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn outside_points_clamp_to_boundary() {
        let f = GridField::from_fn(3, |p| p).unwrap();
        let s = trilinear_sample(&f, &Point3::new(4.0, -0.5, -7.0));
        assert!((s - Point3::new(1.0, -0.5, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn cloud_and_mesh_invariants() {
        assert!(PointCloud::new(vec![]).is_err());
        assert!(PointCloud::with_weights(vec![Point3::zeros()], vec![0.5]).is_err());
        assert!(PointCloud::new(vec![Point3::new(f64::NAN, 0.0, 0.0)]).is_err());
        let v = vec![Point3::zeros(), Point3::x(), Point3::y()];
        assert!(TriMesh::new(v.clone(), vec![[0, 1, 2]]).is_ok());
        assert!(TriMesh::new(v.clone(), vec![[0, 1, 3]]).is_err());
        assert!(TriMesh::new(v, vec![[0, 1, 1]]).is_err());
    }

    fn affine_field() -> (nalgebra::Matrix3<f64>, Point3, GridField) {
        let a = nalgebra::Matrix3::new(0.3, -0.1, 0.05, 0.2, 0.4, -0.3, -0.25, 0.15, 0.1);
        let b = Point3::new(0.01, -0.02, 0.03);
        let f = GridField::from_fn(6, |p| a * p + b).unwrap();
        (a, b, f)
    }

    proptest! {
        #[test]
        fn affine_fields_are_exact(x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0) {
            let (a, b, f) = affine_field();
            let p = Point3::new(x, y, z);
            prop_assert!((trilinear_sample(&f, &p) - (a * p + b)).norm() < 1e-12);
        }

        #[test]
        fn sampling_is_continuous(
            x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0,
            dx in -1.0f64..1.0, dy in -1.0f64..1.0, dz in -1.0f64..1.0,
        ) {
            let f = GridField::from_fn(5, |p| Point3::new((3.0 * p.x).sin(), p.y * p.z, (p.x + p.z).cos())).unwrap();
            let d = Point3::new(dx, dy, dz);
            prop_assume!(d.norm() > 1e-3);
            let d = d.normalize() * 1e-9;
            let p = Point3::new(x, y, z);
            let diff = (trilinear_sample(&f, &p) - trilinear_sample(&f, &(p + d))).norm();
            prop_assert!(diff < 1e-8 * f.max_norm().max(1.0));
        }
    }
}
