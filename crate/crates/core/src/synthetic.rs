//! Synthetic shapes with known structure: spheres, ellipsoids, bumped spheres
//! and a three-mode shape family for end-to-end checks.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geom::{Point3, RngSeed, TriMesh};

/// Geodesic sphere from a subdivided icosahedron, centred at the origin.
/// `subdivisions = 3` gives 642 vertices, `4` gives 2562.
pub fn icosphere(subdivisions: u32, radius: f64) -> Result<TriMesh> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::invalid(format!("radius must be positive, got {radius}")));
    }
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Point3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|p| Point3::new(p[0], p[1], p[2]).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Point3>| -> usize {
            *midpoint.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    TriMesh::new(verts.into_iter().map(|p| p * radius).collect(), faces)
}

/// Sphere of `radius` stretched by `axes` along x, y and z.
pub fn ellipsoid(subdivisions: u32, radius: f64, axes: [f64; 3]) -> Result<TriMesh> {
    let s = icosphere(subdivisions, radius)?;
    s.with_vertices(s.vertices().iter().map(|p| Point3::new(p.x * axes[0], p.y * axes[1], p.z * axes[2])).collect())
}

/// Smooth radial bump: `amplitude * exp(-angle^2 / (2 width^2))` around `centre`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump {
    pub centre: Point3,
    pub width: f64,
    pub amplitude: f64,
}

impl Bump {
    fn profile(&self, dir: &Point3) -> f64 {
        let cos = dir.dot(&self.centre).clamp(-1.0, 1.0);
        let angle = cos.acos();
        (-angle * angle / (2.0 * self.width * self.width)).exp()
    }
}

/// Moves each vertex of a centred mesh radially by the sum of `bumps`,
/// scaled by its distance from the origin.
pub fn apply_bumps(mesh: &TriMesh, bumps: &[Bump]) -> Result<TriMesh> {
    let verts = mesh
        .vertices()
        .iter()
        .map(|p| {
            let r = p.norm();
            if r == 0.0 {
                return *p;
            }
            let dir = p / r;
            let s: f64 = bumps.iter().map(|b| b.amplitude * b.profile(&dir)).sum();
            p * (1.0 + s)
        })
        .collect();
    mesh.with_vertices(verts)
}

/// Sphere with `count` bumps at random directions, widths in [0.7, 1.1] rad and
/// relative amplitudes in `[-max_amplitude, max_amplitude]`.
pub fn bumped_sphere(subdivisions: u32, radius: f64, count: usize, max_amplitude: f64, seed: RngSeed) -> Result<TriMesh> {
    let mut rng = seed.rng();
    let bumps: Vec<Bump> = (0..count)
        .map(|_| {
            let d = Point3::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
            Bump {
                centre: d.normalize(),
                width: rng.random_range(0.7..1.1),
                amplitude: rng.random_range(-max_amplitude..max_amplitude),
            }
        })
        .collect();
    apply_bumps(&icosphere(subdivisions, radius)?, &bumps)
}

/// Sphere plus three bump modes centred on the +x, +y and +z axes.
/// Members share the template's vertex order, so they are corresponded.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeFamily {
    pub template: TriMesh,
    /// Standard deviation of each mode's relative amplitude.
    pub mode_std: [f64; 3],
    pub width: f64,
}

impl ModeFamily {
    pub fn new(subdivisions: u32, radius: f64, mode_std: [f64; 3]) -> Result<Self> {
        Ok(ModeFamily {
            template: icosphere(subdivisions, radius)?,
            mode_std,
            width: 0.6,
        })
    }

    pub fn member(&self, coefficients: [f64; 3]) -> Result<TriMesh> {
        let bumps: Vec<Bump> = (0..3)
            .map(|k| Bump {
                centre: Point3::ith(k, 1.0),
                width: self.width,
                amplitude: coefficients[k],
            })
            .collect();
        apply_bumps(&self.template, &bumps)
    }

    /// `count` members with Gaussian mode coefficients.
    pub fn sample(&self, count: usize, seed: RngSeed) -> Result<Vec<([f64; 3], TriMesh)>> {
        let mut rng = seed.rng();
        (0..count)
            .map(|_| {
                let mut c = [0.0; 3];
                for (k, ck) in c.iter_mut().enumerate() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *ck = z * self.mode_std[k];
                }
                Ok((c, self.member(c)?))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_counts_and_radius() {
        for (s, nv) in [(0u32, 12usize), (1, 42), (3, 642), (4, 2562)] {
            let m = icosphere(s, 0.5).unwrap();
            assert_eq!(m.vertices().len(), nv);
            assert_eq!(m.faces().len(), 20 * 4usize.pow(s));
            assert!(m.vertices().iter().all(|p| (p.norm() - 0.5).abs() < 1e-12));
        }
        // closed surface: no border edges
        assert!(crate::meshio::border_vertices(&icosphere(2, 1.0).unwrap()).is_empty());
    }

    #[test]
    fn faces_point_outward() {
        let m = icosphere(2, 1.0).unwrap();
        for f in m.faces() {
            let [a, b, c] = f.map(|i| m.vertices()[i]);
            assert!((b - a).cross(&(c - a)).dot(&(a + b + c)) > 0.0);
        }
    }

    #[test]
    fn family_is_linear_in_small_coefficients() {
        let fam = ModeFamily::new(2, 0.5, [0.1, 0.06, 0.03]).unwrap();
        let zero = fam.member([0.0; 3]).unwrap();
        assert_eq!(zero, fam.template);
        let a = fam.member([0.1, 0.0, 0.0]).unwrap();
        let b = fam.member([0.0, 0.1, 0.0]).unwrap();
        let ab = fam.member([0.1, 0.1, 0.0]).unwrap();
        for i in 0..zero.vertices().len() {
            let sum = a.vertices()[i] + b.vertices()[i] - zero.vertices()[i];
            assert!((sum - ab.vertices()[i]).norm() < 1e-12);
        }
        let s1 = fam.sample(5, RngSeed(3)).unwrap();
        assert_eq!(s1, fam.sample(5, RngSeed(3)).unwrap());
    }
}
