//! Everything upstream of deformable registration: file formats, cube
//! normalisation, point sampling, border cropping and similarity ICP.

mod align;
mod format;

use std::collections::{BTreeSet, HashMap};

use nalgebra::Matrix3;
use rand::Rng;

pub use align::{estimate_similarity, similarity_icp, similarity_icp_from, IcpResult, SimilarityTransform, ICP_MAX_POINTS};
pub use format::{load_mesh, save_mesh, write_obj, write_ply, MeshFormat};

use crate::error::{Error, Result};
use crate::geom::{Point3, PointCloud, RngSeed, TriMesh};
use crate::spatial::KdTree;

/// Scales and centres a mesh so its bounding box is centred at the origin
/// with longest side 2. Returns the mesh and the transform that produced it.
pub fn normalize_to_cube(mesh: &TriMesh) -> Result<(TriMesh, SimilarityTransform)> {
    let transform = cube_transform(mesh.vertices())?;
    Ok((transform.apply_mesh(mesh)?, transform))
}

/// The normalising transform of a vertex set, without applying it.
pub fn cube_transform(vertices: &[Point3]) -> Result<SimilarityTransform> {
    if vertices.is_empty() {
        return Err(Error::invalid("cannot normalise an empty mesh"));
    }
    let mut lo = Point3::repeat(f64::INFINITY);
    let mut hi = Point3::repeat(f64::NEG_INFINITY);
    for p in vertices {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let longest = (hi - lo).max();
    if longest <= 0.0 {
        return Err(Error::invalid("mesh has zero extent along every axis"));
    }
    let scale = 2.0 / longest;
    let centre = (lo + hi) * 0.5;
    SimilarityTransform::new(scale, Matrix3::identity(), -centre * scale)
}

fn triangle_area(m: &TriMesh, f: &[usize; 3]) -> f64 {
    let v = m.vertices();
    0.5 * (v[f[1]] - v[f[0]]).cross(&(v[f[2]] - v[f[0]])).norm()
}

/// Area-weighted uniform sampling of `n` surface points.
pub fn sample_surface(mesh: &TriMesh, n: usize, seed: RngSeed) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let mut cumulative = Vec::with_capacity(mesh.faces().len());
    let mut total = 0.0;
    for f in mesh.faces() {
        total += triangle_area(mesh, f);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::invalid("mesh has no face with positive area"));
    }
    let mut rng = seed.rng();
    let v = mesh.vertices();
    let points = (0..n)
        .map(|_| {
            let r = rng.random::<f64>() * total;
            let fi = cumulative.partition_point(|&c| c <= r).min(cumulative.len() - 1);
            let [a, b, c] = mesh.faces()[fi];
            let r1: f64 = rng.random::<f64>().sqrt();
            let r2: f64 = rng.random();
            v[a] * (1.0 - r1) + v[b] * (r1 * (1.0 - r2)) + v[c] * (r1 * r2)
        })
        .collect();
    PointCloud::new(points)
}

/// `n` distinct vertices chosen uniformly without replacement. The returned
/// indices can be replayed on a corresponded mesh with [`cloud_from_indices`].
pub fn sample_vertices(mesh: &TriMesh, n: usize, seed: RngSeed) -> Result<(PointCloud, Vec<usize>)> {
    let count = mesh.vertices().len();
    if n > count {
        return Err(Error::invalid(format!("cannot sample {n} of {count} vertices")));
    }
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let mut rng = seed.rng();
    let indices = rand::seq::index::sample(&mut rng, count, n).into_vec();
    Ok((cloud_from_indices(mesh, &indices)?, indices))
}

pub fn cloud_from_indices(mesh: &TriMesh, indices: &[usize]) -> Result<PointCloud> {
    let v = mesh.vertices();
    let pts = indices
        .iter()
        .map(|&i| {
            v.get(i)
                .copied()
                .ok_or_else(|| Error::invalid(format!("vertex index {i} out of range")))
        })
        .collect::<Result<Vec<_>>>()?;
    PointCloud::new(pts)
}

/// Vertices incident to an edge that belongs to exactly one face.
pub fn border_vertices(mesh: &TriMesh) -> BTreeSet<usize> {
    let mut edges: HashMap<(usize, usize), u32> = HashMap::new();
    for f in mesh.faces() {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            *edges.entry((a.min(b), a.max(b))).or_default() += 1;
        }
    }
    edges
        .into_iter()
        .filter(|&(_, c)| c == 1)
        .flat_map(|((a, b), _)| [a, b])
        .collect()
}

/// Removes every vertex of `fixed` whose nearest template vertex lies on the
/// template border, with all faces touching a removed vertex.
pub fn crop_to_template(fixed: &TriMesh, template: &TriMesh) -> Result<TriMesh> {
    if template.vertices().is_empty() {
        return Err(Error::invalid("template mesh has no vertices"));
    }
    let border = border_vertices(template);
    if border.is_empty() {
        return Ok(fixed.clone());
    }
    let tree = KdTree::new(template.vertices());
    let keep: Vec<bool> = fixed
        .vertices()
        .iter()
        .map(|p| !border.contains(&tree.nearest(p).index))
        .collect();
    let mut remap = vec![usize::MAX; keep.len()];
    let mut vertices = Vec::new();
    for (i, (&k, p)) in keep.iter().zip(fixed.vertices()).enumerate() {
        if k {
            remap[i] = vertices.len();
            vertices.push(*p);
        }
    }
    if vertices.is_empty() {
        return Err(Error::invalid("cropping removed every vertex"));
    }
    let faces = fixed
        .faces()
        .iter()
        .filter(|f| f.iter().all(|&i| keep[i]))
        .map(|f| [remap[f[0]], remap[f[1]], remap[f[2]]])
        .collect();
    TriMesh::new(vertices, faces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::KdTree;

    fn tetra() -> TriMesh {
        TriMesh::new(
            vec![Point3::zeros(), Point3::x(), Point3::y(), Point3::z()],
            vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn unit_cube_normalises_to_symmetric_box() {
        let mut v = Vec::new();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    v.push(Point3::new(i as f64, j as f64, k as f64));
                }
            }
        }
        let m = TriMesh::new(v, vec![[0, 1, 2]]).unwrap();
        let (out, t) = normalize_to_cube(&m).unwrap();
        assert_eq!(t.scale, 2.0);
        for p in out.vertices() {
            for c in p.iter() {
                assert!((c.abs() - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn normalised_mesh_is_fixed_point() {
        let (m, _) = normalize_to_cube(&tetra()).unwrap();
        let (again, t) = normalize_to_cube(&m).unwrap();
        assert!((t.scale - 1.0).abs() < 1e-12);
        assert!(t.translation.norm() < 1e-12);
        for (a, b) in again.vertices().iter().zip(m.vertices()) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn segment_normalisation_arithmetic() {
        let m = TriMesh::new(vec![Point3::new(0.0, 0.0, 0.0), Point3::new(10.0, 0.0, 0.0), Point3::new(5.0, 0.0, 0.0)], vec![]).unwrap();
        let (out, t) = normalize_to_cube(&m).unwrap();
        assert!((t.scale - 0.2).abs() < 1e-15);
        assert!((t.translation - Point3::new(-1.0, 0.0, 0.0)).norm() < 1e-15);
        assert!((out.vertices()[1] - Point3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
        let back = t.inverse().apply_mesh(&out).unwrap();
        for (a, b) in back.vertices().iter().zip(m.vertices()) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn degenerate_mesh_rejected() {
        let m = TriMesh::new(vec![Point3::x(); 3], vec![]).unwrap();
        assert!(normalize_to_cube(&m).is_err());
    }

    #[test]
    fn surface_samples_stay_in_triangle() {
        let m = TriMesh::new(vec![Point3::zeros(), Point3::new(2.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0)], vec![[0, 1, 2]]).unwrap();
        let cloud = sample_surface(&m, 1000, RngSeed(3)).unwrap();
        for p in cloud.points() {
            assert!(p.x >= -1e-15 && p.y >= -1e-15 && p.x / 2.0 + p.y <= 1.0 + 1e-12 && p.z == 0.0);
        }
        assert_eq!(cloud, sample_surface(&m, 1000, RngSeed(3)).unwrap());
        assert_ne!(cloud, sample_surface(&m, 1000, RngSeed(4)).unwrap());
    }

    #[test]
    fn surface_sampling_is_area_weighted() {
        // triangle A has area 1, triangle B has area 3 (in separate half-spaces)
        let m = TriMesh::new(
            vec![
                Point3::new(-2.0, 0.0, 0.0),
                Point3::new(-1.0, 0.0, 0.0),
                Point3::new(-2.0, 2.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(4.0, 0.0, 0.0),
                Point3::new(1.0, 2.0, 0.0),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        let cloud = sample_surface(&m, 100_000, RngSeed(11)).unwrap();
        let on_large = cloud.points().iter().filter(|p| p.x > 0.0).count() as f64 / 1e5;
        assert!((on_large - 0.75).abs() < 0.01, "fraction {on_large}");
    }

    #[test]
    fn all_degenerate_faces_rejected() {
        let m = TriMesh::new(vec![Point3::zeros(), Point3::x(), Point3::x() * 2.0], vec![[0, 1, 2]]).unwrap();
        assert!(sample_surface(&m, 10, RngSeed(0)).is_err());
    }

    #[test]
    fn vertex_sampling() {
        let m = tetra();
        let (cloud, idx) = sample_vertices(&m, 4, RngSeed(5)).unwrap();
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
        assert_eq!(cloud.len(), 4);
        let (_, one) = sample_vertices(&m, 1, RngSeed(9)).unwrap();
        assert_eq!(one, sample_vertices(&m, 1, RngSeed(9)).unwrap().1);
        assert!(one[0] < 4);
        assert!(sample_vertices(&m, 5, RngSeed(0)).is_err());
        // replay on a corresponded mesh
        let moved = m.with_vertices(m.vertices().iter().map(|p| p * 2.0).collect()).unwrap();
        let other = cloud_from_indices(&moved, &idx).unwrap();
        for (a, b) in cloud.points().iter().zip(other.points()) {
            assert_eq!(a * 2.0, *b);
        }
    }

    #[test]
    fn border_detection() {
        assert!(border_vertices(&tetra()).is_empty());
        let tri = TriMesh::new(vec![Point3::zeros(), Point3::x(), Point3::y()], vec![[0, 1, 2]]).unwrap();
        assert_eq!(border_vertices(&tri).into_iter().collect::<Vec<_>>(), vec![0, 1, 2]);
        let quad = TriMesh::new(
            vec![Point3::zeros(), Point3::x(), Point3::new(1.0, 1.0, 0.0), Point3::y()],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap();
        assert_eq!(border_vertices(&quad).len(), 4);
    }

    fn grid_template() -> TriMesh {
        // 4x4 vertex sheet on z = 0, spacing 1; border = outer ring of 12
        let mut v = Vec::new();
        for i in 0..4 {
            for j in 0..4 {
                v.push(Point3::new(i as f64, j as f64, 0.0));
            }
        }
        let mut f = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                let a = i * 4 + j;
                f.push([a, a + 4, a + 5]);
                f.push([a, a + 5, a + 1]);
            }
        }
        TriMesh::new(v, f).unwrap()
    }

    #[test]
    fn crop_keeps_closed_and_interior_cases() {
        let fixed = tetra();
        assert_eq!(crop_to_template(&fixed, &tetra()).unwrap(), fixed);
        let interior = TriMesh::new(
            vec![Point3::new(1.1, 1.1, 0.1), Point3::new(1.9, 1.2, 0.0), Point3::new(1.4, 1.8, -0.1)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert_eq!(crop_to_template(&interior, &grid_template()).unwrap(), interior);
    }

    #[test]
    fn crop_removes_outlier_and_its_faces() {
        let template = grid_template();
        // 9 vertices hugging the interior nodes plus one far outlier
        let mut v = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                v.push(Point3::new(1.0 + 0.45 * i as f64, 1.0 + 0.45 * j as f64, 0.05));
            }
        }
        v.push(Point3::new(-5.0, 1.5, 0.0));
        let faces = vec![[0, 1, 3], [1, 4, 3], [4, 5, 7], [0, 3, 9], [9, 3, 6]];
        let fixed = TriMesh::new(v.clone(), faces).unwrap();
        let border = border_vertices(&template);
        let tree = KdTree::new(template.vertices());
        let expected_removed: Vec<usize> = v
            .iter()
            .enumerate()
            .filter(|(_, p)| {
                let nn = template
                    .vertices()
                    .iter()
                    .enumerate()
                    .min_by(|a, b| (a.1 - *p).norm().total_cmp(&(b.1 - *p).norm()))
                    .unwrap()
                    .0;
                assert_eq!(nn, tree.nearest(p).index);
                border.contains(&nn)
            })
            .map(|(i, _)| i)
            .collect();
        assert_eq!(expected_removed, vec![9]);
        let cropped = crop_to_template(&fixed, &template).unwrap();
        assert_eq!(cropped.vertices().len(), 9);
        assert_eq!(cropped.faces(), &[[0, 1, 3], [1, 4, 3], [4, 5, 7]]);
    }
}
