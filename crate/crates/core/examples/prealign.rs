// Cube normalisation, similarity ICP and border cropping.
//
// cargo run --release --example prealign

use nalgebra::Rotation3;
use svfreg::meshio::{crop_to_template, normalize_to_cube, similarity_icp, SimilarityTransform};
use svfreg::synthetic::ellipsoid;
use svfreg::{Point3, RngSeed, TriMesh};

fn main() {
    let shape = ellipsoid(3, 0.5, [1.0, 0.8, 0.6]).unwrap();
    let pose = SimilarityTransform::new(1.3, Rotation3::from_euler_angles(0.1, -0.05, 0.15).into_inner(), Point3::new(0.1, -0.05, 0.05)).unwrap();
    let scan = pose.apply_mesh(&shape).unwrap();

    let (unit, t) = normalize_to_cube(&scan).unwrap();
    let (lo, hi) = bounds(&unit);
    println!("normalised scan: scale {:.4}, box {lo:.3?} to {hi:.3?}", t.scale);

    let icp = similarity_icp(&scan, &shape, 300, RngSeed(0)).unwrap();
    let recovered = icp.transform.compose(&pose);
    println!(
        "ICP: {} rounds, final cost {:.2e}; residual pose scale {:.6}, angle {:.2e} rad",
        icp.costs.len(),
        icp.costs.last().unwrap(),
        recovered.scale,
        recovered.angle()
    );

    // an open template: the upper half of the shape, re-indexed
    let upper: Vec<usize> = (0..shape.vertices().len()).filter(|&i| shape.vertices()[i].z > -0.05).collect();
    let mut remap = vec![usize::MAX; shape.vertices().len()];
    for (new, &old) in upper.iter().enumerate() {
        remap[old] = new;
    }
    let faces = shape.faces().iter().filter(|f| f.iter().all(|&i| remap[i] != usize::MAX)).map(|f| f.map(|i| remap[i])).collect();
    let template = TriMesh::new(upper.iter().map(|&i| shape.vertices()[i]).collect(), faces).unwrap();
    let cropped = crop_to_template(&shape, &template).unwrap();
    println!("cropping against an open template: {} -> {} vertices", shape.vertices().len(), cropped.vertices().len());
}

fn bounds(m: &TriMesh) -> ([f64; 3], [f64; 3]) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in m.vertices() {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (lo, hi)
}
