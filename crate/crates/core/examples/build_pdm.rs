// Fit a tangent-PCA model incrementally, round-trip it through the model
// file format, then project, reconstruct and sample.
//
// cargo run --release --example build_pdm

use rand_distr::{Distribution, StandardNormal};
use svfreg::cli::{decode_model, encode_model};
use svfreg::pdm::{explained_variance_curve, fit_pdm, project, reconstruct, sample_pdm, IncrementalPca};
use svfreg::{GridField, Point3, RngSeed};

fn main() {
    // three smooth modes with standard deviations 0.05, 0.03, 0.01
    let modes = [
        GridField::from_fn(8, |p| Point3::new(p.x, 0.0, 0.0)).unwrap(),
        GridField::from_fn(8, |p| Point3::new(-p.y, p.x, 0.0)).unwrap(),
        GridField::from_fn(8, |p| Point3::new(0.0, 0.0, (p.x * p.y).sin())).unwrap(),
    ];
    let flat: Vec<Vec<f64>> = modes.iter().map(GridField::to_flat).collect();
    let std = [0.05, 0.03, 0.01];
    let mut rng = RngSeed(3).rng();
    let fields: Vec<GridField> = (0..25)
        .map(|_| {
            let c: Vec<f64> = std.iter().map(|s| {
                let z: f64 = StandardNormal.sample(&mut rng);
                s * z
            }).collect();
            let combined: Vec<f64> = (0..flat[0].len()).map(|i| (0..3).map(|m| c[m] * flat[m][i]).sum()).collect();
            GridField::from_flat(8, &combined).unwrap()
        })
        .collect();

    let mut pca = IncrementalPca::new();
    for batch in fields.chunks(5) {
        pca.partial_fit(batch).unwrap();
    }
    let model = pca.finish(5).unwrap();
    let batch_model = fit_pdm(fields.clone(), 5, fields.len()).unwrap();
    let gap = model.eigenvalues.iter().zip(&batch_model.eigenvalues).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("eigenvalues {:?}", model.eigenvalues);
    println!("largest eigenvalue gap to the one-batch fit: {gap:.1e}");
    println!("cumulative explained variance {:.4?}", explained_variance_curve(&model).unwrap());

    let bytes = encode_model(&model).unwrap();
    assert_eq!(decode_model(&bytes).unwrap(), model);
    println!("model file: {} bytes, reads back identically", bytes.len());

    let coeffs = project(&model, &fields[0], 3).unwrap();
    let back = reconstruct(&model, &coeffs).unwrap();
    let err = back.values().iter().zip(fields[0].values()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    println!("3-component reconstruction of a training field: max error {err:.1e}");

    let s = sample_pdm(&model, 3, RngSeed(8)).unwrap();
    println!("a sampled field has max norm {:.4}", s.max_norm());
}
