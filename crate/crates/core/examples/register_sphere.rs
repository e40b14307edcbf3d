// Register a sphere onto an ellipsoid with the Chamfer loss and report the
// fit, the Jacobian range and the inverse consistency of the result.
//
// cargo run --release --example register_sphere

use svfreg::deform::{jacobian_determinant, warp_points, SmoothingKernel};
use svfreg::loss::{chamfer, LossKind};
use svfreg::meshio::sample_surface;
use svfreg::optim::{register, RegistrationConfig};
use svfreg::synthetic::{ellipsoid, icosphere};
use svfreg::{Point3, RngSeed};

fn main() {
    let sphere = icosphere(3, 0.5).unwrap();
    let target = ellipsoid(3, 0.5, [1.0, 0.8, 0.6]).unwrap();
    let x = sample_surface(&sphere, 600, RngSeed(1)).unwrap();
    let y = sample_surface(&target, 600, RngSeed(2)).unwrap();

    let mut cfg = RegistrationConfig::for_loss(LossKind::Chamfer);
    cfg.grid_size = 16;
    cfg.objective.kernel = SmoothingKernel::new(7, 2.0).unwrap();
    cfg.adam.max_iterations = 200;
    let r = register(&x, &y, &cfg).unwrap();

    let before = chamfer(&x, &y).unwrap();
    let after = chamfer(&warp_points(&r.forward, &x), &y).unwrap();
    println!(
        "{} iterations, objective {:.4e} -> {:.4e}",
        r.objective_trace.len() - 1,
        r.initial_objective(),
        r.final_objective()
    );
    println!("Chamfer {before:.3e} -> {after:.3e} ({:.1}% of initial)", 100.0 * after / before);

    let det = jacobian_determinant(&r.forward).unwrap();
    let lo = det.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = det.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    println!("Jacobian determinant range [{lo:.3}, {hi:.3}]");

    let mut drift: f64 = 0.0;
    for i in 0..9 {
        for j in 0..9 {
            for k in 0..9 {
                let p = Point3::new(i as f64, j as f64, k as f64) * 0.2 - Point3::repeat(0.8);
                drift = drift.max((r.inverse.apply(&r.forward.apply(&p)) - p).norm());
            }
        }
    }
    println!("inverse consistency drift on [-0.8, 0.8]^3: {drift:.2e}");
}
