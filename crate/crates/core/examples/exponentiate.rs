// Exponentiate a smooth velocity field by scaling and squaring, then check
// it against fine Euler integration, its inverse and its Jacobian.
//
// cargo run --release --example exponentiate

use svfreg::deform::{euler_flow_oracle, exponentiate, gaussian_smooth, invert_velocity, jacobian_determinant, warp_points, SmoothingKernel};
use svfreg::{GridField, Point3, PointCloud};

fn main() {
    // a swirl about z plus a gentle expansion, fading towards the cube faces
    let v = GridField::from_fn(16, |p| {
        let fade = (1.0 - p.norm_squared() / 3.0).max(0.0);
        Point3::new(-p.y + 0.2 * p.x, p.x + 0.2 * p.y, 0.1 * p.z) * (0.2 * fade)
    })
    .unwrap();
    let v = gaussian_smooth(&v, &SmoothingKernel::new(5, 1.0).unwrap()).unwrap();

    let phi = exponentiate(&v, 7);
    let pts: Vec<Point3> = (0..8).map(|i| Point3::new(0.4 * (i as f64 * 0.8).cos(), 0.4 * (i as f64 * 0.8).sin(), 0.1 * i as f64 - 0.35)).collect();
    let cloud = PointCloud::new(pts.clone()).unwrap();
    let fast = warp_points(&phi, &cloud);
    let slow = euler_flow_oracle(&v, &cloud, 1024).unwrap();
    let err = fast.points().iter().zip(slow.points()).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max);
    println!("scaling and squaring vs 1024 Euler steps: max coordinate gap {err:.2e}");

    let back = exponentiate(&invert_velocity(&v), 7);
    let drift = pts.iter().map(|p| (back.apply(&phi.apply(p)) - p).norm()).fold(0.0, f64::max);
    println!("Exp(-v) o Exp(v) drift on the sample points: {drift:.2e}");

    let det = jacobian_determinant(&phi).unwrap();
    let (lo, hi) = det.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    println!("Jacobian determinant over {} nodes: min {lo:.4}, max {hi:.4}", det.len());
    assert!(err < 1e-3 && lo > 0.0);
}
