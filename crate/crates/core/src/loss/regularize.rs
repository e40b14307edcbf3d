use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{GridField, Point3, PointCloud};

/// Componentwise 7-point Laplacian with spacing `h` and replicate padding.
/// Replicate padding makes this operator symmetric.
pub fn laplacian(field: &GridField) -> GridField {
    let n = field.nodes_per_axis();
    let inv_h2 = 1.0 / (field.spacing() * field.spacing());
    let vals: Vec<Point3> = (0..n.pow(3))
        .into_par_iter()
        .with_min_len(512)
        .map(|idx| {
            let (i, j, k) = (idx / (n * n), (idx / n) % n, idx % n);
            let c = field.at(i, j, k);
            let lo = |t: usize| t.saturating_sub(1);
            let hi = |t: usize| (t + 1).min(n - 1);
            let sum = field.at(lo(i), j, k)
                + field.at(hi(i), j, k)
                + field.at(i, lo(j), k)
                + field.at(i, hi(j), k)
                + field.at(i, j, lo(k))
                + field.at(i, j, hi(k));
            (sum - c * 6.0) * inv_h2
        })
        .collect();
    GridField::from_values_unchecked(n, vals)
}

fn smooth_residual(v: &GridField, alpha: f64, gamma: f64) -> Vec<Point3> {
    let lap = laplacian(v);
    lap.values()
        .iter()
        .zip(v.values())
        .map(|(l, x)| x * gamma - l * alpha)
        .collect()
}

fn check_grid(v: &GridField) -> Result<()> {
    if v.nodes_per_axis() < 3 {
        return Err(Error::invalid("smoothness regularizer needs at least 3 nodes per axis"));
    }
    Ok(())
}

/// Mean over all `3 V^3` entries of `(-alpha * lap(v) + gamma * v)^2`.
pub fn r_smooth(v: &GridField, alpha: f64, gamma: f64) -> Result<f64> {
    check_grid(v)?;
    let r = smooth_residual(v, alpha, gamma);
    let total: f64 = r.iter().map(|p| p.norm_squared()).sum();
    Ok(total / (3 * v.values().len()) as f64)
}

pub fn r_smooth_grad(v: &GridField, alpha: f64, gamma: f64) -> Result<(f64, GridField)> {
    check_grid(v)?;
    let n = v.values().len();
    let r = smooth_residual(v, alpha, gamma);
    let value = r.iter().map(|p| p.norm_squared()).sum::<f64>() / (3 * n) as f64;
    let scale = 2.0 / (3 * n) as f64;
    let rf = GridField::from_values_unchecked(v.nodes_per_axis(), r);
    let lap_r = laplacian(&rf);
    let g = rf
        .values()
        .iter()
        .zip(lap_r.values())
        .map(|(x, l)| (x * gamma - l * alpha) * scale)
        .collect();
    Ok((value, GridField::from_values_unchecked(v.nodes_per_axis(), g)))
}

/// Mean L1 distance between corresponding points.
pub fn r_vert(x: &PointCloud, x_star: &PointCloud) -> Result<f64> {
    r_vert_points(x.points(), x_star.points())
}

pub(crate) fn r_vert_points(x: &[Point3], x_star: &[Point3]) -> Result<f64> {
    if x.len() != x_star.len() {
        return Err(Error::SizeMismatch {
            expected: x.len(),
            found: x_star.len(),
        });
    }
    let total: f64 = x.iter().zip(x_star).map(|(a, b)| (a - b).abs().sum()).sum();
    Ok(total / x.len() as f64)
}

/// Gradient of [`r_vert`] in the moved points (zero subgradient at ties).
pub(crate) fn r_vert_grad(x: &[Point3], x_star: &[Point3]) -> Vec<Point3> {
    let w = 1.0 / x.len() as f64;
    x.iter()
        .zip(x_star)
        .map(|(a, b)| (b - a).map(|d| if d > 0.0 { w } else if d < 0.0 { -w } else { 0.0 }))
        .collect()
}
