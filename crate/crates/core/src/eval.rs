//! Shape-model metrics: surface fit, compactness, generalisability and specificity.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deform::{exponentiate, warp_points};
use crate::error::{Error, Result};
use crate::geom::{GridField, Point3, PointCloud, RngSeed, TriMesh};
use crate::optim::{register, RegistrationConfig};
use crate::pdm::{draw_coefficients, project, reconstruct, PdmModel};
use crate::spatial::KdTree;

/// Area under a percentage curve with unit spacing between consecutive `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Auc {
    /// Trapezoidal sum over the curve.
    pub raw: f64,
    /// `raw / (K - 1)`; equals the single entry when the curve has one point.
    pub normalized: f64,
}

impl Auc {
    pub fn of_curve(curve: &[(usize, f64)]) -> Option<Auc> {
        match curve {
            [] => None,
            [(_, c)] => Some(Auc { raw: 0.0, normalized: *c }),
            _ => {
                let raw: f64 = curve.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1)).sum();
                Some(Auc {
                    raw,
                    normalized: raw / (curve.len() - 1) as f64,
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub values: Vec<f64>,
    pub median: f64,
    pub mean: f64,
    /// Population standard deviation of `values`.
    pub std: f64,
    pub curve: Option<Vec<(usize, f64)>>,
    pub auc: Option<Auc>,
}

impl MetricReport {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("a report needs at least one value"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 { sorted[mid] } else { 0.5 * (sorted[mid - 1] + sorted[mid]) };
        Ok(MetricReport {
            values,
            median,
            mean,
            std,
            curve: None,
            auc: None,
        })
    }

    pub fn with_curve(mut self, curve: Vec<(usize, f64)>) -> Self {
        self.auc = Auc::of_curve(&curve);
        self.curve = Some(curve);
        self
    }
}

/// RMSE where each warped vertex contributes the mean squared distance to
/// its 3 nearest fixed vertices.
pub fn fit_rmse_3nn(warped: &TriMesh, fixed: &TriMesh) -> Result<f64> {
    if fixed.vertices().len() < 3 {
        return Err(Error::invalid("3-NN fit needs at least 3 fixed vertices"));
    }
    if warped.vertices().is_empty() {
        return Err(Error::invalid("warped mesh has no vertices"));
    }
    let tree = KdTree::new(fixed.vertices());
    let per_vertex: Vec<f64> = warped
        .vertices()
        .par_iter()
        .map(|p| tree.k_nearest(p, 3).iter().map(|n| n.dist2).sum::<f64>() / 3.0)
        .collect();
    Ok((per_vertex.iter().sum::<f64>() / per_vertex.len() as f64).sqrt())
}

fn rmse_points(a: &[Point3], b: &[Point3]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::invalid("RMSE of empty point sets"));
    }
    Ok((a.iter().zip(b).map(|(p, q)| (p - q).norm_squared()).sum::<f64>() / a.len() as f64).sqrt())
}

/// RMSE between vertices with the same index.
pub fn fit_rmse_corresponded(a: &TriMesh, b: &TriMesh) -> Result<f64> {
    rmse_points(a.vertices(), b.vertices())
}

/// PCA over vertex coordinates of corresponded shapes (one shape per entry).
/// Values are the component variances; the curve is cumulative explained
/// variance in percent for `k = 1..=max_k`.
pub fn compactness(shapes: &[Vec<Point3>], max_k: usize) -> Result<MetricReport> {
    let n = shapes.len();
    if n < 2 {
        return Err(Error::invalid("compactness needs at least 2 shapes"));
    }
    let m = shapes[0].len();
    if let Some(bad) = shapes.iter().find(|s| s.len() != m) {
        return Err(Error::SizeMismatch {
            expected: m,
            found: bad.len(),
        });
    }
    if max_k == 0 || max_k > n {
        return Err(Error::invalid(format!("component count must be in 1..={n}, got {max_k}")));
    }
    let mut mean = vec![Point3::zeros(); m];
    for s in shapes {
        for (a, p) in mean.iter_mut().zip(s) {
            *a += p;
        }
    }
    for a in &mut mean {
        *a /= n as f64;
    }
    // Gram matrix of the centred shapes shares its nonzero spectrum with the covariance
    let gram = DMatrix::from_fn(n, n, |i, j| {
        shapes[i]
            .iter()
            .zip(&shapes[j])
            .zip(&mean)
            .map(|((a, b), c)| (a - c).dot(&(b - c)))
            .sum::<f64>()
    });
    let mut eig: Vec<f64> = SymmetricEigen::new(gram).eigenvalues.iter().map(|e| e.max(0.0) / (n - 1) as f64).collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = eig.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("shapes have zero variance"));
    }
    let mut acc = 0.0;
    let curve = eig[..max_k]
        .iter()
        .enumerate()
        .map(|(i, e)| {
            acc += e;
            (i + 1, (100.0 * acc / total).min(100.0))
        })
        .collect();
    Ok(MetricReport::from_values(eig[..max_k].to_vec())?.with_curve(curve))
}

/// Per-pair RMSE for each `k`, given the registered velocity field of every pair.
/// `pairs` holds `(moving, fixed, v)` with `v` the smoothed velocity field.
pub fn generalisability_from_fields(model: &PdmModel, pairs: &[(PointCloud, PointCloud, GridField)], ks: &[usize], squaring_steps: u32) -> Result<Vec<Vec<f64>>> {
    pairs
        .iter()
        .map(|(moving, fixed, v)| {
            ks.iter()
                .map(|&k| {
                    let coeffs = project(model, v, k)?;
                    let phi = exponentiate(&reconstruct(model, &coeffs)?, squaring_steps);
                    rmse_points(warp_points(&phi, moving).points(), fixed.points())
                })
                .collect()
        })
        .collect()
}

/// Registers every `(moving, fixed)` pair, restricts its velocity field to the
/// first `k` model components and measures the corresponded RMSE of the warped
/// moving points. The curve is the mean over pairs for each `k`; the values are
/// the per-pair RMSEs at the last `k`.
pub fn generalisability(model: &PdmModel, test_pairs: &[(PointCloud, PointCloud)], ks: &[usize], cfg: &RegistrationConfig) -> Result<MetricReport> {
    if test_pairs.is_empty() || ks.is_empty() {
        return Err(Error::invalid("generalisability needs test pairs and component counts"));
    }
    if cfg.grid_size != model.grid_size {
        return Err(Error::SizeMismatch {
            expected: model.grid_size,
            found: cfg.grid_size,
        });
    }
    let mut with_fields = Vec::with_capacity(test_pairs.len());
    for (moving, fixed) in test_pairs {
        if moving.len() != fixed.len() {
            return Err(Error::SizeMismatch {
                expected: moving.len(),
                found: fixed.len(),
            });
        }
        let r = register(moving, fixed, cfg)?;
        with_fields.push((moving.clone(), fixed.clone(), r.v_smoothed));
    }
    let per_pair = generalisability_from_fields(model, &with_fields, ks, cfg.objective.squaring_steps)?;
    curve_report(&per_pair, ks)
}

pub(crate) fn curve_report(per_pair: &[Vec<f64>], ks: &[usize]) -> Result<MetricReport> {
    let n = per_pair.len() as f64;
    let curve = (0..ks.len()).map(|j| (ks[j], per_pair.iter().map(|r| r[j]).sum::<f64>() / n)).collect();
    let last: Vec<f64> = per_pair.iter().map(|r| r[ks.len() - 1]).collect();
    let mut report = MetricReport::from_values(last)?;
    report.curve = Some(curve);
    Ok(report)
}

/// Draws shapes from the model and averages, per draw, the corresponded RMSE
/// to its 3 closest training shapes.
pub fn specificity(model: &PdmModel, training_shapes: &[TriMesh], template: &TriMesh, k: usize, n_samples: usize, squaring_steps: u32, seed: RngSeed) -> Result<MetricReport> {
    if training_shapes.len() < 3 {
        return Err(Error::invalid("specificity needs at least 3 training shapes"));
    }
    if let Some(bad) = training_shapes.iter().find(|s| s.vertices().len() != template.vertices().len()) {
        return Err(Error::SizeMismatch {
            expected: template.vertices().len(),
            found: bad.vertices().len(),
        });
    }
    if k > model.n_components() {
        return Err(Error::invalid(format!("requested {k} components, model has {}", model.n_components())));
    }
    if n_samples == 0 {
        return Err(Error::invalid("specificity needs at least one sample"));
    }
    // coefficients are drawn sequentially so the stream only depends on the seed
    let mut rng = seed.rng();
    let draws: Vec<Vec<f64>> = (0..n_samples).map(|_| draw_coefficients(model, k, &mut rng)).collect();
    let template_cloud = template.vertex_cloud()?;
    let values = draws
        .par_iter()
        .map(|z| {
            let phi = exponentiate(&reconstruct(model, z)?, squaring_steps);
            let generated = warp_points(&phi, &template_cloud);
            let mut d = training_shapes
                .iter()
                .map(|t| rmse_points(generated.points(), t.vertices()))
                .collect::<Result<Vec<f64>>>()?;
            d.sort_by(f64::total_cmp);
            Ok(d[..3].iter().sum::<f64>() / 3.0)
        })
        .collect::<Result<Vec<f64>>>()?;
    MetricReport::from_values(values)
}
