//! Debiased Sinkhorn divergence between weighted point clouds.
//!
//! Potentials are iterated in the log domain with alternating updates, warm
//! started along a halving epsilon schedule.
//! The cross term and the two self terms share one routine, so for identical
//! inputs all three runs perform the same floating-point operations and the
//! divergence cancels to exactly zero.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point3, PointCloud};

/// How the ground cost `(1/p) |x - y|` is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CostKind {
    /// `(1/p) * |x - y|_2^p`
    #[default]
    PoweredEuclidean,
    /// `(1/p) * |x - y|_p`
    PNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub p: f64,
    /// Iteration cap per epsilon stage.
    pub max_iterations: usize,
    /// Stop once the largest potential update falls below this.
    pub tolerance: f64,
    pub cost: CostKind,
    /// Solve along epsilon halved from the cloud diameter down to `epsilon`,
    /// each stage warm started from the previous one. Without it, small
    /// epsilons stall far from the fixed point.
    pub annealing: bool,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            epsilon: 1e-4,
            p: 1.0,
            max_iterations: 1000,
            tolerance: 1e-6,
            cost: CostKind::PoweredEuclidean,
            annealing: true,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Config(format!("sinkhorn epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.p.is_finite() && self.p > 0.0) {
            return Err(Error::Config(format!("sinkhorn p must be positive, got {}", self.p)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("sinkhorn tolerance must be positive".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn cost(&self, a: &Point3, b: &Point3) -> f64 {
        let d = a - b;
        match self.cost {
            CostKind::PoweredEuclidean => {
                if self.p == 1.0 {
                    d.norm()
                } else if self.p == 2.0 {
                    0.5 * d.norm_squared()
                } else {
                    d.norm().powf(self.p) / self.p
                }
            }
            CostKind::PNorm => {
                if self.p == 1.0 {
                    d.abs().sum()
                } else {
                    d.iter().map(|c| c.abs().powf(self.p)).sum::<f64>().powf(1.0 / self.p) / self.p
                }
            }
        }
    }

    /// Gradient of [`SinkhornConfig::cost`] in its first argument; zero where undefined.
    #[inline]
    pub fn cost_gradient(&self, a: &Point3, b: &Point3) -> Point3 {
        let d = a - b;
        let n = d.norm();
        if n == 0.0 {
            return Point3::zeros();
        }
        match self.cost {
            CostKind::PoweredEuclidean => d * n.powf(self.p - 2.0),
            CostKind::PNorm => {
                let np = d.iter().map(|c| c.abs().powf(self.p)).sum::<f64>().powf(1.0 / self.p);
                d.map(|c| c.signum() * c.abs().powf(self.p - 1.0)) * (np.powf(1.0 - self.p) / self.p)
            }
        }
    }
}

/// Result of one entropic transport solve.
#[derive(Debug, Clone)]
pub struct TransportSolution {
    pub value: f64,
    pub converged: bool,
    /// Iterations spent at the final epsilon.
    pub iterations: usize,
    /// Potential on the first cloud.
    pub f: Vec<f64>,
    /// Potential on the second cloud.
    pub g: Vec<f64>,
}

/// `out_i = -eps * log sum_j exp(h_j - C(x_i, y_j) / eps)`
fn softmin(cfg: &SinkhornConfig, eps: f64, x: &[Point3], y: &[Point3], h: &[f64]) -> Vec<f64> {
    x.par_iter()
        .with_min_len(64)
        .map(|xi| {
            let mut m = f64::NEG_INFINITY;
            let terms: Vec<f64> = y
                .iter()
                .zip(h)
                .map(|(yj, hj)| {
                    let t = hj - cfg.cost(xi, yj) / eps;
                    if t > m {
                        m = t;
                    }
                    t
                })
                .collect();
            if m == f64::NEG_INFINITY {
                return f64::INFINITY;
            }
            let s: f64 = terms.iter().map(|t| (t - m).exp()).sum();
            -eps * (m + s.ln())
        })
        .collect()
}

fn shifted(log_w: &[f64], pot: &[f64], eps: f64) -> Vec<f64> {
    log_w.iter().zip(pot).map(|(l, p)| l + p / eps).collect()
}

fn max_change(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn diameter_cost(cfg: &SinkhornConfig, x: &[Point3], y: &[Point3]) -> f64 {
    let mut lo = Point3::repeat(f64::INFINITY);
    let mut hi = Point3::repeat(f64::NEG_INFINITY);
    for p in x.iter().chain(y) {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    cfg.cost(&lo, &hi)
}

/// Entropic OT between `alpha` (on `a`) and `beta` (on `b`), in the
/// `<alpha, f> + <beta, g>` dual form.
pub fn entropic_ot(a: &PointCloud, b: &PointCloud, cfg: &SinkhornConfig) -> Result<TransportSolution> {
    cfg.validate()?;
    let x = a.points();
    let y = b.points();
    let la: Vec<f64> = a.weights().iter().map(|w| w.ln()).collect();
    let lb: Vec<f64> = b.weights().iter().map(|w| w.ln()).collect();

    let schedule = epsilon_schedule(cfg, x, y);
    let mut f = vec![0.0; x.len()];
    let mut g = vec![0.0; y.len()];
    let mut converged = false;
    let mut iterations = 0;
    for &eps in &schedule {
        converged = false;
        iterations = 0;
        while iterations < cfg.max_iterations {
            iterations += 1;
            let nf = softmin(cfg, eps, x, y, &shifted(&lb, &g, eps));
            let ng = softmin(cfg, eps, y, x, &shifted(&la, &nf, eps));
            let change = max_change(&nf, &f).max(max_change(&ng, &g));
            f = nf;
            g = ng;
            if change < cfg.tolerance {
                converged = true;
                break;
            }
        }
    }
    let eps = cfg.epsilon;
    // one more symmetric half-step from the converged pair
    let ft = softmin(cfg, eps, x, y, &shifted(&lb, &g, eps));
    let gt = softmin(cfg, eps, y, x, &shifted(&la, &f, eps));
    let value = dot(a.weights(), &ft) + dot(b.weights(), &gt);
    Ok(TransportSolution {
        value,
        converged,
        iterations,
        f: ft,
        g: gt,
    })
}

fn epsilon_schedule(cfg: &SinkhornConfig, x: &[Point3], y: &[Point3]) -> Vec<f64> {
    let mut out = Vec::new();
    if cfg.annealing {
        let mut e = diameter_cost(cfg, x, y);
        while e > cfg.epsilon {
            out.push(e);
            e *= 0.5;
        }
    }
    out.push(cfg.epsilon);
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone)]
pub struct SinkhornDivergence {
    pub value: f64,
    /// False if any of the three solves hit `max_iterations`.
    pub converged: bool,
    pub cross: TransportSolution,
    pub self_first: TransportSolution,
    pub self_second: TransportSolution,
}

/// `OT(a, b) - OT(a, a) / 2 - OT(b, b) / 2`.
pub fn sinkhorn_divergence(a: &PointCloud, b: &PointCloud, cfg: &SinkhornConfig) -> Result<SinkhornDivergence> {
    let cross = entropic_ot(a, b, cfg)?;
    let self_first = entropic_ot(a, a, cfg)?;
    let self_second = entropic_ot(b, b, cfg)?;
    let value = cross.value - 0.5 * self_first.value - 0.5 * self_second.value;
    let converged = cross.converged && self_first.converged && self_second.converged;
    if !converged {
        log::warn!(
            "sinkhorn did not converge within {} iterations (eps = {})",
            cfg.max_iterations,
            cfg.epsilon
        );
    }
    Ok(SinkhornDivergence {
        value,
        converged,
        cross,
        self_first,
        self_second,
    })
}

/// Transport-plan weighted cost gradient: `sum_j pi_ij grad_1 C(x_i, y_j)`.
fn plan_gradient(cfg: &SinkhornConfig, x: &PointCloud, y: &PointCloud, f: &[f64], g: &[f64]) -> Vec<Point3> {
    let eps = cfg.epsilon;
    let xs = x.points();
    let ys = y.points();
    xs.par_iter()
        .with_min_len(64)
        .enumerate()
        .map(|(i, xi)| {
            let la = x.weights()[i].ln();
            let mut acc = Point3::zeros();
            for (j, yj) in ys.iter().enumerate() {
                let lp = la + y.weights()[j].ln() + (f[i] + g[j] - cfg.cost(xi, yj)) / eps;
                let pi = lp.exp();
                if pi > 0.0 {
                    acc += cfg.cost_gradient(xi, yj) * pi;
                }
            }
            acc
        })
        .collect()
}

/// Divergence and its gradient with respect to the positions of `b`. The
/// converged potentials are held fixed.
pub fn sinkhorn_divergence_grad(a: &PointCloud, b: &PointCloud, cfg: &SinkhornConfig) -> Result<(SinkhornDivergence, Vec<Point3>)> {
    let sd = sinkhorn_divergence(a, b, cfg)?;
    // cross term: b is the second argument, so use the transposed plan
    let cross = plan_gradient(cfg, b, a, &sd.cross.g, &sd.cross.f);
    let own = plan_gradient(cfg, b, b, &sd.self_second.f, &sd.self_second.g);
    let grad = cross.iter().zip(&own).map(|(c, o)| c - o).collect();
    Ok((sd, grad))
}
