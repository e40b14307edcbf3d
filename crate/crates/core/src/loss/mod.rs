//! Point-cloud distances, regularizers and the symmetric registration objective.

mod regularize;
mod sinkhorn;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use regularize::{laplacian, r_smooth, r_smooth_grad, r_vert};
pub(crate) use regularize::{r_vert_grad, r_vert_points};
pub use sinkhorn::{entropic_ot, sinkhorn_divergence, sinkhorn_divergence_grad, CostKind, SinkhornConfig, SinkhornDivergence, TransportSolution};

use crate::deform::{exponentiate, gaussian_smooth, invert_velocity, warp_points, SmoothingKernel, DEFAULT_SQUARING_STEPS};
use crate::error::{Error, Result};
use crate::geom::{GridField, Point3, PointCloud};
use crate::spatial::KdTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Chamfer,
    Sinkhorn,
}

impl LossKind {
    /// Data-term weight that balances each loss against the default regularizers.
    pub fn default_lambda1(self) -> f64 {
        match self {
            LossKind::Mse => 4e4,
            LossKind::Chamfer => 8e4,
            LossKind::Sinkhorn => 5e3,
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(LossKind::Mse),
            "chamfer" | "cd" => Ok(LossKind::Chamfer),
            "sinkhorn" | "sd" => Ok(LossKind::Sinkhorn),
            other => Err(Error::Config(format!("unknown loss '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizerConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl RegularizerConfig {
    pub fn for_loss(kind: LossKind) -> Self {
        RegularizerConfig {
            alpha: 1e-6,
            gamma: 1.0,
            lambda1: kind.default_lambda1(),
            lambda2: 10.0,
            lambda3: 100.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, l) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !(l.is_finite() && l >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and nonnegative, got {l}")));
            }
        }
        if !(self.alpha.is_finite() && self.gamma.is_finite()) {
            return Err(Error::Config("alpha and gamma must be finite".into()));
        }
        Ok(())
    }
}

/// `(1/N) sum |x_i - y_i|^2` over corresponding points.
pub fn mse(x: &PointCloud, y: &PointCloud) -> Result<f64> {
    Ok(mse_grad(x, y)?.0)
}

/// MSE and its gradient in the points of `y`.
pub fn mse_grad(x: &PointCloud, y: &PointCloud) -> Result<(f64, Vec<Point3>)> {
    if x.len() != y.len() {
        return Err(Error::SizeMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    let n = x.len() as f64;
    let mut total = 0.0;
    let grad = x
        .points()
        .iter()
        .zip(y.points())
        .map(|(a, b)| {
            total += (a - b).norm_squared();
            (b - a) * (2.0 / n)
        })
        .collect();
    Ok((total / n, grad))
}

fn nearest_all(tree: &KdTree, pts: &[Point3]) -> Vec<(usize, f64)> {
    // small batches stay on the calling thread; the hand-off costs more than the queries
    pts.par_iter()
        .with_min_len(512)
        .map(|p| {
            let nn = tree.nearest(p);
            (nn.index, nn.dist2)
        })
        .collect()
}

/// Symmetric mean squared nearest-neighbour distance.
pub fn chamfer(x: &PointCloud, y: &PointCloud) -> Result<f64> {
    Ok(chamfer_grad(x, y)?.0)
}

/// Chamfer distance and its gradient in the points of `y`, with the
/// nearest-neighbour assignment held fixed.
pub fn chamfer_grad(x: &PointCloud, y: &PointCloud) -> Result<(f64, Vec<Point3>)> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::invalid("chamfer distance needs non-empty clouds"));
    }
    let xs = x.points();
    let ys = y.points();
    let x_to_y = nearest_all(&KdTree::new(ys), xs);
    let y_to_x = nearest_all(&KdTree::new(xs), ys);
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let value = x_to_y.iter().map(|(_, d)| d).sum::<f64>() / n + y_to_x.iter().map(|(_, d)| d).sum::<f64>() / m;
    let mut grad: Vec<Point3> = ys
        .iter()
        .zip(&y_to_x)
        .map(|(yj, &(i, _))| (yj - xs[i]) * (2.0 / m))
        .collect();
    for (xi, &(j, _)) in xs.iter().zip(&x_to_y) {
        grad[j] += (ys[j] - xi) * (2.0 / n);
    }
    Ok((value, grad))
}

/// Exact uniform-weight optimal transport by exhaustive assignment search
/// (branch and bound). Cost is `(1/p) |x - y|_2^p`.
pub fn exact_ot(x: &PointCloud, y: &PointCloud, p: f64) -> Result<f64> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::SizeMismatch { expected: n, found: y.len() });
    }
    if n > 10 {
        return Err(Error::invalid(format!("exact OT limited to 10 points, got {n}")));
    }
    let cost: Vec<Vec<f64>> = x
        .points()
        .iter()
        .map(|a| y.points().iter().map(|b| (a - b).norm().powf(p) / p).collect())
        .collect();
    fn search(row: usize, used: &mut [bool], acc: f64, cost: &[Vec<f64>], best: &mut f64) {
        if acc >= *best {
            return;
        }
        if row == cost.len() {
            *best = acc;
            return;
        }
        for j in 0..cost.len() {
            if !used[j] {
                used[j] = true;
                search(row + 1, used, acc + cost[row][j], cost, best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    search(0, &mut vec![false; n], 0.0, &cost, &mut best);
    Ok(best / n as f64)
}

/// `KL(N(mu, diag(sigma^2)) || N(0, I))` with `sigma` the standard deviations.
pub fn kl_diag_gaussian(mu: &[f64], sigma: &[f64]) -> Result<f64> {
    if mu.len() != sigma.len() {
        return Err(Error::SizeMismatch {
            expected: mu.len(),
            found: sigma.len(),
        });
    }
    if let Some(s) = sigma.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::invalid(format!("standard deviations must be positive, got {s}")));
    }
    Ok(0.5
        * mu
            .iter()
            .zip(sigma)
            .map(|(m, s)| s * s + m * m - 1.0 - (s * s).ln())
            .sum::<f64>())
}

/// Value of the selected loss `L(target, moved)`.
pub fn data_loss(kind: LossKind, target: &PointCloud, moved: &PointCloud, sinkhorn: &SinkhornConfig) -> Result<f64> {
    match kind {
        LossKind::Mse => mse(target, moved),
        LossKind::Chamfer => chamfer(target, moved),
        LossKind::Sinkhorn => Ok(sinkhorn_divergence(target, moved, sinkhorn)?.value),
    }
}

/// Selected loss and its gradient in the points of `moved`.
pub fn data_loss_grad(kind: LossKind, target: &PointCloud, moved: &PointCloud, sinkhorn: &SinkhornConfig) -> Result<(f64, Vec<Point3>)> {
    match kind {
        LossKind::Mse => mse_grad(target, moved),
        LossKind::Chamfer => chamfer_grad(target, moved),
        LossKind::Sinkhorn => {
            let (sd, g) = sinkhorn_divergence_grad(target, moved, sinkhorn)?;
            Ok((sd.value, g))
        }
    }
}

/// Everything the symmetric objective depends on besides the data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub loss: LossKind,
    pub sinkhorn: SinkhornConfig,
    pub regularizer: RegularizerConfig,
    pub squaring_steps: u32,
    pub kernel: SmoothingKernel,
}

impl ObjectiveConfig {
    pub fn for_loss(loss: LossKind) -> Self {
        ObjectiveConfig {
            loss,
            sinkhorn: SinkhornConfig::default(),
            regularizer: RegularizerConfig::for_loss(loss),
            squaring_steps: DEFAULT_SQUARING_STEPS,
            kernel: SmoothingKernel::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.regularizer.validate()?;
        self.sinkhorn.validate()?;
        self.kernel.validate()
    }
}

/// Objective value split into its weighted terms. `total = data + smooth + vert`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub total: f64,
    /// `lambda1 / 2 * (loss_forward + loss_inverse)`
    pub data: f64,
    /// `lambda2 * r_smooth(v)`
    pub smooth: f64,
    /// `lambda3 / 2 * (vert_forward + vert_inverse)`
    pub vert: f64,
    /// Unweighted `L(y, Exp(v) x)`.
    pub loss_forward: f64,
    /// Unweighted `L(x, Exp(-v) y)`.
    pub loss_inverse: f64,
    pub vert_forward: f64,
    pub vert_inverse: f64,
}

impl ObjectiveBreakdown {
    pub(crate) fn assemble(reg: &RegularizerConfig, loss_forward: f64, loss_inverse: f64, smooth_raw: f64, vert_forward: f64, vert_inverse: f64) -> Self {
        let data = 0.5 * reg.lambda1 * (loss_forward + loss_inverse);
        let smooth = reg.lambda2 * smooth_raw;
        let vert = 0.5 * reg.lambda3 * (vert_forward + vert_inverse);
        ObjectiveBreakdown {
            total: data + smooth + vert,
            data,
            smooth,
            vert,
            loss_forward,
            loss_inverse,
            vert_forward,
            vert_inverse,
        }
    }
}

/// Symmetric registration objective of the raw field:
/// `v = smooth(v_raw)`, data terms on `Exp(v) x` against `y` and `Exp(-v) y`
/// against `x`, plus smoothness and vertex-drift penalties.
pub fn objective(x: &PointCloud, y: &PointCloud, v_raw: &GridField, cfg: &ObjectiveConfig) -> Result<ObjectiveBreakdown> {
    cfg.validate()?;
    let v = gaussian_smooth(v_raw, &cfg.kernel)?;
    let fwd = exponentiate(&v, cfg.squaring_steps);
    let inv = exponentiate(&invert_velocity(&v), cfg.squaring_steps);
    let x_moved = warp_points(&fwd, x);
    let y_moved = warp_points(&inv, y);
    let reg = &cfg.regularizer;
    let loss_forward = data_loss(cfg.loss, y, &x_moved, &cfg.sinkhorn)?;
    let loss_inverse = data_loss(cfg.loss, x, &y_moved, &cfg.sinkhorn)?;
    let smooth_raw = r_smooth(&v, reg.alpha, reg.gamma)?;
    let vert_forward = r_vert_points(x.points(), x_moved.points())?;
    let vert_inverse = r_vert_points(y.points(), y_moved.points())?;
    Ok(ObjectiveBreakdown::assemble(reg, loss_forward, loss_inverse, smooth_raw, vert_forward, vert_inverse))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(pts.iter().map(|p| Point3::new(p[0], p[1], p[2])).collect()).unwrap()
    }

    #[test]
    fn mse_examples() {
        let a = cloud(&[[0.0, 0.0, 0.0]]);
        let b = cloud(&[[1.0, 0.0, 0.0]]);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mse(&a, &b).unwrap(), 1.0);
        let x = cloud(&[[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]);
        let y = cloud(&[[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]]);
        assert_eq!(mse(&x, &y).unwrap(), 2.5);
        assert!(mse(&a, &x).is_err());
    }

    #[test]
    fn chamfer_examples() {
        let a = cloud(&[[0.0, 0.0, 0.0]]);
        let b = cloud(&[[1.0, 0.0, 0.0]]);
        assert_eq!(chamfer(&a, &b).unwrap(), 2.0);
        let x = cloud(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        assert_eq!(chamfer(&x, &b).unwrap(), 2.0);
        assert_eq!(chamfer(&x, &x).unwrap(), 0.0);
        // same set, different order
        let x_rev = cloud(&[[2.0, 0.0, 0.0], [0.0, 0.0, 0.0]]);
        assert_eq!(chamfer(&x, &x_rev).unwrap(), 0.0);
    }

    #[test]
    fn exact_ot_examples() {
        let x = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        assert_eq!(exact_ot(&x, &x, 1.0).unwrap(), 0.0);
        // identity pairing costs (1.1 + 1.1) / 2, crossing costs (0.1 + 0.1) / 2
        let y = cloud(&[[1.1, 0.0, 0.0], [-0.1, 0.0, 0.0]]);
        assert!((exact_ot(&x, &y, 1.0).unwrap() - 0.1).abs() < 1e-15);
        let a = cloud(&[[0.0, 0.0, 0.0]]);
        let b = cloud(&[[0.0, 3.0, 4.0]]);
        assert_eq!(exact_ot(&a, &b, 2.0).unwrap(), 12.5);
        let big = PointCloud::new(vec![Point3::zeros(); 11]).unwrap();
        assert!(exact_ot(&big, &big, 1.0).is_err());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_diag_gaussian(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!((kl_diag_gaussian(&[1.0], &[1.0]).unwrap() - 0.5).abs() < 1e-15);
        let expect = 0.5 * (4.0 - 1.0 - 4f64.ln());
        assert!((kl_diag_gaussian(&[0.0], &[2.0]).unwrap() - expect).abs() < 1e-15);
        assert!((expect - 0.8069).abs() < 1e-4);
        assert!(kl_diag_gaussian(&[0.0], &[0.0]).is_err());
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let x = cloud(&[[0.1, 0.2, -0.1], [0.5, -0.3, 0.2], [-0.4, 0.1, 0.3], [0.0, 0.6, -0.5]]);
        let y = cloud(&[[0.15, 0.1, -0.2], [0.45, -0.2, 0.3], [-0.3, 0.0, 0.2], [0.1, 0.5, -0.4]]);
        let sk = SinkhornConfig { epsilon: 0.2, tolerance: 1e-12, ..Default::default() };
        for kind in [LossKind::Mse, LossKind::Chamfer, LossKind::Sinkhorn] {
            let (_, g) = data_loss_grad(kind, &x, &y, &sk).unwrap();
            for i in 0..4 {
                for d in 0..3 {
                    let bump = |s: f64| {
                        let mut pts = y.points().to_vec();
                        pts[i][d] += s;
                        data_loss(kind, &x, &PointCloud::new(pts).unwrap(), &sk).unwrap()
                    };
                    let fd = (bump(1e-6) - bump(-1e-6)) / 2e-6;
                    assert!((fd - g[i][d]).abs() < 1e-6 * (1.0 + fd.abs()), "{kind:?} {i} {d}: {fd} vs {}", g[i][d]);
                }
            }
        }
    }

    #[test]
    fn identity_warp_reduces_to_data_term() {
        let x = cloud(&[[0.1, 0.2, -0.1], [0.5, -0.3, 0.2], [-0.4, 0.1, 0.3]]);
        let y = cloud(&[[0.15, 0.1, -0.2], [0.45, -0.2, 0.3], [-0.3, 0.0, 0.2]]);
        let v0 = GridField::zeros(8).unwrap();
        for kind in [LossKind::Mse, LossKind::Chamfer, LossKind::Sinkhorn] {
            let mut cfg = ObjectiveConfig::for_loss(kind);
            cfg.sinkhorn.epsilon = 1e-2;
            let same = objective(&x, &x, &v0, &cfg).unwrap();
            assert_eq!(same.total, 0.0);
            assert_eq!(same.data + same.smooth + same.vert, 0.0);
            let b = objective(&x, &y, &v0, &cfg).unwrap();
            let l = data_loss(kind, &x, &y, &cfg.sinkhorn).unwrap();
            assert!((b.total - cfg.regularizer.lambda1 * l).abs() < 1e-9 * b.total.abs(), "{kind:?}");
            assert_eq!(b.smooth, 0.0);
            assert_eq!(b.vert, 0.0);
        }
    }
}
