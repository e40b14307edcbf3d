//! Reverse-mode gradient of the registration objective and the Adam loop
//! that minimizes it.

use serde::{Deserialize, Serialize};

use crate::deform::{exponentiate_taped, gaussian_smooth, gaussian_smooth_adjoint, invert_velocity, warp_points_adjoint, warp_positions, DEFAULT_GRID_SIZE};
use crate::error::{Error, Result};
use crate::geom::{Deformation, Direction, GridField, Point3, PointCloud};
use crate::loss::{data_loss_grad, r_smooth_grad, r_vert_grad, r_vert_points, LossKind, ObjectiveBreakdown, ObjectiveConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Added to the root second moment. Large enough that field nodes the
    /// data barely reaches (boundary nodes, far field) do not take full steps
    /// on gradient noise.
    pub eps_hat: f64,
    pub max_iterations: usize,
    /// Stop once the objective changes by less than this fraction over 10
    /// iterations. A rising objective is an Adam transient, not convergence.
    pub stop_tolerance: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-2,
            max_iterations: 500,
            stop_tolerance: 1e-6,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps_hat > 0.0) {
            return Err(Error::Config("eps_hat must be positive".into()));
        }
        Ok(())
    }
}

/// Settings for one pairwise registration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationConfig {
    pub objective: ObjectiveConfig,
    pub adam: AdamConfig,
    pub grid_size: usize,
}

impl RegistrationConfig {
    pub fn for_loss(loss: LossKind) -> Self {
        RegistrationConfig {
            objective: ObjectiveConfig::for_loss(loss),
            adam: AdamConfig::default(),
            grid_size: DEFAULT_GRID_SIZE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    #[serde(flatten)]
    pub terms: ObjectiveBreakdown,
}

#[derive(Debug, Clone)]
pub struct RegistrationResult {
    pub v_raw: GridField,
    pub v_smoothed: GridField,
    pub forward: Deformation,
    pub inverse: Deformation,
    /// Objective at every evaluated iterate, starting with `v_raw = 0`.
    pub objective_trace: Vec<TraceEntry>,
    /// Trace index of the returned iterate (the lowest objective seen).
    pub best_iteration: usize,
    pub converged: bool,
}

impl RegistrationResult {
    pub fn initial_objective(&self) -> f64 {
        self.objective_trace[0].terms.total
    }

    pub fn final_objective(&self) -> f64 {
        self.objective_trace[self.best_iteration].terms.total
    }
}

/// Objective value and the exact gradient in `v_raw`.
pub fn objective_and_gradient(x: &PointCloud, y: &PointCloud, v_raw: &GridField, cfg: &ObjectiveConfig) -> Result<(ObjectiveBreakdown, GridField)> {
    cfg.validate()?;
    let n = v_raw.nodes_per_axis();
    let reg = &cfg.regularizer;
    let v = gaussian_smooth(v_raw, &cfg.kernel)?;
    let (fwd, fwd_tape) = exponentiate_taped(&v, cfg.squaring_steps, Direction::Forward);
    let (inv, inv_tape) = exponentiate_taped(&invert_velocity(&v), cfg.squaring_steps, Direction::Inverse);
    let x_moved = x.with_points(warp_positions(&fwd.displacement, x.points()));
    let y_moved = y.with_points(warp_positions(&inv.displacement, y.points()));

    let (loss_forward, gl_fwd) = data_loss_grad(cfg.loss, y, &x_moved, &cfg.sinkhorn)?;
    let (loss_inverse, gl_inv) = data_loss_grad(cfg.loss, x, &y_moved, &cfg.sinkhorn)?;
    let vert_forward = r_vert_points(x.points(), x_moved.points())?;
    let vert_inverse = r_vert_points(y.points(), y_moved.points())?;
    let (smooth_raw, g_smooth) = r_smooth_grad(&v, reg.alpha, reg.gamma)?;
    let terms = ObjectiveBreakdown::assemble(reg, loss_forward, loss_inverse, smooth_raw, vert_forward, vert_inverse);

    let point_grad = |gl: Vec<Point3>, orig: &[Point3], moved: &[Point3]| -> Vec<Point3> {
        let gv = r_vert_grad(orig, moved);
        gl.iter()
            .zip(&gv)
            .map(|(a, b)| a * (0.5 * reg.lambda1) + b * (0.5 * reg.lambda3))
            .collect()
    };
    let gx = point_grad(gl_fwd, x.points(), x_moved.points());
    let gy = point_grad(gl_inv, y.points(), y_moved.points());
    let g_fwd = fwd_tape.backward(&warp_points_adjoint(n, x.points(), &gx));
    let g_inv = inv_tape.backward(&warp_points_adjoint(n, y.points(), &gy));

    let g_v: Vec<Point3> = g_fwd
        .values()
        .iter()
        .zip(g_inv.values())
        .zip(g_smooth.values())
        .map(|((a, b), s)| a - b + s * reg.lambda2)
        .collect();
    let g_raw = gaussian_smooth_adjoint(&GridField::from_values_unchecked(n, g_v), &cfg.kernel)?;
    Ok((terms, g_raw))
}

/// Gradient of [`crate::loss::objective`] with respect to every entry of `v_raw`.
pub fn gradient(x: &PointCloud, y: &PointCloud, v_raw: &GridField, cfg: &ObjectiveConfig) -> Result<GridField> {
    Ok(objective_and_gradient(x, y, v_raw, cfg)?.1)
}

struct Adam {
    cfg: AdamConfig,
    m: Vec<Point3>,
    s: Vec<Point3>,
    t: i32,
}

impl Adam {
    fn new(cfg: AdamConfig, len: usize) -> Self {
        Adam {
            cfg,
            m: vec![Point3::zeros(); len],
            s: vec![Point3::zeros(); len],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [Point3], grad: &[Point3]) {
        let c = self.cfg;
        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for ((p, g), (m, s)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.s.iter_mut())) {
            *m = *m * c.beta1 + g * (1.0 - c.beta1);
            *s = *s * c.beta2 + g.component_mul(g) * (1.0 - c.beta2);
            for d in 0..3 {
                let m_hat = m[d] / bc1;
                let s_hat = s[d] / bc2;
                p[d] -= c.learning_rate * m_hat / (s_hat.sqrt() + c.eps_hat);
            }
        }
    }
}

/// Minimizes the symmetric objective over `v_raw`, starting from zero.
/// Returns the best iterate seen, so its objective never exceeds the initial one.
pub fn register(moving: &PointCloud, fixed: &PointCloud, cfg: &RegistrationConfig) -> Result<RegistrationResult> {
    cfg.adam.validate()?;
    cfg.objective.validate()?;
    let n = cfg.grid_size;
    let mut params = GridField::zeros(n)?.values().to_vec();
    let mut adam = Adam::new(cfg.adam, params.len());
    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut converged = false;
    for iteration in 0..=cfg.adam.max_iterations {
        let v_raw = GridField::from_values_unchecked(n, params.clone());
        let (terms, grad) = objective_and_gradient(moving, fixed, &v_raw, &cfg.objective)?;
        if !terms.total.is_finite() {
            return Err(Error::Divergence {
                iteration,
                message: format!("objective became {} (data {}, smooth {}, vert {})", terms.total, terms.data, terms.smooth, terms.vert),
            });
        }
        trace.push(TraceEntry { iteration, terms });
        if terms.total < best.0 {
            best = (terms.total, iteration, params.clone());
        }
        log::debug!("iteration {iteration}: objective {:.6e}", terms.total);
        if terms.total == 0.0 || grad.values().iter().all(|g| *g == Point3::zeros()) {
            converged = true;
            break;
        }
        if iteration >= 10 {
            let before = trace[iteration - 10].terms.total;
            if (before - terms.total).abs() < cfg.adam.stop_tolerance * before.abs() {
                converged = true;
                break;
            }
        }
        if iteration < cfg.adam.max_iterations {
            adam.step(&mut params, grad.values());
        }
    }
    let v_raw = GridField::from_values_unchecked(n, best.2);
    let v_smoothed = gaussian_smooth(&v_raw, &cfg.objective.kernel)?;
    let t = cfg.objective.squaring_steps;
    let forward = exponentiate_taped(&v_smoothed, t, Direction::Forward).0;
    let inverse = exponentiate_taped(&invert_velocity(&v_smoothed), t, Direction::Inverse).0;
    Ok(RegistrationResult {
        v_raw,
        v_smoothed,
        forward,
        inverse,
        objective_trace: trace,
        best_iteration: best.1,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::objective;
    use rand::Rng;
    use crate::geom::RngSeed;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = RngSeed(seed).rng();
        PointCloud::new((0..n).map(|_| Point3::new(rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6))).collect()).unwrap()
    }

    fn small_config(loss: LossKind) -> ObjectiveConfig {
        let mut cfg = ObjectiveConfig::for_loss(loss);
        cfg.kernel = crate::deform::SmoothingKernel::new(5, 1.0).unwrap();
        cfg
    }

    #[test]
    fn zero_field_on_identical_clouds_has_zero_gradient() {
        let x = random_cloud(16, 1);
        for loss in [LossKind::Mse, LossKind::Chamfer, LossKind::Sinkhorn] {
            let g = gradient(&x, &x, &GridField::zeros(8).unwrap(), &small_config(loss)).unwrap();
            assert!(g.max_norm() < 1e-12, "{loss:?}");
        }
    }

    #[test]
    fn reported_terms_match_objective() {
        let x = random_cloud(16, 2);
        let y = random_cloud(16, 3);
        let cfg = small_config(LossKind::Chamfer);
        let v = GridField::from_fn(8, |p| Point3::new(0.05 * p.y, -0.03 * p.z, 0.04 * p.x)).unwrap();
        let (terms, _) = objective_and_gradient(&x, &y, &v, &cfg).unwrap();
        assert_eq!(terms, objective(&x, &y, &v, &cfg).unwrap());
        assert!((terms.data + terms.smooth + terms.vert - terms.total).abs() < 1e-12);
    }

    #[test]
    fn data_gradient_is_linear_in_lambda1() {
        let x = random_cloud(16, 4);
        let y = random_cloud(16, 5);
        let mut cfg = small_config(LossKind::Mse);
        cfg.regularizer.lambda2 = 0.0;
        cfg.regularizer.lambda3 = 0.0;
        cfg.regularizer.lambda1 = 1.0;
        let v = GridField::zeros(8).unwrap();
        let g1 = gradient(&x, &y, &v, &cfg).unwrap();
        cfg.regularizer.lambda1 = 3.0;
        let g3 = gradient(&x, &y, &v, &cfg).unwrap();
        for (a, b) in g1.values().iter().zip(g3.values()) {
            assert!((a * 3.0 - b).norm() < 1e-12);
        }
    }

    #[test]
    fn mse_gradient_matches_finite_differences() {
        let x = random_cloud(16, 6);
        let y = random_cloud(16, 7);
        let mut cfg = small_config(LossKind::Mse);
        cfg.regularizer = crate::loss::RegularizerConfig { alpha: 1e-2, gamma: 1.0, lambda1: 1.0, lambda2: 1.0, lambda3: 1.0 };
        let v = GridField::from_fn(8, |p| Point3::new((1.3 * p.y + 0.2).sin() * 0.2, (0.7 * p.z - 0.1).cos() * 0.1, 0.15 * p.x)).unwrap();
        let g = gradient(&x, &y, &v, &cfg).unwrap().to_flat();
        let flat = v.to_flat();
        for idx in (0..flat.len()).step_by(37) {
            let f = |s: f64| {
                let mut p = flat.clone();
                p[idx] += s;
                objective(&x, &y, &GridField::from_flat(8, &p).unwrap(), &cfg).unwrap().total
            };
            let fd = (f(1e-5) - f(-1e-5)) / 2e-5;
            if g[idx].abs() > 1e-8 {
                assert!((fd - g[idx]).abs() / fd.abs().max(g[idx].abs()) < 1e-3, "{idx}: {fd} vs {}", g[idx]);
            }
        }
    }

    #[test]
    fn identical_clouds_converge_at_once() {
        let x = random_cloud(50, 8);
        let mut cfg = RegistrationConfig::for_loss(LossKind::Chamfer);
        cfg.grid_size = 8;
        cfg.objective.kernel = crate::deform::SmoothingKernel::new(5, 1.0).unwrap();
        let r = register(&x, &x, &cfg).unwrap();
        assert!(r.converged);
        assert!(r.v_raw.max_norm() < 1e-3);
        assert_eq!(r.objective_trace.len(), 1);
    }

    #[test]
    fn final_objective_never_exceeds_initial() {
        let x = random_cloud(40, 9);
        let y = x.with_points(x.points().iter().map(|p| p * 1.1).collect());
        let mut cfg = RegistrationConfig::for_loss(LossKind::Mse);
        cfg.grid_size = 8;
        cfg.adam.max_iterations = 30;
        cfg.objective.kernel = crate::deform::SmoothingKernel::new(5, 1.0).unwrap();
        let r = register(&x, &y, &cfg).unwrap();
        assert!(r.final_objective() <= r.initial_objective());
        assert!(r.final_objective() < 0.5 * r.initial_objective());
        let again = register(&x, &y, &cfg).unwrap();
        assert_eq!(r.v_raw, again.v_raw);
    }
}
