//! Diffeomorphisms from stationary velocity fields.
//!
//! A velocity field `v` is smoothed with a separable Gaussian, integrated
//! into a displacement field by scaling and squaring, and applied to points
//! by trilinear interpolation. Every stage that sits on the gradient path has
//! a matching adjoint here (`*_adjoint`, [`ExpTape::backward`]) so the
//! optimizer can run reverse mode through the whole chain.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{node_position, trilinear_sample, Deformation, Direction, GridField, Point3, PointCloud, Stencil, TriMesh};

pub const DEFAULT_SQUARING_STEPS: u32 = 7;
pub const DEFAULT_GRID_SIZE: usize = 64;

/// Separable Gaussian kernel; `sigma` is measured in grid nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingKernel {
    pub size: usize,
    pub sigma: f64,
}

impl Default for SmoothingKernel {
    fn default() -> Self {
        SmoothingKernel { size: 15, sigma: 4.0 }
    }
}

impl SmoothingKernel {
    pub fn new(size: usize, sigma: f64) -> Result<Self> {
        let k = SmoothingKernel { size, sigma };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if self.size % 2 == 0 {
            return Err(Error::Config(format!("kernel size must be odd, got {}", self.size)));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::Config(format!("kernel sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }

    /// Normalised 1D taps, centre at index `size / 2`.
    pub fn weights(&self) -> Vec<f64> {
        let r = (self.size / 2) as f64;
        let raw: Vec<f64> = (0..self.size)
            .map(|i| {
                let t = i as f64 - r;
                (-t * t / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }
}

fn strides(v: usize) -> [usize; 3] {
    [v * v, v, 1]
}

/// Start index of every grid line running along `axis`.
fn line_starts(v: usize, axis: usize) -> Vec<usize> {
    let s = strides(v);
    let (a, b) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let mut out = Vec::with_capacity(v * v);
    for i in 0..v {
        for j in 0..v {
            out.push(i * s[a] + j * s[b]);
        }
    }
    out
}

fn convolve_axis(values: &[Point3], v: usize, axis: usize, w: &[f64], adjoint: bool) -> Vec<Point3> {
    let stride = strides(v)[axis];
    let r = (w.len() / 2) as isize;
    let starts = line_starts(v, axis);
    let lines: Vec<Vec<Point3>> = starts
        .par_iter()
        .with_min_len(64)
        .map(|&start| {
            let line: Vec<Point3> = (0..v).map(|i| values[start + i * stride]).collect();
            let mut out = vec![Point3::zeros(); v];
            for n in 0..v as isize {
                for (t, &wt) in w.iter().enumerate() {
                    let m = (n + t as isize - r).clamp(0, v as isize - 1) as usize;
                    if adjoint {
                        out[m] += line[n as usize] * wt;
                    } else {
                        out[n as usize] += line[m] * wt;
                    }
                }
            }
            out
        })
        .collect();
    let mut result = vec![Point3::zeros(); values.len()];
    for (start, line) in starts.iter().zip(lines) {
        for (i, p) in line.into_iter().enumerate() {
            result[start + i * stride] = p;
        }
    }
    result
}

/// Separable Gaussian smoothing of every vector component with replicate padding.
pub fn gaussian_smooth(field: &GridField, kernel: &SmoothingKernel) -> Result<GridField> {
    kernel.validate()?;
    let v = field.nodes_per_axis();
    if kernel.size > 2 * v - 1 {
        return Err(Error::invalid(format!(
            "kernel of size {} exceeds grid of {v} nodes (max {})",
            kernel.size,
            2 * v - 1
        )));
    }
    let w = kernel.weights();
    let mut vals = field.values().to_vec();
    for axis in 0..3 {
        vals = convolve_axis(&vals, v, axis, &w, false);
    }
    Ok(GridField::from_values_unchecked(v, vals))
}

/// Transpose of [`gaussian_smooth`]. Differs from smoothing only near the
/// boundary, where replicate padding breaks symmetry.
pub fn gaussian_smooth_adjoint(grad: &GridField, kernel: &SmoothingKernel) -> Result<GridField> {
    kernel.validate()?;
    let v = grad.nodes_per_axis();
    if kernel.size > 2 * v - 1 {
        return Err(Error::invalid("kernel larger than grid"));
    }
    let w = kernel.weights();
    let mut vals = grad.values().to_vec();
    for axis in (0..3).rev() {
        vals = convolve_axis(&vals, v, axis, &w, true);
    }
    Ok(GridField::from_values_unchecked(v, vals))
}

pub fn invert_velocity(v: &GridField) -> GridField {
    v.scaled(-1.0)
}

fn node_positions(v: usize) -> Vec<Point3> {
    let mut out = Vec::with_capacity(v.pow(3));
    for i in 0..v {
        for j in 0..v {
            for k in 0..v {
                out.push(node_position(v, i, j, k));
            }
        }
    }
    out
}

fn squaring_step(u: &GridField, nodes: &[Point3]) -> GridField {
    let vals: Vec<Point3> = u
        .values()
        .par_iter()
        .zip(nodes.par_iter())
        .with_min_len(512)
        .map(|(d, x)| d + trilinear_sample(u, &(x + d)))
        .collect();
    GridField::from_values_unchecked(u.nodes_per_axis(), vals)
}

/// Scaling and squaring: `u = v / 2^T`, then `T` self-compositions
/// `u <- u + u o (id + u)`.
pub fn exponentiate(v: &GridField, squaring_steps: u32) -> Deformation {
    exponentiate_taped(v, squaring_steps, Direction::Forward).0
}

/// Intermediate displacement fields of one exponentiation, kept for the
/// reverse pass.
#[derive(Debug, Clone)]
pub struct ExpTape {
    squaring_steps: u32,
    /// Input of each squaring step, `u_0 .. u_{T-1}`.
    inputs: Vec<GridField>,
}

/// Like [`exponentiate`], additionally returning the tape for [`ExpTape::backward`].
pub fn exponentiate_taped(v: &GridField, squaring_steps: u32, direction: Direction) -> (Deformation, ExpTape) {
    let n = v.nodes_per_axis();
    let nodes = node_positions(n);
    let mut u = v.scaled(0.5f64.powi(squaring_steps as i32));
    let mut inputs = Vec::with_capacity(squaring_steps as usize);
    for _ in 0..squaring_steps {
        let next = squaring_step(&u, &nodes);
        inputs.push(std::mem::replace(&mut u, next));
    }
    (
        Deformation {
            displacement: u,
            direction,
            squaring_steps,
        },
        ExpTape {
            squaring_steps,
            inputs,
        },
    )
}

impl ExpTape {
    /// Pulls a gradient on the final displacement back to the velocity field.
    pub fn backward(&self, grad_displacement: &GridField) -> GridField {
        let n = grad_displacement.nodes_per_axis();
        let nodes = node_positions(n);
        let mut g = grad_displacement.values().to_vec();
        for u in self.inputs.iter().rev() {
            // position term: (d/dq interp(u, q))^T g, local to each node
            let local: Vec<Point3> = g
                .par_iter()
                .zip(u.values().par_iter().zip(nodes.par_iter()))
                .with_min_len(512)
                .map(|(gp, (d, x))| {
                    let st = Stencil::locate(n, &(x + d));
                    let mut acc = Point3::zeros();
                    for (c, dw) in st.corner_gradients(n) {
                        acc += dw * u.values()[c].dot(gp);
                    }
                    gp + acc
                })
                .collect();
            // value term: scatter g through the interpolation weights
            let mut next = local;
            for ((gp, d), x) in g.iter().zip(u.values()).zip(&nodes) {
                let st = Stencil::locate(n, &(x + d));
                for (c, w) in st.corners(n) {
                    next[c] += gp * w;
                }
            }
            g = next;
        }
        let scale = 0.5f64.powi(self.squaring_steps as i32);
        GridField::from_values_unchecked(n, g.into_iter().map(|p| p * scale).collect())
    }
}

/// `p -> p + u(p)` for every point; weights are carried over.
pub fn warp_points(d: &Deformation, cloud: &PointCloud) -> PointCloud {
    cloud.with_points(warp_positions(&d.displacement, cloud.points()))
}

pub(crate) fn warp_positions(u: &GridField, pts: &[Point3]) -> Vec<Point3> {
    pts.par_iter().with_min_len(512).map(|p| p + trilinear_sample(u, p)).collect()
}

/// Gradient of a loss w.r.t. the displacement grid, given its gradient w.r.t.
/// the warped positions of `pts`.
pub fn warp_points_adjoint(v: usize, pts: &[Point3], grad_warped: &[Point3]) -> GridField {
    let mut g = vec![Point3::zeros(); v.pow(3)];
    for (p, gp) in pts.iter().zip(grad_warped) {
        for (c, w) in Stencil::locate(v, p).corners(v) {
            g[c] += gp * w;
        }
    }
    GridField::from_values_unchecked(v, g)
}

/// Warps vertex positions; faces are untouched.
pub fn warp_mesh(d: &Deformation, mesh: &TriMesh) -> Result<TriMesh> {
    mesh.with_vertices(warp_positions(&d.displacement, mesh.vertices()))
}

/// `det(I + du/dp)` at every node (central differences, one-sided at the border).
pub fn jacobian_determinant(d: &Deformation) -> Result<Vec<f64>> {
    let u = &d.displacement;
    let n = u.nodes_per_axis();
    if n < 3 {
        return Err(Error::invalid("jacobian needs at least 3 nodes per axis"));
    }
    let h = u.spacing();
    let idx: Vec<(usize, usize, usize)> = (0..n)
        .flat_map(|i| (0..n).flat_map(move |j| (0..n).map(move |k| (i, j, k))))
        .collect();
    let diff = |lo: usize, hi: usize, at: &dyn Fn(usize) -> Point3| -> Point3 {
        (at(hi) - at(lo)) / ((hi - lo) as f64 * h)
    };
    Ok(idx
        .par_iter()
        .map(|&(i, j, k)| {
            let span = |c: usize| (c.saturating_sub(1), (c + 1).min(n - 1));
            let (a, b) = span(i);
            let dx = diff(a, b, &|t| u.at(t, j, k));
            let (a, b) = span(j);
            let dy = diff(a, b, &|t| u.at(i, t, k));
            let (a, b) = span(k);
            let dz = diff(a, b, &|t| u.at(i, j, t));
            let mut jac = nalgebra::Matrix3::from_columns(&[dx, dy, dz]);
            jac += nalgebra::Matrix3::identity();
            jac.determinant()
        })
        .collect())
}

/// Reference integrator: `steps` forward-Euler steps of size `1/steps`
/// through the trilinearly interpolated velocity field.
pub fn euler_flow_oracle(v: &GridField, cloud: &PointCloud, steps: usize) -> Result<PointCloud> {
    if steps == 0 {
        return Err(Error::invalid("euler integration needs at least one step"));
    }
    let dt = 1.0 / steps as f64;
    let pts = cloud
        .points()
        .par_iter()
        .map(|p| {
            let mut q = *p;
            for _ in 0..steps {
                q += trilinear_sample(v, &q) * dt;
            }
            q
        })
        .collect();
    Ok(cloud.with_points(pts))
}
