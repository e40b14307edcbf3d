//! Tangent-space PCA over velocity fields, fitted incrementally.
//!
//! Each batch update takes the thin SVD of the stacked matrix
//! `[S * components; centred batch; sqrt(n m / (n + m)) * (mean_old - mean_batch)]`.
//! Every nonzero direction is kept until [`IncrementalPca::finish`], which makes
//! the result equal to full-batch PCA up to rounding whatever the batch sizes.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geom::{GridField, RngSeed};

/// Mean field, orthonormal principal directions and their variances.
#[derive(Debug, Clone, PartialEq)]
pub struct PdmModel {
    pub grid_size: usize,
    /// Flattened mean field, length `3 V^3` (xyz interleaved per node).
    pub mean: DVector<f64>,
    /// One unit-norm component per column, `3 V^3 x K`, by descending eigenvalue.
    pub components: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub n_samples: u64,
    /// Sample variance summed over all coordinates, retained or not.
    pub total_variance: f64,
}

impl PdmModel {
    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn dimension(&self) -> usize {
        self.mean.len()
    }

    pub fn mean_field(&self) -> Result<GridField> {
        GridField::from_flat(self.grid_size, self.mean.as_slice())
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k > self.n_components() {
            return Err(Error::invalid(format!("requested {k} components, model has {}", self.n_components())));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let d = 3 * self.grid_size.pow(3);
        if self.mean.len() != d || self.components.nrows() != d {
            return Err(Error::SizeMismatch {
                expected: d,
                found: self.mean.len().max(self.components.nrows()),
            });
        }
        if self.components.ncols() != self.eigenvalues.len() {
            return Err(Error::SizeMismatch {
                expected: self.eigenvalues.len(),
                found: self.components.ncols(),
            });
        }
        if self.eigenvalues.iter().any(|e| !(e.is_finite() && *e >= 0.0)) || self.eigenvalues.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Format("eigenvalues must be finite, nonnegative and descending".into()));
        }
        Ok(())
    }
}

/// Streaming PCA state; feed batches with [`IncrementalPca::partial_fit`].
#[derive(Debug, Clone)]
pub struct IncrementalPca {
    grid_size: Option<usize>,
    n_seen: usize,
    mean: DVector<f64>,
    /// Nonzero singular values and right singular vectors (as columns) of the
    /// centred data seen so far.
    singular_values: Vec<f64>,
    basis: DMatrix<f64>,
}

impl Default for IncrementalPca {
    fn default() -> Self {
        Self::new()
    }
}

impl IncrementalPca {
    pub fn new() -> Self {
        IncrementalPca {
            grid_size: None,
            n_seen: 0,
            mean: DVector::zeros(0),
            singular_values: Vec::new(),
            basis: DMatrix::zeros(0, 0),
        }
    }

    pub fn n_seen(&self) -> usize {
        self.n_seen
    }

    pub fn partial_fit(&mut self, batch: &[GridField]) -> Result<()> {
        let Some(first) = batch.first() else {
            return Ok(());
        };
        let v = *self.grid_size.get_or_insert(first.nodes_per_axis());
        if let Some(bad) = batch.iter().find(|f| f.nodes_per_axis() != v) {
            return Err(Error::SizeMismatch {
                expected: v,
                found: bad.nodes_per_axis(),
            });
        }
        let d = 3 * v.pow(3);
        let m = batch.len();
        let rows: Vec<DVector<f64>> = batch.iter().map(|f| DVector::from_vec(f.to_flat())).collect();
        let mut batch_mean = DVector::zeros(d);
        for r in &rows {
            batch_mean += r;
        }
        batch_mean /= m as f64;

        let n = self.n_seen;
        let keep = self.singular_values.len();
        let extra = usize::from(n > 0);
        // rows of the augmented matrix
        let mut a = DMatrix::zeros(keep + m + extra, d);
        for j in 0..keep {
            a.set_row(j, &(self.basis.column(j) * self.singular_values[j]).transpose());
        }
        for (i, r) in rows.iter().enumerate() {
            a.set_row(keep + i, &(r - &batch_mean).transpose());
        }
        if n > 0 {
            let w = ((n * m) as f64 / (n + m) as f64).sqrt();
            a.set_row(keep + m, &((&self.mean - &batch_mean) * w).transpose());
            self.mean = (&self.mean * n as f64 + &batch_mean * m as f64) / (n + m) as f64;
        } else {
            self.mean = batch_mean;
        }
        self.n_seen = n + m;

        let (sv, basis) = right_singular_pairs(&a);
        self.basis = basis;
        self.singular_values = sv;
        Ok(())
    }

    /// Truncates to the leading `k` components.
    pub fn finish(&self, k: usize) -> Result<PdmModel> {
        let v = self.grid_size.ok_or_else(|| Error::invalid("no fields were given"))?;
        if self.n_seen < 2 {
            return Err(Error::invalid(format!("PCA needs at least 2 fields, got {}", self.n_seen)));
        }
        let d = 3 * v.pow(3);
        if k > self.n_seen.min(d) {
            return Err(Error::invalid(format!("cannot keep {k} components from {} fields of dimension {d}", self.n_seen)));
        }
        let denom = (self.n_seen - 1) as f64;
        let total_variance = self.singular_values.iter().map(|s| s * s).sum::<f64>() / denom;
        let rank = self.singular_values.len();
        let components = if k <= rank {
            self.basis.columns(0, k).clone_owned()
        } else {
            // zero-variance directions beyond the data rank
            complete_basis(&self.basis, k)
        };
        let mut eigenvalues: Vec<f64> = self.singular_values.iter().take(k).map(|s| s * s / denom).collect();
        eigenvalues.resize(k, 0.0);
        Ok(PdmModel {
            grid_size: v,
            mean: self.mean.clone(),
            components,
            eigenvalues,
            n_samples: self.n_seen as u64,
            total_variance,
        })
    }
}

/// Nonzero singular values of `a` (descending) and the matching right
/// singular vectors as columns. Goes through the small Gram matrix
/// `a a^T`, then re-orthonormalizes each direction against the previous ones.
/// Directions whose singular value is below `1e-10` of the largest are dropped.
fn right_singular_pairs(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let d = a.ncols();
    let eig = SymmetricEigen::new(a * a.transpose());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let top = eig.eigenvalues[order[0]].max(0.0).sqrt();
    let mut values = Vec::new();
    let mut dirs: Vec<DVector<f64>> = Vec::new();
    for &i in &order {
        let s = eig.eigenvalues[i].max(0.0).sqrt();
        if s <= 1e-10 * top || s == 0.0 {
            break;
        }
        let mut w = a.tr_mul(&eig.eigenvectors.column(i)) / s;
        // modified Gram-Schmidt, twice
        for _ in 0..2 {
            for q in &dirs {
                let c = q.dot(&w);
                w.axpy(-c, q, 1.0);
            }
        }
        let norm = w.norm();
        if norm < 0.5 {
            break;
        }
        w /= norm;
        // sign convention: largest-magnitude entry positive
        if w[w.iamax()] < 0.0 {
            w.neg_mut();
        }
        values.push(s);
        dirs.push(w);
    }
    let mut basis = DMatrix::zeros(d, dirs.len());
    for (c, w) in dirs.iter().enumerate() {
        basis.set_column(c, w);
    }
    (values, basis)
}

/// Extends orthonormal columns to `k` columns with coordinate directions
/// orthogonalized against the existing ones.
fn complete_basis(basis: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let d = basis.nrows();
    let mut cols: Vec<DVector<f64>> = basis.column_iter().map(|c| c.clone_owned()).collect();
    let mut e = 0;
    while cols.len() < k && e < d {
        let mut w = DVector::zeros(d);
        w[e] = 1.0;
        e += 1;
        for _ in 0..2 {
            for q in &cols {
                let c = q.dot(&w);
                w.axpy(-c, q, 1.0);
            }
        }
        let norm = w.norm();
        if norm > 1e-6 {
            cols.push(w / norm);
        }
    }
    DMatrix::from_columns(&cols)
}

/// Fits a `k`-component model, feeding `fields` in batches of `batch_size`.
pub fn fit_pdm(fields: impl IntoIterator<Item = GridField>, k: usize, batch_size: usize) -> Result<PdmModel> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let mut pca = IncrementalPca::new();
    let mut batch = Vec::with_capacity(batch_size);
    for f in fields {
        batch.push(f);
        if batch.len() == batch_size {
            pca.partial_fit(&batch)?;
            batch.clear();
        }
    }
    pca.partial_fit(&batch)?;
    pca.finish(k)
}

/// Coefficients of `v - mean` on the first `k` components.
pub fn project(model: &PdmModel, v: &GridField, k: usize) -> Result<Vec<f64>> {
    model.check_k(k)?;
    if v.nodes_per_axis() != model.grid_size {
        return Err(Error::SizeMismatch {
            expected: model.grid_size,
            found: v.nodes_per_axis(),
        });
    }
    let centred = DVector::from_vec(v.to_flat()) - &model.mean;
    Ok((0..k).map(|j| model.components.column(j).dot(&centred)).collect())
}

/// `mean + sum_i coeffs[i] * component_i`.
pub fn reconstruct(model: &PdmModel, coeffs: &[f64]) -> Result<GridField> {
    model.check_k(coeffs.len())?;
    let mut flat = model.mean.clone();
    for (j, c) in coeffs.iter().enumerate() {
        flat.axpy(*c, &model.components.column(j), 1.0);
    }
    GridField::from_flat(model.grid_size, flat.as_slice())
}

/// Draws `z_i ~ N(0, eigenvalue_i)` for `i < k` and reconstructs.
pub fn sample_pdm(model: &PdmModel, k: usize, seed: RngSeed) -> Result<GridField> {
    sample_pdm_with_rng(model, k, &mut seed.rng())
}

pub fn sample_pdm_with_rng(model: &PdmModel, k: usize, rng: &mut impl Rng) -> Result<GridField> {
    model.check_k(k)?;
    reconstruct(model, &draw_coefficients(model, k, rng))
}

/// `k` independent `N(0, eigenvalue_i)` draws; `k` must not exceed the model size.
pub(crate) fn draw_coefficients(model: &PdmModel, k: usize, rng: &mut impl Rng) -> Vec<f64> {
    model.eigenvalues[..k]
        .iter()
        .map(|e| {
            let n: f64 = StandardNormal.sample(rng);
            n * e.sqrt()
        })
        .collect()
}

/// Cumulative explained variance in percent; entry `k - 1` covers the first `k` components.
pub fn explained_variance_curve(model: &PdmModel) -> Result<Vec<f64>> {
    if !(model.total_variance > 0.0) {
        return Err(Error::invalid("model has zero total variance"));
    }
    let mut acc = 0.0;
    Ok(model
        .eigenvalues
        .iter()
        .map(|e| {
            acc += e;
            (100.0 * acc / model.total_variance).min(100.0)
        })
        .collect())
}
