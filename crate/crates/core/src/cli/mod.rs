//! Command implementations behind the `svfreg` binary. Each command reads
//! its inputs, runs the library pipeline and writes its outputs into a
//! directory; all randomness comes from the configured seed.

mod config;
mod files;

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

pub use config::RunConfig;
pub use files::{decode_field, decode_model, encode_field, encode_model, load_field, load_model, quantize_field, save_field, save_model, write_csv, write_json};

use crate::deform::{exponentiate, jacobian_determinant, warp_mesh};
use crate::error::{Error, Result};
use crate::eval::{compactness, fit_rmse_3nn, generalisability, specificity, MetricReport};
use crate::geom::{Deformation, PointCloud, RngSeed, TriMesh};
use crate::loss::LossKind;
use crate::meshio::{cloud_from_indices, crop_to_template, load_mesh, normalize_to_cube, sample_surface, sample_vertices, save_mesh, similarity_icp};
use crate::optim::{register, RegistrationResult};
use crate::pdm::{explained_variance_curve, sample_pdm_with_rng, IncrementalPca, PdmModel};

/// Version stamped into every JSON report.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JacobianSummary {
    pub schema_version: u32,
    pub min: f64,
    pub max: f64,
    pub median: f64,
    /// Grid nodes with determinant at or below zero.
    pub nonpositive: usize,
    pub nodes: usize,
}

impl JacobianSummary {
    pub fn of(d: &Deformation) -> Result<Self> {
        let mut det = jacobian_determinant(d)?;
        det.sort_by(f64::total_cmp);
        let n = det.len();
        let median = if n % 2 == 1 { det[n / 2] } else { 0.5 * (det[n / 2 - 1] + det[n / 2]) };
        Ok(JacobianSummary {
            schema_version: SCHEMA_VERSION,
            min: det[0],
            max: det[n - 1],
            median,
            nonpositive: det.iter().filter(|&&x| x <= 0.0).count(),
            nodes: n,
        })
    }
}

/// What `cmd_register` leaves behind besides its files.
#[derive(Debug, Clone)]
pub struct RegisterOutcome {
    /// Registration result with all fields rounded to their stored precision.
    pub result: RegistrationResult,
    pub moving: TriMesh,
    pub fixed: TriMesh,
    pub warped: TriMesh,
    pub jacobian: JacobianSummary,
}

/// Moving mesh unchanged apart from cube normalisation; the fixed mesh is
/// normalised, aligned onto it and optionally cropped. Keeping the moving
/// mesh fixed means every registration against one template shares a frame.
pub fn prealign(moving: &TriMesh, fixed: &TriMesh, cfg: &RunConfig) -> Result<(TriMesh, TriMesh)> {
    let (mut m, mut f) = (moving.clone(), fixed.clone());
    if cfg.normalize {
        m = normalize_to_cube(&m)?.0;
        f = normalize_to_cube(&f)?.0;
    }
    if cfg.icp_iterations > 0 {
        let icp = similarity_icp(&f, &m, cfg.icp_iterations, RngSeed(cfg.seed))?;
        f = icp.transform.apply_mesh(&f)?;
    }
    if cfg.crop_to_template {
        f = crop_to_template(&f, &m)?;
    }
    Ok((m, f))
}

/// Point clouds the objective is evaluated on. MSE draws one set of vertex
/// indices for both meshes; the other losses sample each surface.
pub fn registration_clouds(moving: &TriMesh, fixed: &TriMesh, cfg: &RunConfig) -> Result<(PointCloud, PointCloud)> {
    let seed = RngSeed(cfg.seed);
    match cfg.loss {
        LossKind::Mse => {
            if moving.vertices().len() != fixed.vertices().len() {
                return Err(Error::SizeMismatch {
                    expected: moving.vertices().len(),
                    found: fixed.vertices().len(),
                });
            }
            let n = cfg.n_samples.min(moving.vertices().len());
            let (x, idx) = sample_vertices(moving, n, seed)?;
            Ok((x, cloud_from_indices(fixed, &idx)?))
        }
        LossKind::Chamfer | LossKind::Sinkhorn => Ok((
            sample_surface(moving, cfg.n_samples, seed)?,
            sample_surface(fixed, cfg.n_samples, RngSeed(cfg.seed.wrapping_add(1)))?,
        )),
    }
}

/// Prealigns, registers and writes into `out_dir`: `moving_prealigned.obj`,
/// `fixed_prealigned.obj`, `v_raw.svf`, `velocity.svf` (smoothed),
/// `forward.svf`, `inverse.svf` (displacements), `warped.obj`, `trace.csv`
/// and `jacobian.json`. Everything downstream of the optimizer uses the
/// f32-rounded fields, so reloading the files reproduces the outputs.
pub fn cmd_register(moving_path: &Path, fixed_path: &Path, cfg: &RunConfig, out_dir: &Path) -> Result<RegisterOutcome> {
    cfg.validate()?;
    let reg_cfg = cfg.registration()?;
    let (moving, fixed) = prealign(&load_mesh(moving_path)?, &load_mesh(fixed_path)?, cfg)?;
    let (x, y) = registration_clouds(&moving, &fixed, cfg)?;
    let r = register(&x, &y, &reg_cfg)?;

    let result = RegistrationResult {
        v_raw: quantize_field(&r.v_raw),
        v_smoothed: quantize_field(&r.v_smoothed),
        forward: Deformation {
            displacement: quantize_field(&r.forward.displacement),
            ..r.forward
        },
        inverse: Deformation {
            displacement: quantize_field(&r.inverse.displacement),
            ..r.inverse
        },
        ..r
    };
    let warped = warp_mesh(&result.forward, &moving)?;
    let jacobian = JacobianSummary::of(&result.forward)?;

    create_dir(out_dir)?;
    save_mesh(&moving, out_dir.join("moving_prealigned.obj"))?;
    save_mesh(&fixed, out_dir.join("fixed_prealigned.obj"))?;
    for (name, field) in [
        ("v_raw.svf", &result.v_raw),
        ("velocity.svf", &result.v_smoothed),
        ("forward.svf", &result.forward.displacement),
        ("inverse.svf", &result.inverse.displacement),
    ] {
        let path = out_dir.join(name);
        save_field(field, &path)?;
        if load_field(&path)? != *field {
            return Err(Error::Format(format!("{} did not read back identically", path.display())));
        }
    }
    save_mesh(&warped, out_dir.join("warped.obj"))?;
    write_csv(
        out_dir.join("trace.csv"),
        &["iteration", "total", "data", "smooth", "vert", "loss_forward", "loss_inverse", "vert_forward", "vert_inverse"],
        result.objective_trace.iter().map(|e| {
            let t = &e.terms;
            let mut row = vec![e.iteration.to_string()];
            row.extend([t.total, t.data, t.smooth, t.vert, t.loss_forward, t.loss_inverse, t.vert_forward, t.vert_inverse].map(|v| v.to_string()));
            row
        }),
    )?;
    write_json(out_dir.join("jacobian.json"), &jacobian)?;
    Ok(RegisterOutcome {
        result,
        moving,
        fixed,
        warped,
        jacobian,
    })
}

/// Field files in `dir`: every `*.svf` directly inside it, plus the
/// `velocity.svf` of every subdirectory (a `cmd_register` output). Sorted by path.
pub fn collect_fields(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in sorted_entries(dir)? {
        if entry.is_dir() {
            let v = entry.join("velocity.svf");
            if v.is_file() {
                out.push(v);
            }
        } else if has_extension(&entry, &["svf"]) {
            out.push(entry);
        }
    }
    Ok(out)
}

/// Fits a `k`-component model to the fields found by [`collect_fields`],
/// reading `batch` files at a time. Writes the model to `out_path` and the
/// explained variance to `<stem>_variance.csv` beside it.
pub fn cmd_build_pdm(fields_dir: &Path, k: usize, batch: usize, out_path: &Path) -> Result<PdmModel> {
    if batch == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let paths = collect_fields(fields_dir)?;
    if paths.len() < 2 {
        return Err(Error::invalid(format!("{} holds {} field files, need at least 2", fields_dir.display(), paths.len())));
    }
    let mut pca = IncrementalPca::new();
    for chunk in paths.chunks(batch) {
        let fields = chunk.iter().map(load_field).collect::<Result<Vec<_>>>()?;
        pca.partial_fit(&fields)?;
    }
    let model = pca.finish(k)?;
    if let Some(parent) = out_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_model(&model, out_path)?;
    if load_model(out_path)? != model {
        return Err(Error::Format(format!("{} did not read back identically", out_path.display())));
    }
    let curve = explained_variance_curve(&model).unwrap_or_else(|_| vec![0.0; model.n_components()]);
    write_csv(
        variance_csv_path(out_path),
        &["component", "eigenvalue", "explained_percent", "cumulative_percent"],
        model.eigenvalues.iter().zip(&curve).enumerate().map(|(i, (e, c))| {
            let share = if model.total_variance > 0.0 { 100.0 * e / model.total_variance } else { 0.0 };
            vec![(i + 1).to_string(), e.to_string(), share.to_string(), c.to_string()]
        }),
    )?;
    Ok(model)
}

pub fn variance_csv_path(model_path: &Path) -> PathBuf {
    let stem = model_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into());
    model_path.with_file_name(format!("{stem}_variance.csv"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Fit,
    Compactness,
    Generalisability,
    Specificity,
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fit" => Ok(EvalMode::Fit),
            "compactness" => Ok(EvalMode::Compactness),
            "generalisability" | "generalizability" => Ok(EvalMode::Generalisability),
            "specificity" => Ok(EvalMode::Specificity),
            other => Err(Error::Config(format!("unknown evaluation mode '{other}'"))),
        }
    }
}

/// Inputs of `cmd_evaluate`; which ones are needed depends on the mode.
///
/// | mode | needs |
/// |---|---|
/// | fit | `moving` (warped) and `fixed`: two meshes, or two directories paired by sorted name |
/// | compactness | `model` (its explained variance), or `shapes` (corresponded meshes) |
/// | generalisability | `model`, `template`, `shapes` (test meshes corresponded to the template) |
/// | specificity | `model`, `template`, `shapes` (training meshes) |
#[derive(Debug, Clone, Default)]
pub struct EvaluateInputs {
    pub moving: Option<PathBuf>,
    pub fixed: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub template: Option<PathBuf>,
    pub shapes: Option<PathBuf>,
    /// Largest component count evaluated. Defaults to all the data supports.
    pub components: Option<usize>,
    /// Specificity: number of generated shapes (default 100).
    /// Generalisability: points per registration, overriding the config.
    pub n_samples: Option<usize>,
    pub config: RunConfig,
}

#[derive(Debug, Clone, Serialize)]
struct EvaluationFile<'a> {
    schema_version: u32,
    mode: EvalMode,
    labels: &'a [String],
    report: &'a MetricReport,
}

/// Computes the metric and writes `report.json`, `samples.csv` and, for
/// curve metrics, `curve.csv` into `out_dir`.
pub fn cmd_evaluate(mode: EvalMode, inputs: &EvaluateInputs, out_dir: &Path) -> Result<MetricReport> {
    let cfg = &inputs.config;
    let need = |p: &Option<PathBuf>, what: &str| p.clone().ok_or_else(|| Error::invalid(format!("{mode:?} evaluation needs --{what}")));
    let (labels, report): (Vec<String>, MetricReport) = match mode {
        EvalMode::Fit => {
            let (a, b) = (need(&inputs.moving, "moving")?, need(&inputs.fixed, "fixed")?);
            let pairs = if a.is_dir() && b.is_dir() {
                let (ma, mb) = (mesh_files(&a)?, mesh_files(&b)?);
                if ma.len() != mb.len() || ma.is_empty() {
                    return Err(Error::invalid(format!("fit needs equally many meshes in both directories, found {} and {}", ma.len(), mb.len())));
                }
                ma.into_iter().zip(mb).collect()
            } else {
                vec![(a, b)]
            };
            let values = pairs
                .iter()
                .map(|(w, f)| fit_rmse_3nn(&load_mesh(w)?, &load_mesh(f)?))
                .collect::<Result<Vec<_>>>()?;
            (pairs.iter().map(|(w, _)| file_label(w)).collect(), MetricReport::from_values(values)?)
        }
        EvalMode::Compactness if inputs.model.is_some() => {
            let model = load_model(need(&inputs.model, "model")?)?;
            let k = inputs.components.unwrap_or(model.n_components()).min(model.n_components());
            let curve = explained_variance_curve(&model)?;
            let r = MetricReport::from_values(model.eigenvalues[..k].to_vec())?.with_curve((1..=k).zip(curve).collect());
            ((1..=k).map(|k| format!("component_{k}")).collect(), r)
        }
        EvalMode::Compactness => {
            let files = mesh_files(&need(&inputs.shapes, "shapes")?)?;
            let shapes = files.iter().map(|p| Ok(load_mesh(p)?.vertices().to_vec())).collect::<Result<Vec<_>>>()?;
            let max_k = inputs.components.unwrap_or(shapes.len().saturating_sub(1));
            let r = compactness(&shapes, max_k)?;
            ((1..=r.values.len()).map(|k| format!("component_{k}")).collect(), r)
        }
        EvalMode::Generalisability => {
            let model = load_model(need(&inputs.model, "model")?)?;
            let template = load_mesh(need(&inputs.template, "template")?)?;
            let files = mesh_files(&need(&inputs.shapes, "shapes")?)?;
            let max_k = inputs.components.unwrap_or(model.n_components());
            if max_k > model.n_components() {
                return Err(Error::invalid(format!("requested {max_k} components, model has {}", model.n_components())));
            }
            let mut run = cfg.clone();
            if let Some(n) = inputs.n_samples {
                run.n_samples = n;
            }
            let n = run.n_samples.min(template.vertices().len());
            let (x, idx) = sample_vertices(&template, n, RngSeed(run.seed))?;
            let pairs = files
                .iter()
                .map(|p| Ok((x.clone(), cloud_from_indices(&load_mesh(p)?, &idx)?)))
                .collect::<Result<Vec<_>>>()?;
            let ks: Vec<usize> = (0..=max_k).collect();
            let r = generalisability(&model, &pairs, &ks, &run.registration()?)?;
            (files.iter().map(|p| file_label(p)).collect(), r)
        }
        EvalMode::Specificity => {
            let model = load_model(need(&inputs.model, "model")?)?;
            let template = load_mesh(need(&inputs.template, "template")?)?;
            let training = mesh_files(&need(&inputs.shapes, "shapes")?)?.iter().map(load_mesh).collect::<Result<Vec<_>>>()?;
            let k = inputs.components.unwrap_or(model.n_components());
            let n = inputs.n_samples.unwrap_or(100);
            let r = specificity(&model, &training, &template, k, n, cfg.squaring_steps, RngSeed(cfg.seed))?;
            ((0..n).map(|i| format!("sample_{i:03}")).collect(), r)
        }
    };
    create_dir(out_dir)?;
    write_json(
        out_dir.join("report.json"),
        &EvaluationFile {
            schema_version: SCHEMA_VERSION,
            mode,
            labels: &labels,
            report: &report,
        },
    )?;
    write_csv(
        out_dir.join("samples.csv"),
        &["index", "label", "value"],
        report.values.iter().zip(&labels).enumerate().map(|(i, (v, l))| vec![i.to_string(), l.clone(), v.to_string()]),
    )?;
    if let Some(curve) = &report.curve {
        write_csv(out_dir.join("curve.csv"), &["k", "value"], curve.iter().map(|(k, v)| vec![k.to_string(), v.to_string()]))?;
    }
    Ok(report)
}

/// Writes `count` shapes drawn from the first `k` components, as
/// `sample_000.obj`, `sample_001.obj`, ... Returns the written paths.
pub fn cmd_sample(model_path: &Path, k: usize, count: usize, seed: u64, template_path: &Path, out_dir: &Path, squaring_steps: u32) -> Result<Vec<PathBuf>> {
    let model = load_model(model_path)?;
    if k > model.n_components() {
        return Err(Error::invalid(format!("requested {k} components, model has {}", model.n_components())));
    }
    let template = load_mesh(template_path)?;
    create_dir(out_dir)?;
    let mut rng = RngSeed(seed).rng();
    let mut written = Vec::with_capacity(count);
    for i in 0..count {
        let v = sample_pdm_with_rng(&model, k, &mut rng)?;
        let phi = exponentiate(&v, squaring_steps);
        let path = out_dir.join(format!("sample_{i:03}.obj"));
        save_mesh(&warp_mesh(&phi, &template)?, &path)?;
        written.push(path);
    }
    Ok(written)
}

/// Sets the size of the global worker pool from `SVFREG_THREADS`
/// (unset or 0 means one worker per core).
pub fn configure_threads() -> Result<()> {
    let n = match std::env::var("SVFREG_THREADS") {
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("SVFREG_THREADS must be a nonnegative integer, got '{s}'")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot configure worker pool: {e}")))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

fn has_extension(p: &Path, exts: &[&str]) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| exts.iter().any(|x| e.eq_ignore_ascii_case(x)))
}

/// OBJ and PLY files directly inside `dir`, sorted by name.
pub fn mesh_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let files: Vec<PathBuf> = sorted_entries(dir)?
        .into_iter()
        .filter(|p| p.is_file() && has_extension(p, &["obj", "ply"]))
        .collect();
    if files.is_empty() {
        return Err(Error::invalid(format!("no .obj or .ply meshes in {}", dir.display())));
    }
    Ok(files)
}

fn file_label(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}
