use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use svfreg::cli::{cmd_build_pdm, cmd_evaluate, cmd_register, cmd_sample, configure_threads, EvalMode, EvaluateInputs, RunConfig};
use svfreg::loss::LossKind;
use svfreg::Result;

#[derive(Parser)]
#[command(name = "svfreg", version, about = "Diffeomorphic surface registration and tangent-PCA deformation models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags that override the matching config fields.
#[derive(clap::Args)]
struct Overrides {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long)]
    grid_size: Option<usize>,
    #[arg(long)]
    squaring_steps: Option<u32>,
}

impl Overrides {
    fn resolve(&self, n_samples: Option<usize>) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(loss) = self.loss {
            cfg.loss = loss;
        }
        cfg.seed = self.seed.unwrap_or(cfg.seed);
        cfg.grid_size = self.grid_size.unwrap_or(cfg.grid_size);
        cfg.squaring_steps = self.squaring_steps.unwrap_or(cfg.squaring_steps);
        cfg.n_samples = n_samples.unwrap_or(cfg.n_samples);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Prealign two meshes and register moving onto fixed.
    Register {
        #[arg(long)]
        moving: PathBuf,
        #[arg(long)]
        fixed: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_samples: Option<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Fit a tangent-PCA model to a directory of velocity fields.
    BuildPdm {
        /// Directory of .svf files or of register output directories.
        #[arg(long)]
        fields: PathBuf,
        #[arg(long)]
        components: usize,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute a fit, compactness, generalisability or specificity report.
    Evaluate {
        #[arg(long)]
        mode: EvalMode,
        #[arg(long)]
        moving: Option<PathBuf>,
        #[arg(long)]
        fixed: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        template: Option<PathBuf>,
        /// Directory of meshes.
        #[arg(long)]
        shapes: Option<PathBuf>,
        #[arg(long)]
        components: Option<usize>,
        #[arg(long)]
        n_samples: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Warp a template with deformations drawn from a model.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        components: usize,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        template: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = svfreg::deform::DEFAULT_SQUARING_STEPS)]
        squaring_steps: u32,
    },
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Register { moving, fixed, out, n_samples, overrides } => {
            let cfg = overrides.resolve(n_samples)?;
            let o = cmd_register(&moving, &fixed, &cfg, &out)?;
            let r = &o.result;
            println!(
                "objective {:.6e} -> {:.6e} over {} iterations (converged: {}); jacobian min {:.4} max {:.4}",
                r.initial_objective(),
                r.final_objective(),
                r.objective_trace.len() - 1,
                r.converged,
                o.jacobian.min,
                o.jacobian.max
            );
        }
        Command::BuildPdm { fields, components, batch_size, out } => {
            let m = cmd_build_pdm(&fields, components, batch_size, &out)?;
            println!("model with {} components from {} fields written to {}", m.n_components(), m.n_samples, out.display());
        }
        Command::Evaluate { mode, moving, fixed, model, template, shapes, components, n_samples, out, overrides } => {
            let inputs = EvaluateInputs {
                moving,
                fixed,
                model,
                template,
                shapes,
                components,
                n_samples,
                config: overrides.resolve(None)?,
            };
            let r = cmd_evaluate(mode, &inputs, &out)?;
            println!("median {:.6e} mean {:.6e} std {:.6e} over {} values", r.median, r.mean, r.std, r.values.len());
        }
        Command::Sample { model, components, count, seed, template, out, squaring_steps } => {
            let written = cmd_sample(&model, components, count, seed, &template, &out, squaring_steps)?;
            println!("wrote {} meshes to {}", written.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
