// The file-based pipeline the `svfreg` binary runs: register a few shapes
// against a template, build a model from the saved velocity fields, then
// evaluate and sample it. Outputs go to a temporary directory.
//
// cargo run --release --example cli_pipeline

use svfreg::cli::{cmd_build_pdm, cmd_evaluate, cmd_register, cmd_sample, EvalMode, EvaluateInputs, RunConfig};
use svfreg::meshio::save_mesh;
use svfreg::synthetic::ModeFamily;
use svfreg::RngSeed;

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let family = ModeFamily::new(2, 0.5, [0.08, 0.05, 0.03]).unwrap();
    let template = root.join("template.obj");
    save_mesh(&family.template, &template).unwrap();

    let cfg = RunConfig {
        grid_size: 8,
        kernel_size: 3,
        kernel_sigma: 0.7,
        normalize: false,
        icp_iterations: 0,
        adam: svfreg::optim::AdamConfig {
            max_iterations: 100,
            ..Default::default()
        },
        ..RunConfig::default()
    };
    println!("config:\n{}", cfg.to_json());

    let runs = root.join("runs");
    for (i, (_, member)) in family.sample(5, RngSeed(2)).unwrap().iter().enumerate() {
        let shape = root.join(format!("shape_{i}.obj"));
        save_mesh(member, &shape).unwrap();
        let out = cmd_register(&template, &shape, &cfg, &runs.join(format!("shape_{i}"))).unwrap();
        println!(
            "shape_{i}: objective {:.3e} -> {:.3e}, Jacobian [{:.3}, {:.3}]",
            out.result.initial_objective(),
            out.result.final_objective(),
            out.jacobian.min,
            out.jacobian.max
        );
    }

    let model_path = root.join("model.pdm");
    let model = cmd_build_pdm(&runs, 3, 2, &model_path).unwrap();
    println!("model: {} components, eigenvalues {:?}", model.n_components(), model.eigenvalues);

    let inputs = EvaluateInputs {
        model: Some(model_path.clone()),
        ..Default::default()
    };
    let report = cmd_evaluate(EvalMode::Compactness, &inputs, &root.join("compactness")).unwrap();
    println!("compactness curve {:.2?}", report.curve.unwrap());

    let written = cmd_sample(&model_path, 2, 3, 7, &template, &root.join("samples"), 7).unwrap();
    println!("sampled {} shapes:", written.len());
    for p in &written {
        println!("  {}", p.file_name().unwrap().to_string_lossy());
    }
}
