// Shape-model metrics on a small synthetic family: fit, compactness,
// generalisability and specificity.
//
// cargo run --release --example evaluate

use svfreg::deform::SmoothingKernel;
use svfreg::eval::{compactness, fit_rmse_3nn, generalisability_from_fields, specificity};
use svfreg::loss::LossKind;
use svfreg::optim::{register, RegistrationConfig};
use svfreg::pdm::fit_pdm;
use svfreg::synthetic::ModeFamily;
use svfreg::RngSeed;

fn main() {
    let family = ModeFamily::new(2, 0.5, [0.08, 0.05, 0.03]).unwrap();
    let members: Vec<_> = family.sample(12, RngSeed(1)).unwrap().into_iter().map(|(_, m)| m).collect();
    let (train, test) = members.split_at(9);

    let shapes: Vec<_> = train.iter().map(|m| m.vertices().to_vec()).collect();
    let c = compactness(&shapes, 4).unwrap();
    println!("shape compactness (cumulative %): {:.2?}", c.curve.unwrap());
    println!("3-NN fit RMSE template -> first member: {:.4}", fit_rmse_3nn(&family.template, &train[0]).unwrap());

    let mut cfg = RegistrationConfig::for_loss(LossKind::Mse);
    cfg.grid_size = 8;
    cfg.objective.kernel = SmoothingKernel::new(3, 0.7).unwrap();
    cfg.adam.max_iterations = 150;
    let x = family.template.vertex_cloud().unwrap();
    let fields: Vec<_> = train.iter().map(|m| register(&x, &m.vertex_cloud().unwrap(), &cfg).unwrap().v_smoothed).collect();
    let model = fit_pdm(fields, 4, 3).unwrap();
    println!("velocity model eigenvalues {:?}", model.eigenvalues);

    let pairs: Vec<_> = test
        .iter()
        .map(|m| {
            let y = m.vertex_cloud().unwrap();
            let v = register(&x, &y, &cfg).unwrap().v_smoothed;
            (x.clone(), y, v)
        })
        .collect();
    let ks = [0, 1, 2, 3, 4];
    let per_pair = generalisability_from_fields(&model, &pairs, &ks, cfg.objective.squaring_steps).unwrap();
    for (j, k) in ks.iter().enumerate() {
        let mean = per_pair.iter().map(|r| r[j]).sum::<f64>() / per_pair.len() as f64;
        println!("generalisability k={k}: mean RMSE {mean:.5}");
    }

    let s = specificity(&model, train, &family.template, 3, 20, cfg.objective.squaring_steps, RngSeed(4)).unwrap();
    println!("specificity (k=3, 20 draws): mean {:.5}, std {:.5}", s.mean, s.std);
}
