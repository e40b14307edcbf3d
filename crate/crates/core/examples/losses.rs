// The three data losses on small clouds, with the Sinkhorn divergence
// checked against exact optimal transport.
//
// cargo run --release --example losses

use rand::Rng;
use svfreg::loss::{chamfer, exact_ot, mse, sinkhorn_divergence, SinkhornConfig};
use svfreg::{Point3, PointCloud, RngSeed};

fn cloud(n: usize, rng: &mut impl Rng, shift: f64) -> PointCloud {
    PointCloud::new((0..n).map(|_| Point3::new(rng.random::<f64>() + shift, rng.random(), rng.random())).collect()).unwrap()
}

fn main() {
    let mut rng = RngSeed(5).rng();
    let x = cloud(6, &mut rng, 0.0);
    let y = cloud(6, &mut rng, 0.3);

    println!("MSE (index-matched)  {:.6}", mse(&x, &y).unwrap());
    println!("Chamfer              {:.6}", chamfer(&x, &y).unwrap());

    let cfg = SinkhornConfig::default();
    let sd = sinkhorn_divergence(&x, &y, &cfg).unwrap();
    let ot = exact_ot(&x, &y, cfg.p).unwrap();
    println!("Sinkhorn (eps {:e}) {:.6}   exact OT {:.6}   rel. gap {:.1e}", cfg.epsilon, sd.value, ot, ((sd.value - ot) / ot).abs());
    println!("Sinkhorn of a cloud with itself: {:.1e}", sinkhorn_divergence(&x, &x, &cfg).unwrap().value);

    // larger epsilon blurs the transport plan and shrinks the divergence
    for eps in [1e-3, 1e-2, 1e-1, 1.0] {
        let c = SinkhornConfig { epsilon: eps, ..cfg };
        println!("  eps {eps:>6}: {:.6}", sinkhorn_divergence(&x, &y, &c).unwrap().value);
    }
}
