//! Invariants of the public API checked on generated inputs.

mod common;

use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3, Vector3};
use proptest::prelude::*;
use svfreg::cli::{decode_field, decode_model, encode_field, encode_model, quantize_field};
use svfreg::deform::{exponentiate, exponentiate_taped, gaussian_smooth, gaussian_smooth_adjoint, invert_velocity, warp_points, SmoothingKernel};
use svfreg::loss::{chamfer, mse, sinkhorn_divergence, LossKind, SinkhornConfig};
use svfreg::meshio::{load_mesh, save_mesh, similarity_icp, SimilarityTransform};
use svfreg::optim::{register, RegistrationConfig};
use svfreg::pdm::fit_pdm;
use svfreg::synthetic::{bumped_sphere, ellipsoid, icosphere};
use svfreg::{trilinear_sample, Direction, GridField, Point3, PointCloud, RngSeed};

use common::*;

fn dot(a: &GridField, b: &GridField) -> f64 {
    a.values().iter().zip(b.values()).map(|(p, q)| p.dot(q)).sum()
}

fn interior(seed: u64, n: usize) -> Vec<Point3> {
    random_points(n, 0.7, &mut RngSeed(seed).rng())
}

fn cloud_strategy(max: usize) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), 1..=max)
        .prop_map(|v| PointCloud::new(v.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn squaring_a_flow_doubles_its_time(seed in 0u64..1000, sup in 0.01..0.05f64) {
        let v = smooth_random_field(8, sup, seed);
        let once = exponentiate(&v, 7);
        let twice = exponentiate(&v.scaled(2.0), 7);
        for p in interior(seed, 20) {
            let err = (once.apply(&once.apply(&p)) - twice.apply(&p)).norm();
            prop_assert!(err < 2e-3 * sup / 0.05, "err {err}");
        }
    }

    #[test]
    fn negated_velocity_inverts_the_map(seed in 0u64..1000, sup in 0.01..0.08f64) {
        let v = smooth_random_field(8, sup, seed);
        let fwd = exponentiate(&v, 7);
        let inv = exponentiate(&invert_velocity(&v), 7);
        for p in interior(seed + 1, 20) {
            prop_assert!((inv.apply(&fwd.apply(&p)) - p).norm() < 2e-3);
            prop_assert!((fwd.apply(&inv.apply(&p)) - p).norm() < 2e-3);
        }
    }

    #[test]
    fn constant_velocity_is_a_translation(c in (-0.3..0.3f64, -0.3..0.3f64, -0.3..0.3f64), steps in 0u32..9) {
        let c = Point3::new(c.0, c.1, c.2);
        let phi = exponentiate(&GridField::from_fn(6, |_| c).unwrap(), steps);
        for d in phi.displacement.values() {
            prop_assert!((d - c).amax() < 1e-14);
        }
    }

    #[test]
    fn trilinear_reproduces_affine_fields(a in prop::array::uniform9(-1.0..1.0f64), b in prop::array::uniform3(-1.0..1.0f64), seed in 0u64..1000, v in 2usize..9) {
        let m = Matrix3::from_row_slice(&a);
        let b = Vector3::from(b);
        let field = GridField::from_fn(v, |p| m * p + b).unwrap();
        for p in random_points(30, 1.0, &mut RngSeed(seed).rng()) {
            prop_assert!((trilinear_sample(&field, &p) - (m * p + b)).amax() < 1e-12);
        }
    }

    #[test]
    fn smoothing_adjoint_identity(seed in 0u64..1000, size in prop::sample::select(vec![1usize, 3, 5, 7]), sigma in 0.3..3.0f64, v in 3usize..9) {
        let mut rng = RngSeed(seed).rng();
        let a = GridField::from_values(v, random_points(v * v * v, 1.0, &mut rng)).unwrap();
        let b = GridField::from_values(v, random_points(v * v * v, 1.0, &mut rng)).unwrap();
        let k = SmoothingKernel::new(size, sigma).unwrap();
        if size > 2 * v - 1 {
            prop_assert!(gaussian_smooth(&a, &k).is_err() && gaussian_smooth_adjoint(&b, &k).is_err());
            return Ok(());
        }
        let lhs = dot(&gaussian_smooth(&a, &k).unwrap(), &b);
        let rhs = dot(&a, &gaussian_smooth_adjoint(&b, &k).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn exp_backward_matches_directional_difference(seed in 0u64..1000) {
        let v = smooth_random_field(6, 0.05, seed);
        let dir = smooth_random_field(6, 1.0, seed + 7);
        let w = {
            let mut rng = RngSeed(seed + 3).rng();
            GridField::from_values(6, random_points(216, 1.0, &mut rng)).unwrap()
        };
        let (_, tape) = exponentiate_taped(&v, 7, Direction::Forward);
        let analytic = dot(&tape.backward(&w), &dir);
        // nodes sit on cell faces, so the map has kinks where a displacement
        // component changes sign; a tiny step rarely straddles one
        let h = 1e-8;
        let f = |t: f64| {
            let p = GridField::from_flat(6, &v.to_flat().iter().zip(dir.to_flat()).map(|(a, b)| a + t * b).collect::<Vec<_>>()).unwrap();
            dot(&exponentiate(&p, 7).displacement, &w)
        };
        let fd = (f(h) - f(-h)) / (2.0 * h);
        prop_assert!((fd - analytic).abs() <= 1e-5 * (1.0 + analytic.abs()), "fd {fd} analytic {analytic}");
    }

    #[test]
    fn sinkhorn_divergence_is_nonnegative_and_symmetric(a in cloud_strategy(7), b in cloud_strategy(7)) {
        let cfg = SinkhornConfig { epsilon: 0.05, tolerance: 1e-10, max_iterations: 20_000, ..SinkhornConfig::default() };
        let ab = sinkhorn_divergence(&a, &b, &cfg).unwrap().value;
        let ba = sinkhorn_divergence(&b, &a, &cfg).unwrap().value;
        prop_assert!(ab >= -1e-9);
        prop_assert!((ab - ba).abs() <= 1e-7 * (1.0 + ab.abs()), "{ab} vs {ba}");
        prop_assert!(sinkhorn_divergence(&a, &a, &cfg).unwrap().value.abs() <= 1e-9);
    }

    #[test]
    fn chamfer_is_a_symmetric_premetric(a in cloud_strategy(12), b in cloud_strategy(12)) {
        let ab = chamfer(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, chamfer(&b, &a).unwrap());
        prop_assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn mse_of_a_translate_is_the_squared_shift(a in cloud_strategy(12), t in prop::array::uniform3(-1.0..1.0f64)) {
        let t = Vector3::from(t);
        let moved = PointCloud::new(a.points().iter().map(|p| p + t).collect()).unwrap();
        prop_assert!((mse(&a, &moved).unwrap() - t.norm_squared()).abs() < 1e-12);
    }

    #[test]
    fn pca_ignores_batching(seed in 0u64..1000, n in 3usize..9, b1 in 1usize..9, b2 in 1usize..9) {
        let fields: Vec<GridField> = (0..n).map(|i| smooth_random_field(4, 0.1 + 0.05 * i as f64, seed * 31 + i as u64)).collect();
        let k = n - 1;
        let m1 = fit_pdm(fields.clone(), k, b1).unwrap();
        let m2 = fit_pdm(fields, k, b2).unwrap();
        let top = m1.eigenvalues[0];
        for (x, y) in m1.eigenvalues.iter().zip(&m2.eigenvalues) {
            prop_assert!((x - y).abs() <= 1e-9 * top);
        }
        let gram = m1.components.transpose() * &m1.components;
        for i in 0..gram.nrows() {
            for j in 0..gram.ncols() {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((gram[(i, j)] - want).abs() < 1e-9);
            }
        }
        prop_assert!((&m1.mean - &m2.mean).amax() < 1e-12);
        prop_assert_eq!(decode_model(&encode_model(&m1).unwrap()).unwrap(), m1);
    }

    #[test]
    fn field_codec_is_exact_after_quantizing(seed in 0u64..1000, v in 2usize..7) {
        let mut rng = RngSeed(seed).rng();
        let f = GridField::from_values(v, random_points(v * v * v, 2.0, &mut rng)).unwrap();
        let bytes = encode_field(&f);
        prop_assert_eq!(bytes.len(), 12 + 12 * v * v * v);
        let back = decode_field(&bytes).unwrap();
        prop_assert_eq!(&back, &quantize_field(&f));
        prop_assert_eq!(encode_field(&back), bytes.clone());
        prop_assert!(decode_field(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn similarity_inverse_round_trips(axis in prop::array::uniform3(-1.0..1.0f64), angle in -PI..PI, scale in 0.2..5.0f64, t in prop::array::uniform3(-3.0..3.0f64), p in prop::array::uniform3(-2.0..2.0f64)) {
        prop_assume!(Vector3::from(axis).norm() > 1e-3);
        let r = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(Vector3::from(axis)), angle);
        let s = SimilarityTransform::new(scale, *r.matrix(), Vector3::from(t)).unwrap();
        let p = Vector3::from(p);
        prop_assert!((s.inverse().apply(&s.apply(&p)) - p).norm() < 1e-12);
        prop_assert!((s.compose(&s.inverse()).apply(&p) - p).norm() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn mesh_files_round_trip(seed in 0u64..1000, ply in any::<bool>()) {
        let mesh = bumped_sphere(2, 0.5, 3, 0.2, RngSeed(seed)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(if ply { "m.ply" } else { "m.obj" });
        save_mesh(&mesh, &path).unwrap();
        prop_assert_eq!(load_mesh(&path).unwrap(), mesh);
    }

    #[test]
    fn icp_recovers_a_small_similarity(axis in prop::array::uniform3(-1.0..1.0f64), angle in -0.2..0.2f64, scale in 0.85..1.15f64, t in prop::array::uniform3(-0.05..0.05f64)) {
        prop_assume!(Vector3::from(axis).norm() > 1e-2);
        let mesh = ellipsoid(3, 0.5, [1.0, 0.8, 0.6]).unwrap();
        let r = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(Vector3::from(axis)), angle);
        let pose = SimilarityTransform::new(scale, *r.matrix(), Vector3::from(t)).unwrap();
        let posed = pose.apply_mesh(&mesh).unwrap();
        // aligning the posed copy back onto the original undoes the pose
        let icp = similarity_icp(&posed, &mesh, 300, RngSeed(1)).unwrap();
        let back = icp.transform.compose(&pose);
        prop_assert!(back.angle() < 1e-2, "residual rotation {}", back.angle());
        prop_assert!((back.scale - 1.0).abs() < 1e-2);
        prop_assert!(back.translation.norm() < 1e-2);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(3))]

    #[test]
    fn mse_registration_recovers_a_translation(t in prop::array::uniform3(-0.08..0.08f64)) {
        let x = icosphere(2, 0.4).unwrap().vertex_cloud().unwrap();
        let y = PointCloud::new(x.points().iter().map(|p| p + Vector3::from(t)).collect()).unwrap();
        let mut cfg = RegistrationConfig::for_loss(LossKind::Mse);
        cfg.grid_size = 8;
        cfg.objective.kernel = SmoothingKernel::new(3, 0.7).unwrap();
        cfg.adam.max_iterations = 200;
        let r = register(&x, &y, &cfg).unwrap();
        let before = mse(&x, &y).unwrap();
        let after = mse(&warp_points(&r.forward, &x), &y).unwrap();
        prop_assert!(after < 0.05 * before, "{after} vs {before}");
        prop_assert!(r.final_objective() <= r.initial_objective());
    }
}
