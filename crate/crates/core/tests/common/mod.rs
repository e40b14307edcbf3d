#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::Rng;
use svfreg::deform::{gaussian_smooth, SmoothingKernel};
use svfreg::{GridField, Point3, PointCloud, RngSeed};

pub fn svfreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svfreg")).args(args).env("SVFREG_THREADS", "0").output().expect("binary runs")
}

/// Runs the binary and panics with its stderr unless it exits 0.
pub fn svfreg_ok(args: &[&str]) -> String {
    let out = svfreg(args);
    assert!(out.status.success(), "svfreg {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

pub fn random_points(n: usize, half_width: f64, rng: &mut impl Rng) -> Vec<Point3> {
    (0..n)
        .map(|_| Point3::new(rng.random_range(-half_width..half_width), rng.random_range(-half_width..half_width), rng.random_range(-half_width..half_width)))
        .collect()
}

pub fn random_cloud(n: usize, half_width: f64, rng: &mut impl Rng) -> PointCloud {
    PointCloud::new(random_points(n, half_width, rng)).unwrap()
}

/// Random node values smoothed by a Gaussian, rescaled to the given sup norm.
pub fn smooth_random_field(v: usize, sup_norm: f64, seed: u64) -> GridField {
    let mut rng = RngSeed(seed).rng();
    let raw = GridField::from_values(v, random_points(v * v * v, 1.0, &mut rng)).unwrap();
    let s = gaussian_smooth(&raw, &SmoothingKernel::new(7, 2.0).unwrap()).unwrap();
    s.scaled(sup_norm / s.max_norm())
}

/// Every file under `dir` with its bytes, keyed by relative path.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Reads a two-column `k,value` CSV with a header row.
pub fn read_curve(path: &Path) -> Vec<(usize, f64)> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let mut it = l.split(',');
            (it.next().unwrap().parse().unwrap(), it.next().unwrap().parse().unwrap())
        })
        .collect()
}

/// Largest Euclidean round-trip error of `Exp(-v) o Exp(v)` on an 11^3 grid over [-0.8, 0.8]^3.
pub fn inverse_drift(forward: &svfreg::Deformation, inverse: &svfreg::Deformation) -> f64 {
    let mut drift: f64 = 0.0;
    for i in 0..11 {
        for j in 0..11 {
            for k in 0..11 {
                let p = Point3::new(i as f64, j as f64, k as f64) * 0.16 - Point3::repeat(0.8);
                drift = drift.max((inverse.apply(&forward.apply(&p)) - p).norm());
            }
        }
    }
    drift
}
