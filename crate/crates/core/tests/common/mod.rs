#![allow(dead_code)]

use conflow::{FlowMap, FlowPerturbation, Point};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Near-identity smooth flow `σ^μ + Σ c sin(kσ^ν + p) + d σ^a σ^b`.
pub fn random_flow_exprs(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    let m = n + 1;
    (0..m)
        .map(|mu| {
            let mut s = format!("s{mu}");
            s.push_str(&wiggle(rng, m, 0.06));
            let (a, b) = (rng.random_range(0..m), rng.random_range(0..m));
            s.push_str(&format!(" + {:.5}*s{a}*s{b}", rng.random_range(-0.04..0.04)));
            s
        })
        .collect()
}

fn wiggle(rng: &mut ChaCha8Rng, m: usize, amp: f64) -> String {
    let mut s = String::new();
    for nu in 0..m {
        let c: f64 = rng.random_range(-amp..amp);
        let k: f64 = rng.random_range(0.5..2.0);
        let p: f64 = rng.random_range(-1.0..1.0);
        s.push_str(&format!(" + {c:.5}*sin({k:.4}*s{nu} + {p:.4})"));
    }
    s
}

pub fn random_flow(rng: &mut ChaCha8Rng, n: usize) -> FlowMap {
    let srcs = random_flow_exprs(rng, n);
    let refs: Vec<&str> = srcs.iter().map(String::as_str).collect();
    FlowMap::from_exprs(&refs).unwrap()
}

/// Smooth perturbation with unit-scale amplitude.
pub fn random_perturbation(rng: &mut ChaCha8Rng, n: usize) -> FlowPerturbation {
    let m = n + 1;
    let srcs: Vec<String> = (0..m).map(|_| format!("0{}", wiggle(rng, m, 0.3))).collect();
    let refs: Vec<&str> = srcs.iter().map(String::as_str).collect();
    FlowPerturbation::from_exprs(&refs).unwrap()
}

pub fn random_point(rng: &mut ChaCha8Rng, n: usize) -> Point {
    Point::new((0..=n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Least-squares slope of `log err` against `log eps`.
pub fn loglog_slope(eps: &[f64], err: &[f64]) -> f64 {
    let xs: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = err.iter().map(|e| e.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    num / den
}

/// Like [`random_flow`] but with `x̂^0 = σ^0`.
pub fn random_time_flow(rng: &mut ChaCha8Rng, n: usize) -> FlowMap {
    let mut srcs = random_flow_exprs(rng, n);
    srcs[0] = "s0".into();
    let refs: Vec<&str> = srcs.iter().map(String::as_str).collect();
    FlowMap::from_exprs(&refs).unwrap()
}

/// Smooth random scalar field over `s0..sn`.
pub fn random_field_expr(rng: &mut ChaCha8Rng, n: usize) -> String {
    let m = n + 1;
    let mut s = format!("{:.4}", rng.random_range(-1.0..1.0));
    for nu in 0..m {
        let c: f64 = rng.random_range(-1.0..1.0);
        let k: f64 = rng.random_range(0.5..2.5);
        let p: f64 = rng.random_range(-1.0..1.0);
        s.push_str(&format!(" + {c:.4}*cos({k:.4}*s{nu} + {p:.4})"));
    }
    let (a, b) = (rng.random_range(0..m), rng.random_range(0..m));
    s.push_str(&format!(" + {:.4}*s{a}*s{b}", rng.random_range(-1.0..1.0)));
    s
}
