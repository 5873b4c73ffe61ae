mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use common::{random_field_expr, rng};
use conflow::determine::*;
use conflow::fields::{Grid, ScalarField, VectorField};
use conflow::intrinsic::{ExprLaw, HeatLaw, JetLaw};
use conflow::variational::{linearized_pairing, sine_probe, symmetry_defect, weighted_integral, SymmetryVariant};
use conflow::{FlowLink, IntrinsicOperator, Point, QuadratureSpec};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const SLOTS: [&str; 8] = ["u", "u_t", "u_x", "u_tt", "u_tx", "u_xx", "x", "t"];

fn random_polynomial_law(r: &mut ChaCha8Rng) -> String {
    let mut s = String::from("0");
    for _ in 0..4 {
        let deg = r.random_range(1..=3);
        s.push_str(&format!(" + {:.4}", r.random_range(-1.0..1.0)));
        for _ in 0..deg {
            s.push_str(&format!("*{}", SLOTS[r.random_range(0..SLOTS.len())]));
        }
    }
    s
}

fn law(src: &str) -> ExprLaw {
    ExprLaw::parse(src, 1, &BTreeMap::new()).unwrap()
}

fn point(r: &mut ChaCha8Rng) -> Point {
    Point::new(vec![r.random_range(0.0..1.0), r.random_range(0.0..1.0)]).unwrap()
}

fn ansatz() -> AlgebraicFlowAnsatz {
    AlgebraicFlowAnsatz::from_exprs(&["t", "x + 0.15*u*t + 0.1*u*u*x"], &[]).unwrap()
}

fn probe_field(r: &mut ChaCha8Rng) -> ScalarField {
    ScalarField::expr(&format!("0.4*sin({:.4}*x + {:.4}*t)", r.random_range(0.5..2.0), r.random_range(0.5..2.0)), 1).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn identity_ansatz_reduces_to_tonti(seed in any::<u64>()) {
        let mut r = rng(seed);
        let f = law(&random_polynomial_law(&mut r));
        let u = ScalarField::expr(&random_field_expr(&mut r, 1), 1).unwrap();
        let p = point(&mut r);
        let d = determining_residual(&f, &AlgebraicFlowAnsatz::identity(1), &u, &p).unwrap();
        let t = tonti_residual(&f, &u, &p).unwrap();
        for (a, b) in d.r.iter().zip(&t) {
            prop_assert!((a + b).abs() < 1e-9 * (1.0 + b.abs()), "{:?} vs {:?}", d.r, t);
        }
    }

    #[test]
    fn residual_scales_with_the_law(seed in any::<u64>()) {
        let mut r = rng(seed);
        let src = random_polynomial_law(&mut r);
        let kappa = r.random_range(-3.0..3.0);
        let scaled = law(&format!("{kappa:.6}*({src})"));
        let u = probe_field(&mut r);
        let p = point(&mut r);
        let base = determining_residual(&law(&src), &ansatz(), &u, &p).unwrap();
        let got = determining_residual(&scaled, &ansatz(), &u, &p).unwrap();
        let k: f64 = format!("{kappa:.6}").parse().unwrap();
        for (a, b) in got.r.iter().zip(&base.r) {
            prop_assert!((a - k * b).abs() < 1e-10 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn link_coefficients_reproduce_perturbation_jets(seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = ansatz();
        let u = probe_field(&mut r);
        let phi = probe_field(&mut r);
        let p = point(&mut r);
        let lc = link_coefficients(&a, &u, &p).unwrap();
        let jet = a.perturbation(&u, &phi).unwrap().jet(&p);
        let pj = phi.jet(p.coords()).unwrap();
        for mu in 0..2 {
            prop_assert!((jet.x[mu] - lc.a[mu] * pj.v).abs() < 1e-12);
            for nu in 0..2 {
                let first = lc.b[(mu, nu)] * pj.v + lc.a[mu] * pj.g[nu];
                prop_assert!((jet.d1[(mu, nu)] - first).abs() < 1e-10);
                for rho in 0..2 {
                    let second = lc.c[mu][(nu, rho)] * pj.v
                        + lc.b[(mu, nu)] * pj.g[rho]
                        + lc.b[(mu, rho)] * pj.g[nu]
                        + lc.a[mu] * pj.h[(nu, rho)];
                    prop_assert!((jet.d2[mu][(nu, rho)] - second).abs() < 1e-10);
                }
            }
        }
    }
}

#[test]
fn coefficient_integrand_matches_linearized_pairing() {
    let q = QuadratureSpec::unit(1, 10);
    let f = law("u_t - (1 + u*u)*u_xx + u*u_x*X1_1 + 0.2*X1_11*u_x + 0.1*X1_0*u");
    let a = ansatz();
    let mut r = rng(11);
    for _ in 0..5 {
        let u = probe_field(&mut r);
        let phi = probe_field(&mut r);
        let psi = probe_field(&mut r);
        let op = IntrinsicOperator::new(Arc::new(f.clone()), FlowLink::Algebraic(a.clone()));
        let uf = VectorField::scalar(u.clone());
        let flow = a.flow_of(&u).unwrap();
        let want = linearized_pairing(&op, &uf, &flow, &phi.clone().into(), &psi.clone().into(), true, &q).unwrap();
        let got = weighted_integral(&flow, &q, |p, _| {
            let c = symmetry_coefficients(&f, &a, &u, p)?;
            let pj = phi.jet(p.coords())?;
            let mut g = c.h * pj.v;
            for mu in 0..2 {
                g += c.b[mu] * pj.g[mu];
                for nu in 0..2 {
                    g += c.f[(mu, nu)] * pj.h[(mu, nu)];
                }
            }
            Ok(g * psi.eval(p.coords())?)
        })
        .unwrap();
        assert!((got - want).abs() < 1e-6 * (1.0 + want.abs()), "{got} vs {want}");
    }
}

#[test]
fn integration_by_parts_closes_with_vanishing_probes() {
    let q = QuadratureSpec::unit(1, 14);
    let f = law("u_t - (1 + u*u)*u_xx + u*u_x*X1_1 + 0.2*X1_11*u_x");
    let a = ansatz();
    let u = ScalarField::expr("0.5*sin(x + 0.3) + 0.2*t", 1).unwrap();
    let flow = a.flow_of(&u).unwrap();
    let phi = sine_probe(&[1, 1], &q);
    let psi = sine_probe(&[1, 2], &q);
    let total = weighted_integral(&flow, &q, |p, _| {
        let s = p.coords();
        let d = determining_residual(&f, &a, &u, p)?;
        let div_b = divergence_of_b(&f, &a, &u, p)?;
        let (pj, sj) = (phi.jet(s)?, psi.jet(s)?);
        let mut acc = 0.0;
        for mu in 0..2 {
            acc += d.coeffs.b[mu] * (pj.v * sj.g[mu] + sj.v * pj.g[mu]);
            acc += sj.v * pj.v * d.coeffs.b[mu] * d.gamma_trace[mu];
        }
        Ok(acc + sj.v * pj.v * div_b)
    })
    .unwrap();
    assert!(total.abs() < 1e-6, "{total}");
}

#[test]
fn formal_symmetry_implies_measured_symmetry() {
    let f = ExprLaw::parse("u_xx + u_yy", 2, &BTreeMap::new()).unwrap();
    let id = AlgebraicFlowAnsatz::identity(2);
    let u = ScalarField::expr("sin(x)*cos(y) + t", 2).unwrap();
    let grid = Grid::new(vec![0.1, 0.1, 0.1], vec![0.9, 0.9, 0.9], vec![3, 3, 3]).unwrap();
    for node in grid.nodes() {
        let d = determining_residual(&f, &id, &u, &Point::new(node).unwrap()).unwrap();
        assert!(d.norm_sq() < 1e-24);
    }
    let op = IntrinsicOperator::new(Arc::new(f), FlowLink::identity(2));
    let q = QuadratureSpec::unit(2, 6);
    let uf = VectorField::scalar(u);
    let flow = op.flow_of(&uf).unwrap();
    let phi = sine_probe(&[1, 1, 2], &q).into();
    let psi = sine_probe(&[2, 1, 1], &q).into();
    let rep = symmetry_defect(&op, &uf, &flow, &phi, &psi, SymmetryVariant::Incompressible, &q).unwrap();
    assert!(rep.defect.abs() < 1e-6);
}

#[test]
fn heat_fit_never_increases_the_residual() {
    let family = AlgebraicFlowAnsatz::from_exprs(&["t", "x + a*u + b*u*t + c*u*x"], &["a", "b", "c"]).unwrap();
    let samples = vec![ScalarField::expr("sin(x) + 0.5*t", 1).unwrap(), ScalarField::expr("x*x - t", 1).unwrap()];
    let grid = Grid::new(vec![0.2, 0.2], vec![0.8, 0.8], vec![3, 4]).unwrap();
    let law: Arc<dyn JetLaw> = Arc::new(HeatLaw { alpha: 0.5 });
    let fit = fit_symmetrizing_flow(law.as_ref(), &family, &samples, &grid, &FitOptions { max_iter: 15, ..Default::default() }).unwrap();
    assert!(fit.residual_norm <= fit.trace[0].residual_norm);
    assert!(fit.trace.windows(2).all(|w| w[1].residual_norm <= w[0].residual_norm));
    let again = fit_symmetrizing_flow(law.as_ref(), &family, &samples, &grid, &FitOptions { max_iter: 15, ..Default::default() }).unwrap();
    assert_eq!(fit, again);
}

#[test]
fn frozen_gamma_is_exposed_and_differs() {
    let f = law("u_t - u_xx");
    let u = ScalarField::expr("sin(2*x) + t", 1).unwrap();
    let p = Point::new(vec![0.4, 0.3]).unwrap();
    let a = ansatz();
    let composed = determining_residual_with(&f, &a, &u, &p, GammaSource::Composed).unwrap();
    let frozen = determining_residual_with(&f, &a, &u, &p, GammaSource::FrozenU).unwrap();
    assert_ne!(composed.gamma_trace, frozen.gamma_trace);
    assert_eq!(composed.coeffs, frozen.coeffs);
}
