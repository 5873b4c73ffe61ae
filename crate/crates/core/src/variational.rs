//! Gâteaux derivatives, the advective bilinear form, path integrals and
//! symmetry tests for intrinsic operators.
//!
//! The form is `⟨a, b⟩_u = ∫_Σ a b J dσ` over a fixed label box Σ, with `J`
//! the Jacobian determinant of the flow linked to `u`. Vector-valued
//! operators pair output `j` with field component `j`.

use std::fmt;
use std::sync::Arc;

use crate::dual::{lift, Dual, Real, D1};
use crate::error::{Error, Result};
use crate::fields::{ScalarField, VectorField};
use crate::func::GenericFn;
use crate::geometry::{FlowMap, FlowPerturbation, Point, DEGENERACY_THRESHOLD};
use crate::intrinsic::{FieldJet, FlowJet, IntrinsicOperator};
use crate::linalg::Mat;
use crate::quadrature::QuadratureSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateauxMode {
    /// One dual-number evaluation along the direction.
    Exact,
    /// Central difference with `ε = 1e-6·scale`.
    FiniteDiff,
}

fn directional(base: &FieldJet<f64>, dir: &FieldJet<f64>) -> FieldJet<D1> {
    let m = base.g.len();
    FieldJet {
        v: Dual::new(base.v, dir.v),
        g: base.g.iter().zip(&dir.g).map(|(&a, &b)| Dual::new(a, b)).collect(),
        h: Mat::from_fn(m, m, |i, j| Dual::new(base.h[(i, j)], dir.h[(i, j)])),
    }
}

fn flow_directional(base: &FlowJet<f64>, dir: &FlowJet<f64>) -> FlowJet<D1> {
    let m = base.size();
    FlowJet {
        x: base.x.iter().zip(&dir.x).map(|(&a, &b)| Dual::new(a, b)).collect(),
        d1: Mat::from_fn(m, m, |i, j| Dual::new(base.d1[(i, j)], dir.d1[(i, j)])),
        d2: base
            .d2
            .iter()
            .zip(&dir.d2)
            .map(|(a, b)| Mat::from_fn(m, m, |i, j| Dual::new(a[(i, j)], b[(i, j)])))
            .collect(),
    }
}

fn jet_sup(jets: &[FieldJet<f64>]) -> f64 {
    jets.iter()
        .flat_map(|j| std::iter::once(j.v).chain(j.g.iter().copied()).chain(j.h.iter().copied()))
        .fold(0.0, |acc, v| acc.max(v.abs()))
}

fn finite(v: Vec<f64>, what: &'static str) -> Result<Vec<f64>> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::NonFinite(what))
    }
}

fn check_shapes(op: &IntrinsicOperator, u: &VectorField, dir: &VectorField) -> Result<()> {
    if u.len() != dir.len() || u.arity() != dir.arity() {
        return Err(Error::Dimension("field and perturbation shapes differ".into()));
    }
    if op.law().n_fields() != u.len() {
        return Err(Error::Dimension(format!("law takes {} fields, got {}", op.law().n_fields(), u.len())));
    }
    Ok(())
}

/// `(δN/δu) φ` at `p` with the flow held fixed.
pub fn gateaux_field_derivative(
    op: &IntrinsicOperator,
    u: &VectorField,
    flow: &FlowMap,
    phi: &VectorField,
    p: &Point,
    mode: GateauxMode,
) -> Result<Vec<f64>> {
    check_shapes(op, u, phi)?;
    let s = p.coords();
    let uj = u.jets(s)?;
    let pj = phi.jets(s)?;
    let x = flow.jet(p);
    let law = op.law();
    let out = match mode {
        GateauxMode::Exact => {
            let ud: Vec<FieldJet<D1>> = uj.iter().zip(&pj).map(|(a, b)| directional(a, b)).collect();
            law.residual_d1(&lift(s), &ud, &x.map(Dual::constant)).iter().map(|d| d.eps).collect()
        }
        GateauxMode::FiniteDiff => {
            let dir = jet_sup(&pj);
            if dir == 0.0 {
                return Ok(vec![0.0; law.n_out()]);
            }
            let eps = 1e-6 * (1.0 + jet_sup(&uj)) / dir;
            let shifted = |k: f64| -> Vec<f64> {
                let jets: Vec<FieldJet<f64>> = uj
                    .iter()
                    .zip(&pj)
                    .map(|(a, b)| FieldJet {
                        v: a.v + k * b.v,
                        g: a.g.iter().zip(&b.g).map(|(x, y)| x + k * y).collect(),
                        h: a.h.add(&b.h.scale(k)),
                    })
                    .collect();
                law.residual_f64(s, &jets, &x)
            };
            let plus = shifted(eps);
            let minus = shifted(-eps);
            plus.iter().zip(&minus).map(|(a, b)| (a - b) / (2.0 * eps)).collect()
        }
    };
    finite(out, "field Gâteaux derivative")
}

/// `(δN/δx̂) φ̂` at `p`.
pub fn gateaux_flow_derivative(
    op: &IntrinsicOperator,
    u: &VectorField,
    flow: &FlowMap,
    phi_hat: &FlowPerturbation,
    p: &Point,
) -> Result<Vec<f64>> {
    if phi_hat.dim() != flow.dim() {
        return Err(Error::Dimension("flow and perturbation dimensions differ".into()));
    }
    let s = p.coords();
    let uj: Vec<FieldJet<D1>> = u.jets(s)?.iter().map(|j| j.map(Dual::constant)).collect();
    let x = flow_directional(&flow.jet(p), &phi_hat.jet(p));
    let out = op.law().residual_d1(&lift(s), &uj, &x).iter().map(|d| d.eps).collect();
    finite(out, "flow Gâteaux derivative")
}

/// `(N_{x̂+εφ̂}(u) − N_{x̂−εφ̂}(u)) / 2ε`, for cross-checking.
pub fn gateaux_flow_derivative_fd(
    op: &IntrinsicOperator,
    u: &VectorField,
    flow: &FlowMap,
    phi_hat: &FlowPerturbation,
    p: &Point,
    eps: f64,
) -> Result<Vec<f64>> {
    let plus = op.residual(u, &flow.perturbed(phi_hat, eps), p)?;
    let minus = op.residual(u, &flow.perturbed(phi_hat, -eps), p)?;
    Ok(plus.iter().zip(&minus).map(|(a, b)| (a - b) / (2.0 * eps)).collect())
}

/// `∫_Σ g(σ) J dσ`; fails if `J ≤ 0` at any node.
pub fn weighted_integral(
    flow: &FlowMap,
    quad: &QuadratureSpec,
    mut g: impl FnMut(&Point, f64) -> Result<f64>,
) -> Result<f64> {
    quad.validate()?;
    if quad.axes() != flow.dim() + 1 {
        return Err(Error::Dimension(format!("quadrature has {} axes, flow needs {}", quad.axes(), flow.dim() + 1)));
    }
    let mut acc = 0.0;
    for (s, w) in quad.points() {
        let p = Point::new(s)?;
        let det = flow.jet(&p).d1.det();
        if !det.is_finite() {
            return Err(Error::NonFinite("Jacobian determinant"));
        }
        if det <= DEGENERACY_THRESHOLD {
            return Err(Error::DegenerateFlow { det, at: p.coords().to_vec() });
        }
        acc += w * g(&p, det)? * det;
    }
    if acc.is_finite() {
        Ok(acc)
    } else {
        Err(Error::NonFinite("quadrature"))
    }
}

/// `⟨a, b⟩ = ∫_Σ a b J dσ`.
pub fn advective_form(a: &ScalarField, b: &ScalarField, flow: &FlowMap, quad: &QuadratureSpec) -> Result<f64> {
    weighted_integral(flow, quad, |p, _| Ok(a.eval(p.coords())? * b.eval(p.coords())?))
}

/// Component-wise sum of the advective form.
pub fn advective_form_vec(a: &VectorField, b: &VectorField, flow: &FlowMap, quad: &QuadratureSpec) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension("paired fields have different lengths".into()));
    }
    weighted_integral(flow, quad, |p, _| {
        let x = a.eval(p.coords())?;
        let y = b.eval(p.coords())?;
        Ok(x.iter().zip(&y).map(|(x, y)| x * y).sum())
    })
}

/// `⟨φ; a, b⟩ = ∫_Σ a b J ∇·φ̂ dσ` with `φ̂` supplied directly.
pub fn form_variation_with(
    a: &ScalarField,
    b: &ScalarField,
    phi_hat: &FlowPerturbation,
    flow: &FlowMap,
    quad: &QuadratureSpec,
) -> Result<f64> {
    weighted_integral(flow, quad, |p, _| {
        Ok(a.eval(p.coords())? * b.eval(p.coords())? * phi_hat.divergence(flow, p)?)
    })
}

/// `⟨φ; a, b⟩_u` with `φ̂ = link.forward(u, φ)`.
pub fn advective_form_variation(
    a: &ScalarField,
    b: &ScalarField,
    op: &IntrinsicOperator,
    u: &VectorField,
    phi: &VectorField,
    flow: &FlowMap,
    quad: &QuadratureSpec,
) -> Result<f64> {
    let phi_hat = op.link().forward(u, phi)?;
    form_variation_with(a, b, &phi_hat, flow, quad)
}

/// `⟨N_x̂(u), v⟩` with `J` taken from `flow`.
pub fn operator_pairing(
    op: &IntrinsicOperator,
    u: &VectorField,
    flow: &FlowMap,
    v: &VectorField,
    quad: &QuadratureSpec,
) -> Result<f64> {
    check_outputs(op, v)?;
    weighted_integral(flow, quad, |p, _| {
        let r = op.residual(u, flow, p)?;
        let w = v.eval(p.coords())?;
        Ok(r.iter().zip(&w).map(|(a, b)| a * b).sum())
    })
}

fn check_outputs(op: &IntrinsicOperator, v: &VectorField) -> Result<()> {
    if op.law().n_out() != v.len() {
        return Err(Error::Dimension(format!("operator has {} outputs, paired field has {}", op.law().n_out(), v.len())));
    }
    Ok(())
}

/// A one-parameter family `u_λ = u0 + λ(u1 − u0) + λ(1 − λ) w`.
#[derive(Clone, Debug)]
pub struct Homotopy {
    u0: VectorField,
    u1: VectorField,
    detour: Option<VectorField>,
}

impl Homotopy {
    pub fn straight(u0: VectorField, u1: VectorField) -> Result<Self> {
        Self::check(&u0, &u1)?;
        Ok(Homotopy { u0, u1, detour: None })
    }

    pub fn quadratic(u0: VectorField, u1: VectorField, w: VectorField) -> Result<Self> {
        Self::check(&u0, &u1)?;
        Self::check(&u0, &w)?;
        Ok(Homotopy { u0, u1, detour: Some(w) })
    }

    fn check(a: &VectorField, b: &VectorField) -> Result<()> {
        if a.len() != b.len() || a.arity() != b.arity() {
            return Err(Error::Dimension("homotopy endpoints have different shapes".into()));
        }
        Ok(())
    }

    pub fn start(&self) -> &VectorField {
        &self.u0
    }

    pub fn end(&self) -> &VectorField {
        &self.u1
    }

    pub fn eval(&self, lambda: f64) -> Result<VectorField> {
        let mut terms = vec![(1.0 - lambda, &self.u0), (lambda, &self.u1)];
        if let Some(w) = &self.detour {
            terms.push((lambda * (1.0 - lambda), w));
        }
        VectorField::combine(&terms)
    }

    /// `∂u_λ/∂λ`.
    pub fn deriv(&self, lambda: f64) -> Result<VectorField> {
        let mut terms = vec![(-1.0, &self.u0), (1.0, &self.u1)];
        if let Some(w) = &self.detour {
            terms.push((1.0 - 2.0 * lambda, w));
        }
        VectorField::combine(&terms)
    }
}

/// `∫₀¹ ⟨N_{x̂(u_λ)}(u_λ), ∂u_λ/∂λ⟩_{u_λ} dλ`.
pub fn path_integral(op: &IntrinsicOperator, traj: &Homotopy, quad: &QuadratureSpec) -> Result<f64> {
    let (ls, ws) = quad.lambda_rule();
    let mut acc = 0.0;
    for (lambda, w) in ls.iter().zip(&ws) {
        let u = traj.eval(*lambda)?;
        let du = traj.deriv(*lambda)?;
        let flow = op.flow_of(&u)?;
        acc += w * operator_pairing(op, &u, &flow, &du, quad)?;
    }
    Ok(acc)
}

/// `A[u]` along the straight line from `u0`, with `A[u0] = 0`.
pub fn build_action(op: &IntrinsicOperator, u0: &VectorField, u: &VectorField, quad: &QuadratureSpec) -> Result<f64> {
    path_integral(op, &Homotopy::straight(u0.clone(), u.clone())?, quad)
}

/// The zero field with the shape of `u`.
pub fn zero_like(u: &VectorField) -> VectorField {
    let n = u.arity() - 1;
    VectorField::new((0..u.len()).map(|_| ScalarField::constant(0.0, n)).collect()).expect("non-empty shape")
}

/// Largest `|(A[u+εδ] − A[u−εδ])/2ε − ⟨N(u), δ⟩_u|` over the directions,
/// with `ε = 1e-4·‖u‖/‖δ‖` (unit norms when a norm vanishes).
pub fn stationarity_check(
    op: &IntrinsicOperator,
    u: &VectorField,
    directions: &[VectorField],
    quad: &QuadratureSpec,
) -> Result<f64> {
    stationarity_check_with(op, u, directions, quad, 1e-4)
}

pub fn stationarity_check_with(
    op: &IntrinsicOperator,
    u: &VectorField,
    directions: &[VectorField],
    quad: &QuadratureSpec,
    rel_step: f64,
) -> Result<f64> {
    let zero = zero_like(u);
    let flow = op.flow_of(u)?;
    let norm_u = advective_form_vec(u, u, &flow, quad)?.sqrt();
    let mut worst: f64 = 0.0;
    for d in directions {
        let norm_d = advective_form_vec(d, d, &flow, quad)?.sqrt();
        let scale = if norm_d > 0.0 { norm_u.max(1.0) / norm_d } else { 1.0 };
        let eps = rel_step * scale;
        let up = VectorField::combine(&[(1.0, u), (eps, d)])?;
        let down = VectorField::combine(&[(1.0, u), (-eps, d)])?;
        let fd = (build_action(op, &zero, &up, quad)? - build_action(op, &zero, &down, quad)?) / (2.0 * eps);
        let form = operator_pairing(op, u, &flow, d, quad)?;
        worst = worst.max((fd - form).abs());
    }
    Ok(worst)
}

/// Which side conditions enter the symmetry test.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SymmetryVariant {
    /// `⟨Gφ, ψ⟩ + ⟨φ; N, ψ⟩ = ⟨Gψ, φ⟩ + ⟨ψ; N, φ⟩`.
    Full,
    /// `⟨Gφ, ψ⟩ = ⟨Gψ, φ⟩`, for divergence-free flow perturbations.
    Incompressible,
    /// The flow does not depend on `u`: `G` reduces to `δN/δu`, the form variation stays.
    FixedFlow,
    /// `⟨(δN/δu)φ, ψ⟩ = ⟨(δN/δu)ψ, φ⟩` under a form that does not vary with `u`.
    Classical,
}

impl SymmetryVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            SymmetryVariant::Full => "full",
            SymmetryVariant::Incompressible => "incompressible",
            SymmetryVariant::FixedFlow => "fixed_flow",
            SymmetryVariant::Classical => "classical",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(SymmetryVariant::Full),
            "incompressible" => Some(SymmetryVariant::Incompressible),
            "fixed_flow" => Some(SymmetryVariant::FixedFlow),
            "classical" => Some(SymmetryVariant::Classical),
            _ => None,
        }
    }
}

impl fmt::Display for SymmetryVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Both sides of a symmetry condition, each divided by `normalization = ‖φ‖‖ψ‖`.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetryReport {
    pub variant: SymmetryVariant,
    pub lhs: f64,
    pub rhs: f64,
    pub defect: f64,
    pub normalization: f64,
}

/// `⟨Gφ, ψ⟩_u` (or the restricted operator for the fixed and classical variants).
pub fn linearized_pairing(
    op: &IntrinsicOperator,
    u: &VectorField,
    flow: &FlowMap,
    phi: &VectorField,
    psi: &VectorField,
    with_flow_term: bool,
    quad: &QuadratureSpec,
) -> Result<f64> {
    check_outputs(op, psi)?;
    let phi_hat = if with_flow_term { Some(op.link().forward(u, phi)?) } else { None };
    weighted_integral(flow, quad, |p, _| {
        let mut g = gateaux_field_derivative(op, u, flow, phi, p, GateauxMode::Exact)?;
        if let Some(ph) = &phi_hat {
            let h = gateaux_flow_derivative(op, u, flow, ph, p)?;
            for (a, b) in g.iter_mut().zip(h) {
                *a += b;
            }
        }
        let w = psi.eval(p.coords())?;
        Ok(g.iter().zip(&w).map(|(a, b)| a * b).sum())
    })
}

/// `⟨φ; N(u), ψ⟩_u`.
pub fn residual_variation(
    op: &IntrinsicOperator,
    u: &VectorField,
    flow: &FlowMap,
    phi: &VectorField,
    psi: &VectorField,
    quad: &QuadratureSpec,
) -> Result<f64> {
    check_outputs(op, psi)?;
    let phi_hat = op.link().forward(u, phi)?;
    weighted_integral(flow, quad, |p, _| {
        let r = op.residual(u, flow, p)?;
        let w = psi.eval(p.coords())?;
        let pair: f64 = r.iter().zip(&w).map(|(a, b)| a * b).sum();
        Ok(pair * phi_hat.divergence(flow, p)?)
    })
}

/// Evaluate one symmetry condition for the probe pair `(φ, ψ)`.
pub fn symmetry_defect(
    op: &IntrinsicOperator,
    u: &VectorField,
    flow: &FlowMap,
    phi: &VectorField,
    psi: &VectorField,
    variant: SymmetryVariant,
    quad: &QuadratureSpec,
) -> Result<SymmetryReport> {
    check_shapes(op, u, phi)?;
    check_shapes(op, u, psi)?;
    let with_flow = matches!(variant, SymmetryVariant::Full | SymmetryVariant::Incompressible);
    let with_variation = matches!(variant, SymmetryVariant::Full | SymmetryVariant::FixedFlow);
    let mut lhs = linearized_pairing(op, u, flow, phi, psi, with_flow, quad)?;
    let mut rhs = linearized_pairing(op, u, flow, psi, phi, with_flow, quad)?;
    if with_variation {
        lhs += residual_variation(op, u, flow, phi, psi, quad)?;
        rhs += residual_variation(op, u, flow, psi, phi, quad)?;
    }
    let norm_phi = advective_form_vec(phi, phi, flow, quad)?.sqrt();
    let norm_psi = advective_form_vec(psi, psi, flow, quad)?.sqrt();
    let normalization = norm_phi * norm_psi;
    if normalization <= 0.0 {
        return Err(Error::Invalid("probe perturbations must be non-zero".into()));
    }
    let lhs = lhs / normalization;
    let rhs = rhs / normalization;
    Ok(SymmetryReport { variant, lhs, rhs, defect: lhs - rhs, normalization })
}

/// `Π sin(k_a π (σ^a − lo_a)/(hi_a − lo_a))`; a zero mode leaves that axis constant.
#[derive(Clone, Debug)]
pub struct SineMode {
    pub modes: Vec<usize>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl GenericFn for SineMode {
    fn arity(&self) -> usize {
        self.modes.len()
    }
    fn eval<T: Real>(&self, x: &[T]) -> T {
        let mut acc = T::one();
        for (a, &k) in self.modes.iter().enumerate() {
            if k > 0 {
                let scale = k as f64 * std::f64::consts::PI / (self.hi[a] - self.lo[a]);
                acc *= ((x[a] - self.lo[a]) * scale).sin();
            }
        }
        acc
    }
}

/// Sine probe over the quadrature box, vanishing on every axis with a non-zero mode.
pub fn sine_probe(modes: &[usize], quad: &QuadratureSpec) -> ScalarField {
    ScalarField::Analytic(Arc::new(SineMode { modes: modes.to_vec(), lo: quad.lo.clone(), hi: quad.hi.clone() }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intrinsic::{FlowLink, HeatLaw, SemilinearPoissonLaw};
    use std::f64::consts::PI;

    fn poisson(cubic: f64) -> IntrinsicOperator {
        IntrinsicOperator::new(Arc::new(SemilinearPoissonLaw { cubic, source: None }), FlowLink::identity(1))
    }

    fn vf(src: &str) -> VectorField {
        VectorField::exprs(&[src], 1).unwrap()
    }

    fn quad() -> QuadratureSpec {
        QuadratureSpec::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![2, 20]).unwrap()
    }

    #[test]
    fn form_basics() {
        let q = quad();
        let id = FlowMap::identity(1);
        let one = ScalarField::constant(1.0, 1);
        assert!((advective_form(&one, &one, &id, &q).unwrap() - 1.0).abs() < 1e-14);
        let s = ScalarField::expr("sin(pi*x)", 1).unwrap();
        assert!((advective_form(&s, &s, &id, &q).unwrap() - 0.5).abs() < 1e-14);
        let stretch = FlowMap::from_exprs(&["t", "2*x"]).unwrap();
        assert!((advective_form(&one, &one, &stretch, &q).unwrap() - 2.0).abs() < 1e-14);
        let fold = FlowMap::from_exprs(&["t", "-x"]).unwrap();
        assert!(matches!(advective_form(&one, &one, &fold, &q), Err(Error::DegenerateFlow { .. })));
    }

    #[test]
    fn form_variation_of_stretch() {
        let q = quad();
        let one = ScalarField::constant(1.0, 1);
        let pert = FlowPerturbation::from_exprs(&["0", "x"]).unwrap();
        let v = form_variation_with(&one, &one, &pert, &FlowMap::identity(1), &q).unwrap();
        assert!((v - 1.0).abs() < 1e-14);
    }

    #[test]
    fn hand_linearization_of_cubic_poisson() {
        let op = poisson(1.0);
        let u = vf("sin(pi*x)");
        let phi = vf("x*(1-x)");
        let p = Point::new(vec![0.3, 0.5]).unwrap();
        let id = FlowMap::identity(1);
        let exact = gateaux_field_derivative(&op, &u, &id, &phi, &p, GateauxMode::Exact).unwrap()[0];
        assert!((exact - 2.75).abs() < 1e-13);
        let fd = gateaux_field_derivative(&op, &u, &id, &phi, &p, GateauxMode::FiniteDiff).unwrap()[0];
        assert!((fd - exact).abs() < 1e-5 * exact.abs());
    }

    #[test]
    fn action_of_cubic_poisson() {
        let op = poisson(1.0);
        let q = quad();
        let u = vf("sin(pi*x)");
        let a = build_action(&op, &zero_like(&u), &u, &q).unwrap();
        assert!((a - (PI * PI / 4.0 + 3.0 / 32.0)).abs() < 1e-10, "{a}");
        let detour = Homotopy::quadratic(zero_like(&u), u.clone(), vf("x*x*(1-x)")).unwrap();
        assert!((path_integral(&op, &detour, &q).unwrap() - a).abs() < 1e-10);
        assert_eq!(build_action(&op, &u, &u, &q).unwrap(), 0.0);
    }

    #[test]
    fn heat_classical_asymmetry() {
        let op = IntrinsicOperator::new(Arc::new(HeatLaw { alpha: 0.1 }), FlowLink::identity(1));
        let q = QuadratureSpec::unit(1, 16);
        let u = vf("0");
        let id = FlowMap::identity(1);
        // axis 0 is time: ψ = sin(2πt) sin(πσ)
        let phi = VectorField::scalar(sine_probe(&[1, 1], &q));
        let psi = VectorField::scalar(sine_probe(&[2, 1], &q));
        let r = symmetry_defect(&op, &u, &id, &phi, &psi, SymmetryVariant::Classical, &q).unwrap();
        assert!((r.defect - 16.0 / 3.0).abs() < 1e-10, "{r:?}");
        // orthogonal spatial modes with the same time mode cancel exactly
        let psi = VectorField::scalar(sine_probe(&[1, 2], &q));
        let r = symmetry_defect(&op, &u, &id, &phi, &psi, SymmetryVariant::Classical, &q).unwrap();
        assert!(r.defect.abs() < 1e-12);
    }
}
