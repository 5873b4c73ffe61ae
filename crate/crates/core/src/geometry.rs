//! Pointwise differential geometry of a conjugate flow `x̂^μ(σ^ν)`.
//!
//! Index conventions: `jac[(μ, ν)] = ∂x̂^μ/∂σ^ν`, `inv[(ν, μ)] = ∂σ̂^ν/∂x^μ`,
//! `gamma[α][(μ, ν)] = Γ^α_{μν}`, and second derivatives are stored as
//! `d2[μ][(ν, λ)] = ∂²x̂^μ/∂σ^ν∂σ^λ`. Index 0 is time.

use std::sync::Arc;

use crate::dual::{seed, Dual, Real, D1};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::func::{call, jet2, Coord, GenericFn, LinComb, SFn};
use crate::intrinsic::FlowJet;
use crate::linalg::{levi_civita_cofactor, Mat};

/// `|J|` below this is treated as a degenerate flow.
pub const DEGENERACY_THRESHOLD: f64 = 1e-12;

/// Rank-3 array `t[a][(b, c)]`.
pub type Tensor3 = Vec<Mat<f64>>;

/// Space-time label `(σ^0, …, σ^n)` with `σ^0` the time label.
#[derive(Clone, Debug, PartialEq)]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if !(2..=4).contains(&coords.len()) {
            return Err(Error::Dimension(format!("point needs 2..=4 coordinates, got {}", coords.len())));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("point coordinates"));
        }
        Ok(Point(coords))
    }

    /// Spatial dimension `n`.
    pub fn dim(&self) -> usize {
        self.0.len() - 1
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Index<usize> for Point {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// How a map's derivatives are obtained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DerivMode {
    /// Nested dual numbers; exact to rounding.
    Exact,
    /// Central differences of step `h` and order 2 or 4.
    FiniteDiff { h: f64, order: u8 },
}

/// A vector-valued map of the space-time labels with derivative access.
#[derive(Clone, Debug)]
pub struct VectorMap {
    comps: Vec<SFn>,
    mode: DerivMode,
}

impl VectorMap {
    pub fn new(comps: Vec<SFn>, mode: DerivMode) -> Result<Self> {
        let m = comps.len();
        if !(2..=4).contains(&m) {
            return Err(Error::Dimension(format!("map needs 2..=4 components, got {m}")));
        }
        if let Some(bad) = comps.iter().find(|c| c.arity() != m) {
            return Err(Error::Dimension(format!("component arity {} but {m} components", bad.arity())));
        }
        if let DerivMode::FiniteDiff { h, order } = mode {
            if !(h > 0.0) || !(order == 2 || order == 4) {
                return Err(Error::Invalid(format!("finite-difference mode needs h > 0 and order 2|4, got {h}, {order}")));
            }
        }
        Ok(VectorMap { comps, mode })
    }

    pub fn components(&self) -> &[SFn] {
        &self.comps
    }

    pub fn mode(&self) -> DerivMode {
        self.mode
    }

    /// Number of components, `n + 1`.
    pub fn size(&self) -> usize {
        self.comps.len()
    }

    pub fn eval(&self, p: &[f64]) -> Vec<f64> {
        self.comps.iter().map(|c| c.eval_f64(p)).collect()
    }

    pub fn deriv1(&self, p: &[f64], mu: usize, nu: usize) -> f64 {
        self.jet_component(mu, p).1[nu]
    }

    pub fn deriv2(&self, p: &[f64], mu: usize, nu: usize, lambda: usize) -> f64 {
        self.jet_component(mu, p).2[(nu, lambda)]
    }

    fn jet_component(&self, mu: usize, p: &[f64]) -> (f64, Vec<f64>, Mat<f64>) {
        component_jet(self.comps[mu].as_ref(), self.mode, p)
    }

    /// Value, first and second derivatives at `p`.
    pub fn jet(&self, p: &[f64]) -> FlowJet<f64> {
        self.jet_at(p)
    }

    /// Jet at a (possibly dual) point; exact mode differentiates through it.
    pub fn jet_at<T: Real>(&self, p: &[T]) -> FlowJet<T>
    where
        Dual<T>: Real,
        Dual<Dual<T>>: Real,
    {
        let mut x = Vec::with_capacity(self.size());
        let mut rows = Vec::with_capacity(self.size());
        let mut d2 = Vec::with_capacity(self.size());
        for c in &self.comps {
            let (v, g, h) = component_jet(c.as_ref(), self.mode, p);
            x.push(v);
            rows.push(g);
            d2.push(h);
        }
        FlowJet { x, d1: Mat::from_rows(&rows), d2 }
    }

    pub fn jacobian(&self, p: &[f64]) -> Mat<f64> {
        let rows: Vec<Vec<f64>> = (0..self.size()).map(|mu| self.jet_component(mu, p).1).collect();
        Mat::from_rows(&rows)
    }

    /// `self + eps·other`, component-wise.
    pub fn axpy(&self, eps: f64, other: &VectorMap) -> VectorMap {
        let m = self.size();
        let comps = self
            .comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| Arc::new(LinComb { arity: m, offset: 0.0, terms: vec![(1.0, a.clone()), (eps, b.clone())] }) as SFn)
            .collect();
        VectorMap { comps, mode: self.mode }
    }
}

/// Value, gradient and Hessian of one component under the given mode.
fn component_jet<T: Real>(f: &dyn crate::func::ScalarFn, mode: DerivMode, p: &[T]) -> (T, Vec<T>, Mat<T>)
where
    Dual<T>: Real,
    Dual<Dual<T>>: Real,
{
    match mode {
        DerivMode::Exact => jet2(f, p),
        DerivMode::FiniteDiff { h, order } => fd_jet(f, p, h, order),
    }
}

fn fd_jet<T: Real>(f: &dyn crate::func::ScalarFn, p: &[T], h: f64, order: u8) -> (T, Vec<T>, Mat<T>) {
    let m = p.len();
    let at = |offsets: &[(usize, f64)]| -> T {
        let mut q = p.to_vec();
        for &(axis, k) in offsets {
            q[axis] += T::cst(k * h);
        }
        call(f, &q)
    };
    let f0 = call(f, p);
    // first-derivative stencil (offset, weight) scaled by 1/h
    let d1: &[(f64, f64)] = if order == 4 {
        &[(-2.0, 1.0 / 12.0), (-1.0, -8.0 / 12.0), (1.0, 8.0 / 12.0), (2.0, -1.0 / 12.0)]
    } else {
        &[(-1.0, -0.5), (1.0, 0.5)]
    };
    let d2: &[(f64, f64)] = if order == 4 {
        &[(-2.0, -1.0 / 12.0), (-1.0, 16.0 / 12.0), (0.0, -30.0 / 12.0), (1.0, 16.0 / 12.0), (2.0, -1.0 / 12.0)]
    } else {
        &[(-1.0, 1.0), (0.0, -2.0), (1.0, 1.0)]
    };
    let mut grad = vec![T::zero(); m];
    let mut hess = Mat::zeros(m, m);
    for i in 0..m {
        let mut acc = T::zero();
        for &(k, w) in d1 {
            acc += at(&[(i, k)]) * w;
        }
        grad[i] = acc / h;
        let mut acc = T::zero();
        for &(k, w) in d2 {
            acc += if k == 0.0 { f0 * w } else { at(&[(i, k)]) * w };
        }
        hess[(i, i)] = acc / (h * h);
        for j in 0..i {
            let mut acc = T::zero();
            for &(ki, wi) in d1 {
                for &(kj, wj) in d1 {
                    acc += at(&[(i, ki), (j, kj)]) * (wi * wj);
                }
            }
            hess[(i, j)] = acc / (h * h);
            hess[(j, i)] = hess[(i, j)];
        }
    }
    (f0, grad, hess)
}

/// The conjugate flow `x̂^μ(σ^ν)`.
#[derive(Clone, Debug)]
pub struct FlowMap {
    map: VectorMap,
    time_identity: bool,
}

impl FlowMap {
    pub fn new(comps: Vec<SFn>, mode: DerivMode) -> Result<Self> {
        let map = VectorMap::new(comps, mode)?;
        Ok(FlowMap { map, time_identity: false })
    }

    /// Declare `x̂^0 = σ^0`. Checked at construction on the first component.
    pub fn with_time_identity(mut self, flag: bool) -> Self {
        self.time_identity = flag;
        self
    }

    pub fn identity(n: usize) -> Self {
        let m = n + 1;
        let comps = (0..m).map(|i| Arc::new(Coord { arity: m, index: i }) as SFn).collect();
        FlowMap { map: VectorMap { comps, mode: DerivMode::Exact }, time_identity: true }
    }

    /// Build from expressions over `s0..sn`; `x̂^0 = t` sets the time-identity flag.
    pub fn from_exprs(srcs: &[&str]) -> Result<Self> {
        let n = srcs.len().saturating_sub(1);
        let comps = srcs.iter().map(|s| Ok(Expr::spacetime(s, n)?.into_fn())).collect::<Result<Vec<_>>>()?;
        let time_identity = matches!(srcs.first().map(|s| s.trim()), Some("t") | Some("s0"));
        Ok(FlowMap::new(comps, DerivMode::Exact)?.with_time_identity(time_identity))
    }

    pub fn from_map(map: VectorMap) -> Self {
        FlowMap { map, time_identity: false }
    }

    pub fn map(&self) -> &VectorMap {
        &self.map
    }

    /// Spatial dimension `n`.
    pub fn dim(&self) -> usize {
        self.map.size() - 1
    }

    pub fn time_identity(&self) -> bool {
        self.time_identity
    }

    pub fn eval(&self, p: &Point) -> Vec<f64> {
        self.map.eval(p.coords())
    }

    pub fn deriv1(&self, p: &Point, mu: usize, nu: usize) -> f64 {
        self.map.deriv1(p.coords(), mu, nu)
    }

    pub fn deriv2(&self, p: &Point, mu: usize, nu: usize, lambda: usize) -> f64 {
        self.map.deriv2(p.coords(), mu, nu, lambda)
    }

    pub fn jet(&self, p: &Point) -> FlowJet<f64> {
        self.map.jet(p.coords())
    }

    /// `x̂ + ε φ̂`.
    pub fn perturbed(&self, pert: &FlowPerturbation, eps: f64) -> FlowMap {
        FlowMap { map: self.map.axpy(eps, &pert.map), time_identity: false }
    }

    fn check_point(&self, p: &Point) -> Result<()> {
        if p.dim() != self.dim() {
            return Err(Error::Dimension(format!("flow has n = {}, point has n = {}", self.dim(), p.dim())));
        }
        Ok(())
    }
}

/// A first-order disturbance `φ̂^μ(σ^ν)` of a flow.
#[derive(Clone, Debug)]
pub struct FlowPerturbation {
    map: VectorMap,
}

impl FlowPerturbation {
    pub fn new(comps: Vec<SFn>, mode: DerivMode) -> Result<Self> {
        Ok(FlowPerturbation { map: VectorMap::new(comps, mode)? })
    }

    pub fn zero(n: usize) -> Self {
        let m = n + 1;
        let comps = (0..m).map(|_| Arc::new(crate::func::Const { arity: m, value: 0.0 }) as SFn).collect();
        FlowPerturbation { map: VectorMap { comps, mode: DerivMode::Exact } }
    }

    pub fn from_exprs(srcs: &[&str]) -> Result<Self> {
        let n = srcs.len().saturating_sub(1);
        let comps = srcs.iter().map(|s| Ok(Expr::spacetime(s, n)?.into_fn())).collect::<Result<Vec<_>>>()?;
        FlowPerturbation::new(comps, DerivMode::Exact)
    }

    pub fn from_map(map: VectorMap) -> Self {
        FlowPerturbation { map }
    }

    pub fn map(&self) -> &VectorMap {
        &self.map
    }

    pub fn dim(&self) -> usize {
        self.map.size() - 1
    }

    pub fn scaled(&self, s: f64) -> FlowPerturbation {
        let m = self.map.size();
        let comps = self
            .map
            .comps
            .iter()
            .map(|c| Arc::new(LinComb { arity: m, offset: 0.0, terms: vec![(s, c.clone())] }) as SFn)
            .collect();
        FlowPerturbation { map: VectorMap { comps, mode: self.map.mode } }
    }

    pub fn jet(&self, p: &Point) -> FlowJet<f64> {
        self.map.jet(p.coords())
    }

    /// Cartesian divergence `∂φ̂^μ/∂x^μ = A^ν_μ ∂φ̂^μ/∂σ^ν` through the base flow.
    pub fn divergence(&self, base: &FlowMap, p: &Point) -> Result<f64> {
        let inv = inverse_jacobian(base, p)?;
        let dphi = self.map.jacobian(p.coords());
        Ok(contract_divergence(&inv, &dphi))
    }
}

fn contract_divergence(inv: &Mat<f64>, dphi: &Mat<f64>) -> f64 {
    let m = inv.rows();
    let mut acc = 0.0;
    for mu in 0..m {
        for nu in 0..m {
            acc += inv[(nu, mu)] * dphi[(mu, nu)];
        }
    }
    acc
}

fn ensure_finite(m: &Mat<f64>, what: &'static str) -> Result<()> {
    if m.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// `J^μ_ν = ∂x̂^μ/∂σ^ν`.
pub fn jacobian_matrix(flow: &FlowMap, p: &Point) -> Result<Mat<f64>> {
    flow.check_point(p)?;
    let j = flow.map.jacobian(p.coords());
    ensure_finite(&j, "Jacobian matrix")?;
    Ok(j)
}

/// Cofactor matrix of a Jacobian: Levi-Civita contraction for n ∈ {1, 3},
/// minor expansion for n = 2.
pub fn cofactor_of<T: Real>(jac: &Mat<T>) -> Mat<T> {
    match jac.rows() {
        2 | 4 => levi_civita_cofactor(jac),
        _ => jac.adjugate(),
    }
}

/// `C^λ_ρ` with `J^μ_ν C^ν_λ = J δ^μ_λ`.
pub fn cofactor_matrix(flow: &FlowMap, p: &Point) -> Result<Mat<f64>> {
    let c = cofactor_of(&jacobian_matrix(flow, p)?);
    ensure_finite(&c, "cofactor matrix")?;
    Ok(c)
}

/// `J = (1/(n+1)) J^μ_ν C^ν_μ`.
pub fn determinant_by_contraction<T: Real>(jac: &Mat<T>, cof: &Mat<T>) -> T {
    let m = jac.rows();
    let mut acc = T::zero();
    for mu in 0..m {
        for nu in 0..m {
            acc += jac[(mu, nu)] * cof[(nu, mu)];
        }
    }
    acc / m as f64
}

pub fn jacobian_determinant(flow: &FlowMap, p: &Point) -> Result<f64> {
    let jac = jacobian_matrix(flow, p)?;
    let det = determinant_by_contraction(&jac, &cofactor_of(&jac));
    if !det.is_finite() {
        return Err(Error::NonFinite("Jacobian determinant"));
    }
    let lu = jac.to_nalgebra().determinant();
    debug_assert!((det - lu).abs() <= 1e-9 * (1.0 + lu.abs()), "contraction {det} vs LU {lu}");
    if det.abs() < DEGENERACY_THRESHOLD {
        return Err(Error::DegenerateFlow { det, at: p.coords().to_vec() });
    }
    Ok(det)
}

/// `A^λ_ρ = C^λ_ρ / J = ∂σ̂^λ/∂x^ρ`.
pub fn inverse_jacobian(flow: &FlowMap, p: &Point) -> Result<Mat<f64>> {
    let det = jacobian_determinant(flow, p)?;
    Ok(cofactor_matrix(flow, p)?.scale(1.0 / det))
}

/// `g_μν = Σ_β J^β_μ J^β_ν`.
pub fn metric_tensor(flow: &FlowMap, p: &Point) -> Result<Mat<f64>> {
    let j = jacobian_matrix(flow, p)?;
    Ok(j.transpose().matmul(&j))
}

/// `∂g_μν/∂σ^λ` assembled from the flow's first and second derivatives.
fn metric_derivative(jac: &Mat<f64>, d2: &[Mat<f64>]) -> Tensor3 {
    let m = jac.rows();
    (0..m)
        .map(|lambda| {
            Mat::from_fn(m, m, |mu, nu| {
                let mut acc = 0.0;
                for beta in 0..m {
                    acc += d2[beta][(mu, lambda)] * jac[(beta, nu)] + jac[(beta, mu)] * d2[beta][(nu, lambda)];
                }
                acc
            })
        })
        .collect()
}

/// Christoffel symbols from the metric and its derivatives `dg[λ][(μ, ν)]`.
fn christoffel_from_metric(g_inv: &Mat<f64>, dg: &Tensor3) -> Tensor3 {
    let m = g_inv.rows();
    (0..m)
        .map(|alpha| {
            Mat::from_fn(m, m, |mu, nu| {
                let mut acc = 0.0;
                for rho in 0..m {
                    acc += g_inv[(alpha, rho)] * (dg[nu][(rho, mu)] + dg[mu][(rho, nu)] - dg[rho][(mu, nu)]);
                }
                0.5 * acc
            })
        })
        .collect()
}

/// `Γ^α_μν = ½ g^{αρ}(∂_ν g_ρμ + ∂_μ g_ρν − ∂_ρ g_μν)`.
pub fn christoffel_symbols(flow: &FlowMap, p: &Point) -> Result<Tensor3> {
    let jet = flow.jet(p);
    jacobian_determinant(flow, p)?;
    let g = jet.d1.transpose().matmul(&jet.d1);
    let g_inv = g.inverse().ok_or_else(|| Error::DegenerateFlow { det: g.det(), at: p.coords().to_vec() })?;
    let gamma = christoffel_from_metric(&g_inv, &metric_derivative(&jet.d1, &jet.d2));
    if gamma.iter().any(|m| !m.all_finite()) {
        return Err(Error::NonFinite("Christoffel symbols"));
    }
    Ok(gamma)
}

/// Contraction `Γ^ν_{νμ}` for each μ.
pub fn christoffel_trace(gamma: &Tensor3) -> Vec<f64> {
    let m = gamma.len();
    (0..m).map(|mu| (0..m).map(|nu| gamma[nu][(nu, mu)]).sum()).collect()
}

/// `∂J/∂σ^μ`, differentiating the determinant itself.
pub fn jacobian_determinant_gradient(flow: &FlowMap, p: &Point) -> Result<Vec<f64>> {
    let m = flow.map.size();
    let det_at = |q: &[f64]| -> f64 { flow.map.jacobian(q).det() };
    let grad: Vec<f64> = match flow.map.mode {
        DerivMode::Exact => (0..m)
            .map(|mu| {
                let q: Vec<D1> = seed(p.coords(), mu);
                let rows: Vec<Vec<D1>> =
                    flow.map.comps.iter().map(|c| crate::func::gradient(c.as_ref(), &q).1).collect();
                Mat::from_rows(&rows).det().eps
            })
            .collect(),
        DerivMode::FiniteDiff { h, order } => (0..m)
            .map(|mu| {
                let shifted = |k: f64| {
                    let mut q = p.coords().to_vec();
                    q[mu] += k * h;
                    det_at(&q)
                };
                if order == 4 {
                    (-shifted(2.0) + 8.0 * shifted(1.0) - 8.0 * shifted(-1.0) + shifted(-2.0)) / (12.0 * h)
                } else {
                    (shifted(1.0) - shifted(-1.0)) / (2.0 * h)
                }
            })
            .collect(),
    };
    if grad.iter().any(|v: &f64| !v.is_finite()) {
        return Err(Error::NonFinite("determinant gradient"));
    }
    Ok(grad)
}

/// Residual of `∂J/∂σ^μ − J Γ^ν_{νμ}` per μ.
pub fn check_jacobian_identity(flow: &FlowMap, p: &Point) -> Result<Vec<f64>> {
    let det = jacobian_determinant(flow, p)?;
    let trace = christoffel_trace(&christoffel_symbols(flow, p)?);
    let grad = jacobian_determinant_gradient(flow, p)?;
    Ok(grad.iter().zip(&trace).map(|(g, t)| g - det * t).collect())
}

/// All pointwise geometry of a flow.
#[derive(Clone, Debug)]
pub struct GeometryBundle {
    pub jac: Mat<f64>,
    pub cof: Mat<f64>,
    pub det: f64,
    pub inv: Mat<f64>,
    pub metric: Mat<f64>,
    pub gamma: Tensor3,
}

impl GeometryBundle {
    pub fn at(flow: &FlowMap, p: &Point) -> Result<Self> {
        let jac = jacobian_matrix(flow, p)?;
        let cof = cofactor_of(&jac);
        let det = jacobian_determinant(flow, p)?;
        let inv = cof.scale(1.0 / det);
        let metric = jac.transpose().matmul(&jac);
        let gamma = christoffel_symbols(flow, p)?;
        Ok(GeometryBundle { jac, cof, det, inv, metric, gamma })
    }
}

/// First-order changes of the geometry under `x̂ → x̂ + εφ̂`.
#[derive(Clone, Debug)]
pub struct GeometryPerturbation {
    pub h: Mat<f64>,
    pub d_gamma: Tensor3,
    pub d_j: f64,
    pub div_phi: f64,
}

struct PerturbationParts {
    g_inv: Mat<f64>,
    gamma: Tensor3,
    h: Mat<f64>,
    dh: Tensor3,
    det: f64,
    div_phi: f64,
}

fn perturbation_parts(flow: &FlowMap, pert: &FlowPerturbation, p: &Point) -> Result<PerturbationParts> {
    if pert.dim() != flow.dim() {
        return Err(Error::Dimension("flow and perturbation dimensions differ".into()));
    }
    let det = jacobian_determinant(flow, p)?;
    let x = flow.jet(p);
    let phi = pert.jet(p);
    let m = x.d1.rows();
    let g = x.d1.transpose().matmul(&x.d1);
    let g_inv = g.inverse().ok_or_else(|| Error::DegenerateFlow { det, at: p.coords().to_vec() })?;
    let gamma = christoffel_from_metric(&g_inv, &metric_derivative(&x.d1, &x.d2));
    // h_μν = ∂_μ φ̂^β ∂_ν x̂^β + ∂_μ x̂^β ∂_ν φ̂^β
    let h = Mat::from_fn(m, m, |mu, nu| {
        (0..m).map(|b| phi.d1[(b, mu)] * x.d1[(b, nu)] + x.d1[(b, mu)] * phi.d1[(b, nu)]).sum()
    });
    let dh: Tensor3 = (0..m)
        .map(|lambda| {
            Mat::from_fn(m, m, |mu, nu| {
                (0..m)
                    .map(|b| {
                        phi.d2[b][(mu, lambda)] * x.d1[(b, nu)]
                            + phi.d1[(b, mu)] * x.d2[b][(nu, lambda)]
                            + x.d2[b][(mu, lambda)] * phi.d1[(b, nu)]
                            + x.d1[(b, mu)] * phi.d2[b][(nu, lambda)]
                    })
                    .sum()
            })
        })
        .collect();
    let inv = cofactor_of(&x.d1).scale(1.0 / det);
    let div_phi = contract_divergence(&inv, &phi.d1);
    Ok(PerturbationParts { g_inv, gamma, h, dh, det, div_phi })
}

/// `h_μν`, `δΓ` (non-covariant form), `δJ = J ∂φ̂^μ/∂x^μ`.
pub fn geometry_perturbation(flow: &FlowMap, pert: &FlowPerturbation, p: &Point) -> Result<GeometryPerturbation> {
    let parts = perturbation_parts(flow, pert, p)?;
    let m = parts.h.rows();
    let PerturbationParts { g_inv, gamma, h, dh, det, div_phi } = parts;
    // δΓ^α_μν = −g^{αρ} h_ρβ Γ^β_μν + ½ g^{αρ}(∂_ν h_ρμ + ∂_μ h_ρν − ∂_ρ h_μν)
    let gh = g_inv.matmul(&h);
    let half = christoffel_from_metric(&g_inv, &dh);
    let d_gamma = (0..m)
        .map(|alpha| {
            Mat::from_fn(m, m, |mu, nu| {
                let mut acc = half[alpha][(mu, nu)];
                for beta in 0..m {
                    acc -= gh[(alpha, beta)] * gamma[beta][(mu, nu)];
                }
                acc
            })
        })
        .collect::<Tensor3>();
    if d_gamma.iter().any(|t| !t.all_finite()) || !h.all_finite() {
        return Err(Error::NonFinite("geometry perturbation"));
    }
    Ok(GeometryPerturbation { h, d_gamma, d_j: det * div_phi, div_phi })
}

/// `δΓ^α_μν = ½ g^{αρ}(h_ρμ;ν + h_ρν;μ − h_μν;ρ)` with covariant derivatives
/// built from the unperturbed connection.
pub fn d_gamma_covariant(flow: &FlowMap, pert: &FlowPerturbation, p: &Point) -> Result<Tensor3> {
    let PerturbationParts { g_inv, gamma, h, dh, .. } = perturbation_parts(flow, pert, p)?;
    let m = h.rows();
    // cov[ν][(ρ, μ)] = h_ρμ;ν = ∂_ν h_ρμ − Γ^λ_νρ h_λμ − Γ^λ_νμ h_ρλ
    let cov: Tensor3 = (0..m)
        .map(|nu| {
            Mat::from_fn(m, m, |rho, mu| {
                let mut acc = dh[nu][(rho, mu)];
                for l in 0..m {
                    acc -= gamma[l][(nu, rho)] * h[(l, mu)] + gamma[l][(nu, mu)] * h[(rho, l)];
                }
                acc
            })
        })
        .collect();
    Ok(christoffel_from_metric(&g_inv, &cov))
}

/// Maximum entrywise gap between two rank-3 arrays.
pub fn tensor3_max_diff(a: &Tensor3, b: &Tensor3) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max(x.max_abs_diff(y)))
}

/// Generic helper for tests and callers that hold a `GenericFn` flow component.
pub fn flow_from_generic<G: GenericFn + 'static>(comps: Vec<G>) -> Result<FlowMap> {
    FlowMap::new(comps.into_iter().map(|c| Arc::new(c) as SFn).collect(), DerivMode::Exact)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    fn pt(c: &[f64]) -> Point {
        Point::new(c.to_vec()).unwrap()
    }

    #[test]
    fn identity_flow_geometry() {
        for n in 1..=3 {
            let flow = FlowMap::identity(n);
            let p = pt(&vec![0.3; n + 1]);
            let id = Mat::identity(n + 1);
            assert_eq!(jacobian_matrix(&flow, &p).unwrap(), id);
            assert_eq!(cofactor_matrix(&flow, &p).unwrap(), id);
            assert_eq!(jacobian_determinant(&flow, &p).unwrap(), 1.0);
            assert_eq!(inverse_jacobian(&flow, &p).unwrap(), id);
            assert_eq!(metric_tensor(&flow, &p).unwrap(), id);
            assert!(christoffel_symbols(&flow, &p).unwrap().iter().all(|m| m.max_abs() == 0.0));
            assert!(check_jacobian_identity(&flow, &p).unwrap().iter().all(|r| *r == 0.0));
        }
    }

    #[test]
    fn shear_flow_hand_values() {
        let flow = FlowMap::from_exprs(&["t", "s1 + 0.5 * t"]).unwrap();
        let p = pt(&[0.7, -0.2]);
        let jac = jacobian_matrix(&flow, &p).unwrap();
        assert_eq!(jac.to_rows(), vec![vec![1.0, 0.0], vec![0.5, 1.0]]);
        assert_eq!(cofactor_matrix(&flow, &p).unwrap().to_rows(), vec![vec![1.0, 0.0], vec![-0.5, 1.0]]);
        assert_eq!(jacobian_determinant(&flow, &p).unwrap(), 1.0);
        assert_eq!(inverse_jacobian(&flow, &p).unwrap().to_rows(), vec![vec![1.0, 0.0], vec![-0.5, 1.0]]);
        assert_eq!(metric_tensor(&flow, &p).unwrap().to_rows(), vec![vec![1.25, 0.5], vec![0.5, 1.0]]);
        assert!(christoffel_symbols(&flow, &p).unwrap().iter().all(|m| m.max_abs() == 0.0));
    }

    #[test]
    fn exponential_flow_hand_values() {
        let flow = FlowMap::from_exprs(&["t", "exp(s1)"]).unwrap();
        let p = pt(&[0.0, 1.0]);
        let jac = jacobian_matrix(&flow, &p).unwrap();
        assert!(jac.max_abs_diff(&Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, E]])) < 1e-15);
        assert!((jacobian_determinant(&flow, &p).unwrap() - E).abs() < 1e-15);
        let g = metric_tensor(&flow, &p).unwrap();
        assert!(g.max_abs_diff(&Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, E * E]])) < 1e-13);
        let gamma = christoffel_symbols(&flow, &p).unwrap();
        for a in 0..2 {
            for m in 0..2 {
                for n in 0..2 {
                    let expect = if (a, m, n) == (1, 1, 1) { 1.0 } else { 0.0 };
                    assert!((gamma[a][(m, n)] - expect).abs() < 1e-14);
                }
            }
        }
        let grad = jacobian_determinant_gradient(&flow, &p).unwrap();
        assert!((grad[1] - E).abs() < 1e-14);
        assert!(check_jacobian_identity(&flow, &p).unwrap().iter().all(|r| r.abs() < 1e-14));
    }

    #[test]
    fn time_identity_inverse_layout() {
        // ∂x̂/∂σ = 2, ∂x̂/∂t = 3
        let flow = FlowMap::from_exprs(&["t", "2 * s1 + 3 * t"]).unwrap();
        let a = inverse_jacobian(&flow, &pt(&[0.1, 0.2])).unwrap();
        assert_eq!(a.to_rows(), vec![vec![1.0, 0.0], vec![-1.5, 0.5]]);
    }

    #[test]
    fn degenerate_flow_is_rejected() {
        let flow = FlowMap::from_exprs(&["t", "0 * s1"]).unwrap();
        assert!(matches!(jacobian_determinant(&flow, &pt(&[0.0, 0.0])), Err(Error::DegenerateFlow { .. })));
        assert!(inverse_jacobian(&flow, &pt(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn non_finite_derivatives_are_reported() {
        let flow = FlowMap::from_exprs(&["t", "sqrt(s1)"]).unwrap();
        assert!(matches!(jacobian_matrix(&flow, &pt(&[0.0, 0.0])), Err(Error::NonFinite(_))));
    }

    #[test]
    fn dimension_checks() {
        assert!(Point::new(vec![0.0]).is_err());
        assert!(Point::new(vec![0.0; 5]).is_err());
        assert!(Point::new(vec![f64::NAN, 0.0]).is_err());
        let flow = FlowMap::identity(2);
        assert!(jacobian_matrix(&flow, &pt(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn null_and_stretch_perturbations() {
        let flow = FlowMap::identity(1);
        let p = pt(&[0.2, 0.4]);
        let gp = geometry_perturbation(&flow, &FlowPerturbation::zero(1), &p).unwrap();
        assert_eq!(gp.d_j, 0.0);
        assert_eq!(gp.h.max_abs(), 0.0);
        assert!(gp.d_gamma.iter().all(|m| m.max_abs() == 0.0));

        let pert = FlowPerturbation::from_exprs(&["0", "s1"]).unwrap();
        let gp = geometry_perturbation(&flow, &pert, &p).unwrap();
        assert_eq!(gp.d_j, 1.0);
        assert_eq!(gp.div_phi, 1.0);
        assert_eq!(gp.h.to_rows(), vec![vec![0.0, 0.0], vec![0.0, 2.0]]);
    }

    #[test]
    fn finite_difference_mode_approximates_exact() {
        let exact = FlowMap::from_exprs(&["t", "s1 + 0.3 * sin(s1) * t"]).unwrap();
        let fd = FlowMap::new(exact.map().components().to_vec(), DerivMode::FiniteDiff { h: 1e-3, order: 4 }).unwrap();
        let p = pt(&[0.4, 0.9]);
        let a = GeometryBundle::at(&exact, &p).unwrap();
        let b = GeometryBundle::at(&fd, &p).unwrap();
        assert!(a.jac.max_abs_diff(&b.jac) < 1e-10);
        assert!(tensor3_max_diff(&a.gamma, &b.gamma) < 1e-6);
        assert!(FlowMap::new(exact.map().components().to_vec(), DerivMode::FiniteDiff { h: 1e-3, order: 3 }).is_err());
    }
}
