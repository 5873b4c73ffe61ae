//! PDE residuals in conjugate-flow intrinsic coordinates.
//!
//! A law is a pointwise function of the label point, the jets of the fields
//! and the jet of the flow. Cartesian derivatives are recovered through the
//! flow with `∂U/∂x^μ = u_{,ν} A^ν_μ` and
//! `∂²U/∂x^μ∂x^ν = u_{,λρ} A^ρ_ν A^λ_μ + u_{,λ} ∂_ρA^λ_μ A^ρ_ν`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::determine::AlgebraicFlowAnsatz;
use crate::dual::{Dual, Real, D1, D2, D3, D4};
use crate::error::{Error, Result};
use crate::expr::{Expr, Vars};
use crate::fields::{ScalarField, VectorField};
use crate::func::{Compose, Coord, Partial, SFn};
use crate::geometry::{FlowMap, FlowPerturbation, Point, DEGENERACY_THRESHOLD};
use crate::linalg::Mat;

/// Value, gradient and Hessian of a scalar field at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldJet<T> {
    pub v: T,
    pub g: Vec<T>,
    pub h: Mat<T>,
}

impl<T: Real> FieldJet<T> {
    pub fn zero(m: usize) -> Self {
        FieldJet { v: T::zero(), g: vec![T::zero(); m], h: Mat::zeros(m, m) }
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U) -> FieldJet<U> {
        FieldJet { v: f(self.v), g: self.g.iter().map(|&x| f(x)).collect(), h: self.h.map(&f) }
    }
}

/// Value, Jacobian `d1[(μ, ν)] = ∂x̂^μ/∂σ^ν` and Hessians `d2[μ][(ν, λ)]` of a flow.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowJet<T> {
    pub x: Vec<T>,
    pub d1: Mat<T>,
    pub d2: Vec<Mat<T>>,
}

impl<T: Real> FlowJet<T> {
    /// The identity flow at `s`.
    pub fn identity(s: &[T]) -> Self {
        let m = s.len();
        FlowJet { x: s.to_vec(), d1: Mat::identity(m), d2: vec![Mat::zeros(m, m); m] }
    }

    pub fn size(&self) -> usize {
        self.x.len()
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U) -> FlowJet<U> {
        FlowJet {
            x: self.x.iter().map(|&v| f(v)).collect(),
            d1: self.d1.map(&f),
            d2: self.d2.iter().map(|m| m.map(&f)).collect(),
        }
    }

    /// `A = J⁻¹`, so `A[(ν, μ)] = ∂σ^ν/∂x^μ`.
    pub fn inverse(&self) -> Option<Mat<T>> {
        self.d1.inverse()
    }

    /// `∂A/∂σ^ρ = −A (∂J/∂σ^ρ) A` for each ρ.
    pub fn inverse_derivative(&self, a: &Mat<T>) -> Vec<Mat<T>> {
        let m = self.size();
        (0..m)
            .map(|rho| {
                let dj = Mat::from_fn(m, m, |mu, nu| self.d2[mu][(nu, rho)]);
                a.matmul(&dj).matmul(a).scale(-T::one())
            })
            .collect()
    }

    /// `Γ^β_{βρ} = ∂ ln J / ∂σ^ρ = A^ν_μ ∂J^μ_ν/∂σ^ρ`.
    pub fn christoffel_trace(&self, a: &Mat<T>) -> Vec<T> {
        let m = self.size();
        (0..m)
            .map(|rho| {
                let mut acc = T::zero();
                for mu in 0..m {
                    for nu in 0..m {
                        acc += a[(nu, mu)] * self.d2[mu][(nu, rho)];
                    }
                }
                acc
            })
            .collect()
    }
}

/// `∂U/∂x^μ`.
pub fn push_gradient<T: Real>(u: &FieldJet<T>, a: &Mat<T>) -> Vec<T> {
    let m = u.g.len();
    (0..m)
        .map(|mu| {
            let mut acc = T::zero();
            for nu in 0..m {
                acc += u.g[nu] * a[(nu, mu)];
            }
            acc
        })
        .collect()
}

/// `∂²U/∂x^μ∂x^ν`.
pub fn push_hessian<T: Real>(u: &FieldJet<T>, a: &Mat<T>, da: &[Mat<T>]) -> Mat<T> {
    let m = u.g.len();
    Mat::from_fn(m, m, |mu, nu| {
        let mut acc = T::zero();
        for lam in 0..m {
            for rho in 0..m {
                acc += u.h[(lam, rho)] * a[(rho, nu)] * a[(lam, mu)];
                acc += u.g[lam] * da[rho][(lam, mu)] * a[(rho, nu)];
            }
        }
        acc
    })
}

/// Inverse Jacobian with its label derivatives; `None` for a degenerate flow.
pub fn pushforward_frame<T: Real>(x: &FlowJet<T>) -> Option<(Mat<T>, Vec<Mat<T>>)> {
    if x.d1.det().re().abs() < DEGENERACY_THRESHOLD {
        return None;
    }
    let a = x.inverse()?;
    let da = x.inverse_derivative(&a);
    Some((a, da))
}

/// A pointwise residual law evaluable at every dual depth.
pub trait JetLaw: Send + Sync + fmt::Debug {
    fn name(&self) -> String;
    /// Spatial dimension `n`, or `None` if any is accepted.
    fn dim(&self) -> Option<usize>;
    fn n_fields(&self) -> usize;
    fn n_out(&self) -> usize;
    fn residual_f64(&self, s: &[f64], u: &[FieldJet<f64>], x: &FlowJet<f64>) -> Vec<f64>;
    fn residual_d1(&self, s: &[D1], u: &[FieldJet<D1>], x: &FlowJet<D1>) -> Vec<D1>;
    fn residual_d2(&self, s: &[D2], u: &[FieldJet<D2>], x: &FlowJet<D2>) -> Vec<D2>;
    fn residual_d3(&self, s: &[D3], u: &[FieldJet<D3>], x: &FlowJet<D3>) -> Vec<D3>;
    fn residual_d4(&self, s: &[D4], u: &[FieldJet<D4>], x: &FlowJet<D4>) -> Vec<D4>;
}

/// Implement once with a generic residual; the blanket impl provides [`JetLaw`].
pub trait GenericLaw: Send + Sync + fmt::Debug {
    fn name(&self) -> String;
    fn dim(&self) -> Option<usize>;
    fn n_fields(&self) -> usize;
    fn n_out(&self) -> usize;
    fn residual<T: Real>(&self, s: &[T], u: &[FieldJet<T>], x: &FlowJet<T>) -> Vec<T>;
}

impl<G: GenericLaw> JetLaw for G {
    fn name(&self) -> String {
        GenericLaw::name(self)
    }
    fn dim(&self) -> Option<usize> {
        GenericLaw::dim(self)
    }
    fn n_fields(&self) -> usize {
        GenericLaw::n_fields(self)
    }
    fn n_out(&self) -> usize {
        GenericLaw::n_out(self)
    }
    fn residual_f64(&self, s: &[f64], u: &[FieldJet<f64>], x: &FlowJet<f64>) -> Vec<f64> {
        self.residual(s, u, x)
    }
    fn residual_d1(&self, s: &[D1], u: &[FieldJet<D1>], x: &FlowJet<D1>) -> Vec<D1> {
        self.residual(s, u, x)
    }
    fn residual_d2(&self, s: &[D2], u: &[FieldJet<D2>], x: &FlowJet<D2>) -> Vec<D2> {
        self.residual(s, u, x)
    }
    fn residual_d3(&self, s: &[D3], u: &[FieldJet<D3>], x: &FlowJet<D3>) -> Vec<D3> {
        self.residual(s, u, x)
    }
    fn residual_d4(&self, s: &[D4], u: &[FieldJet<D4>], x: &FlowJet<D4>) -> Vec<D4> {
        self.residual(s, u, x)
    }
}

pub type Law = Arc<dyn JetLaw>;

/// Evaluate a law at any scalar type.
pub fn call_law<T: Real>(law: &dyn JetLaw, s: &[T], u: &[FieldJet<T>], x: &FlowJet<T>) -> Vec<T> {
    T::call_law(law, s, u, x)
}

fn nan_out<T: Real>(k: usize) -> Vec<T> {
    vec![T::cst(f64::NAN); k]
}

/// `U_t − α ΔU` assembled by pushforward through a general flow.
#[derive(Clone, Debug)]
pub struct HeatLaw {
    pub alpha: f64,
}

impl GenericLaw for HeatLaw {
    fn name(&self) -> String {
        "heat".into()
    }
    fn dim(&self) -> Option<usize> {
        None
    }
    fn n_fields(&self) -> usize {
        1
    }
    fn n_out(&self) -> usize {
        1
    }
    fn residual<T: Real>(&self, _s: &[T], u: &[FieldJet<T>], x: &FlowJet<T>) -> Vec<T> {
        let Some((a, da)) = pushforward_frame(x) else { return nan_out(1) };
        let grad = push_gradient(&u[0], &a);
        let hess = push_hessian(&u[0], &a, &da);
        let mut r = grad[0];
        for k in 1..x.size() {
            r -= hess[(k, k)] * self.alpha;
        }
        vec![r]
    }
}

/// The 1+1D heat law written term by term for a time-identity flow:
/// `u_t − u_σ x_t / x_σ − α (x_σ u_σσ − x_σσ u_σ) / x_σ³`.
#[derive(Clone, Debug)]
pub struct HeatLiteralLaw {
    pub alpha: f64,
}

impl GenericLaw for HeatLiteralLaw {
    fn name(&self) -> String {
        "heat_literal".into()
    }
    fn dim(&self) -> Option<usize> {
        Some(1)
    }
    fn n_fields(&self) -> usize {
        1
    }
    fn n_out(&self) -> usize {
        1
    }
    fn residual<T: Real>(&self, _s: &[T], u: &[FieldJet<T>], x: &FlowJet<T>) -> Vec<T> {
        let u = &u[0];
        let xs = x.d1[(1, 1)];
        let xt = x.d1[(1, 0)];
        let xss = x.d2[1][(1, 1)];
        let r = u.g[0] - u.g[1] * xt / xs - (xs * u.h[(1, 1)] - xss * u.g[1]) * self.alpha / xs.powi(3);
        vec![r]
    }
}

/// Incompressible Navier–Stokes. Fields `u^1..u^n, p`; outputs the `n`
/// momentum residuals followed by the continuity residual.
#[derive(Clone, Debug)]
pub struct NavierStokesLaw {
    pub n: usize,
    pub re: f64,
}

impl GenericLaw for NavierStokesLaw {
    fn name(&self) -> String {
        "navier_stokes".into()
    }
    fn dim(&self) -> Option<usize> {
        Some(self.n)
    }
    fn n_fields(&self) -> usize {
        self.n + 1
    }
    fn n_out(&self) -> usize {
        self.n + 1
    }
    fn residual<T: Real>(&self, _s: &[T], u: &[FieldJet<T>], x: &FlowJet<T>) -> Vec<T> {
        let n = self.n;
        let Some((a, da)) = pushforward_frame(x) else { return nan_out(n + 1) };
        let grads: Vec<Vec<T>> = u.iter().map(|f| push_gradient(f, &a)).collect();
        let mut out = Vec::with_capacity(n + 1);
        for j in 1..=n {
            let uj = &u[j - 1];
            let hess = push_hessian(uj, &a, &da);
            let mut r = grads[j - 1][0];
            for k in 1..=n {
                r += u[k - 1].v * grads[j - 1][k];
                r -= hess[(k, k)] / self.re;
            }
            r += grads[n][j];
            out.push(r);
        }
        let mut div = T::zero();
        for k in 1..=n {
            div += grads[k - 1][k];
        }
        out.push(div);
        out
    }
}

/// `−ΔU + κ U³ − f(σ)` with an optional source.
#[derive(Clone, Debug)]
pub struct SemilinearPoissonLaw {
    pub cubic: f64,
    pub source: Option<SFn>,
}

impl GenericLaw for SemilinearPoissonLaw {
    fn name(&self) -> String {
        "semilinear_poisson".into()
    }
    fn dim(&self) -> Option<usize> {
        None
    }
    fn n_fields(&self) -> usize {
        1
    }
    fn n_out(&self) -> usize {
        1
    }
    fn residual<T: Real>(&self, s: &[T], u: &[FieldJet<T>], x: &FlowJet<T>) -> Vec<T> {
        let Some((a, da)) = pushforward_frame(x) else { return nan_out(1) };
        let hess = push_hessian(&u[0], &a, &da);
        let mut r = u[0].v.powi(3) * self.cubic;
        for k in 1..x.size() {
            r -= hess[(k, k)];
        }
        if let Some(f) = &self.source {
            r -= crate::func::call(f.as_ref(), s);
        }
        vec![r]
    }
}

/// A scalar law `f` written as an expression over intrinsic jet variables.
///
/// Variables, with `m = n + 1` and indices running over `0..m`:
/// `s0..sn` (and `t`, `x`, `y`, `z`), `u`, `u_i`, `u_ij`, `X<μ>_<ν>` for
/// `∂x̂^μ/∂σ^ν` and `X<μ>_<νλ>` for second derivatives. Aliases `u_t`, `u_x`,
/// `u_xx`, `u_tx`, ... name the same slots as the numeric forms.
#[derive(Clone, Debug)]
pub struct ExprLaw {
    n: usize,
    expr: Expr,
}

impl ExprLaw {
    pub fn parse(src: &str, n: usize, params: &BTreeMap<String, f64>) -> Result<Self> {
        if !(1..=3).contains(&n) {
            return Err(Error::Dimension(format!("law dimension must be 1..=3, got {n}")));
        }
        let vars = Self::vars(n);
        let expr = Expr::parse(src, &vars, params)?;
        Ok(ExprLaw { n, expr })
    }

    pub fn source(&self) -> &str {
        self.expr.source()
    }

    fn vars(n: usize) -> Vars {
        let m = n + 1;
        let names = ["t", "x", "y", "z"];
        let mut v = Vars::spacetime(n);
        v.push("u");
        for i in 0..m {
            let slot = v.push(&format!("u_{i}"));
            v.alias(&format!("u_{}", names[i]), slot);
        }
        for i in 0..m {
            for j in 0..m {
                let slot = v.push(&format!("u_{i}{j}"));
                v.alias(&format!("u_{}{}", names[i], names[j]), slot);
            }
        }
        for mu in 0..m {
            for nu in 0..m {
                v.push(&format!("X{mu}_{nu}"));
            }
        }
        for mu in 0..m {
            for nu in 0..m {
                for lam in 0..m {
                    v.push(&format!("X{mu}_{nu}{lam}"));
                }
            }
        }
        v
    }
}

impl GenericLaw for ExprLaw {
    fn name(&self) -> String {
        format!("custom({})", self.expr.source())
    }
    fn dim(&self) -> Option<usize> {
        Some(self.n)
    }
    fn n_fields(&self) -> usize {
        1
    }
    fn n_out(&self) -> usize {
        1
    }
    fn residual<T: Real>(&self, s: &[T], u: &[FieldJet<T>], x: &FlowJet<T>) -> Vec<T> {
        let m = self.n + 1;
        let u = &u[0];
        let mut args = Vec::with_capacity(m + 1 + m + 2 * m * m + m * m * m);
        args.extend_from_slice(s);
        args.push(u.v);
        args.extend_from_slice(&u.g);
        args.extend(u.h.iter().copied());
        args.extend(x.d1.iter().copied());
        for h in &x.d2 {
            args.extend(h.iter().copied());
        }
        vec![self.expr.node().eval(&args)]
    }
}

/// Field perturbation to flow perturbation: `φ̂^μ = (δx̂^μ/δu^j) φ^j`.
pub type ForwardFn = Arc<dyn Fn(&VectorField, &VectorField) -> Result<FlowPerturbation> + Send + Sync>;
/// Field to flow: `u ↦ x̂(·; u)`.
pub type FlowOfFn = Arc<dyn Fn(&VectorField) -> Result<FlowMap> + Send + Sync>;
/// Flow perturbation to field perturbation. Held as a slot only.
pub type BackwardFn = Arc<dyn Fn(&VectorField, &FlowPerturbation) -> Result<VectorField> + Send + Sync>;

/// How the conjugate flow depends on the solution.
#[derive(Clone)]
pub enum FlowLink {
    /// The flow does not depend on `u`.
    Fixed(FlowMap),
    /// `x̂^μ(σ, u(σ))`, pointwise in the first field.
    Algebraic(AlgebraicFlowAnsatz),
    /// Arbitrary closures.
    Custom { flow_of: FlowOfFn, forward: ForwardFn, backward: Option<BackwardFn> },
}

impl fmt::Debug for FlowLink {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FlowLink::Fixed(flow) => f.debug_tuple("Fixed").field(flow).finish(),
            FlowLink::Algebraic(a) => f.debug_tuple("Algebraic").field(a).finish(),
            FlowLink::Custom { backward, .. } => {
                f.debug_struct("Custom").field("backward", &backward.is_some()).finish_non_exhaustive()
            }
        }
    }
}

impl FlowLink {
    pub fn identity(n: usize) -> Self {
        FlowLink::Fixed(FlowMap::identity(n))
    }

    pub fn flow_of(&self, u: &VectorField) -> Result<FlowMap> {
        match self {
            FlowLink::Fixed(flow) => Ok(flow.clone()),
            FlowLink::Algebraic(ansatz) => ansatz.flow_of(&u.components()[0]),
            FlowLink::Custom { flow_of, .. } => flow_of(u),
        }
    }

    pub fn forward(&self, u: &VectorField, phi: &VectorField) -> Result<FlowPerturbation> {
        if u.len() != phi.len() {
            return Err(Error::Dimension(format!("{} fields but {} perturbation components", u.len(), phi.len())));
        }
        match self {
            FlowLink::Fixed(flow) => Ok(FlowPerturbation::zero(flow.dim())),
            FlowLink::Algebraic(ansatz) => ansatz.perturbation(&u.components()[0], &phi.components()[0]),
            FlowLink::Custom { forward, .. } => forward(u, phi),
        }
    }

    pub fn backward(&self) -> Option<&BackwardFn> {
        match self {
            FlowLink::Custom { backward, .. } => backward.as_ref(),
            _ => None,
        }
    }

    /// For n = 2: `x̂ = σ + κ (0, ∂u/∂σ², −∂u/∂σ¹)`, so every induced
    /// perturbation `κ (0, φ_{,2}, −φ_{,1})` is divergence-free in the labels.
    pub fn stream_function(kappa: f64) -> Self {
        let m = 3;
        let build = move |f: &ScalarField| -> Vec<SFn> {
            let g = f.as_fn();
            let d1: SFn = Arc::new(Partial { f: g.clone(), axis: 1 });
            let d2: SFn = Arc::new(Partial { f: g, axis: 2 });
            vec![d2, d1]
        };
        let flow_of: FlowOfFn = Arc::new(move |u: &VectorField| {
            let [d2, d1] = <[SFn; 2]>::try_from(build(&u.components()[0])).expect("two partials");
            let comps: Vec<SFn> = vec![
                Arc::new(Coord { arity: m, index: 0 }),
                Arc::new(crate::func::LinComb {
                    arity: m,
                    offset: 0.0,
                    terms: vec![(1.0, Arc::new(Coord { arity: m, index: 1 })), (kappa, d2)],
                }),
                Arc::new(crate::func::LinComb {
                    arity: m,
                    offset: 0.0,
                    terms: vec![(1.0, Arc::new(Coord { arity: m, index: 2 })), (-kappa, d1)],
                }),
            ];
            Ok(FlowMap::new(comps, crate::geometry::DerivMode::Exact)?.with_time_identity(true))
        });
        let forward: ForwardFn = Arc::new(move |_u: &VectorField, phi: &VectorField| {
            let [d2, d1] = <[SFn; 2]>::try_from(build(&phi.components()[0])).expect("two partials");
            let comps: Vec<SFn> = vec![
                Arc::new(crate::func::Const { arity: m, value: 0.0 }),
                Arc::new(crate::func::LinComb { arity: m, offset: 0.0, terms: vec![(kappa, d2)] }),
                Arc::new(crate::func::LinComb { arity: m, offset: 0.0, terms: vec![(-kappa, d1)] }),
            ];
            FlowPerturbation::new(comps, crate::geometry::DerivMode::Exact)
        });
        FlowLink::Custom { flow_of, forward, backward: None }
    }
}

/// A named pressure field for the Navier–Stokes law.
#[derive(Clone, Debug)]
pub struct PressureField(pub ScalarField);

/// The operator `N_x̂(u)`: a law together with its flow link.
#[derive(Clone, Debug)]
pub struct IntrinsicOperator {
    law: Law,
    link: FlowLink,
    params: BTreeMap<String, f64>,
}

impl IntrinsicOperator {
    pub fn new(law: Law, link: FlowLink) -> Self {
        IntrinsicOperator { law, link, params: BTreeMap::new() }
    }

    pub fn with_params(mut self, params: BTreeMap<String, f64>) -> Self {
        self.params = params;
        self
    }

    pub fn law(&self) -> &dyn JetLaw {
        self.law.as_ref()
    }

    pub fn law_arc(&self) -> &Law {
        &self.law
    }

    pub fn link(&self) -> &FlowLink {
        &self.link
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn with_link(&self, link: FlowLink) -> Self {
        IntrinsicOperator { law: self.law.clone(), link, params: self.params.clone() }
    }

    pub fn flow_of(&self, u: &VectorField) -> Result<FlowMap> {
        self.link.flow_of(u)
    }

    fn check(&self, u: &VectorField, flow: &FlowMap) -> Result<()> {
        if u.len() != self.law.n_fields() {
            return Err(Error::Dimension(format!(
                "law {} takes {} fields, got {}",
                self.law.name(),
                self.law.n_fields(),
                u.len()
            )));
        }
        if u.arity() != flow.dim() + 1 {
            return Err(Error::Dimension(format!("fields take {} labels, flow has {}", u.arity(), flow.dim() + 1)));
        }
        if let Some(n) = self.law.dim() {
            if n != flow.dim() {
                return Err(Error::Dimension(format!("law {} needs n = {n}, flow has n = {}", self.law.name(), flow.dim())));
            }
        }
        Ok(())
    }

    /// Residual components at `p`.
    pub fn residual(&self, u: &VectorField, flow: &FlowMap, p: &Point) -> Result<Vec<f64>> {
        self.check(u, flow)?;
        let x = flow.jet(p);
        let det = x.d1.det();
        if !det.is_finite() {
            return Err(Error::NonFinite("flow Jacobian"));
        }
        if det.abs() < DEGENERACY_THRESHOLD {
            return Err(Error::DegenerateFlow { det, at: p.coords().to_vec() });
        }
        let jets = u.jets(p.coords())?;
        let r = self.law.residual_f64(p.coords(), &jets, &x);
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("law residual"));
        }
        Ok(r)
    }

    /// Residual at a generic point; fields and flow are differentiated through it.
    pub fn residual_at<T: Real>(&self, u: &VectorField, flow: &FlowMap, s: &[T]) -> Vec<T>
    where
        Dual<T>: Real,
        Dual<Dual<T>>: Real,
    {
        let x = flow.map().jet_at(s);
        let jets = u.jets_at(s);
        call_law(self.law.as_ref(), s, &jets, &x)
    }
}

fn check_flow_point(flow: &FlowMap, p: &Point) -> Result<FlowJet<f64>> {
    if p.dim() != flow.dim() {
        return Err(Error::Dimension(format!("flow has n = {}, point has n = {}", flow.dim(), p.dim())));
    }
    let x = flow.jet(p);
    if !x.d1.all_finite() || x.d2.iter().any(|h| !h.all_finite()) {
        return Err(Error::NonFinite("flow derivatives"));
    }
    Ok(x)
}

fn frame_at(flow: &FlowMap, p: &Point) -> Result<(Mat<f64>, Vec<Mat<f64>>)> {
    let x = check_flow_point(flow, p)?;
    pushforward_frame(&x).ok_or_else(|| Error::DegenerateFlow { det: x.d1.det(), at: p.coords().to_vec() })
}

/// `∂U/∂x^μ` at the label point `p`.
pub fn pushforward_gradient(u: &ScalarField, flow: &FlowMap, p: &Point) -> Result<Vec<f64>> {
    let (a, _) = frame_at(flow, p)?;
    Ok(push_gradient(&u.jet(p.coords())?, &a))
}

/// `∂²U/∂x^μ∂x^ν` at the label point `p`.
pub fn pushforward_hessian(u: &ScalarField, flow: &FlowMap, p: &Point) -> Result<Mat<f64>> {
    let (a, da) = frame_at(flow, p)?;
    Ok(push_hessian(&u.jet(p.coords())?, &a, &da))
}

/// The literal 1+1D intrinsic heat residual for a time-identity flow.
pub fn heat_residual(u: &ScalarField, flow: &FlowMap, alpha: f64, p: &Point) -> Result<f64> {
    if flow.dim() != 1 {
        return Err(Error::Dimension(format!("heat residual is 1+1D, flow has n = {}", flow.dim())));
    }
    if !flow.time_identity() {
        return Err(Error::Invalid("heat residual needs a time-identity flow".into()));
    }
    let x = check_flow_point(flow, p)?;
    let xs = x.d1[(1, 1)];
    if xs <= DEGENERACY_THRESHOLD {
        return Err(Error::DegenerateFlow { det: xs, at: p.coords().to_vec() });
    }
    let jet = u.jet(p.coords())?;
    let r = HeatLiteralLaw { alpha }.residual(p.coords(), &[jet], &x)[0];
    if r.is_finite() {
        Ok(r)
    } else {
        Err(Error::NonFinite("heat residual"))
    }
}

/// Momentum residuals per component, then continuity.
pub fn navier_stokes_residual(
    u: &VectorField,
    pres: &PressureField,
    flow: &FlowMap,
    re: f64,
    p: &Point,
) -> Result<Vec<f64>> {
    let n = flow.dim();
    if !(2..=3).contains(&n) || u.len() != n {
        return Err(Error::Dimension(format!("Navier–Stokes needs n ∈ {{2, 3}} velocity components, got n = {n}, {}", u.len())));
    }
    let mut comps = u.components().to_vec();
    comps.push(pres.0.clone());
    let fields = VectorField::new(comps)?;
    let op = IntrinsicOperator::new(Arc::new(NavierStokesLaw { n, re }), FlowLink::Fixed(flow.clone()));
    op.residual(&fields, flow, p)
}

/// Composition `f ∘ x̂` of a Cartesian field with a flow, as a label field.
pub fn compose_with_flow(f: &ScalarField, flow: &FlowMap) -> ScalarField {
    ScalarField::Analytic(Arc::new(Compose { outer: f.as_fn(), inner: flow.map().components().to_vec() }))
}
