//! Determining equations for symmetrizing algebraic flows.
//!
//! For a scalar second-order law `f(σ; u; u_{,μ}; u_{,μν}; x̂^μ_{,ν}; x̂^μ_{,νλ})`
//! and a flow `x̂^μ(σ, u)` that depends pointwise on the solution, the
//! Gâteaux derivative of the operator has the form `Hφ + B^ν φ_{,ν} + F^{ρν} φ_{,ρν}`.
//! Formal symmetry under the advective form holds iff `F` is symmetric and
//! `R^ν = F^{νρ}_{,ρ} + Γ^β_{βρ} F^{ρν} − B^ν` vanishes.
//!
//! Partials of `f` with respect to `u_{,μν}` and `x̂^μ_{,νλ}` are taken slot by
//! slot and then symmetrized, so `F` is symmetric by construction and the
//! reported antisymmetric part measures rounding only.
//!
//! Sign convention: the classical residual returned by [`tonti_residual`] is
//! `∂f/∂u_{,ν} − ∂_μ(∂f/∂u_{,μν})`, which equals `−R^ν` when the flow does not
//! depend on `u`.

use std::fmt;
use std::sync::Arc;

use crate::dual::{seed, Dual, Real};
use crate::error::{Error, Result};
use crate::expr::{Expr, Vars};
use crate::fields::{Grid, ScalarField};
use crate::func::{call, jet2, Compose, Coord, GenericFn, Partial, Product, SFn};
use crate::geometry::{DerivMode, FlowMap, FlowPerturbation, Point};
use crate::intrinsic::{call_law, FieldJet, FlowJet, JetLaw};
use crate::linalg::Mat;

/// `f` with its trailing arguments fixed.
#[derive(Debug)]
struct BindTail {
    f: SFn,
    values: Vec<f64>,
}

impl GenericFn for BindTail {
    fn arity(&self) -> usize {
        self.f.arity() - self.values.len()
    }
    fn eval<T: Real>(&self, x: &[T]) -> T {
        let mut args = x.to_vec();
        args.extend(self.values.iter().map(|&v| T::cst(v)));
        call(self.f.as_ref(), &args)
    }
}

/// A flow `x̂^μ(σ, u; θ)` depending pointwise on a scalar field.
///
/// Components take `(σ^0..σ^n, u, θ_1..θ_P)`. By convention the family
/// reduces to the identity flow at `θ = 0`.
#[derive(Clone)]
pub struct AlgebraicFlowAnsatz {
    n: usize,
    raw: Vec<SFn>,
    names: Vec<String>,
    theta: Vec<f64>,
    time_identity: bool,
    sources: Vec<String>,
}

impl fmt::Debug for AlgebraicFlowAnsatz {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AlgebraicFlowAnsatz")
            .field("n", &self.n)
            .field("components", &self.sources)
            .field("params", &self.names)
            .field("theta", &self.theta)
            .finish()
    }
}

impl AlgebraicFlowAnsatz {
    pub fn new(n: usize, raw: Vec<SFn>, names: Vec<String>, theta: Vec<f64>) -> Result<Self> {
        let m = n + 1;
        if !(1..=3).contains(&n) || raw.len() != m {
            return Err(Error::Dimension(format!("ansatz needs {m} components for n = {n}, got {}", raw.len())));
        }
        if names.len() != theta.len() {
            return Err(Error::Dimension("one value per parameter".into()));
        }
        let arity = m + 1 + names.len();
        if let Some(bad) = raw.iter().find(|c| c.arity() != arity) {
            return Err(Error::Dimension(format!("ansatz component arity {} but expected {arity}", bad.arity())));
        }
        let sources = raw.iter().map(|c| format!("{c:?}")).collect();
        Ok(AlgebraicFlowAnsatz { n, raw, names, theta, time_identity: false, sources })
    }

    /// Components over `s0..sn` (with `t`, `x`, `y`, `z`), `u` and the named parameters.
    pub fn from_exprs(srcs: &[&str], params: &[&str]) -> Result<Self> {
        let n = srcs.len().saturating_sub(1);
        if !(1..=3).contains(&n) {
            return Err(Error::Dimension(format!("ansatz needs 2..=4 components, got {}", srcs.len())));
        }
        let mut vars = Vars::spacetime(n);
        vars.push("u");
        for p in params {
            if vars.get(p).is_some() {
                return Err(Error::Invalid(format!("parameter name '{p}' shadows a variable")));
            }
            vars.push(p);
        }
        let raw = srcs
            .iter()
            .map(|s| Ok(Expr::parse(s, &vars, &Default::default())?.into_fn()))
            .collect::<Result<Vec<_>>>()?;
        let mut a = Self::new(n, raw, params.iter().map(|s| s.to_string()).collect(), vec![0.0; params.len()])?;
        a.sources = srcs.iter().map(|s| s.trim().to_string()).collect();
        a.time_identity = matches!(srcs[0].trim(), "t" | "s0");
        Ok(a)
    }

    pub fn identity(n: usize) -> Self {
        let m = n + 1;
        let raw = (0..m).map(|i| Arc::new(Coord { arity: m + 1, index: i }) as SFn).collect();
        let mut a = Self::new(n, raw, vec![], vec![]).expect("identity ansatz is well formed");
        a.time_identity = true;
        a.sources = (0..m).map(|i| format!("s{i}")).collect();
        a
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    pub fn with_theta(&self, theta: &[f64]) -> Result<Self> {
        if theta.len() != self.theta.len() {
            return Err(Error::Dimension(format!("{} parameters, got {}", self.theta.len(), theta.len())));
        }
        let mut a = self.clone();
        a.theta = theta.to_vec();
        Ok(a)
    }

    /// `x̂^μ(σ, u)` with the current parameters bound.
    pub fn components(&self) -> Vec<SFn> {
        self.raw.iter().map(|f| Arc::new(BindTail { f: f.clone(), values: self.theta.clone() }) as SFn).collect()
    }

    fn inner(&self, u: &ScalarField) -> Vec<SFn> {
        let m = self.n + 1;
        let mut inner: Vec<SFn> = (0..m).map(|i| Arc::new(Coord { arity: m, index: i }) as SFn).collect();
        inner.push(u.as_fn());
        inner
    }

    fn check_field(&self, u: &ScalarField) -> Result<()> {
        if u.arity() != self.n + 1 {
            return Err(Error::Dimension(format!("field takes {} labels, ansatz has n = {}", u.arity(), self.n)));
        }
        Ok(())
    }

    /// The composed flow `σ ↦ x̂(σ, u(σ))`.
    pub fn flow_of(&self, u: &ScalarField) -> Result<FlowMap> {
        self.check_field(u)?;
        let inner = self.inner(u);
        let comps = self
            .components()
            .into_iter()
            .map(|c| Arc::new(Compose { outer: c, inner: inner.clone() }) as SFn)
            .collect();
        Ok(FlowMap::new(comps, DerivMode::Exact)?.with_time_identity(self.time_identity))
    }

    /// The flow with `u` frozen at the constant `value`.
    pub fn frozen_flow(&self, value: f64) -> Result<FlowMap> {
        let m = self.n + 1;
        let mut inner: Vec<SFn> = (0..m).map(|i| Arc::new(Coord { arity: m, index: i }) as SFn).collect();
        inner.push(Arc::new(crate::func::Const { arity: m, value }));
        let comps = self
            .components()
            .into_iter()
            .map(|c| Arc::new(Compose { outer: c, inner: inner.clone() }) as SFn)
            .collect();
        FlowMap::new(comps, DerivMode::Exact)
    }

    /// `a^μ(σ) = ∂x̂^μ/∂u` evaluated along `u(σ)`.
    pub fn link_fns(&self, u: &ScalarField) -> Vec<SFn> {
        let inner = self.inner(u);
        let axis = self.n + 1;
        self.components()
            .into_iter()
            .map(|c| {
                let outer: SFn = Arc::new(Partial { f: c, axis });
                Arc::new(Compose { outer, inner: inner.clone() }) as SFn
            })
            .collect()
    }

    /// `φ̂^μ = a^μ φ`.
    pub fn perturbation(&self, u: &ScalarField, phi: &ScalarField) -> Result<FlowPerturbation> {
        self.check_field(u)?;
        self.check_field(phi)?;
        let p = phi.as_fn();
        let comps = self.link_fns(u).into_iter().map(|a| Arc::new(Product(a, p.clone())) as SFn).collect();
        FlowPerturbation::new(comps, DerivMode::Exact)
    }
}

/// `a^μ`, `b^μ_ν` (as `b[(μ, ν)]`) and `c^μ_{νρ}` (as `c[μ][(ν, ρ)]`).
#[derive(Clone, Debug, PartialEq)]
pub struct LinkCoefficients<T = f64> {
    pub a: Vec<T>,
    pub b: Mat<T>,
    pub c: Vec<Mat<T>>,
}

/// `H`, `B^ν` and `F^{ρν}` (as `f[(ρ, ν)]`).
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetryCoefficients<T = f64> {
    pub h: T,
    pub b: Vec<T>,
    pub f: Mat<T>,
}

/// Partials of a scalar law with respect to every jet slot.
#[derive(Clone, Debug)]
pub struct LawPartials<T> {
    pub value: T,
    pub du: T,
    pub dg: Vec<T>,
    /// Symmetrized `∂f/∂u_{,μν}`.
    pub dh: Mat<T>,
    /// `∂f/∂x̂^μ_{,ν}` as `dx1[(μ, ν)]`.
    pub dx1: Mat<T>,
    /// Symmetrized `∂f/∂x̂^μ_{,νλ}` as `dx2[μ][(ν, λ)]`.
    pub dx2: Vec<Mat<T>>,
}

fn check_scalar_law(law: &dyn JetLaw, n: usize) -> Result<()> {
    if law.n_fields() != 1 || law.n_out() != 1 {
        return Err(Error::Dimension(format!(
            "law {} is not scalar ({} fields, {} outputs)",
            law.name(),
            law.n_fields(),
            law.n_out()
        )));
    }
    if let Some(d) = law.dim() {
        if d != n {
            return Err(Error::Dimension(format!("law {} needs n = {d}, got n = {n}", law.name())));
        }
    }
    Ok(())
}

/// Slot-by-slot partials of `f`, one dual evaluation per slot.
pub fn law_partials<T: Real>(law: &dyn JetLaw, s: &[T], u: &FieldJet<T>, x: &FlowJet<T>) -> LawPartials<T>
where
    Dual<T>: Real,
{
    let m = s.len();
    let sd: Vec<Dual<T>> = s.iter().map(|&v| Dual::constant(v)).collect();
    let base_u = u.map(Dual::constant);
    let base_x = x.map(Dual::constant);
    let eval = |uj: &FieldJet<Dual<T>>, xj: &FlowJet<Dual<T>>| -> Dual<T> {
        call_law(law, &sd, std::slice::from_ref(uj), xj)[0]
    };
    let one = Dual::new(T::zero(), T::one());
    let value = call_law(law, s, std::slice::from_ref(u), x)[0];

    let mut uj = base_u.clone();
    uj.v += one;
    let du = eval(&uj, &base_x).eps;

    let dg = (0..m)
        .map(|i| {
            let mut uj = base_u.clone();
            uj.g[i] += one;
            eval(&uj, &base_x).eps
        })
        .collect();

    let raw_h = Mat::from_fn(m, m, |i, j| {
        let mut uj = base_u.clone();
        uj.h[(i, j)] += one;
        eval(&uj, &base_x).eps
    });
    let dh = symmetrize(&raw_h);

    let dx1 = Mat::from_fn(m, m, |mu, nu| {
        let mut xj = base_x.clone();
        xj.d1[(mu, nu)] += one;
        eval(&base_u, &xj).eps
    });

    let dx2 = (0..m)
        .map(|mu| {
            let raw = Mat::from_fn(m, m, |nu, lam| {
                let mut xj = base_x.clone();
                xj.d2[mu][(nu, lam)] += one;
                eval(&base_u, &xj).eps
            });
            symmetrize(&raw)
        })
        .collect();

    LawPartials { value, du, dg, dh, dx1, dx2 }
}

fn symmetrize<T: Real>(p: &Mat<T>) -> Mat<T> {
    p.add(&p.transpose()).scale(T::cst(0.5))
}

/// Link coefficients at a generic point.
pub fn link_coefficients_at<T: Real>(ansatz: &AlgebraicFlowAnsatz, u: &ScalarField, s: &[T]) -> LinkCoefficients<T>
where
    Dual<T>: Real,
    Dual<Dual<T>>: Real,
{
    let mut a = Vec::new();
    let mut rows = Vec::new();
    let mut c = Vec::new();
    for f in ansatz.link_fns(u) {
        let (v, g, h) = jet2(f.as_ref(), s);
        a.push(v);
        rows.push(g);
        c.push(h);
    }
    LinkCoefficients { a, b: Mat::from_rows(&rows), c }
}

/// `a`, `b`, `c` along `u` at `p`.
pub fn link_coefficients(ansatz: &AlgebraicFlowAnsatz, u: &ScalarField, p: &Point) -> Result<LinkCoefficients> {
    ansatz.check_field(u)?;
    let lc = link_coefficients_at(ansatz, u, p.coords());
    let finite = lc.a.iter().all(|v| v.is_finite()) && lc.b.all_finite() && lc.c.iter().all(|m| m.all_finite());
    if !finite {
        return Err(Error::NonFinite("link coefficients"));
    }
    Ok(lc)
}

/// Everything the determining equations need at one point.
struct PointData<T> {
    coeffs: SymmetryCoefficients<T>,
    flow: FlowJet<T>,
}

fn point_data<T: Real>(law: &dyn JetLaw, ansatz: &AlgebraicFlowAnsatz, u: &ScalarField, flow: &FlowMap, s: &[T]) -> PointData<T>
where
    Dual<T>: Real,
    Dual<Dual<T>>: Real,
{
    let m = s.len();
    let uj = u.jet_at(s);
    let xj = flow.map().jet_at(s);
    let lp = law_partials(law, s, &uj, &xj);
    let lc = link_coefficients_at(ansatz, u, s);
    let mut h = lp.du;
    for mu in 0..m {
        for nu in 0..m {
            h += lp.dx1[(mu, nu)] * lc.b[(mu, nu)];
            for rho in 0..m {
                h += lp.dx2[mu][(nu, rho)] * lc.c[mu][(nu, rho)];
            }
        }
    }
    let b = (0..m)
        .map(|nu| {
            let mut acc = lp.dg[nu];
            for mu in 0..m {
                acc += lp.dx1[(mu, nu)] * lc.a[mu];
                for rho in 0..m {
                    acc += lp.dx2[mu][(nu, rho)] * lc.b[(mu, rho)] * 2.0;
                }
            }
            acc
        })
        .collect();
    let f = Mat::from_fn(m, m, |rho, nu| {
        let mut acc = lp.dh[(nu, rho)];
        for mu in 0..m {
            acc += lp.dx2[mu][(rho, nu)] * lc.a[mu];
        }
        acc
    });
    PointData { coeffs: SymmetryCoefficients { h, b, f }, flow: xj }
}

/// `H`, `B`, `F` at `p`.
pub fn symmetry_coefficients(
    law: &dyn JetLaw,
    ansatz: &AlgebraicFlowAnsatz,
    u: &ScalarField,
    p: &Point,
) -> Result<SymmetryCoefficients> {
    check_scalar_law(law, ansatz.dim())?;
    let flow = ansatz.flow_of(u)?;
    let c = point_data(law, ansatz, u, &flow, p.coords()).coeffs;
    if !c.h.is_finite() || c.b.iter().any(|v| !v.is_finite()) || !c.f.all_finite() {
        return Err(Error::NonFinite("symmetry coefficients"));
    }
    Ok(c)
}

/// Which flow supplies `Γ^β_{βρ}` in the determining equations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GammaSource {
    /// `σ ↦ x̂(σ, u(σ))`, the flow whose Jacobian weights the bilinear form.
    #[default]
    Composed,
    /// `σ ↦ x̂(σ, u(p))` with `u` frozen at the evaluation point.
    FrozenU,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeterminingResidual {
    /// `F − Fᵀ`.
    pub fsym: Mat<f64>,
    /// `F^{νρ}_{,ρ} + Γ^β_{βρ} F^{ρν} − B^ν`.
    pub r: Vec<f64>,
    pub coeffs: SymmetryCoefficients,
    /// `Γ^β_{βρ}` used.
    pub gamma_trace: Vec<f64>,
}

impl DeterminingResidual {
    pub fn norm_sq(&self) -> f64 {
        self.r.iter().map(|v| v * v).sum::<f64>() + self.fsym.iter().map(|v| v * v).sum::<f64>()
    }
}

/// Determining-equation residuals at `p`.
pub fn determining_residual(
    law: &dyn JetLaw,
    ansatz: &AlgebraicFlowAnsatz,
    u: &ScalarField,
    p: &Point,
) -> Result<DeterminingResidual> {
    determining_residual_with(law, ansatz, u, p, GammaSource::Composed)
}

pub fn determining_residual_with(
    law: &dyn JetLaw,
    ansatz: &AlgebraicFlowAnsatz,
    u: &ScalarField,
    p: &Point,
    gamma: GammaSource,
) -> Result<DeterminingResidual> {
    check_scalar_law(law, ansatz.dim())?;
    let flow = ansatz.flow_of(u)?;
    let s = p.coords();
    let m = s.len();
    let base = point_data(law, ansatz, u, &flow, s);
    let xj = match gamma {
        GammaSource::Composed => base.flow.clone(),
        GammaSource::FrozenU => ansatz.frozen_flow(u.eval(s)?)?.jet(p),
    };
    let det = xj.d1.det();
    if det.abs() < crate::geometry::DEGENERACY_THRESHOLD || !det.is_finite() {
        return Err(Error::DegenerateFlow { det, at: s.to_vec() });
    }
    let a = xj.inverse().ok_or(Error::DegenerateFlow { det, at: s.to_vec() })?;
    let trace = xj.christoffel_trace(&a);
    // ∂_ρ F^{νρ} along u(σ), one seeded evaluation per ρ
    let mut div_f = vec![0.0; m];
    for rho in 0..m {
        let d = point_data(law, ansatz, u, &flow, &seed(s, rho));
        for (nu, acc) in div_f.iter_mut().enumerate() {
            *acc += d.coeffs.f[(nu, rho)].eps;
        }
    }
    let f = &base.coeffs.f;
    let r: Vec<f64> = (0..m)
        .map(|nu| {
            let mut acc = div_f[nu] - base.coeffs.b[nu];
            for rho in 0..m {
                acc += trace[rho] * f[(rho, nu)];
            }
            acc
        })
        .collect();
    let fsym = f.sub(&f.transpose());
    if r.iter().any(|v| !v.is_finite()) || !fsym.all_finite() {
        return Err(Error::NonFinite("determining residual"));
    }
    Ok(DeterminingResidual { fsym, r, coeffs: base.coeffs, gamma_trace: trace })
}

/// `B^ν_{,ν}` along `u(σ)`, for the integration-by-parts identity.
pub fn divergence_of_b(law: &dyn JetLaw, ansatz: &AlgebraicFlowAnsatz, u: &ScalarField, p: &Point) -> Result<f64> {
    check_scalar_law(law, ansatz.dim())?;
    let flow = ansatz.flow_of(u)?;
    let s = p.coords();
    let mut acc = 0.0;
    for nu in 0..s.len() {
        acc += point_data(law, ansatz, u, &flow, &seed(s, nu)).coeffs.b[nu].eps;
    }
    if acc.is_finite() {
        Ok(acc)
    } else {
        Err(Error::NonFinite("divergence of B"))
    }
}

/// Classical condition `∂f/∂u_{,ν} − ∂_μ(∂f/∂u_{,μν})` with the flow at rest.
pub fn tonti_residual(law: &dyn JetLaw, u: &ScalarField, p: &Point) -> Result<Vec<f64>> {
    let s = p.coords();
    let m = s.len();
    check_scalar_law(law, m - 1)?;
    if u.arity() != m {
        return Err(Error::Dimension(format!("field takes {} labels, point has {m}", u.arity())));
    }
    let base = law_partials(law, s, &u.jet(s)?, &FlowJet::identity(s));
    let mut out = base.dg.clone();
    for mu in 0..m {
        let sd = seed(s, mu);
        let lp = law_partials(law, &sd, &u.jet_at(&sd), &FlowJet::identity(&sd));
        for (nu, o) in out.iter_mut().enumerate() {
            *o -= lp.dh[(mu, nu)].eps;
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("classical residual"));
    }
    Ok(out)
}

/// Levenberg–Marquardt settings.
#[derive(Clone, Debug, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    pub damping: f64,
    pub fd_step: f64,
    /// Residual norm treated as an exact solution.
    pub tol: f64,
    /// Gradient norm below which progress is impossible.
    pub grad_tol: f64,
    /// Relative decrease regarded as no progress.
    pub stall_rel: f64,
    pub stall_window: usize,
    pub gamma: GammaSource,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 100,
            damping: 1e-3,
            fd_step: 1e-6,
            tol: 1e-10,
            grad_tol: 1e-10,
            stall_rel: 1e-12,
            stall_window: 10,
            gamma: GammaSource::Composed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitIteration {
    pub iter: usize,
    pub residual_norm: f64,
    pub damping: f64,
    pub accepted: bool,
    pub theta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FitStatus {
    Converged,
    NoConvergence(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub theta: Vec<f64>,
    pub residual_norm: f64,
    pub trace: Vec<FitIteration>,
    pub status: FitStatus,
}

impl FitResult {
    /// One row per iteration: `iter, residual_norm, damping, accepted, theta...`.
    pub fn trace_csv(&self, names: &[String]) -> String {
        let mut out = String::from("iter,residual_norm,damping,accepted");
        for n in names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for it in &self.trace {
            out.push_str(&format!("{},{:e},{:e},{}", it.iter, it.residual_norm, it.damping, it.accepted));
            for t in &it.theta {
                out.push_str(&format!(",{t:e}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Stacked `R` and `F − Fᵀ` over every sample and grid node.
fn stacked_residual(
    law: &dyn JetLaw,
    family: &AlgebraicFlowAnsatz,
    theta: &[f64],
    samples: &[ScalarField],
    grid: &Grid,
    gamma: GammaSource,
) -> Result<Vec<f64>> {
    let ansatz = family.with_theta(theta)?;
    let mut out = Vec::new();
    for u in samples {
        for node in grid.nodes() {
            let d = determining_residual_with(law, &ansatz, u, &Point::new(node)?, gamma)?;
            out.extend(d.r);
            out.extend(d.fsym.iter().copied());
        }
    }
    Ok(out)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Fit `θ` so that the determining equations hold over `samples × grid`.
pub fn fit_symmetrizing_flow(
    law: &dyn JetLaw,
    family: &AlgebraicFlowAnsatz,
    samples: &[ScalarField],
    grid: &Grid,
    opts: &FitOptions,
) -> Result<FitResult> {
    if samples.is_empty() {
        return Err(Error::Invalid("at least one field sample is required".into()));
    }
    if grid.axes() != family.dim() + 1 {
        return Err(Error::Dimension(format!("grid has {} axes, ansatz needs {}", grid.axes(), family.dim() + 1)));
    }
    let p = family.n_params();
    let residual = |theta: &[f64]| stacked_residual(law, family, theta, samples, grid, opts.gamma);
    let mut theta = vec![0.0; p];
    let mut r = residual(&theta)?;
    let mut cost = norm(&r);
    let mut mu = opts.damping;
    let mut trace = vec![FitIteration { iter: 0, residual_norm: cost, damping: mu, accepted: true, theta: theta.clone() }];
    let mut recent = vec![cost];

    let status = loop {
        if cost < opts.tol {
            break FitStatus::Converged;
        }
        let iter = trace.len();
        if iter > opts.max_iter {
            break FitStatus::NoConvergence(format!("reached {} iterations", opts.max_iter));
        }
        // central-difference Jacobian in θ
        let k = r.len();
        let mut jac = nalgebra::DMatrix::<f64>::zeros(k, p);
        for j in 0..p {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[j] += opts.fd_step;
            tm[j] -= opts.fd_step;
            let rp = residual(&tp)?;
            let rm = residual(&tm)?;
            for i in 0..k {
                jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * opts.fd_step);
            }
        }
        let rv = nalgebra::DVector::from_column_slice(&r);
        let grad = jac.transpose() * &rv;
        if grad.norm() < opts.grad_tol {
            break FitStatus::NoConvergence(format!("gradient norm {:e} vanished at residual {cost:e}", grad.norm()));
        }
        let jtj = jac.transpose() * &jac;
        let mut accepted = false;
        for _ in 0..30 {
            let mut lhs = jtj.clone();
            for d in 0..p {
                lhs[(d, d)] += mu * jtj[(d, d)].max(1e-12);
            }
            let Some(step) = lhs.lu().solve(&(-&grad)) else {
                mu *= 10.0;
                continue;
            };
            let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + s).collect();
            match residual(&trial) {
                Ok(rt) if norm(&rt) < cost => {
                    theta = trial;
                    r = rt;
                    cost = norm(&r);
                    mu = (mu / 3.0).max(1e-15);
                    accepted = true;
                    break;
                }
                _ => mu *= 4.0,
            }
        }
        trace.push(FitIteration { iter, residual_norm: cost, damping: mu, accepted, theta: theta.clone() });
        if !accepted {
            break FitStatus::NoConvergence(format!("no damped step reduced the residual {cost:e}"));
        }
        recent.push(cost);
        if recent.len() > opts.stall_window {
            let old = recent[recent.len() - 1 - opts.stall_window];
            if (old - cost) <= opts.stall_rel * old {
                break FitStatus::NoConvergence(format!(
                    "relative decrease below {:e} over {} iterations",
                    opts.stall_rel, opts.stall_window
                ));
            }
        }
    };
    Ok(FitResult { theta, residual_norm: cost, trace, status })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intrinsic::{ExprLaw, HeatLaw};
    use std::collections::BTreeMap;

    fn law(src: &str, n: usize) -> ExprLaw {
        ExprLaw::parse(src, n, &BTreeMap::from([("alpha".to_string(), 0.5)])).unwrap()
    }

    fn pt(c: &[f64]) -> Point {
        Point::new(c.to_vec()).unwrap()
    }

    #[test]
    fn identity_ansatz_has_no_link() {
        let u = ScalarField::expr("sin(t + 2*x)", 1).unwrap();
        let lc = link_coefficients(&AlgebraicFlowAnsatz::identity(1), &u, &pt(&[0.3, 0.4])).unwrap();
        assert!(lc.a.iter().all(|&v| v == 0.0));
        assert_eq!(lc.b.max_abs(), 0.0);
    }

    #[test]
    fn hand_link_coefficients() {
        let u = ScalarField::expr("sin(t + 2*x)", 1).unwrap();
        let p = pt(&[0.3, 0.4]);
        let shift = AlgebraicFlowAnsatz::from_exprs(&["t", "x + 0.3*u"], &[]).unwrap();
        let lc = link_coefficients(&shift, &u, &p).unwrap();
        assert_eq!(lc.a, vec![0.0, 0.3]);
        assert_eq!(lc.b.max_abs(), 0.0);
        let mixed = AlgebraicFlowAnsatz::from_exprs(&["t", "x + 0.3*u*t"], &[]).unwrap();
        let lc = link_coefficients(&mixed, &u, &p).unwrap();
        assert!((lc.a[1] - 0.09).abs() < 1e-15);
        assert!((lc.b[(1, 0)] - 0.3).abs() < 1e-15);
        assert_eq!(lc.b[(1, 1)], 0.0);
        assert_eq!(lc.c[1][(0, 0)], 0.0);
    }

    #[test]
    fn heat_coefficients_and_residuals() {
        let u = ScalarField::expr("sin(t)*cos(x) + x*x*t", 1).unwrap();
        let p = pt(&[0.2, 0.7]);
        let id = AlgebraicFlowAnsatz::identity(1);
        let heat = law("u_t - alpha*u_xx", 1);
        let c = symmetry_coefficients(&heat, &id, &u, &p).unwrap();
        assert_eq!(c.h, 0.0);
        assert_eq!(c.b, vec![1.0, 0.0]);
        assert_eq!(c.f[(1, 1)], -0.5);
        assert_eq!(c.f[(0, 0)], 0.0);
        let d = determining_residual(&heat, &id, &u, &p).unwrap();
        assert!((d.r[0] + 1.0).abs() < 1e-14 && d.r[1].abs() < 1e-14);
        assert_eq!(tonti_residual(&heat, &u, &p).unwrap(), vec![1.0, 0.0]);
        // the pushforward-coded heat law has the same coefficients at rest
        let d2 = determining_residual(&HeatLaw { alpha: 0.5 }, &id, &u, &p).unwrap();
        assert!((d2.r[0] + 1.0).abs() < 1e-14 && d2.r[1].abs() < 1e-14);
    }

    #[test]
    fn potential_laws_have_zero_residual() {
        let u = ScalarField::expr("sin(t)*cos(x)*exp(y)", 2).unwrap();
        let p = pt(&[0.2, 0.7, -0.1]);
        let lap = law("u_xx + u_yy", 2);
        let d = determining_residual(&lap, &AlgebraicFlowAnsatz::identity(2), &u, &p).unwrap();
        assert!(d.r.iter().all(|v| v.abs() < 1e-14));
        assert_eq!(d.fsym.max_abs(), 0.0);
        let u1 = ScalarField::expr("sin(t)*cos(x) + x^3", 1).unwrap();
        let cubic = law("u_x * u_xx", 1);
        assert!(tonti_residual(&cubic, &u1, &pt(&[0.1, 0.4])).unwrap().iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn frozen_and_composed_gamma_differ_only_with_link() {
        let u = ScalarField::expr("sin(t)*cos(x)", 1).unwrap();
        let p = pt(&[0.2, 0.7]);
        let heat = law("u_t - alpha*u_xx", 1);
        let a = AlgebraicFlowAnsatz::from_exprs(&["t", "x + 0.2*u*u"], &[]).unwrap();
        let c = determining_residual_with(&heat, &a, &u, &p, GammaSource::Composed).unwrap();
        let f = determining_residual_with(&heat, &a, &u, &p, GammaSource::FrozenU).unwrap();
        assert!((c.gamma_trace[1] - f.gamma_trace[1]).abs() > 1e-6);
    }

    #[test]
    fn fit_on_potential_law_is_immediate() {
        let lap = law("u_tt + u_xx", 1);
        let fam = AlgebraicFlowAnsatz::from_exprs(&["t", "x + a*u"], &["a"]).unwrap();
        let grid = Grid::new(vec![0.1, 0.1], vec![0.9, 0.9], vec![3, 3]).unwrap();
        let u = ScalarField::expr("sin(t)*cos(x)", 1).unwrap();
        let res = fit_symmetrizing_flow(&lap, &fam, &[u], &grid, &FitOptions::default()).unwrap();
        assert_eq!(res.status, FitStatus::Converged);
        assert!(res.residual_norm < 1e-10);
    }

    #[test]
    fn inert_parameter_reports_no_convergence() {
        let heat = law("u_t - alpha*u_xx", 1);
        let fam = AlgebraicFlowAnsatz::from_exprs(&["t", "x + 0*a"], &["a"]).unwrap();
        let grid = Grid::new(vec![0.1, 0.1], vec![0.9, 0.9], vec![3, 3]).unwrap();
        let u = ScalarField::expr("sin(t)*cos(x)", 1).unwrap();
        let res = fit_symmetrizing_flow(&heat, &fam, &[u], &grid, &FitOptions::default()).unwrap();
        assert!(matches!(res.status, FitStatus::NoConvergence(_)));
        assert!(res.trace.iter().all(|it| it.residual_norm == res.trace[0].residual_norm));
    }
}
