//! One runner per check kind. Numerical errors inside a check become a failed record.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use conflow::determine::{
    determining_residual_with, fit_symmetrizing_flow, tonti_residual, AlgebraicFlowAnsatz, FitOptions, FitStatus, GammaSource,
};
use conflow::fields::{Grid, VectorField};
use conflow::geometry::{check_jacobian_identity, inverse_jacobian, jacobian_determinant, jacobian_matrix, metric_tensor};
use conflow::intrinsic::compose_with_flow;
use conflow::linalg::{levi_civita_cofactor, Mat};
use conflow::variational::{
    build_action, path_integral, sine_probe, stationarity_check, symmetry_defect, zero_like, Homotopy, SymmetryVariant,
};
use conflow::{FlowLink, FlowMap, IntrinsicOperator, Point};

use crate::config::{CheckKind, CheckSpec};
use crate::context::{build_grid, Context};

/// What a check measured, before expectations are applied.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub passed: bool,
    pub measured: BTreeMap<String, Value>,
    pub note: Option<String>,
    /// `(file stem, CSV text)`.
    pub tables: Vec<(String, String)>,
}

type CheckResult = Result<Outcome, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Per-check stream derived from the scenario seed and the check position.
pub fn check_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn random_points(ctx: &Context, rng: &mut ChaCha8Rng, k: usize) -> Vec<Point> {
    (0..k)
        .map(|_| {
            let c = (0..ctx.quad.axes()).map(|a| rng.random_range(ctx.quad.lo[a]..ctx.quad.hi[a])).collect();
            Point::new(c).expect("box points are finite")
        })
        .collect()
}

fn operator(ctx: &Context) -> Result<&IntrinsicOperator, String> {
    ctx.op.as_ref().ok_or_else(|| "no law configured".to_string())
}

/// A sine mode broadcast to every component of a field of the given shape.
fn probe(ctx: &Context, modes: &[usize], components: usize) -> VectorField {
    let f = sine_probe(modes, &ctx.quad);
    VectorField::new(vec![f; components]).expect("non-empty probe")
}

fn random_modes(rng: &mut ChaCha8Rng, m: usize) -> Vec<usize> {
    (0..m).map(|_| rng.random_range(1..=3)).collect()
}

pub fn run(ctx: &Context, spec: &CheckSpec, index: usize) -> CheckResult {
    let mut rng = check_rng(ctx.seed, index);
    match spec.kind {
        CheckKind::GeometryIdentities => geometry(ctx, spec, &mut rng),
        CheckKind::IntrinsicReduction => reduction(ctx, spec, &mut rng),
        CheckKind::SymmetryDefect => symmetry(ctx, spec, &mut rng),
        CheckKind::PathIndependence => paths(ctx, spec),
        CheckKind::Stationarity => stationarity(ctx, spec, &mut rng),
        CheckKind::DeterminingResidual => determining(ctx, spec),
        CheckKind::Tonti => tonti(ctx, spec, &mut rng),
        CheckKind::Fit => fit(ctx, spec),
    }
}

fn geometry(ctx: &Context, spec: &CheckSpec, rng: &mut ChaCha8Rng) -> CheckResult {
    let flow = &ctx.flow;
    let (mut ident, mut cof, mut metric, mut inv_err) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let points = random_points(ctx, rng, spec.samples.unwrap_or(50));
    for p in &points {
        ident = check_jacobian_identity(flow, p).map_err(err)?.iter().fold(ident, |m, v| m.max(v.abs()));
        let jac = jacobian_matrix(flow, p).map_err(err)?;
        if matches!(jac.rows(), 2 | 4) {
            cof = cof.max(levi_civita_cofactor(&jac).max_abs_diff(&jac.adjugate()));
        }
        let det = jacobian_determinant(flow, p).map_err(err)?;
        metric = metric.max((metric_tensor(flow, p).map_err(err)?.det() - det * det).abs() / (det * det));
        let inv = inverse_jacobian(flow, p).map_err(err)?;
        inv_err = inv_err.max(jac.matmul(&inv).max_abs_diff(&Mat::identity(jac.rows())));
    }
    let tol = spec.tolerance();
    let mut measured = BTreeMap::new();
    measured.insert("points".into(), json!(points.len()));
    measured.insert("jacobian_identity".into(), json!(ident));
    measured.insert("cofactor_vs_adjugate".into(), json!(cof));
    measured.insert("metric_det_rel".into(), json!(metric));
    measured.insert("jacobian_inverse".into(), json!(inv_err));
    Ok(Outcome { passed: [ident, cof, metric, inv_err].iter().all(|v| *v <= tol), measured, ..Default::default() })
}

fn reduction(ctx: &Context, spec: &CheckSpec, rng: &mut ChaCha8Rng) -> CheckResult {
    let op = operator(ctx)?;
    let cartesian = ctx.field(spec.field_name());
    let flow = &ctx.flow;
    let composed = VectorField::new(cartesian.components().iter().map(|c| compose_with_flow(c, flow)).collect()).map_err(err)?;
    let intrinsic = op.with_link(FlowLink::Fixed(flow.clone()));
    let at_rest = op.with_link(FlowLink::identity(ctx.n));
    let id = FlowMap::identity(ctx.n);
    let (mut diff, mut size) = (0.0f64, 0.0f64);
    let points = random_points(ctx, rng, spec.samples.unwrap_or(20));
    for p in &points {
        let a = intrinsic.residual(&composed, flow, p).map_err(err)?;
        let x = Point::new(flow.eval(p)).map_err(err)?;
        let b = at_rest.residual(cartesian, &id, &x).map_err(err)?;
        for (a, b) in a.iter().zip(&b) {
            diff = diff.max((a - b).abs());
            size = size.max(a.abs());
        }
    }
    let mut passed = diff <= spec.tolerance();
    let mut measured = BTreeMap::new();
    measured.insert("points".into(), json!(points.len()));
    measured.insert("max_difference".into(), json!(diff));
    measured.insert("max_residual".into(), json!(size));
    if let Some(rt) = spec.residual_tolerance {
        measured.insert("residual_tolerance".into(), json!(rt));
        passed &= size <= rt;
    }
    Ok(Outcome { passed, measured, ..Default::default() })
}

fn symmetry(ctx: &Context, spec: &CheckSpec, rng: &mut ChaCha8Rng) -> CheckResult {
    let op = operator(ctx)?;
    let u = ctx.field(spec.field_name());
    let flow = op.flow_of(u).map_err(err)?;
    let variant = spec.variant.as_deref().map(|v| SymmetryVariant::parse(v).expect("validated")).unwrap_or(SymmetryVariant::Full);
    let m = ctx.n + 1;
    let pairs: Vec<(Vec<usize>, Vec<usize>)> = match (&spec.phi, &spec.psi) {
        (Some(a), Some(b)) => vec![(a.clone(), b.clone())],
        _ => (0..spec.samples.unwrap_or(3)).map(|_| (random_modes(rng, m), random_modes(rng, m))).collect(),
    };
    let mut worst: Option<(conflow::variational::SymmetryReport, usize)> = None;
    for (i, (a, b)) in pairs.iter().enumerate() {
        let r = symmetry_defect(op, u, &flow, &probe(ctx, a, u.len()), &probe(ctx, b, u.len()), variant, &ctx.quad).map_err(err)?;
        if worst.as_ref().is_none_or(|(w, _)| r.defect.abs() > w.defect.abs()) {
            worst = Some((r, i));
        }
    }
    let (w, i) = worst.ok_or("no probe pairs")?;
    let mut measured = BTreeMap::new();
    measured.insert("variant".into(), json!(variant.as_str()));
    measured.insert("defect".into(), json!(w.defect));
    measured.insert("lhs".into(), json!(w.lhs));
    measured.insert("rhs".into(), json!(w.rhs));
    measured.insert("normalization".into(), json!(w.normalization));
    measured.insert("pairs".into(), json!(pairs.len()));
    measured.insert("phi".into(), json!(pairs[i].0));
    measured.insert("psi".into(), json!(pairs[i].1));
    Ok(Outcome { passed: w.defect.abs() <= spec.tolerance(), measured, ..Default::default() })
}

fn paths(ctx: &Context, spec: &CheckSpec) -> CheckResult {
    let op = operator(ctx)?;
    let u1 = ctx.field(spec.field_name()).clone();
    let u0 = spec.start.as_deref().map(|s| ctx.field(s).clone()).unwrap_or_else(|| zero_like(&u1));
    let w = match spec.detour.as_deref() {
        Some(name) => ctx.field(name).clone(),
        None => probe(ctx, &vec![1; ctx.n + 1], u1.len()),
    };
    let straight = build_action(op, &u0, &u1, &ctx.quad).map_err(err)?;
    let detour = path_integral(op, &Homotopy::quadratic(u0, u1, w).map_err(err)?, &ctx.quad).map_err(err)?;
    let tol = spec.tolerance();
    let diff = (straight - detour).abs();
    let mut passed = diff <= tol;
    let mut measured = BTreeMap::new();
    measured.insert("action_straight".into(), json!(straight));
    measured.insert("action_detour".into(), json!(detour));
    measured.insert("difference".into(), json!(diff));
    if let Some(e) = spec.expected {
        let oracle = (straight - e).abs();
        measured.insert("expected".into(), json!(e));
        measured.insert("oracle_error".into(), json!(oracle));
        passed &= oracle <= tol;
    }
    Ok(Outcome { passed, measured, ..Default::default() })
}

fn stationarity(ctx: &Context, spec: &CheckSpec, rng: &mut ChaCha8Rng) -> CheckResult {
    let op = operator(ctx)?;
    let u = ctx.field(spec.field_name());
    let dirs: Vec<VectorField> = match &spec.directions {
        Some(names) => names.iter().map(|n| ctx.field(n).clone()).collect(),
        None => (0..spec.samples.unwrap_or(5)).map(|_| probe(ctx, &random_modes(rng, ctx.n + 1), u.len())).collect(),
    };
    let defect = stationarity_check(op, u, &dirs, &ctx.quad).map_err(err)?;
    let mut measured = BTreeMap::new();
    measured.insert("directions".into(), json!(dirs.len()));
    measured.insert("defect".into(), json!(defect));
    Ok(Outcome { passed: defect <= spec.tolerance(), measured, ..Default::default() })
}

fn gamma_source(spec: &CheckSpec) -> GammaSource {
    match spec.gamma.as_deref() {
        Some("frozen") => GammaSource::FrozenU,
        _ => GammaSource::Composed,
    }
}

/// Nodes of the check grid, or a 3-per-axis grid inside the quadrature box.
fn check_grid(ctx: &Context, spec: &CheckSpec) -> Result<Grid, String> {
    match &spec.grid {
        Some(g) => build_grid(g).map_err(err),
        None => {
            let q = &ctx.quad;
            let lo = q.lo.iter().zip(&q.hi).map(|(a, b)| a + 0.25 * (b - a)).collect();
            let hi = q.lo.iter().zip(&q.hi).map(|(a, b)| a + 0.75 * (b - a)).collect();
            Grid::new(lo, hi, vec![3; q.axes()]).map_err(err)
        }
    }
}

const SIGN_NOTE: &str = "with the link removed, the determining residual R equals minus the classical residual";

fn determining(ctx: &Context, spec: &CheckSpec) -> CheckResult {
    let op = operator(ctx)?;
    let u = &ctx.field(spec.field_name()).components()[0];
    let ansatz = ctx.ansatz.clone().unwrap_or_else(|| AlgebraicFlowAnsatz::identity(ctx.n));
    let grid = check_grid(ctx, spec)?;
    let m = ctx.n + 1;
    let mut csv = (0..m).map(|i| format!("s{i}")).chain((0..m).map(|i| format!("r{i}"))).collect::<Vec<_>>().join(",");
    csv.push_str(",fsym_max\n");
    let (mut max_r, mut max_f) = (0.0f64, 0.0f64);
    let mut first = None;
    for node in grid.nodes() {
        let d = determining_residual_with(op.law(), &ansatz, u, &Point::new(node.clone()).map_err(err)?, gamma_source(spec)).map_err(err)?;
        let fs = d.fsym.max_abs();
        max_r = d.r.iter().fold(max_r, |a, v| a.max(v.abs()));
        max_f = max_f.max(fs);
        let row: Vec<String> = node.iter().chain(&d.r).map(|v| format!("{v:e}")).collect();
        csv.push_str(&format!("{},{fs:e}\n", row.join(",")));
        first.get_or_insert(d.r);
    }
    let tol = spec.tolerance();
    let mut measured = BTreeMap::new();
    measured.insert("nodes".into(), json!(grid.len()));
    measured.insert("max_r".into(), json!(max_r));
    measured.insert("max_fsym".into(), json!(max_f));
    measured.insert("r_first_node".into(), json!(first.unwrap_or_default()));
    measured.insert("gamma".into(), json!(spec.gamma.as_deref().unwrap_or("composed")));
    Ok(Outcome {
        passed: max_r <= tol && max_f <= tol,
        measured,
        note: Some(SIGN_NOTE.into()),
        tables: vec![("determining".into(), csv)],
    })
}

fn tonti(ctx: &Context, spec: &CheckSpec, rng: &mut ChaCha8Rng) -> CheckResult {
    let op = operator(ctx)?;
    let u = &ctx.field(spec.field_name()).components()[0];
    let points = random_points(ctx, rng, spec.samples.unwrap_or(5));
    let mut max_abs = 0.0f64;
    let mut first = None;
    for p in &points {
        let r = tonti_residual(op.law(), u, p).map_err(err)?;
        max_abs = r.iter().fold(max_abs, |a, v| a.max(v.abs()));
        first.get_or_insert(r);
    }
    let mut measured = BTreeMap::new();
    measured.insert("points".into(), json!(points.len()));
    measured.insert("residual".into(), json!(first.unwrap_or_default()));
    measured.insert("max_abs".into(), json!(max_abs));
    Ok(Outcome { passed: max_abs <= spec.tolerance(), measured, note: Some(SIGN_NOTE.into()), ..Default::default() })
}

fn fit(ctx: &Context, spec: &CheckSpec) -> CheckResult {
    let op = operator(ctx)?;
    let family = ctx.ansatz.as_ref().ok_or("fit needs an ansatz flow")?;
    let names: Vec<String> = spec.fields.clone().unwrap_or_else(|| vec![spec.field_name().to_string()]);
    let samples: Vec<_> = names.iter().map(|n| ctx.field(n).components()[0].clone()).collect();
    let grid = check_grid(ctx, spec)?;
    let opts = FitOptions {
        max_iter: spec.max_iter.unwrap_or(FitOptions::default().max_iter),
        gamma: gamma_source(spec),
        tol: spec.tolerance(),
        ..Default::default()
    };
    let res = fit_symmetrizing_flow(op.law(), family, &samples, &grid, &opts).map_err(err)?;
    let monotone = res.trace.windows(2).all(|w| w[1].residual_norm <= w[0].residual_norm);
    let theta: serde_json::Map<String, Value> =
        family.param_names().iter().zip(&res.theta).map(|(k, v)| (k.clone(), json!(v))).collect();
    let mut measured = BTreeMap::new();
    measured.insert("residual_norm".into(), json!(res.residual_norm));
    measured.insert("initial_norm".into(), json!(res.trace.first().map(|t| t.residual_norm)));
    measured.insert("iterations".into(), json!(res.trace.len().saturating_sub(1)));
    measured.insert("theta".into(), Value::Object(theta));
    measured.insert("monotone".into(), json!(monotone));
    let note = match &res.status {
        FitStatus::Converged => None,
        FitStatus::NoConvergence(why) => Some(format!("no convergence: {why}")),
    };
    measured.insert("converged".into(), json!(res.status == FitStatus::Converged));
    Ok(Outcome {
        passed: monotone && res.residual_norm <= spec.tolerance(),
        measured,
        note,
        tables: vec![("fit_trace".into(), res.trace_csv(family.param_names()))],
    })
}
