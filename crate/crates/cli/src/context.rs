//! Resolve a parsed scenario into flows, fields, an operator and a quadrature rule.

use std::collections::BTreeMap;
use std::sync::Arc;

use conflow::determine::AlgebraicFlowAnsatz;
use conflow::expr::{Expr, Vars};
use conflow::fields::{integrate_flow_map, integrate_noisy_flow_map, Grid, NoisePath, ScalarField, VectorField};
use conflow::intrinsic::{ExprLaw, HeatLaw, HeatLiteralLaw, Law, NavierStokesLaw, SemilinearPoissonLaw};
use conflow::{DerivMode, FlowLink, FlowMap, IntrinsicOperator, QuadratureSpec};

use crate::config::{FlowSpec, GridSpec, LawSpec, LinkSpec, NodeSpec, Scenario};
use crate::error::ConfigError;

/// Everything the checks evaluate against.
#[derive(Clone, Debug)]
pub struct Context {
    pub n: usize,
    pub seed: u64,
    pub fields: BTreeMap<String, VectorField>,
    pub flow: FlowMap,
    pub ansatz: Option<AlgebraicFlowAnsatz>,
    pub op: Option<IntrinsicOperator>,
    pub quad: QuadratureSpec,
}

/// Command-line overrides.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    /// Gauss–Legendre nodes on every Σ axis.
    pub quad_nodes: Option<usize>,
}

fn invalid(source: &str, section: &str, field: impl Into<String>, e: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid { line: crate::config::locate(source, section, 0), field: field.into(), message: e.to_string() }
}

/// A scalar field from an expression over `s0..sn` and the scenario constants.
pub fn parse_scalar(src: &str, n: usize, params: &BTreeMap<String, f64>) -> conflow::Result<ScalarField> {
    let vars = Vars::spacetime(n);
    Ok(ScalarField::analytic(Expr::parse(src, &vars, params)?.into_fn()))
}

fn parse_vector(srcs: &[&str], n: usize, params: &BTreeMap<String, f64>) -> conflow::Result<VectorField> {
    VectorField::new(srcs.iter().map(|s| parse_scalar(s, n, params)).collect::<conflow::Result<Vec<_>>>()?)
}

pub fn build_grid(g: &GridSpec) -> conflow::Result<Grid> {
    Grid::new(g.lo.clone(), g.hi.clone(), g.counts.clone())
}

impl Context {
    pub fn build(s: &Scenario, source: &str, over: &Overrides) -> Result<Self, ConfigError> {
        let n = s.dimension;
        let seed = over.seed.unwrap_or(s.seed);
        let mut fields = BTreeMap::new();
        for (name, spec) in &s.fields {
            let locate_key = format!("{name} ");
            let section = if crate::config::locate(source, &locate_key, 0).is_some() { locate_key.as_str() } else { "[fields]" };
            let f = parse_vector(&spec.components(), n, &s.params).map_err(|e| invalid(source, section, format!("fields.{name}"), e))?;
            fields.insert(name.clone(), f);
        }

        let (flow, ansatz) = match &s.flow {
            FlowSpec::Identity => (FlowMap::identity(n), None),
            FlowSpec::Expression { components } => {
                let comps = components
                    .iter()
                    .map(|c| Ok(Expr::parse(c, &Vars::spacetime(n), &s.params)?.into_fn()))
                    .collect::<conflow::Result<Vec<_>>>()
                    .map_err(|e| invalid(source, "[flow]", "flow.components", e))?;
                let time_identity = matches!(components[0].trim(), "t" | "s0");
                let flow = FlowMap::new(comps, DerivMode::Exact)
                    .map_err(|e| invalid(source, "[flow]", "flow.components", e))?
                    .with_time_identity(time_identity);
                (flow, None)
            }
            FlowSpec::Velocity { velocity, grid, t0, t1, steps, noise } => {
                let refs: Vec<&str> = velocity.iter().map(String::as_str).collect();
                let v = parse_vector(&refs, n, &s.params).map_err(|e| invalid(source, "[flow]", "flow.velocity", e))?;
                let g = build_grid(grid).map_err(|e| invalid(source, "[flow]", "flow.grid", e))?;
                let flow = match noise {
                    Some(ns) => {
                        let path = NoisePath::new(ns.seed.unwrap_or(seed), ns.intensity, &g, *t0, *t1, *steps)
                            .map_err(|e| invalid(source, "[flow.noise]", "flow.noise", e))?;
                        integrate_noisy_flow_map(&v, &path, &g, *t0, *t1, *steps)
                    }
                    None => integrate_flow_map(&v, &g, *t0, *t1, *steps),
                }
                .map_err(|e| invalid(source, "[flow]", "flow.velocity", e))?;
                (flow, None)
            }
            FlowSpec::Ansatz { components, params, theta, field } => {
                let refs: Vec<&str> = components.iter().map(String::as_str).collect();
                let names: Vec<&str> = params.iter().map(String::as_str).collect();
                let mut a = AlgebraicFlowAnsatz::from_exprs(&refs, &names).map_err(|e| invalid(source, "[flow]", "flow.components", e))?;
                if !theta.is_empty() {
                    a = a.with_theta(theta).map_err(|e| invalid(source, "[flow]", "flow.theta", e))?;
                }
                let u = &fields[field];
                let flow = a.flow_of(&u.components()[0]).map_err(|e| invalid(source, "[flow]", "flow.field", e))?;
                (flow, Some(a))
            }
        };

        let op = match &s.law {
            None => None,
            Some(spec) => {
                let law: Law = match spec {
                    LawSpec::Heat { alpha } => Arc::new(HeatLaw { alpha: *alpha }),
                    LawSpec::HeatLiteral { alpha } => {
                        if n != 1 {
                            return Err(invalid(source, "[law]", "law.kind", "heat_literal is a 1+1D law"));
                        }
                        Arc::new(HeatLiteralLaw { alpha: *alpha })
                    }
                    LawSpec::NavierStokes { re } => {
                        if n < 2 {
                            return Err(invalid(source, "[law]", "law.kind", "navier_stokes needs n = 2 or 3"));
                        }
                        Arc::new(NavierStokesLaw { n, re: *re })
                    }
                    LawSpec::SemilinearPoisson { cubic, source: src } => {
                        let f = src
                            .as_ref()
                            .map(|e| parse_scalar(e, n, &s.params).map(|f| f.as_fn()))
                            .transpose()
                            .map_err(|e| invalid(source, "[law]", "law.source", e))?;
                        Arc::new(SemilinearPoissonLaw { cubic: *cubic, source: f })
                    }
                    LawSpec::Custom { expr } => {
                        Arc::new(ExprLaw::parse(expr, n, &s.params).map_err(|e| invalid(source, "[law]", "law.expr", e))?)
                    }
                };
                let link = match &s.link {
                    LinkSpec::Fixed => FlowLink::Fixed(flow.clone()),
                    LinkSpec::Identity => FlowLink::identity(n),
                    LinkSpec::Ansatz => FlowLink::Algebraic(ansatz.clone().expect("validated: ansatz flow")),
                    LinkSpec::StreamFunction { kappa } => {
                        if n != 2 {
                            return Err(invalid(source, "[link]", "link.kind", "stream_function needs n = 2"));
                        }
                        FlowLink::stream_function(*kappa)
                    }
                };
                for (name, f) in &fields {
                    if f.len() != law.n_fields() && s.checks.iter().any(|c| c.field_name() == name) {
                        return Err(invalid(
                            source,
                            "[fields]",
                            format!("fields.{name}"),
                            format!("law {} takes {} components, field has {}", law.name(), law.n_fields(), f.len()),
                        ));
                    }
                }
                Some(IntrinsicOperator::new(law, link).with_params(s.params.clone()))
            }
        };

        let m = n + 1;
        let default_nodes = match n {
            1 => 16,
            2 => 8,
            _ => 5,
        };
        let q = s.quadrature.as_ref();
        let lo = q.and_then(|q| q.lo.clone()).unwrap_or_else(|| vec![0.0; m]);
        let hi = q.and_then(|q| q.hi.clone()).unwrap_or_else(|| vec![1.0; m]);
        let nodes = match (over.quad_nodes, q.map(|q| &q.nodes)) {
            (Some(k), _) => vec![k; m],
            (None, Some(NodeSpec::Uniform(k))) => vec![*k; m],
            (None, Some(NodeSpec::PerAxis(v))) => v.clone(),
            (None, None) => vec![default_nodes; m],
        };
        let quad = QuadratureSpec::new(lo, hi, nodes)
            .map(|spec| spec.with_lambda_nodes(q.map(|q| q.lambda_nodes).unwrap_or(16)))
            .map_err(|e| invalid(source, "[quadrature]", "quadrature", e))?;
        quad.validate().map_err(|e| invalid(source, "[quadrature]", "quadrature.lambda_nodes", e))?;
        if quad.axes() != m {
            return Err(invalid(source, "[quadrature]", "quadrature", format!("need {m} axes")));
        }
        Ok(Context { n, seed, fields, flow, ansatz, op, quad })
    }

    pub fn field(&self, name: &str) -> &VectorField {
        &self.fields[name]
    }
}
