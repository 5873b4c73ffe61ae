//! Scenario files: a TOML document describing flows, fields, a law and checks.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Spatial dimension `n`.
    pub dimension: usize,
    #[serde(default)]
    pub seed: u64,
    /// Named constants usable in every expression.
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub flow: FlowSpec,
    /// Named fields; each is one expression or a list of component expressions.
    #[serde(default)]
    pub fields: BTreeMap<String, FieldSpec>,
    #[serde(default)]
    pub law: Option<LawSpec>,
    #[serde(default)]
    pub link: LinkSpec,
    #[serde(default)]
    pub quadrature: Option<QuadSpec>,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub checks: Vec<CheckSpec>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(untagged)]
pub enum FieldSpec {
    One(String),
    Many(Vec<String>),
}

impl FieldSpec {
    pub fn components(&self) -> Vec<&str> {
        match self {
            FieldSpec::One(s) => vec![s.as_str()],
            FieldSpec::Many(v) => v.iter().map(String::as_str).collect(),
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FlowSpec {
    #[default]
    Identity,
    /// `x̂^μ` as expressions over the labels.
    Expression { components: Vec<String> },
    /// Lagrangian flow of a velocity field integrated by RK4.
    Velocity {
        velocity: Vec<String>,
        grid: GridSpec,
        t0: f64,
        t1: f64,
        steps: usize,
        #[serde(default)]
        noise: Option<NoiseSpec>,
    },
    /// Algebraic ansatz `x̂(σ, u; θ)` evaluated along a named field.
    Ansatz {
        components: Vec<String>,
        #[serde(default)]
        params: Vec<String>,
        #[serde(default)]
        theta: Vec<f64>,
        #[serde(default = "default_field")]
        field: String,
    },
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub intensity: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawSpec {
    Heat { alpha: f64 },
    HeatLiteral { alpha: f64 },
    NavierStokes { re: f64 },
    SemilinearPoisson {
        #[serde(default = "one")]
        cubic: f64,
        #[serde(default)]
        source: Option<String>,
    },
    /// A scalar law `f` over the intrinsic jet variables.
    Custom { expr: String },
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LinkSpec {
    /// The scenario flow, independent of the solution.
    #[default]
    Fixed,
    Identity,
    /// The `[flow]` ansatz re-evaluated along every field.
    Ansatz,
    StreamFunction { kappa: f64 },
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct QuadSpec {
    #[serde(default)]
    pub lo: Option<Vec<f64>>,
    #[serde(default)]
    pub hi: Option<Vec<f64>>,
    pub nodes: NodeSpec,
    #[serde(default = "sixteen")]
    pub lambda_nodes: usize,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(untagged)]
pub enum NodeSpec {
    Uniform(usize),
    PerAxis(Vec<usize>),
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub report: Option<String>,
    /// Directory for CSV tables.
    #[serde(default)]
    pub tables: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    GeometryIdentities,
    IntrinsicReduction,
    SymmetryDefect,
    PathIndependence,
    Stationarity,
    DeterminingResidual,
    Tonti,
    Fit,
}

impl CheckKind {
    pub const ALL: [CheckKind; 8] = [
        CheckKind::GeometryIdentities,
        CheckKind::IntrinsicReduction,
        CheckKind::SymmetryDefect,
        CheckKind::PathIndependence,
        CheckKind::Stationarity,
        CheckKind::DeterminingResidual,
        CheckKind::Tonti,
        CheckKind::Fit,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CheckKind::GeometryIdentities => "geometry_identities",
            CheckKind::IntrinsicReduction => "intrinsic_reduction",
            CheckKind::SymmetryDefect => "symmetry_defect",
            CheckKind::PathIndependence => "path_independence",
            CheckKind::Stationarity => "stationarity",
            CheckKind::DeterminingResidual => "determining_residual",
            CheckKind::Tonti => "tonti",
            CheckKind::Fit => "fit",
        }
    }

    pub fn describe(&self) -> &'static str {
        match self {
            CheckKind::GeometryIdentities => "Jacobian, cofactor, metric and determinant-gradient identities at random points",
            CheckKind::IntrinsicReduction => "intrinsic residual of U∘x̂ against the Cartesian residual of U at x̂(σ)",
            CheckKind::SymmetryDefect => "both sides of the potential-operator symmetry condition for sine probes",
            CheckKind::PathIndependence => "action along a straight and a detour homotopy",
            CheckKind::Stationarity => "finite-difference action derivative against the bilinear form",
            CheckKind::DeterminingResidual => "determining-equation residuals R and F − Fᵀ over a grid",
            CheckKind::Tonti => "classical fixed-coordinate symmetry condition",
            CheckKind::Fit => "Levenberg–Marquardt fit of the ansatz parameters to the determining equations",
        }
    }

    pub fn default_tolerance(&self) -> f64 {
        match self {
            CheckKind::PathIndependence | CheckKind::Stationarity => 1e-6,
            CheckKind::Fit => 1e-10,
            _ => 1e-8,
        }
    }
}

impl fmt::Display for CheckKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Expect {
    #[default]
    Pass,
    /// A documented failure: a failing result is reported as `info`.
    Fail,
}

/// One requested check. Options that a kind does not use are rejected at validation.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSpec {
    pub kind: CheckKind,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub expect: Expect,
    #[serde(default)]
    pub tolerance: Option<f64>,
    /// Field the check acts on (default `u`).
    #[serde(default)]
    pub field: Option<String>,
    /// Number of random points or probe pairs.
    #[serde(default)]
    pub samples: Option<usize>,
    /// Bound on the residual itself (intrinsic_reduction).
    #[serde(default)]
    pub residual_tolerance: Option<f64>,
    /// `full`, `incompressible`, `fixed_flow` or `classical`.
    #[serde(default)]
    pub variant: Option<String>,
    /// Sine modes per axis for the first probe.
    #[serde(default)]
    pub phi: Option<Vec<usize>>,
    #[serde(default)]
    pub psi: Option<Vec<usize>>,
    /// Start of the homotopy (default zero).
    #[serde(default)]
    pub start: Option<String>,
    /// Detour field `w` of the quadratic homotopy.
    #[serde(default)]
    pub detour: Option<String>,
    /// Oracle value of the action.
    #[serde(default)]
    pub expected: Option<f64>,
    /// Named fields used as variation directions.
    #[serde(default)]
    pub directions: Option<Vec<String>>,
    /// Node grid over space-time for determining_residual and fit.
    #[serde(default)]
    pub grid: Option<GridSpec>,
    /// Sample fields for fit.
    #[serde(default)]
    pub fields: Option<Vec<String>>,
    #[serde(default)]
    pub max_iter: Option<usize>,
    /// `composed` (default) or `frozen`.
    #[serde(default)]
    pub gamma: Option<String>,
}

impl CheckSpec {
    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.kind.as_str().to_string())
    }

    pub fn field_name(&self) -> &str {
        self.field.as_deref().unwrap_or("u")
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance.unwrap_or_else(|| self.kind.default_tolerance())
    }

    /// Names of the options that are set.
    fn set_options(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        let mut mark = |set: bool, name: &'static str| {
            if set {
                out.push(name);
            }
        };
        mark(self.samples.is_some(), "samples");
        mark(self.residual_tolerance.is_some(), "residual_tolerance");
        mark(self.variant.is_some(), "variant");
        mark(self.phi.is_some(), "phi");
        mark(self.psi.is_some(), "psi");
        mark(self.start.is_some(), "start");
        mark(self.detour.is_some(), "detour");
        mark(self.expected.is_some(), "expected");
        mark(self.directions.is_some(), "directions");
        mark(self.grid.is_some(), "grid");
        mark(self.fields.is_some(), "fields");
        mark(self.max_iter.is_some(), "max_iter");
        mark(self.gamma.is_some(), "gamma");
        out
    }

    fn allowed_options(&self) -> &'static [&'static str] {
        match self.kind {
            CheckKind::GeometryIdentities => &["samples"],
            CheckKind::IntrinsicReduction => &["samples", "residual_tolerance"],
            CheckKind::SymmetryDefect => &["samples", "variant", "phi", "psi"],
            CheckKind::PathIndependence => &["start", "detour", "expected"],
            CheckKind::Stationarity => &["samples", "directions"],
            CheckKind::DeterminingResidual => &["grid", "gamma"],
            CheckKind::Tonti => &["samples"],
            CheckKind::Fit => &["grid", "fields", "max_iter", "gamma"],
        }
    }
}

fn default_field() -> String {
    "u".into()
}

fn one() -> f64 {
    1.0
}

fn sixteen() -> usize {
    16
}

impl Scenario {
    /// Parse TOML text; syntax and schema errors carry their line.
    pub fn parse(source: &str) -> Result<Self, ConfigError> {
        let scenario: Scenario = toml::from_str(source).map_err(|e| {
            let (line, column) = e.span().map(|s| line_col(source, s.start)).unwrap_or((0, 0));
            ConfigError::Parse { line, column, message: e.message().to_string() }
        })?;
        scenario.validate(source)?;
        Ok(scenario)
    }

    /// Structural checks that do not need any evaluation.
    pub fn validate(&self, source: &str) -> Result<(), ConfigError> {
        let invalid = |field: String, section: &str, message: String| ConfigError::Invalid {
            line: locate(source, section, 0),
            field,
            message,
        };
        if !(1..=3).contains(&self.dimension) {
            return Err(invalid("dimension".into(), "dimension", format!("must be 1, 2 or 3, got {}", self.dimension)));
        }
        let m = self.dimension + 1;
        match &self.flow {
            FlowSpec::Expression { components } | FlowSpec::Ansatz { components, .. } if components.len() != m => {
                return Err(invalid("flow.components".into(), "[flow]", format!("need {m} components, got {}", components.len())));
            }
            FlowSpec::Ansatz { params, theta, field, .. } => {
                if !theta.is_empty() && theta.len() != params.len() {
                    return Err(invalid("flow.theta".into(), "[flow]", format!("{} values for {} parameters", theta.len(), params.len())));
                }
                if !self.fields.contains_key(field) {
                    return Err(invalid("flow.field".into(), "[flow]", format!("unknown field '{field}'")));
                }
            }
            FlowSpec::Velocity { velocity, grid, .. } => {
                if velocity.len() != self.dimension {
                    return Err(invalid("flow.velocity".into(), "[flow]", format!("need {} components, got {}", self.dimension, velocity.len())));
                }
                if grid.lo.len() != self.dimension {
                    return Err(invalid("flow.grid".into(), "[flow]", format!("grid must have {} axes", self.dimension)));
                }
            }
            _ => {}
        }
        if matches!(self.link, LinkSpec::Ansatz) && !matches!(self.flow, FlowSpec::Ansatz { .. }) {
            return Err(invalid("link.kind".into(), "[link]", "an ansatz link needs an ansatz flow".into()));
        }
        if let Some(q) = &self.quadrature {
            if let NodeSpec::PerAxis(v) = &q.nodes {
                if v.len() != m {
                    return Err(invalid("quadrature.nodes".into(), "[quadrature]", format!("need {m} node counts, got {}", v.len())));
                }
            }
        }
        let mut names = std::collections::BTreeSet::new();
        for (i, c) in self.checks.iter().enumerate() {
            let line = locate(source, "[[checks]]", i);
            let path = |f: &str| format!("checks[{i}].{f}");
            if !names.insert(c.label()) {
                return Err(ConfigError::Invalid { line, field: path("name"), message: format!("duplicate check name '{}'", c.label()) });
            }
            for opt in c.set_options() {
                if !c.allowed_options().contains(&opt) {
                    return Err(ConfigError::Invalid {
                        line,
                        field: path(opt),
                        message: format!("option not used by {}", c.kind),
                    });
                }
            }
            if let Some(t) = c.tolerance {
                if !(t > 0.0 && t.is_finite()) {
                    return Err(ConfigError::Invalid { line, field: path("tolerance"), message: "must be positive".into() });
                }
            }
            let needs_law = !matches!(c.kind, CheckKind::GeometryIdentities);
            if needs_law && self.law.is_none() {
                return Err(ConfigError::Invalid { line, field: path("kind"), message: format!("{} needs a [law] section", c.kind) });
            }
            let mut refs: Vec<&str> = Vec::new();
            if needs_law {
                refs.push(c.field_name());
            }
            refs.extend(c.start.as_deref());
            refs.extend(c.detour.as_deref());
            refs.extend(c.directions.iter().flatten().map(String::as_str));
            refs.extend(c.fields.iter().flatten().map(String::as_str));
            for r in refs {
                if !self.fields.contains_key(r) {
                    return Err(ConfigError::Invalid { line, field: path("field"), message: format!("unknown field '{r}'") });
                }
            }
            if matches!(c.kind, CheckKind::Fit) && c.grid.is_none() {
                return Err(ConfigError::Invalid { line, field: path("grid"), message: "fit needs a grid".into() });
            }
            if matches!(c.kind, CheckKind::Fit) && !matches!(self.flow, FlowSpec::Ansatz { .. }) {
                return Err(ConfigError::Invalid { line, field: path("kind"), message: "fit needs an ansatz flow".into() });
            }
            if let Some(v) = &c.variant {
                if conflow::variational::SymmetryVariant::parse(v).is_none() {
                    return Err(ConfigError::Invalid { line, field: path("variant"), message: format!("unknown variant '{v}'") });
                }
            }
            if let Some(g) = &c.gamma {
                if g != "composed" && g != "frozen" {
                    return Err(ConfigError::Invalid { line, field: path("gamma"), message: format!("expected composed or frozen, got '{g}'") });
                }
            }
            for (probe, name) in [(&c.phi, "phi"), (&c.psi, "psi")] {
                if let Some(modes) = probe {
                    if modes.len() != m || modes.iter().all(|&k| k == 0) {
                        return Err(ConfigError::Invalid { line, field: path(name), message: format!("need {m} modes, not all zero") });
                    }
                }
            }
            if c.phi.is_some() != c.psi.is_some() {
                return Err(ConfigError::Invalid { line, field: path("phi"), message: "phi and psi go together".into() });
            }
        }
        Ok(())
    }
}

/// 1-based line and column of a byte offset.
pub fn line_col(source: &str, offset: usize) -> (usize, usize) {
    let before = &source[..offset.min(source.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map(|i| before.len() - i).unwrap_or(before.len() + 1);
    (line, column)
}

/// Line of the `nth` line that starts with `key`, if any.
pub fn locate(source: &str, key: &str, nth: usize) -> Option<usize> {
    source
        .lines()
        .enumerate()
        .filter(|(_, l)| l.trim_start().starts_with(key))
        .nth(nth)
        .map(|(i, _)| i + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "t"
dimension = 1
[fields]
u = "sin(pi*x)"
[law]
kind = "heat"
alpha = 0.1
[[checks]]
kind = "tonti"
"#;

    #[test]
    fn parses_minimal_scenario() {
        let s = Scenario::parse(MINIMAL).unwrap();
        assert_eq!(s.checks[0].kind, CheckKind::Tonti);
        assert!(matches!(s.flow, FlowSpec::Identity));
    }

    #[test]
    fn unknown_check_reports_line() {
        let bad = MINIMAL.replace("kind = \"tonti\"", "kind = \"curl\"");
        match Scenario::parse(&bad) {
            Err(ConfigError::Parse { line, .. }) => assert_eq!(line, 10),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn misplaced_option_names_field() {
        let bad = MINIMAL.replace("kind = \"tonti\"", "kind = \"tonti\"\nvariant = \"full\"");
        match Scenario::parse(&bad) {
            Err(ConfigError::Invalid { field, line, .. }) => {
                assert_eq!(field, "checks[0].variant");
                assert_eq!(line, Some(9));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_field_reference() {
        let bad = MINIMAL.replace("kind = \"tonti\"", "kind = \"tonti\"\nfield = \"v\"");
        assert!(matches!(Scenario::parse(&bad), Err(ConfigError::Invalid { .. })));
    }
}
