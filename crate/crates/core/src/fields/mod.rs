//! Scalar and vector fields over space-time labels.
//!
//! Analytic fields are [`ScalarFn`] objects and differentiate exactly.
//! Sampled fields hold nodal values on a uniform [`Grid`] and differentiate
//! with central finite differences of order 2 or 4.

mod flowint;
mod sampled;

use std::sync::Arc;

pub use flowint::{integrate_flow_map, integrate_noisy_flow_map, integrate_trajectories, IntegrationOptions, NoisePath, TrajectoryTable};
pub use sampled::{fd_weights, SampledField};

use crate::dual::{Dual, Real};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::func::{jet2, LinComb, SFn};
use crate::geometry::Point;
use crate::intrinsic::FieldJet;

/// Uniform tensor-product grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    counts: Vec<usize>,
}

impl Grid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        if lo.len() != hi.len() || lo.len() != counts.len() || lo.is_empty() {
            return Err(Error::Dimension("grid extents and counts must have equal, non-zero length".into()));
        }
        for a in 0..lo.len() {
            if !(hi[a] > lo[a]) || !lo[a].is_finite() || !hi[a].is_finite() {
                return Err(Error::Invalid(format!("grid axis {a} has non-positive extent")));
            }
            if counts[a] < 2 {
                return Err(Error::Invalid(format!("grid axis {a} needs at least 2 nodes")));
            }
        }
        Ok(Grid { lo, hi, counts })
    }

    pub fn axes(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / (self.counts[axis] - 1) as f64
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.counts[axis] {
            self.hi[axis]
        } else {
            self.lo[axis] + i as f64 * self.spacing(axis)
        }
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Multi-index of a flat (row-major, last axis fastest) index.
    pub fn unflatten(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.axes()];
        for a in (0..self.axes()).rev() {
            idx[a] = flat % self.counts[a];
            flat /= self.counts[a];
        }
        idx
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.counts).fold(0, |acc, (&i, &c)| acc * c + i)
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        self.unflatten(flat).iter().enumerate().map(|(a, &i)| self.coord(a, i)).collect()
    }

    pub fn nodes(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len()).map(|k| self.node(k))
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        let tol = 1e-12;
        p.len() == self.axes()
            && p.iter().enumerate().all(|(a, &x)| {
                let pad = tol * (self.hi[a] - self.lo[a]);
                x >= self.lo[a] - pad && x <= self.hi[a] + pad
            })
    }
}

/// A scalar field `u(σ)`.
#[derive(Clone, Debug)]
pub enum ScalarField {
    Analytic(SFn),
    Sampled(Arc<SampledField>),
}

impl ScalarField {
    pub fn analytic(f: SFn) -> Self {
        ScalarField::Analytic(f)
    }

    /// Parse an expression over `s0..sn`.
    pub fn expr(src: &str, n: usize) -> Result<Self> {
        Ok(ScalarField::Analytic(Expr::spacetime(src, n)?.into_fn()))
    }

    pub fn constant(value: f64, n: usize) -> Self {
        ScalarField::Analytic(Arc::new(crate::func::Const { arity: n + 1, value }))
    }

    pub fn sampled(f: SampledField) -> Self {
        ScalarField::Sampled(Arc::new(f))
    }

    /// Number of label coordinates, `n + 1`.
    pub fn arity(&self) -> usize {
        match self {
            ScalarField::Analytic(f) => f.arity(),
            ScalarField::Sampled(s) => s.grid().axes(),
        }
    }

    pub fn is_analytic(&self) -> bool {
        matches!(self, ScalarField::Analytic(_))
    }

    pub fn eval(&self, p: &[f64]) -> Result<f64> {
        match self {
            ScalarField::Analytic(f) => Ok(f.eval_f64(p)),
            ScalarField::Sampled(s) => s.derivative(p, &[]),
        }
    }

    /// Jet at an f64 point. Sampled fields use their finite-difference stencils.
    pub fn jet(&self, p: &[f64]) -> Result<FieldJet<f64>> {
        match self {
            ScalarField::Analytic(f) => {
                let (v, g, h) = jet2(f.as_ref(), p);
                Ok(FieldJet { v, g, h })
            }
            ScalarField::Sampled(s) => s.jet(p),
        }
    }

    /// Jet at a generic point. Sampled fields differentiate their interpolant here.
    pub fn jet_at<T: Real>(&self, p: &[T]) -> FieldJet<T>
    where
        Dual<T>: Real,
        Dual<Dual<T>>: Real,
    {
        let f = self.as_fn();
        let (v, g, h) = jet2(f.as_ref(), p);
        FieldJet { v, g, h }
    }

    /// A function object for composition. Sampled fields yield their interpolant.
    pub fn as_fn(&self) -> SFn {
        match self {
            ScalarField::Analytic(f) => f.clone(),
            ScalarField::Sampled(s) => s.interpolant(),
        }
    }

    /// `Σ w_i f_i` as an analytic field.
    pub fn combine(terms: &[(f64, &ScalarField)]) -> Result<ScalarField> {
        let arity = terms.first().map(|(_, f)| f.arity()).ok_or_else(|| Error::Invalid("empty combination".into()))?;
        if terms.iter().any(|(_, f)| f.arity() != arity) {
            return Err(Error::Dimension("combined fields have different arities".into()));
        }
        Ok(ScalarField::Analytic(Arc::new(LinComb {
            arity,
            offset: 0.0,
            terms: terms.iter().map(|(w, f)| (*w, f.as_fn())).collect(),
        })))
    }
}

/// Uniform access to a derivative of order ≤ 2, `idx` listing the axes.
pub fn field_derivative(f: &ScalarField, p: &Point, idx: &[usize]) -> Result<f64> {
    if idx.len() > 2 {
        return Err(Error::Invalid(format!("derivative order {} exceeds 2", idx.len())));
    }
    if f.arity() != p.coords().len() {
        return Err(Error::Dimension(format!("field arity {} vs point length {}", f.arity(), p.coords().len())));
    }
    if let Some(&bad) = idx.iter().find(|&&a| a >= f.arity()) {
        return Err(Error::Invalid(format!("axis {bad} out of range")));
    }
    match f {
        ScalarField::Sampled(s) => s.derivative(p.coords(), idx),
        ScalarField::Analytic(_) => {
            let jet = f.jet(p.coords())?;
            let v = match idx {
                [] => jet.v,
                [i] => jet.g[*i],
                [i, j] => jet.h[(*i, *j)],
                _ => unreachable!(),
            };
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFinite("field derivative"))
            }
        }
    }
}

/// Fields `u^j(σ)`, all over the same labels.
#[derive(Clone, Debug)]
pub struct VectorField {
    components: Vec<ScalarField>,
}

impl VectorField {
    pub fn new(components: Vec<ScalarField>) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(Error::Invalid("vector field needs at least one component".into()));
        };
        let arity = first.arity();
        if components.iter().any(|c| c.arity() != arity) {
            return Err(Error::Dimension("vector field components have different arities".into()));
        }
        if let ScalarField::Sampled(s0) = first {
            for c in &components {
                if let ScalarField::Sampled(s) = c {
                    if s.grid() != s0.grid() {
                        return Err(Error::Dimension("sampled components on different grids".into()));
                    }
                }
            }
        }
        Ok(VectorField { components })
    }

    pub fn scalar(f: ScalarField) -> Self {
        VectorField { components: vec![f] }
    }

    pub fn exprs(srcs: &[&str], n: usize) -> Result<Self> {
        VectorField::new(srcs.iter().map(|s| ScalarField::expr(s, n)).collect::<Result<_>>()?)
    }

    pub fn components(&self) -> &[ScalarField] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn arity(&self) -> usize {
        self.components[0].arity()
    }

    pub fn jets(&self, p: &[f64]) -> Result<Vec<FieldJet<f64>>> {
        self.components.iter().map(|c| c.jet(p)).collect()
    }

    pub fn jets_at<T: Real>(&self, p: &[T]) -> Vec<FieldJet<T>>
    where
        Dual<T>: Real,
        Dual<Dual<T>>: Real,
    {
        self.components.iter().map(|c| c.jet_at(p)).collect()
    }

    pub fn eval(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.components.iter().map(|c| c.eval(p)).collect()
    }

    /// Component-wise `Σ w_i F_i`.
    pub fn combine(terms: &[(f64, &VectorField)]) -> Result<VectorField> {
        let len = terms.first().map(|(_, f)| f.len()).ok_or_else(|| Error::Invalid("empty combination".into()))?;
        if terms.iter().any(|(_, f)| f.len() != len) {
            return Err(Error::Dimension("combined vector fields have different lengths".into()));
        }
        let components = (0..len)
            .map(|j| {
                let t: Vec<(f64, &ScalarField)> = terms.iter().map(|(w, f)| (*w, &f.components[j])).collect();
                ScalarField::combine(&t)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(VectorField { components })
    }
}

impl From<ScalarField> for VectorField {
    fn from(f: ScalarField) -> Self {
        VectorField::scalar(f)
    }
}
