//! Gauss–Legendre rules and tensor-product quadrature over boxes.

use crate::error::{Error, Result};

/// Nodes and weights on `[-1, 1]`, by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss–Legendre needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// `P_n(x)` and `P_n'(x)`.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss–Legendre rule mapped to `[lo, hi]`.
pub fn rule_on(n: usize, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    (x.iter().map(|t| mid + half * t).collect(), w.iter().map(|v| v * half).collect())
}

/// Tensor-product rule over the label box Σ, plus the λ rule for path integrals.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub nodes: Vec<usize>,
    pub lambda_nodes: usize,
}

impl QuadratureSpec {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, nodes: Vec<usize>) -> Result<Self> {
        let spec = QuadratureSpec { lo, hi, nodes, lambda_nodes: 16 };
        spec.validate()?;
        Ok(spec)
    }

    /// `[0, 1]^(n+1)` with `k` nodes per axis.
    pub fn unit(n: usize, k: usize) -> Self {
        QuadratureSpec { lo: vec![0.0; n + 1], hi: vec![1.0; n + 1], nodes: vec![k; n + 1], lambda_nodes: 16 }
    }

    pub fn with_lambda_nodes(mut self, k: usize) -> Self {
        self.lambda_nodes = k;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.len() != self.hi.len() || self.lo.len() != self.nodes.len() || self.lo.is_empty() {
            return Err(Error::Dimension("quadrature box and node counts must have equal length".into()));
        }
        if self.nodes.iter().any(|&k| k < 2) || self.lambda_nodes < 2 {
            return Err(Error::Invalid("quadrature node counts must be at least 2".into()));
        }
        if self.lo.iter().zip(&self.hi).any(|(a, b)| !(b > a) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::Invalid("quadrature box must have positive finite extents".into()));
        }
        Ok(())
    }

    pub fn axes(&self) -> usize {
        self.lo.len()
    }

    /// All tensor-product points and weights, last axis fastest.
    pub fn points(&self) -> Vec<(Vec<f64>, f64)> {
        let rules: Vec<(Vec<f64>, Vec<f64>)> =
            (0..self.axes()).map(|a| rule_on(self.nodes[a], self.lo[a], self.hi[a])).collect();
        let total: usize = self.nodes.iter().product();
        let mut out = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rem = flat;
            let mut p = vec![0.0; self.axes()];
            let mut w = 1.0;
            for a in (0..self.axes()).rev() {
                let k = rem % self.nodes[a];
                rem /= self.nodes[a];
                p[a] = rules[a].0[k];
                w *= rules[a].1[k];
            }
            out.push((p, w));
        }
        out
    }

    /// λ nodes and weights on `[0, 1]`.
    pub fn lambda_rule(&self) -> (Vec<f64>, Vec<f64>) {
        rule_on(self.lambda_nodes, 0.0, 1.0)
    }

    /// `∫ f` over the box; stops at the first error.
    pub fn integrate(&self, mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<f64> {
        let mut acc = 0.0;
        for (p, w) in self.points() {
            acc += w * f(&p)?;
        }
        Ok(acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_polynomials_up_to_degree_2n_minus_1() {
        for n in 2..=12 {
            let (x, w) = gauss_legendre(n);
            for deg in 0..2 * n {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-13, "n {n} deg {deg}: {q} vs {exact}");
            }
        }
    }

    #[test]
    fn known_two_point_rule() {
        let (x, w) = gauss_legendre(2);
        assert!((x[1] - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert!((w[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn box_integral() {
        let q = QuadratureSpec::new(vec![0.0, -1.0], vec![2.0, 1.0], vec![4, 5]).unwrap();
        let v = q.integrate(|p| Ok(p[0] * p[0] * p[1] * p[1])).unwrap();
        assert!((v - 8.0 / 3.0 * 2.0 / 3.0).abs() < 1e-13);
        assert!(QuadratureSpec::new(vec![0.0], vec![1.0], vec![1]).is_err());
    }
}
