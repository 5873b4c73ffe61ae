//! Lagrangian flow maps from velocity fields.
//!
//! Each label `σ` on a grid is advanced with classical RK4 through
//! `dX/dt = U(t, X + B(σ, t))`, where `B` is an optional seeded noise offset.
//! The stored positions and velocities are then interpolated, cubic Hermite
//! in time and cubic Lagrange in the labels, into a time-identity [`FlowMap`].

use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dual::Real;
use crate::error::{Error, Result};
use crate::func::{Coord, GenericFn, SFn};
use crate::geometry::{DerivMode, FlowMap};

use super::{Grid, VectorField};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegrationOptions {
    /// Trajectories must stay within the grid centre ± this factor times the half-extents.
    pub bbox_factor: f64,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        IntegrationOptions { bbox_factor: 10.0 }
    }
}

/// Seeded per-node Brownian offsets `B(σ, t)`, piecewise linear in `t`.
#[derive(Clone, Debug)]
pub struct NoisePath {
    seed: u64,
    intensity: f64,
    grid: Grid,
    t0: f64,
    dt: f64,
    steps: usize,
    /// `values[k][node * n + j]` is `B^j` at `t0 + k·dt`.
    values: Vec<Vec<f64>>,
}

impl NoisePath {
    /// Increments are independent Gaussians of variance `intensity²·dt` per node and component.
    pub fn new(seed: u64, intensity: f64, grid: &Grid, t0: f64, t1: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(t1 > t0) {
            return Err(Error::Invalid("noise path needs t1 > t0 and steps > 0".into()));
        }
        if !intensity.is_finite() || intensity < 0.0 {
            return Err(Error::Invalid(format!("noise intensity must be finite and non-negative, got {intensity}")));
        }
        let n = grid.axes();
        let dt = (t1 - t0) / steps as f64;
        let width = grid.len() * n;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = intensity * dt.sqrt();
        let mut values = Vec::with_capacity(steps + 1);
        values.push(vec![0.0; width]);
        for k in 0..steps {
            let prev = &values[k];
            let next: Vec<f64> = prev
                .iter()
                .map(|&b| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    b + scale * z
                })
                .collect();
            values.push(next);
        }
        Ok(NoisePath { seed, intensity, grid: grid.clone(), t0, dt, steps, values })
    }

    /// The zero path.
    pub fn zero(grid: &Grid, t0: f64, t1: f64, steps: usize) -> Result<Self> {
        Self::new(0, 0.0, grid, t0, t1, steps)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn intensity(&self) -> f64 {
        self.intensity
    }

    /// Offset for grid node `node` (flat index) at time `t`.
    pub fn eval_node(&self, node: usize, t: f64) -> Vec<f64> {
        let n = self.grid.axes();
        let s = ((t - self.t0) / self.dt).clamp(0.0, self.steps as f64);
        let k = (s.floor() as usize).min(self.steps - 1);
        let w = s - k as f64;
        (0..n)
            .map(|j| {
                let a = self.values[k][node * n + j];
                let b = self.values[k + 1][node * n + j];
                a + w * (b - a)
            })
            .collect()
    }

    /// Offset for the grid node nearest the label `sigma`.
    pub fn eval(&self, sigma: &[f64], t: f64) -> Vec<f64> {
        let idx: Vec<usize> = (0..self.grid.axes())
            .map(|a| {
                let r = ((sigma[a] - self.grid.lo()[a]) / self.grid.spacing(a)).round();
                (r.max(0.0) as usize).min(self.grid.counts()[a] - 1)
            })
            .collect();
        self.eval_node(self.grid.flatten(&idx), t)
    }

    /// Short description for reports.
    pub fn describe(&self) -> String {
        format!(
            "per-node independent Gaussian increments, variance intensity^2*dt, piecewise linear in t (seed {}, intensity {})",
            self.seed, self.intensity
        )
    }
}

/// Integrated trajectories: positions and velocities of every label at every step.
#[derive(Clone, Debug)]
pub struct TrajectoryTable {
    grid: Grid,
    t0: f64,
    dt: f64,
    steps: usize,
    /// `x[k][node * n + j]`
    x: Vec<Vec<f64>>,
    /// `dX/dt` at the same samples.
    v: Vec<Vec<f64>>,
}

impl TrajectoryTable {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.t0 + self.dt * self.steps as f64
        } else {
            self.t0 + self.dt * k as f64
        }
    }

    /// Position of node `node` after `k` steps.
    pub fn position(&self, k: usize, node: usize) -> &[f64] {
        let n = self.grid.axes();
        &self.x[k][node * n..(node + 1) * n]
    }

    /// The interpolating time-identity flow `(t, σ) ↦ (t, X(σ, t))`.
    pub fn flow_map(self: &Arc<Self>) -> FlowMap {
        let m = self.grid.axes() + 1;
        let mut comps: Vec<SFn> = vec![Arc::new(Coord { arity: m, index: 0 })];
        for j in 0..m - 1 {
            comps.push(Arc::new(TrajectoryComponent { data: self.clone(), comp: j }));
        }
        FlowMap::new(comps, DerivMode::Exact)
            .expect("trajectory flow has matching arity")
            .with_time_identity(true)
    }

    /// One row per label and time sample: `σ1..σn, t, x1..xn`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let n = self.grid.axes();
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (1..=n).map(|j| format!("s{j}")).collect();
        header.push("t".into());
        header.extend((1..=n).map(|j| format!("x{j}")));
        w.write_record(&header)?;
        for node in 0..self.grid.len() {
            let label = self.grid.node(node);
            for k in 0..=self.steps {
                let mut rec: Vec<String> = label.iter().map(|v| v.to_string()).collect();
                rec.push(self.time(k).to_string());
                rec.extend(self.position(k, node).iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug)]
struct TrajectoryComponent {
    data: Arc<TrajectoryTable>,
    comp: usize,
}

/// First node and width of an interpolation window on one axis.
fn window(count: usize, lo: f64, h: f64, x: f64) -> (usize, usize) {
    let width = if count >= 4 { 4 } else { 2 };
    let cell = (((x - lo) / h).floor().max(0.0) as usize).min(count - 2);
    let start = if width == 4 { cell.saturating_sub(1).min(count - 4) } else { cell };
    (start, width)
}

impl GenericFn for TrajectoryComponent {
    fn arity(&self) -> usize {
        self.data.grid.axes() + 1
    }

    fn eval<T: Real>(&self, x: &[T]) -> T {
        let d = &self.data;
        let g = &d.grid;
        let n = g.axes();
        let t = x[0];
        let s = (t.re() - d.t0) / d.dt;
        let k = (s.floor().max(0.0) as usize).min(d.steps - 1);
        let tau = (t - d.t0 - d.dt * k as f64) / d.dt;
        let tau2 = tau * tau;
        let tau3 = tau2 * tau;
        let h00 = tau3 * 2.0 - tau2 * 3.0 + 1.0;
        let h10 = (tau3 - tau2 * 2.0 + tau) * d.dt;
        let h01 = tau2 * 3.0 - tau3 * 2.0;
        let h11 = (tau3 - tau2) * d.dt;

        let mut bases: Vec<(usize, Vec<T>)> = Vec::with_capacity(n);
        for a in 0..n {
            let (start, width) = window(g.counts()[a], g.lo()[a], g.spacing(a), x[a + 1].re());
            let nodes: Vec<f64> = (0..width).map(|i| g.coord(a, start + i)).collect();
            let basis = (0..width)
                .map(|i| {
                    let mut l = T::one();
                    for (m, &xm) in nodes.iter().enumerate() {
                        if m != i {
                            l *= (x[a + 1] - xm) / (nodes[i] - xm);
                        }
                    }
                    l
                })
                .collect();
            bases.push((start, basis));
        }

        let total: usize = bases.iter().map(|(_, b)| b.len()).product();
        let mut idx = vec![0; n];
        let mut acc = T::zero();
        for flat in 0..total {
            let mut rem = flat;
            let mut weight = T::one();
            for a in (0..n).rev() {
                let width = bases[a].1.len();
                let i = rem % width;
                rem /= width;
                idx[a] = bases[a].0 + i;
                weight *= bases[a].1[i];
            }
            let off = g.flatten(&idx) * n + self.comp;
            let value = h00 * d.x[k][off] + h10 * d.v[k][off] + h01 * d.x[k + 1][off] + h11 * d.v[k + 1][off];
            acc += weight * value;
        }
        acc
    }
}

fn check_inputs(u: &VectorField, grid: &Grid, t0: f64, t1: f64, steps: usize) -> Result<()> {
    let n = grid.axes();
    if !(1..=3).contains(&n) {
        return Err(Error::Dimension(format!("label grid must have 1..=3 axes, got {n}")));
    }
    if u.len() != n || u.arity() != n + 1 {
        return Err(Error::Dimension(format!(
            "velocity needs {n} components over (t, x1..x{n}); got {} over {} arguments",
            u.len(),
            u.arity()
        )));
    }
    if steps == 0 || !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::Invalid("integration needs finite t1 > t0 and steps > 0".into()));
    }
    Ok(())
}

/// Integrate trajectories of every grid label, optionally offset by noise.
pub fn integrate_trajectories(
    u: &VectorField,
    noise: Option<&NoisePath>,
    grid: &Grid,
    t0: f64,
    t1: f64,
    steps: usize,
    opts: &IntegrationOptions,
) -> Result<TrajectoryTable> {
    check_inputs(u, grid, t0, t1, steps)?;
    let n = grid.axes();
    if let Some(b) = noise {
        if b.grid != *grid {
            return Err(Error::Dimension("noise path is defined on a different grid".into()));
        }
    }
    let dt = (t1 - t0) / steps as f64;
    let centre: Vec<f64> = (0..n).map(|a| 0.5 * (grid.lo()[a] + grid.hi()[a])).collect();
    let reach: Vec<f64> = (0..n).map(|a| opts.bbox_factor * 0.5 * (grid.hi()[a] - grid.lo()[a])).collect();

    let velocity = |node: usize, t: f64, x: &[f64]| -> Result<Vec<f64>> {
        let mut arg = Vec::with_capacity(n + 1);
        arg.push(t);
        match noise {
            Some(b) if b.intensity > 0.0 => {
                let off = b.eval_node(node, t);
                arg.extend(x.iter().zip(&off).map(|(xi, bi)| xi + bi));
            }
            _ => arg.extend_from_slice(x),
        }
        u.eval(&arg)
    };

    let len = grid.len();
    let mut xs = Vec::with_capacity(steps + 1);
    let mut vs = Vec::with_capacity(steps + 1);
    let x0: Vec<f64> = grid.nodes().flatten().collect();
    let mut v0 = Vec::with_capacity(len * n);
    for node in 0..len {
        v0.extend(velocity(node, t0, &x0[node * n..(node + 1) * n])?);
    }
    xs.push(x0);
    vs.push(v0);

    for k in 0..steps {
        let t = t0 + dt * k as f64;
        let t_next = if k + 1 == steps { t1 } else { t0 + dt * (k + 1) as f64 };
        let mut x_next = Vec::with_capacity(len * n);
        let mut v_next = Vec::with_capacity(len * n);
        for node in 0..len {
            let x = &xs[k][node * n..(node + 1) * n];
            let k1 = &vs[k][node * n..(node + 1) * n];
            let shift = |base: &[f64], d: &[f64], s: f64| -> Vec<f64> { base.iter().zip(d).map(|(a, b)| a + s * b).collect() };
            let k2 = velocity(node, t + 0.5 * dt, &shift(x, k1, 0.5 * dt))?;
            let k3 = velocity(node, t + 0.5 * dt, &shift(x, &k2, 0.5 * dt))?;
            let k4 = velocity(node, t + dt, &shift(x, &k3, dt))?;
            let new: Vec<f64> = (0..n).map(|j| x[j] + dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])).collect();
            let escaped = new.iter().enumerate().any(|(a, &v)| !v.is_finite() || (v - centre[a]).abs() > reach[a]);
            if escaped {
                return Err(Error::BlowUp { label: grid.node(node), t: t_next });
            }
            v_next.extend(velocity(node, t_next, &new)?);
            x_next.extend(new);
        }
        xs.push(x_next);
        vs.push(v_next);
    }
    Ok(TrajectoryTable { grid: grid.clone(), t0, dt, steps, x: xs, v: vs })
}

/// Deterministic Lagrangian flow `∂X/∂t = U(t, X)`, `X(σ, t0) = σ`.
pub fn integrate_flow_map(u: &VectorField, grid: &Grid, t0: f64, t1: f64, steps: usize) -> Result<FlowMap> {
    let table = integrate_trajectories(u, None, grid, t0, t1, steps, &IntegrationOptions::default())?;
    Ok(Arc::new(table).flow_map())
}

/// Lagrangian flow with the velocity argument offset by `noise`.
pub fn integrate_noisy_flow_map(
    u: &VectorField,
    noise: &NoisePath,
    grid: &Grid,
    t0: f64,
    t1: f64,
    steps: usize,
) -> Result<FlowMap> {
    let table = integrate_trajectories(u, Some(noise), grid, t0, t1, steps, &IntegrationOptions::default())?;
    Ok(Arc::new(table).flow_map())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{jacobian_determinant, jacobian_matrix, Point};

    fn grid1() -> Grid {
        Grid::new(vec![0.0], vec![1.0], vec![11]).unwrap()
    }

    fn table(u: &[&str], grid: &Grid, steps: usize, noise: Option<&NoisePath>) -> TrajectoryTable {
        let n = grid.axes();
        let u = VectorField::exprs(u, n).unwrap();
        integrate_trajectories(&u, noise, grid, 0.0, 1.0, steps, &IntegrationOptions::default()).unwrap()
    }

    #[test]
    fn rest_flow_is_identity() {
        let g = Grid::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![5, 5]).unwrap();
        let u = VectorField::exprs(&["0", "0"], 2).unwrap();
        let flow = integrate_flow_map(&u, &g, 0.0, 1.0, 8).unwrap();
        for t in [0.0, 0.37, 1.0] {
            for node in g.nodes() {
                let p = Point::new(vec![t, node[0], node[1]]).unwrap();
                assert_eq!(flow.eval(&p), vec![t, node[0], node[1]]);
            }
        }
    }

    #[test]
    fn constant_velocity_translates() {
        let flow = Arc::new(table(&["1"], &grid1(), 10, None)).flow_map();
        for (s, t) in [(0.2, 0.0), (0.55, 0.33), (0.9, 1.0)] {
            let p = Point::new(vec![t, s]).unwrap();
            assert!((flow.eval(&p)[1] - (s + t)).abs() < 1e-10);
            assert!((jacobian_determinant(&flow, &p).unwrap() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn linear_velocity_converges_at_fourth_order() {
        let errs: Vec<f64> = [5, 10, 20, 40]
            .iter()
            .map(|&steps| {
                let tab = table(&["x"], &grid1(), steps, None);
                let g = tab.grid().clone();
                (0..g.len())
                    .map(|k| (tab.position(steps, k)[0] - g.node(k)[0] * 1f64.exp()).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        for w in errs.windows(2) {
            let slope = (w[0] / w[1]).log2();
            assert!((slope - 4.0).abs() < 0.3, "slope {slope}, errors {errs:?}");
        }
    }

    #[test]
    fn spatial_jacobian_is_identity_at_start() {
        let g = Grid::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![9, 9]).unwrap();
        let flow = Arc::new(table(&["sin(x)*cos(y)", "-cos(x)*sin(y)"], &g, 20, None)).flow_map();
        let p = Point::new(vec![0.0, 0.31, 0.72]).unwrap();
        let jac = jacobian_matrix(&flow, &p).unwrap();
        for a in 1..3 {
            for b in 1..3 {
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((jac[(a, b)] - expect).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn zero_noise_matches_deterministic_bitwise() {
        let g = grid1();
        let noise = NoisePath::new(7, 0.0, &g, 0.0, 1.0, 10).unwrap();
        let a = table(&["sin(x) + t"], &g, 10, None);
        let b = table(&["sin(x) + t"], &g, 10, Some(&noise));
        assert_eq!(a.x, b.x);
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let g = grid1();
        let n1 = NoisePath::new(42, 0.3, &g, 0.0, 1.0, 10).unwrap();
        let n2 = NoisePath::new(42, 0.3, &g, 0.0, 1.0, 10).unwrap();
        let a = table(&["sin(3*x)"], &g, 10, Some(&n1));
        let b = table(&["sin(3*x)"], &g, 10, Some(&n2));
        assert_eq!(a.x, b.x);
        let plain = table(&["sin(3*x)"], &g, 10, None);
        assert_ne!(a.x, plain.x);
        assert_eq!(n1.eval(&[0.3], 0.0), vec![0.0]);
    }

    #[test]
    fn rest_flow_ignores_noise() {
        let g = grid1();
        let noise = NoisePath::new(1, 2.0, &g, 0.0, 1.0, 10).unwrap();
        let a = table(&["0"], &g, 10, Some(&noise));
        for k in 0..g.len() {
            assert_eq!(a.position(10, k)[0], g.node(k)[0]);
        }
    }

    #[test]
    fn escaping_trajectories_blow_up() {
        let u = VectorField::exprs(&["x*x*50"], 1).unwrap();
        let r = integrate_flow_map(&u, &grid1(), 0.0, 1.0, 50);
        assert!(matches!(r, Err(Error::BlowUp { .. })));
    }

    #[test]
    fn trajectory_csv_has_one_row_per_sample() {
        let tab = table(&["1"], &grid1(), 4, None);
        let path = std::env::temp_dir().join(format!("conflow-traj-{}.csv", std::process::id()));
        tab.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1 + 11 * 5);
        assert!(text.starts_with("s1,t,x1"));
        std::fs::remove_file(path).ok();
    }
}
