use std::path::Path;
use std::sync::Arc;

use crate::dual::Real;
use crate::error::{Error, Result};
use crate::func::{GenericFn, SFn};
use crate::intrinsic::FieldJet;
use crate::linalg::Mat;

use super::Grid;

/// Finite-difference weights (Fornberg). `w[d][k]` approximates the `d`-th
/// derivative at `x0` from values at `xs[k]`, for `d = 0..=max_order`.
pub fn fd_weights(x0: f64, xs: &[f64], max_order: usize) -> Vec<Vec<f64>> {
    let n = xs.len();
    let mut c = vec![vec![0.0; n]; max_order + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    for i in 1..n {
        let mn = i.min(max_order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Nodal values on a uniform grid with a finite-difference stencil order.
#[derive(Clone, Debug)]
pub struct SampledField {
    grid: Grid,
    values: Vec<f64>,
    order: u8,
}

impl SampledField {
    pub fn new(grid: Grid, values: Vec<f64>, order: u8) -> Result<Self> {
        if order != 2 && order != 4 {
            return Err(Error::Invalid(format!("stencil order must be 2 or 4, got {order}")));
        }
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!("{} values for {} grid nodes", values.len(), grid.len())));
        }
        let min_nodes = order as usize + 1;
        if grid.counts().iter().any(|&c| c < min_nodes) {
            return Err(Error::Invalid(format!("order-{order} stencils need at least {min_nodes} nodes per axis")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sampled values"));
        }
        Ok(SampledField { grid, values, order })
    }

    /// Sample `f` at every grid node.
    pub fn from_fn(grid: Grid, order: u8, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = grid.nodes().map(|p| f(&p)).collect();
        Self::new(grid, values, order)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn order(&self) -> u8 {
        self.order
    }

    fn value_at(&self, idx: &[usize]) -> f64 {
        self.values[self.grid.flatten(idx)]
    }

    /// Stencil offsets (node indices) and weights for derivative `d` at node `i` on `axis`.
    fn stencil(&self, axis: usize, i: usize, d: usize) -> Vec<(usize, f64)> {
        let count = self.grid.counts()[axis];
        let order = self.order as usize;
        let half = order / 2;
        let (start, width) = if i >= half && i + half < count {
            (i - half, 2 * half + 1)
        } else {
            let width = (order + d).min(count);
            let start = i.saturating_sub(half).min(count - width);
            (start, width)
        };
        let h = self.grid.spacing(axis);
        let xs: Vec<f64> = (0..width).map(|k| (start + k) as f64 * h).collect();
        let w = fd_weights(i as f64 * h, &xs, d);
        (0..width).map(|k| (start + k, w[d][k])).collect()
    }

    /// Finite-difference derivative at a grid node.
    fn nodal_derivative(&self, node: &[usize], idx: &[usize]) -> f64 {
        match idx {
            [] => self.value_at(node),
            [a] => self.stencil(*a, node[*a], 1).iter().map(|&(k, w)| w * self.shifted(node, *a, k)).sum(),
            [a, b] if a == b => self.stencil(*a, node[*a], 2).iter().map(|&(k, w)| w * self.shifted(node, *a, k)).sum(),
            [a, b] => {
                let sa = self.stencil(*a, node[*a], 1);
                let sb = self.stencil(*b, node[*b], 1);
                let mut acc = 0.0;
                let mut q = node.to_vec();
                for &(ka, wa) in &sa {
                    q[*a] = ka;
                    for &(kb, wb) in &sb {
                        q[*b] = kb;
                        acc += wa * wb * self.value_at(&q);
                    }
                }
                acc
            }
            _ => unreachable!("order checked by caller"),
        }
    }

    fn shifted(&self, node: &[usize], axis: usize, k: usize) -> f64 {
        let mut q = node.to_vec();
        q[axis] = k;
        self.value_at(&q)
    }

    /// Interpolation window on one axis: first node index and width.
    fn window(&self, axis: usize, x: f64) -> (usize, usize) {
        let count = self.grid.counts()[axis];
        let width = if self.order == 4 { 4 } else { 2 };
        let h = self.grid.spacing(axis);
        let cell = (((x - self.grid.lo()[axis]) / h).floor().max(0.0) as usize).min(count - 2);
        let start = if width == 4 { cell.saturating_sub(1).min(count - 4) } else { cell };
        (start, width)
    }

    /// Derivative along the listed axes at an arbitrary point inside the grid.
    pub fn derivative(&self, p: &[f64], idx: &[usize]) -> Result<f64> {
        if idx.len() > 2 {
            return Err(Error::Invalid("derivative order exceeds 2".into()));
        }
        if !self.grid.contains(p) {
            return Err(Error::OutOfDomain { at: p.to_vec() });
        }
        let axes = self.grid.axes();
        let mut windows = Vec::with_capacity(axes);
        for a in 0..axes {
            let (start, width) = self.window(a, p[a]);
            let xs: Vec<f64> = (0..width).map(|k| self.grid.coord(a, start + k)).collect();
            let w = fd_weights(p[a], &xs, 0).swap_remove(0);
            windows.push((start, w));
        }
        let mut acc = 0.0;
        let mut node = vec![0; axes];
        let total: usize = windows.iter().map(|(_, w)| w.len()).product();
        for flat in 0..total {
            let mut rem = flat;
            let mut weight = 1.0;
            for a in (0..axes).rev() {
                let width = windows[a].1.len();
                let k = rem % width;
                rem /= width;
                node[a] = windows[a].0 + k;
                weight *= windows[a].1[k];
            }
            if weight != 0.0 {
                acc += weight * self.nodal_derivative(&node, idx);
            }
        }
        Ok(acc)
    }

    pub fn jet(&self, p: &[f64]) -> Result<FieldJet<f64>> {
        let m = self.grid.axes();
        let v = self.derivative(p, &[])?;
        let g = (0..m).map(|a| self.derivative(p, &[a])).collect::<Result<Vec<_>>>()?;
        let mut h = Mat::zeros(m, m);
        for a in 0..m {
            for b in a..m {
                let d = self.derivative(p, &[a, b])?;
                h[(a, b)] = d;
                h[(b, a)] = d;
            }
        }
        Ok(FieldJet { v, g, h })
    }

    /// Tensor-product Lagrange interpolant of the nodal values.
    pub fn interpolant(self: &Arc<Self>) -> SFn {
        Arc::new(Interpolant(self.clone()))
    }

    /// Load a field written by [`SampledField::write_csv`]: a header row naming
    /// the axes and the value column, then one node per row.
    pub fn read_csv(path: impl AsRef<Path>, order: u8) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        let axes = headers.len().checked_sub(1).filter(|&a| a > 0).ok_or_else(|| Error::Io("CSV needs axis columns and a value column".into()))?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Io(format!("bad number '{s}': {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != axes + 1 {
                return Err(Error::Io(format!("row has {} columns, expected {}", row.len(), axes + 1)));
            }
            rows.push(row);
        }
        let mut lo = Vec::with_capacity(axes);
        let mut hi = Vec::with_capacity(axes);
        let mut counts = Vec::with_capacity(axes);
        for a in 0..axes {
            let mut coords: Vec<f64> = rows.iter().map(|r| r[a]).collect();
            coords.sort_by(|x, y| x.total_cmp(y));
            coords.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * (1.0 + y.abs()));
            lo.push(coords[0]);
            hi.push(*coords.last().unwrap());
            counts.push(coords.len());
        }
        let grid = Grid::new(lo, hi, counts)?;
        if rows.len() != grid.len() {
            return Err(Error::Io(format!("{} rows do not fill a {:?} grid", rows.len(), grid.counts())));
        }
        let mut values = vec![f64::NAN; grid.len()];
        for row in &rows {
            let idx: Vec<usize> = (0..axes)
                .map(|a| ((row[a] - grid.lo()[a]) / grid.spacing(a)).round() as usize)
                .collect();
            for (a, &i) in idx.iter().enumerate() {
                if (grid.coord(a, i) - row[a]).abs() > 1e-9 * (1.0 + row[a].abs()) {
                    return Err(Error::Io(format!("coordinate {} is not on a uniform grid", row[a])));
                }
            }
            values[grid.flatten(&idx)] = row[axes];
        }
        SampledField::new(grid, values, order)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, axis_names: &[&str], value_name: &str) -> Result<()> {
        if axis_names.len() != self.grid.axes() {
            return Err(Error::Dimension("one name per axis required".into()));
        }
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<&str> = axis_names.to_vec();
        header.push(value_name);
        w.write_record(&header)?;
        for (k, node) in self.grid.nodes().enumerate() {
            let mut rec: Vec<String> = node.iter().map(|x| format!("{x:.17e}")).collect();
            rec.push(format!("{:.17e}", self.values[k]));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug)]
struct Interpolant(Arc<SampledField>);

impl GenericFn for Interpolant {
    fn arity(&self) -> usize {
        self.0.grid.axes()
    }

    fn eval<T: Real>(&self, x: &[T]) -> T {
        let f = &self.0;
        let axes = f.grid.axes();
        let mut bases: Vec<(usize, Vec<T>)> = Vec::with_capacity(axes);
        for a in 0..axes {
            let (start, width) = f.window(a, x[a].re());
            let nodes: Vec<f64> = (0..width).map(|k| f.grid.coord(a, start + k)).collect();
            let basis = (0..width)
                .map(|k| {
                    let mut l = T::one();
                    for (m, &xm) in nodes.iter().enumerate() {
                        if m != k {
                            l *= (x[a] - xm) / (nodes[k] - xm);
                        }
                    }
                    l
                })
                .collect();
            bases.push((start, basis));
        }
        let total: usize = bases.iter().map(|(_, b)| b.len()).product();
        let mut acc = T::zero();
        let mut node = vec![0; axes];
        for flat in 0..total {
            let mut rem = flat;
            let mut weight = T::one();
            for a in (0..axes).rev() {
                let width = bases[a].1.len();
                let k = rem % width;
                rem /= width;
                node[a] = bases[a].0 + k;
                weight *= bases[a].1[k];
            }
            acc += weight * f.value_at(&node);
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::ScalarField;
    use std::f64::consts::PI;

    #[test]
    fn fornberg_reproduces_classic_stencils() {
        let w = fd_weights(0.0, &[-1.0, 0.0, 1.0], 2);
        assert_eq!(w[1], vec![-0.5, 0.0, 0.5]);
        assert_eq!(w[2], vec![1.0, -2.0, 1.0]);
        let w = fd_weights(0.0, &[-2.0, -1.0, 0.0, 1.0, 2.0], 2);
        let expect = [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0];
        for (a, b) in w[1].iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    fn sampled_sine(n: usize, order: u8) -> SampledField {
        let grid = Grid::new(vec![0.0], vec![1.0], vec![n]).unwrap();
        SampledField::from_fn(grid, order, |p| (PI * p[0]).sin()).unwrap()
    }

    #[test]
    fn fourth_order_convergence_of_second_derivative() {
        let exact = -PI * PI * (PI * 0.3f64).sin();
        let errs: Vec<f64> = [11, 21, 41, 81]
            .iter()
            .map(|&n| (sampled_sine(n, 4).derivative(&[0.3], &[0, 0]).unwrap() - exact).abs())
            .collect();
        for w in errs.windows(2) {
            let slope = (w[0] / w[1]).log2();
            assert!((slope - 4.0).abs() < 0.3, "slope {slope}, errors {errs:?}");
        }
    }

    #[test]
    fn second_order_convergence_off_node() {
        let exact = PI * (PI * 0.37f64).cos();
        let errs: Vec<f64> = [11, 21, 41, 81]
            .iter()
            .map(|&n| (sampled_sine(n, 2).derivative(&[0.37], &[0]).unwrap() - exact).abs())
            .collect();
        let slope = (errs[2] / errs[3]).log2();
        assert!((slope - 2.0).abs() < 0.3, "slope {slope}");
    }

    #[test]
    fn out_of_domain_and_validation() {
        let f = sampled_sine(11, 4);
        assert!(matches!(f.derivative(&[1.5], &[]), Err(Error::OutOfDomain { .. })));
        let grid = Grid::new(vec![0.0], vec![1.0], vec![4]).unwrap();
        assert!(SampledField::new(grid.clone(), vec![0.0; 4], 4).is_err());
        assert!(SampledField::new(grid.clone(), vec![0.0; 4], 3).is_err());
        assert!(SampledField::new(grid, vec![0.0; 3], 2).is_err());
    }

    #[test]
    fn mixed_derivative_on_2d_grid() {
        let grid = Grid::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![21, 21]).unwrap();
        let f = SampledField::from_fn(grid, 4, |p| (p[0] * p[1]).exp()).unwrap();
        let p = [0.35, 0.6];
        let exact = (1.0 + p[0] * p[1]) * (p[0] * p[1]).exp();
        assert!((f.derivative(&p, &[0, 1]).unwrap() - exact).abs() < 1e-6);
    }

    #[test]
    fn interpolant_matches_nodes_and_differentiates() {
        let f = Arc::new(sampled_sine(41, 4));
        let interp = ScalarField::Sampled(f.clone());
        assert!((interp.jet_at(&[0.25]).v - (PI * 0.25).sin()).abs() < 1e-14);
        let err = (interp.jet_at(&[0.3]).g[0] - PI * (PI * 0.3).cos()).abs();
        assert!(err < 5e-4, "{err}");
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempdir();
        let path = dir.join("field.csv");
        let grid = Grid::new(vec![0.0, -1.0], vec![1.0, 1.0], vec![6, 5]).unwrap();
        let f = SampledField::from_fn(grid, 4, |p| p[0] + 2.0 * p[1] * p[1]).unwrap();
        f.write_csv(&path, &["s0", "s1"], "u").unwrap();
        let g = SampledField::read_csv(&path, 4).unwrap();
        assert_eq!(g.grid().counts(), f.grid().counts());
        for (a, b) in f.values().iter().zip(g.values()) {
            assert!((a - b).abs() < 1e-15);
        }
        std::fs::remove_dir_all(dir).ok();
    }

    fn tempdir() -> std::path::PathBuf {
        let d = std::env::temp_dir().join(format!("conflow-sampled-{}", std::process::id()));
        std::fs::create_dir_all(&d).unwrap();
        d
    }
}
