//! Small dense matrices over any [`Real`] scalar.
//!
//! Sizes here never exceed 4×4 (space-time with n ≤ 3), so determinants
//! and adjugates use cofactor expansion. That keeps them polynomial in the
//! entries and therefore exact under dual-number evaluation.

use std::ops::{Index, IndexMut};

use crate::dual::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let r = rows.len();
        let c = rows.first().map(|x| x.len()).unwrap_or(0);
        Self::from_fn(r, c, |i, j| rows[i][j])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, o: &Self) -> Self {
        assert_eq!(self.cols, o.rows, "matmul shape mismatch");
        Self::from_fn(self.rows, o.cols, |i, j| {
            let mut acc = T::zero();
            for k in 0..self.cols {
                acc += self[(i, k)] * o[(k, j)];
            }
            acc
        })
    }

    pub fn matvec(&self, v: &[T]) -> Vec<T> {
        (0..self.rows)
            .map(|i| {
                let mut acc = T::zero();
                for k in 0..self.cols {
                    acc += self[(i, k)] * v[k];
                }
                acc
            })
            .collect()
    }

    pub fn scale(&self, s: T) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| self[(i, j)] * s)
    }

    pub fn add(&self, o: &Self) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| self[(i, j)] + o[(i, j)])
    }

    pub fn sub(&self, o: &Self) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| self[(i, j)] - o[(i, j)])
    }

    pub fn trace(&self) -> T {
        let mut acc = T::zero();
        for i in 0..self.rows.min(self.cols) {
            acc += self[(i, i)];
        }
        acc
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U) -> Mat<U> {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.data.iter()
    }

    fn minor(&self, skip_row: usize, skip_col: usize) -> Self {
        let n = self.rows;
        let mut data = Vec::with_capacity((n - 1) * (n - 1));
        for i in (0..n).filter(|&i| i != skip_row) {
            for j in (0..n).filter(|&j| j != skip_col) {
                data.push(self[(i, j)]);
            }
        }
        Mat { rows: n - 1, cols: n - 1, data }
    }

    /// Determinant by cofactor expansion along the first row.
    pub fn det(&self) -> T {
        assert_eq!(self.rows, self.cols, "det of non-square matrix");
        match self.rows {
            0 => T::one(),
            1 => self[(0, 0)],
            2 => self[(0, 0)] * self[(1, 1)] - self[(0, 1)] * self[(1, 0)],
            n => {
                let mut acc = T::zero();
                for j in 0..n {
                    let term = self[(0, j)] * self.minor(0, j).det();
                    if j % 2 == 0 {
                        acc += term;
                    } else {
                        acc -= term;
                    }
                }
                acc
            }
        }
    }

    /// Transposed cofactor matrix: `self · adjugate = det · I`.
    pub fn adjugate(&self) -> Self {
        let n = self.rows;
        if n == 1 {
            return Self::identity(1);
        }
        Self::from_fn(n, n, |i, j| {
            let d = self.minor(j, i).det();
            if (i + j) % 2 == 0 {
                d
            } else {
                -d
            }
        })
    }

    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if d.re().abs() < 1e-300 || !d.is_finite() {
            return None;
        }
        Some(self.adjugate().scale(d.recip()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Mat<f64> {
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, o: &Self) -> f64 {
        self.data.iter().zip(&o.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn to_nalgebra(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| (0..self.cols).map(|j| self[(i, j)]).collect()).collect()
    }
}

impl<T> Index<(usize, usize)> for Mat<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Mat<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// All permutations of `0..m` with their parity sign.
pub fn permutations(m: usize) -> Vec<(Vec<usize>, f64)> {
    fn rec(prefix: &mut Vec<usize>, used: &mut Vec<bool>, m: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == m {
            out.push(prefix.clone());
            return;
        }
        for k in 0..m {
            if !used[k] {
                used[k] = true;
                prefix.push(k);
                rec(prefix, used, m, out);
                prefix.pop();
                used[k] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; m], m, &mut out);
    out.into_iter()
        .map(|p| {
            let mut inversions = 0;
            for i in 0..m {
                for j in i + 1..m {
                    if p[i] > p[j] {
                        inversions += 1;
                    }
                }
            }
            let sign = if inversions % 2 == 0 { 1.0 } else { -1.0 };
            (p, sign)
        })
        .collect()
}

/// Cofactor matrix from the Levi-Civita contraction
/// `C^λ_ρ = (1/n!) ε^{λ ν₁…νₙ} ε_{ρ μ₁…μₙ} J^{μ₁}_{ν₁} ⋯ J^{μₙ}_{νₙ}`.
///
/// `jac[(μ, ν)]` holds `J^μ_ν`; the result satisfies `J · C = det(J) · I`.
pub fn levi_civita_cofactor<T: Real>(jac: &Mat<T>) -> Mat<T> {
    let m = jac.rows();
    let perms = permutations(m);
    let n_fact: f64 = (1..m).map(|k| k as f64).product();
    let mut c = Mat::zeros(m, m);
    for (p, sp) in &perms {
        for (q, sq) in &perms {
            // p = (λ, ν₁, …), q = (ρ, μ₁, …)
            let mut prod = T::cst(sp * sq);
            for k in 1..m {
                prod *= jac[(q[k], p[k])];
            }
            c[(p[0], q[0])] += prod;
        }
    }
    c.scale(T::cst(1.0 / n_fact))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn det_and_adjugate_of_4x4() {
        let m = Mat::from_rows(&[
            vec![2.0, 1.0, 0.5, 0.0],
            vec![0.3, 3.0, 0.2, 1.0],
            vec![0.0, 0.4, 1.5, 0.7],
            vec![1.0, 0.0, 0.1, 2.5],
        ]);
        let lu = m.to_nalgebra().determinant();
        assert!((m.det() - lu).abs() < 1e-12);
        let prod = m.matmul(&m.adjugate());
        assert!(prod.max_abs_diff(&Mat::identity(4).scale(lu)) < 1e-12);
    }

    #[test]
    fn levi_civita_matches_adjugate() {
        for n in 2..=4 {
            let m = Mat::from_fn(n, n, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.3 + if i == j { 1.0 } else { 0.0 });
            assert!(levi_civita_cofactor(&m).max_abs_diff(&m.adjugate()) < 1e-12);
        }
    }

    #[test]
    fn permutation_signs() {
        let p = permutations(3);
        assert_eq!(p.len(), 6);
        let total: f64 = p.iter().map(|(_, s)| s).sum();
        assert_eq!(total, 0.0);
    }
}
