//! Scalar function objects evaluable at every supported dual depth.
//!
//! Implement [`GenericFn`] once with a generic `eval<T: Real>`; the blanket
//! impl turns it into a [`ScalarFn`] trait object. Derivatives of any
//! `ScalarFn` come from nested forward-mode evaluation, never differencing.

use std::fmt::Debug;
use std::sync::Arc;

use crate::dual::{seed, Dual, Real, D1, D2, D3, D4};
use crate::linalg::Mat;

pub trait ScalarFn: Send + Sync + Debug {
    fn arity(&self) -> usize;
    fn eval_f64(&self, x: &[f64]) -> f64;
    fn eval_d1(&self, x: &[D1]) -> D1;
    fn eval_d2(&self, x: &[D2]) -> D2;
    fn eval_d3(&self, x: &[D3]) -> D3;
    fn eval_d4(&self, x: &[D4]) -> D4;
}

pub trait GenericFn: Send + Sync + Debug {
    fn arity(&self) -> usize;
    fn eval<T: Real>(&self, x: &[T]) -> T;
}

impl<G: GenericFn> ScalarFn for G {
    fn arity(&self) -> usize {
        GenericFn::arity(self)
    }
    fn eval_f64(&self, x: &[f64]) -> f64 {
        self.eval(x)
    }
    fn eval_d1(&self, x: &[D1]) -> D1 {
        self.eval(x)
    }
    fn eval_d2(&self, x: &[D2]) -> D2 {
        self.eval(x)
    }
    fn eval_d3(&self, x: &[D3]) -> D3 {
        self.eval(x)
    }
    fn eval_d4(&self, x: &[D4]) -> D4 {
        self.eval(x)
    }
}

pub type SFn = Arc<dyn ScalarFn>;

/// Evaluate at any scalar type.
#[inline]
pub fn call<T: Real>(f: &dyn ScalarFn, x: &[T]) -> T {
    T::call_fn(f, x)
}

/// Value and gradient.
pub fn gradient<T: Real>(f: &dyn ScalarFn, x: &[T]) -> (T, Vec<T>)
where
    Dual<T>: Real,
{
    let mut value = T::zero();
    let grad = (0..x.len())
        .map(|i| {
            let d = call(f, &seed(x, i));
            value = d.re;
            d.eps
        })
        .collect();
    if x.is_empty() {
        value = call(f, x);
    }
    (value, grad)
}

/// Value, gradient and Hessian from nested duals.
pub fn jet2<T: Real>(f: &dyn ScalarFn, x: &[T]) -> (T, Vec<T>, Mat<T>)
where
    Dual<T>: Real,
    Dual<Dual<T>>: Real,
{
    let m = x.len();
    let mut value = T::zero();
    let mut grad = vec![T::zero(); m];
    let mut hess = Mat::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let xi: Vec<Dual<Dual<T>>> = x
                .iter()
                .enumerate()
                .map(|(k, &v)| {
                    let inner = Dual::new(v, if k == j { T::one() } else { T::zero() });
                    let tangent = if k == i { Dual::constant(T::one()) } else { Dual::constant(T::zero()) };
                    Dual::new(inner, tangent)
                })
                .collect();
            let d = call(f, &xi);
            value = d.re.re;
            if i == j {
                grad[i] = d.eps.re;
            }
            hess[(i, j)] = d.eps.eps;
            hess[(j, i)] = d.eps.eps;
        }
    }
    if m == 0 {
        value = call(f, x);
    }
    (value, grad, hess)
}

/// Constant.
#[derive(Debug, Clone)]
pub struct Const {
    pub arity: usize,
    pub value: f64,
}

impl GenericFn for Const {
    fn arity(&self) -> usize {
        self.arity
    }
    fn eval<T: Real>(&self, _x: &[T]) -> T {
        T::cst(self.value)
    }
}

/// Coordinate projection `x -> x[index]`.
#[derive(Debug, Clone)]
pub struct Coord {
    pub arity: usize,
    pub index: usize,
}

impl GenericFn for Coord {
    fn arity(&self) -> usize {
        self.arity
    }
    fn eval<T: Real>(&self, x: &[T]) -> T {
        x[self.index]
    }
}

/// `offset + Σ w_i f_i`.
#[derive(Debug, Clone)]
pub struct LinComb {
    pub arity: usize,
    pub offset: f64,
    pub terms: Vec<(f64, SFn)>,
}

impl GenericFn for LinComb {
    fn arity(&self) -> usize {
        self.arity
    }
    fn eval<T: Real>(&self, x: &[T]) -> T {
        let mut acc = T::cst(self.offset);
        for (w, f) in &self.terms {
            if *w != 0.0 {
                acc += call(f.as_ref(), x) * *w;
            }
        }
        acc
    }
}

/// Pointwise product of two functions.
#[derive(Debug, Clone)]
pub struct Product(pub SFn, pub SFn);

impl GenericFn for Product {
    fn arity(&self) -> usize {
        self.0.arity()
    }
    fn eval<T: Real>(&self, x: &[T]) -> T {
        call(self.0.as_ref(), x) * call(self.1.as_ref(), x)
    }
}

/// `outer(inner_0(x), ..., inner_k(x))`.
#[derive(Debug, Clone)]
pub struct Compose {
    pub outer: SFn,
    pub inner: Vec<SFn>,
}

impl GenericFn for Compose {
    fn arity(&self) -> usize {
        self.inner.first().map(|f| f.arity()).unwrap_or(0)
    }
    fn eval<T: Real>(&self, x: &[T]) -> T {
        let args: Vec<T> = self.inner.iter().map(|g| call(g.as_ref(), x)).collect();
        call(self.outer.as_ref(), &args)
    }
}

/// Partial derivative `∂f/∂x[axis]`, exact via one dual level.
#[derive(Debug, Clone)]
pub struct Partial {
    pub f: SFn,
    pub axis: usize,
}

impl GenericFn for Partial {
    fn arity(&self) -> usize {
        self.f.arity()
    }
    fn eval<T: Real>(&self, x: &[T]) -> T {
        partial_dispatch(self.f.as_ref(), x, self.axis)
    }
}

/// `∂f/∂x[axis]` evaluated at `T`; needs `f` one dual level deeper.
pub fn partial_dispatch<T: Real>(f: &dyn ScalarFn, x: &[T], axis: usize) -> T {
    T::partial_fn(f, x, axis)
}
