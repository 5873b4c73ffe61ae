//! Forward-mode dual numbers.
//!
//! `Dual<T>` carries a value and one directional derivative. Nesting
//! (`Dual<Dual<f64>>`, ...) gives mixed higher derivatives: seed the
//! outer tangent along one axis and the inner tangent along another.
//!
//! Every scalar that flows through a field, flow or law implements [`Real`].
//! The trait also carries the dispatch hooks that let `dyn ScalarFn` and
//! `dyn JetLaw` objects be evaluated at any supported nesting depth.

use std::fmt::{self, Debug, Display};
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use crate::func::ScalarFn;
use crate::intrinsic::{FieldJet, FlowJet, JetLaw};

pub trait Real:
    Copy
    + Debug
    + Send
    + Sync
    + 'static
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    fn cst(v: f64) -> Self;
    /// Innermost real part.
    fn re(&self) -> f64;

    fn zero() -> Self {
        Self::cst(0.0)
    }
    fn one() -> Self {
        Self::cst(1.0)
    }

    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tan(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn sinh(self) -> Self;
    fn cosh(self) -> Self;
    fn tanh(self) -> Self;
    fn atan(self) -> Self;
    fn abs(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn powf(self, p: f64) -> Self;

    fn recip(self) -> Self {
        Self::one() / self
    }

    fn is_finite(&self) -> bool;

    /// Evaluate a scalar function object at this scalar type.
    fn call_fn(f: &dyn ScalarFn, x: &[Self]) -> Self;
    /// `∂f/∂x[axis]` at this scalar type, evaluating `f` one level deeper.
    ///
    /// Nesting is capped at four levels; asking for a partial at depth four panics.
    fn partial_fn(f: &dyn ScalarFn, x: &[Self], axis: usize) -> Self;
    /// Evaluate a pointwise law at this scalar type.
    fn call_law(law: &dyn JetLaw, s: &[Self], u: &[FieldJet<Self>], x: &FlowJet<Self>) -> Vec<Self>;
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn re(&self) -> f64 {
        *self
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn tan(self) -> Self {
        f64::tan(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn sinh(self) -> Self {
        f64::sinh(self)
    }
    fn cosh(self) -> Self {
        f64::cosh(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn atan(self) -> Self {
        f64::atan(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    fn powf(self, p: f64) -> Self {
        f64::powf(self, p)
    }
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
    fn call_fn(f: &dyn ScalarFn, x: &[Self]) -> Self {
        f.eval_f64(x)
    }
    fn partial_fn(f: &dyn ScalarFn, x: &[Self], axis: usize) -> Self {
        f.eval_d1(&seed(x, axis)).eps
    }
    fn call_law(law: &dyn JetLaw, s: &[Self], u: &[FieldJet<Self>], x: &FlowJet<Self>) -> Vec<Self> {
        law.residual_f64(s, u, x)
    }
}

/// Value plus one tangent component.
#[derive(Clone, Copy, PartialEq)]
pub struct Dual<T> {
    pub re: T,
    pub eps: T,
}

pub type D1 = Dual<f64>;
pub type D2 = Dual<D1>;
pub type D3 = Dual<D2>;
pub type D4 = Dual<D3>;

impl<T: Real> Dual<T> {
    pub fn new(re: T, eps: T) -> Self {
        Dual { re, eps }
    }

    pub fn constant(re: T) -> Self {
        Dual { re, eps: T::zero() }
    }

    pub fn variable(re: T) -> Self {
        Dual { re, eps: T::one() }
    }

    /// Apply a function with known derivative `df` at `self.re`.
    #[inline]
    fn chain(self, f: T, df: T) -> Self {
        Dual { re: f, eps: df * self.eps }
    }
}

impl<T: Debug> Debug for Dual<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:?} + {:?}ε)", self.re, self.eps)
    }
}

impl<T: Display> Display for Dual<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} + {}ε", self.re, self.eps)
    }
}

impl<T: Real> Add for Dual<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Dual { re: self.re + o.re, eps: self.eps + o.eps }
    }
}

impl<T: Real> Sub for Dual<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Dual { re: self.re - o.re, eps: self.eps - o.eps }
    }
}

impl<T: Real> Mul for Dual<T> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Dual { re: self.re * o.re, eps: self.re * o.eps + self.eps * o.re }
    }
}

impl<T: Real> Div for Dual<T> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = o.re.recip();
        let q = self.re * inv;
        Dual { re: q, eps: (self.eps - q * o.eps) * inv }
    }
}

impl<T: Real> Neg for Dual<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Dual { re: -self.re, eps: -self.eps }
    }
}

impl<T: Real> Add<f64> for Dual<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: f64) -> Self {
        Dual { re: self.re + o, eps: self.eps }
    }
}

impl<T: Real> Sub<f64> for Dual<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: f64) -> Self {
        Dual { re: self.re - o, eps: self.eps }
    }
}

impl<T: Real> Mul<f64> for Dual<T> {
    type Output = Self;
    #[inline]
    fn mul(self, o: f64) -> Self {
        Dual { re: self.re * o, eps: self.eps * o }
    }
}

impl<T: Real> Div<f64> for Dual<T> {
    type Output = Self;
    #[inline]
    fn div(self, o: f64) -> Self {
        Dual { re: self.re / o, eps: self.eps / o }
    }
}

impl<T: Real> AddAssign for Dual<T> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real> SubAssign for Dual<T> {
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<T: Real> MulAssign for Dual<T> {
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

macro_rules! impl_real_for_dual {
    ($ty:ty, $eval:ident, $law:ident, $partial:expr) => {
        impl Real for $ty {
            fn cst(v: f64) -> Self {
                Dual::constant(Real::cst(v))
            }
            fn re(&self) -> f64 {
                self.re.re()
            }
            fn sin(self) -> Self {
                self.chain(self.re.sin(), self.re.cos())
            }
            fn cos(self) -> Self {
                self.chain(self.re.cos(), -self.re.sin())
            }
            fn tan(self) -> Self {
                let t = self.re.tan();
                self.chain(t, t * t + 1.0)
            }
            fn exp(self) -> Self {
                let e = self.re.exp();
                self.chain(e, e)
            }
            fn ln(self) -> Self {
                self.chain(self.re.ln(), self.re.recip())
            }
            fn sqrt(self) -> Self {
                let s = self.re.sqrt();
                self.chain(s, (s * 2.0).recip())
            }
            fn sinh(self) -> Self {
                self.chain(self.re.sinh(), self.re.cosh())
            }
            fn cosh(self) -> Self {
                self.chain(self.re.cosh(), self.re.sinh())
            }
            fn tanh(self) -> Self {
                let t = self.re.tanh();
                self.chain(t, -(t * t) + 1.0)
            }
            fn atan(self) -> Self {
                self.chain(self.re.atan(), (self.re * self.re + 1.0).recip())
            }
            fn abs(self) -> Self {
                if self.re.re() < 0.0 {
                    -self
                } else {
                    self
                }
            }
            fn powi(self, n: i32) -> Self {
                if n == 0 {
                    return Self::one();
                }
                self.chain(self.re.powi(n), self.re.powi(n - 1) * n as f64)
            }
            fn powf(self, p: f64) -> Self {
                self.chain(self.re.powf(p), self.re.powf(p - 1.0) * p)
            }
            fn is_finite(&self) -> bool {
                self.re.is_finite() && self.eps.is_finite()
            }
            fn call_fn(f: &dyn ScalarFn, x: &[Self]) -> Self {
                f.$eval(x)
            }
            fn partial_fn(f: &dyn ScalarFn, x: &[Self], axis: usize) -> Self {
                ($partial)(f, x, axis)
            }
            fn call_law(
                law: &dyn JetLaw,
                s: &[Self],
                u: &[FieldJet<Self>],
                x: &FlowJet<Self>,
            ) -> Vec<Self> {
                law.$law(s, u, x)
            }
        }
    };
}

impl_real_for_dual!(D1, eval_d1, residual_d1, |f: &dyn ScalarFn, x: &[D1], a| f.eval_d2(&seed(x, a)).eps);
impl_real_for_dual!(D2, eval_d2, residual_d2, |f: &dyn ScalarFn, x: &[D2], a| f.eval_d3(&seed(x, a)).eps);
impl_real_for_dual!(D3, eval_d3, residual_d3, |f: &dyn ScalarFn, x: &[D3], a| f.eval_d4(&seed(x, a)).eps);
impl_real_for_dual!(D4, eval_d4, residual_d4, |_f: &dyn ScalarFn, _x: &[D4], _a| -> D4 {
    panic!("dual nesting depth exceeded")
});

/// Lift a slice of scalars into duals with zero tangent.
pub fn lift<T: Real>(x: &[T]) -> Vec<Dual<T>> {
    x.iter().map(|&v| Dual::constant(v)).collect()
}

/// Lift with a unit tangent along `axis`.
pub fn seed<T: Real>(x: &[T], axis: usize) -> Vec<Dual<T>> {
    x.iter()
        .enumerate()
        .map(|(i, &v)| if i == axis { Dual::variable(v) } else { Dual::constant(v) })
        .collect()
}

/// Lift with an arbitrary tangent direction.
pub fn seed_dir<T: Real>(x: &[T], dir: &[T]) -> Vec<Dual<T>> {
    x.iter().zip(dir).map(|(&v, &d)| Dual::new(v, d)).collect()
}
