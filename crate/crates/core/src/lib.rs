//! Intrinsic (flow-attached) coordinates for nonlinear PDEs, potential-operator
//! tests under a solution-dependent bilinear form, and determining equations
//! for symmetrizing flows.

// `!(a > b)` guards also reject NaN; tensor loops index several arrays at once.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod determine;
pub mod dual;
pub mod error;
pub mod expr;
pub mod fields;
pub mod func;
pub mod geometry;
pub mod intrinsic;
pub mod linalg;
pub mod quadrature;
pub mod variational;

pub use error::{Error, Result};
pub use fields::{ScalarField, VectorField};
pub use geometry::{DerivMode, FlowMap, FlowPerturbation, Point};
pub use intrinsic::{FlowLink, IntrinsicOperator, JetLaw, Law};
pub use quadrature::QuadratureSpec;
