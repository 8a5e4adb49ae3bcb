//! Numerical solvers used by the fitting stages: a bounded-variable linear
//! least squares solver and a box-constrained Levenberg-Marquardt driver.

pub mod bvls;
pub mod lm;
