//! Càdlàg path algebra, the Skorohod metric, Lévy drivers, and the adaptive
//! freezing functional `Ψ` that solves path-dependent SDEs driven by
//! semimartingales pathwise.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod coefficient;
pub mod error;
pub mod functional;
pub mod levy;
pub mod malliavin;
pub mod matrix;
pub mod metric;
pub mod path;

pub use coefficient::{
    caglad_approx, check_assumptions, eval_g, AssumptionReport, Coefficient, Dims, MarkovCoefficient, Registry,
};
pub use error::{Error, Result};
pub use functional::{breakpoints, reference_integrate, solve, IterationState, Solution, SolverConfig, Termination};
pub use levy::{DominatingProcess, DriverSample, JumpLaw, LevySpec};
pub use malliavin::{MalliavinDerivative, MalliavinProbe};
pub use matrix::Matrix;
pub use metric::{skorokhod_distance_bound, skorokhod_distance_exact, SkorokhodBound, TimeWarp};
pub use path::{CadlagPath, MatrixPath};
