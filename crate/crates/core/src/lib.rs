//! Alternating-minimization training of small dense networks, with
//! trace-level checks of sufficient-decrease conditions and convergence rates
//! under the Kurdyka-Łojasiewicz property.

// `!(x > 0.0)` style checks reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod io;
pub mod network;
pub mod numerics;
pub mod objectives;
pub mod solvers;
pub mod synthetic;
pub mod toys;

pub use error::{Error, Result};
pub use network::{ActivationKind, DataSet, LossKind, NetworkSpec, RegularizerKind};
pub use numerics::{gaussian_fill, matmul, solve_spd, Matrix, RandomSource};
pub use objectives::{BlockId, Hyperparams, ParamState, Problem, SplitForm};
pub use solvers::{
    IterTrace, SolverConfig, SolverKind, SolverOptions, SolverResult, Termination, TraceMeta,
    TraceRecord,
};
