//! Weighted L2-regularized empirical risk minimization with safe sample
//! screening, including distributionally robust screening that holds for every
//! weight vector in a Euclidean ball.

pub mod ball_max;
pub mod error;
pub mod kernels;
pub mod problem;
pub mod screening;
pub mod solver;

pub use ball_max::{maximize_over_ball, BallMaxResult, QuadraticObjective, SecularProblem};
pub use error::{Error, Result};
pub use kernels::{gram_linear, gram_rbf, load_precomputed, Bandwidth, GramMatrix, KernelSource, RbfMode};
pub use problem::{Dataset, Interval, LossKind, ModelState, WeightBall};
pub use screening::{screen_dr, screen_per_weight, ScreeningCertificate, ScreeningKind};
pub use solver::{check_kkt, train, SolverConfig, SweepOrder};
