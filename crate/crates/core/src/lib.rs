//! Spectral score-based diffusion for graph generation.
//!
//! Graphs are split into node features `X` and a symmetric adjacency `A`.
//! Instead of diffusing every adjacency entry, the adjacency is decomposed
//! once as `A = U diag(Λ) Uᵀ` and only the eigenvalues `Λ` (together with
//! `X`) are corrupted and denoised. Generation runs the reverse SDE on
//! `(X, Λ)`, draws an eigenbasis `U` from the training set and recomposes.
//!
//! Module map:
//!
//! - [`graphs`]: graph and spectrum types, Jacobi eigensolver, truncation, binarization
//! - [`schedules`]: VP/VE noise schedules with closed-form integrals
//! - [`diffusion`]: perturbation kernels, conditional scores, forward simulation,
//!   the rank-n adjacency noise process and its covariance kernel
//! - [`scorenet`]: small score networks with reverse-mode gradients and checkpoints
//! - [`training`]: denoising score matching loop
//! - [`sampling`]: predictor-corrector and splitting reverse solvers, full-rank baseline
//! - [`metrics`]: degree / clustering / orbit MMD evaluation
//! - [`datasets`]: synthetic generators and the JSON-lines dataset format
//! - [`oracles`]: independent reference computations used by tests and self-verification

pub mod datasets;
pub mod diffusion;
pub mod error;
pub mod graphs;
pub mod metrics;
pub mod oracles;
pub mod rng;
pub mod sampling;
pub mod schedules;
pub mod scorenet;
pub mod training;

pub use error::{Error, Result};
pub use graphs::{Graph, Spectrum};
pub use schedules::{MarginalStats, NoiseSchedule, ScheduleFamily, ScheduleKind};
pub use scorenet::{ScoreNetParams, Variant};
pub use training::TrainConfig;
pub use sampling::{SampleConfig, Solver};
