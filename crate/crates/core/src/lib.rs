//! Trajectory optimization for mechanical systems with one shape coordinate
//! `s` and one cyclic coordinate `θ`.
//!
//! The crate solves the full optimal control problem by multiple shooting,
//! the reduced problem on the trim manifold and the steady-state problem,
//! evaluates their first-order optimality conditions and quantifies turnpike
//! behaviour of the solutions. The Kepler problem is the reference model.

pub mod config;
pub mod error;
pub mod model;
pub mod nco;
pub mod nlp;
pub mod ocp;
pub mod presets;
pub mod trim;
pub mod turnpike;

pub use config::{ExperimentConfig, OcpConfig, Preset};
pub use error::{Error, Result};
pub use model::{CoState, FnModel, HamState, MechModel, State, Trajectory};
pub use nco::{NcoResidualReport, ReducedCostate};
pub use nlp::{NlpProblem, NlpSolution, NlpStatus, SqpOptions};
pub use ocp::{
    solve_ocp, solve_sop, solve_tocp, OcpOptions, OcpSolution, OcpSpec, SopSolution, StageCost, Terminal,
    TocpSolution,
};
pub use presets::{kepler_model, preset_fig1, preset_fig2, KeplerModel, KeplerParams};
pub use trim::TrimPoint;
pub use turnpike::{DissipativityCertificate, TurnpikeReport};
