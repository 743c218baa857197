//! Recursive incremental constraint satisfaction.
//!
//! Constraints from a seeded random stream are activated one at a time; after
//! each activation the current assignment is repaired by zero-temperature
//! single-variable moves, and the number of accepted flips is recorded. The
//! integrated flip count diverges at the density where the procedure can no
//! longer keep up, which [`analysis`] locates with a power-law fit.
//! [`landscape`] enumerates small instances exactly to check the nested
//! solution-set picture behind the procedure.

pub mod analysis;
pub mod driver;
pub mod error;
pub mod landscape;
pub mod repair;
pub mod rng;
pub mod state;
pub mod stream;
pub mod trajectory_io;

pub use analysis::{
    aggregate, fit_points, fit_power_law, AggregateTable, CurvePoint, DivergenceFit, Observable, Report, ReportEntry,
    WindowPolicy,
};
pub use driver::{run_incremental, run_observed, sweep, InitRule, RunObserver, StepRecord, StopReason, Trajectory};
pub use error::{Error, Result};
pub use landscape::{descent_equivalence_check, enumerate_prefixes, pseudo_energy, DescentReport, PrefixReport};
pub use repair::{min_repair_oracle, repair, MoveRule, RepairOutcome, RepairParams, RepairStop};
pub use state::{init_state, Assignment, ViolationState};
pub use stream::{generate_stream, read_stream, write_stream, Constraint, ConstraintStream, Literal, ProblemKind};
