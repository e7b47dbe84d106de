//! Registration orchestration, evaluation grids and metric sweeps.

mod evaluate;
mod objective;
mod register;
mod sweep;

pub use evaluate::{
    evaluate, read_case_csv, write_report, CaseRecord, CaseSeeds, CaseSource, EvalReport, EvalSpec, ReportRow, RunSpec,
    Timing,
};
pub use objective::{Objective, Similarity};
pub use register::{
    init_at_tre, register, register_case, GroundTruth, Initialization, RegistrationConfig, RegistrationResult,
};
pub use sweep::{metric_sweep, Axis, SweepTable};
