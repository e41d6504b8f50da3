//! Experiment orchestration: declarative configs, synthetic signals,
//! parameter sweeps with paired estimator/oracle curves, the LASSO
//! variable-selection driver, and persistence (CSV + JSON sidecar, 16-bit
//! PGM snapshots).

mod config;
mod lasso_select;
mod pgm;
mod sweep;
mod synth;

pub use config::{
    DenoiseSpec, ExperimentConfig, GridScale, LassoSpec, ModelSpec, PredictorSpec, ProbeSpec,
    SignalSpec, SweepSpec, SCHEMA_VERSION,
};
pub use lasso_select::{run_lasso_selection, LassoSelectionResult, ObjectiveOutcome};
pub use pgm::{read_pgm16, write_pgm16, PgmScale};
pub use sweep::{load_sweep, persist_sweep, run_sweep, CurveStat, SweepPoint, SweepResult};
pub use synth::{
    build_gamma_lasso_problem, generate_chirp, generate_sparse_beta, generate_stripes,
    ChirpParams, LassoProblem, Orientation, ShadeTo,
};
