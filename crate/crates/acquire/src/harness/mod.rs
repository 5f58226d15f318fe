//! Metrics, synthetic instances and experiment orchestration.

pub mod experiment;
pub mod metrics;
pub mod report;
pub mod sweeps;
pub mod synthetic;

pub use experiment::{
    run_experiment, run_experiment_on, DynamicsMethod, DynamicsSettings, ExperimentConfig, InstanceSource,
    MetricsReport, StrategySummary, TrialResult,
};
pub use metrics::{fair_objective, objectives, total_loss, weighted_loss, Objectives};
pub use report::emit_report;
pub use sweeps::{assumption_sweep, standard_sweep_configs, AssumptionSweep};
pub use synthetic::{synthetic_mixture, GroupScheme, Mixture, MixtureSpec};
