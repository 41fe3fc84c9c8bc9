//! Experiment configs, named scenarios and the runners behind the CLI.

pub mod config;
pub mod run;
pub mod scenarios;

pub use config::{CalibrationMode, CalibrationSpec, ExperimentConfig, FiberSpec, LossName, MeshSpec, SweepSpec};
pub use run::{exit_code, RunOptions, RunReport};
pub use scenarios::{preset, scenario, BeamCase, Command, ScenarioInfo, SCENARIOS};
