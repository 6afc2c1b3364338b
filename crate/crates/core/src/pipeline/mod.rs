//! The experiment grid: training strategies, loss/sampler modes, the
//! maintain ablation, and report rendering.

mod config;
mod report;
mod run;

pub use config::{ExperimentConfig, GeneratorSet, Mode, StageConfig, StageSet, Strategy};
pub use report::{parse_report, render_report, ReportFormat};
pub use run::{
    run_full_grid, run_maintain_ablation, run_mode_grid, run_strategy, DatasetRole,
    ExperimentResult, FoldTrace, Runner, SeedMeans, SeedResult,
};
