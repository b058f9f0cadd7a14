//! Scenario runner for the scattering toolkit: configuration parsing and
//! the forward → measure → filter → invert → fuse → refine pipeline.

// validation guards are written `!(x > 0.0)` on purpose: NaN must fail them
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod pipeline;

pub use config::{ConfigError, ScenarioConfig};
pub use pipeline::{
    adaptive_refine, run_diagnostics, run_inversion_from_files, run_refinement_loop,
    run_refinement_loop_cfg, run_scenario, run_scenario_cfg, synthesize_all, Metrics,
    PipelineError, RefineReport, RunReport,
};
