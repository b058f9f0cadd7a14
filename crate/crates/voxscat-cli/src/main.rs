//! `voxscat` command line: scenario-driven forward simulation, measurement
//! synthesis, two-step inversion, refinement loops and diagnostics.
//!
//! Exit codes: 0 success, 2 configuration/validation error, 3 numerical or
//! pipeline failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use voxscat_cli::{
    config::ScenarioConfig,
    pipeline::{self, PipelineError, RunReport},
};

#[derive(Parser)]
#[command(name = "voxscat", version, about = "Scalar-wave scattering scenarios: direct solves and near-field refractive-index reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Scenario configuration file
    #[arg(long)]
    config: PathBuf,
    /// Override the configured output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the configured noise seed
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress progress and timing output
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the direct problem on the truth grid and write u|_P and J
    Forward(CommonArgs),
    /// Forward solve plus synthetic measurements for every configuration
    Measure(CommonArgs),
    /// Invert measurement files previously written by `measure` or `run`
    Invert(CommonArgs),
    /// Full pipeline: synthesize, filter, invert, fuse, report
    Run(CommonArgs),
    /// Alternate `run` and adaptive grid refinement
    RefineLoop {
        #[command(flatten)]
        common: CommonArgs,
        /// Maximum number of rounds (including the initial run)
        #[arg(long, default_value_t = 2)]
        max_rounds: usize,
    },
    /// Gram-matrix, uniqueness-bound and non-uniqueness diagnostics
    Diagnose(CommonArgs),
}

fn load_config(args: &CommonArgs) -> Result<ScenarioConfig, voxscat_cli::ConfigError> {
    let mut cfg = ScenarioConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        if let Some(noise) = &mut cfg.noise {
            noise.seed = seed;
        }
    }
    Ok(cfg)
}

fn print_report(report: &RunReport, quiet: bool) {
    if quiet {
        return;
    }
    for c in &report.configs {
        println!(
            "{}: receivers {}/{}, cond_B {:.3e}, dropped {}, residual {:.3e}, \
             max_err {:.3e}, artifacts {}, masked {}",
            c.label,
            c.receivers_kept,
            c.receivers_total,
            c.cond_b,
            c.dropped_modes,
            c.residual,
            c.metrics.max_rel_err_k,
            c.metrics.artifact_count,
            c.metrics.masked_count
        );
    }
    let m = &report.final_metrics;
    println!(
        "final (fused = {}): max_err {:.3e}, mean_err {:.3e}, artifacts {}, masked {}",
        report.fused, m.max_rel_err_k, m.mean_rel_err_k, m.artifact_count, m.masked_count
    );
    for (stage, secs) in &report.timings {
        println!("time[{stage}] = {secs:.2}s");
    }
    println!("reconstruction: {}", report.reconstruction_path.display());
}

fn execute() -> Result<(), MainError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Forward(args) => {
            let cfg = load_config(&args)?;
            let sim_grid = cfg.truth.simulation_grid();
            let truth = cfg.truth.field_on(&sim_grid);
            std::fs::create_dir_all(&cfg.output_dir).map_err(PipelineError::Io)?;
            truth
                .write_csv(&cfg.output_dir.join("truth_k.csv"))
                .map_err(PipelineError::Csv)?;
            for (si, src) in cfg.sources.iter().enumerate() {
                let pos = src.position(&cfg.truth.bounds);
                let sol = voxscat::solve_forward(&truth, cfg.k0, &pos, &cfg.quadrature)
                    .map_err(PipelineError::Forward)?;
                sol.u_in
                    .write_csv(&cfg.output_dir.join(format!("forward_u_s{si}.csv")))
                    .map_err(PipelineError::Csv)?;
                voxscat::current_from_solution(&sol.u_in, &truth, cfg.k0)
                    .write_csv(&cfg.output_dir.join(format!("forward_j_s{si}.csv")))
                    .map_err(PipelineError::Csv)?;
                if !args.quiet {
                    println!(
                        "source {si}: residual {:.3e}, cond estimate {:.3e}",
                        sol.residual, sol.cond_estimate
                    );
                }
            }
            Ok(())
        }
        Command::Measure(args) => {
            let cfg = load_config(&args)?;
            let sets = pipeline::synthesize_all(&cfg)?;
            if !args.quiet {
                println!(
                    "wrote {} measurement sets to {}",
                    sets.len(),
                    cfg.output_dir.display()
                );
            }
            Ok(())
        }
        Command::Invert(args) => {
            let cfg = load_config(&args)?;
            let report = pipeline::run_inversion_from_files(&cfg)?;
            print_report(&report, args.quiet);
            Ok(())
        }
        Command::Run(args) => {
            let cfg = load_config(&args)?;
            let report = pipeline::run_scenario_cfg(&cfg)?;
            print_report(&report, args.quiet);
            Ok(())
        }
        Command::RefineLoop { common, max_rounds } => {
            if max_rounds == 0 {
                return Err(MainError::Validation("--max-rounds must be >= 1".into()));
            }
            let cfg = load_config(&common)?;
            let report = pipeline::run_refinement_loop_cfg(&cfg, max_rounds)?;
            if !common.quiet {
                println!(
                    "rounds: {} (stopped early: {})",
                    report.rounds.len(),
                    report.stopped_early
                );
                for (i, (before, after)) in report.regional_errors.iter().enumerate() {
                    println!(
                        "round {} region: mean_rel_err {before:.3e} -> {after:.3e}",
                        i + 2
                    );
                }
            }
            Ok(())
        }
        Command::Diagnose(args) => {
            let cfg = load_config(&args)?;
            let text = pipeline::run_diagnostics(&cfg)?;
            std::fs::create_dir_all(&cfg.output_dir).map_err(PipelineError::Io)?;
            std::fs::write(cfg.output_dir.join("diagnostics.txt"), &text)
                .map_err(PipelineError::Io)?;
            if !args.quiet {
                print!("{text}");
            }
            Ok(())
        }
    }
}

enum MainError {
    Config(voxscat_cli::ConfigError),
    Pipeline(PipelineError),
    Validation(String),
}

impl From<voxscat_cli::ConfigError> for MainError {
    fn from(e: voxscat_cli::ConfigError) -> Self {
        MainError::Config(e)
    }
}

impl From<PipelineError> for MainError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(c) => MainError::Config(c),
            other => MainError::Pipeline(other),
        }
    }
}

fn main() -> ExitCode {
    match execute() {
        Ok(()) => ExitCode::SUCCESS,
        Err(MainError::Config(e)) => {
            eprintln!("configuration error: {e}");
            ExitCode::from(2)
        }
        Err(MainError::Validation(msg)) => {
            eprintln!("validation error: {msg}");
            ExitCode::from(2)
        }
        Err(MainError::Pipeline(e)) => {
            eprintln!("pipeline error: {e}");
            ExitCode::from(3)
        }
    }
}
