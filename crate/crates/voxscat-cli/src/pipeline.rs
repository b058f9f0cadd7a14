//! End-to-end scenario execution: forward simulation on the truth grid,
//! measurement synthesis per source/receiver configuration, optional
//! filtering, the two-step inversion per configuration, rotation fusion,
//! adaptive refinement, metrics against the declared ground truth, and all
//! file artifacts.
//!
//! Every emitted file is byte-deterministic for a fixed configuration
//! (including noise seeds); wall-clock timings live only in the returned
//! report and the console, never in the artifacts.

use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use thiserror::Error;
use voxscat::{
    assemble_first_kind, build_receivers_focused, current_from_solution, filter_measurements,
    reconstruct_k, refinement_region, rotation_fuse, solve_current, solve_forward,
    synthesize_with_solution, ForwardSolution, MeasurementSet, NoiseSpec, Parallelepiped,
    Reconstruction, VoxelIndex,
};

use crate::config::{ConfigError, FilterSpec, FilterStage, ScenarioConfig};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("forward stage: {0}")]
    Forward(#[from] voxscat::forward::ForwardError),
    #[error("measurement stage: {0}")]
    Measurement(#[from] voxscat::measurement::MeasurementError),
    #[error("inversion stage: {0}")]
    Inverse(#[from] voxscat::inverse::InverseError),
    #[error("geometry: {0}")]
    Geometry(#[from] voxscat::geometry::GeometryError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] voxscat::io::CsvError),
    #[error("diagnostics: {0}")]
    Diagnostics(#[from] voxscat::diagnostics::DiagnosticsError),
    #[error("no voxel exceeds the refinement threshold; nothing to refine")]
    NothingToRefine,
    #[error("measurement file missing: {0}")]
    MissingMeasurement(PathBuf),
}

/// Error metrics of one reconstruction against the declared ground truth.
#[derive(Debug, Clone, Copy)]
pub struct Metrics {
    pub max_rel_err_k: f64,
    pub mean_rel_err_k: f64,
    /// Unmasked background voxels reconstructed as if inhomogeneous
    /// (deviation beyond half the smallest true inclusion contrast).
    pub artifact_count: usize,
    pub masked_count: usize,
}

/// Per-configuration outcome.
#[derive(Debug, Clone)]
pub struct ConfigReport {
    pub label: String,
    pub source_index: usize,
    pub receiver_index: usize,
    pub receivers_total: usize,
    pub receivers_kept: usize,
    pub cond_b: f64,
    pub dropped_modes: usize,
    pub residual: f64,
    pub metrics: Metrics,
}

/// Outcome of one full scenario run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub name: String,
    pub configs: Vec<ConfigReport>,
    pub fused: bool,
    pub final_metrics: Metrics,
    pub final_rec: Reconstruction,
    pub reconstruction_path: PathBuf,
    /// (stage, seconds); console-only, never written into artifacts.
    pub timings: Vec<(String, f64)>,
}

/// Outcome of a refinement loop.
#[derive(Debug)]
pub struct RefineReport {
    pub rounds: Vec<RunReport>,
    /// Reconstruction domain of each round.
    pub round_bounds: Vec<Parallelepiped>,
    /// For each refinement round r >= 2: mean relative error of round r-1
    /// restricted to the refined region versus round r over the same region.
    pub regional_errors: Vec<(f64, f64)>,
    pub stopped_early: bool,
    /// Region the next round would refine, when the budget ran out while
    /// something still exceeded the threshold.
    pub proposed_next: Option<Parallelepiped>,
}

pub fn run_scenario(config_path: &Path) -> Result<RunReport, PipelineError> {
    let cfg = ScenarioConfig::load(config_path)?;
    run_scenario_cfg(&cfg)
}

/// Synthesizes all measurement sets (one per source x receiver block) and
/// writes the forward-stage artifacts.
pub fn synthesize_all(cfg: &ScenarioConfig) -> Result<Vec<MeasurementSet>, PipelineError> {
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out)?;
    let sim_grid = cfg.truth.simulation_grid();
    let truth_field = cfg.truth.field_on(&sim_grid);
    truth_field.write_csv(&out.join("truth_k.csv"))?;

    let mut solutions: Vec<ForwardSolution> = Vec::new();
    for (si, src) in cfg.sources.iter().enumerate() {
        let pos = src.position(&cfg.truth.bounds);
        let sol = solve_forward(&truth_field, cfg.k0, &pos, &cfg.quadrature)?;
        sol.u_in.write_csv(&out.join(format!("forward_u_s{si}.csv")))?;
        current_from_solution(&sol.u_in, &truth_field, cfg.k0)
            .write_csv(&out.join(format!("forward_j_s{si}.csv")))?;
        solutions.push(sol);
    }

    let mut sets = Vec::new();
    let mut ci = 0usize;
    for (si, src) in cfg.sources.iter().enumerate() {
        let src_pos = src.position(&cfg.truth.bounds);
        for rspec in cfg.receivers.iter() {
            let receivers = build_receivers_focused(
                &cfg.truth.bounds,
                &cfg.bounds,
                rspec.axis,
                rspec.d_r,
                rspec.n_planes,
                rspec.plane_gap,
                rspec.per_plane,
            )?;
            let noise = cfg.noise.map(|n| NoiseSpec {
                rel_sigma: n.rel_sigma,
                seed: config_seed(n.seed, ci),
            });
            let meas = synthesize_with_solution(
                &truth_field,
                cfg.k0,
                &src_pos,
                &solutions[si],
                &receivers,
                &cfg.quadrature,
                noise,
            )?;
            meas.write_csv(&out.join(format!("meas_c{ci}.csv")))?;
            sets.push(meas);
            ci += 1;
        }
    }
    Ok(sets)
}

fn config_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Runs the full pipeline in memory.
pub fn run_scenario_cfg(cfg: &ScenarioConfig) -> Result<RunReport, PipelineError> {
    let mut timings = Vec::new();
    let t0 = Instant::now();
    let sets = synthesize_all(cfg)?;
    timings.push(("synthesize".to_string(), t0.elapsed().as_secs_f64()));
    invert_sets(cfg, &sets, timings)
}

/// Loads previously written measurement files and runs the inversion only.
pub fn run_inversion_from_files(cfg: &ScenarioConfig) -> Result<RunReport, PipelineError> {
    let total = cfg.sources.len() * cfg.receivers.len();
    let mut sets = Vec::new();
    for ci in 0..total {
        let path = cfg.output_dir.join(format!("meas_c{ci}.csv"));
        if !path.exists() {
            return Err(PipelineError::MissingMeasurement(path));
        }
        sets.push(MeasurementSet::read_csv(&path)?);
    }
    invert_sets(cfg, &sets, Vec::new())
}

fn invert_sets(
    cfg: &ScenarioConfig,
    sets: &[MeasurementSet],
    mut timings: Vec<(String, f64)>,
) -> Result<RunReport, PipelineError> {
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out)?;
    let grid = cfg.recon_grid();
    let n_vox = grid.voxel_count();

    let mut reports = Vec::new();
    let mut recs = Vec::new();
    let t_inv = Instant::now();
    for (ci, meas) in sets.iter().enumerate() {
        let si = ci / cfg.receivers.len();
        let ri = ci % cfg.receivers.len();
        let receivers_total = meas.receivers.len();

        // pre-solve filtering rejects receivers that disagree grossly with
        // the zero-scatter (incident field) prediction
        let mut working = meas.clone();
        if let Some(f) = cfg.filter.filter_at(FilterStage::PreSolve) {
            let reference = prediction_reference(&working, working.u_incident.clone());
            working = filter_measurements(
                &working,
                &reference,
                f.max_rel_dev,
                f.max_rough,
                n_vox,
            )?;
        }

        let mut system = assemble_first_kind(&grid, cfg.k0, &working.receivers, &cfg.quadrature)?;
        let (mut j_rec, mut diag) = solve_current(&system, &working, &cfg.regularization)?;

        if let Some(f) = cfg.filter.filter_at(FilterStage::PostSolve) {
            // predict the data from the first-pass current, filter, re-solve
            let predicted_total: Vec<Complex64> = {
                let b = &system.matrix;
                let j = nalgebra::DVector::from_column_slice(j_rec.values());
                let us = b * j;
                working
                    .u_incident
                    .iter()
                    .zip(us.iter())
                    .map(|(inc, s)| inc + s)
                    .collect()
            };
            let reference = prediction_reference(&working, predicted_total);
            working = filter_measurements(
                &working,
                &reference,
                f.max_rel_dev,
                f.max_rough,
                n_vox,
            )?;
            system = assemble_first_kind(&grid, cfg.k0, &working.receivers, &cfg.quadrature)?;
            let solved = solve_current(&system, &working, &cfg.regularization)?;
            j_rec = solved.0;
            diag = solved.1;
        }

        let rec = reconstruct_k(
            &j_rec,
            cfg.k0,
            &working.source,
            &cfg.quadrature,
            cfg.guard_eps,
            diag,
        )?;
        j_rec.write_csv(&out.join(format!("j_rec_c{ci}.csv")))?;
        rec.write_csv(&out.join(format!("recon_c{ci}.csv")))?;

        let metrics = compute_metrics(cfg, &rec);
        reports.push(ConfigReport {
            label: format!("c{ci}"),
            source_index: si,
            receiver_index: ri,
            receivers_total,
            receivers_kept: working.receivers.len(),
            cond_b: diag.cond_b,
            dropped_modes: diag.dropped_modes,
            residual: diag.residual,
            metrics,
        });
        recs.push(rec);
    }
    timings.push(("invert".to_string(), t_inv.elapsed().as_secs_f64()));

    let t_fuse = Instant::now();
    let fused = cfg.fuse && recs.len() >= 2;
    let final_rec = if fused {
        rotation_fuse(&recs)?
    } else {
        recs[0].clone()
    };
    timings.push(("fuse".to_string(), t_fuse.elapsed().as_secs_f64()));

    let final_metrics = compute_metrics(cfg, &final_rec);
    let recon_path = out.join("recon_final.csv");
    final_rec.write_csv(&recon_path)?;
    write_slices(&final_rec, &out.join("slices"))?;

    let report = RunReport {
        name: cfg.name.clone(),
        configs: reports,
        fused,
        final_metrics,
        final_rec,
        reconstruction_path: recon_path,
        timings,
    };
    std::fs::write(out.join("report.txt"), render_report(cfg, &report))?;
    Ok(report)
}

/// Reference set for filtering: same receivers, predicted totals.
fn prediction_reference(meas: &MeasurementSet, predicted_total: Vec<Complex64>) -> MeasurementSet {
    let u_scattered = predicted_total
        .iter()
        .zip(&meas.u_incident)
        .map(|(t, i)| t - i)
        .collect();
    MeasurementSet {
        source: meas.source,
        k0: meas.k0,
        receivers: meas.receivers.clone(),
        u_total: predicted_total,
        u_incident: meas.u_incident.clone(),
        u_scattered,
        noise: None,
    }
}

trait FilterAt {
    fn filter_at(&self, stage: FilterStage) -> Option<FilterSpec>;
}

impl FilterAt for Option<FilterSpec> {
    fn filter_at(&self, stage: FilterStage) -> Option<FilterSpec> {
        match self {
            Some(f) if f.stage == stage => Some(*f),
            _ => None,
        }
    }
}

fn compute_metrics(cfg: &ScenarioConfig, rec: &Reconstruction) -> Metrics {
    let grid = rec.k_rec.grid();
    let truth = cfg.truth.field_on(grid);
    let background = cfg.truth.background;
    let c_min = cfg.min_inclusion_contrast();
    let artifact_threshold = if c_min.is_finite() {
        c_min / 2.0
    } else {
        0.05 * cfg.k0.as_complex().norm()
    };

    let mut max_err = 0.0f64;
    let mut sum_err = 0.0f64;
    let mut unmasked = 0usize;
    let mut artifacts = 0usize;
    for i in 0..grid.voxel_count() {
        if !rec.mask[i] {
            continue;
        }
        let kt = truth.values()[i];
        let err = (rec.k_rec.values()[i] - kt).norm() / kt.norm();
        max_err = max_err.max(err);
        sum_err += err;
        unmasked += 1;
        let is_background = (kt - background).norm() <= 1e-12 * background.norm();
        if is_background && (rec.k_rec.values()[i] - background).norm() > artifact_threshold {
            artifacts += 1;
        }
    }
    Metrics {
        max_rel_err_k: if unmasked == 0 { f64::NAN } else { max_err },
        mean_rel_err_k: if unmasked == 0 {
            f64::NAN
        } else {
            sum_err / unmasked as f64
        },
        artifact_count: artifacts,
        masked_count: rec.diagnostics.masked_count,
    }
}

/// Mean relative error of a reconstruction over the voxels whose centers lie
/// in `region` (unmasked only). Used to compare refinement rounds on the
/// same physical region.
pub fn mean_rel_err_in(
    cfg: &ScenarioConfig,
    rec: &Reconstruction,
    region: &Parallelepiped,
) -> f64 {
    let grid = rec.k_rec.grid();
    let mut sum = 0.0;
    let mut count = 0usize;
    for idx in grid.indices() {
        let l = grid.linear(idx);
        if !rec.mask[l] {
            continue;
        }
        let c = grid.voxel_center(idx).expect("iterated index");
        if region.distance_to(&c) > 0.0 {
            continue;
        }
        let kt = cfg.truth.value_at(&c);
        sum += (rec.k_rec.values()[l] - kt).norm() / kt.norm();
        count += 1;
    }
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

fn write_slices(rec: &Reconstruction, dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir)?;
    let grid = rec.k_rec.grid();
    let [n1, n2, n3] = grid.n();
    for i3 in 0..n3 {
        let mut out = String::from("i1,i2,re_k,im_k,masked\n");
        for i1 in 0..n1 {
            for i2 in 0..n2 {
                let l = grid.linear(VoxelIndex([i1, i2, i3]));
                let k = rec.k_rec.values()[l];
                out.push_str(&format!(
                    "{i1},{i2},{:.16e},{:.16e},{}\n",
                    k.re,
                    k.im,
                    !rec.mask[l] as u8
                ));
            }
        }
        std::fs::write(dir.join(format!("slice_{i3:03}.csv")), out)?;
    }
    Ok(())
}

fn render_report(cfg: &ScenarioConfig, report: &RunReport) -> String {
    let mut s = String::new();
    s.push_str(&format!("scenario = {}\n", report.name));
    s.push_str(&format!("configurations = {}\n", report.configs.len()));
    s.push_str(&format!("fused = {}\n", report.fused));
    for r in &report.configs {
        let src = &cfg.sources[r.source_index];
        let rx = &cfg.receivers[r.receiver_index];
        s.push_str(&format!("\n[{}]\n", r.label));
        s.push_str(&format!(
            "source = {:?} d_s={}\n",
            src.face, src.d_s
        ));
        s.push_str(&format!(
            "receivers = {} d_r={} planes={} per={}x{}\n",
            rx.axis, rx.d_r, rx.n_planes, rx.per_plane[0], rx.per_plane[1]
        ));
        s.push_str(&format!(
            "receivers_kept = {} of {}\n",
            r.receivers_kept, r.receivers_total
        ));
        s.push_str(&format!("cond_B = {:.6e}\n", r.cond_b));
        s.push_str(&format!("dropped_modes = {}\n", r.dropped_modes));
        s.push_str(&format!("residual = {:.6e}\n", r.residual));
        s.push_str(&render_metrics(&r.metrics));
    }
    s.push_str("\n[final]\n");
    s.push_str(&render_metrics(&report.final_metrics));
    s
}

fn render_metrics(m: &Metrics) -> String {
    format!(
        "max_rel_err_k = {:.6e}\nmean_rel_err_k = {:.6e}\nartifact_count = {}\nmasked_count = {}\n",
        m.max_rel_err_k, m.mean_rel_err_k, m.artifact_count, m.masked_count
    )
}

/// Narrows the scenario to the detected inhomogeneity region: the
/// reconstruction grid becomes the hot bounding box refined by
/// `refine.factor`, receiver lattices are regenerated against the new
/// region (footprint focused, standoff still measured from the scatterer
/// face), and their density is raised to keep the first-kind system
/// overdetermined. Ground truth and sources are untouched.
pub fn adaptive_refine(
    cfg: &ScenarioConfig,
    rec: &Reconstruction,
) -> Result<ScenarioConfig, PipelineError> {
    let Some((lo, hi)) = refinement_region(rec, cfg.refine.threshold) else {
        return Err(PipelineError::NothingToRefine);
    };
    let grid = rec.k_rec.grid();
    let mut region = Vec::new();
    for i1 in lo.0[0]..=hi.0[0] {
        for i2 in lo.0[1]..=hi.0[1] {
            for i3 in lo.0[2]..=hi.0[2] {
                region.push(VoxelIndex([i1, i2, i3]));
            }
        }
    }
    let refined = grid.refine(&region, cfg.refine.factor)?;
    let n_new = refined.voxel_count();

    let mut receivers = cfg.receivers.clone();
    for r in receivers.iter_mut() {
        let needed = (2 * n_new).div_ceil(r.n_planes);
        let per_axis = (needed as f64).sqrt().ceil() as usize;
        r.per_plane = [r.per_plane[0].max(per_axis), r.per_plane[1].max(per_axis)];
    }

    Ok(ScenarioConfig {
        bounds: refined.bounds().clone(),
        grid_n: refined.n(),
        receivers,
        ..cfg.clone()
    })
}

/// Alternates scenario runs and adaptive refinement until nothing exceeds
/// the threshold or the round budget is exhausted. Each round writes into
/// `output_dir/round<k>/`.
pub fn run_refinement_loop(
    config_path: &Path,
    max_rounds: usize,
) -> Result<RefineReport, PipelineError> {
    let base = ScenarioConfig::load(config_path)?;
    run_refinement_loop_cfg(&base, max_rounds)
}

pub fn run_refinement_loop_cfg(
    base: &ScenarioConfig,
    max_rounds: usize,
) -> Result<RefineReport, PipelineError> {
    assert!(max_rounds >= 1, "max_rounds must be >= 1");
    let base_out = base.output_dir.clone();
    let mut rounds = Vec::new();
    let mut round_bounds = Vec::new();
    let mut regional = Vec::new();
    let mut stopped_early = false;

    let mut cfg = base.clone();
    cfg.output_dir = base_out.join("round1");
    let mut report = run_scenario_cfg(&cfg)?;
    round_bounds.push(cfg.bounds.clone());

    for round in 2..=max_rounds {
        let next = match adaptive_refine(&cfg, &report.final_rec) {
            Ok(mut next) => {
                next.output_dir = base_out.join(format!("round{round}"));
                next
            }
            Err(PipelineError::NothingToRefine) => {
                stopped_early = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let next_report = run_scenario_cfg(&next)?;
        let region = next.bounds.clone();
        let prev_err = mean_rel_err_in(&cfg, &report.final_rec, &region);
        let curr_err = mean_rel_err_in(&next, &next_report.final_rec, &region);
        regional.push((prev_err, curr_err));
        round_bounds.push(region);
        rounds.push(std::mem::replace(&mut report, next_report));
        cfg = next;
    }
    let proposed_next = if stopped_early {
        None
    } else {
        match adaptive_refine(&cfg, &report.final_rec) {
            Ok(next) => Some(next.bounds),
            Err(PipelineError::NothingToRefine) => None,
            Err(e) => return Err(e),
        }
    };
    rounds.push(report);

    let mut summary = String::new();
    summary.push_str(&format!("rounds = {}\n", rounds.len()));
    summary.push_str(&format!("stopped_early = {stopped_early}\n"));
    for (i, (prev, curr)) in regional.iter().enumerate() {
        summary.push_str(&format!(
            "round{}_region_mean_rel_err_before = {prev:.6e}\n",
            i + 2
        ));
        summary.push_str(&format!(
            "round{}_region_mean_rel_err_after = {curr:.6e}\n",
            i + 2
        ));
    }
    match &proposed_next {
        Some(b) => summary.push_str(&format!(
            "proposed_next_region = {:?} .. {:?}\n",
            b.lower().coords.as_slice(),
            b.upper().coords.as_slice()
        )),
        None => summary.push_str("proposed_next_region = none\n"),
    }
    std::fs::create_dir_all(&base_out)?;
    std::fs::write(base_out.join("refine_report.txt"), summary)?;

    Ok(RefineReport {
        rounds,
        round_bounds,
        regional_errors: regional,
        stopped_early,
        proposed_next,
    })
}

/// Runs the diagnostics suite for a scenario: Gram/uniqueness numbers on the
/// reconstruction grid plus the non-uniqueness oracle (at k₀ = 1, where the
/// quadrature budget is comfortable; the construction itself holds for any
/// k₀). Returns the rendered `key = value` report.
pub fn run_diagnostics(cfg: &ScenarioConfig) -> Result<String, PipelineError> {
    let grid = cfg.recon_grid();
    let k0 = cfg.k0.as_complex().re;
    let report = voxscat::uniqueness_bound(&grid, k0)?;
    let gram = voxscat::gram_matrix(&grid, k0)?;
    let pd = nalgebra::Cholesky::new(gram.matrix.clone()).is_some();
    let oracle = voxscat::nonuniqueness_oracle(1.0, &cfg.quadrature)?;

    let mut s = String::new();
    s.push_str(&format!("k0 = {k0}\n"));
    s.push_str(&format!("grid_n = {:?}\n", grid.n()));
    match report.bound {
        Some(b) => s.push_str(&format!("uniqueness_bound = {b:.6e}\n")),
        None => s.push_str("uniqueness_bound = n/a (anisotropic voxel counts)\n"),
    }
    s.push_str(&format!("bound_satisfied = {}\n", report.satisfied));
    s.push_str(&format!("offdiag_norm = {:.6e}\n", report.offdiag_norm));
    s.push_str(&format!("dominance_margin = {:.6e}\n", report.dominance_margin));
    s.push_str(&format!("gram_positive_definite = {pd}\n"));
    s.push_str(&format!(
        "nonuniqueness_max_exterior_potential = {:.6e}\n",
        oracle.max_exterior_potential
    ));
    s.push_str(&format!(
        "nonuniqueness_interior_match_error = {:.6e}\n",
        oracle.interior_match_error
    ));
    for (i, (ext, int)) in oracle.levels.iter().enumerate() {
        s.push_str(&format!("level{i}_exterior = {ext:.6e}\n"));
        s.push_str(&format!("level{i}_interior = {int:.6e}\n"));
    }
    Ok(s)
}
