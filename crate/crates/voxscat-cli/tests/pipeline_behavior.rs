//! Pipeline-level contracts not covered by the acceptance criteria: loop
//! termination on homogeneous truths and refined-round geometry.

use voxscat_cli::{pipeline, ScenarioConfig};

fn tmp(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join("voxscat_pipeline").join(tag);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

const UNIFORM: &str = "\
box.a = 0 0 0
box.b = 0.15 0.15 0.15
grid.n = 2 2 2
k0 = 40
source = z+ 0.003
receivers = xy 0.005 1 0.005 3 3
refine.threshold = 0.1
output_dir = placeholder
";

#[test]
fn uniform_truth_terminates_after_one_round() {
    let mut cfg = ScenarioConfig::parse_str(UNIFORM, "uniform").unwrap();
    cfg.output_dir = tmp("uniform");
    let report = pipeline::run_refinement_loop_cfg(&cfg, 3).unwrap();
    assert_eq!(report.rounds.len(), 1);
    assert!(report.stopped_early, "homogeneous truth has nothing to refine");
    assert!(report.proposed_next.is_none());
    assert!(report.regional_errors.is_empty());
}

#[test]
fn refined_round_covers_the_inclusion_at_double_resolution() {
    let text = "\
box.a = 0 0 0
box.b = 0.15 0.15 0.15
grid.n = 4 4 4
k0 = 40
truth.inclusion = 0.0375 0.0375 0.0375  0.1125 0.1125 0.1125  52 2
source = z+ 0.003
receivers = xy 0.005 2 0.01 8 8
reg.cutoff = 1e-10
refine.threshold = 0.15
output_dir = placeholder
";
    let mut cfg = ScenarioConfig::parse_str(text, "aligned").unwrap();
    cfg.output_dir = tmp("aligned");
    let round1 = pipeline::run_scenario_cfg(&cfg).unwrap();
    let next = pipeline::adaptive_refine(&cfg, &round1.final_rec).unwrap();

    // the refined grid must contain the inclusion (up to grid-arithmetic
    // rounding) and halve the spacing
    let inc = &cfg.truth.inclusions[0].bounds;
    assert!(next.bounds.distance_to(&inc.lower()) < 1e-12);
    assert!(next.bounds.distance_to(&inc.upper()) < 1e-12);
    let h_old = cfg.recon_grid().spacing();
    let h_new = next.recon_grid().spacing();
    assert!((h_new.x - h_old.x / 2.0).abs() < 1e-15);
    // and the receiver budget stays overdetermined
    let n_new = next.recon_grid().voxel_count();
    let provided: usize = next.receivers.iter().map(|r| r.count()).sum();
    assert!(provided >= 2 * n_new);
}
