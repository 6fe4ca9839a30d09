use std::collections::BTreeMap;
use std::path::Path;

use meritflow::harness::{assess, run_experiment, ExperimentConfig, FlowKind, InitChoice, RunReport};
use meritflow::{Factor, Instance, InitKind};

fn run(mut config: ExperimentConfig, dir: &Path) -> Vec<RunReport> {
    config.output_dir = dir.to_path_buf();
    run_experiment(&config).unwrap().into_iter().flat_map(|o| o.reports).collect()
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| !e.file_name().to_string_lossy().contains("timing"))
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect()
}

#[test]
fn same_seed_gives_byte_identical_outputs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run(ExperimentConfig::fig1_over(3), a.path());
    run(ExperimentConfig::fig1_over(3), b.path());
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert!(fa.len() >= 8, "{:?}", fa.keys());
    assert_eq!(fa, fb);
}

#[test]
fn reports_are_recomputable_from_stored_files() {
    let dir = tempfile::tempdir().unwrap();
    for report in run(ExperimentConfig::fig1_over(5), dir.path()) {
        for f in [&report.trajectory_file, &report.factor_file, &report.instance_file, &report.timing_file] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let stored = RunReport::read_json(&dir.path().join(report.trajectory_file.replace(".csv", "_report.json"))).unwrap();
        assert_eq!(stored.assessment, report.assessment);

        let inst = Instance::read_json(&dir.path().join(&report.instance_file)).unwrap();
        let u = Factor::read_json(&dir.path().join(&report.factor_file)).unwrap();
        let again = assess(&inst, &u, &stored.config, stored.sdp.as_ref().map(|s| s.value), None).unwrap();
        assert_eq!(again, stored.assessment);

        let s = &stored.assessment.stationarity;
        let c = &stored.assessment.certificate;
        for v in [s.feas_residual, s.merit_grad_norm, s.manifold_grad_norm, c.min_eig_certificate, c.complementarity, c.primal_feas] {
            assert!(v.is_finite());
        }
    }
}

#[test]
fn replicates_write_seed_suffixed_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ExperimentConfig::fig1_over(10);
    config.replicates = 3;
    let reports = run(config, dir.path());
    assert_eq!(reports.len(), 6);
    for seed in 10..13 {
        assert!(dir.path().join(format!("fig1_over_s{seed}_merit_gaussian.csv")).exists());
        assert!(dir.path().join(format!("fig1_over_s{seed}_sdp.json")).exists());
    }
}

#[test]
fn fig1_under_reference_seed_reaches_the_relaxation_value() {
    let dir = tempfile::tempdir().unwrap();
    let reports = run(ExperimentConfig::fig1_under(3), dir.path());
    let r = &reports[0];
    assert_eq!(r.flow, FlowKind::Implicit);
    let sdp = r.sdp.as_ref().unwrap();
    assert!(sdp.converged);
    assert!(r.assessment.stationarity.feas_residual <= 1e-8);
    assert!((r.assessment.stationarity.target - sdp.value).abs() <= 1e-4);
}

#[test]
fn fig1_over_gaussian_matches_and_flags_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    for r in run(ExperimentConfig::fig1_over(7), dir.path()) {
        let gap = r.assessment.relative_target_gap.unwrap();
        assert_eq!(r.assessment.trapped, gap > 0.1);
        if r.init == InitChoice::Kind(InitKind::Gaussian) {
            assert!(gap.abs() <= 1e-2, "gap {gap}");
        }
        // weak duality: a feasible factor cannot beat the relaxation
        if r.assessment.stationarity.feas_residual <= 1e-6 {
            assert!(r.sdp.as_ref().unwrap().value <= r.assessment.stationarity.target + 1e-6);
        }
    }
}

#[test]
fn fig2_well_posed_variant_makes_both_flows_agree() {
    let dir = tempfile::tempdir().unwrap();
    let reports = run(ExperimentConfig::fig2_well_posed(0), dir.path());
    let target = |flow| reports.iter().find(|r| r.flow == flow).unwrap().assessment.stationarity.target;
    let (merit, implicit) = (target(FlowKind::Merit), target(FlowKind::Implicit));
    assert!((merit - implicit).abs() <= 1e-2 * implicit, "merit {merit}, implicit {implicit}");
    let csv = std::fs::read_to_string(dir.path().join("fig2_m200_s0_implicit_gaussian.csv")).unwrap();
    assert!(csv.lines().next().unwrap().ends_with(",recovery_error"));
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = ExperimentConfig::fig1_over(0);
    c.replicates = 0;
    assert!(c.validate().is_err());
    let mut c = ExperimentConfig::fig1_over(0);
    c.p = 3;
    assert!(c.validate().is_err());
}
