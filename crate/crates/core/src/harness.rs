//! Experiment presets, seeded orchestration and file output.
//!
//! An experiment solves the convex relaxation once per instance, runs every
//! configured flow from its initial factor, and writes per run a trajectory
//! CSV, the terminal factor and a [`RunReport`]. File names carry the preset
//! label and seed so replicates can share an output directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{self, FlowParams, FlowRecord, InitKind, Observer, StopReason};
use crate::fmt::to_json_string;
use crate::merit::MeritParams;
use crate::operator::{generate_instance, generate_planted, pataki_width, Factor, Instance, DEFAULT_XI};
use crate::sdp::{solve_sdp, AdmmParams, SdpSolution};
use crate::stationarity::{
    classify, factor_certificate, CertificateReport, ClassifyTolerances, StationarityReport, Verdict, DEFAULT_CERTIFICATE_TOL,
};

/// A run is flagged as trapped when its target exceeds the SDP value by this fraction.
pub const TRAP_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    Sec11,
    Fig1Under,
    Fig1Over,
    Fig2,
    Custom,
}

impl Preset {
    pub fn slug(self) -> &'static str {
        match self {
            Preset::Sec11 => "sec11",
            Preset::Fig1Under => "fig1_under",
            Preset::Fig1Over => "fig1_over",
            Preset::Fig2 => "fig2",
            Preset::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceSource {
    /// Gaussian operator and right-hand side from the seed.
    Generated,
    /// Gaussian operator with `b = A(vv^T / ||v||^2)` for a Gaussian `v`.
    PlantedRankOne,
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowKind {
    Merit,
    Implicit,
}

impl FlowKind {
    pub fn slug(self) -> &'static str {
        match self {
            FlowKind::Merit => "merit",
            FlowKind::Implicit => "implicit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitChoice {
    Kind(InitKind),
    /// Full-rank factor weighted towards the weakest eigenvector of the SDP solution.
    Adversarial,
}

impl InitChoice {
    pub fn slug(self) -> &'static str {
        match self {
            InitChoice::Kind(k) => k.slug(),
            InitChoice::Adversarial => "adversarial",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSpec {
    pub flow: FlowKind,
    pub init: InitChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub preset: Preset,
    /// Prefix of every output file.
    pub label: String,
    pub d: usize,
    pub m: usize,
    pub p: usize,
    pub xi: f64,
    pub instance: InstanceSource,
    pub seed: u64,
    pub replicates: usize,
    pub merit: FlowParams,
    pub implicit: FlowParams,
    pub runs: Vec<RunSpec>,
    pub admm: AdmmParams,
    pub tolerances: ClassifyTolerances,
    pub certificate_tol: f64,
    /// Record `||U U^T - X_planted||_F` next to each trajectory (planted instances only).
    pub recovery_column: bool,
    #[serde(skip)]
    pub output_dir: PathBuf,
}

fn merit_runs(inits: &[InitChoice]) -> Vec<RunSpec> {
    inits.iter().map(|&init| RunSpec { flow: FlowKind::Merit, init }).collect()
}

impl ExperimentConfig {
    fn base(preset: Preset, d: usize, m: usize, p: usize, seed: u64) -> Self {
        Self {
            preset,
            label: preset.slug().to_string(),
            d,
            m,
            p,
            xi: DEFAULT_XI,
            instance: InstanceSource::Generated,
            seed,
            replicates: 1,
            merit: FlowParams::default(),
            implicit: FlowParams::default(),
            runs: Vec::new(),
            admm: AdmmParams::default(),
            tolerances: ClassifyTolerances::default(),
            certificate_tol: DEFAULT_CERTIFICATE_TOL,
            recovery_column: false,
            output_dir: PathBuf::from("."),
        }
    }

    /// `d = 15`, `m = 30`, `p = ceil(sqrt(2m)) = 8`, `gamma = 100`, `eta = 2e-5`,
    /// `2e5` iterations, merit flow from all three initializers.
    pub fn sec11(seed: u64) -> Self {
        let mut c = Self::base(Preset::Sec11, 15, 30, pataki_width(30), seed);
        c.merit = FlowParams { gamma: 100.0, eta: 2e-5, max_iter: 200_000, ..FlowParams::default() };
        c.runs = merit_runs(&InitKind::ALL.map(InitChoice::Kind));
        c
    }

    /// `d = m = 2`, `p = 1`, gradient descent on the feasibility gap.
    pub fn fig1_under(seed: u64) -> Self {
        let mut c = Self::base(Preset::Fig1Under, 2, 2, 1, seed);
        c.implicit = fig1_params();
        c.merit = fig1_params();
        c.runs = vec![RunSpec { flow: FlowKind::Implicit, init: InitChoice::Kind(InitKind::Gaussian) }];
        c
    }

    /// `d = m = p = 2`, merit flow from an adversarial and a Gaussian factor.
    pub fn fig1_over(seed: u64) -> Self {
        let mut c = Self::base(Preset::Fig1Over, 2, 2, 2, seed);
        c.implicit = fig1_params();
        c.merit = fig1_params();
        c.runs = merit_runs(&[InitChoice::Adversarial, InitChoice::Kind(InitKind::Gaussian)]);
        c
    }

    /// Planted rank-one `X` with `d = 20`, `m = 40`, `p = 10`; implicit and merit
    /// flows from the same Gaussian factor, with a recovery-error column.
    pub fn fig2(seed: u64) -> Self {
        let mut c = Self::base(Preset::Fig2, 20, 40, 10, seed);
        c.instance = InstanceSource::PlantedRankOne;
        c.merit = FlowParams { gamma: 10.0, eta: 1e-3, max_iter: 100_000, ..FlowParams::default() };
        c.implicit = FlowParams { eta: 1e-3, max_iter: 100_000, ..FlowParams::default() };
        c.runs = vec![
            RunSpec { flow: FlowKind::Implicit, init: InitChoice::Kind(InitKind::Gaussian) },
            RunSpec { flow: FlowKind::Merit, init: InitChoice::Kind(InitKind::Gaussian) },
        ];
        c.recovery_column = true;
        c
    }

    /// [`Self::fig2`] with `m = 200 = d p`, where the tangent space is trivial and
    /// both flows should land on the same point. `gamma * eta` of the merit flow
    /// matches the implicit step.
    pub fn fig2_well_posed(seed: u64) -> Self {
        let mut c = Self::fig2(seed);
        c.label = "fig2_m200".into();
        c.m = 200;
        c.merit = FlowParams { gamma: 10.0, eta: 2e-4, max_iter: 5_000, record_every: 500, ..FlowParams::default() };
        c.implicit = FlowParams { eta: 2e-3, max_iter: 5_000, record_every: 500, ..FlowParams::default() };
        c
    }

    /// Fully explicit configuration; `runs` defaults to the merit flow from each initializer.
    pub fn custom(d: usize, m: usize, p: usize, merit: FlowParams, seed: u64) -> Self {
        let mut c = Self::base(Preset::Custom, d, m, p, seed);
        c.merit = merit;
        c.runs = merit_runs(&InitKind::ALL.map(InitChoice::Kind));
        c
    }

    pub fn preset(preset: Preset, seed: u64) -> Option<Self> {
        match preset {
            Preset::Sec11 => Some(Self::sec11(seed)),
            Preset::Fig1Under => Some(Self::fig1_under(seed)),
            Preset::Fig1Over => Some(Self::fig1_over(seed)),
            Preset::Fig2 => Some(Self::fig2(seed)),
            Preset::Custom => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 || self.runs.is_empty() {
            return Err(Error::InvalidInstance("an experiment needs at least one replicate and one run".into()));
        }
        if self.d == 0 || self.m == 0 || self.p == 0 || self.p > self.d {
            return Err(Error::InvalidDimension(format!("d = {}, m = {}, p = {}", self.d, self.m, self.p)));
        }
        self.merit.validate()?;
        self.implicit.validate()
    }

    fn params(&self, flow: FlowKind) -> &FlowParams {
        match flow {
            FlowKind::Merit => &self.merit,
            FlowKind::Implicit => &self.implicit,
        }
    }

    fn stem(&self, seed: u64) -> String {
        format!("{}_s{seed}", self.label)
    }
}

fn fig1_params() -> FlowParams {
    FlowParams { gamma: 10.0, eta: 1e-3, max_iter: 200_000, tol_grad: 1e-12, record_every: 100, ..FlowParams::default() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdpSummary {
    pub file: String,
    pub value: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub converged: bool,
}

/// Everything known about one flow run. Paths are relative to the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub flow: FlowKind,
    pub init: InitChoice,
    pub instance_file: String,
    pub trajectory_file: String,
    pub factor_file: String,
    /// Wall-clock seconds live in this file so the report itself stays reproducible.
    pub timing_file: String,
    pub stop_reason: StopReason,
    pub iterations: usize,
    pub terminal: FlowRecord,
    pub sdp: Option<SdpSummary>,
    pub assessment: Assessment,
}

/// The part of a report that depends only on the instance and the terminal factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub stationarity: StationarityReport,
    pub certificate: CertificateReport,
    /// `(target - sdp_value) / |sdp_value|`.
    pub relative_target_gap: Option<f64>,
    pub recovery_error: Option<f64>,
    /// Merit-stationary but `feas_gap > tol_feas`.
    pub infeasible_stationary: bool,
    /// Target more than [`TRAP_MARGIN`] above the SDP value.
    pub trapped: bool,
}

impl RunReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, to_json_string(self)?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Diverged or out of iterations.
    pub fn failed(&self) -> bool {
        self.stop_reason != StopReason::GradientTolerance
    }
}

#[derive(Debug, Clone, Serialize)]
struct Timing {
    sdp_seconds: f64,
    runs: Vec<(String, f64)>,
}

/// All reports of one replicate.
#[derive(Debug, Clone)]
pub struct ReplicateOutcome {
    pub seed: u64,
    pub instance: Instance,
    pub planted: Option<DMatrix<f64>>,
    pub sdp: SdpSolution,
    pub reports: Vec<RunReport>,
}

/// Builds the instance of a replicate, and the planted matrix when there is one.
pub fn build_instance(config: &ExperimentConfig, seed: u64) -> Result<(Instance, Option<DMatrix<f64>>)> {
    let (d, m, p, xi) = (config.d, config.m, config.p, config.xi);
    match &config.instance {
        InstanceSource::Generated => Ok((generate_instance(d, m, p, xi, seed)?, None)),
        InstanceSource::PlantedRankOne => {
            let (inst, x) = generate_planted(d, m, p, xi, seed, |rng| {
                let v = DMatrix::<f64>::from_fn(d, 1, |_, _| StandardNormal.sample(rng));
                &v * v.transpose() / v.norm_squared()
            })?;
            Ok((inst, Some(x)))
        }
        InstanceSource::File(path) => Ok((Instance::read_json(path)?.with_p(p)?, None)),
    }
}

/// Full-rank factor on the far side of the feasible set from the relaxation's
/// optimum: most of its mass on the weakest eigenvector of `x`.
pub fn adversarial_factor(x: &DMatrix<f64>, p: usize) -> Result<Factor> {
    let eig = SymmetricEigen::new((x + x.transpose()) * 0.5);
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    order.sort_by(|a, b| eig.eigenvalues[*a].total_cmp(&eig.eigenvalues[*b]));
    let mut u = DMatrix::zeros(x.nrows(), p);
    for (col, idx) in order.iter().cycle().take(p).enumerate() {
        let weight = if col == 0 { 1.0 } else { 0.3 / col as f64 };
        u.set_column(col, &(eig.eigenvectors.column(*idx) * weight));
    }
    flow::rescale(u)
}

fn initial(inst: &Instance, init: InitChoice, seed: u64, sdp: &SdpSolution) -> Result<Factor> {
    match init {
        InitChoice::Kind(kind) => flow::initial_factor(inst, kind, seed, Some(&sdp.x)),
        InitChoice::Adversarial => adversarial_factor(&sdp.x, inst.p()),
    }
}

/// Runs one replicate and writes its files into `config.output_dir`.
pub fn run_replicate(config: &ExperimentConfig, seed: u64) -> Result<ReplicateOutcome> {
    let dir = &config.output_dir;
    std::fs::create_dir_all(dir)?;
    let stem = config.stem(seed);
    let (inst, planted) = build_instance(config, seed)?;
    let instance_file = format!("{stem}_instance.json");
    inst.write_json(&dir.join(&instance_file))?;

    let clock = Instant::now();
    let sdp = solve_sdp(&inst, &config.admm)?;
    let sdp_seconds = clock.elapsed().as_secs_f64();
    let sdp_file = format!("{stem}_sdp.json");
    sdp.write_json(&dir.join(&sdp_file))?;
    let summary = SdpSummary {
        file: sdp_file,
        value: sdp.value,
        primal_residual: sdp.primal_residual,
        dual_residual: sdp.dual_residual,
        converged: sdp.converged,
    };

    let timing_file = format!("{stem}_timing.json");
    let mut timing = Timing { sdp_seconds, runs: Vec::new() };
    let mut reports = Vec::new();
    for spec in &config.runs {
        let u0 = initial(&inst, spec.init, seed, &sdp)?;
        let params = config.params(spec.flow);
        let observer = match (&planted, config.recovery_column) {
            (Some(x), true) => Some(Observer::new("recovery_error", move |u: &DMatrix<f64>| recovery_error(u, x))),
            _ => None,
        };
        let clock = Instant::now();
        let traj = match spec.flow {
            FlowKind::Merit => flow::run_merit_flow_with(&inst, &u0, params, |_| params.eta, observer)?,
            FlowKind::Implicit => flow::run_implicit_flow(&inst, &u0, params, observer)?,
        };
        let run_stem = format!("{stem}_{}_{}", spec.flow.slug(), spec.init.slug());
        timing.runs.push((run_stem.clone(), clock.elapsed().as_secs_f64()));

        let trajectory_file = format!("{run_stem}.csv");
        traj.save_csv(&dir.join(&trajectory_file))?;
        let factor_file = format!("{run_stem}_factor.json");
        traj.final_factor.write_json(&dir.join(&factor_file))?;

        let report = RunReport {
            config: config.clone(),
            seed,
            flow: spec.flow,
            init: spec.init,
            instance_file: instance_file.clone(),
            trajectory_file,
            factor_file,
            timing_file: timing_file.clone(),
            stop_reason: traj.stop_reason,
            iterations: traj.iterations(),
            terminal: traj.last().clone(),
            assessment: assess(&inst, &traj.final_factor, config, Some(summary.value), planted.as_ref())?,
            sdp: Some(summary.clone()),
        };
        report.write_json(&dir.join(format!("{run_stem}_report.json")))?;
        reports.push(report);
    }
    std::fs::write(dir.join(&timing_file), to_json_string(&timing)?)?;
    Ok(ReplicateOutcome { seed, instance: inst, planted, sdp, reports })
}

pub fn recovery_error(u: &DMatrix<f64>, planted: &DMatrix<f64>) -> f64 {
    (u * u.transpose() - planted).norm()
}

/// Classification, certificate and comparison against the SDP value and the
/// planted matrix, recomputed from an instance and a terminal factor.
pub fn assess(
    inst: &Instance,
    u: &DMatrix<f64>,
    config: &ExperimentConfig,
    sdp_value: Option<f64>,
    planted: Option<&DMatrix<f64>>,
) -> Result<Assessment> {
    let merit = MeritParams { gamma: config.merit.gamma, ridge: config.merit.ridge };
    let stationarity = classify(inst, u, &merit, &config.tolerances)?;
    let certificate = factor_certificate(inst, u, config.merit.ridge, config.certificate_tol)?;
    let relative_target_gap = sdp_value.map(|v| (stationarity.target - v) / v.abs().max(f64::MIN_POSITIVE));
    let merit_stationary = stationarity.merit_grad_norm <= config.tolerances.tol_grad;
    Ok(Assessment {
        infeasible_stationary: merit_stationary && stationarity.feas_residual > stationarity.tol_feas,
        trapped: relative_target_gap.is_some_and(|g| g > TRAP_MARGIN),
        recovery_error: planted.map(|x| recovery_error(u, x)),
        relative_target_gap,
        stationarity,
        certificate,
    })
}

/// Runs every replicate (`seed, seed + 1, ...`) in parallel.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ReplicateOutcome>> {
    config.validate()?;
    let seeds: Vec<u64> = (0..config.replicates as u64).map(|r| config.seed + r).collect();
    seeds.par_iter().map(|&s| run_replicate(config, s)).collect()
}

/// Verdicts that certify a terminal iterate as a candidate global minimizer.
pub fn is_second_order(v: Verdict) -> bool {
    matches!(v, Verdict::Sosp | Verdict::RankDeficientSospGlobalMin)
}
