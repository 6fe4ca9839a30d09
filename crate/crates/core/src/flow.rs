//! Discretized merit-function flow and the feasibility-gap baseline.
//!
//! The merit flow moves along `-grad_1 L_gamma(U_k, lambda_k)` with
//! `lambda_k = lambda(U_k, U_k)`:
//!
//! ```text
//! U_{k+1} = (1 - eta) U_k + eta * sum_i (lambda_{k,i} - gamma/2 (<A_i, U_k U_k^T> - b_i)) A_i U_k
//! ```
//!
//! The baseline is explicit Euler on `G(U) = ||g(U)||^2 / 2`, i.e.
//! `U_{k+1} = U_k - eta * A*(g(U_k)) U_k`.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::f17;
use crate::merit::{MeritPoint, DEFAULT_RIDGE};
use crate::operator::{draw_gaussian, seeded_rng, Factor, Instance};
use crate::stationarity::{numerical_rank, DEFAULT_RANK_TOL};

/// Frobenius norm every initializer is rescaled to.
pub const INIT_NORM: f64 = 3.0;

/// Iterates whose norm exceeds this multiple of `max(1, ||U_0||_F)` abort the run.
pub const DIVERGENCE_FACTOR: f64 = 1e3;

pub const CSV_HEADER: &str = "iter,f,target,feas_gap,merit,grad_norm,num_rank,sigma_min_K";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub gamma: f64,
    /// Constant step size; see [`run_merit_flow_with`] for a per-iteration schedule.
    pub eta: f64,
    pub max_iter: usize,
    pub tol_grad: f64,
    /// Reported only; never used to stop.
    pub tol_feas: f64,
    pub ridge: f64,
    pub record_every: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            gamma: 100.0,
            eta: 2e-5,
            max_iter: 200_000,
            tol_grad: 1e-7,
            tol_feas: 1e-6,
            ridge: DEFAULT_RIDGE,
            record_every: 1000,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidInstance(format!("flow parameter {what} is out of range")));
        if !(self.gamma > 0.0) {
            return bad("gamma");
        }
        if !(self.eta > 0.0) {
            return bad("eta");
        }
        if self.max_iter == 0 {
            return bad("max_iter");
        }
        if !(self.tol_grad > 0.0) {
            return bad("tol_grad");
        }
        if !(self.ridge >= 0.0) {
            return bad("ridge");
        }
        if self.record_every == 0 {
            return bad("record_every");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    GradientTolerance,
    MaxIterations,
    Diverged,
}

/// Diagnostics of one recorded iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub iter: usize,
    pub f: f64,
    /// `||U||_F^2 = 2 f`, the objective of the factorized problem.
    pub target: f64,
    pub feas_gap: f64,
    pub merit: f64,
    /// Norm of the step direction: `grad_1 L_gamma` for the merit flow, `grad G` for the baseline.
    pub grad_norm: f64,
    pub num_rank: usize,
    /// Smallest eigenvalue of `K(U)`.
    pub sigma_min_k: f64,
    pub extra: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowTrajectory {
    pub records: Vec<FlowRecord>,
    pub final_factor: Factor,
    pub stop_reason: StopReason,
    pub extra_column: Option<String>,
}

impl FlowTrajectory {
    pub fn last(&self) -> &FlowRecord {
        self.records.last().expect("a trajectory always records its final iterate")
    }

    pub fn iterations(&self) -> usize {
        self.last().iter
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "{CSV_HEADER}")?;
        if let Some(name) = &self.extra_column {
            write!(w, ",{name}")?;
        }
        writeln!(w)?;
        for r in &self.records {
            write!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.iter,
                f17(r.f),
                f17(r.target),
                f17(r.feas_gap),
                f17(r.merit),
                f17(r.grad_norm),
                r.num_rank,
                f17(r.sigma_min_k)
            )?;
            if self.extra_column.is_some() {
                write!(w, ",{}", r.extra.map(f17).unwrap_or_default())?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }
}

/// Extra scalar evaluated at every recorded iterate, written as an additional CSV column.
pub struct Observer<'a> {
    pub name: String,
    pub eval: Box<dyn Fn(&DMatrix<f64>) -> f64 + 'a>,
}

impl<'a> Observer<'a> {
    pub fn new(name: impl Into<String>, eval: impl Fn(&DMatrix<f64>) -> f64 + 'a) -> Self {
        Self { name: name.into(), eval: Box::new(eval) }
    }
}

/// One step of the merit flow. Returns `(U_{k+1}, lambda_k)`.
pub fn merit_flow_step(inst: &Instance, u: &DMatrix<f64>, params: &FlowParams) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let point = MeritPoint::new(inst, u, params.ridge)?;
    let next = explicit_update(&point, params.gamma, params.eta);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged { iter: 1 });
    }
    Ok((next, point.lambda().clone()))
}

fn explicit_update(point: &MeritPoint<'_>, gamma: f64, eta: f64) -> DMatrix<f64> {
    let u = point.u();
    let coeffs = point.lambda() - point.residual() * (0.5 * gamma);
    let next = u * (1.0 - eta) + point.products().combine(&coeffs) * eta;
    debug_assert!({
        let alt = u - point.grad1(point.lambda(), gamma) * eta;
        (&alt - &next).norm() <= 1e-12 * (1.0 + u.norm())
    });
    next
}

fn record(point: &MeritPoint<'_>, iter: usize, gamma: f64, grad_norm: f64, observer: Option<&Observer<'_>>) -> FlowRecord {
    let u = point.u();
    let f = point.f();
    FlowRecord {
        iter,
        f,
        target: 2.0 * f,
        feas_gap: point.feas_gap(),
        merit: point.merit(gamma),
        grad_norm,
        num_rank: numerical_rank(u, DEFAULT_RANK_TOL),
        sigma_min_k: SymmetricEigen::new(point.gram().clone()).eigenvalues.min(),
        extra: observer.map(|o| (o.eval)(u)),
    }
}

fn diverged(u: &DMatrix<f64>, limit: f64) -> bool {
    u.iter().any(|v| !v.is_finite()) || u.norm() > limit
}

pub fn run_merit_flow(inst: &Instance, u0: &DMatrix<f64>, params: &FlowParams) -> Result<FlowTrajectory> {
    run_merit_flow_with(inst, u0, params, |_| params.eta, None)
}

/// Merit flow with a per-iteration step size `eta(k)` and an optional extra column.
pub fn run_merit_flow_with(
    inst: &Instance,
    u0: &DMatrix<f64>,
    params: &FlowParams,
    mut eta: impl FnMut(usize) -> f64,
    observer: Option<Observer<'_>>,
) -> Result<FlowTrajectory> {
    params.validate()?;
    inst.check_factor(u0)?;
    let limit = DIVERGENCE_FACTOR * u0.norm().max(1.0);
    let mut records = Vec::new();
    let mut u = u0.clone();
    let mut k = 0;
    let stop = loop {
        let point = MeritPoint::new(inst, &u, params.ridge)?;
        let dir = point.grad1(point.lambda(), params.gamma);
        let grad_norm = dir.norm();
        let converged = grad_norm <= params.tol_grad;
        if converged || k == params.max_iter || k % params.record_every == 0 {
            records.push(record(&point, k, params.gamma, grad_norm, observer.as_ref()));
        }
        if converged {
            break StopReason::GradientTolerance;
        }
        if k == params.max_iter {
            break StopReason::MaxIterations;
        }
        let next = explicit_update(&point, params.gamma, eta(k));
        if diverged(&next, limit) {
            if records.last().map(|r| r.iter) != Some(k) {
                records.push(record(&point, k, params.gamma, grad_norm, observer.as_ref()));
            }
            break StopReason::Diverged;
        }
        drop(point);
        u = next;
        k += 1;
    };
    Ok(FlowTrajectory {
        records,
        final_factor: Factor::new(u),
        stop_reason: stop,
        extra_column: observer.map(|o| o.name),
    })
}

/// Gradient descent on the feasibility gap `G(U)`; `tol_grad` applies to `||grad G||_F`.
pub fn run_implicit_flow(
    inst: &Instance,
    u0: &DMatrix<f64>,
    params: &FlowParams,
    observer: Option<Observer<'_>>,
) -> Result<FlowTrajectory> {
    params.validate()?;
    inst.check_factor(u0)?;
    let limit = DIVERGENCE_FACTOR * u0.norm().max(1.0);
    let op = inst.op();
    let mut records = Vec::new();
    let mut u = u0.clone();
    let mut k = 0;
    let snapshot = |u: &DMatrix<f64>, k: usize, grad_norm: f64| -> Result<FlowRecord> {
        let point = MeritPoint::new(inst, u, params.ridge)?;
        Ok(record(&point, k, params.gamma, grad_norm, observer.as_ref()))
    };
    let stop = loop {
        let prods = op.products(&u);
        let g = (prods.dg_apply(&u) - inst.b()) * 0.5;
        let grad = prods.combine(&g);
        let grad_norm = grad.norm();
        let converged = grad_norm <= params.tol_grad;
        if converged || k == params.max_iter || k % params.record_every == 0 {
            records.push(snapshot(&u, k, grad_norm)?);
        }
        if converged {
            break StopReason::GradientTolerance;
        }
        if k == params.max_iter {
            break StopReason::MaxIterations;
        }
        let next = &u - grad * params.eta;
        if diverged(&next, limit) {
            if records.last().map(|r| r.iter) != Some(k) {
                records.push(snapshot(&u, k, grad_norm)?);
            }
            break StopReason::Diverged;
        }
        u = next;
        k += 1;
    };
    Ok(FlowTrajectory {
        records,
        final_factor: Factor::new(u),
        stop_reason: stop,
        extra_column: observer.map(|o| o.name),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InitKind {
    /// Checkerboard `U_ij = (i + j) mod 2`.
    Deterministic01,
    /// First column from the top eigenpair of the SDP solution, all other entries one.
    PartialOracle,
    Gaussian,
}

impl InitKind {
    pub const ALL: [InitKind; 3] = [InitKind::Deterministic01, InitKind::PartialOracle, InitKind::Gaussian];

    pub fn slug(self) -> &'static str {
        match self {
            InitKind::Deterministic01 => "deterministic01",
            InitKind::PartialOracle => "partial_oracle",
            InitKind::Gaussian => "gaussian",
        }
    }
}

/// Stream of the seeded generator reserved for initial factors, so that an
/// initializer sharing the instance seed does not replay the instance draws.
pub(crate) fn init_rng(seed: u64) -> ChaCha20Rng {
    let mut rng = seeded_rng(seed);
    rng.set_stream(1);
    rng
}

/// Initial factor of kind `kind`, rescaled to `||U_0||_F = 3`. `oracle` is the
/// SDP solution `X` required by [`InitKind::PartialOracle`].
pub fn initial_factor(inst: &Instance, kind: InitKind, seed: u64, oracle: Option<&DMatrix<f64>>) -> Result<Factor> {
    let (d, p) = (inst.d(), inst.p());
    let raw = match kind {
        InitKind::Deterministic01 => DMatrix::from_fn(d, p, |i, j| ((i + j) % 2) as f64),
        InitKind::PartialOracle => {
            let x = oracle.ok_or(Error::MissingOracle)?;
            let root = crate::sdp::sqrt_psd(x, p, crate::sdp::DEFAULT_PSD_TOL)?;
            let mut u = DMatrix::from_element(d, p, 1.0);
            u.set_column(0, &root.column(0));
            u
        }
        InitKind::Gaussian => draw_gaussian(&mut init_rng(seed), d, p),
    };
    rescale(raw)
}

pub(crate) fn rescale(u: DMatrix<f64>) -> Result<Factor> {
    let n = u.norm();
    if !(n > 0.0) {
        return Err(Error::InvalidInstance("initial factor is zero and cannot be rescaled".into()));
    }
    Ok(Factor::new(u * (INIT_NORM / n)))
}
