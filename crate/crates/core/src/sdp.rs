//! Operator-splitting (ADMM) solver for the convex relaxation
//!
//! ```text
//! min tr(X)  subject to  A(X) = b,  0 <= X <= xi^2 I
//! ```
//!
//! with consensus `X = Z`: the `X`-step is an equality-constrained quadratic
//! solved through the Frobenius Gram matrix `[<A_i, A_j>]` (factorized once),
//! the `Z`-step clips eigenvalues to `[0, xi^2]`, and `W` is the scaled dual.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::fmt::to_json_string;
use crate::operator::{row_major, Factor, Instance};

/// Relative tolerance on negative eigenvalues accepted by [`sqrt_psd`].
pub const DEFAULT_PSD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmParams {
    pub rho: f64,
    /// Rebalance `rho` when one residual exceeds the other by this factor; `None` keeps `rho` fixed.
    pub balance: Option<f64>,
    pub max_iter: usize,
    pub tol_abs: f64,
    pub tol_rel: f64,
}

impl Default for AdmmParams {
    fn default() -> Self {
        Self { rho: 1.0, balance: Some(10.0), max_iter: 50_000, tol_abs: 1e-8, tol_rel: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "SdpFile", try_from = "SdpFile")]
pub struct SdpSolution {
    pub x: DMatrix<f64>,
    /// Multipliers of `A(X) = b`, signed so that `I - A*(dual_eq) >= 0` at optimality.
    pub dual_eq: DVector<f64>,
    pub value: f64,
    /// `max(||X - Z||_F, ||A(Z) - b||_2)` at the last iterate.
    pub primal_residual: f64,
    /// `rho * ||Z_k - Z_{k-1}||_F` at the last iterate.
    pub dual_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The `A_i` were linearly dependent; the `X`-step used a pseudo-inverse.
    pub gram_singular: bool,
    pub rho: f64,
}

impl SdpSolution {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, to_json_string(self)?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Serialize, Deserialize)]
struct SdpFile {
    d: usize,
    x: Vec<f64>,
    dual_eq: Vec<f64>,
    value: f64,
    primal_residual: f64,
    dual_residual: f64,
    iterations: usize,
    converged: bool,
    gram_singular: bool,
    rho: f64,
}

impl From<SdpSolution> for SdpFile {
    fn from(s: SdpSolution) -> Self {
        SdpFile {
            d: s.x.nrows(),
            x: row_major(&s.x),
            dual_eq: s.dual_eq.as_slice().to_vec(),
            value: s.value,
            primal_residual: s.primal_residual,
            dual_residual: s.dual_residual,
            iterations: s.iterations,
            converged: s.converged,
            gram_singular: s.gram_singular,
            rho: s.rho,
        }
    }
}

impl TryFrom<SdpFile> for SdpSolution {
    type Error = String;
    fn try_from(f: SdpFile) -> std::result::Result<Self, String> {
        if f.x.len() != f.d * f.d {
            return Err(format!("X has {} entries, expected {}", f.x.len(), f.d * f.d));
        }
        Ok(SdpSolution {
            x: DMatrix::from_row_slice(f.d, f.d, &f.x),
            dual_eq: DVector::from_vec(f.dual_eq),
            value: f.value,
            primal_residual: f.primal_residual,
            dual_residual: f.dual_residual,
            iterations: f.iterations,
            converged: f.converged,
            gram_singular: f.gram_singular,
            rho: f.rho,
        })
    }
}

enum FrobeniusGram {
    Cholesky(Cholesky<f64, Dyn>),
    Pinv(DMatrix<f64>),
}

impl FrobeniusGram {
    fn new(inst: &Instance) -> Self {
        let m = inst.m();
        let mats = inst.op().matrices();
        let g = DMatrix::from_fn(m, m, |i, j| mats[i].dot(&mats[j]));
        let scale = g.diagonal().max();
        match Cholesky::new(g.clone()) {
            // reject factorizations that only succeeded by rounding
            Some(ch) if ch.l_dirty().diagonal().min().powi(2) > 1e-12 * scale => FrobeniusGram::Cholesky(ch),
            _ => FrobeniusGram::Pinv(SVD::new(g, true, true).pseudo_inverse(1e-12 * scale).expect("U and V were computed")),
        }
    }

    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        match self {
            FrobeniusGram::Cholesky(ch) => ch.solve(rhs),
            FrobeniusGram::Pinv(p) => p * rhs,
        }
    }
}

/// Projection onto `{ Z : 0 <= Z <= cap I }` by eigenvalue clipping.
pub fn project_spectral_box(y: &DMatrix<f64>, cap: f64) -> DMatrix<f64> {
    let sym = (y + y.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let clipped = eig.eigenvalues.map(|v| v.clamp(0.0, cap));
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    (&out + out.transpose()) * 0.5
}

pub fn solve_sdp(inst: &Instance, params: &AdmmParams) -> Result<SdpSolution> {
    if !(params.rho > 0.0) {
        return Err(Error::InvalidInstance(format!("rho must be positive, got {}", params.rho)));
    }
    let d = inst.d();
    let op = inst.op();
    let cap = inst.xi() * inst.xi();
    let gram = FrobeniusGram::new(inst);
    let gram_singular = matches!(gram, FrobeniusGram::Pinv(_));
    let ident = DMatrix::<f64>::identity(d, d);
    let a_ident = op.apply_unchecked(&ident);

    let mut rho = params.rho;
    let mut z = DMatrix::<f64>::zeros(d, d);
    let mut w = DMatrix::<f64>::zeros(d, d);
    let mut y = DVector::<f64>::zeros(inst.m());
    let mut r_p = f64::INFINITY;
    let mut r_d = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    for k in 1..=params.max_iter {
        iterations = k;
        // X-step: I + rho (X - Z + W) - A*(y) = 0, A(X) = b
        let zw = &z - &w;
        y = gram.solve(&((inst.b() - op.apply_unchecked(&zw)) * rho + &a_ident));
        let x = &zw - (&ident - op.adjoint_unchecked(&y)) / rho;
        let z_new = project_spectral_box(&(&x + &w), cap);
        w += &x - &z_new;
        r_d = rho * (&z_new - &z).norm();
        z = z_new;
        r_p = (&x - &z).norm().max((op.apply_unchecked(&z) - inst.b()).norm());
        let gap = (z.trace() - inst.b().dot(&y)).abs();

        let eps_p = params.tol_abs + params.tol_rel * x.norm().max(z.norm());
        let eps_d = params.tol_abs + params.tol_rel * rho * w.norm();
        let eps_gap = params.tol_abs + params.tol_rel * z.trace().abs();
        if r_p <= eps_p && r_d <= eps_d && gap <= eps_gap {
            converged = true;
            break;
        }
        if let Some(mu) = params.balance {
            if k % 10 == 0 {
                if r_p > mu * r_d {
                    rho *= 2.0;
                    w /= 2.0;
                } else if r_d > mu * r_p {
                    rho /= 2.0;
                    w *= 2.0;
                }
            }
        }
    }

    Ok(SdpSolution {
        value: z.trace(),
        x: z,
        dual_eq: y,
        primal_residual: r_p,
        dual_residual: r_d,
        iterations,
        converged,
        gram_singular,
        rho,
    })
}

/// `U = V_p diag(sqrt(s_p))` from the `p` largest eigenpairs of `X`.
pub fn sqrt_psd(x: &DMatrix<f64>, p: usize, rel_tol: f64) -> Result<Factor> {
    let d = x.nrows();
    check_dims("X", x.shape(), (d, d))?;
    let eig = SymmetricEigen::new((x + x.transpose()) * 0.5);
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    let scale = lmax.abs().max(lmin.abs());
    if lmin < -rel_tol * scale {
        return Err(Error::NotPsd { lambda_min: lmin, lambda_max: lmax });
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
    let mut u = DMatrix::zeros(d, p);
    for (col, idx) in order.iter().take(p).enumerate() {
        let s = eig.eigenvalues[*idx].max(0.0).sqrt();
        u.set_column(col, &(eig.eigenvectors.column(*idx) * s));
    }
    Ok(Factor::new(u))
}
