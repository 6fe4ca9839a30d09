//! Objective `f(U) = ||U||_F^2 / 2`, scaled constraint `g(U) = (A(UU^T) - b) / 2`,
//! the closed-form multipliers `lambda(U) = K(U)^{-1} A(UU^T)`, the augmented
//! Lagrangian and Fletcher's merit function `h_gamma(U) = L_gamma(U, lambda(U))`.
//!
//! Every `K(U)` solve uses `K(U) + ridge * I`; `ridge = 0` switches to the
//! Moore-Penrose pseudo-inverse.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::operator::{FactorProducts, Instance};

/// Stabilizer added to the Gram matrix before inversion.
pub const DEFAULT_RIDGE: f64 = 1e-9;

/// Relative singular-value cutoff of the pseudo-inverse path.
pub const PINV_RCOND: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeritParams {
    pub gamma: f64,
    pub ridge: f64,
}

impl MeritParams {
    pub fn new(gamma: f64) -> Self {
        Self { gamma, ridge: DEFAULT_RIDGE }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidInstance(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::InvalidInstance(format!("ridge must be non-negative, got {}", self.ridge)));
        }
        Ok(())
    }
}

/// Lagrange multiplier estimate `lambda(U, U)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub values: DVector<f64>,
    pub ridge: f64,
    /// Numerical rank of the matrix that was inverted (`m` when it is regular).
    pub rank: usize,
}

enum GramSolve {
    Cholesky(Cholesky<f64, Dyn>),
    Pinv(DMatrix<f64>),
}

impl GramSolve {
    fn new(k: &DMatrix<f64>, ridge: f64) -> (Self, usize) {
        let m = k.nrows();
        let shifted = k + DMatrix::identity(m, m) * ridge;
        if ridge > 0.0 {
            if let Some(ch) = Cholesky::new(shifted.clone()) {
                return (GramSolve::Cholesky(ch), m);
            }
        }
        let svd = SVD::new(shifted, true, true);
        let smax = svd.singular_values.max();
        let cut = PINV_RCOND * smax;
        let rank = svd.singular_values.iter().filter(|s| **s > cut && **s > 0.0).count();
        let pinv = if rank == 0 {
            DMatrix::zeros(m, m)
        } else {
            svd.pseudo_inverse(cut.max(f64::MIN_POSITIVE)).expect("U and V were computed")
        };
        (GramSolve::Pinv(pinv), rank)
    }

    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        match self {
            GramSolve::Cholesky(ch) => ch.solve(rhs),
            GramSolve::Pinv(p) => p * rhs,
        }
    }
}

/// Everything the merit function and its derivatives need at a fixed `U`.
pub struct MeritPoint<'a> {
    inst: &'a Instance,
    u: &'a DMatrix<f64>,
    prods: FactorProducts,
    gram: DMatrix<f64>,
    solver: GramSolve,
    lifted: DVector<f64>,
    residual: DVector<f64>,
    multipliers: Multipliers,
}

impl<'a> MeritPoint<'a> {
    pub fn new(inst: &'a Instance, u: &'a DMatrix<f64>, ridge: f64) -> Result<Self> {
        inst.check_factor(u)?;
        if !(ridge >= 0.0) {
            return Err(Error::InvalidInstance(format!("ridge must be non-negative, got {ridge}")));
        }
        let prods = inst.op().products(u);
        let gram = prods.gram();
        let (solver, rank) = GramSolve::new(&gram, ridge);
        // A(UU^T)_i = <A_i U, U>
        let lifted = prods.dg_apply(u);
        let residual = &lifted - inst.b();
        let values = solver.solve(&lifted);
        Ok(Self { inst, u, prods, gram, solver, lifted, residual, multipliers: Multipliers { values, ridge, rank } })
    }

    pub fn u(&self) -> &DMatrix<f64> {
        self.u
    }
    pub fn products(&self) -> &FactorProducts {
        &self.prods
    }
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }
    /// `A(UU^T)`.
    pub fn lifted(&self) -> &DVector<f64> {
        &self.lifted
    }
    /// `A(UU^T) - b = 2 g(U)`.
    pub fn residual(&self) -> &DVector<f64> {
        &self.residual
    }
    pub fn multipliers(&self) -> &Multipliers {
        &self.multipliers
    }
    pub fn lambda(&self) -> &DVector<f64> {
        &self.multipliers.values
    }

    pub fn f(&self) -> f64 {
        0.5 * self.u.norm_squared()
    }

    pub fn feas_gap(&self) -> f64 {
        self.residual.norm()
    }

    pub fn aug_lagrangian(&self, lambda: &DVector<f64>, gamma: f64) -> f64 {
        let g = &self.residual * 0.5;
        self.f() - g.dot(lambda) + 0.5 * gamma * g.norm_squared()
    }

    pub fn merit(&self, gamma: f64) -> f64 {
        self.aug_lagrangian(self.lambda(), gamma)
    }

    /// `U - sum_i (lambda'_i - gamma/2 (<A_i, UU^T> - b_i)) A_i U`.
    pub fn grad1(&self, lambda: &DVector<f64>, gamma: f64) -> DMatrix<f64> {
        let coeffs = lambda - &self.residual * (0.5 * gamma);
        self.u - self.prods.combine(&coeffs)
    }

    /// `(I - A*(lambda(U))) U`.
    pub fn manifold_gradient(&self) -> DMatrix<f64> {
        self.u - self.prods.combine(self.lambda())
    }

    /// `D lambda(U)[D] = (K + ridge I)^{-1} (-(Kt + Kt^T) lambda + 2 A(D U^T))`
    /// with `Kt = [<A_i D, A_j U>]`.
    pub fn dlambda_apply(&self, delta: &DMatrix<f64>) -> DVector<f64> {
        let dprods = self.inst.op().products(delta);
        let kt = self.prods.cross_gram(&dprods);
        let lam = self.lambda();
        let rhs = -(&kt * lam + kt.tr_mul(lam)) + self.prods.dg_apply(delta) * 2.0;
        self.solver.solve(&rhs)
    }

    /// Dense `m x (d p)` matrix of `D lambda(U)` in column-major `vec` coordinates.
    pub fn dlambda_matrix(&self) -> DMatrix<f64> {
        let (d, p) = self.u.shape();
        let mut jac = DMatrix::zeros(self.inst.m(), d * p);
        let mut e = DMatrix::zeros(d, p);
        for k in 0..d * p {
            e[k] = 1.0;
            jac.set_column(k, &self.dlambda_apply(&e));
            e[k] = 0.0;
        }
        jac
    }

    pub fn dlambda_adjoint(&self, delta: &DVector<f64>) -> DMatrix<f64> {
        let (d, p) = self.u.shape();
        let v = self.dlambda_matrix().tr_mul(delta);
        DMatrix::from_column_slice(d, p, v.as_slice())
    }

    /// `grad h_gamma(U) = grad_1 L_gamma(U, lambda(U)) - (D lambda(U))*[A(UU^T) - b] / 2`.
    pub fn merit_gradient(&self, gamma: f64) -> DMatrix<f64> {
        self.grad1(self.lambda(), gamma) - self.dlambda_adjoint(&self.residual) * 0.5
    }
}

pub fn f_value(u: &DMatrix<f64>) -> f64 {
    0.5 * u.norm_squared()
}

pub fn g_value(inst: &Instance, u: &DMatrix<f64>) -> Result<DVector<f64>> {
    inst.check_factor(u)?;
    Ok((inst.op().apply_unchecked(&(u * u.transpose())) - inst.b()) * 0.5)
}

/// `G(U) = ||g(U)||^2 / 2`.
pub fn big_g_value(inst: &Instance, u: &DMatrix<f64>) -> Result<f64> {
    Ok(0.5 * g_value(inst, u)?.norm_squared())
}

/// Unscaled feasibility gap `||A(UU^T) - b||_2`.
pub fn feas_gap(inst: &Instance, u: &DMatrix<f64>) -> Result<f64> {
    Ok(2.0 * g_value(inst, u)?.norm())
}

pub fn multipliers(inst: &Instance, u: &DMatrix<f64>, ridge: f64) -> Result<Multipliers> {
    Ok(MeritPoint::new(inst, u, ridge)?.multipliers)
}

pub fn dlambda_apply(inst: &Instance, u: &DMatrix<f64>, delta: &DMatrix<f64>, ridge: f64) -> Result<DVector<f64>> {
    crate::error::check_dims("Delta", delta.shape(), u.shape())?;
    Ok(MeritPoint::new(inst, u, ridge)?.dlambda_apply(delta))
}

pub fn dlambda_adjoint(inst: &Instance, u: &DMatrix<f64>, delta: &DVector<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    check_len("delta", delta.len(), inst.m())?;
    Ok(MeritPoint::new(inst, u, ridge)?.dlambda_adjoint(delta))
}

/// `L_gamma(U, lambda') = f(U) - <g(U), lambda'> + gamma/2 ||g(U)||^2`.
pub fn aug_lagrangian(inst: &Instance, u: &DMatrix<f64>, lambda: &DVector<f64>, gamma: f64) -> Result<f64> {
    check_len("lambda", lambda.len(), inst.m())?;
    let g = g_value(inst, u)?;
    Ok(f_value(u) - g.dot(lambda) + 0.5 * gamma * g.norm_squared())
}

pub fn merit_value(inst: &Instance, u: &DMatrix<f64>, params: &MeritParams) -> Result<f64> {
    Ok(MeritPoint::new(inst, u, params.ridge)?.merit(params.gamma))
}

pub fn merit_gradient(inst: &Instance, u: &DMatrix<f64>, params: &MeritParams) -> Result<DMatrix<f64>> {
    Ok(MeritPoint::new(inst, u, params.ridge)?.merit_gradient(params.gamma))
}

pub fn grad1_aug_lagrangian(inst: &Instance, u: &DMatrix<f64>, lambda: &DVector<f64>, gamma: f64) -> Result<DMatrix<f64>> {
    check_len("lambda", lambda.len(), inst.m())?;
    Ok(MeritPoint::new(inst, u, 0.0)?.grad1(lambda, gamma))
}
