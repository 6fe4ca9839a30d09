//! Stationarity and optimality diagnostics on the feasible manifold
//! `M_b = { U : A(UU^T) = b, ||U|| < xi }`, plus KKT certificates for the
//! convex relaxation.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, check_len, Error, Result};
use crate::merit::{MeritParams, MeritPoint, DEFAULT_RIDGE};
use crate::operator::{min_eigenvalue, Factor, Instance};

/// Relative singular-value threshold for the numerical rank of a factor.
pub const DEFAULT_RANK_TOL: f64 = 1e-7;

/// `sigma_min(Dg(U))` below which the tangent space is considered undefined.
pub const TANGENT_SIGMA_TOL: f64 = 1e-10;

/// Number of singular values above `rel_tol * sigma_1`; zero for `U = 0`.
pub fn numerical_rank(u: &DMatrix<f64>, rel_tol: f64) -> usize {
    if u.is_empty() {
        return 0;
    }
    let sv = SVD::new(u.clone(), false, false).singular_values;
    let top = sv.max();
    if !(top > 0.0) {
        return 0;
    }
    sv.iter().filter(|s| **s > rel_tol * top).count()
}

fn spectral_norm(u: &DMatrix<f64>) -> f64 {
    SVD::new(u.clone(), false, false).singular_values.max()
}

/// `(I - A*(lambda(U))) U`, the projection of `grad f(U) = U` onto the tangent space.
pub fn manifold_gradient(inst: &Instance, u: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    Ok(MeritPoint::new(inst, u, ridge)?.manifold_gradient())
}

/// Orthonormal basis (`dp x (dp - m)`, column-major `vec` coordinates) of `null(Dg(U))`.
pub fn tangent_basis(inst: &Instance, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    inst.check_factor(u)?;
    let sigma_min = inst.op().sigma_min_dg(u)?;
    if sigma_min <= TANGENT_SIGMA_TOL {
        return Err(Error::RankDeficientConstraints { sigma_min });
    }
    let jac = inst.op().products(u).jacobian();
    let (m, dp) = jac.shape();
    // Pad J^T to a square matrix so the SVD returns a complete left basis.
    let mut padded = DMatrix::zeros(dp, dp);
    padded.view_mut((0, 0), (dp, m)).copy_from(&jac.transpose());
    let svd = SVD::new(padded, true, false);
    let left = svd.u.expect("requested U");
    let mut order: Vec<usize> = (0..dp).collect();
    order.sort_by(|a, b| svd.singular_values[*a].total_cmp(&svd.singular_values[*b]));
    let mut basis = DMatrix::zeros(dp, dp - m);
    for (col, idx) in order.iter().take(dp - m).enumerate() {
        basis.set_column(col, &left.column(*idx));
    }
    Ok(basis)
}

/// Smallest eigenvalue of the manifold Hessian of `f`, i.e. the minimum of
/// `||D||_F^2 - <A*(lambda(U)), D D^T>` over unit tangent directions `D`.
/// `+inf` when the tangent space is trivial (`m = dp`).
pub fn restricted_hessian_min_eig(inst: &Instance, u: &DMatrix<f64>, ridge: f64) -> Result<f64> {
    let basis = tangent_basis(inst, u)?;
    if basis.ncols() == 0 {
        return Ok(f64::INFINITY);
    }
    let point = MeritPoint::new(inst, u, ridge)?;
    let (d, p) = u.shape();
    let shifted = DMatrix::identity(d, d) - inst.op().adjoint_unchecked(point.lambda());
    let mut image = DMatrix::zeros(d * p, basis.ncols());
    for (k, col) in basis.column_iter().enumerate() {
        let delta = DMatrix::from_column_slice(d, p, col.as_slice());
        let md = &shifted * delta;
        image.set_column(k, &DVector::from_column_slice(md.as_slice()));
    }
    let h = basis.tr_mul(&image);
    let h = (&h + h.transpose()) * 0.5;
    Ok(min_eigenvalue(&h))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    NotStationary,
    /// Stationary for `h_gamma` but `||A(UU^T) - b|| > tol_feas`.
    InfeasibleMeritStationary,
    #[serde(rename = "FOSP")]
    Fosp,
    #[serde(rename = "SOSP")]
    Sosp,
    #[serde(rename = "RankDeficientSOSP_GlobalMin")]
    RankDeficientSospGlobalMin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyTolerances {
    pub tol_grad: f64,
    /// Feasibility tolerance is `tol_feas_rel * (1 + ||b||)`.
    pub tol_feas_rel: f64,
    pub tol_eig: f64,
    pub rank_tol: f64,
}

impl Default for ClassifyTolerances {
    fn default() -> Self {
        Self { tol_grad: 1e-7, tol_feas_rel: 1e-6, tol_eig: 1e-8, rank_tol: DEFAULT_RANK_TOL }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub feas_residual: f64,
    pub tol_feas: f64,
    pub merit_grad_norm: f64,
    pub manifold_grad_norm: f64,
    pub min_restricted_hessian_eig: Option<f64>,
    pub num_rank: usize,
    pub spectral_norm: f64,
    pub target: f64,
    pub verdict: Verdict,
}

/// Classification ladder: merit stationarity, then feasibility and a vanishing
/// manifold gradient (FOSP), a PSD restricted Hessian (SOSP), and finally rank
/// deficiency inside the spectral cap (global minimizer).
pub fn classify(inst: &Instance, u: &DMatrix<f64>, params: &MeritParams, tols: &ClassifyTolerances) -> Result<StationarityReport> {
    let point = MeritPoint::new(inst, u, params.ridge)?;
    let feas_residual = point.feas_gap();
    let tol_feas = tols.tol_feas_rel * (1.0 + inst.b().norm());
    let merit_grad_norm = point.merit_gradient(params.gamma).norm();
    let manifold_grad_norm = point.manifold_gradient().norm();
    let min_eig = match restricted_hessian_min_eig(inst, u, params.ridge) {
        Ok(v) => Some(v),
        Err(Error::RankDeficientConstraints { .. } | Error::RankImpossible { .. }) => None,
        Err(e) => return Err(e),
    };
    let num_rank = numerical_rank(u, tols.rank_tol);
    let spectral = spectral_norm(u);

    let verdict = if merit_grad_norm > tols.tol_grad {
        Verdict::NotStationary
    } else if feas_residual > tol_feas {
        Verdict::InfeasibleMeritStationary
    } else if manifold_grad_norm > tols.tol_grad {
        Verdict::NotStationary
    } else if !min_eig.is_some_and(|e| e >= -tols.tol_eig) {
        Verdict::Fosp
    } else if num_rank < inst.p() && spectral < inst.xi() {
        Verdict::RankDeficientSospGlobalMin
    } else {
        Verdict::Sosp
    };
    Ok(StationarityReport {
        feas_residual,
        tol_feas,
        merit_grad_norm,
        manifold_grad_norm,
        min_restricted_hessian_eig: min_eig,
        num_rank,
        spectral_norm: spectral,
        target: u.norm_squared(),
        verdict,
    })
}

pub const DEFAULT_CERTIFICATE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    /// `lambda_min(I - A*(lambda))`.
    pub min_eig_certificate: f64,
    /// `||(I - A*(lambda)) X||_F`.
    pub complementarity: f64,
    /// `||A(X) - b||_2`.
    pub primal_feas: f64,
    pub psd_violation: f64,
    /// `max(0, lambda_max(X) - xi^2)`.
    pub cap_violation: f64,
    pub tol: f64,
    pub certified: bool,
}

/// Checks the KKT conditions of the convex relaxation at `(X, lambda)`.
///
/// The strict cap `X < xi^2 I` is checked as `lambda_max(X) <= xi^2 - tol`.
pub fn dual_certificate(inst: &Instance, x: &DMatrix<f64>, lambda: &DVector<f64>, tol: f64) -> Result<CertificateReport> {
    let d = inst.d();
    check_dims("X", x.shape(), (d, d))?;
    check_len("lambda", lambda.len(), inst.m())?;
    let xs = (x + x.transpose()) * 0.5;
    let s = DMatrix::identity(d, d) - inst.op().adjoint_unchecked(lambda);
    let min_eig_certificate = min_eigenvalue(&s);
    let complementarity = (&s * &xs).norm();
    let primal_feas = (inst.op().apply_unchecked(&xs) - inst.b()).norm();
    let eig = SymmetricEigen::new(xs).eigenvalues;
    let psd_violation = (-eig.min()).max(0.0);
    let xi2 = inst.xi() * inst.xi();
    let lmax = eig.max();
    let cap_violation = (lmax - xi2).max(0.0);
    let certified = min_eig_certificate >= -tol
        && complementarity <= tol
        && primal_feas <= tol
        && psd_violation <= tol
        && lmax <= xi2 - tol;
    Ok(CertificateReport { min_eig_certificate, complementarity, primal_feas, psd_violation, cap_violation, tol, certified })
}

/// Certificate for a factor: `X = UU^T` with its own multipliers `lambda(U)`.
pub fn factor_certificate(inst: &Instance, u: &DMatrix<f64>, ridge: f64, tol: f64) -> Result<CertificateReport> {
    let lam = crate::merit::multipliers(inst, u, ridge)?;
    dual_certificate(inst, &(u * u.transpose()), &lam.values, tol)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub factor: Factor,
    /// `||g(V)||_2`.
    pub residual: f64,
    /// `||U - V||_F`, an upper bound on `dist(U, M_b)`.
    pub distance: f64,
    pub iterations: usize,
}

const MAX_HALVINGS: usize = 20;

/// Damped Gauss-Newton on `g`: `V <- V - t * A*((K(V) + eps I)^{-1} g(V)) V`,
/// halving `t` until `||g||` decreases.
pub fn project_to_manifold(inst: &Instance, u: &DMatrix<f64>, max_iter: usize, tol: f64) -> Result<Projection> {
    inst.check_factor(u)?;
    let op = inst.op();
    let g_of = |v: &DMatrix<f64>| (op.apply_unchecked(&(v * v.transpose())) - inst.b()) * 0.5;
    let mut v = u.clone();
    let mut g = g_of(&v);
    let mut res = g.norm();
    let mut it = 0;
    while res > tol && it < max_iter {
        let point = MeritPoint::new(inst, &v, DEFAULT_RIDGE)?;
        let w = solve_shifted(point.gram(), &g);
        let step = point.products().combine(&w);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand = &v - &step * t;
            let gc = g_of(&cand);
            if gc.norm() < res {
                accepted = Some((cand, gc));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, gc)) = accepted else {
            return Err(Error::ProjectionFailed { best: Box::new(Factor::new(v)), residual: res });
        };
        v = cand;
        g = gc;
        res = g.norm();
        it += 1;
    }
    Ok(Projection { distance: (u - &v).norm(), factor: Factor::new(v), residual: res, iterations: it })
}

fn solve_shifted(k: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let m = k.nrows();
    let shifted = k + DMatrix::identity(m, m) * DEFAULT_RIDGE;
    match shifted.clone().cholesky() {
        Some(ch) => ch.solve(rhs),
        None => SVD::new(shifted, true, true).solve(rhs, 1e-14).expect("U and V were computed"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{draw_gaussian, generate_instance, seeded_rng, MeasurementOperator, DEFAULT_XI};

    fn sphere(d: usize, p: usize, c: f64) -> Instance {
        let op = MeasurementOperator::new(vec![DMatrix::identity(d, d)]).unwrap();
        Instance::new(op, DVector::from_vec(vec![c]), p, DEFAULT_XI, None).unwrap()
    }

    fn gauss(r: usize, c: usize, seed: u64) -> DMatrix<f64> {
        draw_gaussian(&mut seeded_rng(seed), r, c)
    }

    fn on_sphere(d: usize, p: usize, c: f64, seed: u64) -> DMatrix<f64> {
        let u = gauss(d, p, seed);
        &u * (c.sqrt() / u.norm())
    }

    #[test]
    fn rank_cases() {
        assert_eq!(numerical_rank(&DMatrix::zeros(4, 3), 1e-7), 0);
        let mut u = DMatrix::zeros(4, 3);
        u.set_column(1, &DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]));
        assert_eq!(numerical_rank(&u, 1e-7), 1);
        for r in 1..3 {
            let prod = gauss(6, r, 10 + r as u64) * gauss(4, r, 20 + r as u64).transpose();
            assert_eq!(numerical_rank(&prod, 1e-7), r);
        }
    }

    #[test]
    fn manifold_gradient_cases() {
        let inst = sphere(3, 2, 1.0);
        assert!(manifold_gradient(&inst, &gauss(3, 2, 1), 0.0).unwrap().norm() < 1e-14);
        let inst = generate_instance(3, 2, 2, DEFAULT_XI, 1).unwrap();
        assert_eq!(manifold_gradient(&inst, &DMatrix::zeros(3, 2), 1e-9).unwrap(), DMatrix::zeros(3, 2));
    }

    #[test]
    fn manifold_gradient_is_tangent_projection_of_u() {
        let inst = generate_instance(5, 4, 3, DEFAULT_XI, 2).unwrap();
        let proj = project_to_manifold(&inst, &(gauss(5, 3, 3) * 0.8), 100, 1e-13).unwrap();
        let u = proj.factor.into_inner();
        // P_T(U) = U - Dg* (Dg Dg*)^{-1} Dg[U], built from the dense Jacobian
        let jac = inst.op().products(&u).jacobian();
        let vu = DVector::from_column_slice(u.as_slice());
        let coef = (&jac * jac.transpose()).lu().solve(&(&jac * &vu)).unwrap();
        let proj_u = &vu - jac.tr_mul(&coef);
        let mg = manifold_gradient(&inst, &u, 0.0).unwrap();
        assert!((DVector::from_column_slice(mg.as_slice()) - proj_u).norm() <= 1e-8);
    }

    #[test]
    fn tangent_basis_properties() {
        let inst = sphere(3, 2, 1.0);
        let u = gauss(3, 2, 4);
        let b = tangent_basis(&inst, &u).unwrap();
        assert_eq!(b.ncols(), 5);
        let vu = DVector::from_column_slice(u.as_slice());
        assert!(b.tr_mul(&vu).norm() <= 1e-12 * vu.norm());

        let inst = generate_instance(5, 6, 3, DEFAULT_XI, 5).unwrap();
        let u = gauss(5, 3, 6);
        let b = tangent_basis(&inst, &u).unwrap();
        assert_eq!(b.shape(), (15, 9));
        let jac = inst.op().products(&u).jacobian();
        assert!((&jac * &b).norm() <= 1e-10 * (1.0 + jac.norm()));
        assert!((b.tr_mul(&b) - DMatrix::identity(9, 9)).norm() <= 1e-12);

        assert!(matches!(tangent_basis(&inst, &DMatrix::zeros(5, 3)), Err(Error::RankDeficientConstraints { .. })));
    }

    #[test]
    fn restricted_hessian_on_sphere_vanishes() {
        let inst = sphere(4, 2, 2.0);
        let u = on_sphere(4, 2, 2.0, 7);
        assert!(restricted_hessian_min_eig(&inst, &u, 0.0).unwrap().abs() <= 1e-10);
    }

    #[test]
    fn restricted_hessian_positive_when_multipliers_small() {
        // A_1 = diag(1, -1, 1, -1): lambda(U) is a signed average of the row
        // weights of U, so |lambda| < 1 and A*(lambda) < I whenever both signs carry mass.
        let d = 4;
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0, 1.0, -1.0]));
        let op = MeasurementOperator::new(vec![a]).unwrap();
        let u = gauss(d, 2, 8);
        let b = op.apply(&(&u * u.transpose())).unwrap();
        let inst = Instance::new(op, b, 2, DEFAULT_XI, None).unwrap();
        let lam = crate::merit::multipliers(&inst, &u, 0.0).unwrap();
        let a_star = inst.op().adjoint(&lam.values).unwrap();
        assert!(SymmetricEigen::new(a_star).eigenvalues.max() < 1.0);
        assert!(restricted_hessian_min_eig(&inst, &u, 0.0).unwrap() > 0.0);
    }

    #[test]
    fn restricted_hessian_matches_sampling_upper_bound() {
        let (d, p) = (4, 2);
        let inst = generate_instance(d, 3, p, DEFAULT_XI, 9).unwrap();
        let u = gauss(d, p, 10);
        let eig = restricted_hessian_min_eig(&inst, &u, 0.0).unwrap();

        // Tangent projector from the dense Jacobian, independent of tangent_basis.
        let mut jac = DMatrix::zeros(3, d * p);
        for (i, a) in inst.op().matrices().iter().enumerate() {
            let au = a * &u;
            jac.set_row(i, &DVector::from_column_slice(au.as_slice()).transpose());
        }
        let proj = DMatrix::identity(d * p, d * p) - jac.transpose() * (&jac * jac.transpose()).try_inverse().unwrap() * &jac;
        let lam = crate::merit::multipliers(&inst, &u, 0.0).unwrap();
        let a_star = inst.op().adjoint(&lam.values).unwrap();
        let form = |v: &DVector<f64>| {
            let delta = DMatrix::from_column_slice(d, p, v.as_slice());
            delta.norm_squared() - a_star.dot(&(&delta * delta.transpose()))
        };
        let tangent_unit = |v: DVector<f64>| {
            let t = &proj * v;
            let n = t.norm();
            t / n
        };

        let mut rng = seeded_rng(11);
        let mut best = (f64::INFINITY, DVector::zeros(d * p));
        for _ in 0..100_000 {
            let v = tangent_unit(draw_gaussian(&mut rng, d * p, 1).column(0).into_owned());
            let q = form(&v);
            if q < best.0 {
                best = (q, v);
            }
        }
        assert!(best.0 >= eig - 1e-12, "sampled {} below eig {eig}", best.0);

        // Polish the best sample by projected gradient descent on the unit tangent sphere.
        let (mut q, mut v) = best;
        for _ in 0..20_000 {
            let delta = DMatrix::from_column_slice(d, p, v.as_slice());
            let grad = &delta - &a_star * &delta;
            let g = DVector::from_column_slice(grad.as_slice());
            v = tangent_unit(&v - g * 0.05);
            q = form(&v);
        }
        assert!(q >= eig - 1e-12);
        assert!(q - eig <= 1e-6, "refined {q}, eig {eig}");
    }

    #[test]
    fn classify_sphere_family() {
        let inst = sphere(4, 3, 2.0);
        let params = MeritParams { gamma: 10.0, ridge: 0.0 };
        let mut u = on_sphere(4, 3, 2.0, 12);
        let full = classify(&inst, &u, &params, &ClassifyTolerances::default()).unwrap();
        assert_eq!(full.verdict, Verdict::Sosp);
        u.column_mut(2).fill(0.0);
        u *= 2f64.sqrt() / u.norm();
        let rep = classify(&inst, &u, &params, &ClassifyTolerances::default()).unwrap();
        assert_eq!(rep.verdict, Verdict::RankDeficientSospGlobalMin);
        assert!(rep.min_restricted_hessian_eig.unwrap().abs() <= 1e-10);
    }

    #[test]
    fn classify_far_point_not_stationary() {
        let inst = generate_instance(4, 5, 2, DEFAULT_XI, 13).unwrap();
        let rep = classify(&inst, &(gauss(4, 2, 14) * 3.0), &MeritParams::new(100.0), &ClassifyTolerances::default()).unwrap();
        assert_eq!(rep.verdict, Verdict::NotStationary);
        assert!(rep.merit_grad_norm > 1.0);
    }

    #[test]
    fn classify_flags_infeasible_merit_stationary() {
        // U = 0 is a stationary point of h_gamma for b != 0 on every instance.
        let inst = generate_instance(3, 2, 2, DEFAULT_XI, 15).unwrap();
        let rep = classify(&inst, &DMatrix::zeros(3, 2), &MeritParams::new(100.0), &ClassifyTolerances::default()).unwrap();
        assert_eq!(rep.verdict, Verdict::InfeasibleMeritStationary);
        assert!(rep.feas_residual > rep.tol_feas);
    }

    #[test]
    fn classify_is_rotation_invariant() {
        let inst = generate_instance(5, 4, 3, DEFAULT_XI, 16).unwrap();
        let u = gauss(5, 3, 17);
        let r = gauss(3, 3, 18).qr().q();
        let params = MeritParams::new(100.0);
        let a = classify(&inst, &u, &params, &ClassifyTolerances::default()).unwrap();
        let b = classify(&inst, &(&u * r), &params, &ClassifyTolerances::default()).unwrap();
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-10 * (1.0 + x.abs());
        assert!(close(a.feas_residual, b.feas_residual));
        assert!(close(a.merit_grad_norm, b.merit_grad_norm));
        assert!(close(a.manifold_grad_norm, b.manifold_grad_norm));
        assert!(close(a.min_restricted_hessian_eig.unwrap(), b.min_restricted_hessian_eig.unwrap()));
        assert!(close(a.spectral_norm, b.spectral_norm));
        assert_eq!(a.num_rank, b.num_rank);
        assert_eq!(a.verdict, b.verdict);
    }

    #[test]
    fn certificate_cases() {
        let c = 3.0;
        let inst = sphere(3, 2, c);
        let v = gauss(3, 2, 19);
        let x = &v * v.transpose();
        let x = &x * (c / x.trace());
        let rep = dual_certificate(&inst, &x, &DVector::from_vec(vec![1.0]), 1e-6).unwrap();
        assert!(rep.certified, "{rep:?}");

        let inst = generate_instance(3, 2, 2, DEFAULT_XI, 20).unwrap();
        let rep = dual_certificate(&inst, &DMatrix::zeros(3, 3), &DVector::zeros(2), 1e-6).unwrap();
        assert!(!rep.certified);
        assert!(rep.primal_feas > 0.0);
        assert_eq!(rep.min_eig_certificate, 1.0);
    }

    #[test]
    fn certificate_sound_on_sphere_family() {
        let c = 2.0;
        let inst = sphere(3, 2, c);
        let mut rng = seeded_rng(21);
        for k in 0..200 {
            let v = draw_gaussian(&mut rng, 3, 3);
            let shift = if k % 3 == 0 { -0.3 } else { 0.0 };
            let mut x = &v * v.transpose() + DMatrix::identity(3, 3) * shift;
            if k % 2 == 0 {
                x *= c / x.trace();
            }
            let eig = SymmetricEigen::new(x.clone()).eigenvalues;
            let feasible = (x.trace() - c).abs() <= 1e-6 && eig.min() >= -1e-6;
            let rep = dual_certificate(&inst, &x, &DVector::from_vec(vec![1.0]), 1e-6).unwrap();
            assert_eq!(rep.certified, feasible, "{x}");
        }
    }

    #[test]
    fn projection_cases() {
        let inst = sphere(3, 2, 2.0);
        let u = on_sphere(3, 2, 2.0, 22);
        let p = project_to_manifold(&inst, &u, 50, 1e-12).unwrap();
        assert_eq!(p.iterations, 0);
        assert_eq!(p.distance, 0.0);

        let u = gauss(3, 2, 23);
        let p = project_to_manifold(&inst, &u, 100, 1e-14).unwrap();
        assert!((p.distance - (u.norm() - 2f64.sqrt()).abs()).abs() <= 1e-10);

        let inst = generate_instance(8, 10, 4, DEFAULT_XI, 24).unwrap();
        let feasible = project_to_manifold(&inst, &gauss(8, 4, 25), 200, 1e-13).unwrap().factor.into_inner();
        let near = &feasible + gauss(8, 4, 26) * 1e-3;
        let gap = crate::merit::feas_gap(&inst, &near).unwrap();
        assert!(gap <= 0.05 * inst.b().norm());
        let p = project_to_manifold(&inst, &near, 100, 1e-10).unwrap();
        assert!(p.residual <= 1e-10);
    }

    #[test]
    fn projection_reports_stagnation() {
        // g(V) = (||V||^2 + 1)/2 never vanishes and U = 0 is a critical point
        let inst = sphere(2, 1, -1.0);
        match project_to_manifold(&inst, &DMatrix::zeros(2, 1), 10, 1e-12) {
            Err(Error::ProjectionFailed { residual, .. }) => assert!((residual - 0.5).abs() < 1e-12),
            other => panic!("expected ProjectionFailed, got {other:?}"),
        }
    }
}
