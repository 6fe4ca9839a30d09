//! The linear measurement operator `A(X) = [<A_1, X>, ..., <A_m, X>]`, its
//! adjoint, the constraint derivative `Dg(U)[D] = A(D U^T)` with adjoint
//! `A*(delta) U`, and the Gram matrix `K(U) = [<A_i U, A_j U>]`.
//!
//! Vectorization is column-major throughout (matching `nalgebra` storage), so
//! `vec(A_i U)` is the `i`-th row of [`FactorProducts::jacobian`].

use std::ops::Deref;
use std::path::Path;

use nalgebra::{DMatrix, DMatrixView, DVector, DVectorView, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, check_len, Error, Result};
use crate::fmt::to_json_string;

/// Name of the PRNG pipeline used by [`generate_instance`]. Bumped whenever the
/// draw order or the generator changes.
pub const RNG_ALGORITHM: &str = "chacha20-seed_from_u64/standard-normal/v1";

/// Spectral cap used when the caller does not set one.
pub const DEFAULT_XI: f64 = 1e6;

/// `m` symmetric `d x d` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementOperator {
    d: usize,
    matrices: Vec<DMatrix<f64>>,
    // m x d^2, row i = vec(A_i)
    flat: DMatrix<f64>,
    // (m d) x d, block i = A_i
    stacked: DMatrix<f64>,
}

impl MeasurementOperator {
    /// Builds the operator, replacing every `A_i` by `(A_i + A_i^T) / 2`.
    pub fn new(matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        let m = matrices.len();
        if m == 0 {
            return Err(Error::InvalidDimension("operator needs at least one matrix".into()));
        }
        let d = matrices[0].nrows();
        if d == 0 {
            return Err(Error::InvalidDimension("ambient dimension must be positive".into()));
        }
        let mut sym = Vec::with_capacity(m);
        for (i, a) in matrices.into_iter().enumerate() {
            check_dims(&format!("A_{i}"), a.shape(), (d, d))?;
            let s = DMatrix::from_fn(d, d, |r, c| 0.5 * (a[(r, c)] + a[(c, r)]));
            debug_assert!(s == s.transpose());
            sym.push(s);
        }
        let mut flat = DMatrix::zeros(m, d * d);
        let mut stacked = DMatrix::zeros(m * d, d);
        for (i, a) in sym.iter().enumerate() {
            for (k, v) in a.iter().enumerate() {
                flat[(i, k)] = *v;
            }
            stacked.view_mut((i * d, 0), (d, d)).copy_from(a);
        }
        Ok(Self { d, matrices: sym, flat, stacked })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.matrices.len()
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    /// `[<A_1, X>, ..., <A_m, X>]`.
    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        check_dims("X", x.shape(), (self.d, self.d))?;
        Ok(self.apply_unchecked(x))
    }

    pub(crate) fn apply_unchecked(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let v = DVector::from_column_slice(x.as_slice());
        &self.flat * v
    }

    /// `sum_i lambda_i A_i`.
    pub fn adjoint(&self, lambda: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_len("lambda", lambda.len(), self.m())?;
        Ok(self.adjoint_unchecked(lambda))
    }

    pub(crate) fn adjoint_unchecked(&self, lambda: &DVector<f64>) -> DMatrix<f64> {
        let v = self.flat.tr_mul(lambda);
        DMatrix::from_column_slice(self.d, self.d, v.as_slice())
    }

    /// `Dg(U)[D] = A(D U^T)`.
    pub fn dg_apply(&self, u: &DMatrix<f64>, delta: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_factor(u)?;
        check_dims("Delta", delta.shape(), u.shape())?;
        Ok(self.products(u).dg_apply(delta))
    }

    /// `(Dg(U))*[delta] = A*(delta) U`.
    pub fn dg_adjoint(&self, u: &DMatrix<f64>, delta: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_factor(u)?;
        check_len("delta", delta.len(), self.m())?;
        Ok(self.adjoint_unchecked(delta) * u)
    }

    /// `K(U) = [<A_i U, A_j U>]`.
    pub fn gram(&self, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_factor(u)?;
        Ok(self.products(u).gram())
    }

    /// Smallest singular value of `Dg(U)`, i.e. `sqrt(lambda_min(K(U)))`.
    pub fn sigma_min_dg(&self, u: &DMatrix<f64>) -> Result<f64> {
        self.check_factor(u)?;
        let dp = self.d * u.ncols();
        if self.m() > dp {
            return Err(Error::RankImpossible { m: self.m(), dp });
        }
        Ok(min_eigenvalue(&self.products(u).gram()).max(0.0).sqrt())
    }

    /// Precomputes `A_i U` for every `i`.
    pub fn products(&self, u: &DMatrix<f64>) -> FactorProducts {
        let (d, m, p) = (self.d, self.m(), u.ncols());
        let stacked = &self.stacked * u;
        let mut cols = DMatrix::zeros(d * p, m);
        for i in 0..m {
            let mut col = cols.column_mut(i);
            for c in 0..p {
                for r in 0..d {
                    col[c * d + r] = stacked[(i * d + r, c)];
                }
            }
        }
        FactorProducts { d, p, cols }
    }
    pub(crate) fn check_factor(&self, u: &DMatrix<f64>) -> Result<()> {
        if u.nrows() != self.d || u.ncols() == 0 {
            return Err(Error::InvalidDimension(format!(
                "U: expected {} rows and at least one column, got {}x{}",
                self.d,
                u.nrows(),
                u.ncols()
            )));
        }
        Ok(())
    }
}

/// The products `A_i U`, stored as the columns `vec(A_i U)` of a `(d p) x m` matrix.
#[derive(Debug, Clone)]
pub struct FactorProducts {
    d: usize,
    p: usize,
    cols: DMatrix<f64>,
}

impl FactorProducts {
    pub fn block(&self, i: usize) -> DMatrixView<'_, f64> {
        let n = self.d * self.p;
        DMatrixView::from_slice(&self.cols.as_slice()[i * n..(i + 1) * n], self.d, self.p)
    }

    /// `m x (d p)` matrix whose rows are `vec(A_i U)`.
    pub fn jacobian(&self) -> DMatrix<f64> {
        self.cols.transpose()
    }

    pub fn gram(&self) -> DMatrix<f64> {
        self.cols.tr_mul(&self.cols)
    }

    /// `[<A_i D, A_j U>]_{ij}`, the non-symmetric half of `DK(U)[D]`.
    pub fn cross_gram(&self, other: &FactorProducts) -> DMatrix<f64> {
        other.cols.tr_mul(&self.cols)
    }

    /// `A(D U^T) = [<A_i U, D>]`.
    pub fn dg_apply(&self, delta: &DMatrix<f64>) -> DVector<f64> {
        self.cols.tr_mul(&DVectorView::from_slice(delta.as_slice(), delta.len()))
    }

    /// `sum_i c_i A_i U`.
    pub fn combine(&self, coeffs: &DVector<f64>) -> DMatrix<f64> {
        let v = &self.cols * coeffs;
        DMatrix::from_vec(self.d, self.p, v.data.into())
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub(crate) fn min_eigenvalue(s: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(s.clone()).eigenvalues.min()
}

/// A `d x p` factor `U`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FactorFile", into = "FactorFile")]
pub struct Factor(DMatrix<f64>);

impl Factor {
    pub fn new(entries: DMatrix<f64>) -> Self {
        Self(entries)
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, to_json_string(self)?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

impl Deref for Factor {
    type Target = DMatrix<f64>;
    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl From<DMatrix<f64>> for Factor {
    fn from(m: DMatrix<f64>) -> Self {
        Self(m)
    }
}

/// On-disk factor: `{"d", "p", "entries": [row-major d*p numbers]}`.
#[derive(Serialize, Deserialize)]
struct FactorFile {
    d: usize,
    p: usize,
    entries: Vec<f64>,
}

impl From<Factor> for FactorFile {
    fn from(f: Factor) -> Self {
        FactorFile { d: f.nrows(), p: f.ncols(), entries: row_major(&f.0) }
    }
}

impl TryFrom<FactorFile> for Factor {
    type Error = String;
    fn try_from(f: FactorFile) -> std::result::Result<Self, String> {
        if f.entries.len() != f.d * f.p {
            return Err(format!("factor has {} entries, expected {}", f.entries.len(), f.d * f.p));
        }
        Ok(Factor(DMatrix::from_row_slice(f.d, f.p, &f.entries)))
    }
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Operator, right-hand side, factor width and spectral cap.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    op: MeasurementOperator,
    b: DVector<f64>,
    p: usize,
    xi: f64,
    seed: Option<u64>,
    rng: Option<String>,
}

impl Instance {
    pub fn new(op: MeasurementOperator, b: DVector<f64>, p: usize, xi: f64, seed: Option<u64>) -> Result<Self> {
        check_len("b", b.len(), op.m())?;
        if p == 0 || p > op.d() {
            return Err(Error::InvalidInstance(format!("factor width p = {p} must lie in 1..={}", op.d())));
        }
        if !(xi > 0.0) {
            return Err(Error::InvalidInstance(format!("xi must be positive, got {xi}")));
        }
        Ok(Self { op, b, p, xi, seed, rng: None })
    }

    pub fn op(&self) -> &MeasurementOperator {
        &self.op
    }
    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }
    pub fn d(&self) -> usize {
        self.op.d()
    }
    pub fn m(&self) -> usize {
        self.op.m()
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn xi(&self) -> f64 {
        self.xi
    }
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }
    pub fn rng_algorithm(&self) -> Option<&str> {
        self.rng.as_deref()
    }

    /// Same operator and `b`, different factor width.
    pub fn with_p(&self, p: usize) -> Result<Self> {
        let mut inst = Self::new(self.op.clone(), self.b.clone(), p, self.xi, self.seed)?;
        inst.rng = self.rng.clone();
        Ok(inst)
    }

    /// Same operator and `p`, new right-hand side.
    pub fn with_b(&self, b: DVector<f64>) -> Result<Self> {
        let mut inst = Self::new(self.op.clone(), b, self.p, self.xi, self.seed)?;
        inst.rng = self.rng.clone();
        Ok(inst)
    }

    pub(crate) fn check_factor(&self, u: &DMatrix<f64>) -> Result<()> {
        check_dims("U", u.shape(), (self.d(), self.p))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(to_json_string(&InstanceFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: InstanceFile = serde_json::from_str(s)?;
        file.try_into()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    d: usize,
    m: usize,
    p: usize,
    xi: f64,
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rng: Option<String>,
    matrices: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl From<&Instance> for InstanceFile {
    fn from(inst: &Instance) -> Self {
        InstanceFile {
            d: inst.d(),
            m: inst.m(),
            p: inst.p,
            xi: inst.xi,
            seed: inst.seed,
            rng: inst.rng.clone(),
            matrices: inst.op.matrices.iter().map(row_major).collect(),
            b: inst.b.as_slice().to_vec(),
        }
    }
}

impl TryFrom<InstanceFile> for Instance {
    type Error = Error;
    fn try_from(f: InstanceFile) -> Result<Self> {
        check_len("matrices", f.matrices.len(), f.m)?;
        let mats = f
            .matrices
            .iter()
            .enumerate()
            .map(|(i, a)| {
                check_len(&format!("matrices[{i}]"), a.len(), f.d * f.d)?;
                Ok(DMatrix::from_row_slice(f.d, f.d, a))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut inst = Instance::new(MeasurementOperator::new(mats)?, DVector::from_vec(f.b), f.p, f.xi, f.seed)?;
        inst.rng = f.rng;
        Ok(inst)
    }
}

pub(crate) fn seeded_rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Draws `count` matrices with i.i.d. standard-normal upper triangles (diagonal
/// included) mirrored to the lower triangle.
pub(crate) fn draw_symmetric(rng: &mut ChaCha20Rng, d: usize, count: usize) -> Vec<DMatrix<f64>> {
    (0..count)
        .map(|_| {
            let mut a = DMatrix::zeros(d, d);
            for r in 0..d {
                for c in r..d {
                    let v: f64 = StandardNormal.sample(rng);
                    a[(r, c)] = v;
                    a[(c, r)] = v;
                }
            }
            a
        })
        .collect()
}

pub fn draw_gaussian(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    // column-major fill order is part of the versioned stream
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Random Gaussian instance: the `A_i` first, then `b`, all from one seeded stream.
pub fn generate_instance(d: usize, m: usize, p: usize, xi: f64, seed: u64) -> Result<Instance> {
    if d == 0 || m == 0 {
        return Err(Error::InvalidDimension(format!("d = {d} and m = {m} must be positive")));
    }
    let mut rng = seeded_rng(seed);
    let mats = draw_symmetric(&mut rng, d, m);
    let b = DVector::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
    let mut inst = Instance::new(MeasurementOperator::new(mats)?, b, p, xi, Some(seed))?;
    inst.rng = Some(RNG_ALGORITHM.to_string());
    Ok(inst)
}

/// Random operator with a planted right-hand side `b = A(x_planted)`.
pub fn generate_planted(
    d: usize,
    m: usize,
    p: usize,
    xi: f64,
    seed: u64,
    planted: impl FnOnce(&mut ChaCha20Rng) -> DMatrix<f64>,
) -> Result<(Instance, DMatrix<f64>)> {
    let mut rng = seeded_rng(seed);
    let op = MeasurementOperator::new(draw_symmetric(&mut rng, d, m))?;
    let x = planted(&mut rng);
    let b = op.apply(&x)?;
    let mut inst = Instance::new(op, b, p, xi, Some(seed))?;
    inst.rng = Some(RNG_ALGORITHM.to_string());
    Ok((inst, x))
}

/// Pataki's width `ceil(sqrt(2 m))`.
pub fn pataki_width(m: usize) -> usize {
    (2.0 * m as f64).sqrt().ceil() as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SVD;

    fn random_op(d: usize, m: usize, seed: u64) -> MeasurementOperator {
        generate_instance(d, m, 1, DEFAULT_XI, seed).unwrap().op().clone()
    }

    fn gauss(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        draw_gaussian(&mut seeded_rng(seed), rows, cols)
    }

    fn sym(x: DMatrix<f64>) -> DMatrix<f64> {
        (&x + x.transpose()) * 0.5
    }

    #[test]
    fn apply_identity_trace() {
        let op = MeasurementOperator::new(vec![DMatrix::identity(2, 2)]).unwrap();
        assert_eq!(op.apply(&DMatrix::identity(2, 2)).unwrap()[0], 2.0);
        let op = random_op(3, 4, 1);
        assert_eq!(op.apply(&DMatrix::zeros(3, 3)).unwrap(), DVector::zeros(4));
    }

    #[test]
    fn apply_matches_double_loop() {
        let op = random_op(4, 6, 2);
        let x = sym(gauss(4, 4, 3));
        let got = op.apply(&x).unwrap();
        for (k, a) in op.matrices().iter().enumerate() {
            let mut s = 0.0;
            for i in 0..4 {
                for j in 0..4 {
                    s += a[(i, j)] * x[(i, j)];
                }
            }
            assert!((got[k] - s).abs() <= 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let op = random_op(3, 2, 1);
        assert!(matches!(op.apply(&DMatrix::zeros(2, 2)), Err(Error::InvalidDimension(_))));
        assert!(matches!(op.adjoint(&DVector::zeros(3)), Err(Error::InvalidDimension(_))));
        let u = DMatrix::zeros(3, 2);
        assert!(matches!(op.dg_apply(&u, &DMatrix::zeros(3, 1)), Err(Error::InvalidDimension(_))));
        assert!(matches!(op.dg_adjoint(&u, &DVector::zeros(5)), Err(Error::InvalidDimension(_))));
        assert!(MeasurementOperator::new(vec![]).is_err());
        assert!(MeasurementOperator::new(vec![DMatrix::zeros(2, 2), DMatrix::zeros(3, 3)]).is_err());
    }

    #[test]
    fn adjoint_trivial_cases() {
        let op = MeasurementOperator::new(vec![DMatrix::identity(3, 3)]).unwrap();
        assert_eq!(op.adjoint(&DVector::from_vec(vec![2.5])).unwrap(), DMatrix::identity(3, 3) * 2.5);
        let op = random_op(3, 5, 4);
        assert_eq!(op.adjoint(&DVector::zeros(5)).unwrap(), DMatrix::zeros(3, 3));
        assert_eq!(op.adjoint(&DVector::from_element(5, 1.0)).unwrap(), op.adjoint(&DVector::from_element(5, 1.0)).unwrap().transpose());
    }

    #[test]
    fn construction_symmetrizes() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 3.0]);
        let op = MeasurementOperator::new(vec![a]).unwrap();
        let s = &op.matrices()[0];
        assert_eq!(s, &s.transpose());
        assert_eq!(s[(0, 1)], 1.0);
    }

    #[test]
    fn dg_apply_hand_example() {
        let op = MeasurementOperator::new(vec![DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])]).unwrap();
        let u = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let delta = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        assert_eq!(op.dg_apply(&u, &delta).unwrap()[0], 1.0);
        assert_eq!(op.dg_apply(&u, &DMatrix::zeros(2, 1)).unwrap()[0], 0.0);
    }

    #[test]
    fn dg_apply_matches_central_differences() {
        let inst = generate_instance(5, 7, 3, DEFAULT_XI, 11).unwrap();
        let op = inst.op();
        let u = gauss(5, 3, 12);
        let delta = gauss(5, 3, 13);
        let g = |v: &DMatrix<f64>| (op.apply(&(v * v.transpose())).unwrap() - inst.b()) * 0.5;
        let t = 1e-6;
        let fd = (g(&(&u + &delta * t)) - g(&(&u - &delta * t))) / (2.0 * t);
        let an = op.dg_apply(&u, &delta).unwrap();
        assert!((&fd - &an).norm() <= 1e-6 * an.norm());
    }

    #[test]
    fn dg_adjoint_trivial_cases() {
        let op = MeasurementOperator::new(vec![DMatrix::identity(3, 3)]).unwrap();
        let u = gauss(3, 2, 5);
        assert!((op.dg_adjoint(&u, &DVector::from_vec(vec![1.5])).unwrap() - &u * 1.5).norm() < 1e-15);
        assert_eq!(op.dg_adjoint(&u, &DVector::zeros(1)).unwrap(), DMatrix::zeros(3, 2));
    }

    #[test]
    fn gram_trivial_cases() {
        let op = MeasurementOperator::new(vec![DMatrix::identity(3, 3)]).unwrap();
        let u = gauss(3, 2, 6);
        assert!((op.gram(&u).unwrap()[(0, 0)] - u.norm_squared()).abs() < 1e-13);
        let op = random_op(3, 4, 7);
        assert_eq!(op.gram(&DMatrix::zeros(3, 2)).unwrap(), DMatrix::zeros(4, 4));
    }

    #[test]
    fn gram_equals_composition_of_dg_and_adjoint() {
        let op = random_op(4, 6, 8);
        let u = gauss(4, 3, 9);
        let k = op.gram(&u).unwrap();
        // K e_j = Dg(Dg* e_j)
        for j in 0..6 {
            let mut e = DVector::zeros(6);
            e[j] = 1.0;
            let col = op.dg_apply(&u, &op.dg_adjoint(&u, &e).unwrap()).unwrap();
            assert!((col - k.column(j)).norm() <= 1e-10 * (1.0 + k.norm()));
        }
    }

    #[test]
    fn sigma_min_trivial_cases() {
        let op = MeasurementOperator::new(vec![DMatrix::identity(3, 3)]).unwrap();
        let u = gauss(3, 2, 10);
        assert!((op.sigma_min_dg(&u).unwrap() - u.norm()).abs() < 1e-12);
        assert_eq!(op.sigma_min_dg(&DMatrix::zeros(3, 2)).unwrap(), 0.0);
        let op = random_op(2, 5, 1);
        assert!(matches!(op.sigma_min_dg(&DMatrix::zeros(2, 2)), Err(Error::RankImpossible { m: 5, dp: 4 })));
    }

    #[test]
    fn sigma_min_matches_dense_jacobian_svd() {
        let op = random_op(4, 5, 14);
        let u = gauss(4, 2, 15);
        let mut jac = DMatrix::zeros(5, 8);
        for (i, a) in op.matrices().iter().enumerate() {
            let au = a * &u;
            for (k, v) in au.iter().enumerate() {
                jac[(i, k)] = *v;
            }
        }
        let oracle = SVD::new(jac, false, false).singular_values.min();
        assert!((op.sigma_min_dg(&u).unwrap() - oracle).abs() <= 1e-10);
    }

    #[test]
    fn generation_is_deterministic_and_symmetric() {
        let a = generate_instance(5, 4, 2, DEFAULT_XI, 7).unwrap();
        let b = generate_instance(5, 4, 2, DEFAULT_XI, 7).unwrap();
        assert_eq!(a, b);
        for m in a.op().matrices() {
            assert_eq!(m, &m.transpose());
        }
        assert_ne!(a, generate_instance(5, 4, 2, DEFAULT_XI, 8).unwrap());
        assert_eq!(a.rng_algorithm(), Some(RNG_ALGORITHM));
    }

    #[test]
    fn generated_entries_are_standard_normal() {
        // 34 instances * 30 matrices * 105 off-diagonal entries > 10^4 draws
        let mut xs = Vec::new();
        for seed in 0..34 {
            let inst = generate_instance(15, 30, 1, DEFAULT_XI, seed).unwrap();
            for a in inst.op().matrices() {
                for r in 0..15 {
                    for c in r + 1..15 {
                        xs.push(a[(r, c)]);
                    }
                }
            }
        }
        let n = xs.len() as f64;
        assert!(n >= 1e4);
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() <= 5.0 / n.sqrt(), "mean {mean}");
        // Var of the sample variance of N(0,1) is 2/(n-1)
        assert!((var - 1.0).abs() <= 5.0 * (2.0 / (n - 1.0)).sqrt(), "var {var}");
    }

    #[test]
    fn instance_validation() {
        let op = random_op(3, 2, 1);
        let b = DVector::zeros(2);
        assert!(Instance::new(op.clone(), b.clone(), 4, 1.0, None).is_err());
        assert!(Instance::new(op.clone(), b.clone(), 0, 1.0, None).is_err());
        assert!(Instance::new(op.clone(), b.clone(), 2, 0.0, None).is_err());
        assert!(Instance::new(op.clone(), DVector::zeros(3), 2, 1.0, None).is_err());
        assert!(Instance::new(op, b, 3, 1.0, None).is_ok());
    }

    #[test]
    fn instance_json_round_trip_is_lossless() {
        let inst = generate_instance(4, 3, 2, DEFAULT_XI, 99).unwrap();
        let s = inst.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        for key in ["d", "m", "p", "xi", "seed", "matrices", "b"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(Instance::from_json(&s).unwrap(), inst);
        assert!(Instance::from_json("{\"d\": 2").is_err());
    }

    #[test]
    fn factor_json_is_row_major() {
        let f = Factor::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let v: serde_json::Value = serde_json::from_str(&to_json_string(&f).unwrap()).unwrap();
        assert_eq!(v["entries"][1].as_f64(), Some(2.0));
        let back: Factor = serde_json::from_value(v).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn pataki_rule() {
        assert_eq!(pataki_width(30), 8);
        assert_eq!(pataki_width(20), 7);
        assert_eq!(pataki_width(2), 2);
    }
}
