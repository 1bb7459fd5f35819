//! Dense linear-algebra kernel.
//!
//! Matrices are `nalgebra` types throughout. The SVD itself is delegated to
//! `faer`, whose routine stays accurate on exactly rank-deficient input.
//! The wrappers fix the conventions the rest of the crate relies on: thin
//! factors, singular values sorted in nonincreasing order, and rank
//! decisions made relative to the largest singular value.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default relative threshold for rank decisions (`σᵢ > tol·σ₁`).
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Thin singular value decomposition `m = U·diag(σ)·Vᵀ`.
///
/// `u` is `rows × k`, `v` is `cols × k` with `k = min(rows, cols)`; both have
/// orthonormal columns. Singular values are nonincreasing.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl SvdResult {
    pub fn rank(&self, tol: f64) -> usize {
        numerical_rank(self.singular_values.as_slice(), tol)
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (j, s) in self.singular_values.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.v.transpose()
    }
}

pub fn ensure_finite(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub fn svd(m: &DMatrix<f64>) -> Result<SvdResult> {
    ensure_finite(m, "SVD input")?;
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok(SvdResult {
            u: DMatrix::zeros(rows, 0),
            singular_values: DVector::zeros(0),
            v: DMatrix::zeros(cols, 0),
        });
    }
    let fm = faer::Mat::<f64>::from_fn(rows, cols, |i, j| m[(i, j)]);
    let dec = fm.thin_svd().map_err(|_| Error::SvdNoConvergence)?;
    let (fu, fv, fs) = (dec.U(), dec.V(), dec.S().column_vector());
    let k = rows.min(cols);
    Ok(SvdResult {
        u: DMatrix::from_fn(rows, k, |i, j| fu[(i, j)]),
        singular_values: DVector::from_fn(k, |i, _| fs[i]),
        v: DMatrix::from_fn(cols, k, |i, j| fv[(i, j)]),
    })
}

/// Number of singular values strictly above `tol·σ₁`. Zero when `σ₁ = 0`.
pub fn numerical_rank(sv: &[f64], tol: f64) -> usize {
    match sv.first() {
        Some(&s1) if s1 > 0.0 => sv.iter().filter(|&&s| s > tol * s1).count(),
        _ => 0,
    }
}

/// Minimum-norm least-squares solution of `K·lhs ≈ rhs`, with its diagnostics.
#[derive(Debug, Clone)]
pub struct LstsqSolution {
    pub coefficients: DMatrix<f64>,
    pub rank: usize,
    pub singular_values: DVector<f64>,
}

/// Solves `min ‖rhs − K·lhs‖_F` for the minimum-norm `K = rhs·pinv(lhs)`,
/// summing only over singular values above `tol·σ₁`.
pub fn lstsq_min_norm_detailed(
    lhs: &DMatrix<f64>,
    rhs: &DMatrix<f64>,
    tol: f64,
) -> Result<LstsqSolution> {
    if lhs.ncols() != rhs.ncols() {
        return Err(Error::Dimension(format!(
            "lhs is {}x{} but rhs has {} columns",
            lhs.nrows(),
            lhs.ncols(),
            rhs.ncols()
        )));
    }
    ensure_finite(rhs, "least-squares right-hand side")?;
    let dec = svd(lhs)?;
    let rank = dec.rank(tol);
    let mut k = DMatrix::zeros(rhs.nrows(), lhs.nrows());
    for i in 0..rank {
        let s = dec.singular_values[i];
        let rv = rhs * dec.v.column(i);
        k.ger(1.0 / s, &rv, &dec.u.column(i), 1.0);
    }
    Ok(LstsqSolution {
        coefficients: k,
        rank,
        singular_values: dec.singular_values,
    })
}

pub fn lstsq_min_norm(lhs: &DMatrix<f64>, rhs: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    lstsq_min_norm_detailed(lhs, rhs, tol).map(|s| s.coefficients)
}

/// Truncated Moore-Penrose pseudoinverse `Σ σᵢ⁻¹ vᵢ uᵢᵀ` over `σᵢ > tol·σ₁`.
pub fn truncated_pinv(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    let dec = svd(m)?;
    let rank = dec.rank(tol);
    let mut p = DMatrix::zeros(m.ncols(), m.nrows());
    for i in 0..rank {
        p.ger(
            1.0 / dec.singular_values[i],
            &dec.v.column(i),
            &dec.u.column(i),
            1.0,
        );
    }
    Ok(p)
}

pub fn matrix_rank(m: &DMatrix<f64>, tol: f64) -> Result<usize> {
    Ok(svd(m)?.rank(tol))
}

/// Stacks matrices with equal column counts on top of each other.
pub fn vstack(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vstack: column mismatch");
        out.view_mut((r, 0), b.shape()).copy_from(b);
        r += b.nrows();
    }
    out
}

/// Concatenates matrices with equal row counts side by side.
pub fn hstack(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows, "hstack: row mismatch");
        out.view_mut((0, c), b.shape()).copy_from(b);
        c += b.ncols();
    }
    out
}

/// Concatenates vectors into one column.
pub fn vcat(parts: &[&DVector<f64>]) -> DVector<f64> {
    let n = parts.iter().map(|p| p.len()).sum();
    let mut out = DVector::zeros(n);
    let mut i = 0;
    for p in parts {
        out.rows_mut(i, p.len()).copy_from(p);
        i += p.len();
    }
    out
}

/// Scales every nonzero row of `m` to unit Euclidean norm. Returns the
/// scaled matrix and the row norms used (1 for zero rows).
pub fn row_equilibrate(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let mut scaled = m.clone();
    let mut norms = DVector::from_element(m.nrows(), 1.0);
    for i in 0..m.nrows() {
        let n = m.row(i).norm();
        if n > 0.0 {
            scaled.row_mut(i).unscale_mut(n);
            norms[i] = n;
        }
    }
    (scaled, norms)
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol * m.amax().max(1.0)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Factor `L` with `L·Lᵀ = m` for a symmetric positive semidefinite `m`.
///
/// Eigenvalues in `[-tol, 0)` are clamped to zero; anything more negative is
/// rejected.
pub fn psd_factor(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    if !is_symmetric(m, 1e-12) {
        return Err(Error::InvalidCovariance("matrix is not symmetric".into()));
    }
    if m.nrows() == 0 {
        return Ok(m.clone());
    }
    let eig = m.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min < -tol {
        return Err(Error::InvalidCovariance(format!(
            "smallest eigenvalue {min:e} is negative"
        )));
    }
    let mut l = eig.eigenvectors.clone();
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        l.column_mut(j).scale_mut(lam.max(0.0).sqrt());
    }
    Ok(l)
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    ensure_finite(m, "eigenvalue input")?;
    let fm = faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let eig = fm
        .eigenvalues()
        .map_err(|_| Error::InvalidArgument("eigenvalue iteration did not converge".into()))?;
    Ok(eig.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Entrywise 1-norm (sum of absolute values).
pub fn entrywise_l1(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x.abs()).sum()
}

/// `m^k` for square `m`.
pub fn matrix_power(m: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let mut out = DMatrix::identity(m.nrows(), m.ncols());
    for _ in 0..k {
        out = &out * m;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn svd_of_identity() {
        let s = svd(&DMatrix::identity(2, 2)).unwrap();
        assert_eq!(s.singular_values.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn svd_of_zero_matrix() {
        let s = svd(&DMatrix::zeros(3, 2)).unwrap();
        assert_eq!(s.singular_values.as_slice(), &[0.0, 0.0]);
        assert_eq!(s.rank(1e-8), 0);
    }

    #[test]
    fn svd_of_diagonal() {
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        let s = svd(&m).unwrap();
        assert_relative_eq!(s.singular_values[0], 3.0, epsilon = 1e-14);
        assert_relative_eq!(s.singular_values[1], 1.0, epsilon = 1e-14);
        // signs are arbitrary but the factors must be the identity up to sign
        for i in 0..2 {
            assert_relative_eq!(s.u[(i, i)].abs(), 1.0, epsilon = 1e-14);
            assert_relative_eq!(s.v[(i, i)].abs(), 1.0, epsilon = 1e-14);
            assert_relative_eq!(s.u[(i, i)] * s.v[(i, i)], 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn svd_reconstructs_wide_and_tall() {
        for (r, c) in [(4, 9), (9, 4), (5, 5), (1, 7)] {
            let m = random_matrix(r, c, (r * 31 + c) as u64);
            let s = svd(&m).unwrap();
            assert_eq!(s.u.shape(), (r, r.min(c)));
            assert_eq!(s.v.shape(), (c, r.min(c)));
            assert!((s.reconstruct() - &m).norm() <= 1e-10 * m.norm());
            assert!(s
                .singular_values
                .as_slice()
                .windows(2)
                .all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn svd_empty_and_nonfinite() {
        assert_eq!(svd(&DMatrix::zeros(0, 3)).unwrap().v.shape(), (3, 0));
        let mut m = DMatrix::zeros(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(matches!(svd(&m), Err(Error::NonFinite(_))));
    }

    #[test]
    fn rank_examples() {
        assert_eq!(numerical_rank(&[3.0, 1.0, 1e-14], 1e-8), 2);
        assert_eq!(numerical_rank(&[0.0, 0.0], 1e-3), 0);
        assert_eq!(numerical_rank(&[], 1e-3), 0);
    }

    #[test]
    fn pinv_examples() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        assert_relative_eq!(truncated_pinv(&i3, 1e-8).unwrap(), i3, epsilon = 1e-14);

        let d = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        let expected = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.0]);
        assert_relative_eq!(truncated_pinv(&d, 1e-8).unwrap(), expected, epsilon = 1e-14);

        assert_eq!(
            truncated_pinv(&DMatrix::zeros(2, 3), 1e-8).unwrap(),
            DMatrix::zeros(3, 2)
        );
    }

    #[test]
    fn pinv_left_inverse_of_full_column_rank() {
        let m = random_matrix(5, 3, 7);
        let p = truncated_pinv(&m, 1e-8).unwrap();
        assert!((&p * &m - DMatrix::identity(3, 3)).amax() <= 1e-10);
    }

    #[test]
    fn lstsq_examples() {
        let r = random_matrix(2, 4, 3);
        let k = lstsq_min_norm(&DMatrix::identity(4, 4), &r, 1e-8).unwrap();
        assert_relative_eq!(k, r, epsilon = 1e-12);

        // overdetermined consistent system
        let k0 = random_matrix(2, 3, 11);
        let lhs = random_matrix(3, 20, 12);
        let k = lstsq_min_norm(&lhs, &(&k0 * &lhs), 1e-8).unwrap();
        assert!((k - k0).amax() <= 1e-10);

        // shape error
        assert!(matches!(
            lstsq_min_norm(&DMatrix::zeros(2, 3), &DMatrix::zeros(1, 4), 1e-8),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn lstsq_min_norm_on_duplicated_rows() {
        // rows 0 and 1 identical: minimizers differ by multiples of (1, -1, 0)
        let base = random_matrix(2, 10, 5);
        let lhs = DMatrix::from_fn(3, 10, |i, j| if i < 2 { base[(0, j)] } else { base[(1, j)] });
        let rhs = DMatrix::from_fn(1, 10, |_, j| 2.0 * base[(0, j)] - base[(1, j)]);
        let k = lstsq_min_norm(&lhs, &rhs, 1e-8).unwrap();
        assert_relative_eq!(k[(0, 0)], k[(0, 1)], epsilon = 1e-10);
        assert_relative_eq!(k[(0, 0)] + k[(0, 1)], 2.0, epsilon = 1e-10);
        assert_relative_eq!(k[(0, 2)], -1.0, epsilon = 1e-10);
    }

    #[test]
    fn psd_factor_reproduces_covariance() {
        let a = random_matrix(3, 2, 9);
        let cov = &a * a.transpose();
        let l = psd_factor(&cov, 1e-12).unwrap();
        assert!((&l * l.transpose() - &cov).amax() <= 1e-12);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(psd_factor(&bad, 1e-12).is_err());
    }

    #[test]
    fn spectral_radius_of_rotation() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -0.5, 0.5, 0.0]);
        assert_relative_eq!(spectral_radius(&m).unwrap(), 0.5, epsilon = 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn penrose_ok(m: &DMatrix<f64>, p: &DMatrix<f64>) -> bool {
            let scale = m.norm().max(1e-300);
            let pscale = p.norm().max(1e-300);
            let tol = 1e-8;
            let mpm = m * p * m;
            let pmp = p * m * p;
            let mp = m * p;
            let pm = p * m;
            (mpm - m).norm() <= tol * scale
                && (pmp - p).norm() <= tol * pscale
                && (&mp - mp.transpose()).norm() <= tol * mp.norm().max(1.0)
                && (&pm - pm.transpose()).norm() <= tol * pm.norm().max(1.0)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn penrose_identities(rows in 1usize..7, cols in 1usize..7, rank in 0usize..7, seed in 0u64..1000) {
                let k = rank.min(rows).min(cols);
                let m = random_matrix(rows, k, seed) * random_matrix(k, cols, seed + 1);
                let p = truncated_pinv(&m, 1e-8).unwrap();
                prop_assert!(penrose_ok(&m, &p));
            }

            #[test]
            fn rank_is_scale_invariant(rows in 1usize..7, cols in 1usize..7, rank in 0usize..7,
                                       scale in prop_oneof![-1e6f64..-1e-6, 1e-6f64..1e6], seed in 0u64..1000) {
                let k = rank.min(rows).min(cols);
                let m = random_matrix(rows, k, seed) * random_matrix(k, cols, seed + 7);
                prop_assert_eq!(matrix_rank(&m, 1e-8).unwrap(), matrix_rank(&(&m * scale), 1e-8).unwrap());
            }

            #[test]
            fn lstsq_recovers_full_row_rank(rows in 1usize..5, out in 1usize..4, extra in 0usize..10, seed in 0u64..1000) {
                let lhs = random_matrix(rows, rows + extra, seed);
                let k0 = random_matrix(out, rows, seed + 3);
                let k = lstsq_min_norm(&lhs, &(&k0 * &lhs), 1e-8).unwrap();
                prop_assert!((k - k0).amax() <= 1e-8);
            }
        }
    }
}
