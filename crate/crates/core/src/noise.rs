//! ARMA estimation from noisy data with known noise covariances.
//!
//! Process noise `ω_t ~ N(0, Q)` enters through the control channel and
//! measurement noise `ν_t ~ N(0, R)` is added to the outputs. Sample
//! correlations of the measured outputs and commanded inputs are debiased
//! before the normal equations are solved.

use log::warn;
use nalgebra::DMatrix;

use crate::arma::{assemble, ArmaCoefficients, TvArmaModel};
use crate::error::{Error, Result};
use crate::numerics::{symmetrize, truncated_pinv};
use crate::plants::{NoiseSpec, RolloutBatch};

/// Sample correlations at step `t` for order `q`. Stacked histories are
/// newest first, as in the data matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSet {
    pub t: usize,
    pub q: usize,
    pub samples: usize,
    /// `mq × mq`
    pub zz: DMatrix<f64>,
    /// `mq × rq`
    pub zu: DMatrix<f64>,
    /// `rq × rq`
    pub uu: DMatrix<f64>,
    /// `m × mq`: `[R_ZZ(t,t-1) … R_ZZ(t,t-q)]`
    pub rhs_zz: DMatrix<f64>,
    /// `m × rq`: `[R_ZU(t,t-1) … R_ZU(t,t-q)]`
    pub rhs_zu: DMatrix<f64>,
}

impl CorrelationSet {
    fn m(&self) -> usize {
        self.rhs_zz.nrows()
    }
    fn r(&self) -> usize {
        self.uu.nrows() / self.q
    }
}

/// Averages outer products over the rollouts of `batch` (measured outputs,
/// commanded inputs).
pub fn sample_correlations(batch: &RolloutBatch, t: usize, q: usize) -> Result<CorrelationSet> {
    let (m, r) = (batch.m, batch.r);
    let recommended = 100 * (m + r) * q;
    if batch.len() < recommended {
        warn!(
            "{} rollouts for noisy identification at q = {q}; at least {recommended} recommended",
            batch.len()
        );
    }
    let dm = assemble(batch, t, q)?;
    let n = batch.len() as f64;
    let xx = symmetrize(&(&dm.matrix * dm.matrix.transpose() / n));
    let zx = &dm.rhs * dm.matrix.transpose() / n;
    let (mq, rq) = (m * q, r * q);
    Ok(CorrelationSet {
        t,
        q,
        samples: batch.len(),
        zz: xx.view((0, 0), (mq, mq)).into_owned(),
        zu: xx.view((0, mq), (mq, rq)).into_owned(),
        uu: xx.view((mq, mq), (rq, rq)).into_owned(),
        rhs_zz: zx.columns(0, mq).into_owned(),
        rhs_zu: zx.columns(mq, rq).into_owned(),
    })
}

fn block_diag(block: &DMatrix<f64>, count: usize) -> DMatrix<f64> {
    let k = block.nrows();
    let mut out = DMatrix::zeros(k * count, k * count);
    for i in 0..count {
        out.view_mut((i * k, i * k), (k, k)).copy_from(block);
    }
    out
}

/// `X·S⁻¹` for symmetric positive definite `S`.
fn right_solve(x: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = s.clone().cholesky().ok_or(Error::SingularExcitation)?;
    Ok(chol.solve(&x.transpose()).transpose())
}

/// Removes the noise contributions from the sample correlations:
/// `R_ŨŨ = R_UU + I⊗Q`, `R_ZŨ = R_ZU R_UU⁻¹ (R_UU + I⊗Q)`, and `I⊗R` is
/// subtracted from the output block. The right-hand sides receive the
/// matching input correction; `R_ZZ(t,t-l)` is unaffected for `l ≥ 1`.
pub fn correct_correlations(c: &CorrelationSet, noise: &NoiseSpec) -> Result<CorrelationSet> {
    let (m, r, q) = (c.m(), c.r(), c.q);
    if noise.process().nrows() != r || noise.measurement().nrows() != m {
        return Err(Error::Dimension("noise covariances do not match the correlation blocks".into()));
    }
    let mut out = c.clone();
    out.zz -= block_diag(noise.measurement(), q);
    let qn = noise.process();
    if qn.iter().any(|&x| x != 0.0) {
        let iq = block_diag(qn, q);
        out.zu += right_solve(&c.zu, &c.uu)? * &iq;
        out.uu += &iq;
        for l in 0..q {
            let diag = c.uu.view((l * r, l * r), (r, r)).into_owned();
            let block = c.rhs_zu.columns(l * r, r).into_owned();
            let corr = right_solve(&block, &diag)? * qn;
            let mut target = out.rhs_zu.columns_mut(l * r, r);
            target += corr;
        }
    }
    Ok(out)
}

/// Solves `[ᾱ β̄]·M = [R_ZZ(t,·) R_ZU(t,·)]` with the moment matrix
/// `M = [[R_ZZ, R_ZU], [R_ZUᵀ, R_UU]]`, truncating singular values of `M`
/// below `tol·σ₁`.
pub fn solve_normal_equations(c: &CorrelationSet, tol: f64) -> Result<ArmaCoefficients> {
    let (m, q) = (c.m(), c.q);
    let (mq, rq) = (m * q, c.r() * q);
    let mut moment = DMatrix::zeros(mq + rq, mq + rq);
    moment.view_mut((0, 0), (mq, mq)).copy_from(&c.zz);
    moment.view_mut((0, mq), (mq, rq)).copy_from(&c.zu);
    moment.view_mut((mq, 0), (rq, mq)).copy_from(&c.zu.transpose());
    moment.view_mut((mq, mq), (rq, rq)).copy_from(&c.uu);
    let moment = symmetrize(&moment);
    let eig = moment.clone().symmetric_eigen();
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x.abs())));
    if lo < -tol * hi {
        warn!("corrected moment matrix at t = {} is indefinite (min eigenvalue {lo:.3e})", c.t);
    }
    let pinv = truncated_pinv(&moment, tol)?;
    let rank = crate::numerics::matrix_rank(&moment, tol)?;
    let rhs = crate::numerics::hstack(&[c.rhs_zz.clone(), c.rhs_zu.clone()]);
    let k = rhs * pinv;
    Ok(ArmaCoefficients {
        t: c.t,
        q,
        alpha: k.columns(0, mq).into_owned(),
        beta: k.columns(mq, rq).into_owned(),
        residual_norm: 0.0,
        rank_used: rank,
    })
}

fn with_residual(mut coeffs: ArmaCoefficients, batch: &RolloutBatch) -> Result<ArmaCoefficients> {
    let dm = assemble(batch, coeffs.t, coeffs.q)?;
    coeffs.residual_norm = (&dm.rhs - coeffs.stacked() * &dm.matrix).norm();
    Ok(coeffs)
}

/// Noise-corrected coefficients at step `t`. `residual_norm` is measured on
/// the noisy data and is therefore not expected to vanish.
pub fn fit_arma_noisy(
    batch: &RolloutBatch,
    t: usize,
    q: usize,
    noise: &NoiseSpec,
    tol: f64,
) -> Result<ArmaCoefficients> {
    let corrected = correct_correlations(&sample_correlations(batch, t, q)?, noise)?;
    with_residual(solve_normal_equations(&corrected, tol)?, batch)
}

/// Plain normal-equation estimate from the same correlations, for comparison.
pub fn fit_arma_uncorrected(batch: &RolloutBatch, t: usize, q: usize, tol: f64) -> Result<ArmaCoefficients> {
    with_residual(solve_normal_equations(&sample_correlations(batch, t, q)?, tol)?, batch)
}

pub fn fit_all_noisy(batch: &RolloutBatch, q: usize, noise: &NoiseSpec, tol: f64) -> Result<TvArmaModel> {
    let coefficients = (q..=batch.horizon)
        .map(|t| fit_arma_noisy(batch, t, q, noise, tol))
        .collect::<Result<Vec<_>>>()?;
    TvArmaModel::new(q, batch.m, batch.r, batch.horizon, coefficients)
}
