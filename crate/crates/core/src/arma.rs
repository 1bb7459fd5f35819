//! Time-varying ARMA identification.
//!
//! All histories are ordered newest first: the data matrix at step `t` stacks
//! `z_{t-1}, …, z_{t-q}` followed by `u_{t-1}, …, u_{t-q}`, and coefficient
//! blocks are laid out the same way, `alpha = [α_{t,t-1} … α_{t,t-q}]`,
//! `beta = [β_{t,t-1} … β_{t,t-q}]`.

use log::{info, warn};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, RankRow, Result};
use crate::numerics::{
    lstsq_min_norm_detailed, matrix_rank, row_equilibrate, truncated_pinv, DEFAULT_RANK_TOL,
};
use crate::plants::{forced_response_matrix, observability_matrix, transition, LtvSystem, RolloutBatch};
use crate::system::LinearModel;

/// Relative residual above which a fit is reported as inexact.
pub const RESIDUAL_WARN_RATIO: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ArmaCoefficients {
    pub t: usize,
    pub q: usize,
    /// `m × mq`
    pub alpha: DMatrix<f64>,
    /// `m × rq`
    pub beta: DMatrix<f64>,
    pub residual_norm: f64,
    pub rank_used: usize,
}

impl ArmaCoefficients {
    pub fn m(&self) -> usize {
        self.alpha.nrows()
    }

    pub fn r(&self) -> usize {
        self.beta.ncols().checked_div(self.q).unwrap_or(0)
    }

    /// `α_{t,t-k}` for `k = 1..=q`.
    pub fn alpha_block(&self, k: usize) -> DMatrix<f64> {
        let m = self.m();
        self.alpha.columns((k - 1) * m, m).into_owned()
    }

    /// `β_{t,t-k}` for `k = 1..=q`.
    pub fn beta_block(&self, k: usize) -> DMatrix<f64> {
        let r = self.r();
        self.beta.columns((k - 1) * r, r).into_owned()
    }

    /// `[ᾱ β̄]` as one `m × (m+r)q` matrix.
    pub fn stacked(&self) -> DMatrix<f64> {
        crate::numerics::hstack(&[self.alpha.clone(), self.beta.clone()])
    }

    /// One-step prediction from newest-first histories.
    pub fn predict(
        &self,
        past_outputs: &[DVector<f64>],
        past_inputs: &[DVector<f64>],
    ) -> Result<DVector<f64>> {
        predict(self, past_outputs, past_inputs)
    }
}

/// `z_t = Σ α_{t,t-k} z_{t-k} + Σ β_{t,t-k} u_{t-k}` with newest-first
/// histories (`past_outputs[0] = z_{t-1}`).
pub fn predict(
    coeffs: &ArmaCoefficients,
    past_outputs: &[DVector<f64>],
    past_inputs: &[DVector<f64>],
) -> Result<DVector<f64>> {
    let (q, m, r) = (coeffs.q, coeffs.m(), coeffs.r());
    if past_outputs.len() != q || past_inputs.len() != q {
        return Err(Error::Dimension(format!(
            "need {q} past outputs and inputs, got {} and {}",
            past_outputs.len(),
            past_inputs.len()
        )));
    }
    let mut z = DVector::zeros(m);
    for k in 0..q {
        if past_outputs[k].len() != m || past_inputs[k].len() != r {
            return Err(Error::Dimension(format!("history entry {k} has wrong length")));
        }
        z += coeffs.alpha.columns(k * m, m) * &past_outputs[k];
        z += coeffs.beta.columns(k * r, r) * &past_inputs[k];
    }
    Ok(z)
}

/// Coefficients for every `t = q ..= H` of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TvArmaModel {
    pub q: usize,
    pub m: usize,
    pub r: usize,
    pub horizon: usize,
    pub coefficients: Vec<ArmaCoefficients>,
}

impl TvArmaModel {
    pub fn new(q: usize, m: usize, r: usize, horizon: usize, coefficients: Vec<ArmaCoefficients>) -> Result<Self> {
        if horizon < q || coefficients.len() != horizon - q + 1 {
            return Err(Error::InvalidArgument(format!(
                "expected coefficients for t = {q}..={horizon}, got {}",
                coefficients.len()
            )));
        }
        for (k, c) in coefficients.iter().enumerate() {
            if c.t != q + k || c.q != q || c.alpha.shape() != (m, m * q) || c.beta.shape() != (m, r * q) {
                return Err(Error::InvalidArgument(format!("coefficient record {k} (t = {}) is inconsistent", c.t)));
            }
        }
        Ok(Self { q, m, r, horizon, coefficients })
    }

    pub fn at(&self, t: usize) -> Option<&ArmaCoefficients> {
        t.checked_sub(self.q).and_then(|k| self.coefficients.get(k))
    }

    /// Fundamental coefficients from known plant matrices for `t = q ..= H`.
    pub fn fundamental(sys: &LtvSystem, q: usize) -> Result<Self> {
        let coefficients = (q..=sys.horizon())
            .map(|t| fundamental_arma(sys, t, q))
            .collect::<Result<Vec<_>>>()?;
        Self::new(q, sys.m(), sys.r(), sys.horizon(), coefficients)
    }
}

/// Stacked past outputs and inputs across rollouts at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    pub t: usize,
    pub q: usize,
    /// `(m+r)q × N`; column `i` is rollout `i`.
    pub matrix: DMatrix<f64>,
    /// `m × N` current outputs `z_t`.
    pub rhs: DMatrix<f64>,
}

fn check_step(batch: &RolloutBatch, t: usize, q: usize) -> Result<()> {
    if q == 0 || q > t {
        return Err(Error::OrderExceedsTime { q, t });
    }
    if t > batch.horizon {
        return Err(Error::TimeOutOfRange { t, start: q, end: batch.horizon });
    }
    Ok(())
}

pub fn assemble(batch: &RolloutBatch, t: usize, q: usize) -> Result<DataMatrix> {
    check_step(batch, t, q)?;
    let (m, r, n) = (batch.m, batch.r, batch.len());
    let rows = (m + r) * q;
    if n <= rows {
        return Err(Error::InsufficientRollouts { required: rows, got: n });
    }
    let mut matrix = DMatrix::zeros(rows, n);
    let mut rhs = DMatrix::zeros(m, n);
    for (i, ro) in batch.rollouts.iter().enumerate() {
        for k in 1..=q {
            matrix
                .view_mut(((k - 1) * m, i), (m, 1))
                .copy_from(&ro.outputs[t - k]);
            matrix
                .view_mut((m * q + (k - 1) * r, i), (r, 1))
                .copy_from(&ro.inputs[t - k]);
        }
        rhs.column_mut(i).copy_from(&ro.outputs[t]);
    }
    Ok(DataMatrix { t, q, matrix, rhs })
}

/// Result of the rank-based order search.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderEstimate {
    /// Smallest `q` with `m·q ≥ n_hat`.
    pub q_star: usize,
    pub n_hat: usize,
    /// Ranks examined, one row per tried `q`.
    pub ranks: Vec<RankRow>,
}

/// Increases `q` until the data matrix at step `t` loses row rank, then reads
/// the state dimension off the rank (`rank = n + r·q`).
pub fn determine_order(batch: &RolloutBatch, t: usize, q_max: usize, tol: f64) -> Result<OrderEstimate> {
    if q_max > t {
        return Err(Error::OrderExceedsTime { q: q_max, t });
    }
    let (m, r) = (batch.m, batch.r);
    let mut ranks = Vec::new();
    for q in 1..=q_max {
        let dm = assemble(batch, t, q)?;
        let rank = matrix_rank(&row_equilibrate(&dm.matrix).0, tol)?;
        let rows = (m + r) * q;
        ranks.push(RankRow { q, rank, rows });
        if rank < rows {
            let n_hat = rank.saturating_sub(r * q);
            let q_star = crate::plants::minimal_order(n_hat, m).max(1);
            return Ok(OrderEstimate { q_star, n_hat, ranks });
        }
    }
    Err(Error::OrderNotSaturated { q_max, ranks })
}

/// Minimum-norm least-squares ARMA coefficients at one step.
///
/// Rows of the data matrix are scaled to unit norm before the truncated SVD,
/// so the rank cut at `tol` does not depend on the relative units of outputs
/// and inputs. The coefficients are mapped back to the original scaling.
pub fn fit_ls(dm: &DataMatrix, tol: f64) -> Result<ArmaCoefficients> {
    let (scaled, norms) = row_equilibrate(&dm.matrix);
    let mut sol = lstsq_min_norm_detailed(&scaled, &dm.rhs, tol)?;
    for (j, n) in norms.iter().enumerate() {
        sol.coefficients.column_mut(j).unscale_mut(*n);
    }
    let residual_norm = (&dm.rhs - &sol.coefficients * &dm.matrix).norm();
    let rhs_norm = dm.rhs.norm();
    if residual_norm > RESIDUAL_WARN_RATIO * rhs_norm {
        warn!(
            "ARMA fit at t = {} (q = {}) leaves relative residual {:.3e}",
            dm.t,
            dm.q,
            residual_norm / rhs_norm
        );
    }
    let m = dm.rhs.nrows();
    let mq = m * dm.q;
    let k = sol.coefficients;
    Ok(ArmaCoefficients {
        t: dm.t,
        q: dm.q,
        alpha: k.columns(0, mq).into_owned(),
        beta: k.columns(mq, k.ncols() - mq).into_owned(),
        residual_norm,
        rank_used: sol.rank,
    })
}

/// Fits every step `t = q ..= H` of the batch.
pub fn fit_all(batch: &RolloutBatch, q: usize, tol: f64) -> Result<TvArmaModel> {
    let mut coefficients = Vec::with_capacity(batch.horizon.saturating_sub(q) + 1);
    for t in q..=batch.horizon {
        let c = fit_ls(&assemble(batch, t, q)?, tol)?;
        if c.rank_used == (batch.m + batch.r) * q {
            info!("data matrix at t = {t} has full row rank; the fit is exact only if m·q ≥ n (q = {q})");
        }
        coefficients.push(c);
    }
    TvArmaModel::new(q, batch.m, batch.r, batch.horizon, coefficients)
}

/// Coefficients obtained from the plant matrices:
/// `ᾱ = C_t A_{t-1}⋯A_{t-q} O⁺`, `β̄ = [C_t B_{t-1}, …, C_t A_{t-1}⋯B_{t-q}] − ᾱ G`.
pub fn fundamental_arma(sys: &LtvSystem, t: usize, q: usize) -> Result<ArmaCoefficients> {
    if q == 0 {
        return Err(Error::OrderExceedsTime { q, t });
    }
    let o = observability_matrix(sys, t, q)?;
    let g = forced_response_matrix(sys, t, q)?;
    let n = sys.n();
    let rank = matrix_rank(&o, DEFAULT_RANK_TOL)?;
    if rank < n {
        return Err(Error::NotObservable { t, q, rank, n });
    }
    let c_t = sys.c(t);
    let alpha = c_t * transition(sys, t, t - q) * truncated_pinv(&o, DEFAULT_RANK_TOL)?;
    let (m, r) = (sys.m(), sys.r());
    let mut markov = DMatrix::zeros(m, r * q);
    for k in 1..=q {
        let block = c_t * transition(sys, t, t - k + 1) * sys.b(t - k);
        markov.view_mut((0, (k - 1) * r), (m, r)).copy_from(&block);
    }
    let beta = markov - &alpha * g;
    Ok(ArmaCoefficients { t, q, alpha, beta, residual_norm: 0.0, rank_used: rank })
}

/// Newest-first history windows ending at step `t` (exclusive) of one rollout.
pub fn history(
    outputs: &[DVector<f64>],
    inputs: &[DVector<f64>],
    t: usize,
    q: usize,
) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let zs = (1..=q).map(|k| outputs[t - k].clone()).collect();
    let us = (1..=q).map(|k| inputs[t - k].clone()).collect();
    (zs, us)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plants::{
        double_integrator, generate_batch, make_ltv_oscillator, scalar_plant, InitLaw, InputLaw,
        Rollout,
    };
    use approx::assert_relative_eq;

    fn gaussian_batch(sys: &LtvSystem, n: usize, seed: u64) -> RolloutBatch {
        generate_batch(sys, n, &InputLaw::Gaussian { sigma: 1.0 }, &InitLaw::Gaussian { sigma: 1.0 }, None, seed).unwrap()
    }

    fn dv(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn zero_batch_gives_zero_data() {
        let sys = make_ltv_oscillator().unwrap();
        let b = generate_batch(&sys, 30, &InputLaw::Gaussian { sigma: 0.0 }, &InitLaw::Zero, None, 0).unwrap();
        let dm = assemble(&b, 4, 2).unwrap();
        assert_eq!(dm.matrix, DMatrix::zeros(8, 30));
        let c = fit_ls(&dm, 1e-8).unwrap();
        assert_eq!(c.alpha.amax(), 0.0);
        assert_eq!(c.beta.amax(), 0.0);
        assert_eq!(c.rank_used, 0);
    }

    #[test]
    fn assemble_layout_for_two_rollouts() {
        let mk = |z0: f64, z1: f64, u0: f64| Rollout {
            inputs: vec![dv(&[u0])],
            outputs: vec![dv(&[z0]), dv(&[z1])],
            states: vec![dv(&[z0]), dv(&[z1])],
            process_noise: None,
            measurement_noise: None,
        };
        let mut b = RolloutBatch::from_rollouts("hand", vec![mk(1.0, 2.0, 3.0), mk(4.0, 5.0, 6.0)], 1, 1, 0).unwrap();
        // N must exceed (m+r)q = 2: add a third column
        b.rollouts.push(mk(7.0, 8.0, 9.0));
        let dm = assemble(&b, 1, 1).unwrap();
        assert_eq!(dm.matrix, DMatrix::from_row_slice(2, 3, &[1.0, 4.0, 7.0, 3.0, 6.0, 9.0]));
        assert_eq!(dm.rhs, DMatrix::from_row_slice(1, 3, &[2.0, 5.0, 8.0]));
        b.rollouts.truncate(2);
        assert!(matches!(assemble(&b, 1, 1), Err(Error::InsufficientRollouts { .. })));
        assert!(matches!(assemble(&b, 1, 2), Err(Error::OrderExceedsTime { .. })));
        assert!(matches!(assemble(&b, 2, 1), Err(Error::TimeOutOfRange { .. })));
    }

    #[test]
    fn oscillator_rank_at_t_equal_q() {
        let sys = make_ltv_oscillator().unwrap();
        let b = gaussian_batch(&sys, 200, 1);
        let dm = assemble(&b, 4, 4).unwrap();
        assert_eq!(matrix_rank(&dm.matrix, 1e-8).unwrap(), 4 + 2 * 4);
    }

    #[test]
    fn order_determination() {
        let sc = scalar_plant(0.5, 1.0, 1.0, 10).unwrap();
        let est = determine_order(&gaussian_batch(&sc, 50, 2), 6, 4, 1e-8).unwrap();
        assert_eq!((est.q_star, est.n_hat), (1, 1));
        assert_eq!(est.ranks, vec![RankRow { q: 1, rank: 2, rows: 2 }, RankRow { q: 2, rank: 3, rows: 4 }]);

        let osc = make_ltv_oscillator().unwrap();
        let est = determine_order(&gaussian_batch(&osc, 200, 3), 10, 6, 1e-8).unwrap();
        assert_eq!((est.q_star, est.n_hat), (2, 4));

        let di = double_integrator(10).unwrap();
        let est = determine_order(&gaussian_batch(&di, 50, 4), 8, 5, 1e-8).unwrap();
        assert_eq!((est.q_star, est.n_hat), (2, 2));

        // q_max too small to see the deficiency
        let err = determine_order(&gaussian_batch(&di, 50, 4), 8, 2, 1e-8).unwrap_err();
        assert!(matches!(err, Error::OrderNotSaturated { q_max: 2, ref ranks } if ranks.len() == 2));
        assert!(matches!(determine_order(&gaussian_batch(&di, 50, 4), 3, 5, 1e-8), Err(Error::OrderExceedsTime { .. })));
    }

    #[test]
    fn fit_scalar_plant() {
        let sc = scalar_plant(0.5, 1.0, 1.0, 6).unwrap();
        let b = gaussian_batch(&sc, 20, 5);
        let c = fit_ls(&assemble(&b, 3, 1).unwrap(), 1e-8).unwrap();
        assert_relative_eq!(c.alpha[(0, 0)], 0.5, epsilon = 1e-10);
        assert_relative_eq!(c.beta[(0, 0)], 1.0, epsilon = 1e-10);
        assert!(c.residual_norm <= 1e-10);
        assert_eq!(c.rank_used, 2);
    }

    #[test]
    fn fit_with_zero_rhs() {
        let dm = DataMatrix { t: 1, q: 1, matrix: DMatrix::from_fn(2, 5, |i, j| (i + j) as f64), rhs: DMatrix::zeros(1, 5) };
        let c = fit_ls(&dm, 1e-8).unwrap();
        assert_eq!(c.stacked(), DMatrix::zeros(1, 2));
    }

    #[test]
    fn fundamental_examples() {
        let sc = scalar_plant(0.5, 1.0, 1.0, 6).unwrap();
        let c = fundamental_arma(&sc, 3, 1).unwrap();
        assert_relative_eq!(c.alpha[(0, 0)], 0.5, epsilon = 1e-14);
        assert_relative_eq!(c.beta[(0, 0)], 1.0, epsilon = 1e-14);

        let di = double_integrator(10).unwrap();
        let c = fundamental_arma(&di, 5, 2).unwrap();
        assert_relative_eq!(c.alpha, DMatrix::from_row_slice(1, 2, &[2.0, -1.0]), epsilon = 1e-12);
        assert_relative_eq!(c.beta, DMatrix::from_row_slice(1, 2, &[0.0, 1.0]), epsilon = 1e-12);

        let no_b = LtvSystem::lti("nob", 6, DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]), DMatrix::zeros(2, 1), DMatrix::from_row_slice(1, 2, &[1.0, 0.0])).unwrap();
        assert_eq!(fundamental_arma(&no_b, 4, 2).unwrap().beta.amax(), 0.0);

        // q = 1 cannot see the double integrator's velocity
        assert!(matches!(fundamental_arma(&di, 4, 1), Err(Error::NotObservable { rank: 1, .. })));
    }

    #[test]
    fn predict_examples() {
        let c = ArmaCoefficients { t: 1, q: 1, alpha: DMatrix::from_element(1, 1, 0.5), beta: DMatrix::from_element(1, 1, 1.0), residual_norm: 0.0, rank_used: 2 };
        assert_eq!(predict(&c, &[dv(&[0.0])], &[dv(&[0.0])]).unwrap(), dv(&[0.0]));
        assert_eq!(predict(&c, &[dv(&[2.0])], &[dv(&[3.0])]).unwrap(), dv(&[4.0]));
        assert!(predict(&c, &[], &[dv(&[3.0])]).is_err());

        let di = double_integrator(20).unwrap();
        let b = gaussian_batch(&di, 5, 9);
        let c = fundamental_arma(&di, 10, 2).unwrap();
        for ro in &b.rollouts {
            let (zs, us) = history(&ro.outputs, &ro.inputs, 10, 2);
            let z = predict(&c, &zs, &us).unwrap();
            assert!((z - &ro.outputs[10]).amax() <= 1e-10 * ro.outputs[10].amax().max(1.0));
        }
    }

    #[test]
    fn fitted_and_fundamental_predict_alike_on_fresh_rollouts() {
        let di = double_integrator(12).unwrap();
        let fit = fit_all(&gaussian_batch(&di, 30, 10), 2, 1e-8).unwrap();
        let fresh = gaussian_batch(&di, 20, 11);
        for t in 2..=12 {
            let fc = fit.at(t).unwrap();
            let fund = fundamental_arma(&di, t, 2).unwrap();
            for ro in &fresh.rollouts {
                let (zs, us) = history(&ro.outputs, &ro.inputs, t, 2);
                let a = predict(fc, &zs, &us).unwrap();
                let b = predict(&fund, &zs, &us).unwrap();
                assert!((a - b).amax() <= 1e-8 * ro.outputs[t].amax().max(1.0));
            }
        }
    }

    #[test]
    fn fit_all_covers_horizon_boundary() {
        let di = double_integrator(2).unwrap();
        let m = fit_all(&gaussian_batch(&di, 20, 12), 2, 1e-8).unwrap();
        assert_eq!(m.coefficients.len(), 1);
        assert_eq!(m.coefficients[0].t, 2);
        assert!(m.at(1).is_none() && m.at(3).is_none());
    }

    #[test]
    fn lti_fit_is_prediction_equivalent_across_time() {
        let sm = crate::plants::make_spring_mass_3dof().unwrap();
        let b = gaussian_batch(&sm, 100, 13);
        let fit = fit_all(&b, 4, 1e-8).unwrap();
        let fresh = gaussian_batch(&sm, 10, 14);
        let reference = fit.at(4).unwrap();
        for t in 4..=sm.horizon() {
            for ro in &fresh.rollouts {
                let (zs, us) = history(&ro.outputs, &ro.inputs, t, 4);
                let a = predict(reference, &zs, &us).unwrap();
                let b = predict(fit.at(t).unwrap(), &zs, &us).unwrap();
                assert!((a - b).amax() <= 1e-6 * ro.outputs[t].amax().max(1.0));
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(12))]

            /// Rank law: rank = min((m+r)q, n+rq) on rich noise-free data.
            #[test]
            fn rank_law_on_oscillator(q in 1usize..=6, seed in 0u64..1000) {
                let osc = make_ltv_oscillator().unwrap();
                let n_roll = 2 * 4 * q + 5;
                let b = gaussian_batch(&osc, n_roll, seed);
                let t = q + (seed as usize % (osc.horizon() - q + 1));
                let rank = matrix_rank(&assemble(&b, t, q).unwrap().matrix, 1e-8).unwrap();
                prop_assert_eq!(rank, (4 * q).min(4 + 2 * q));
            }

            /// The fundamental solution satisfies the LS equation on any batch.
            #[test]
            fn fundamental_solves_normal_equations(seed in 0u64..1000, q in 2usize..=5) {
                let osc = make_ltv_oscillator().unwrap();
                let b = gaussian_batch(&osc, 30, seed);
                for t in q..=osc.horizon() {
                    let dm = assemble(&b, t, q).unwrap();
                    let c = fundamental_arma(&osc, t, q).unwrap();
                    let res = (&dm.rhs - c.stacked() * &dm.matrix).norm();
                    prop_assert!(res <= 1e-8 * dm.rhs.norm());
                }
            }
        }
    }
}
