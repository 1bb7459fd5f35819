//! Finite-horizon LQR on time-varying linear models and the comparison of
//! information-state feedback against full-state feedback.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{is_symmetric, symmetrize};
use crate::plants::{simulate, LtvSystem};
use crate::realization::{info_state_from_history, InfoStateModel};
use crate::system::LinearModel;

/// Output-weighted quadratic cost
/// `½ Σ (z_tᵀ Q z_t + u_tᵀ R u_t) + ½ z_Hᵀ Q_f z_H`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub qf: DMatrix<f64>,
}

impl QuadraticCost {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, qf: DMatrix<f64>) -> Result<Self> {
        for (what, m) in [("Q", &q), ("R", &r), ("Qf", &qf)] {
            if !m.is_square() || !is_symmetric(m, 1e-12) {
                return Err(Error::InvalidArgument(format!("cost weight {what} must be square and symmetric")));
            }
        }
        if q.shape() != qf.shape() {
            return Err(Error::Dimension("Q and Qf must have the same size".into()));
        }
        if r.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("input weight R".into()));
        }
        Ok(Self { q, r, qf })
    }

    /// `Q = q·I_m`, `R = r·I_r`, `Q_f = qf·I_m`.
    pub fn scaled_identity(m: usize, r: usize, q: f64, rw: f64, qf: f64) -> Result<Self> {
        Self::new(
            DMatrix::identity(m, m) * q,
            DMatrix::identity(r, r) * rw,
            DMatrix::identity(m, m) * qf,
        )
    }

    /// Cost of `outputs = z_{s..=e}` and `inputs = u_{s..e}`.
    pub fn evaluate(&self, outputs: &[DVector<f64>], inputs: &[DVector<f64>]) -> Result<f64> {
        if outputs.len() != inputs.len() + 1 {
            return Err(Error::Dimension(format!(
                "cost needs one more output than inputs, got {} and {}",
                outputs.len(),
                inputs.len()
            )));
        }
        let quad = |w: &DMatrix<f64>, v: &DVector<f64>| v.dot(&(w * v));
        let stage: f64 = outputs.iter().zip(inputs).map(|(z, u)| quad(&self.q, z) + quad(&self.r, u)).sum();
        Ok(0.5 * (stage + quad(&self.qf, outputs.last().expect("nonempty"))))
    }
}

/// Gains `u_t = −K_t s_t` for `t = start..end` and cost-to-go matrices for
/// `t = start..=end`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrPolicy {
    pub start: usize,
    pub end: usize,
    pub gains: Vec<DMatrix<f64>>,
    pub cost_to_go: Vec<DMatrix<f64>>,
}

impl LqrPolicy {
    pub fn gain(&self, t: usize) -> &DMatrix<f64> {
        &self.gains[t - self.start]
    }

    pub fn input(&self, t: usize, state: &DVector<f64>) -> DVector<f64> {
        -(self.gain(t) * state)
    }

    /// Optimal cost from `state` at `start`.
    pub fn predicted_cost(&self, state: &DVector<f64>) -> f64 {
        0.5 * state.dot(&(&self.cost_to_go[0] * state))
    }
}

/// Backward Riccati recursion on `model` over `[start, end]`, with output
/// weights lifted through `C_t`.
pub fn lqr_tv<M: LinearModel + ?Sized>(model: &M, cost: &QuadraticCost, start: usize, end: usize) -> Result<LqrPolicy> {
    if end < start {
        return Err(Error::InvalidArgument(format!("empty control window [{start}, {end}]")));
    }
    model.check_covers(start, end)?;
    if cost.q.nrows() != model.output_dim() || cost.r.nrows() != model.input_dim() {
        return Err(Error::Dimension("cost weights do not match model dimensions".into()));
    }
    let lift = |w: &DMatrix<f64>, t: usize| {
        let c = model.c(t);
        c.transpose() * w * c
    };
    let mut p = symmetrize(&lift(&cost.qf, end));
    let mut gains = Vec::with_capacity(end - start);
    let mut ctg = vec![p.clone()];
    for t in (start..end).rev() {
        let (a, b) = (model.a(t), model.b(t));
        let bt_p = b.transpose() * &p;
        let s = &cost.r + &bt_p * b;
        let chol = s.cholesky().ok_or_else(|| Error::NotPositiveDefinite(format!("R + BᵀPB at t = {t}")))?;
        let k = chol.solve(&(&bt_p * a));
        let acl = a - b * &k;
        p = symmetrize(&(lift(&cost.q, t) + acl.transpose() * &p * &acl + k.transpose() * &cost.r * &k));
        gains.push(k);
        ctg.push(p.clone());
    }
    gains.reverse();
    ctg.reverse();
    Ok(LqrPolicy { start, end, gains, cost_to_go: ctg })
}

/// States, inputs and outputs of one closed-loop run on the true plant,
/// indexed from `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
}

fn step(sys: &LtvSystem, traj: &mut Trajectory, u: DVector<f64>) {
    let t = traj.inputs.len();
    let x = sys.a(t) * &traj.states[t] + sys.b(t) * &u;
    traj.outputs.push(sys.c(t + 1) * &x);
    traj.states.push(x);
    traj.inputs.push(u);
}

fn start_trajectory(sys: &LtvSystem, x0: &DVector<f64>, warmup: &[DVector<f64>]) -> Result<Trajectory> {
    let ro = simulate(sys, x0, warmup, None, &mut crate::plants::rollout_rng(0, 0))?;
    Ok(Trajectory { states: ro.states, inputs: ro.inputs, outputs: ro.outputs })
}

/// Full-state LQR on the plant after the warmup inputs, up to `horizon`.
pub fn run_full_state(
    sys: &LtvSystem,
    cost: &QuadraticCost,
    x0: &DVector<f64>,
    warmup: &[DVector<f64>],
    horizon: usize,
) -> Result<Trajectory> {
    let policy = lqr_tv(sys, cost, warmup.len(), horizon)?;
    let mut traj = start_trajectory(sys, x0, warmup)?;
    for t in warmup.len()..horizon {
        let u = policy.input(t, &traj.states[t]);
        step(sys, &mut traj, u);
    }
    Ok(traj)
}

/// LQR synthesized on the information-state model and applied to the plant,
/// with `𝒵_t` assembled from measured outputs and applied inputs.
pub fn run_info_state(
    sys: &LtvSystem,
    model: &InfoStateModel,
    cost: &QuadraticCost,
    x0: &DVector<f64>,
    warmup: &[DVector<f64>],
    horizon: usize,
) -> Result<Trajectory> {
    let q = model.q();
    if warmup.len() + 1 < q {
        return Err(Error::InvalidArgument(format!("need at least {} warmup inputs for q = {q}", q - 1)));
    }
    let start = warmup.len();
    let policy = lqr_tv(model, cost, start, horizon)?;
    let mut traj = start_trajectory(sys, x0, warmup)?;
    for t in start..horizon {
        let zs: Vec<_> = (0..q).map(|k| traj.outputs[t - k].clone()).collect();
        let us: Vec<_> = (1..q).map(|k| traj.inputs[t - k].clone()).collect();
        let zeta = info_state_from_history(&zs, &us, t)?;
        let u = policy.input(t, &zeta.data);
        step(sys, &mut traj, u);
    }
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceRow {
    pub t: usize,
    pub u_diff_relnorm: f64,
    pub z_diff_relnorm: f64,
}

/// Comparison over `t = q-1 … H`. Differences are normalized by the peak
/// norm of the full-state run's inputs and outputs over the same window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub rows: Vec<EquivalenceRow>,
    pub cost_true: f64,
    pub cost_infostate: f64,
    pub rel_gap: f64,
}

impl EquivalenceReport {
    pub fn max_u_diff(&self) -> f64 {
        self.rows.iter().map(|r| r.u_diff_relnorm).filter(|x| !x.is_nan()).fold(0.0, f64::max)
    }
    pub fn max_z_diff(&self) -> f64 {
        self.rows.iter().map(|r| r.z_diff_relnorm).fold(0.0, f64::max)
    }
}

fn relative(diff: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// Runs full-state LQR on the plant and information-state LQR on the
/// realized model from the same initial condition and warmup inputs
/// (`q - 1` of them).
pub fn run_equivalence(
    sys: &LtvSystem,
    model: &InfoStateModel,
    cost: &QuadraticCost,
    x0: &DVector<f64>,
    warmup: &[DVector<f64>],
    horizon: usize,
) -> Result<EquivalenceReport> {
    let q = model.q();
    if warmup.len() + 1 != q {
        return Err(Error::InvalidArgument(format!("expected {} warmup inputs, got {}", q - 1, warmup.len())));
    }
    if model.horizon() < horizon {
        return Err(Error::TimeOutOfRange { t: horizon, start: q - 1, end: model.horizon() });
    }
    let full = run_full_state(sys, cost, x0, warmup, horizon)?;
    let info = run_info_state(sys, model, cost, x0, warmup, horizon)?;
    let s = q - 1;
    let u_scale = full.inputs[s..].iter().map(|u| u.norm()).fold(0.0, f64::max);
    let z_scale = full.outputs[s..].iter().map(|z| z.norm()).fold(0.0, f64::max);
    let rows = (s..=horizon)
        .map(|t| EquivalenceRow {
            t,
            u_diff_relnorm: if t < horizon {
                relative((&full.inputs[t] - &info.inputs[t]).norm(), u_scale)
            } else {
                f64::NAN
            },
            z_diff_relnorm: relative((&full.outputs[t] - &info.outputs[t]).norm(), z_scale),
        })
        .collect();
    let cost_true = cost.evaluate(&full.outputs[s..], &full.inputs[s..])?;
    let cost_infostate = cost.evaluate(&info.outputs[s..], &info.inputs[s..])?;
    Ok(EquivalenceReport {
        rows,
        cost_true,
        cost_infostate,
        rel_gap: relative((cost_infostate - cost_true).abs(), cost_true),
    })
}

/// Total plant cost over `t = 0 … H` for information-state controllers of
/// two orders. `warmup` holds `q_large − 1` inputs; the smaller model uses
/// only the first `q_small − 1` of them.
pub fn compare_q_lengths(
    sys: &LtvSystem,
    small: &InfoStateModel,
    large: &InfoStateModel,
    cost: &QuadraticCost,
    x0: &DVector<f64>,
    warmup: &[DVector<f64>],
    horizon: usize,
) -> Result<(f64, f64)> {
    let (qs, ql) = (small.q(), large.q());
    if qs > ql || warmup.len() + 1 != ql {
        return Err(Error::InvalidArgument(format!(
            "need q_small ≤ q_large and q_large − 1 = {} warmup inputs, got q = ({qs}, {ql}) and {}",
            ql.saturating_sub(1),
            warmup.len()
        )));
    }
    let a = run_info_state(sys, small, cost, x0, &warmup[..qs - 1], horizon)?;
    let b = run_info_state(sys, large, cost, x0, warmup, horizon)?;
    Ok((cost.evaluate(&a.outputs, &a.inputs)?, cost.evaluate(&b.outputs, &b.inputs)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arma::{fit_all, TvArmaModel};
    use crate::plants::{
        double_integrator, generate_batch, make_cartpole_linearized, make_ltv_oscillator,
        make_spring_mass_3dof, rollout_rng, scalar_plant, CartPoleNominal, InitLaw, InputLaw,
    };
    use crate::realization::realize_tv;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn fitted_model(sys: &LtvSystem, q: usize, seed: u64) -> InfoStateModel {
        let b = generate_batch(sys, 100, &InputLaw::Gaussian { sigma: 1.0 }, &InitLaw::Gaussian { sigma: 1.0 }, None, seed).unwrap();
        realize_tv(&fit_all(&b, q, 1e-8).unwrap()).unwrap()
    }

    fn random_vec(n: usize, seed: u64) -> DVector<f64> {
        let mut rng = rollout_rng(seed, 0);
        DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn zero_weights_give_zero_gains() {
        let di = double_integrator(10).unwrap();
        let cost = QuadraticCost::scaled_identity(1, 1, 0.0, 1.0, 0.0).unwrap();
        let pol = lqr_tv(&di, &cost, 0, 10).unwrap();
        assert!(pol.gains.iter().all(|k| k.amax() == 0.0));
    }

    #[test]
    fn one_step_riccati_by_hand() {
        let sc = scalar_plant(1.0, 1.0, 1.0, 1).unwrap();
        let cost = QuadraticCost::scaled_identity(1, 1, 0.0, 1.0, 1.0).unwrap();
        let pol = lqr_tv(&sc, &cost, 0, 1).unwrap();
        assert_relative_eq!(pol.gain(0)[(0, 0)], 0.5, epsilon = 1e-15);
        // P_0 = Q + (1 - K)² + K² = 0.5
        assert_relative_eq!(pol.cost_to_go[0][(0, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn invalid_weights_are_rejected() {
        assert!(QuadraticCost::scaled_identity(1, 1, 1.0, 0.0, 1.0).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(QuadraticCost::new(asym, DMatrix::identity(1, 1), DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn double_integrator_regulation_decays() {
        let di = double_integrator(50).unwrap();
        let cost = QuadraticCost::scaled_identity(1, 1, 1.0, 0.1, 1.0).unwrap();
        let policy = lqr_tv(&di, &cost, 0, 50).unwrap();
        let traj = run_full_state(&di, &cost, &DVector::from_column_slice(&[5.0, -1.0]), &[], 50).unwrap();
        let value = |t: usize| traj.states[t].dot(&(&policy.cost_to_go[t] * &traj.states[t]));
        for t in 5..50 {
            assert!(value(t + 1) <= value(t) * (1.0 + 1e-12) + 1e-300, "cost-to-go grew at t = {t}");
        }
        let norms: Vec<f64> = traj.states.iter().map(|x| x.norm()).collect();
        assert!(norms[20] <= 1e-6 * norms[0]);
        assert!(norms[50] <= 1e-12 * norms[0]);
        let predicted = policy.predicted_cost(&traj.states[0]);
        assert_relative_eq!(cost.evaluate(&traj.outputs, &traj.inputs).unwrap(), predicted, max_relative = 1e-10);
    }

    #[test]
    fn cost_to_go_grows_with_horizon() {
        let sm = make_spring_mass_3dof().unwrap().with_horizon(60).unwrap();
        let cost = QuadraticCost::scaled_identity(2, 1, 1.0, 0.1, 1.0).unwrap();
        let x = random_vec(6, 3);
        let mut last = 0.0;
        for h in [1, 2, 5, 10, 20, 40, 60] {
            let j = lqr_tv(&sm, &cost, 0, h).unwrap().predicted_cost(&x);
            assert!(j >= last * (1.0 - 1e-12), "horizon {h}: {j} < {last}");
            last = j;
        }
    }

    #[test]
    fn cost_to_go_is_symmetric_psd() {
        let osc = make_ltv_oscillator().unwrap();
        let cost = QuadraticCost::scaled_identity(2, 2, 1.0, 0.5, 2.0).unwrap();
        for p in &lqr_tv(&osc, &cost, 0, 30).unwrap().cost_to_go {
            assert!(is_symmetric(p, 1e-12));
            let lo = p.clone().symmetric_eigen().eigenvalues.min();
            assert!(lo >= -1e-8 * p.amax().max(1.0));
        }
    }

    #[test]
    fn zero_start_gives_zero_trajectories() {
        let sm = make_spring_mass_3dof().unwrap();
        let model = fitted_model(&sm, 4, 1);
        let cost = QuadraticCost::scaled_identity(2, 1, 1.0, 0.1, 1.0).unwrap();
        let rep = run_equivalence(&sm, &model, &cost, &DVector::zeros(6), &vec![DVector::zeros(1); 3], 40).unwrap();
        assert_eq!((rep.cost_true, rep.cost_infostate, rep.rel_gap), (0.0, 0.0, 0.0));
        assert_eq!(rep.max_u_diff(), 0.0);
    }

    #[test]
    fn equivalence_on_every_plant() {
        let cp = make_cartpole_linearized(&CartPoleNominal::hanging(31), 0.02).unwrap();
        let cases = [
            (make_spring_mass_3dof().unwrap(), 4),
            (make_ltv_oscillator().unwrap(), 4),
            (cp, 4),
            (double_integrator(30).unwrap(), 2),
        ];
        for (k, (sys, q)) in cases.into_iter().enumerate() {
            let model = fitted_model(&sys, q, 20 + k as u64);
            let cost = QuadraticCost::scaled_identity(sys.m(), sys.r(), 1.0, 0.1, 1.0).unwrap();
            let warmup = vec![DVector::zeros(sys.r()); q - 1];
            let rep = run_equivalence(&sys, &model, &cost, &random_vec(sys.n(), k as u64), &warmup, sys.horizon()).unwrap();
            assert!(rep.max_u_diff() <= 1e-7, "{}: u diff {:e}", sys.name(), rep.max_u_diff());
            assert!(rep.rel_gap <= 1e-6, "{}: gap {:e}", sys.name(), rep.rel_gap);
            assert_eq!(rep.rows.len(), sys.horizon() - q + 2);
        }
    }

    #[test]
    fn fitted_and_fundamental_realizations_control_alike() {
        let osc = make_ltv_oscillator().unwrap();
        let fitted = fitted_model(&osc, 4, 5);
        let fund = realize_tv(&TvArmaModel::fundamental(&osc, 4).unwrap()).unwrap();
        let cost = QuadraticCost::scaled_identity(2, 2, 1.0, 0.1, 1.0).unwrap();
        let x0 = random_vec(4, 9);
        let warmup: Vec<_> = (0..3).map(|s| random_vec(2, 100 + s) * 0.1).collect();
        let a = run_info_state(&osc, &fitted, &cost, &x0, &warmup, 30).unwrap();
        let b = run_info_state(&osc, &fund, &cost, &x0, &warmup, 30).unwrap();
        let scale = a.inputs.iter().map(|u| u.norm()).fold(0.0, f64::max);
        for (ua, ub) in a.inputs.iter().zip(&b.inputs) {
            assert!((ua - ub).norm() <= 1e-6 * scale);
        }
    }

    #[test]
    fn shorter_information_state_is_never_worse() {
        let di = double_integrator(30).unwrap();
        let cost = QuadraticCost::scaled_identity(1, 1, 1.0, 0.1, 1.0).unwrap();
        let (m2, m4) = (fitted_model(&di, 2, 1), fitted_model(&di, 4, 2));
        for s in 0..5 {
            let warmup: Vec<_> = (0..3).map(|k| random_vec(1, 50 + 3 * s + k) * 0.5).collect();
            let (j2, j4) = compare_q_lengths(&di, &m2, &m4, &cost, &random_vec(2, s), &warmup, 30).unwrap();
            assert!(j2 <= j4 + 1e-9 * j2.abs());
            let (a, b) = compare_q_lengths(&di, &m2, &m2, &cost, &random_vec(2, s), &warmup[..1], 30).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn window_errors() {
        let sm = make_spring_mass_3dof().unwrap();
        let model = fitted_model(&sm, 4, 3);
        let cost = QuadraticCost::scaled_identity(2, 1, 1.0, 0.1, 1.0).unwrap();
        let w = vec![DVector::zeros(1); 3];
        assert!(matches!(
            run_equivalence(&sm, &model, &cost, &DVector::zeros(6), &w, 41),
            Err(Error::TimeOutOfRange { .. })
        ));
        assert!(run_equivalence(&sm, &model, &cost, &DVector::zeros(6), &w[..2], 40).is_err());
    }
}
