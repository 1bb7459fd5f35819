//! Quantities computed from known plant matrices, used as test oracles.

use nalgebra::DMatrix;

use super::LtvSystem;
use crate::error::{Error, Result};
use crate::numerics::{matrix_rank, truncated_pinv, DEFAULT_RANK_TOL};
use crate::plants::LinearModel;

/// State-transition product `A_{to-1} ⋯ A_{from}` (identity when equal).
pub fn transition(sys: &LtvSystem, to: usize, from: usize) -> DMatrix<f64> {
    assert!(to >= from, "transition({to}, {from}) runs backwards");
    let mut phi = DMatrix::identity(sys.n(), sys.n());
    for s in from..to {
        phi = sys.a(s) * phi;
    }
    phi
}

/// `O^q_{t-1}`: block rows `C_{t-1}A_{t-2}⋯A_{t-q}, …, C_{t-q}`, mapping
/// `x_{t-q}` to the stacked outputs `z_{t-1} … z_{t-q}`.
pub fn observability_matrix(sys: &LtvSystem, t: usize, q: usize) -> Result<DMatrix<f64>> {
    if q > t {
        return Err(Error::OrderExceedsTime { q, t });
    }
    let (m, n) = (sys.m(), sys.n());
    let mut o = DMatrix::zeros(m * q, n);
    for k in 0..q {
        let s = t - 1 - k;
        let block = sys.c(s) * transition(sys, s, t - q);
        o.view_mut((k * m, 0), (m, n)).copy_from(&block);
    }
    Ok(o)
}

/// `G^q_{t-1}`: maps the stacked inputs `u_{t-1} … u_{t-q}` to their
/// contribution to `z_{t-1} … z_{t-q}`. Block `(i, j)` (zero-based) is
/// `C_{t-1-i} A_{t-2-i} ⋯ B_{t-1-j}` for `j > i` and zero otherwise.
pub fn forced_response_matrix(sys: &LtvSystem, t: usize, q: usize) -> Result<DMatrix<f64>> {
    if q > t {
        return Err(Error::OrderExceedsTime { q, t });
    }
    let (m, r) = (sys.m(), sys.r());
    let mut g = DMatrix::zeros(m * q, r * q);
    for i in 0..q {
        let s = t - 1 - i;
        for j in (i + 1)..q {
            let src = t - 1 - j;
            let block = sys.c(s) * transition(sys, s, src + 1) * sys.b(src);
            g.view_mut((i * m, j * r), (m, r)).copy_from(&block);
        }
    }
    Ok(g)
}

/// Open-loop Markov parameters `CB, CAB, …, CA^{k-1}B` of an LTI plant.
pub fn true_markov(sys: &LtvSystem, k: usize) -> Result<Vec<DMatrix<f64>>> {
    if !sys.is_time_invariant() {
        return Err(Error::NotTimeInvariant);
    }
    let (a, b, c) = (sys.a(0), sys.b(0), sys.c(0));
    let mut out = Vec::with_capacity(k);
    let mut ak_b = b.clone();
    for _ in 0..k {
        out.push(c * &ak_b);
        ak_b = a * ak_b;
    }
    Ok(out)
}

/// `T_t` with `x_t = T_t 𝒵_t` for the order-`q` information state
/// `𝒵_t = [z_t; …; z_{t-q+1}; u_{t-1}; …; u_{t-q+1}]`.
///
/// The state `x_{t-q+1}` is recovered from the stacked outputs through the
/// pseudoinverse of the observability matrix after removing the forced
/// response, then propagated forward with the intervening inputs.
pub fn state_transform(sys: &LtvSystem, t: usize, q: usize) -> Result<DMatrix<f64>> {
    if q == 0 || q > t + 1 {
        return Err(Error::OrderExceedsTime { q, t });
    }
    let (n, m, r) = (sys.n(), sys.m(), sys.r());
    let o = observability_matrix(sys, t + 1, q)?;
    let rank = matrix_rank(&o, DEFAULT_RANK_TOL)?;
    if rank < n {
        return Err(Error::NotObservable { t, q, rank, n });
    }
    let o_pinv = truncated_pinv(&o, DEFAULT_RANK_TOL)?;
    // the newest input u_t does not reach z_t..z_{t-q+1}: drop its column block
    let g_full = forced_response_matrix(sys, t + 1, q)?;
    let g = g_full.columns(r, r * (q - 1)).into_owned();

    let dim = m * q + r * (q - 1);
    let mut selector = DMatrix::zeros(m * q, dim);
    selector
        .view_mut((0, 0), (m * q, m * q))
        .copy_from(&DMatrix::identity(m * q, m * q));
    selector.view_mut((0, m * q), (m * q, r * (q - 1))).copy_from(&(-g));

    let oldest = t + 1 - q;
    let mut tr = transition(sys, t, oldest) * o_pinv * selector;
    for j in 1..q {
        let conv = transition(sys, t, t - j + 1) * sys.b(t - j);
        let mut view = tr.view_mut((0, m * q + (j - 1) * r), (n, r));
        view += conv;
    }
    Ok(tr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plants::{
        double_integrator, generate_batch, make_spring_mass_3dof, scalar_plant, InitLaw, InputLaw,
    };
    use crate::realization::info_state_from_history;
    use approx::assert_relative_eq;

    fn m(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, data)
    }

    #[test]
    fn observability_examples() {
        let sys = make_spring_mass_3dof().unwrap();
        assert_eq!(observability_matrix(&sys, 5, 1).unwrap(), sys.c(0).clone());

        let di = double_integrator(10).unwrap();
        for t in 2..6 {
            assert_eq!(observability_matrix(&di, t, 2).unwrap(), m(2, 2, &[1.0, 1.0, 1.0, 0.0]));
        }
        assert!(matches!(observability_matrix(&di, 1, 2), Err(Error::OrderExceedsTime { .. })));

        let blind = LtvSystem::lti("blind", 5, DMatrix::identity(2, 2), DMatrix::zeros(2, 1), DMatrix::zeros(1, 2)).unwrap();
        let o = observability_matrix(&blind, 3, 2).unwrap();
        assert_eq!(o, DMatrix::zeros(2, 2));
        assert_eq!(matrix_rank(&o, 1e-8).unwrap(), 0);
    }

    #[test]
    fn forced_response_examples() {
        let sm = make_spring_mass_3dof().unwrap();
        assert_eq!(forced_response_matrix(&sm, 3, 1).unwrap(), DMatrix::zeros(2, 1));
        let di = double_integrator(10).unwrap();
        assert_eq!(forced_response_matrix(&di, 4, 2).unwrap(), DMatrix::zeros(2, 2));
        let sc = scalar_plant(0.5, 1.0, 1.0, 10).unwrap();
        assert_eq!(forced_response_matrix(&sc, 4, 2).unwrap(), m(2, 2, &[0.0, 1.0, 0.0, 0.0]));
    }

    #[test]
    fn markov_examples() {
        let sc = scalar_plant(0.5, 1.0, 1.0, 10).unwrap();
        let y: Vec<f64> = true_markov(&sc, 3).unwrap().iter().map(|y| y[(0, 0)]).collect();
        assert_eq!(y, vec![1.0, 0.5, 0.25]);
        let di = double_integrator(10).unwrap();
        let y: Vec<f64> = true_markov(&di, 5).unwrap().iter().map(|y| y[(0, 0)]).collect();
        assert_eq!(y, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        let no_b = LtvSystem::lti("nob", 4, DMatrix::identity(2, 2), DMatrix::zeros(2, 1), m(1, 2, &[1.0, 0.0])).unwrap();
        assert!(true_markov(&no_b, 4).unwrap().iter().all(|y| y.amax() == 0.0));
        let osc = crate::plants::make_ltv_oscillator().unwrap();
        assert!(matches!(true_markov(&osc, 3), Err(Error::NotTimeInvariant)));
    }

    #[test]
    fn transform_trivial_cases() {
        let sc = scalar_plant(0.7, 2.0, 1.0, 10).unwrap();
        assert_relative_eq!(state_transform(&sc, 3, 1).unwrap(), m(1, 1, &[1.0]), epsilon = 1e-14);

        let ident = LtvSystem::lti("id", 6, DMatrix::identity(2, 2), DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
        let t = state_transform(&ident, 3, 1).unwrap();
        assert_relative_eq!(t, DMatrix::identity(2, 2), epsilon = 1e-14);
    }

    #[test]
    fn transform_rejects_unobservable_plant() {
        let blind = LtvSystem::lti("blind", 5, DMatrix::identity(2, 2), DMatrix::zeros(2, 1), DMatrix::zeros(1, 2)).unwrap();
        assert!(matches!(state_transform(&blind, 3, 2), Err(Error::NotObservable { t: 3, .. })));
    }

    #[test]
    fn transform_recovers_double_integrator_state() {
        let di = double_integrator(12).unwrap();
        let batch = generate_batch(&di, 100, &InputLaw::Gaussian { sigma: 1.0 }, &InitLaw::Gaussian { sigma: 1.0 }, None, 3).unwrap();
        for t in 1..=12 {
            let tr = state_transform(&di, t, 2).unwrap();
            for ro in &batch.rollouts {
                let z = info_state_from_history(&[ro.outputs[t].clone(), ro.outputs[t - 1].clone()], &[ro.inputs[t - 1].clone()], t).unwrap();
                let x = &tr * &z.data;
                assert!((x - &ro.states[t]).amax() <= 1e-10 * ro.states[t].amax().max(1.0));
            }
        }
    }

    #[test]
    fn output_model_identity_on_rollouts() {
        let sys = make_spring_mass_3dof().unwrap();
        let batch = generate_batch(&sys, 10, &InputLaw::Gaussian { sigma: 1.0 }, &InitLaw::Gaussian { sigma: 1.0 }, None, 8).unwrap();
        for q in 1..=5 {
            for t in q..=sys.horizon() {
                let o = observability_matrix(&sys, t, q).unwrap();
                let g = forced_response_matrix(&sys, t, q).unwrap();
                for ro in &batch.rollouts {
                    let zs: Vec<_> = (1..=q).map(|k| ro.outputs[t - k].clone()).collect();
                    let us: Vec<_> = (1..=q).map(|k| ro.inputs[t - k].clone()).collect();
                    let z = crate::numerics::vcat(&zs.iter().collect::<Vec<_>>());
                    let u = crate::numerics::vcat(&us.iter().collect::<Vec<_>>());
                    let pred = &o * &ro.states[t - q] + &g * u;
                    assert!((pred - &z).amax() <= 1e-10 * z.amax().max(1.0));
                }
            }
        }
    }
}
