use nalgebra::DMatrix;

use super::cartpole::{linearize_along, CartPoleNominal, CartPoleParams};
use super::{observability_matrix, LtvSystem};
use crate::error::{Error, Result};
use crate::numerics::{matrix_rank, DEFAULT_RANK_TOL};

/// ARMA orders used for the benchmark experiments.
pub const SPRING_MASS_Q: usize = 4;
pub const OSCILLATOR_Q: usize = 4;
pub const CARTPOLE_Q: usize = 4;

/// Smallest `q` with `m·q ≥ n`.
pub fn minimal_order(n: usize, m: usize) -> usize {
    n.div_ceil(m)
}

/// First-order plant `x_{t+1} = a x_t + b u_t`, `z_t = c x_t`.
pub fn scalar_plant(a: f64, b: f64, c: f64, horizon: usize) -> Result<LtvSystem> {
    LtvSystem::lti(
        "scalar",
        horizon,
        DMatrix::from_element(1, 1, a),
        DMatrix::from_element(1, 1, b),
        DMatrix::from_element(1, 1, c),
    )
}

/// Discrete double integrator with position output.
pub fn double_integrator(horizon: usize) -> Result<LtvSystem> {
    LtvSystem::lti(
        "double_integrator",
        horizon,
        DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
    )
}

/// Zero-order-hold discretization of `ẋ = A x + B u` via the matrix
/// exponential of the augmented generator.
fn zoh(a_c: &DMatrix<f64>, b_c: &DMatrix<f64>, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, r) = (a_c.nrows(), b_c.ncols());
    let mut aug = DMatrix::zeros(n + r, n + r);
    aug.view_mut((0, 0), (n, n)).copy_from(a_c);
    aug.view_mut((0, n), (n, r)).copy_from(b_c);
    let e = (aug * dt).exp();
    (
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, r)).into_owned(),
    )
}

/// Checks `rank O^q̄_{t-1} = n` at every step where the minimal order fits.
fn check_uniformly_observable(sys: &LtvSystem) -> Result<()> {
    let q = minimal_order(sys.n(), sys.m());
    let last = if sys.is_time_invariant() { q } else { sys.horizon() };
    for t in q..=last {
        let rank = matrix_rank(&observability_matrix(sys, t, q)?, DEFAULT_RANK_TOL)?;
        if rank < sys.n() {
            return Err(Error::NotObservable { t, q, rank, n: sys.n() });
        }
    }
    Ok(())
}

/// Three unit masses in a chain (wall–m1–m2–m3), unit stiffness, damping
/// 0.01, force on mass 1, positions of masses 1 and 3 measured; `dt = 0.1`,
/// `H = 40`. State `(x1, x2, x3, v1, v2, v3)`.
pub fn make_spring_mass_3dof() -> Result<LtvSystem> {
    let (k, d, dt) = (1.0, 0.01, 0.1);
    let stiffness = DMatrix::from_row_slice(3, 3, &[2.0 * k, -k, 0.0, -k, 2.0 * k, -k, 0.0, -k, k]);
    let damping = &stiffness * (d / k);
    let mut a_c = DMatrix::zeros(6, 6);
    a_c.view_mut((0, 3), (3, 3)).copy_from(&DMatrix::identity(3, 3));
    a_c.view_mut((3, 0), (3, 3)).copy_from(&(-stiffness));
    a_c.view_mut((3, 3), (3, 3)).copy_from(&(-damping));
    let mut b_c = DMatrix::zeros(6, 1);
    b_c[(3, 0)] = 1.0;
    let (a, b) = zoh(&a_c, &b_c, dt);
    let mut c = DMatrix::zeros(2, 6);
    c[(0, 0)] = 1.0;
    c[(1, 2)] = 1.0;
    let sys = LtvSystem::lti("spring_mass", 40, a, b, c)?;
    check_uniformly_observable(&sys)?;
    Ok(sys)
}

/// Two unit masses tied to walls and to each other by springs of stiffness
/// `k_t = 1 + 0.5 sin(0.2 t)`; both masses actuated and both positions
/// measured; `dt = 0.1`, `H = 30`. State `(x1, x2, v1, v2)`.
pub fn make_ltv_oscillator() -> Result<LtvSystem> {
    let (dt, horizon) = (0.1, 30);
    let mut a_seq = Vec::with_capacity(horizon);
    let mut b_seq = Vec::with_capacity(horizon);
    let mut b_c = DMatrix::zeros(4, 2);
    b_c.view_mut((2, 0), (2, 2)).copy_from(&DMatrix::identity(2, 2));
    for t in 0..horizon {
        let k = 1.0 + 0.5 * (0.2 * t as f64).sin();
        let mut a_c = DMatrix::zeros(4, 4);
        a_c.view_mut((0, 2), (2, 2)).copy_from(&DMatrix::identity(2, 2));
        a_c.view_mut((2, 0), (2, 2))
            .copy_from(&DMatrix::from_row_slice(2, 2, &[-2.0 * k, k, k, -2.0 * k]));
        let (a, b) = zoh(&a_c, &b_c, dt);
        a_seq.push(a);
        b_seq.push(b);
    }
    let mut c = DMatrix::zeros(2, 4);
    c[(0, 0)] = 1.0;
    c[(1, 1)] = 1.0;
    let sys = LtvSystem::new("oscillator", horizon, a_seq, b_seq, vec![c])?;
    check_uniformly_observable(&sys)?;
    Ok(sys)
}

/// Cart-pole linearized along `nominal` (cart 1 kg, pole 0.1 kg, length
/// 0.5 m), measuring cart position and pole angle.
pub fn make_cartpole_linearized(nominal: &CartPoleNominal, dt: f64) -> Result<LtvSystem> {
    let params = CartPoleParams::default();
    let (a_seq, b_seq) = linearize_along(&params, nominal, dt)?;
    let mut c = DMatrix::zeros(2, 4);
    c[(0, 0)] = 1.0;
    c[(1, 1)] = 1.0;
    let horizon = nominal.inputs.len();
    let sys = LtvSystem::new("cartpole", horizon, a_seq, b_seq, vec![c])?;
    check_uniformly_observable(&sys)?;
    Ok(sys)
}
