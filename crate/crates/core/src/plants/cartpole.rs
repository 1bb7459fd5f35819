//! Nonlinear cart-pole used as ground truth for linearized experiments.
//!
//! State `(x, θ, ẋ, θ̇)` with `θ` measured from the hanging-down position;
//! point-mass pole, frictionless, force on the cart. Integrated with one
//! classical RK4 step per sample.

use nalgebra::{DMatrix, DVector};

use super::Rollout;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartPoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub length: f64,
    pub gravity: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self {
            cart_mass: 1.0,
            pole_mass: 0.1,
            length: 0.5,
            gravity: 9.81,
        }
    }
}

impl CartPoleParams {
    pub fn derivative(&self, x: &[f64; 4], force: f64) -> [f64; 4] {
        let (mc, mp, l, g) = (self.cart_mass, self.pole_mass, self.length, self.gravity);
        let (s, c) = x[1].sin_cos();
        let thd = x[3];
        let xdd = (force + mp * s * (g * c + l * thd * thd)) / (mc + mp * s * s);
        let thdd = -(xdd * c + g * s) / l;
        [x[2], thd, xdd, thdd]
    }

    pub fn step(&self, x: &[f64; 4], force: f64, dt: f64) -> [f64; 4] {
        let add = |a: &[f64; 4], k: &[f64; 4], h: f64| std::array::from_fn(|i| a[i] + h * k[i]);
        let k1 = self.derivative(x, force);
        let k2 = self.derivative(&add(x, &k1, dt / 2.0), force);
        let k3 = self.derivative(&add(x, &k2, dt / 2.0), force);
        let k4 = self.derivative(&add(x, &k3, dt), force);
        std::array::from_fn(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
    }

    /// Total mechanical energy, zero potential at the pivot height.
    pub fn energy(&self, x: &[f64; 4]) -> f64 {
        let (mc, mp, l, g) = (self.cart_mass, self.pole_mass, self.length, self.gravity);
        let (xd, thd) = (x[2], x[3]);
        0.5 * (mc + mp) * xd * xd + mp * l * xd * thd * x[1].cos() + 0.5 * mp * l * l * thd * thd
            - mp * g * l * x[1].cos()
    }
}

/// Nominal trajectory: an initial state and the open-loop forces applied.
#[derive(Debug, Clone, PartialEq)]
pub struct CartPoleNominal {
    pub x0: [f64; 4],
    pub inputs: Vec<f64>,
}

impl CartPoleNominal {
    /// Resting at the hanging equilibrium with zero force for `horizon` steps.
    pub fn hanging(horizon: usize) -> Self {
        Self {
            x0: [0.0; 4],
            inputs: vec![0.0; horizon],
        }
    }
}

const FD_STEP: f64 = 1e-6;

type Jacobians = (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>);

/// Central-difference Jacobians of the sampled dynamics along `nominal`.
pub(crate) fn linearize_along(
    params: &CartPoleParams,
    nominal: &CartPoleNominal,
    dt: f64,
) -> Result<Jacobians> {
    if dt <= 0.0 {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let mut a_seq = Vec::with_capacity(nominal.inputs.len());
    let mut b_seq = Vec::with_capacity(nominal.inputs.len());
    let mut x = nominal.x0;
    for &u in &nominal.inputs {
        let mut a = DMatrix::zeros(4, 4);
        for j in 0..4 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += FD_STEP;
            xm[j] -= FD_STEP;
            let (fp, fm) = (params.step(&xp, u, dt), params.step(&xm, u, dt));
            for i in 0..4 {
                a[(i, j)] = (fp[i] - fm[i]) / (2.0 * FD_STEP);
            }
        }
        let (fp, fm) = (params.step(&x, u + FD_STEP, dt), params.step(&x, u - FD_STEP, dt));
        let b = DMatrix::from_fn(4, 1, |i, _| (fp[i] - fm[i]) / (2.0 * FD_STEP));
        a_seq.push(a);
        b_seq.push(b);
        x = params.step(&x, u, dt);
    }
    Ok((a_seq, b_seq))
}

/// Simulates the nonlinear cart-pole; outputs are (cart position, pole angle).
pub fn simulate_cartpole_nonlinear(
    params: &CartPoleParams,
    x0: &[f64; 4],
    inputs: &[f64],
    dt: f64,
) -> Result<Rollout> {
    if dt <= 0.0 {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let mut x = *x0;
    let mut states = vec![DVector::from_column_slice(&x)];
    for &u in inputs {
        x = params.step(&x, u, dt);
        states.push(DVector::from_column_slice(&x));
    }
    let outputs = states
        .iter()
        .map(|s| DVector::from_column_slice(&[s[0], s[1]]))
        .collect();
    Ok(Rollout {
        inputs: inputs.iter().map(|&u| DVector::from_element(1, u)).collect(),
        outputs,
        states,
        process_noise: None,
        measurement_noise: None,
    })
}
