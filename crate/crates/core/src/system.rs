//! Common view of time-indexed linear state-space models.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A discrete-time model `s_{t+1} = A_t s_t + B_t u_t`, `y_t = C_t s_t`.
///
/// Implemented by true plants, realized information-state models and the
/// observer-canonical LTI model, so that simulation and LQR synthesis can be
/// written once.
pub trait LinearModel {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    /// Steps `t` for which the transition `t → t+1` is defined: `[start, end)`,
    /// with `end = None` for time-invariant models.
    fn transition_steps(&self) -> (usize, Option<usize>);

    fn a(&self, t: usize) -> &DMatrix<f64>;
    fn b(&self, t: usize) -> &DMatrix<f64>;
    fn c(&self, t: usize) -> &DMatrix<f64>;

    /// Whether transitions `t0 → t0+1 → … → t1` are all defined.
    fn covers(&self, t0: usize, t1: usize) -> bool {
        let (start, end) = self.transition_steps();
        t0 >= start && end.is_none_or(|e| t1 <= e)
    }

    fn check_covers(&self, t0: usize, t1: usize) -> Result<()> {
        if self.covers(t0, t1) {
            return Ok(());
        }
        let (start, end) = self.transition_steps();
        let end = end.unwrap_or(usize::MAX);
        let t = if t0 < start { t0 } else { t1 };
        Err(Error::TimeOutOfRange { t, start, end })
    }
}

/// Propagates `state` at step `t0` through `inputs` and returns the outputs
/// `y_{t0+1} … y_{t0+len}`.
pub fn simulate_model<M: LinearModel + ?Sized>(
    model: &M,
    t0: usize,
    state: &DVector<f64>,
    inputs: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    if state.len() != model.state_dim() {
        return Err(Error::Dimension(format!(
            "initial state has length {}, model state dimension is {}",
            state.len(),
            model.state_dim()
        )));
    }
    model.check_covers(t0, t0 + inputs.len())?;
    let mut s = state.clone();
    let mut out = Vec::with_capacity(inputs.len());
    for (k, u) in inputs.iter().enumerate() {
        if u.len() != model.input_dim() {
            return Err(Error::Dimension(format!(
                "input {k} has length {}, expected {}",
                u.len(),
                model.input_dim()
            )));
        }
        let t = t0 + k;
        s = model.a(t) * &s + model.b(t) * u;
        out.push(model.c(t + 1) * &s);
    }
    Ok(out)
}
