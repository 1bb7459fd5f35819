//! State-space realizations driven by ARMA coefficients.
//!
//! The information state of order `q` at step `t` is
//! `𝒵_t = [z_t; z_{t-1}; …; z_{t-q+1}; u_{t-1}; …; u_{t-q+1}]`, of dimension
//! `mq + r(q-1)`. For `q = 1` the input block is empty and `𝒵_t = z_t`.

use nalgebra::{DMatrix, DVector};

use crate::arma::{predict, ArmaCoefficients, TvArmaModel};
use crate::error::{Error, Result};
use crate::plants::{Rollout, RolloutBatch};
use crate::system::{simulate_model, LinearModel};

pub fn info_state_dim(m: usize, r: usize, q: usize) -> usize {
    m * q + r * q.saturating_sub(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfoState {
    pub t: usize,
    pub q: usize,
    pub data: DVector<f64>,
}

/// Stacks `z_t … z_{t-q+1}` (length `q`) and `u_{t-1} … u_{t-q+1}`
/// (length `q-1`), both newest first.
pub fn info_state_from_history(
    outputs: &[DVector<f64>],
    inputs: &[DVector<f64>],
    t: usize,
) -> Result<InfoState> {
    let q = outputs.len();
    if q == 0 || inputs.len() + 1 != q {
        return Err(Error::Dimension(format!(
            "information state needs q outputs and q-1 inputs, got {} and {}",
            outputs.len(),
            inputs.len()
        )));
    }
    if outputs.iter().any(|z| z.len() != outputs[0].len())
        || inputs.iter().any(|u| u.len() != inputs[0].len())
    {
        return Err(Error::Dimension("history entries have inconsistent lengths".into()));
    }
    let parts: Vec<&DVector<f64>> = outputs.iter().chain(inputs).collect();
    Ok(InfoState { t, q, data: crate::numerics::vcat(&parts) })
}

/// Information state of one rollout at step `t`.
pub fn info_state_at(rollout: &Rollout, t: usize, q: usize) -> Result<InfoState> {
    if q == 0 || q > t + 1 || t >= rollout.outputs.len() {
        return Err(Error::OrderExceedsTime { q, t });
    }
    let zs: Vec<_> = (0..q).map(|k| rollout.outputs[t - k].clone()).collect();
    let us: Vec<_> = (1..q).map(|k| rollout.inputs[t - k].clone()).collect();
    info_state_from_history(&zs, &us, t)
}

/// Time-varying model `𝒵_{t+1} = 𝒜_t 𝒵_t + ℬ_t u_t`, `z_t = [I 0] 𝒵_t`,
/// with transitions defined for `t = q-1 … H-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoStateModel {
    q: usize,
    m: usize,
    r: usize,
    horizon: usize,
    a: Vec<DMatrix<f64>>,
    b: Vec<DMatrix<f64>>,
    c: DMatrix<f64>,
}

fn transition_blocks(coeffs: &ArmaCoefficients, r: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let (q, m) = (coeffs.q, coeffs.m());
    let d = info_state_dim(m, r, q);
    let mut a = DMatrix::zeros(d, d);
    let mut b = DMatrix::zeros(d, r);
    a.view_mut((0, 0), (m, m * q)).copy_from(&coeffs.alpha);
    b.view_mut((0, 0), (m, r)).copy_from(&coeffs.beta.columns(0, r));
    if q > 1 {
        let mq = m * q;
        a.view_mut((0, mq), (m, r * (q - 1)))
            .copy_from(&coeffs.beta.columns(r, r * (q - 1)));
        for k in 1..q {
            a.view_mut((k * m, (k - 1) * m), (m, m)).fill_with_identity();
        }
        for j in 1..q - 1 {
            a.view_mut((mq + j * r, mq + (j - 1) * r), (r, r)).fill_with_identity();
        }
        b.view_mut((mq, 0), (r, r)).fill_with_identity();
    }
    (a, b)
}

impl InfoStateModel {
    /// Builds a model from explicit matrices; `a[k]`, `b[k]` belong to the
    /// transition at `t = q-1+k`. The fixed structure is checked exactly.
    pub fn new(
        q: usize,
        m: usize,
        r: usize,
        horizon: usize,
        a: Vec<DMatrix<f64>>,
        b: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        if q == 0 || horizon < q || a.len() != horizon + 1 - q || b.len() != a.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} transitions for q = {q}, H = {horizon}, got {} and {}",
                (horizon + 1).saturating_sub(q),
                a.len(),
                b.len()
            )));
        }
        let d = info_state_dim(m, r, q);
        let mut c = DMatrix::zeros(m, d);
        c.view_mut((0, 0), (m, m)).fill_with_identity();
        let model = Self { q, m, r, horizon, a, b, c };
        model.verify_structure()?;
        Ok(model)
    }

    /// Checks that every fixed zero and identity entry holds exactly.
    pub fn verify_structure(&self) -> Result<()> {
        let (q, m, r) = (self.q, self.m, self.r);
        let d = info_state_dim(m, r, q);
        for (k, (a, b)) in self.a.iter().zip(&self.b).enumerate() {
            if a.shape() != (d, d) || b.shape() != (d, r) {
                return Err(Error::Dimension(format!("transition {k} has wrong shape")));
            }
            crate::numerics::ensure_finite(a, "information-state A")?;
            crate::numerics::ensure_finite(b, "information-state B")?;
            let coeffs = ArmaCoefficients {
                t: 0,
                q,
                alpha: a.view((0, 0), (m, m * q)).into_owned(),
                beta: crate::numerics::hstack(&[
                    b.view((0, 0), (m, r)).into_owned(),
                    a.view((0, m * q), (m, d - m * q)).into_owned(),
                ]),
                residual_norm: 0.0,
                rank_used: 0,
            };
            let (a_ref, b_ref) = transition_blocks(&coeffs, r);
            if a != &a_ref || b != &b_ref {
                return Err(Error::InvalidArgument(format!(
                    "transition {} breaks the information-state structure",
                    k + q - 1
                )));
            }
        }
        Ok(())
    }

    pub fn q(&self) -> usize {
        self.q
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn r(&self) -> usize {
        self.r
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn a_seq(&self) -> &[DMatrix<f64>] {
        &self.a
    }
    pub fn b_seq(&self) -> &[DMatrix<f64>] {
        &self.b
    }
}

impl LinearModel for InfoStateModel {
    fn state_dim(&self) -> usize {
        info_state_dim(self.m, self.r, self.q)
    }
    fn input_dim(&self) -> usize {
        self.r
    }
    fn output_dim(&self) -> usize {
        self.m
    }
    fn transition_steps(&self) -> (usize, Option<usize>) {
        (self.q - 1, Some(self.horizon))
    }
    fn a(&self, t: usize) -> &DMatrix<f64> {
        &self.a[t + 1 - self.q]
    }
    fn b(&self, t: usize) -> &DMatrix<f64> {
        &self.b[t + 1 - self.q]
    }
    fn c(&self, _t: usize) -> &DMatrix<f64> {
        &self.c
    }
}

/// Realizes a fitted model; the transition at `t-1` uses the coefficients at `t`.
pub fn realize_tv(model: &TvArmaModel) -> Result<InfoStateModel> {
    let (a, b): (Vec<_>, Vec<_>) = model
        .coefficients
        .iter()
        .map(|c| transition_blocks(c, model.r))
        .unzip();
    InfoStateModel::new(model.q, model.m, model.r, model.horizon, a, b)
}

/// Simulates from `init` (at step `init.t`) and returns `z_{t+1} …`.
pub fn simulate_info_state(
    model: &InfoStateModel,
    init: &InfoState,
    inputs: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    if init.q != model.q {
        return Err(Error::Dimension(format!("initial state has order {}, model has {}", init.q, model.q)));
    }
    simulate_model(model, init.t, &init.data, inputs)
}

/// Observer-canonical realization of time-invariant coefficients, state
/// dimension `mq`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiCanonicalModel {
    pub coefficients: ArmaCoefficients,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
}

pub fn realize_lti_canonical(coeffs: &ArmaCoefficients) -> LtiCanonicalModel {
    let (q, m, r) = (coeffs.q, coeffs.m(), coeffs.r());
    let mut a = DMatrix::zeros(m * q, m * q);
    let mut b = DMatrix::zeros(m * q, r);
    for k in 1..=q {
        a.view_mut(((k - 1) * m, 0), (m, m)).copy_from(&coeffs.alpha_block(k));
        b.view_mut(((k - 1) * m, 0), (m, r)).copy_from(&coeffs.beta_block(k));
        if k < q {
            a.view_mut(((k - 1) * m, k * m), (m, m)).fill_with_identity();
        }
    }
    let mut c = DMatrix::zeros(m, m * q);
    c.view_mut((0, 0), (m, m)).fill_with_identity();
    LtiCanonicalModel { coefficients: coeffs.clone(), a, b, c }
}

impl LtiCanonicalModel {
    pub fn a_matrix(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b_matrix(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c_matrix(&self) -> &DMatrix<f64> {
        &self.c
    }

    /// Canonical state `X̄_t` from `𝒵_t`: `X⁽¹⁾ = z_t` and
    /// `X⁽ᵏ⁾ = Σ_{j≥k} α_j z_{t-(j-k+1)} + β_j u_{t-(j-k+1)}` for `k ≥ 2`.
    pub fn state_from_info_state(&self, zeta: &InfoState) -> Result<DVector<f64>> {
        let c = &self.coefficients;
        let (q, m, r) = (c.q, c.m(), c.r());
        if zeta.q != q || zeta.data.len() != info_state_dim(m, r, q) {
            return Err(Error::Dimension("information state does not match the model order".into()));
        }
        let z = |lag: usize| zeta.data.rows(lag * m, m);
        let u = |lag: usize| zeta.data.rows(m * q + (lag - 1) * r, r);
        let mut x = DVector::zeros(m * q);
        x.rows_mut(0, m).copy_from(&z(0));
        for k in 2..=q {
            let mut blk = DVector::zeros(m);
            for j in k..=q {
                let lag = j - k + 1;
                blk += c.alpha_block(j) * z(lag) + c.beta_block(j) * u(lag);
            }
            x.rows_mut((k - 1) * m, m).copy_from(&blk);
        }
        Ok(x)
    }

    pub fn simulate(&self, init: &InfoState, inputs: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        let x0 = self.state_from_info_state(init)?;
        simulate_model(self, init.t, &x0, inputs)
    }
}

impl LinearModel for LtiCanonicalModel {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    fn output_dim(&self) -> usize {
        self.c.nrows()
    }
    fn transition_steps(&self) -> (usize, Option<usize>) {
        (0, None)
    }
    fn a(&self, _t: usize) -> &DMatrix<f64> {
        &self.a
    }
    fn b(&self, _t: usize) -> &DMatrix<f64> {
        &self.b
    }
    fn c(&self, _t: usize) -> &DMatrix<f64> {
        &self.c
    }
}

/// Open-loop Markov parameters `Y_0, Y_1, …`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovSequence {
    pub blocks: Vec<DMatrix<f64>>,
}

impl MarkovSequence {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }
    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

/// `Y_0 = β_1`, `Y_k = β_{k+1} + Σ_{i=1}^{k} α_i Y_{k-i}` with blocks beyond
/// `q` taken as zero.
pub fn markov_from_arma(coeffs: &ArmaCoefficients, count: usize) -> MarkovSequence {
    let (q, m, r) = (coeffs.q, coeffs.m(), coeffs.r());
    let mut blocks: Vec<DMatrix<f64>> = Vec::with_capacity(count);
    for k in 0..count {
        let mut y = if k < q { coeffs.beta_block(k + 1) } else { DMatrix::zeros(m, r) };
        for i in 1..=k.min(q) {
            y += coeffs.alpha_block(i) * &blocks[k - i];
        }
        blocks.push(y);
    }
    MarkovSequence { blocks }
}

/// Averages the per-step coefficients of a time-invariant fit, provided the
/// average predicts every step of `batch` as well as the per-step fits do
/// (within `tol` relative to the output scale). Returns `None` otherwise.
pub fn average_if_consistent(
    model: &TvArmaModel,
    batch: &RolloutBatch,
    tol: f64,
) -> Result<Option<ArmaCoefficients>> {
    let count = model.coefficients.len() as f64;
    let mut avg = model.coefficients[0].clone();
    avg.alpha = model.coefficients.iter().map(|c| &c.alpha).sum::<DMatrix<f64>>() / count;
    avg.beta = model.coefficients.iter().map(|c| &c.beta).sum::<DMatrix<f64>>() / count;
    avg.residual_norm = 0.0;
    for c in &model.coefficients {
        for ro in &batch.rollouts {
            let (zs, us) = crate::arma::history(&ro.outputs, &ro.inputs, c.t, c.q);
            let scale = ro.outputs[c.t].amax().max(1.0);
            let own = predict(c, &zs, &us)?;
            let shared = predict(&avg, &zs, &us)?;
            if (own - shared).amax() > tol * scale {
                return Ok(None);
            }
        }
    }
    Ok(Some(avg))
}
