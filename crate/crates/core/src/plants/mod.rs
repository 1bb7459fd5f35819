//! Benchmark plants, rollout simulation and ground-truth oracles.
//!
//! Rollout convention: a rollout of length `L` holds inputs `u_0 … u_{L-1}`
//! and outputs `z_0 … z_L`, where `z_t = C_t x_t (+ ν_t)` uses the state at
//! the same step.

mod builtin;
mod cartpole;
mod oracles;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::{is_symmetric, psd_factor};
use crate::system::LinearModel;

pub use builtin::{
    double_integrator, make_cartpole_linearized, make_ltv_oscillator, make_spring_mass_3dof,
    minimal_order, scalar_plant, CARTPOLE_Q, OSCILLATOR_Q, SPRING_MASS_Q,
};
pub use cartpole::{simulate_cartpole_nonlinear, CartPoleNominal, CartPoleParams};
pub use oracles::{
    forced_response_matrix, observability_matrix, state_transform, transition, true_markov,
};

/// Time-indexed `(A_t, B_t, C_t)` over a horizon `H`.
///
/// `A` and `B` hold either `H` matrices or a single one broadcast over time;
/// `C` holds either `H + 1` matrices (outputs are recorded at `t = 0 … H`) or
/// a single one. A plant whose three sequences all have length one is
/// time-invariant and may be evaluated at any step.
#[derive(Debug, Clone, PartialEq)]
pub struct LtvSystem {
    name: String,
    horizon: usize,
    a: Vec<DMatrix<f64>>,
    b: Vec<DMatrix<f64>>,
    c: Vec<DMatrix<f64>>,
}

impl LtvSystem {
    pub fn new(
        name: impl Into<String>,
        horizon: usize,
        a: Vec<DMatrix<f64>>,
        b: Vec<DMatrix<f64>>,
        c: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let check_len = |what: &str, len: usize, full: usize| {
            if len == 1 || len == full {
                Ok(())
            } else {
                Err(Error::Dimension(format!(
                    "{what} sequence has length {len}; expected 1 or {full}"
                )))
            }
        };
        check_len("A", a.len(), horizon)?;
        check_len("B", b.len(), horizon)?;
        check_len("C", c.len(), horizon + 1)?;
        let n = a[0].nrows();
        let r = b[0].ncols();
        let m = c[0].nrows();
        for (t, at) in a.iter().enumerate() {
            if at.shape() != (n, n) {
                return Err(Error::Dimension(format!("A_{t} is {:?}, expected ({n}, {n})", at.shape())));
            }
        }
        for (t, bt) in b.iter().enumerate() {
            if bt.shape() != (n, r) {
                return Err(Error::Dimension(format!("B_{t} is {:?}, expected ({n}, {r})", bt.shape())));
            }
        }
        for (t, ct) in c.iter().enumerate() {
            if ct.shape() != (m, n) {
                return Err(Error::Dimension(format!("C_{t} is {:?}, expected ({m}, {n})", ct.shape())));
            }
        }
        for mat in a.iter().chain(&b).chain(&c) {
            crate::numerics::ensure_finite(mat, "plant matrices")?;
        }
        Ok(Self {
            name: name.into(),
            horizon,
            a,
            b,
            c,
        })
    }

    pub fn lti(
        name: impl Into<String>,
        horizon: usize,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
    ) -> Result<Self> {
        Self::new(name, horizon, vec![a], vec![b], vec![c])
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn n(&self) -> usize {
        self.a[0].nrows()
    }
    pub fn m(&self) -> usize {
        self.c[0].nrows()
    }
    pub fn r(&self) -> usize {
        self.b[0].ncols()
    }

    pub fn is_time_invariant(&self) -> bool {
        self.a.len() == 1 && self.b.len() == 1 && self.c.len() == 1
    }

    /// Same time-invariant plant with a different nominal horizon.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        if !self.is_time_invariant() {
            return Err(Error::NotTimeInvariant);
        }
        Ok(Self {
            horizon,
            ..self.clone()
        })
    }

    pub fn a_seq(&self) -> &[DMatrix<f64>] {
        &self.a
    }
    pub fn b_seq(&self) -> &[DMatrix<f64>] {
        &self.b
    }
    pub fn c_seq(&self) -> &[DMatrix<f64>] {
        &self.c
    }

    fn pick(seq: &[DMatrix<f64>], t: usize) -> &DMatrix<f64> {
        if seq.len() == 1 {
            &seq[0]
        } else {
            &seq[t]
        }
    }
}

impl LinearModel for LtvSystem {
    fn state_dim(&self) -> usize {
        self.n()
    }
    fn input_dim(&self) -> usize {
        self.r()
    }
    fn output_dim(&self) -> usize {
        self.m()
    }
    fn transition_steps(&self) -> (usize, Option<usize>) {
        if self.is_time_invariant() {
            (0, None)
        } else {
            (0, Some(self.horizon))
        }
    }
    fn a(&self, t: usize) -> &DMatrix<f64> {
        Self::pick(&self.a, t)
    }
    fn b(&self, t: usize) -> &DMatrix<f64> {
        Self::pick(&self.b, t)
    }
    fn c(&self, t: usize) -> &DMatrix<f64> {
        Self::pick(&self.c, t)
    }
}

/// Process-noise (`Q`, through the control channel) and measurement-noise
/// (`R`) covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    q_factor: DMatrix<f64>,
    r_factor: DMatrix<f64>,
}

impl NoiseSpec {
    pub fn new(process: DMatrix<f64>, measurement: DMatrix<f64>) -> Result<Self> {
        for (what, m) in [("Q", &process), ("R", &measurement)] {
            if !is_symmetric(m, 1e-12) {
                return Err(Error::InvalidCovariance(format!("{what} is not symmetric")));
            }
        }
        let q_factor = psd_factor(&process, 1e-12)?;
        let r_factor = psd_factor(&measurement, 1e-12)?;
        Ok(Self {
            q: process,
            r: measurement,
            q_factor,
            r_factor,
        })
    }

    pub fn zero(r: usize, m: usize) -> Self {
        Self::new(DMatrix::zeros(r, r), DMatrix::zeros(m, m)).expect("zero covariances are valid")
    }

    pub fn process(&self) -> &DMatrix<f64> {
        &self.q
    }
    pub fn measurement(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn is_zero(&self) -> bool {
        self.q.iter().all(|&x| x == 0.0) && self.r.iter().all(|&x| x == 0.0)
    }

    fn sample(factor: &DMatrix<f64>, rng: &mut impl Rng) -> DVector<f64> {
        let xi = DVector::from_fn(factor.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
        factor * xi
    }
}

/// One experiment: inputs `u_0..u_{L-1}`, outputs `z_0..z_L`, hidden states
/// `x_0..x_L` and, for noisy rollouts, the noise realizations.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub inputs: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
    pub states: Vec<DVector<f64>>,
    pub process_noise: Option<Vec<DVector<f64>>>,
    pub measurement_noise: Option<Vec<DVector<f64>>>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }
    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Simulates `x_{t+1} = A_t x_t + B_t (u_t + ω_t)`, `z_t = C_t x_t + ν_t`.
pub fn simulate(
    sys: &LtvSystem,
    x0: &DVector<f64>,
    inputs: &[DVector<f64>],
    noise: Option<&NoiseSpec>,
    rng: &mut impl Rng,
) -> Result<Rollout> {
    if x0.len() != sys.n() {
        return Err(Error::Dimension(format!(
            "x0 has length {}, plant has n = {}",
            x0.len(),
            sys.n()
        )));
    }
    crate::numerics::ensure_finite(&DMatrix::from_column_slice(x0.len(), 1, x0.as_slice()), "x0")?;
    if !sys.is_time_invariant() && inputs.len() > sys.horizon() {
        return Err(Error::Dimension(format!(
            "{} inputs exceed the horizon {}",
            inputs.len(),
            sys.horizon()
        )));
    }
    if let Some(ns) = noise {
        if ns.q.nrows() != sys.r() || ns.r.nrows() != sys.m() {
            return Err(Error::Dimension("noise covariances do not match plant dims".into()));
        }
    }
    let len = inputs.len();
    let mut states = Vec::with_capacity(len + 1);
    let mut outputs = Vec::with_capacity(len + 1);
    let mut w_seq = noise.map(|_| Vec::with_capacity(len));
    let mut v_seq = noise.map(|_| Vec::with_capacity(len + 1));
    let mut x = x0.clone();
    for t in 0..=len {
        let mut z = sys.c(t) * &x;
        if let (Some(ns), Some(v_seq)) = (noise, v_seq.as_mut()) {
            let v = NoiseSpec::sample(&ns.r_factor, rng);
            z += &v;
            v_seq.push(v);
        }
        outputs.push(z);
        states.push(x.clone());
        if t == len {
            break;
        }
        let u = &inputs[t];
        if u.len() != sys.r() {
            return Err(Error::Dimension(format!(
                "input u_{t} has length {}, plant has r = {}",
                u.len(),
                sys.r()
            )));
        }
        let mut applied = u.clone();
        if let (Some(ns), Some(w_seq)) = (noise, w_seq.as_mut()) {
            let w = NoiseSpec::sample(&ns.q_factor, rng);
            applied += &w;
            w_seq.push(w);
        }
        x = sys.a(t) * &x + sys.b(t) * applied;
    }
    Ok(Rollout {
        inputs: inputs.to_vec(),
        outputs,
        states,
        process_noise: w_seq,
        measurement_noise: v_seq,
    })
}

/// How excitation inputs are chosen for each rollout.
#[derive(Debug, Clone, PartialEq)]
pub enum InputLaw {
    /// i.i.d. `N(0, σ_u² I)` across time and rollouts.
    Gaussian { sigma: f64 },
    /// Explicit sequences: one per rollout, or a single one shared by all.
    Provided(Vec<Vec<DVector<f64>>>),
}

/// How initial states are chosen for each rollout.
#[derive(Debug, Clone, PartialEq)]
pub enum InitLaw {
    Zero,
    Gaussian { sigma: f64 },
    /// One state per rollout, or a single one shared by all.
    Provided(Vec<DVector<f64>>),
}

/// `N` independent rollouts of one plant.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub plant: String,
    pub rollouts: Vec<Rollout>,
    pub m: usize,
    pub r: usize,
    pub horizon: usize,
    pub noise: Option<NoiseSpec>,
    pub seed: u64,
    /// Whether any rollout starts from a non-zero initial state.
    pub nonzero_ic: bool,
}

impl RolloutBatch {
    /// Builds a batch from externally produced rollouts. All rollouts must
    /// span the full horizon.
    pub fn from_rollouts(
        plant: impl Into<String>,
        rollouts: Vec<Rollout>,
        m: usize,
        r: usize,
        seed: u64,
    ) -> Result<Self> {
        let horizon = rollouts.first().map_or(0, |ro| ro.len());
        for (i, ro) in rollouts.iter().enumerate() {
            if ro.len() != horizon || ro.outputs.len() != horizon + 1 {
                return Err(Error::Dimension(format!("rollout {i} does not span horizon {horizon}")));
            }
            if ro.inputs.iter().any(|u| u.len() != r) || ro.outputs.iter().any(|z| z.len() != m) {
                return Err(Error::Dimension(format!("rollout {i} has inconsistent dims")));
            }
        }
        let nonzero_ic = rollouts
            .iter()
            .any(|ro| ro.states.first().is_some_and(|x| x.iter().any(|&v| v != 0.0)));
        Ok(Self {
            plant: plant.into(),
            rollouts,
            m,
            r,
            horizon,
            noise: None,
            seed,
            nonzero_ic,
        })
    }

    pub fn len(&self) -> usize {
        self.rollouts.len()
    }
    pub fn is_empty(&self) -> bool {
        self.rollouts.is_empty()
    }
    pub fn output(&self, i: usize, t: usize) -> &DVector<f64> {
        &self.rollouts[i].outputs[t]
    }
    pub fn input(&self, i: usize, t: usize) -> &DVector<f64> {
        &self.rollouts[i].inputs[t]
    }
}

/// Per-rollout random stream: the batch seed selects the key and the rollout
/// index selects the stream, so results do not depend on generation order.
pub fn rollout_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn generate_batch(
    sys: &LtvSystem,
    n_rollouts: usize,
    input_law: &InputLaw,
    init_law: &InitLaw,
    noise: Option<&NoiseSpec>,
    seed: u64,
) -> Result<RolloutBatch> {
    if n_rollouts == 0 {
        return Err(Error::InvalidArgument("a batch needs at least one rollout".into()));
    }
    let pick = |len: usize, i: usize, what: &str| -> Result<usize> {
        match len {
            1 => Ok(0),
            l if l == n_rollouts => Ok(i),
            l => Err(Error::Dimension(format!(
                "{what}: {l} provided entries for {n_rollouts} rollouts"
            ))),
        }
    };
    let (h, n, r) = (sys.horizon(), sys.n(), sys.r());
    let mut rollouts = Vec::with_capacity(n_rollouts);
    for i in 0..n_rollouts {
        let mut rng = rollout_rng(seed, i);
        let x0 = match init_law {
            InitLaw::Zero => DVector::zeros(n),
            InitLaw::Gaussian { sigma } => {
                DVector::from_fn(n, |_, _| sigma * rng.sample::<f64, _>(StandardNormal))
            }
            InitLaw::Provided(xs) => xs[pick(xs.len(), i, "initial states")?].clone(),
        };
        let inputs = match input_law {
            InputLaw::Gaussian { sigma } => (0..h)
                .map(|_| DVector::from_fn(r, |_, _| sigma * rng.sample::<f64, _>(StandardNormal)))
                .collect(),
            InputLaw::Provided(us) => us[pick(us.len(), i, "input sequences")?].clone(),
        };
        rollouts.push(simulate(sys, &x0, &inputs, noise, &mut rng)?);
    }
    let mut batch = RolloutBatch::from_rollouts(sys.name(), rollouts, sys.m(), r, seed)?;
    batch.noise = noise.cloned();
    Ok(batch)
}
