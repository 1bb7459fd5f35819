//! Time-invariant observer/Kalman-filter identification as a baseline.
//!
//! Observer Markov parameters `Ȳ_k = C Āᵏ [B, −M]` are fitted from data
//! pooled over time and rollouts. The open-loop Markov parameters and the
//! observer-gain Markov parameters follow by recursion, ERA supplies a
//! state-space realization, and the observer gain is recovered by
//! projecting onto the realized observability matrix.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::arma::ArmaCoefficients;
use crate::error::{Error, Result};
use crate::numerics::{
    entrywise_l1, hstack, lstsq_min_norm_detailed, matrix_power, matrix_rank, row_equilibrate,
    spectral_radius, svd, truncated_pinv, vstack, DEFAULT_RANK_TOL,
};
use crate::plants::RolloutBatch;
use crate::realization::MarkovSequence;

/// Fitted observer Markov parameters `Ȳ_0 … Ȳ_{q-1}`, each `m × (r+m)`
/// with the input block first.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverMarkov {
    pub q: usize,
    pub m: usize,
    pub r: usize,
    pub blocks: Vec<DMatrix<f64>>,
    pub residual_norm: f64,
    pub rank_used: usize,
    pub zero_ic: bool,
}

impl ObserverMarkov {
    pub fn new(m: usize, r: usize, blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        if blocks.iter().any(|b| b.shape() != (m, r + m)) {
            return Err(Error::Dimension(format!("observer Markov blocks must be {m}x{}", r + m)));
        }
        Ok(Self { q: blocks.len(), m, r, blocks, residual_norm: 0.0, rank_used: 0, zero_ic: true })
    }

    /// `β_{k+1}`, zero beyond `q`.
    fn input_block(&self, k: usize) -> DMatrix<f64> {
        match self.blocks.get(k) {
            Some(b) => b.columns(0, self.r).into_owned(),
            None => DMatrix::zeros(self.m, self.r),
        }
    }

    /// `α_{k+1}`, zero beyond `q`.
    fn output_block(&self, k: usize) -> DMatrix<f64> {
        match self.blocks.get(k) {
            Some(b) => b.columns(self.r, self.m).into_owned(),
            None => DMatrix::zeros(self.m, self.m),
        }
    }

    /// The same parameters read as ARMA coefficients.
    pub fn to_arma(&self) -> ArmaCoefficients {
        let alpha = hstack(&(0..self.q).map(|k| self.output_block(k)).collect::<Vec<_>>());
        let beta = hstack(&(0..self.q).map(|k| self.input_block(k)).collect::<Vec<_>>());
        ArmaCoefficients {
            t: self.q,
            q: self.q,
            alpha: if self.q == 0 { DMatrix::zeros(self.m, 0) } else { alpha },
            beta: if self.q == 0 { DMatrix::zeros(self.m, 0) } else { beta },
            residual_norm: self.residual_norm,
            rank_used: self.rank_used,
        }
    }
}

/// Least-squares fit of `z_t` on `[u_{t-1}; z_{t-1}; …; u_{t-q}; z_{t-q}]`
/// over every `t ∈ [q, H]` of every rollout.
pub fn fit_observer_markov(batch: &RolloutBatch, q: usize, tol: f64) -> Result<ObserverMarkov> {
    if q == 0 || q > batch.horizon {
        return Err(Error::OrderExceedsTime { q, t: batch.horizon });
    }
    let (m, r) = (batch.m, batch.r);
    let rows = (m + r) * q;
    let cols = batch.len() * (batch.horizon - q + 1);
    if cols <= rows {
        return Err(Error::InsufficientRollouts { required: rows, got: cols });
    }
    let mut v = DMatrix::zeros(rows, cols);
    let mut z = DMatrix::zeros(m, cols);
    let mut col = 0;
    for ro in &batch.rollouts {
        for t in q..=batch.horizon {
            for k in 0..q {
                let off = k * (r + m);
                v.view_mut((off, col), (r, 1)).copy_from(&ro.inputs[t - k - 1]);
                v.view_mut((off + r, col), (m, 1)).copy_from(&ro.outputs[t - k - 1]);
            }
            z.column_mut(col).copy_from(&ro.outputs[t]);
            col += 1;
        }
    }
    let (scaled, norms) = row_equilibrate(&v);
    let mut sol = lstsq_min_norm_detailed(&scaled, &z, tol)?;
    for (j, n) in norms.iter().enumerate() {
        sol.coefficients.column_mut(j).unscale_mut(*n);
    }
    let residual_norm = (&z - &sol.coefficients * &v).norm();
    let blocks = (0..q).map(|k| sol.coefficients.columns(k * (r + m), r + m).into_owned()).collect();
    Ok(ObserverMarkov {
        q,
        m,
        r,
        blocks,
        residual_norm,
        rank_used: sol.rank,
        zero_ic: !batch.nonzero_ic,
    })
}

/// `Y_k = β_{k+1} + Σ_{i=1}^{k} α_i Y_{k-i}` for `k < count`.
pub fn recover_open_loop_markov(om: &ObserverMarkov, count: usize) -> MarkovSequence {
    let mut blocks: Vec<DMatrix<f64>> = Vec::with_capacity(count);
    for k in 0..count {
        let mut y = om.input_block(k);
        for i in 1..=k.min(om.q) {
            y += om.output_block(i - 1) * &blocks[k - i];
        }
        blocks.push(y);
    }
    MarkovSequence { blocks }
}

/// `Y°_k = C Aᵏ M` from `Y°_k = −α_{k+1} + Σ_{i=1}^{k} α_i Y°_{k-i}`.
pub fn observer_gain_markov(om: &ObserverMarkov, count: usize) -> Vec<DMatrix<f64>> {
    let mut blocks: Vec<DMatrix<f64>> = Vec::with_capacity(count);
    for k in 0..count {
        let mut y = -om.output_block(k);
        for i in 1..=k.min(om.q) {
            y += om.output_block(i - 1) * &blocks[k - i];
        }
        blocks.push(y);
    }
    blocks
}

#[derive(Debug, Clone, PartialEq)]
pub struct EraRealization {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub order: usize,
    pub hankel_singular_values: Vec<f64>,
}

impl EraRealization {
    /// `Ĉ Âᵏ B̂` for `k < count`.
    pub fn markov(&self, count: usize) -> MarkovSequence {
        let mut blocks = Vec::with_capacity(count);
        let mut akb = self.b.clone();
        for _ in 0..count {
            blocks.push(&self.c * &akb);
            akb = &self.a * akb;
        }
        MarkovSequence { blocks }
    }

    /// `[Ĉ; ĈÂ; …; ĈÂ^{q-1}]`.
    pub fn observability(&self, q: usize) -> DMatrix<f64> {
        let mut rows = Vec::with_capacity(q);
        let mut ca = self.c.clone();
        for _ in 0..q {
            rows.push(ca.clone());
            ca *= &self.a;
        }
        vstack(&rows)
    }
}

fn hankel(markov: &MarkovSequence, shift: usize, rows: usize, cols: usize) -> DMatrix<f64> {
    let (m, r) = markov.blocks[0].shape();
    let mut h = DMatrix::zeros(rows * m, cols * r);
    for i in 0..rows {
        for j in 0..cols {
            h.view_mut((i * m, j * r), (m, r)).copy_from(&markov.blocks[i + j + shift]);
        }
    }
    h
}

/// Numerical rank of the `rows × cols` block Hankel matrix of `markov`.
pub fn hankel_rank(markov: &MarkovSequence, rows: usize, cols: usize, tol: f64) -> Result<usize> {
    if rows == 0 || cols == 0 || markov.len() + 1 < rows + cols {
        return Err(Error::InvalidArgument(format!("not enough Markov parameters for a {rows}x{cols} block Hankel")));
    }
    matrix_rank(&hankel(markov, 0, rows, cols), tol)
}

/// Eigensystem realization from a `rows × cols` block Hankel matrix of
/// `Y_0, Y_1, …` and its one-step shift.
pub fn era(markov: &MarkovSequence, n_hat: usize, rows: usize, cols: usize) -> Result<EraRealization> {
    if rows == 0 || cols == 0 || markov.len() < rows + cols {
        return Err(Error::InvalidArgument(format!(
            "a {rows}x{cols} block Hankel and its shift need {} Markov parameters, got {}",
            rows + cols,
            markov.len()
        )));
    }
    let (m, r) = markov.blocks[0].shape();
    let h0 = hankel(markov, 0, rows, cols);
    let h1 = hankel(markov, 1, rows, cols);
    let dec = svd(&h0)?;
    let rank = dec.rank(DEFAULT_RANK_TOL);
    let hankel_singular_values: Vec<f64> = dec.singular_values.iter().copied().collect();
    if n_hat == 0 || n_hat > rank {
        return Err(Error::EraOrder { requested: n_hat, rank, singular_values: hankel_singular_values });
    }
    let u = dec.u.columns(0, n_hat);
    let v = dec.v.columns(0, n_hat);
    let sqrt_s: Vec<f64> = dec.singular_values.iter().take(n_hat).map(|s| s.sqrt()).collect();
    let mut u_s = u.into_owned();
    let mut v_s = v.into_owned();
    for (j, s) in sqrt_s.iter().enumerate() {
        u_s.column_mut(j).scale_mut(*s);
        v_s.column_mut(j).scale_mut(*s);
    }
    let mut a = u.transpose() * &h1 * v;
    for i in 0..n_hat {
        for j in 0..n_hat {
            a[(i, j)] /= sqrt_s[i] * sqrt_s[j];
        }
    }
    Ok(EraRealization {
        a,
        b: v_s.transpose().columns(0, r).into_owned(),
        c: u_s.rows(0, m).into_owned(),
        order: n_hat,
        hankel_singular_values,
    })
}

/// `M̂ = 𝒪⁺ [Y°_0; …; Y°_{q-1}]` with `𝒪` built from `(Â, Ĉ)`.
pub fn recover_observer_gain(era: &EraRealization, om: &ObserverMarkov) -> Result<DMatrix<f64>> {
    let obs = era.observability(om.q);
    let rank = matrix_rank(&obs, DEFAULT_RANK_TOL)?;
    if rank < era.order {
        return Err(Error::RankDeficientRealization { rank, order: era.order });
    }
    let y = vstack(&observer_gain_markov(om, om.q));
    Ok(truncated_pinv(&obs, DEFAULT_RANK_TOL)? * y)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MismatchRow {
    pub k: usize,
    pub err_openloop_y: f64,
    pub err_observer_ybar: f64,
}

/// Per-`k` errors for `k = 0 … q`, entrywise 1-norms normalized by the
/// largest reference block.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MismatchReport {
    pub rows: Vec<MismatchRow>,
    /// Frobenius norm of `Ĉ(Â + M̂Ĉ)^q [B̂, −M̂]`.
    pub deadbeat_residual: f64,
    /// Spectral radius of `Â + M̂Ĉ`.
    pub observer_spectral_radius: f64,
}

impl MismatchReport {
    pub fn max_openloop(&self) -> f64 {
        self.rows.iter().map(|r| r.err_openloop_y).fold(0.0, f64::max)
    }
    pub fn max_observer(&self) -> f64 {
        self.rows.iter().map(|r| r.err_observer_ybar).fold(0.0, f64::max)
    }
}

fn normalized(err: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        err / scale
    } else {
        err
    }
}

/// Compares the open-loop Markov parameters recovered from `om` with
/// `truth`, and the observer Markov parameters rebuilt from `(era, m_hat)`
/// with the fitted `Ȳ_k` (taking `Ȳ_q = 0`).
pub fn mismatch_report(
    era: &EraRealization,
    m_hat: &DMatrix<f64>,
    om: &ObserverMarkov,
    truth: &MarkovSequence,
) -> Result<MismatchReport> {
    let q = om.q;
    if truth.len() < q + 1 {
        return Err(Error::InvalidArgument(format!("need {} true Markov parameters, got {}", q + 1, truth.len())));
    }
    if m_hat.shape() != (era.order, om.m) {
        return Err(Error::Dimension(format!("observer gain must be {}x{}", era.order, om.m)));
    }
    let open = recover_open_loop_markov(om, q + 1);
    let a_bar = &era.a + m_hat * &era.c;
    let b_bar = hstack(&[era.b.clone(), -m_hat]);
    let rebuilt = |k: usize| &era.c * matrix_power(&a_bar, k) * &b_bar;
    let open_scale = truth.blocks[..=q].iter().map(entrywise_l1).fold(0.0, f64::max);
    let obs_scale = om.blocks.iter().map(entrywise_l1).fold(0.0, f64::max);
    let rows = (0..=q)
        .map(|k| {
            let fitted = om.blocks.get(k).cloned().unwrap_or_else(|| DMatrix::zeros(om.m, om.r + om.m));
            MismatchRow {
                k,
                err_openloop_y: normalized(entrywise_l1(&(&open.blocks[k] - &truth.blocks[k])), open_scale),
                err_observer_ybar: normalized(entrywise_l1(&(rebuilt(k) - fitted)), obs_scale),
            }
        })
        .collect();
    Ok(MismatchReport {
        rows,
        deadbeat_residual: rebuilt(q).norm(),
        observer_spectral_radius: spectral_radius(&a_bar)?,
    })
}
