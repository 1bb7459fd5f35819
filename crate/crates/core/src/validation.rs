//! Prediction error metrics for identified ARMA models.

use nalgebra::DVector;
use serde::Serialize;

use crate::arma::{history, ArmaCoefficients, TvArmaModel};
use crate::error::{Error, Result};
use crate::plants::{Rollout, RolloutBatch};

/// Predictions for `t = q … H` of one rollout. One-step predictions use the
/// measured history; free-run predictions feed back their own outputs after
/// the first `q` measured ones.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub one_step: Vec<DVector<f64>>,
    pub free_run: Vec<DVector<f64>>,
}

fn check_range(model: &TvArmaModel, rollout: &Rollout) -> Result<()> {
    let h = rollout.outputs.len().saturating_sub(1);
    if h > model.horizon || h < model.q {
        return Err(Error::TimeOutOfRange { t: h, start: model.q, end: model.horizon });
    }
    Ok(())
}

pub fn predict_rollout(model: &TvArmaModel, rollout: &Rollout) -> Result<Predictions> {
    check_range(model, rollout)?;
    let q = model.q;
    let h = rollout.outputs.len() - 1;
    let mut one_step = Vec::with_capacity(h + 1 - q);
    let mut free: Vec<DVector<f64>> = rollout.outputs[..q].to_vec();
    for t in q..=h {
        let coeffs = model.at(t).expect("range checked");
        let (zs, us) = history(&rollout.outputs, &rollout.inputs, t, q);
        one_step.push(coeffs.predict(&zs, &us)?);
        let (zf, _) = history(&free, &rollout.inputs, t, q);
        let next = coeffs.predict(&zf, &us)?;
        free.push(next);
    }
    Ok(Predictions { one_step, free_run: free.split_off(q) })
}

/// Largest errors over `t ≥ q`, relative to the largest output norm of the
/// rollout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RolloutErrors {
    pub one_step: f64,
    pub free_run: f64,
}

pub fn rollout_errors(model: &TvArmaModel, rollout: &Rollout) -> Result<RolloutErrors> {
    let p = predict_rollout(model, rollout)?;
    let actual = &rollout.outputs[model.q..];
    let worst = |pred: &[DVector<f64>]| pred.iter().zip(actual).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    let scale = rollout.outputs.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let rel = |e: f64| if scale > 0.0 { e / scale } else { e };
    Ok(RolloutErrors { one_step: rel(worst(&p.one_step)), free_run: rel(worst(&p.free_run)) })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchErrors {
    pub per_rollout: Vec<RolloutErrors>,
    pub max_one_step: f64,
    pub max_free_run: f64,
}

pub fn batch_errors(model: &TvArmaModel, batch: &RolloutBatch) -> Result<BatchErrors> {
    let per_rollout = batch.rollouts.iter().map(|ro| rollout_errors(model, ro)).collect::<Result<Vec<_>>>()?;
    Ok(BatchErrors {
        max_one_step: per_rollout.iter().map(|e| e.one_step).fold(0.0, f64::max),
        max_free_run: per_rollout.iter().map(|e| e.free_run).fold(0.0, f64::max),
        per_rollout,
    })
}

/// Per-step 1-norm of the error averaged over rollouts, divided by the
/// largest per-step mean output 1-norm. Entries for `t < q` are `None`.
pub fn mean_error_curve(model: &TvArmaModel, batch: &RolloutBatch, free_run: bool) -> Result<Vec<Option<f64>>> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let (q, h, m) = (model.q, batch.horizon, batch.m);
    let n = batch.len() as f64;
    let mut mean_err = vec![DVector::zeros(m); h + 1];
    let mut mean_abs = vec![0.0; h + 1];
    for ro in &batch.rollouts {
        let p = predict_rollout(model, ro)?;
        let pred = if free_run { &p.free_run } else { &p.one_step };
        for (k, z) in pred.iter().enumerate() {
            mean_err[q + k] += (z - &ro.outputs[q + k]) / n;
        }
        for (t, z) in ro.outputs.iter().enumerate() {
            mean_abs[t] += z.lp_norm(1) / n;
        }
    }
    let scale = mean_abs.iter().copied().fold(0.0, f64::max);
    Ok((0..=h)
        .map(|t| (t >= q).then(|| mean_err[t].lp_norm(1) / if scale > 0.0 { scale } else { 1.0 }))
        .collect())
}

/// RMS one-step error of `coeffs` at step `coeffs.t` over the rollouts of a
/// noise-free `reference` batch, relative to the RMS output at that step.
pub fn coefficient_error(coeffs: &ArmaCoefficients, reference: &RolloutBatch) -> Result<f64> {
    let t = coeffs.t;
    if t > reference.horizon || t < coeffs.q {
        return Err(Error::TimeOutOfRange { t, start: coeffs.q, end: reference.horizon });
    }
    let (mut err, mut norm) = (0.0, 0.0);
    for ro in &reference.rollouts {
        let (zs, us) = history(&ro.outputs, &ro.inputs, t, coeffs.q);
        err += (coeffs.predict(&zs, &us)? - &ro.outputs[t]).norm_squared();
        norm += ro.outputs[t].norm_squared();
    }
    Ok(if norm > 0.0 { (err / norm).sqrt() } else { err.sqrt() })
}
