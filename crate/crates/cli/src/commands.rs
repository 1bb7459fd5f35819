//! One function per subcommand. Each writes its files into `out` and
//! reports whether the configured thresholds were met.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use infostate::arma::{determine_order, fit_all};
use infostate::control::run_equivalence;
use infostate::io::{
    read_arma_model, read_batch, read_info_state_model, write_arma_model, write_batch, write_info_state_model,
    write_markov_csv, write_summary, write_table, Cell,
};
use infostate::noise::{fit_arma_noisy, fit_arma_uncorrected, fit_all_noisy};
use infostate::okid::{era, fit_observer_markov, hankel_rank, mismatch_report, recover_observer_gain, recover_open_loop_markov};
use infostate::plants::{generate_batch, true_markov, InitLaw};
use infostate::realization::realize_tv;
use infostate::validation::{batch_errors, coefficient_error, mean_error_curve};
use infostate::{DVector, MarkovSequence, OrderEstimate, RolloutBatch};
use log::info;
use serde::Serialize;

use crate::config::{ExperimentConfig, Experiment, OrderChoice};

/// Offset between the training seed and the held-out seed.
const HELD_OUT_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

pub struct Outcome {
    pub passed: bool,
    pub message: String,
}

pub struct RunContext<'a> {
    pub cfg: &'a ExperimentConfig,
    pub exp: Experiment,
    pub out: PathBuf,
}

fn held_out_seed(seed: u64) -> u64 {
    seed.wrapping_add(HELD_OUT_SEED_OFFSET)
}

fn training_batch(ctx: &RunContext, init: &InitLaw, noisy: bool) -> Result<RolloutBatch> {
    let noise = if noisy { ctx.exp.noise.as_ref() } else { None };
    Ok(generate_batch(&ctx.exp.sys, ctx.cfg.n_rollouts, &ctx.cfg.input_law(), init, noise, ctx.cfg.seed)?)
}

fn held_out_batch(ctx: &RunContext) -> Result<RolloutBatch> {
    Ok(generate_batch(
        &ctx.exp.sys,
        ctx.cfg.held_out,
        &ctx.cfg.input_law(),
        &InitLaw::Gaussian { sigma: 1.0 },
        None,
        held_out_seed(ctx.cfg.seed),
    )?)
}

fn load_batch(path: &Path) -> Result<RolloutBatch> {
    let meta = path.with_extension("meta.json");
    read_batch(path, &meta).with_context(|| format!("reading batch {} with {}", path.display(), meta.display()))
}

/// Largest `q` the batch supports at step `H`.
fn q_ceiling(batch: &RolloutBatch) -> usize {
    let per = batch.m + batch.r;
    let by_samples = batch.len().saturating_sub(1) / per;
    by_samples.min(batch.horizon).max(1)
}

fn choose_order(ctx: &RunContext, batch: &RolloutBatch) -> Result<(usize, Option<OrderEstimate>)> {
    match ctx.cfg.q {
        OrderChoice::Fixed(q) => Ok((q, None)),
        OrderChoice::Auto(_) => {
            let est = determine_order(batch, batch.horizon, q_ceiling(batch), ctx.cfg.tol)
                .context("automatic order selection")?;
            info!("selected q = {} from rank estimate n_hat = {}", est.q_star, est.n_hat);
            Ok((est.q_star, Some(est)))
        }
    }
}

pub fn simulate(ctx: &RunContext) -> Result<Outcome> {
    let batch = training_batch(ctx, &ctx.cfg.init_law(), true)?;
    write_batch(&batch, &ctx.out, "batch")?;
    Ok(Outcome { passed: true, message: format!("wrote {} rollouts of horizon {}", batch.len(), batch.horizon) })
}

#[derive(Serialize)]
struct StepRecord {
    t: usize,
    residual_norm: f64,
    rank_used: usize,
}

#[derive(Serialize)]
struct RankRecord {
    q: usize,
    rank: usize,
    rows: usize,
}

#[derive(Serialize)]
struct IdentifyReport {
    plant: String,
    q: usize,
    n_hat: Option<usize>,
    rank_table: Vec<RankRecord>,
    noise_corrected: bool,
    steps: Vec<StepRecord>,
    held_out_rollouts: usize,
    held_out_seed: u64,
    max_one_step_error: f64,
    max_free_run_error: f64,
    threshold: f64,
    passed: bool,
}

pub fn identify(ctx: &RunContext, batch_path: Option<&Path>) -> Result<Outcome> {
    let batch = match batch_path {
        Some(p) => load_batch(p)?,
        None => training_batch(ctx, &ctx.cfg.init_law(), true)?,
    };
    ensure!(
        batch.m == ctx.exp.sys.m() && batch.r == ctx.exp.sys.r(),
        "batch dimensions (m = {}, r = {}) do not match the configured plant",
        batch.m,
        batch.r
    );
    let (q, est) = choose_order(ctx, &batch)?;
    let noise = batch.noise.clone().or_else(|| ctx.exp.noise.clone()).filter(|n| !n.is_zero());
    let model = match &noise {
        Some(n) => fit_all_noisy(&batch, q, n, ctx.cfg.tol)?,
        None => fit_all(&batch, q, ctx.cfg.tol)?,
    };
    let info = realize_tv(&model)?;
    write_arma_model(&model, &ctx.out.join("arma_model.json"))?;
    write_info_state_model(&info, &ctx.out.join("info_state_model.json"))?;

    let held = held_out_batch(ctx)?;
    ensure!(held.horizon <= model.horizon, "held-out horizon exceeds the identified model");
    let errs = batch_errors(&model, &held)?;
    let threshold = ctx.cfg.thresholds.prediction;
    let passed = errs.max_one_step <= threshold && errs.max_free_run <= threshold;
    let report = IdentifyReport {
        plant: batch.plant.clone(),
        q,
        n_hat: est.as_ref().map(|e| e.n_hat),
        rank_table: est
            .map(|e| e.ranks.into_iter().map(|r| RankRecord { q: r.q, rank: r.rank, rows: r.rows }).collect())
            .unwrap_or_default(),
        noise_corrected: noise.is_some(),
        steps: model
            .coefficients
            .iter()
            .map(|c| StepRecord { t: c.t, residual_norm: c.residual_norm, rank_used: c.rank_used })
            .collect(),
        held_out_rollouts: held.len(),
        held_out_seed: held.seed,
        max_one_step_error: errs.max_one_step,
        max_free_run_error: errs.max_free_run,
        threshold,
        passed,
    };
    write_summary(&report, &ctx.out.join("identify_report.json"))?;
    Ok(Outcome {
        passed,
        message: format!(
            "q = {q}; held-out one-step {:.3e}, free-run {:.3e} (threshold {threshold:.1e})",
            errs.max_one_step, errs.max_free_run
        ),
    })
}

#[derive(Serialize)]
struct PredictSummary {
    q: usize,
    rollouts: usize,
    max_one_step_error: f64,
    max_free_run_error: f64,
    threshold: f64,
    passed: bool,
}

pub fn predict(ctx: &RunContext, model_path: &Path, batch_path: Option<&Path>) -> Result<Outcome> {
    let model = read_arma_model(model_path).with_context(|| format!("reading model {}", model_path.display()))?;
    let batch = match batch_path {
        Some(p) => load_batch(p)?,
        None => held_out_batch(ctx)?,
    };
    ensure!(
        batch.horizon <= model.horizon && batch.horizon >= model.q,
        "model covers t = {}..={} but the batch runs to t = {}",
        model.q,
        model.horizon,
        batch.horizon
    );
    let curve = mean_error_curve(&model, &batch, true)?;
    write_table(
        &ctx.out.join("prediction.csv"),
        &["t".to_string(), "err".to_string()],
        curve.iter().enumerate().map(|(t, e)| vec![Cell::Int(t), Cell::from(*e)]),
    )?;
    let errs = batch_errors(&model, &batch)?;
    let threshold = ctx.cfg.thresholds.prediction;
    let passed = errs.max_one_step <= threshold && errs.max_free_run <= threshold;
    write_summary(
        &PredictSummary {
            q: model.q,
            rollouts: batch.len(),
            max_one_step_error: errs.max_one_step,
            max_free_run_error: errs.max_free_run,
            threshold,
            passed,
        },
        &ctx.out.join("prediction_summary.json"),
    )?;
    Ok(Outcome {
        passed,
        message: format!("free-run {:.3e}, one-step {:.3e}", errs.max_free_run, errs.max_one_step),
    })
}

#[derive(Serialize)]
struct ControlSummary {
    q: usize,
    horizon: usize,
    x0: Vec<f64>,
    cost_true: f64,
    cost_infostate: f64,
    rel_gap: f64,
    max_u_diff: f64,
    cost_gap_threshold: f64,
    input_diff_threshold: f64,
    passed: bool,
}

pub fn control(ctx: &RunContext, model_path: Option<&Path>) -> Result<Outcome> {
    let sys = &ctx.exp.sys;
    let horizon = sys.horizon();
    let info = match model_path {
        Some(p) => read_info_state_model(p).with_context(|| format!("reading model {}", p.display()))?,
        None => {
            let batch = training_batch(ctx, &ctx.cfg.init_law(), false)?;
            let (q, _) = choose_order(ctx, &batch)?;
            realize_tv(&fit_all(&batch, q, ctx.cfg.tol)?)?
        }
    };
    ensure!(info.m() == sys.m() && info.r() == sys.r(), "model dimensions do not match the plant");
    let q = info.q();
    let x0 = match &ctx.exp.x0 {
        Some(x) => x.clone(),
        None => {
            let draw = generate_batch(sys, 1, &ctx.cfg.input_law(), &InitLaw::Gaussian { sigma: 1.0 }, None, held_out_seed(ctx.cfg.seed) ^ 1)?;
            draw.rollouts[0].states[0].clone()
        }
    };
    let warmup = match &ctx.exp.warmup {
        Some(w) => {
            ensure!(w.len() + 1 == q, "warmup must hold q - 1 = {} inputs, got {}", q - 1, w.len());
            w.clone()
        }
        None => vec![DVector::zeros(sys.r()); q - 1],
    };
    let rep = run_equivalence(sys, &info, &ctx.exp.cost, &x0, &warmup, horizon)?;
    write_table(
        &ctx.out.join("equivalence.csv"),
        &["t", "u_diff_relnorm", "z_diff_relnorm"].map(String::from),
        rep.rows.iter().map(|r| {
            let u = if r.u_diff_relnorm.is_nan() { Cell::Empty } else { Cell::Float(r.u_diff_relnorm) };
            vec![Cell::Int(r.t), u, Cell::Float(r.z_diff_relnorm)]
        }),
    )?;
    let th = &ctx.cfg.thresholds;
    let passed = rep.rel_gap <= th.cost_gap && rep.max_u_diff() <= th.input_diff;
    write_summary(
        &ControlSummary {
            q,
            horizon,
            x0: x0.iter().copied().collect(),
            cost_true: rep.cost_true,
            cost_infostate: rep.cost_infostate,
            rel_gap: rep.rel_gap,
            max_u_diff: rep.max_u_diff(),
            cost_gap_threshold: th.cost_gap,
            input_diff_threshold: th.input_diff,
            passed,
        },
        &ctx.out.join("equivalence_summary.json"),
    )?;
    Ok(Outcome { passed, message: format!("relative cost gap {:.3e}, max input difference {:.3e}", rep.rel_gap, rep.max_u_diff()) })
}

#[derive(Serialize)]
struct OkidSummary {
    q: usize,
    order: usize,
    hankel_singular_values: Vec<f64>,
    max_err_openloop: f64,
    max_err_observer: f64,
    deadbeat_residual: f64,
    observer_spectral_radius: f64,
    threshold: f64,
    passed: bool,
}

pub fn okid(ctx: &RunContext) -> Result<Outcome> {
    let sys = &ctx.exp.sys;
    if !sys.is_time_invariant() {
        bail!("okid needs a time-invariant plant; {} is time-varying", sys.name());
    }
    let batch = training_batch(ctx, &InitLaw::Zero, false)?;
    let (q, _) = choose_order(ctx, &batch)?;
    let om = fit_observer_markov(&batch, q, ctx.cfg.tol)?;
    let blocks = q + 2;
    let open = recover_open_loop_markov(&om, 2 * blocks);
    let order = hankel_rank(&open, blocks, blocks, ctx.cfg.tol)?;
    let realization = era(&open, order, blocks, blocks)?;
    let m_hat = recover_observer_gain(&realization, &om)?;
    let truth = MarkovSequence { blocks: true_markov(sys, 2 * blocks)? };
    let rep = mismatch_report(&realization, &m_hat, &om, &truth)?;
    write_table(
        &ctx.out.join("mismatch.csv"),
        &["k", "err_openloop_Y", "err_observer_Ybar"].map(String::from),
        rep.rows.iter().map(|r| vec![Cell::Int(r.k), Cell::Float(r.err_openloop_y), Cell::Float(r.err_observer_ybar)]),
    )?;
    write_markov_csv(&open, &ctx.out.join("markov.csv"))?;
    let threshold = ctx.cfg.thresholds.openloop_markov;
    let passed = rep.max_openloop() <= threshold;
    write_summary(
        &OkidSummary {
            q,
            order: realization.order,
            hankel_singular_values: realization.hankel_singular_values.clone(),
            max_err_openloop: rep.max_openloop(),
            max_err_observer: rep.max_observer(),
            deadbeat_residual: rep.deadbeat_residual,
            observer_spectral_radius: rep.observer_spectral_radius,
            threshold,
            passed,
        },
        &ctx.out.join("okid_summary.json"),
    )?;
    Ok(Outcome {
        passed,
        message: format!(
            "open-loop Markov error {:.3e}, observer Markov error {:.3e}, deadbeat residual {:.3e}",
            rep.max_openloop(),
            rep.max_observer(),
            rep.deadbeat_residual
        ),
    })
}

#[derive(Serialize)]
struct NoiseSummary {
    q: usize,
    samples: usize,
    mean_rel_error_corrected: f64,
    mean_rel_error_uncorrected: f64,
    passed: bool,
}

pub fn noise_identify(ctx: &RunContext) -> Result<Outcome> {
    let Some(noise) = ctx.exp.noise.clone() else {
        bail!("noise-identify needs noise covariances in the config");
    };
    let batch = training_batch(ctx, &ctx.cfg.init_law(), true)?;
    let reference = held_out_batch(ctx)?;
    let q = match ctx.cfg.q {
        OrderChoice::Fixed(q) => q,
        OrderChoice::Auto(_) => {
            let clean = training_batch(ctx, &ctx.cfg.init_law(), false)?;
            choose_order(ctx, &clean)?.0
        }
    };
    let mut rows = Vec::new();
    let (mut sum_c, mut sum_u) = (0.0, 0.0);
    let mut corrected = Vec::new();
    for t in q..=batch.horizon {
        let c = fit_arma_noisy(&batch, t, q, &noise, ctx.cfg.tol)?;
        let u = fit_arma_uncorrected(&batch, t, q, ctx.cfg.tol)?;
        let (ec, eu) = (coefficient_error(&c, &reference)?, coefficient_error(&u, &reference)?);
        sum_c += ec;
        sum_u += eu;
        rows.push(vec![Cell::Int(t), Cell::Int(batch.len()), Cell::Float(ec), Cell::Float(eu)]);
        corrected.push(c);
    }
    let steps = (batch.horizon + 1 - q) as f64;
    write_table(
        &ctx.out.join("noise_report.csv"),
        &["t", "N", "rel_pred_error_corrected", "rel_pred_error_uncorrected"].map(String::from),
        rows,
    )?;
    let model = infostate::TvArmaModel::new(q, batch.m, batch.r, batch.horizon, corrected)?;
    write_arma_model(&model, &ctx.out.join("arma_model.json"))?;
    let (mc, mu) = (sum_c / steps, sum_u / steps);
    let passed = mc <= mu;
    write_summary(
        &NoiseSummary { q, samples: batch.len(), mean_rel_error_corrected: mc, mean_rel_error_uncorrected: mu, passed },
        &ctx.out.join("noise_summary.json"),
    )?;
    Ok(Outcome { passed, message: format!("mean relative error corrected {mc:.3e}, uncorrected {mu:.3e}") })
}
