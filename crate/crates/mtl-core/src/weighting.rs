use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MtlError, Result};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Loss-level weighting methods selectable from the harness config.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightingMethod {
    /// Equal weighting: plain sum of task losses.
    Ew,
    /// Uncertainty weighting with trainable log-sigma parameters.
    Uw,
    /// Analytically optimal uncertainty weighting (sigma_t = L_t, detached).
    Uwo,
    /// Random loss weighting: softmax of normal draws, resampled per step.
    Rlw,
}

impl WeightingMethod {
    pub fn name(&self) -> &'static str {
        match self {
            WeightingMethod::Ew => "ew",
            WeightingMethod::Uw => "uw",
            WeightingMethod::Uwo => "uwo",
            WeightingMethod::Rlw => "rlw",
        }
    }
}

impl FromStr for WeightingMethod {
    type Err = MtlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ew" => Ok(WeightingMethod::Ew),
            "uw" => Ok(WeightingMethod::Uw),
            "uwo" => Ok(WeightingMethod::Uwo),
            "rlw" => Ok(WeightingMethod::Rlw),
            other => Err(MtlError::config(format!("unknown weighting method {other:?}"))),
        }
    }
}

fn check_losses(tape: &Tape, losses: &[NodeId]) -> Result<Vec<f64>> {
    if losses.is_empty() {
        return Err(MtlError::invalid("no task losses"));
    }
    let mut values = Vec::with_capacity(losses.len());
    for (t, &l) in losses.iter().enumerate() {
        let v = tape.value(l).item()?;
        if !v.is_finite() {
            return Err(MtlError::invalid(format!("task {t} loss is non-finite ({v})")));
        }
        values.push(v);
    }
    Ok(values)
}

fn fold_add(tape: &mut Tape, terms: &[NodeId]) -> Result<NodeId> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

/// EW: L = Σ_t L_t.
pub fn equal_weighting(tape: &mut Tape, losses: &[NodeId]) -> Result<NodeId> {
    check_losses(tape, losses)?;
    fold_add(tape, losses)
}

/// The per-task terms w_t·L_t of fixed weighting, unfolded — training loops
/// that feed per-task optimizers need the individual terms.
pub fn fixed_terms(tape: &mut Tape, losses: &[NodeId], weights: &[f64]) -> Result<Vec<NodeId>> {
    check_losses(tape, losses)?;
    if weights.len() != losses.len() {
        return Err(MtlError::shape(
            "fixed_weighting",
            format!("{} weights", losses.len()),
            format!("{}", weights.len()),
        ));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(MtlError::invalid("weights must be finite and >= 0"));
    }
    losses
        .iter()
        .zip(weights)
        .map(|(&l, &w)| {
            let wn = tape.constant(Tensor::scalar(w));
            tape.mul(wn, l)
        })
        .collect()
}

/// Fixed convex/task weights: L = Σ_t w_t L_t. Used by RLW replays and the
/// scaled-loss experiments.
pub fn fixed_weighting(tape: &mut Tape, losses: &[NodeId], weights: &[f64]) -> Result<NodeId> {
    let terms = fixed_terms(tape, losses, weights)?;
    fold_add(tape, &terms)
}

/// Laplace-form uncertainty weighting, parameterized by s_t = log σ_t:
/// L = Σ_t L_t·exp(−s_t) + s_t. The s_t nodes are trainable leaves staged by
/// the caller; gradients flow to them through this expression.
pub fn uncertainty_weighting(
    tape: &mut Tape,
    losses: &[NodeId],
    log_sigmas: &[NodeId],
) -> Result<NodeId> {
    let terms = uncertainty_terms(tape, losses, log_sigmas)?;
    fold_add(tape, &terms)
}

/// The per-task terms L_t·exp(−s_t) + s_t of uncertainty weighting.
pub fn uncertainty_terms(
    tape: &mut Tape,
    losses: &[NodeId],
    log_sigmas: &[NodeId],
) -> Result<Vec<NodeId>> {
    check_losses(tape, losses)?;
    if log_sigmas.len() != losses.len() {
        return Err(MtlError::shape(
            "uncertainty_weighting",
            format!("{} log-sigma params", losses.len()),
            format!("{}", log_sigmas.len()),
        ));
    }
    let mut terms = Vec::with_capacity(losses.len());
    for (&l, &s) in losses.iter().zip(log_sigmas) {
        let zero = tape.constant(Tensor::scalar(0.0));
        let neg_s = tape.sub(zero, s)?;
        let inv_sigma = tape.exp(neg_s)?;
        let weighted = tape.mul(l, inv_sigma)?;
        terms.push(tape.add(weighted, s)?);
    }
    Ok(terms)
}

/// UW-O: L = Σ_t L_t / sg[L_t]; the detached weight is 1/value(L_t), so the
/// aggregated value is exactly T while each task's gradient is scaled by
/// 1/L_t. Losses ≤ 0 are rejected (the Laplace derivation degenerates);
/// losses below 1e-12 are clamped and reported through `warnings`.
pub fn optimal_uncertainty_weighting(
    tape: &mut Tape,
    losses: &[NodeId],
    warnings: &mut Vec<String>,
) -> Result<NodeId> {
    let terms = optimal_uncertainty_terms(tape, losses, warnings)?;
    fold_add(tape, &terms)
}

/// The per-task terms L_t / sg[L_t] of UW-O.
pub fn optimal_uncertainty_terms(
    tape: &mut Tape,
    losses: &[NodeId],
    warnings: &mut Vec<String>,
) -> Result<Vec<NodeId>> {
    let values = check_losses(tape, losses)?;
    let mut terms = Vec::with_capacity(losses.len());
    for (t, (&l, &v)) in losses.iter().zip(&values).enumerate() {
        if v <= 0.0 {
            return Err(MtlError::NonPositiveLoss { value: v });
        }
        let denom = if v < 1e-12 {
            warnings.push(format!("uwo: task {t} loss {v:.3e} clamped to 1e-12"));
            1e-12
        } else {
            v
        };
        let w = tape.constant(Tensor::scalar(1.0 / denom));
        terms.push(tape.mul(l, w)?);
    }
    Ok(terms)
}

/// Draw RLW weights for one step: softmax of T standard-normal draws.
pub fn rlw_weights(n_tasks: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let z: Vec<f64> = (0..n_tasks).map(|_| rng.sample(StandardNormal)).collect();
    let max = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().fold(0.0, |acc, &v| acc + v);
    exps.into_iter().map(|e| e / sum).collect()
}

/// RLW: resample weights, aggregate, and return the drawn weights for the
/// record.
pub fn random_loss_weighting(
    tape: &mut Tape,
    losses: &[NodeId],
    rng: &mut ChaCha8Rng,
) -> Result<(NodeId, Vec<f64>)> {
    check_losses(tape, losses)?;
    let w = rlw_weights(losses.len(), rng);
    let node = fixed_weighting(tape, losses, &w)?;
    Ok((node, w))
}
