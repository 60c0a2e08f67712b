//! Landscape suite: the two-task convergence race.
//!
//! Every configured (method, optimizer, lr) combination starts from the
//! three reference points and runs until it lands within `tolerance` of the
//! average-loss global minimum or the iteration budget runs out. EW sums the
//! task gradients (matching a summed total loss); divergence to non-finite
//! coordinates is a recorded failure, not an error.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::aggregation::{aggregate, AggregationMethod, FlatGrad};
use crate::error::{MtlError, Result};
use crate::harness::config::{ExperimentConfig, MethodSpec};
use crate::landscape::{dist_to_min, grads, STARTS};
use crate::weighting::rlw_weights;

/// One (method, optimizer, lr, start) race outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct LandscapeRecord {
    pub method: String,
    pub optimizer: String,
    pub lr: f64,
    pub start: usize,
    /// First iteration within tolerance (0 = already there), or None.
    pub converged: Option<usize>,
    /// Left the finite range before converging.
    pub failed: bool,
    pub final_point: [f64; 2],
    pub final_dist: f64,
}

/// Subsampled optimization path for plotting.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub method: String,
    pub optimizer: String,
    pub lr: f64,
    pub start: usize,
    pub points: Vec<(usize, [f64; 2])>,
}

#[derive(Clone, Debug, Default)]
pub struct LandscapeReport {
    pub records: Vec<LandscapeRecord>,
    pub trajectories: Vec<Trajectory>,
}

/// Per-iteration update direction for one method on the 2-D landscape. Both
/// tasks share all parameters, so everything is "backbone" to the
/// aggregators.
fn direction(
    method: &MethodSpec,
    g: &[[f64; 2]; 2],
    rng: &mut ChaCha8Rng,
) -> Result<[f64; 2]> {
    let fgs = [
        FlatGrad::backbone(0, g[0].to_vec())?,
        FlatGrad::backbone(1, g[1].to_vec())?,
    ];
    let (agg, weights): (AggregationMethod, Vec<f64>) = match method {
        MethodSpec::Ew => (AggregationMethod::Ew, vec![1.0, 1.0]),
        MethodSpec::Fixed(w) => (AggregationMethod::Ew, w.clone()),
        MethodSpec::Rlw => (AggregationMethod::Ew, rlw_weights(2, rng)),
        MethodSpec::PcGrad => (AggregationMethod::PcGrad, vec![1.0, 1.0]),
        MethodSpec::CaGrad { c } => (AggregationMethod::CaGrad { c: *c }, vec![1.0, 1.0]),
        MethodSpec::Uw | MethodSpec::Uwo => {
            return Err(MtlError::config(format!(
                "method {method} needs positive losses / trainable weights; \
                 not supported on the landscape suite"
            )))
        }
    };
    let out = aggregate(agg, &fgs, &weights, rng)?;
    Ok([out.values[0], out.values[1]])
}

/// Per-task weighted gradients for per-task optimizers (loss-level methods
/// only; enforced by config validation).
fn per_task_directions(
    method: &MethodSpec,
    g: &[[f64; 2]; 2],
    rng: &mut ChaCha8Rng,
) -> Result<[Vec<f64>; 2]> {
    let w = match method {
        MethodSpec::Ew => vec![1.0, 1.0],
        MethodSpec::Fixed(w) => w.clone(),
        MethodSpec::Rlw => rlw_weights(2, rng),
        other => {
            return Err(MtlError::config(format!(
                "method {other} cannot run under a per-task optimizer on the landscape"
            )))
        }
    };
    Ok([
        g[0].iter().map(|&v| w[0] * v).collect(),
        g[1].iter().map(|&v| w[1] * v).collect(),
    ])
}

pub fn run_landscape(cfg: &ExperimentConfig) -> Result<LandscapeReport> {
    let mut report = LandscapeReport::default();
    let base_seed = cfg.seeds[0];
    for method_name in &cfg.methods {
        let method = cfg.parse_method(method_name)?;
        for opt_name in &cfg.optimizers {
            let per_task = opt_name == "pertask-adam";
            for (lr_i, &lr) in cfg.lr_list.iter().enumerate() {
                for (start_i, &start) in STARTS.iter().enumerate() {
                    let mut opt = cfg.optimizer.build_named(opt_name, lr, 2)?;
                    // Distinct deterministic stream per run.
                    let mut rng = ChaCha8Rng::seed_from_u64(
                        base_seed
                            ^ ((lr_i as u64) << 32)
                            ^ ((start_i as u64) << 40)
                            ^ (fxhash(method_name) << 8)
                            ^ fxhash(opt_name),
                    );
                    let mut x = start;
                    let mut points = vec![(0usize, x)];
                    let mut converged = None;
                    let mut failed = false;
                    let mut end_iter = 0usize;
                    if dist_to_min(x) <= cfg.tolerance {
                        converged = Some(0);
                    }
                    if converged.is_none() {
                        for iter in 1..=cfg.budget {
                            end_iter = iter;
                            let g = grads(x);
                            let mut p = vec![x[0], x[1]];
                            if per_task {
                                let d = per_task_directions(&method, &g, &mut rng)?;
                                opt.step_per_task(&mut p, &d)?;
                            } else {
                                let d = direction(&method, &g, &mut rng)?;
                                opt.step(&mut p, &d)?;
                            }
                            x = [p[0], p[1]];
                            if !x[0].is_finite() || !x[1].is_finite() {
                                failed = true;
                                break;
                            }
                            if iter % cfg.traj_every == 0 {
                                points.push((iter, x));
                            }
                            if dist_to_min(x) <= cfg.tolerance {
                                converged = Some(iter);
                                break;
                            }
                        }
                    }
                    // Always include the final position.
                    if points.last().map(|&(i, _)| i) != Some(end_iter) {
                        points.push((end_iter, x));
                    }
                    let final_dist = if failed { f64::INFINITY } else { dist_to_min(x) };
                    report.records.push(LandscapeRecord {
                        method: method_name.clone(),
                        optimizer: opt_name.clone(),
                        lr,
                        start: start_i,
                        converged,
                        failed,
                        final_point: x,
                        final_dist,
                    });
                    report.trajectories.push(Trajectory {
                        method: method_name.clone(),
                        optimizer: opt_name.clone(),
                        lr,
                        start: start_i,
                        points,
                    });
                }
            }
        }
    }
    Ok(report)
}

/// Small deterministic string hash for seed derivation (FNV-1a).
fn fxhash(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x1_0000_01b3);
    }
    h
}
