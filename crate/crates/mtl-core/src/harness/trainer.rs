//! The shared training loop behind every network-based suite.
//!
//! One code path covers loss-level weightings (EW/UW/UW-O/RLW/fixed, with or
//! without the per-task optimizer), gradient-level aggregation
//! (PCGrad/CAGrad on the backbone, heads passing through), frozen backbones,
//! extra loss-scale constants, and the UW log-σ parameters riding along at
//! the end of the parameter vector.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::aggregation::{aggregate, FlatGrad};
use crate::data::{Dataset, Splits, TaskTargets};
use crate::error::{MtlError, Result};
use crate::harness::config::{MethodSpec, OptimizerSpec};
use crate::metrics::delta_m;
use crate::net::{HydraNet, HydraSpec};
use crate::tape::{NodeId, ParamId, Tape};
use crate::tensor::Tensor;
use crate::weighting::{
    equal_weighting, fixed_terms, optimal_uncertainty_terms, rlw_weights, uncertainty_terms,
};

/// Everything one training run needs beyond the data.
#[derive(Clone, Debug)]
pub struct TrainSettings {
    pub method: MethodSpec,
    /// Optimizer family to instantiate (e.g. "adam"); hyperparameters come
    /// from `optimizer`.
    pub optimizer_name: String,
    pub optimizer: OptimizerSpec,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Zero the backbone gradient before every step (head-only training).
    pub freeze_backbone: bool,
    /// Constant per-task loss multipliers applied on the tape before the
    /// weighting method (the invariance suite's unit changes).
    pub loss_scales: Option<Vec<f64>>,
    /// Start from these net parameters instead of the seeded init
    /// (fine-tuning a persisted model).
    pub init_params: Option<Vec<f64>>,
    /// Keep per-step loss/gradient/update traces.
    pub record_traces: bool,
}

impl TrainSettings {
    pub fn new(method: MethodSpec, optimizer: OptimizerSpec, lr: f64) -> Self {
        TrainSettings {
            method,
            optimizer_name: optimizer.name.clone(),
            optimizer,
            lr,
            epochs: 100,
            batch_size: usize::MAX,
            seed: 0,
            freeze_backbone: false,
            loss_scales: None,
            init_params: None,
            record_traces: false,
        }
    }
}

/// One optimization step's measurements. `grad_norms`/`update_norms` list the
/// backbone partition first, then each head, of the combined gradient /
/// applied update.
#[derive(Clone, Debug, PartialEq)]
pub struct StepTrace {
    pub step: usize,
    pub epoch: usize,
    /// Raw per-task batch losses (before loss scaling) at the step.
    pub task_losses: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub update_norms: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Per-epoch, per-task validation metrics.
    pub val_metrics: Vec<Vec<f64>>,
    /// Per-epoch validation Δm (empty without a baseline).
    pub val_delta_m: Vec<f64>,
    pub best_epoch: usize,
    /// Net parameters at the selected epoch.
    pub best_params: Vec<f64>,
    /// Per-task test metrics at the selected epoch.
    pub test_metrics: Vec<f64>,
    pub higher_better: Vec<bool>,
    pub traces: Vec<StepTrace>,
    pub diverged: bool,
    pub warnings: Vec<String>,
}

/// Hooks into the loop; the gradient-similarity suite plugs in here.
pub trait TrainObserver {
    /// After a step has been applied; `net` holds the post-step parameters.
    fn on_step(
        &mut self,
        _step: usize,
        _epoch: usize,
        _net: &HydraNet,
        _batch: &[usize],
    ) -> Result<()> {
        Ok(())
    }

    fn on_epoch_end(&mut self, _epoch: usize, _net: &HydraNet) -> Result<()> {
        Ok(())
    }
}

pub struct NoopObserver;

impl TrainObserver for NoopObserver {}

/// Evaluate a net on a split: per task, mean L1 error for regression targets
/// and accuracy for classification (argmax, ties toward the lowest class).
pub fn eval_metrics(net: &HydraNet, data: &Dataset) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(MtlError::invalid("eval on empty split"));
    }
    let t_tasks = data.n_tasks();
    let mut sums = vec![0.0; t_tasks];
    for (i, x) in data.inputs.iter().enumerate() {
        let outs = net.predict(x)?;
        for (t, out) in outs.iter().enumerate() {
            match &data.targets[t] {
                TaskTargets::Regression(ys) => {
                    let y = ys[i];
                    let d = out.data();
                    let err = d.iter().fold(0.0, |acc, &o| acc + (o - y).abs()) / d.len() as f64;
                    sums[t] += err;
                }
                TaskTargets::Classification(ys) => {
                    let d = out.data();
                    let mut arg = 0;
                    for (k, &v) in d.iter().enumerate() {
                        if v > d[arg] {
                            arg = k;
                        }
                    }
                    if arg == ys[i] {
                        sums[t] += 1.0;
                    }
                }
            }
        }
    }
    let n = data.len() as f64;
    Ok(sums.into_iter().map(|s| s / n).collect())
}

/// Orientation flags: accuracy counts up, L1 error counts down.
pub fn higher_better_flags(data: &Dataset) -> Vec<bool> {
    data.targets
        .iter()
        .map(|t| matches!(t, TaskTargets::Classification(_)))
        .collect()
}

fn seg_norm(v: &[f64], r: &Range<usize>) -> f64 {
    v[r.clone()].iter().fold(0.0, |acc, &x| acc + x * x).sqrt()
}

/// Run one training job. Early stopping selects the epoch minimizing
/// validation Δm against `baseline_val` when given, otherwise the mean
/// orientation-adjusted validation metric; ties go to the earliest epoch and
/// the budget is never exceeded. A non-finite loss or update aborts training
/// and returns what was learned so far with `diverged` set.
pub fn train(
    spec: &HydraSpec,
    splits: &Splits,
    settings: &TrainSettings,
    baseline_val: Option<&[f64]>,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    let mut net = HydraNet::new(spec.clone(), settings.seed)?;
    if let Some(p) = &settings.init_params {
        net.set_params(p)?;
    }
    let n_net = net.n_params();
    let t_tasks = net.n_tasks();
    if splits.train.n_tasks() != t_tasks {
        return Err(MtlError::shape(
            "train",
            format!("{t_tasks} heads"),
            format!("{} dataset tasks", splits.train.n_tasks()),
        ));
    }
    if let Some(s) = &settings.loss_scales {
        if s.len() != t_tasks {
            return Err(MtlError::shape(
                "train",
                format!("{t_tasks} loss scales"),
                format!("{}", s.len()),
            ));
        }
    }
    if let Some(b) = baseline_val {
        if b.len() != t_tasks {
            return Err(MtlError::shape(
                "train",
                format!("{t_tasks} baseline metrics"),
                format!("{}", b.len()),
            ));
        }
    }
    if settings.epochs == 0 {
        return Err(MtlError::config("epochs must be >= 1"));
    }

    // UW's trainable log-σ ride at the tail of the parameter vector with
    // ParamIds continuing after the net's tensors.
    let n_sigma = if matches!(settings.method, MethodSpec::Uw) {
        t_tasks
    } else {
        0
    };
    let sigma_base = net.n_param_tensors();
    let sigma_pid = move |t: usize| ParamId(sigma_base + t);
    let mut full: Vec<f64> = net.params().to_vec();
    full.resize(n_net + n_sigma, 0.0);

    let per_task_opt = settings.optimizer_name == "pertask-adam";
    if per_task_opt && !settings.method.is_loss_level() {
        return Err(MtlError::config(format!(
            "method {} is gradient-level and cannot run under pertask-adam",
            settings.method
        )));
    }
    let mut opt = settings
        .optimizer
        .build_named(&settings.optimizer_name, settings.lr, t_tasks)?;

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed ^ 0x9E37_79B9_7F4A_7C15);
    let n_train = splits.train.len();
    let bs = settings.batch_size.min(n_train).max(1);
    let mut indices: Vec<usize> = (0..n_train).collect();

    let backbone_range = net.backbone_range();
    let head_ranges: Vec<Range<usize>> = (0..t_tasks)
        .map(|t| net.head_range(t))
        .collect::<Result<_>>()?;
    let hb = higher_better_flags(&splits.train);

    let mut val_metrics: Vec<Vec<f64>> = Vec::new();
    let mut val_delta_m: Vec<f64> = Vec::new();
    let mut traces: Vec<StepTrace> = Vec::new();
    let mut warnings: Vec<String> = Vec::new();
    let mut best_score = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = full[..n_net].to_vec();
    let mut diverged = false;
    let mut step = 0usize;

    'epochs: for epoch in 0..settings.epochs {
        indices.shuffle(&mut rng);
        for batch in indices.chunks(bs) {
            net.set_params(&full[..n_net])?;
            let mut tape = Tape::new();
            let (_staged, raw_losses) = net.batch_losses(&mut tape, &splits.train, batch)?;
            let raw_vals: Vec<f64> = raw_losses
                .iter()
                .map(|&n| tape.value(n).item())
                .collect::<Result<_>>()?;
            if raw_vals.iter().any(|v| !v.is_finite()) {
                diverged = true;
                warnings.push(format!("non-finite loss at step {}", step + 1));
                break 'epochs;
            }

            let losses: Vec<NodeId> = match &settings.loss_scales {
                Some(scales) => raw_losses
                    .iter()
                    .zip(scales)
                    .map(|(&l, &w)| {
                        let c = tape.constant(Tensor::scalar(w));
                        tape.mul(l, c)
                    })
                    .collect::<Result<_>>()?,
                None => raw_losses.clone(),
            };
            let sigma_nodes: Vec<NodeId> = (0..n_sigma)
                .map(|t| tape.param(sigma_pid(t), Tensor::scalar(full[n_net + t])))
                .collect();

            // Flatten a backward pass over [net params | log-σ tail].
            let flatten_full = |tape: &Tape, node: NodeId| -> Result<Vec<f64>> {
                let map = tape.backward(node)?;
                let mut flat = net.flatten(&map);
                for t in 0..n_sigma {
                    flat.push(map.get(&sigma_pid(t)).map_or(0.0, |g| g.data()[0]));
                }
                Ok(flat)
            };

            let (combined_grad, per_task_grads): (Vec<f64>, Option<Vec<Vec<f64>>>) =
                if settings.method.is_loss_level() {
                    let terms: Vec<NodeId> = match &settings.method {
                        MethodSpec::Ew => losses.clone(),
                        MethodSpec::Fixed(w) => fixed_terms(&mut tape, &losses, w)?,
                        MethodSpec::Rlw => {
                            let w = rlw_weights(t_tasks, &mut rng);
                            fixed_terms(&mut tape, &losses, &w)?
                        }
                        MethodSpec::Uw => uncertainty_terms(&mut tape, &losses, &sigma_nodes)?,
                        MethodSpec::Uwo => {
                            optimal_uncertainty_terms(&mut tape, &losses, &mut warnings)?
                        }
                        MethodSpec::PcGrad | MethodSpec::CaGrad { .. } => unreachable!(),
                    };
                    if per_task_opt {
                        let grads: Vec<Vec<f64>> = terms
                            .iter()
                            .map(|&n| flatten_full(&tape, n))
                            .collect::<Result<_>>()?;
                        let mut combined = vec![0.0; n_net + n_sigma];
                        for g in &grads {
                            for (acc, &v) in combined.iter_mut().zip(g) {
                                *acc += v;
                            }
                        }
                        (combined, Some(grads))
                    } else {
                        let total = equal_weighting(&mut tape, &terms)?;
                        (flatten_full(&tape, total)?, None)
                    }
                } else {
                    // Gradient surgery: per-task backward passes, surgery on
                    // the backbone block, own-head gradients pass through.
                    let agg = settings.method.aggregation().expect("gradient-level");
                    let per_task_flat: Vec<Vec<f64>> = losses
                        .iter()
                        .map(|&n| flatten_full(&tape, n))
                        .collect::<Result<_>>()?;
                    let fgs: Vec<FlatGrad> = per_task_flat
                        .iter()
                        .enumerate()
                        .map(|(t, f)| FlatGrad::backbone(t, f[backbone_range.clone()].to_vec()))
                        .collect::<Result<_>>()?;
                    let ones = vec![1.0; t_tasks];
                    let agg_out = aggregate(agg, &fgs, &ones, &mut rng)?;
                    let mut combined = vec![0.0; n_net + n_sigma];
                    combined[backbone_range.clone()].copy_from_slice(&agg_out.values);
                    for (t, f) in per_task_flat.iter().enumerate() {
                        let hr = head_ranges[t].clone();
                        combined[hr.clone()].copy_from_slice(&f[hr]);
                    }
                    (combined, None)
                };

            let mut combined_grad = combined_grad;
            let mut per_task_grads = per_task_grads;
            if settings.freeze_backbone {
                combined_grad[backbone_range.clone()].fill(0.0);
                if let Some(list) = &mut per_task_grads {
                    for g in list {
                        g[backbone_range.clone()].fill(0.0);
                    }
                }
            }

            let update = if per_task_opt {
                opt.update_vector_per_task(per_task_grads.as_ref().unwrap())?
            } else {
                opt.update_vector(&combined_grad)?
            };
            if update.iter().any(|v| !v.is_finite()) {
                diverged = true;
                warnings.push(format!("non-finite update at step {}", step + 1));
                break 'epochs;
            }
            for (p, u) in full.iter_mut().zip(&update) {
                *p -= u;
            }
            step += 1;

            if settings.record_traces {
                let mut grad_norms = vec![seg_norm(&combined_grad, &backbone_range)];
                let mut update_norms = vec![seg_norm(&update, &backbone_range)];
                for r in &head_ranges {
                    grad_norms.push(seg_norm(&combined_grad, r));
                    update_norms.push(seg_norm(&update, r));
                }
                traces.push(StepTrace {
                    step,
                    epoch,
                    task_losses: raw_vals,
                    grad_norms,
                    update_norms,
                });
            }

            net.set_params(&full[..n_net])?;
            observer.on_step(step, epoch, &net, batch)?;
        }

        net.set_params(&full[..n_net])?;
        let vm = eval_metrics(&net, &splits.val)?;
        let score = match baseline_val {
            Some(b) => {
                let dm = delta_m(&vm, b, &hb)?;
                val_delta_m.push(dm);
                dm
            }
            None => {
                vm.iter()
                    .zip(&hb)
                    .map(|(&m, &h)| if h { -m } else { m })
                    .sum::<f64>()
                    / vm.len() as f64
            }
        };
        val_metrics.push(vm);
        if score.is_finite() && score < best_score {
            best_score = score;
            best_epoch = epoch;
            best_params[..].copy_from_slice(&full[..n_net]);
        }
        observer.on_epoch_end(epoch, &net)?;
    }

    net.set_params(&best_params)?;
    let test_metrics = eval_metrics(&net, &splits.test)?;
    Ok(TrainOutcome {
        val_metrics,
        val_delta_m,
        best_epoch,
        best_params,
        test_metrics,
        higher_better: hb,
        traces,
        diverged,
        warnings,
    })
}
