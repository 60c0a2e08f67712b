//! Invariance suite: the loss-scale audit.
//!
//! Four canonical combinations — EW+SGD, EW+Adam, UW-O+SGD, EW+per-task-Adam
//! — each run unscaled and with the task losses multiplied by `scale_pair`,
//! with the backbone frozen and free, on the same seeded data and init.
//! Per-step traces of losses, gradient-segment norms, and update-segment
//! norms are what the overlap claims are checked against. "SGD" here is
//! plain gradient descent; the derivations assume no momentum.

use crate::data::generate;
use crate::error::{MtlError, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::trainer::{train, NoopObserver, StepTrace, TrainSettings};

/// The full audit grid, in run order.
const COMBOS: [(&str, &str); 4] = [
    ("ew", "sgd"),
    ("ew", "adam"),
    ("uwo", "sgd"),
    ("ew", "pertask-adam"),
];

/// One (combo, scaled?, frozen?) training run.
#[derive(Clone, Debug)]
pub struct InvarianceCell {
    pub method: String,
    pub optimizer: String,
    pub scaled: bool,
    pub frozen: bool,
    pub lr: f64,
    pub traces: Vec<StepTrace>,
    pub diverged: bool,
}

impl InvarianceCell {
    pub fn combo(&self) -> String {
        format!("{}+{}", self.method, self.optimizer)
    }
}

pub fn run_invariance(cfg: &ExperimentConfig) -> Result<Vec<InvarianceCell>> {
    let combos: Vec<(&str, &str)> = COMBOS
        .iter()
        .filter(|(m, o)| {
            cfg.methods.iter().any(|x| x == m) && cfg.optimizers.iter().any(|x| x == o)
        })
        .copied()
        .collect();
    if combos.is_empty() {
        return Err(MtlError::config(format!(
            "no invariance combos selected: methods {:?} x optimizers {:?} \
             covers none of {COMBOS:?}",
            cfg.methods, cfg.optimizers
        )));
    }
    let seed = cfg.seeds[0];
    let lr = cfg.lr_list[0];
    let splits = generate(&cfg.dataset, seed)?;
    let scales = vec![cfg.scale_pair.0, cfg.scale_pair.1];

    let mut cells = Vec::new();
    for (m, o) in combos {
        let method = cfg.parse_method(m)?;
        // The audit's "SGD" is vanilla GD.
        let opt_name = if o == "sgd" { "gd" } else { o };
        for scaled in [false, true] {
            for frozen in [false, true] {
                let mut s = TrainSettings::new(method.clone(), cfg.optimizer.clone(), lr);
                s.optimizer_name = opt_name.to_string();
                s.epochs = cfg.budget;
                s.batch_size = cfg.batch_size;
                s.seed = seed;
                s.freeze_backbone = frozen;
                s.loss_scales = scaled.then(|| scales.clone());
                s.record_traces = true;
                let out = train(&cfg.net, &splits, &s, None, &mut NoopObserver)?;
                cells.push(InvarianceCell {
                    method: m.to_string(),
                    optimizer: o.to_string(),
                    scaled,
                    frozen,
                    lr,
                    traces: out.traces,
                    diverged: out.diverged,
                });
            }
        }
    }
    Ok(cells)
}
