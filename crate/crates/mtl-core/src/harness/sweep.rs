//! Sweep suite: the learning-rate sweep on synthetic multi-task data.
//!
//! Per seed the harness first trains single-task (STL) baselines — the same
//! backbone with one head, on one task's targets — over the full lr list,
//! keeping the best by validation performance. Those baselines anchor
//! validation-Δm early stopping for every MTL run, the best-Δm table, and
//! later out-of-distribution fine-tuning. MTL runs cover the whole
//! (method, optimizer, lr) grid; their test metrics feed the Pareto front
//! and the cross-group "PO w.r.t." counts.

use crate::data::{generate, Dataset, Splits};
use crate::error::{MtlError, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::record::{ModelArtifact, RunRecord};
use crate::harness::trainer::{train, NoopObserver, TrainOutcome, TrainSettings};
use crate::metrics::{pareto_count_vs, pareto_front};
use crate::net::HydraSpec;

/// One "records of `group` not dominated by any record of `reference`" cell.
#[derive(Clone, Debug, PartialEq)]
pub struct PoCount {
    pub group: String,
    pub reference: String,
    pub count: usize,
    pub group_size: usize,
}

/// Best run of a method on a seed, judged by validation Δm at its selected
/// epoch; `test_delta_m` re-scores the same run against the STL test metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct BestRow {
    pub method: String,
    pub seed: u64,
    pub optimizer: String,
    pub lr: f64,
    pub val_delta_m: f64,
    pub test_delta_m: f64,
}

#[derive(Clone, Debug, Default)]
pub struct SweepReport {
    pub records: Vec<RunRecord>,
    pub stl_records: Vec<RunRecord>,
    /// Indices into `records` forming the test-metric Pareto front.
    pub pareto: Vec<usize>,
    pub po_counts: Vec<PoCount>,
    pub best: Vec<BestRow>,
    /// Relative path (under the output dir) -> artifact, for persistence.
    pub artifacts: Vec<(String, ModelArtifact)>,
}

pub(crate) fn single_task_splits(splits: &Splits, task: usize) -> Splits {
    let restrict = |d: &Dataset| Dataset {
        inputs: d.inputs.clone(),
        targets: vec![d.targets[task].clone()],
    };
    Splits {
        train: restrict(&splits.train),
        val: restrict(&splits.val),
        test: restrict(&splits.test),
    }
}

fn single_head_spec(net: &HydraSpec, task: usize) -> HydraSpec {
    HydraSpec {
        backbone: net.backbone.clone(),
        heads: vec![net.heads[task].clone()],
        slope: net.slope,
    }
}

/// Orientation-adjusted mean of one epoch's validation metrics; lower is
/// better for comparing runs.
fn oriented_score(out: &TrainOutcome) -> f64 {
    let vm = &out.val_metrics[out.best_epoch];
    vm.iter()
        .zip(&out.higher_better)
        .map(|(&m, &h)| if h { -m } else { m })
        .sum::<f64>()
        / vm.len() as f64
}

pub(crate) fn method_file_stem(method: &str) -> String {
    method
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '-' })
        .collect()
}

struct StlBaseline {
    val: Vec<f64>,
    test: Vec<f64>,
}

/// Train STL baselines for every task of one seed: per task, sweep the lr
/// list with Adam and keep the best validation outcome (ties -> earliest lr).
fn train_stl(
    cfg: &ExperimentConfig,
    splits: &Splits,
    seed: u64,
    report: &mut SweepReport,
) -> Result<StlBaseline> {
    let n_tasks = cfg.dataset.tasks.len();
    let mut val = Vec::with_capacity(n_tasks);
    let mut test = Vec::with_capacity(n_tasks);
    for t in 0..n_tasks {
        let spec = single_head_spec(&cfg.net, t);
        let task_splits = single_task_splits(splits, t);
        let mut best: Option<(f64, f64, TrainOutcome)> = None;
        for &lr in &cfg.lr_list {
            let mut s = TrainSettings::new(
                cfg.parse_method("ew")?,
                cfg.optimizer.clone(),
                lr,
            );
            s.optimizer_name = "adam".into();
            s.epochs = cfg.budget;
            s.batch_size = cfg.batch_size;
            s.seed = seed;
            let out = train(&spec, &task_splits, &s, None, &mut NoopObserver)?;
            let score = oriented_score(&out);
            if best.as_ref().map_or(true, |(b, _, _)| score < *b) {
                best = Some((score, lr, out));
            }
        }
        let (_, lr, out) = best.expect("lr_list is non-empty");
        report.stl_records.push(RunRecord {
            config_hash: cfg.content_hash(),
            seed,
            method: format!("stl:{t}"),
            optimizer: "adam".into(),
            lr,
            best_epoch: out.best_epoch,
            val_metrics: out.val_metrics.clone(),
            val_delta_m: Vec::new(),
            test_metrics: out.test_metrics.clone(),
            higher_better: out.higher_better.clone(),
        });
        report.artifacts.push((
            format!("models/stl_seed{seed}_task{t}.json"),
            ModelArtifact {
                kind: "stl".into(),
                task: Some(t),
                seed,
                config_hash: cfg.content_hash(),
                method: format!("stl:{t}"),
                optimizer: "adam".into(),
                lr,
                spec,
                params: out.best_params.clone(),
                test_metrics: out.test_metrics.clone(),
                higher_better: out.higher_better.clone(),
            },
        ));
        val.push(out.val_metrics[out.best_epoch][0]);
        test.push(out.test_metrics[0]);
    }
    Ok(StlBaseline { val, test })
}

pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    let mut report = SweepReport::default();
    let hash = cfg.content_hash();

    for &seed in &cfg.seeds {
        let splits = generate(&cfg.dataset, seed)?;
        let stl = train_stl(cfg, &splits, seed, &mut report)?;

        // (method, best-so-far) bookkeeping for artifacts and the best table.
        let mut best_of_method: Vec<(String, f64, BestRow, ModelArtifact)> = Vec::new();
        for method_name in &cfg.methods {
            let method = cfg.parse_method(method_name)?;
            for opt_name in &cfg.optimizers {
                for &lr in &cfg.lr_list {
                    let mut s =
                        TrainSettings::new(method.clone(), cfg.optimizer.clone(), lr);
                    s.optimizer_name = opt_name.clone();
                    s.epochs = cfg.budget;
                    s.batch_size = cfg.batch_size;
                    s.seed = seed;
                    let out = train(&cfg.net, &splits, &s, Some(&stl.val), &mut NoopObserver)?;
                    let val_dm = out.val_delta_m[out.best_epoch];
                    report.records.push(RunRecord {
                        config_hash: hash.clone(),
                        seed,
                        method: method_name.clone(),
                        optimizer: opt_name.clone(),
                        lr,
                        best_epoch: out.best_epoch,
                        val_metrics: out.val_metrics.clone(),
                        val_delta_m: out.val_delta_m.clone(),
                        test_metrics: out.test_metrics.clone(),
                        higher_better: out.higher_better.clone(),
                    });
                    let entry = best_of_method
                        .iter_mut()
                        .find(|(m, _, _, _)| m == method_name);
                    let is_better = match &entry {
                        Some((_, best_dm, _, _)) => val_dm < *best_dm,
                        None => true,
                    };
                    if is_better {
                        let test_dm = crate::metrics::delta_m(
                            &out.test_metrics,
                            &stl.test,
                            &out.higher_better,
                        )?;
                        let row = BestRow {
                            method: method_name.clone(),
                            seed,
                            optimizer: opt_name.clone(),
                            lr,
                            val_delta_m: val_dm,
                            test_delta_m: test_dm,
                        };
                        let art = ModelArtifact {
                            kind: "mtl".into(),
                            task: None,
                            seed,
                            config_hash: hash.clone(),
                            method: method_name.clone(),
                            optimizer: opt_name.clone(),
                            lr,
                            spec: cfg.net.clone(),
                            params: out.best_params.clone(),
                            test_metrics: out.test_metrics.clone(),
                            higher_better: out.higher_better.clone(),
                        };
                        match entry {
                            Some(slot) => *slot = (method_name.clone(), val_dm, row, art),
                            None => {
                                best_of_method.push((method_name.clone(), val_dm, row, art))
                            }
                        }
                    }
                }
            }
        }
        for (method_name, _, row, art) in best_of_method {
            report.best.push(row);
            report.artifacts.push((
                format!(
                    "models/mtl_{}_seed{seed}.json",
                    method_file_stem(&method_name)
                ),
                art,
            ));
        }
    }

    if report.records.is_empty() {
        return Err(MtlError::config("sweep produced no runs"));
    }
    let hb = report.records[0].higher_better.clone();
    let tests: Vec<Vec<f64>> = report
        .records
        .iter()
        .map(|r| r.test_metrics.clone())
        .collect();
    report.pareto = pareto_front(&tests, &hb)?;
    for a in &cfg.methods {
        let ga: Vec<Vec<f64>> = report
            .records
            .iter()
            .filter(|r| &r.method == a)
            .map(|r| r.test_metrics.clone())
            .collect();
        for b in &cfg.methods {
            if a == b {
                continue;
            }
            let gb: Vec<Vec<f64>> = report
                .records
                .iter()
                .filter(|r| &r.method == b)
                .map(|r| r.test_metrics.clone())
                .collect();
            report.po_counts.push(PoCount {
                group: a.clone(),
                reference: b.clone(),
                count: pareto_count_vs(&ga, &gb, &hb)?,
                group_size: ga.len(),
            });
        }
    }
    Ok(report)
}
