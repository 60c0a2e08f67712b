//! OOD suite: out-of-distribution transfer of pre-trained backbones.
//!
//! Loads sweep artifacts (MTL net for the configured method plus the STL
//! baselines), freezes each backbone, fine-tunes the heads on corrupted data
//! for every (corruption mode, severity) cell, and scores δₜ per task: the
//! mean corrupted-over-clean metric ratio of MTL minus STL. MTL and STL
//! cells share the corruption draws and fine-tuning seed, so identical
//! artifacts give δₜ of exactly zero.

use crate::data::{corrupt, generate, CorruptionMode, Splits};
use crate::error::{MtlError, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::record::ModelArtifact;
use crate::harness::sweep::{method_file_stem, single_task_splits};
use crate::harness::trainer::{eval_metrics, train, NoopObserver, TrainSettings};
use crate::metrics::delta_t;
use crate::net::HydraNet;

/// One fine-tuned evaluation on a corrupted test set.
#[derive(Clone, Debug, PartialEq)]
pub struct OodCell {
    pub seed: u64,
    /// "mtl" or "stl".
    pub model: String,
    pub task: usize,
    pub mode: CorruptionMode,
    pub severity: u32,
    pub metric: f64,
}

/// Per-(seed, task) transfer score.
#[derive(Clone, Debug, PartialEq)]
pub struct OodRow {
    pub seed: u64,
    pub task: usize,
    pub delta_t: f64,
    pub higher_better: bool,
    pub mtl_clean: f64,
    pub stl_clean: f64,
}

#[derive(Clone, Debug, Default)]
pub struct OodReport {
    pub rows: Vec<OodRow>,
    pub cells: Vec<OodCell>,
}

fn eval_artifact(art: &ModelArtifact, data: &crate::data::Dataset) -> Result<Vec<f64>> {
    let mut net = HydraNet::new(art.spec.clone(), 0)?;
    net.set_params(&art.params)?;
    eval_metrics(&net, data)
}

/// Head-only fine-tuning pass shared by the MTL and STL paths; returns the
/// corrupted-test metrics at the early-stopped epoch.
fn fine_tune(
    cfg: &ExperimentConfig,
    art: &ModelArtifact,
    corrupted: &Splits,
    cell_seed: u64,
) -> Result<Vec<f64>> {
    let mut s = TrainSettings::new(cfg.parse_method("ew")?, cfg.optimizer.clone(), cfg.lr_list[0]);
    s.optimizer_name = "adam".into();
    s.epochs = cfg.ft_budget;
    s.batch_size = cfg.batch_size;
    s.seed = cell_seed;
    s.freeze_backbone = true;
    s.init_params = Some(art.params.clone());
    let out = train(&art.spec, corrupted, &s, None, &mut NoopObserver)?;
    Ok(out.test_metrics)
}

pub fn run_ood(cfg: &ExperimentConfig) -> Result<OodReport> {
    let model_dir = cfg.model_dir.as_ref().ok_or_else(|| {
        MtlError::config("ood needs `model_dir` pointing at a sweep's models/ directory")
    })?;
    let n_tasks = cfg.dataset.tasks.len();
    let mut report = OodReport::default();

    for &seed in &cfg.seeds {
        let mtl = ModelArtifact::load(
            &model_dir.join(format!("mtl_{}_seed{seed}.json", method_file_stem(&cfg.method))),
        )?;
        let stls: Vec<ModelArtifact> = (0..n_tasks)
            .map(|t| ModelArtifact::load(&model_dir.join(format!("stl_seed{seed}_task{t}.json"))))
            .collect::<Result<_>>()?;
        if mtl.spec.heads.len() != n_tasks {
            return Err(MtlError::shape(
                "run_ood",
                format!("{n_tasks} heads in MTL artifact"),
                format!("{}", mtl.spec.heads.len()),
            ));
        }

        let splits = generate(&cfg.dataset, seed)?;
        let mtl_clean = eval_artifact(&mtl, &splits.test)?;
        let stl_clean: Vec<f64> = (0..n_tasks)
            .map(|t| Ok(eval_artifact(&stls[t], &single_task_splits(&splits, t).test)?[0]))
            .collect::<Result<_>>()?;
        let hb = mtl.higher_better.clone();

        let mut mtl_cells: Vec<Vec<f64>> = vec![Vec::new(); n_tasks];
        let mut stl_cells: Vec<Vec<f64>> = vec![Vec::new(); n_tasks];
        for (ci, &(mode, severity)) in cfg.corruptions.iter().enumerate() {
            let cell_seed = seed ^ ((ci as u64 + 1) << 24);
            let corrupted = Splits {
                train: corrupt(&splits.train, mode, severity, cell_seed)?,
                val: corrupt(&splits.val, mode, severity, cell_seed.wrapping_add(1))?,
                test: corrupt(&splits.test, mode, severity, cell_seed.wrapping_add(2))?,
            };

            let m = fine_tune(cfg, &mtl, &corrupted, cell_seed)?;
            for t in 0..n_tasks {
                mtl_cells[t].push(m[t]);
                report.cells.push(OodCell {
                    seed,
                    model: "mtl".into(),
                    task: t,
                    mode,
                    severity,
                    metric: m[t],
                });
            }
            for t in 0..n_tasks {
                let task_corrupted = single_task_splits(&corrupted, t);
                let s = fine_tune(cfg, &stls[t], &task_corrupted, cell_seed)?;
                stl_cells[t].push(s[0]);
                report.cells.push(OodCell {
                    seed,
                    model: "stl".into(),
                    task: t,
                    mode,
                    severity,
                    metric: s[0],
                });
            }
        }

        for t in 0..n_tasks {
            report.rows.push(OodRow {
                seed,
                task: t,
                delta_t: delta_t(mtl_clean[t], stl_clean[t], &mtl_cells[t], &stl_cells[t], hb[t])?,
                higher_better: hb[t],
                mtl_clean: mtl_clean[t],
                stl_clean: stl_clean[t],
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::Overrides;
    use crate::harness::sweep::run_sweep;

    fn base(extra: &str) -> String {
        format!(
            "suite = ood\nbudget = 3\nft_budget = 2\nn_train = 24\nn_val = 12\nn_test = 12\n\
             lr_list = 0.05\nbatch_size = 12\ncorruptions = gaussian_noise:1;input_dropout:3\n{extra}"
        )
    }

    fn cfg(extra: &str) -> ExperimentConfig {
        ExperimentConfig::parse(&base(extra), &Overrides::default()).unwrap()
    }

    /// Run a small sweep and persist its artifacts for the ood stage.
    fn sweep_into(dir: &std::path::Path) {
        let text = base("").replace("suite = ood", "suite = synth-mtl");
        let scfg = ExperimentConfig::parse(&text, &Overrides::default()).unwrap();
        let rep = run_sweep(&scfg).unwrap();
        for (name, art) in &rep.artifacts {
            art.save(&dir.join(name)).unwrap();
        }
    }

    #[test]
    fn missing_model_dir_is_an_error() {
        let err = run_ood(&cfg("")).unwrap_err();
        assert!(err.to_string().contains("model_dir"), "{err}");
    }

    #[test]
    fn missing_artifact_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg(&format!("model_dir = {}\n", dir.path().join("models").display()));
        let err = run_ood(&c).unwrap_err();
        assert!(err.to_string().contains("mtl_ew_seed0.json"), "{err}");
    }

    #[test]
    fn end_to_end_rows_and_cells() {
        let dir = tempfile::tempdir().unwrap();
        sweep_into(dir.path());
        let c = cfg(&format!("model_dir = {}\n", dir.path().join("models").display()));
        let rep = run_ood(&c).unwrap();
        // 1 seed x 2 tasks.
        assert_eq!(rep.rows.len(), 2);
        // 2 corruption cells x (2 mtl tasks + 2 stl tasks).
        assert_eq!(rep.cells.len(), 8);
        for r in &rep.rows {
            assert!(r.delta_t.is_finite());
            assert!(r.mtl_clean > 0.0 && r.stl_clean > 0.0);
        }
        let again = run_ood(&c).unwrap();
        assert_eq!(rep.rows, again.rows);
        assert_eq!(rep.cells, again.cells);
    }

    #[test]
    fn identical_artifacts_give_exactly_zero_delta_t() {
        // One task, and the "MTL" artifact is literally the STL artifact, so
        // both pipelines run the same computation and δₜ must be 0.0 exactly.
        let dir = tempfile::tempdir().unwrap();
        let text = "suite = synth-mtl\nbudget = 2\nn_train = 16\nn_val = 8\nn_test = 8\n\
                    lr_list = 0.05\nbatch_size = 8\ntasks = reg:1:0.05\n";
        let scfg = ExperimentConfig::parse(text, &Overrides::default()).unwrap();
        let rep = run_sweep(&scfg).unwrap();
        let stl = rep
            .artifacts
            .iter()
            .find(|(n, _)| n.contains("stl_seed0_task0"))
            .map(|(_, a)| a.clone())
            .unwrap();
        stl.save(&dir.path().join("models/stl_seed0_task0.json")).unwrap();
        let mut as_mtl = stl;
        as_mtl.kind = "mtl".into();
        as_mtl.task = None;
        as_mtl.save(&dir.path().join("models/mtl_ew_seed0.json")).unwrap();

        let otext = format!(
            "suite = ood\nft_budget = 2\nn_train = 16\nn_val = 8\nn_test = 8\nlr_list = 0.05\n\
             batch_size = 8\ntasks = reg:1:0.05\ncorruptions = gaussian_noise:2\n\
             model_dir = {}\n",
            dir.path().join("models").display()
        );
        let ocfg = ExperimentConfig::parse(&otext, &Overrides::default()).unwrap();
        let rep = run_ood(&ocfg).unwrap();
        assert_eq!(rep.rows.len(), 1);
        assert_eq!(rep.rows[0].delta_t, 0.0);
    }
}
