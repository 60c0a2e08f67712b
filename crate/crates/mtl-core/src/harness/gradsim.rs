//! Gradsim suite: gradient-similarity profiles along a training run.
//!
//! Trains the default 100x-disparity two-task problem per seed and probes
//! backbone-gradient similarity every `sim_every` steps in both comparison
//! modes, summarizing each epoch into distribution statistics. The paper's
//! observation under test: inter-task similarity stays below inter-sample
//! similarity once training leaves the init.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{generate, Splits};
use crate::error::Result;
use crate::harness::config::ExperimentConfig;
use crate::harness::trainer::{train, TrainObserver, TrainSettings};
use crate::metrics::{
    similarity_protocol, CompareMode, ProtocolConfig, SimilarityAccumulator, SimilarityStats,
};
use crate::net::HydraNet;

/// Per-seed epoch-by-epoch similarity statistics.
#[derive(Clone, Debug)]
pub struct GradsimReport {
    pub seed: u64,
    pub stats: Vec<SimilarityStats>,
}

struct SimObserver<'a> {
    splits: &'a Splits,
    every: usize,
    cfg: ProtocolConfig,
    rng: ChaCha8Rng,
    acc: SimilarityAccumulator,
    stats: Vec<SimilarityStats>,
}

impl TrainObserver for SimObserver<'_> {
    fn on_step(
        &mut self,
        step: usize,
        _epoch: usize,
        net: &HydraNet,
        batch: &[usize],
    ) -> Result<()> {
        if step % self.every != 0 {
            return Ok(());
        }
        for mode in [CompareMode::InterTask, CompareMode::InterSample] {
            similarity_protocol(
                net,
                &self.splits.train,
                batch,
                mode,
                self.cfg,
                &mut self.rng,
                &mut self.acc,
            )?;
        }
        Ok(())
    }

    fn on_epoch_end(&mut self, epoch: usize, _net: &HydraNet) -> Result<()> {
        self.stats.extend(self.acc.summarize(epoch));
        self.acc = SimilarityAccumulator::new();
        Ok(())
    }
}

pub fn run_gradsim(cfg: &ExperimentConfig) -> Result<Vec<GradsimReport>> {
    let method = cfg.parse_method(&cfg.method)?;
    let mut reports = Vec::new();
    for &seed in &cfg.seeds {
        let splits = generate(&cfg.dataset, seed)?;
        let mut s = TrainSettings::new(method.clone(), cfg.optimizer.clone(), cfg.lr_list[0]);
        s.epochs = cfg.budget;
        s.batch_size = cfg.batch_size;
        s.seed = seed;
        let mut obs = SimObserver {
            splits: &splits,
            every: cfg.sim_every,
            cfg: ProtocolConfig {
                items: cfg.sim_items,
                batch_mean: cfg.batch_mean,
            },
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x51_7C_C1_B7_27_22_0A_95),
            acc: SimilarityAccumulator::new(),
            stats: Vec::new(),
        };
        train(&cfg.net, &splits, &s, None, &mut obs)?;
        reports.push(GradsimReport {
            seed,
            stats: obs.stats,
        });
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::Overrides;
    use crate::metrics::Measure;

    fn cfg(extra: &str) -> ExperimentConfig {
        let text = format!(
            "suite = gradsim\nbudget = 3\nn_train = 32\nn_val = 8\nn_test = 8\nsim_every = 1\n{extra}"
        );
        ExperimentConfig::parse(&text, &Overrides::default()).unwrap()
    }

    #[test]
    fn emits_stats_for_both_modes_every_epoch() {
        let reports = run_gradsim(&cfg("seeds = 0,1\n")).unwrap();
        assert_eq!(reports.len(), 2);
        for r in &reports {
            for epoch in 0..3 {
                for mode in [CompareMode::InterTask, CompareMode::InterSample] {
                    let row = r
                        .stats
                        .iter()
                        .find(|s| s.epoch == epoch && s.mode == mode && s.measure == Measure::Cos)
                        .unwrap_or_else(|| panic!("missing {mode:?} cos row for epoch {epoch}"));
                    assert!(row.n_pairs > 0);
                    assert!(row.mean.is_finite());
                    assert!((-1.0..=1.0).contains(&row.mean));
                }
            }
        }
    }

    #[test]
    fn rerun_is_bitwise_identical() {
        let a = run_gradsim(&cfg("")).unwrap();
        let b = run_gradsim(&cfg("")).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.stats, y.stats);
        }
    }

    #[test]
    fn disparity_depresses_inter_task_cosine() {
        // 100x loss scales leave task gradients pointing apart more often
        // than same-task sample gradients; means should reflect that by the
        // later epochs even on a small run.
        let c = cfg("budget = 5\nseeds = 7\n");
        let reports = run_gradsim(&c).unwrap();
        let mean_of = |mode: CompareMode, epoch: usize| -> f64 {
            reports[0]
                .stats
                .iter()
                .find(|s| s.epoch == epoch && s.mode == mode && s.measure == Measure::Mag)
                .map(|s| s.mean)
                .unwrap()
        };
        let later: Vec<usize> = (1..5).collect();
        let wins = later
            .iter()
            .filter(|&&e| mean_of(CompareMode::InterTask, e) < mean_of(CompareMode::InterSample, e))
            .count();
        assert!(wins >= 3, "inter-task magnitude similarity not depressed: {wins}/4");
    }
}
