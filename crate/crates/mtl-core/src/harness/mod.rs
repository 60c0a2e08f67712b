//! Experiment suites: configuration, the shared training loop, per-suite
//! drivers, and deterministic CSV/JSON persistence.

pub mod config;
pub mod gradsim;
pub mod invariance;
pub mod landscape;
pub mod ood;
pub mod record;
pub mod sweep;
pub mod trainer;

pub use config::{ExperimentConfig, MethodSpec, OptimizerSpec, Overrides, Suite};
pub use record::{ModelArtifact, RunRecord};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use serde::Serialize;

use crate::error::Result;
use crate::metrics::SimilarityStats;

/// What a suite run left on disk.
#[derive(Clone, Debug)]
pub struct SuiteOutput {
    pub out_dir: PathBuf,
    /// Paths relative to `out_dir`, in write order.
    pub files: Vec<String>,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    suite: &'a str,
    config_hash: String,
    config: BTreeMap<String, String>,
    outputs: &'a [String],
}

fn landscape_records_csv(records: &[landscape::LandscapeRecord]) -> String {
    let mut out =
        String::from("method,optimizer,lr,start,converged,failed,final_x1,final_x2,final_dist\n");
    for r in records {
        let conv = match r.converged {
            Some(i) => i.to_string(),
            None => "-".into(),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.method,
            r.optimizer,
            r.lr,
            r.start,
            conv,
            u8::from(r.failed),
            r.final_point[0],
            r.final_point[1],
            r.final_dist
        )
        .unwrap();
    }
    out
}

fn landscape_trajectories_csv(trajectories: &[landscape::Trajectory]) -> String {
    let mut out = String::from("method,optimizer,lr,start,iter,x1,x2\n");
    for t in trajectories {
        for &(iter, p) in &t.points {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                t.method, t.optimizer, t.lr, t.start, iter, p[0], p[1]
            )
            .unwrap();
        }
    }
    out
}

fn invariance_csv(cells: &[invariance::InvarianceCell]) -> String {
    let mut out = String::from(
        "combo,scaled,frozen,lr,step,epoch,loss_t0,loss_t1,\
         grad_backbone,grad_head0,grad_head1,upd_backbone,upd_head0,upd_head1\n",
    );
    for c in cells {
        for t in &c.traces {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                c.combo(),
                u8::from(c.scaled),
                u8::from(c.frozen),
                c.lr,
                t.step,
                t.epoch,
                t.task_losses[0],
                t.task_losses[1],
                t.grad_norms[0],
                t.grad_norms[1],
                t.grad_norms[2],
                t.update_norms[0],
                t.update_norms[1],
                t.update_norms[2]
            )
            .unwrap();
        }
    }
    out
}

fn gradsim_csv(reports: &[gradsim::GradsimReport]) -> String {
    let mut out = format!("seed,{}\n", SimilarityStats::csv_header());
    for r in reports {
        for s in &r.stats {
            writeln!(out, "{},{}", r.seed, s.csv_row()).unwrap();
        }
    }
    out
}

fn pareto_csv(report: &sweep::SweepReport) -> String {
    let mut out = String::from("record_index,seed,method,optimizer,lr,test_metrics\n");
    for &i in &report.pareto {
        let r = &report.records[i];
        let tm = r
            .test_metrics
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join("|");
        writeln!(out, "{},{},{},{},{},{}", i, r.seed, r.method, r.optimizer, r.lr, tm).unwrap();
    }
    out
}

fn po_counts_csv(counts: &[sweep::PoCount]) -> String {
    let mut out = String::from("group,reference,count,group_size\n");
    for c in counts {
        writeln!(out, "{},{},{},{}", c.group, c.reference, c.count, c.group_size).unwrap();
    }
    out
}

fn best_csv(rows: &[sweep::BestRow]) -> String {
    let mut out = String::from("method,seed,optimizer,lr,val_delta_m,test_delta_m\n");
    for b in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            b.method, b.seed, b.optimizer, b.lr, b.val_delta_m, b.test_delta_m
        )
        .unwrap();
    }
    out
}

fn ood_rows_csv(rows: &[ood::OodRow]) -> String {
    let mut out = String::from("seed,task,delta_t,higher_better,mtl_clean,stl_clean\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.seed,
            r.task,
            r.delta_t,
            u8::from(r.higher_better),
            r.mtl_clean,
            r.stl_clean
        )
        .unwrap();
    }
    out
}

fn ood_cells_csv(cells: &[ood::OodCell]) -> String {
    let mut out = String::from("seed,model,task,mode,severity,metric\n");
    for c in cells {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            c.seed,
            c.model,
            c.task,
            c.mode.name(),
            c.severity,
            c.metric
        )
        .unwrap();
    }
    out
}

/// Run the configured suite and persist its outputs under `cfg.out_dir`:
/// one or more CSVs, any model artifacts, and a `run_config.json` sidecar
/// with the resolved config and its content hash. Sequential and
/// deterministic: the same config writes the same bytes.
pub fn run_suite(cfg: &ExperimentConfig) -> Result<SuiteOutput> {
    fs::create_dir_all(&cfg.out_dir)?;
    let mut files: Vec<String> = Vec::new();
    let mut write = |name: &str, content: String| -> Result<()> {
        fs::write(cfg.out_dir.join(name), content)?;
        files.push(name.to_string());
        Ok(())
    };

    match cfg.suite {
        Suite::Landscape => {
            let rep = landscape::run_landscape(cfg)?;
            write("landscape_records.csv", landscape_records_csv(&rep.records))?;
            write(
                "landscape_trajectories.csv",
                landscape_trajectories_csv(&rep.trajectories),
            )?;
        }
        Suite::Invariance => {
            let cells = invariance::run_invariance(cfg)?;
            write("invariance_traces.csv", invariance_csv(&cells))?;
        }
        Suite::Gradsim => {
            let reports = gradsim::run_gradsim(cfg)?;
            write("gradsim_similarity.csv", gradsim_csv(&reports))?;
        }
        Suite::SynthMtl => {
            let rep = sweep::run_sweep(cfg)?;
            write("sweep_records.csv", record::records_to_csv(&rep.records))?;
            write(
                "sweep_stl_records.csv",
                record::records_to_csv(&rep.stl_records),
            )?;
            write("sweep_pareto.csv", pareto_csv(&rep))?;
            write("sweep_po_counts.csv", po_counts_csv(&rep.po_counts))?;
            write("sweep_best.csv", best_csv(&rep.best))?;
            for (name, art) in &rep.artifacts {
                art.save(&cfg.out_dir.join(name))?;
                files.push(name.clone());
            }
        }
        Suite::Ood => {
            let rep = ood::run_ood(cfg)?;
            write("ood_delta_t.csv", ood_rows_csv(&rep.rows))?;
            write("ood_cells.csv", ood_cells_csv(&rep.cells))?;
        }
    }

    let sidecar = Sidecar {
        suite: cfg.suite.name(),
        config_hash: cfg.content_hash(),
        config: cfg.as_map(),
        outputs: &files,
    };
    fs::write(
        cfg.out_dir.join("run_config.json"),
        serde_json::to_string_pretty(&sidecar)?,
    )?;
    files.push("run_config.json".into());

    Ok(SuiteOutput {
        out_dir: cfg.out_dir.clone(),
        files,
    })
}
