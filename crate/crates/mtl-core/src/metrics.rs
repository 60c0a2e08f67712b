use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{MtlError, Result};
use crate::net::{GradPair, GradProbe, HydraNet};

fn check_pair(op: &'static str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(MtlError::shape(
            op,
            format!("length {}", a.len()),
            format!("{}", b.len()),
        ));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (&x, &y)| acc + x * y)
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// S_cos = g·g' / (‖g‖‖g'‖). Undefined (None) when either vector is zero;
/// callers count those as excluded data rather than emitting NaN.
pub fn cos_similarity(g: &[f64], g2: &[f64]) -> Result<Option<f64>> {
    check_pair("cos_similarity", g, g2)?;
    let (n1, n2) = (norm(g), norm(g2));
    if n1 == 0.0 || n2 == 0.0 {
        return Ok(None);
    }
    // Clamp against rounding just past ±1.
    Ok(Some((dot(g, g2) / (n1 * n2)).clamp(-1.0, 1.0)))
}

/// S_mag = 2‖g‖‖g'‖ / (‖g‖² + ‖g'‖²) ∈ (0,1]; None when both are zero.
pub fn mag_similarity(g: &[f64], g2: &[f64]) -> Result<Option<f64>> {
    check_pair("mag_similarity", g, g2)?;
    let (n1, n2) = (norm(g), norm(g2));
    if n1 == 0.0 && n2 == 0.0 {
        return Ok(None);
    }
    Ok(Some(2.0 * n1 * n2 / (n1 * n1 + n2 * n2)))
}

/// Fraction of coordinates k with g_k·g'_k < 0.
pub fn conflict_ratio(g: &[f64], g2: &[f64]) -> Result<f64> {
    check_pair("conflict_ratio", g, g2)?;
    if g.is_empty() {
        return Err(MtlError::invalid("conflict_ratio on empty vectors"));
    }
    let n = g.iter().zip(g2).filter(|(&a, &b)| a * b < 0.0).count();
    Ok(n as f64 / g.len() as f64)
}

/// Plain scalar product g·g' (Fig. A6's measure).
pub fn dot_product(g: &[f64], g2: &[f64]) -> Result<f64> {
    check_pair("dot_product", g, g2)?;
    Ok(dot(g, g2))
}

/// Similarity measures emitted per pair. `PairConflict` is the pair-level
/// conflict indicator 1[S_cos < 0], derived from the cos stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Measure {
    Cos,
    Mag,
    ConflictRatio,
    Dot,
    PairConflict,
}

impl Measure {
    pub const ALL: [Measure; 5] = [
        Measure::Cos,
        Measure::Mag,
        Measure::ConflictRatio,
        Measure::Dot,
        Measure::PairConflict,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Measure::Cos => "cos",
            Measure::Mag => "mag",
            Measure::ConflictRatio => "conflict_ratio",
            Measure::Dot => "dot",
            Measure::PairConflict => "pair_conflict",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CompareMode {
    InterTask,
    InterSample,
}

impl CompareMode {
    pub fn name(&self) -> &'static str {
        match self {
            CompareMode::InterTask => "inter_task",
            CompareMode::InterSample => "inter_sample",
        }
    }
}

impl fmt::Display for CompareMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Epoch summary of one (measure, mode) stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityStats {
    pub epoch: usize,
    pub measure: Measure,
    pub mode: CompareMode,
    pub mean: f64,
    pub std: f64,
    pub p2_5: f64,
    pub p97_5: f64,
    pub n_pairs: usize,
    pub n_excluded: usize,
}

impl SimilarityStats {
    pub fn csv_header() -> &'static str {
        "epoch,measure,mode,mean,std,p2_5,p97_5,n_pairs,n_excluded"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.measure.name(),
            self.mode.name(),
            self.mean,
            self.std,
            self.p2_5,
            self.p97_5,
            self.n_pairs,
            self.n_excluded
        )
    }
}

/// Percentile with linear interpolation between order statistics; `sorted`
/// ascending, q in [0,1].
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Collects per-pair similarity values within one epoch; `summarize` turns
/// each (measure, mode) stream into a [`SimilarityStats`] row.
#[derive(Debug, Default)]
pub struct SimilarityAccumulator {
    values: BTreeMap<(Measure, CompareMode), Vec<f64>>,
    excluded: BTreeMap<(Measure, CompareMode), usize>,
}

impl SimilarityAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record all five measures for one gradient pair.
    pub fn record_pair(&mut self, mode: CompareMode, g: &[f64], g2: &[f64]) -> Result<()> {
        let cos = cos_similarity(g, g2)?;
        match cos {
            Some(v) => {
                self.values.entry((Measure::Cos, mode)).or_default().push(v);
                self.values
                    .entry((Measure::PairConflict, mode))
                    .or_default()
                    .push(if v < 0.0 { 1.0 } else { 0.0 });
            }
            None => {
                *self.excluded.entry((Measure::Cos, mode)).or_default() += 1;
                *self
                    .excluded
                    .entry((Measure::PairConflict, mode))
                    .or_default() += 1;
            }
        }
        match mag_similarity(g, g2)? {
            Some(v) => self.values.entry((Measure::Mag, mode)).or_default().push(v),
            None => *self.excluded.entry((Measure::Mag, mode)).or_default() += 1,
        }
        self.values
            .entry((Measure::ConflictRatio, mode))
            .or_default()
            .push(conflict_ratio(g, g2)?);
        self.values
            .entry((Measure::Dot, mode))
            .or_default()
            .push(dot_product(g, g2)?);
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty() && self.excluded.is_empty()
    }

    /// Epoch-mean of one stream, if it has data.
    pub fn mean_of(&self, measure: Measure, mode: CompareMode) -> Option<f64> {
        let v = self.values.get(&(measure, mode))?;
        if v.is_empty() {
            return None;
        }
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }

    /// One row per (measure, mode) stream with at least one datum, in
    /// deterministic (measure, mode) order. Population std; percentiles by
    /// linear interpolation.
    pub fn summarize(&self, epoch: usize) -> Vec<SimilarityStats> {
        let mut out = Vec::new();
        for (&(measure, mode), vals) in &self.values {
            if vals.is_empty() {
                continue;
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let mut sorted = vals.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            out.push(SimilarityStats {
                epoch,
                measure,
                mode,
                mean,
                std: var.sqrt(),
                p2_5: percentile(&sorted, 0.025),
                p97_5: percentile(&sorted, 0.975),
                n_pairs: vals.len(),
                n_excluded: self.excluded.get(&(measure, mode)).copied().unwrap_or(0),
            });
        }
        out
    }
}

/// How the similarity protocol probes gradients.
#[derive(Clone, Copy, Debug)]
pub struct ProtocolConfig {
    /// Up to this many gradients per probe (the paper samples 8); all C(k,2)
    /// pairs among them are recorded.
    pub items: usize,
    /// Inter-task probes use batch-mean task gradients instead of a single
    /// random sample (the Fig. A4 variant).
    pub batch_mean: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            items: 8,
            batch_mean: false,
        }
    }
}

/// One probe of the similarity protocol: extract backbone gradients per the
/// mode, form all unordered pairs, append to `acc`.
///
/// inter_task: the (up to `items`) task gradients at one rng-drawn sample of
/// `batch` (or batch-mean gradients when configured). inter_sample: gradients
/// of one rng-drawn task at up to `items` rng-drawn distinct samples.
pub fn similarity_protocol(
    net: &HydraNet,
    data: &Dataset,
    batch: &[usize],
    mode: CompareMode,
    cfg: ProtocolConfig,
    rng: &mut ChaCha8Rng,
    acc: &mut SimilarityAccumulator,
) -> Result<()> {
    if batch.is_empty() {
        return Err(MtlError::invalid("similarity protocol: empty batch"));
    }
    if cfg.items < 2 {
        return Err(MtlError::invalid("similarity protocol: items must be >= 2"));
    }
    let pairs: Vec<GradPair> = match mode {
        CompareMode::InterTask => {
            if net.n_tasks() < 2 {
                return Err(MtlError::invalid(
                    "inter_task mode needs at least 2 tasks",
                ));
            }
            let grads = if cfg.batch_mean {
                net.task_gradients(data, GradProbe::PerTaskMean { samples: batch })?
            } else {
                let sample = batch[rng.gen_range(0..batch.len())];
                net.task_gradients(data, GradProbe::PerTask { sample })?
            };
            if grads.len() > cfg.items {
                let mut picked: Vec<GradPair> = grads;
                picked.shuffle(rng);
                picked.truncate(cfg.items);
                picked
            } else {
                grads
            }
        }
        CompareMode::InterSample => {
            if batch.len() < 2 {
                return Err(MtlError::invalid(
                    "inter_sample mode needs a batch of >= 2 samples",
                ));
            }
            let task = rng.gen_range(0..net.n_tasks());
            let mut idx: Vec<usize> = batch.to_vec();
            idx.shuffle(rng);
            idx.truncate(cfg.items.min(idx.len()));
            net.task_gradients(data, GradProbe::PerSample { task, samples: &idx })?
        }
    };
    for i in 0..pairs.len() {
        for j in i + 1..pairs.len() {
            acc.record_pair(mode, &pairs[i].backbone, &pairs[j].backbone)?;
        }
    }
    Ok(())
}

/// Δm in percent: (100/T) Σ_t (−1)^{l_t} (M_m − M_b)/M_b, l_t = 1 for
/// higher-is-better metrics. Lower is better.
pub fn delta_m(method: &[f64], baseline: &[f64], higher_better: &[bool]) -> Result<f64> {
    if method.len() != baseline.len() || method.len() != higher_better.len() {
        return Err(MtlError::shape(
            "delta_m",
            format!("{} metrics", method.len()),
            format!("{} baseline / {} flags", baseline.len(), higher_better.len()),
        ));
    }
    if method.is_empty() {
        return Err(MtlError::invalid("delta_m on empty metric lists"));
    }
    let mut acc = 0.0;
    for ((&m, &b), &hb) in method.iter().zip(baseline).zip(higher_better) {
        if b == 0.0 {
            return Err(MtlError::invalid("delta_m: baseline metric is zero"));
        }
        let sign = if hb { -1.0 } else { 1.0 };
        acc += sign * (m - b) / b;
    }
    Ok(100.0 * acc / method.len() as f64)
}

/// δₜ for one task: mean over corruption cells of
/// (−1)^{p} (M_mtl_corr/M_mtl_clean − M_stl_corr/M_stl_clean); negative means
/// the MTL model degraded less. `mtl_corrupted`/`stl_corrupted` hold the
/// flattened C×S grid.
pub fn delta_t(
    mtl_clean: f64,
    stl_clean: f64,
    mtl_corrupted: &[f64],
    stl_corrupted: &[f64],
    higher_better: bool,
) -> Result<f64> {
    if mtl_corrupted.len() != stl_corrupted.len() {
        return Err(MtlError::shape(
            "delta_t",
            format!("{} cells", mtl_corrupted.len()),
            format!("{}", stl_corrupted.len()),
        ));
    }
    if mtl_corrupted.is_empty() {
        return Err(MtlError::invalid("delta_t: empty corruption grid"));
    }
    if mtl_clean == 0.0 || stl_clean == 0.0 {
        return Err(MtlError::invalid("delta_t: clean metric is zero"));
    }
    let sign = if higher_better { -1.0 } else { 1.0 };
    let mut acc = 0.0;
    for (&mc, &sc) in mtl_corrupted.iter().zip(stl_corrupted) {
        acc += sign * (mc / mtl_clean - sc / stl_clean);
    }
    Ok(acc / mtl_corrupted.len() as f64)
}

/// Indices of all non-dominated records. Record j dominates i if j is at
/// least as good on every metric and strictly better on one (orientation per
/// metric). Exact duplicates never dominate each other, so all are retained.
pub fn pareto_front(records: &[Vec<f64>], higher_better: &[bool]) -> Result<Vec<usize>> {
    if records.is_empty() {
        return Err(MtlError::invalid("pareto_front on empty record set"));
    }
    for r in records {
        if r.len() != higher_better.len() {
            return Err(MtlError::shape(
                "pareto_front",
                format!("{} metrics", higher_better.len()),
                format!("{}", r.len()),
            ));
        }
    }
    Ok((0..records.len())
        .filter(|&i| !records.iter().any(|other| dominates(other, &records[i], higher_better)))
        .collect())
}

/// True if a dominates b.
pub fn dominates(a: &[f64], b: &[f64], higher_better: &[bool]) -> bool {
    let mut strictly = false;
    for ((&x, &y), &hb) in a.iter().zip(b).zip(higher_better) {
        let (better, worse) = if hb { (x > y, x < y) } else { (x < y, x > y) };
        if worse {
            return false;
        }
        if better {
            strictly = true;
        }
    }
    strictly
}

/// Cross-group Pareto count: how many records of `group` are not dominated by
/// any record of `reference` (the "PO w.r.t." table column).
pub fn pareto_count_vs(
    group: &[Vec<f64>],
    reference: &[Vec<f64>],
    higher_better: &[bool],
) -> Result<usize> {
    for r in group.iter().chain(reference) {
        if r.len() != higher_better.len() {
            return Err(MtlError::shape(
                "pareto_count_vs",
                format!("{} metrics", higher_better.len()),
                format!("{}", r.len()),
            ));
        }
    }
    Ok(group
        .iter()
        .filter(|g| !reference.iter().any(|r| dominates(r, g, higher_better)))
        .count())
}
