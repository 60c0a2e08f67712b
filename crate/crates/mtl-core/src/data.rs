use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MtlError, Result};

/// Loss family a task trains with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    RegressionL1,
    ClassificationCe { classes: usize },
}

impl TaskKind {
    /// Width of the head output layer serving this task.
    pub fn output_dim(&self) -> usize {
        match self {
            TaskKind::RegressionL1 => 1,
            TaskKind::ClassificationCe { classes } => *classes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Multiplies the regression target, which makes the task's L1 loss scale
    /// roughly proportionally at init — the knob behind every loss-scale
    /// disparity experiment.
    pub scale: f64,
    /// Regression: std of additive Gaussian label noise. Classification:
    /// probability of replacing the label with a uniformly random class.
    pub noise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub input_dim: usize,
    pub tasks: Vec<TaskSpec>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// All tasks reuse task 0's target map: the "same quantity in different
    /// units" setup of the invariance experiments.
    pub shared_map: bool,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(MtlError::invalid("input_dim must be >= 1"));
        }
        if self.tasks.is_empty() {
            return Err(MtlError::invalid("at least one task required"));
        }
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return Err(MtlError::invalid("split sizes must be >= 1"));
        }
        for (t, task) in self.tasks.iter().enumerate() {
            if !(task.scale > 0.0) {
                return Err(MtlError::invalid(format!(
                    "task {t}: scale must be > 0, got {}",
                    task.scale
                )));
            }
            if task.noise < 0.0 {
                return Err(MtlError::invalid(format!("task {t}: negative noise")));
            }
            if let TaskKind::ClassificationCe { classes } = task.kind {
                if classes < 2 {
                    return Err(MtlError::invalid(format!(
                        "task {t}: classification needs >= 2 classes"
                    )));
                }
            }
        }
        if self.shared_map {
            let k0 = self.tasks[0].kind;
            if self.tasks.iter().any(|t| t.kind != k0) {
                return Err(MtlError::invalid("shared_map requires identical task kinds"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TaskTargets {
    Regression(Vec<f64>),
    Classification(Vec<usize>),
}

impl TaskTargets {
    pub fn len(&self) -> usize {
        match self {
            TaskTargets::Regression(v) => v.len(),
            TaskTargets::Classification(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self, classes_hint: usize) -> TaskKind {
        match self {
            TaskTargets::Regression(_) => TaskKind::RegressionL1,
            TaskTargets::Classification(_) => TaskKind::ClassificationCe {
                classes: classes_hint,
            },
        }
    }
}

/// One split of samples: `targets[t]` runs parallel to `inputs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<TaskTargets>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn n_tasks(&self) -> usize {
        self.targets.len()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.len())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Per-task map underlying the targets: y = scale * (w.x + tanh(v.x)) for
/// regression, argmax(M x) for classification.
#[derive(Clone, Debug)]
enum TargetMap {
    Regression { w: Vec<f64>, v: Vec<f64> },
    Classification { rows: Vec<Vec<f64>> },
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (&x, &y)| acc + x * y)
}

/// Deterministic generation: all randomness flows from one ChaCha8 stream in a
/// fixed draw order (maps first, then per sample: inputs, then one noise draw
/// per task), so a seed pins the dataset bitwise.
pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<Splits> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = spec.input_dim;

    let uniform = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    };

    let mut maps: Vec<TargetMap> = Vec::with_capacity(spec.tasks.len());
    for (t, task) in spec.tasks.iter().enumerate() {
        if spec.shared_map && t > 0 {
            maps.push(maps[0].clone());
            continue;
        }
        maps.push(match task.kind {
            TaskKind::RegressionL1 => TargetMap::Regression {
                w: uniform(&mut rng, d),
                v: uniform(&mut rng, d),
            },
            TaskKind::ClassificationCe { classes } => TargetMap::Classification {
                rows: (0..classes).map(|_| uniform(&mut rng, d)).collect(),
            },
        });
    }

    let total = spec.n_train + spec.n_val + spec.n_test;
    let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(total);
    let mut targets: Vec<TaskTargets> = spec
        .tasks
        .iter()
        .map(|t| match t.kind {
            TaskKind::RegressionL1 => TaskTargets::Regression(Vec::with_capacity(total)),
            TaskKind::ClassificationCe { .. } => {
                TaskTargets::Classification(Vec::with_capacity(total))
            }
        })
        .collect();

    for _ in 0..total {
        let x = uniform(&mut rng, d);
        for (t, task) in spec.tasks.iter().enumerate() {
            match (&maps[t], &mut targets[t]) {
                (TargetMap::Regression { w, v }, TaskTargets::Regression(ys)) => {
                    let eps: f64 = rng.sample(StandardNormal);
                    ys.push(task.scale * (dot(w, &x) + dot(v, &x).tanh()) + task.noise * eps);
                }
                (TargetMap::Classification { rows }, TaskTargets::Classification(ys)) => {
                    let scores: Vec<f64> = rows.iter().map(|r| dot(r, &x)).collect();
                    let mut best = 0;
                    for (i, &s) in scores.iter().enumerate() {
                        if s > scores[best] {
                            best = i;
                        }
                    }
                    // Draw unconditionally to keep the stream layout fixed.
                    let u: f64 = rng.gen_range(0.0..1.0);
                    let label = if u < task.noise {
                        rng.gen_range(0..rows.len())
                    } else {
                        best
                    };
                    ys.push(label);
                }
                _ => unreachable!("map/target kinds are built from the same spec"),
            }
        }
        inputs.push(x);
    }

    let take = |n: usize, inputs: &mut Vec<Vec<f64>>, targets: &mut Vec<TaskTargets>| {
        let xs: Vec<Vec<f64>> = inputs.drain(..n).collect();
        let ts: Vec<TaskTargets> = targets
            .iter_mut()
            .map(|t| match t {
                TaskTargets::Regression(v) => TaskTargets::Regression(v.drain(..n).collect()),
                TaskTargets::Classification(v) => {
                    TaskTargets::Classification(v.drain(..n).collect())
                }
            })
            .collect();
        Dataset {
            inputs: xs,
            targets: ts,
        }
    };

    let train = take(spec.n_train, &mut inputs, &mut targets);
    let val = take(spec.n_val, &mut inputs, &mut targets);
    let test = take(spec.n_test, &mut inputs, &mut targets);
    Ok(Splits { train, val, test })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorruptionMode {
    GaussianNoise,
    InputDropout,
    Blur1d,
}

impl CorruptionMode {
    pub const ALL: [CorruptionMode; 3] = [
        CorruptionMode::GaussianNoise,
        CorruptionMode::InputDropout,
        CorruptionMode::Blur1d,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CorruptionMode::GaussianNoise => "gaussian_noise",
            CorruptionMode::InputDropout => "input_dropout",
            CorruptionMode::Blur1d => "blur_1d",
        }
    }
}

impl FromStr for CorruptionMode {
    type Err = MtlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_noise" => Ok(CorruptionMode::GaussianNoise),
            "input_dropout" => Ok(CorruptionMode::InputDropout),
            "blur_1d" => Ok(CorruptionMode::Blur1d),
            other => Err(MtlError::invalid(format!("unknown corruption mode {other:?}"))),
        }
    }
}

/// Perturb inputs, leave labels alone. Strength is monotone in severity:
/// gaussian noise has std 0.05*s, dropout zeroes each coordinate with
/// probability 0.1*s, blur applies s passes of a [1,2,1]/4 smoothing kernel.
pub fn corrupt(data: &Dataset, mode: CorruptionMode, severity: u32, seed: u64) -> Result<Dataset> {
    if !(1..=5).contains(&severity) {
        return Err(MtlError::invalid(format!(
            "severity must be in 1..=5, got {severity}"
        )));
    }
    if mode == CorruptionMode::Blur1d && data.input_dim() < 2 {
        return Err(MtlError::invalid("blur_1d needs input_dim >= 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = severity as f64;
    let inputs = data
        .inputs
        .iter()
        .map(|x| match mode {
            CorruptionMode::GaussianNoise => x
                .iter()
                .map(|&v| v + 0.05 * s * rng.sample::<f64, _>(StandardNormal))
                .collect(),
            CorruptionMode::InputDropout => x
                .iter()
                .map(|&v| {
                    let u: f64 = rng.gen_range(0.0..1.0);
                    if u < 0.1 * s {
                        0.0
                    } else {
                        v
                    }
                })
                .collect(),
            CorruptionMode::Blur1d => {
                let mut cur = x.clone();
                let n = cur.len();
                for _ in 0..severity {
                    let mut next = vec![0.0; n];
                    for i in 0..n {
                        let left = cur[if i == 0 { 1 } else { i - 1 }];
                        let right = cur[if i == n - 1 { n - 2 } else { i + 1 }];
                        next[i] = 0.25 * left + 0.5 * cur[i] + 0.25 * right;
                    }
                    cur = next;
                }
                cur
            }
        })
        .collect();
    Ok(Dataset {
        inputs,
        targets: data.targets.clone(),
    })
}

/// One row per sample: `x0..x{d-1}`, then `t{i}_target` (regression) or
/// `t{i}_label` (classification) per task. Floats use Rust's shortest
/// round-trip formatting, so write-then-read is lossless.
pub fn to_csv(data: &Dataset) -> String {
    let d = data.input_dim();
    let mut out = String::new();
    let mut header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
    for (t, targets) in data.targets.iter().enumerate() {
        header.push(match targets {
            TaskTargets::Regression(_) => format!("t{t}_target"),
            TaskTargets::Classification(_) => format!("t{t}_label"),
        });
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..data.len() {
        let mut row = String::new();
        for (j, v) in data.inputs[i].iter().enumerate() {
            if j > 0 {
                row.push(',');
            }
            let _ = write!(row, "{v}");
        }
        for targets in &data.targets {
            match targets {
                TaskTargets::Regression(ys) => {
                    let _ = write!(row, ",{}", ys[i]);
                }
                TaskTargets::Classification(ys) => {
                    let _ = write!(row, ",{}", ys[i]);
                }
            }
        }
        out.push_str(&row);
        out.push('\n');
    }
    out
}

pub fn from_csv(text: &str) -> Result<Dataset> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| MtlError::invalid("empty dataset csv"))?;
    let cols: Vec<&str> = header.split(',').collect();
    let d = cols.iter().take_while(|c| c.starts_with('x')).count();
    if d == 0 {
        return Err(MtlError::Parse {
            location: "header".into(),
            message: "no input columns".into(),
        });
    }
    let mut targets: Vec<TaskTargets> = Vec::new();
    for col in &cols[d..] {
        if col.ends_with("_target") {
            targets.push(TaskTargets::Regression(Vec::new()));
        } else if col.ends_with("_label") {
            targets.push(TaskTargets::Classification(Vec::new()));
        } else {
            return Err(MtlError::Parse {
                location: "header".into(),
                message: format!("unrecognized column {col:?}"),
            });
        }
    }
    let mut inputs = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(MtlError::Parse {
                location: format!("line {}", lineno + 2),
                message: format!("expected {} fields, got {}", cols.len(), fields.len()),
            });
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| MtlError::Parse {
                location: format!("line {}", lineno + 2),
                message: format!("bad float {s:?}"),
            })
        };
        let x: Vec<f64> = fields[..d]
            .iter()
            .map(|s| parse_f(s))
            .collect::<Result<_>>()?;
        for (t, field) in fields[d..].iter().enumerate() {
            match &mut targets[t] {
                TaskTargets::Regression(v) => v.push(parse_f(field)?),
                TaskTargets::Classification(v) => v.push(field.parse().map_err(|_| {
                    MtlError::Parse {
                        location: format!("line {}", lineno + 2),
                        message: format!("bad label {field:?}"),
                    }
                })?),
            }
        }
        inputs.push(x);
    }
    Ok(Dataset { inputs, targets })
}

pub fn write_csv(data: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, to_csv(data))?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Dataset> {
    from_csv(&std::fs::read_to_string(path)?)
}
