use std::collections::BTreeMap;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TaskTargets};
use crate::error::{MtlError, Result};
use crate::tape::{NodeId, ParamId, Tape};
use crate::tensor::Tensor;

/// Layer-width chains, input width included: backbone `[d_in, h1, ..., hk]`,
/// each head `[hk, ..., out_t]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HydraSpec {
    pub backbone: Vec<usize>,
    pub heads: Vec<Vec<usize>>,
    pub slope: f64,
}

impl HydraSpec {
    pub fn validate(&self) -> Result<()> {
        if self.backbone.is_empty() {
            return Err(MtlError::invalid("backbone width chain is empty"));
        }
        if self.heads.is_empty() {
            return Err(MtlError::invalid("at least one head required"));
        }
        let trunk_out = *self.backbone.last().unwrap();
        for (t, head) in self.heads.iter().enumerate() {
            if head.len() < 2 {
                return Err(MtlError::invalid(format!(
                    "head {t} needs at least [in, out] widths"
                )));
            }
            if head[0] != trunk_out {
                return Err(MtlError::invalid(format!(
                    "head {t} input width {} != backbone output width {trunk_out}",
                    head[0]
                )));
            }
        }
        if self
            .backbone
            .iter()
            .chain(self.heads.iter().flatten())
            .any(|&w| w == 0)
        {
            return Err(MtlError::invalid("zero layer width"));
        }
        if !self.slope.is_finite() {
            return Err(MtlError::invalid("non-finite activation slope"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.backbone[0]
    }

    pub fn n_tasks(&self) -> usize {
        self.heads.len()
    }
}

#[derive(Clone, Debug)]
struct LayoutEntry {
    pid: ParamId,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
    /// fan_in of the layer this tensor belongs to (biases share their
    /// weight's), which sets the init range.
    fan_in: usize,
}

/// Shared-backbone multi-head MLP. Parameters live in one flat `Vec<f64>`
/// partitioned as [backbone | head 0 | ... | head T-1]; every tensor (weight
/// or bias) has its own `ParamId` indexing into that layout. LeakyReLU after
/// every layer except each head's final (linear) one.
#[derive(Clone, Debug)]
pub struct HydraNet {
    spec: HydraSpec,
    layout: Vec<LayoutEntry>,
    params: Vec<f64>,
    backbone_range: Range<usize>,
    head_ranges: Vec<Range<usize>>,
}

/// Tape nodes for every parameter tensor, registered once per tape.
pub struct Staged {
    nodes: Vec<NodeId>,
}

/// Flattened backbone/head gradient pair for one task or one sample probe.
#[derive(Clone, Debug)]
pub struct GradPair {
    pub task: usize,
    pub backbone: Vec<f64>,
    pub head: Vec<f64>,
}

/// What `task_gradients` differentiates: one gradient per task at a fixed
/// sample (inter-task probes), per task averaged over a sample set (the
/// batch-mean variant), or one gradient per sample for a fixed task
/// (inter-sample probes).
#[derive(Clone, Copy, Debug)]
pub enum GradProbe<'a> {
    PerTask { sample: usize },
    PerTaskMean { samples: &'a [usize] },
    PerSample { task: usize, samples: &'a [usize] },
}

impl HydraNet {
    /// Init is uniform(-a, a), a = sqrt(1/fan_in), for weights and biases,
    /// drawn layer by layer (weights row-major, then bias) from a ChaCha8
    /// stream — same seed, same net, bit for bit.
    pub fn new(spec: HydraSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut layout = Vec::new();
        let mut offset = 0usize;
        let push_chain = |chain: &[usize], layout: &mut Vec<LayoutEntry>, offset: &mut usize| {
            for win in chain.windows(2) {
                let (fan_in, fan_out) = (win[0], win[1]);
                for shape in [vec![fan_in, fan_out], vec![1, fan_out]] {
                    let len: usize = shape.iter().product();
                    layout.push(LayoutEntry {
                        pid: ParamId(layout.len()),
                        shape,
                        offset: *offset,
                        len,
                        fan_in,
                    });
                    *offset += len;
                }
            }
        };
        push_chain(&spec.backbone, &mut layout, &mut offset);
        let backbone_range = 0..offset;
        let mut head_ranges = Vec::with_capacity(spec.heads.len());
        for head in &spec.heads {
            let start = offset;
            push_chain(head, &mut layout, &mut offset);
            head_ranges.push(start..offset);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; offset];
        for entry in &layout {
            let a = (1.0 / entry.fan_in as f64).sqrt();
            for slot in params[entry.offset..entry.offset + entry.len].iter_mut() {
                *slot = rng.gen_range(-a..a);
            }
        }

        Ok(HydraNet {
            spec,
            layout,
            params,
            backbone_range,
            head_ranges,
        })
    }

    pub fn spec(&self) -> &HydraSpec {
        &self.spec
    }

    pub fn n_tasks(&self) -> usize {
        self.spec.n_tasks()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Number of parameter tensors (ParamIds 0..n are taken by the net;
    /// callers adding trainable extras continue from here).
    pub fn n_param_tensors(&self) -> usize {
        self.layout.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(MtlError::shape(
                "set_params",
                format!("{}", self.params.len()),
                format!("{}", values.len()),
            ));
        }
        self.params.copy_from_slice(values);
        Ok(())
    }

    /// Flat range of the shared backbone within the parameter vector.
    pub fn backbone_range(&self) -> Range<usize> {
        self.backbone_range.clone()
    }

    /// Flat range of head `t`.
    pub fn head_range(&self, task: usize) -> Result<Range<usize>> {
        self.head_ranges
            .get(task)
            .cloned()
            .ok_or_else(|| MtlError::invalid(format!("no head {task}")))
    }

    /// Register every parameter tensor on `tape` exactly once.
    pub fn stage(&self, tape: &mut Tape) -> Staged {
        let nodes = self
            .layout
            .iter()
            .map(|e| {
                let t = Tensor::new(
                    e.shape.clone(),
                    self.params[e.offset..e.offset + e.len].to_vec(),
                )
                .expect("layout shapes are internally consistent");
                tape.param(e.pid, t)
            })
            .collect();
        Staged { nodes }
    }

    /// One forward pass for one sample; returns the T head-output nodes.
    /// The backbone subgraph is built once and shared by every head.
    pub fn forward_staged(
        &self,
        tape: &mut Tape,
        staged: &Staged,
        x: &[f64],
    ) -> Result<Vec<NodeId>> {
        if x.len() != self.spec.input_dim() {
            return Err(MtlError::shape(
                "forward",
                format!("input width {}", self.spec.input_dim()),
                format!("{}", x.len()),
            ));
        }
        let mut h = tape.constant(Tensor::row(x.to_vec()));
        let mut li = 0usize; // index into layout, walked in construction order
        for _ in self.spec.backbone.windows(2) {
            h = self.layer(tape, staged, &mut li, h, true)?;
        }
        let trunk = h;
        let mut outputs = Vec::with_capacity(self.n_tasks());
        for head in &self.spec.heads {
            let mut g = trunk;
            let n_layers = head.len() - 1;
            for l in 0..n_layers {
                let last = l == n_layers - 1;
                g = self.layer(tape, staged, &mut li, g, !last)?;
            }
            outputs.push(g);
        }
        Ok(outputs)
    }

    fn layer(
        &self,
        tape: &mut Tape,
        staged: &Staged,
        li: &mut usize,
        input: NodeId,
        activate: bool,
    ) -> Result<NodeId> {
        let w = staged.nodes[*li];
        let b = staged.nodes[*li + 1];
        *li += 2;
        let z = tape.matmul(input, w)?;
        let z = tape.add(z, b)?;
        if activate {
            tape.leaky_relu(z, self.spec.slope)
        } else {
            Ok(z)
        }
    }

    /// Forward values only, on a scratch tape.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let staged = self.stage(&mut tape);
        let outs = self.forward_staged(&mut tape, &staged, x)?;
        Ok(outs.into_iter().map(|n| tape.value(n).clone()).collect())
    }

    /// Scalar loss node for `task` on `samples`: mean over the per-sample
    /// losses (L1 for regression targets, softmax cross-entropy for labels).
    /// `forwards[i]` must hold the head outputs of `samples[i]`.
    pub fn task_loss_node(
        &self,
        tape: &mut Tape,
        forwards: &[Vec<NodeId>],
        data: &Dataset,
        task: usize,
        samples: &[usize],
    ) -> Result<NodeId> {
        if samples.is_empty() {
            return Err(MtlError::invalid("empty sample set"));
        }
        if task >= data.n_tasks() {
            return Err(MtlError::invalid(format!("task {task} out of range")));
        }
        let mut acc: Option<NodeId> = None;
        for (fi, &si) in samples.iter().enumerate() {
            let out = forwards[fi][task];
            let loss = match &data.targets[task] {
                TaskTargets::Regression(ys) => {
                    let y = *ys.get(si).ok_or_else(|| {
                        MtlError::invalid(format!("sample {si} out of range"))
                    })?;
                    let width = tape.value(out).len();
                    let target = tape.constant(Tensor::new(vec![1, width], vec![y; width])?);
                    tape.l1_loss(out, target)?
                }
                TaskTargets::Classification(ys) => {
                    let y = *ys.get(si).ok_or_else(|| {
                        MtlError::invalid(format!("sample {si} out of range"))
                    })?;
                    tape.softmax_cross_entropy(out, y)?
                }
            };
            acc = Some(match acc {
                None => loss,
                Some(a) => tape.add(a, loss)?,
            });
        }
        let total = acc.unwrap();
        let inv_n = tape.constant(Tensor::scalar(1.0 / samples.len() as f64));
        tape.mul(total, inv_n)
    }

    /// Build per-task mean losses over `samples` on one tape, sharing a
    /// single forward pass per sample across all tasks. Returns (staged
    /// params, one scalar loss node per task).
    pub fn batch_losses(
        &self,
        tape: &mut Tape,
        data: &Dataset,
        samples: &[usize],
    ) -> Result<(Staged, Vec<NodeId>)> {
        if samples.is_empty() {
            return Err(MtlError::invalid("empty batch"));
        }
        let staged = self.stage(tape);
        let mut forwards = Vec::with_capacity(samples.len());
        for &si in samples {
            let x = data
                .inputs
                .get(si)
                .ok_or_else(|| MtlError::invalid(format!("sample {si} out of range")))?;
            forwards.push(self.forward_staged(tape, &staged, x)?);
        }
        let mut losses = Vec::with_capacity(self.n_tasks());
        for t in 0..self.n_tasks() {
            losses.push(self.task_loss_node(tape, &forwards, data, t, samples)?);
        }
        Ok((staged, losses))
    }

    /// Flatten a backward() gradient map into the full parameter layout;
    /// parameters missing from the map contribute zeros.
    pub fn flatten(&self, grads: &BTreeMap<ParamId, Tensor>) -> Vec<f64> {
        let mut flat = vec![0.0; self.params.len()];
        for e in &self.layout {
            if let Some(g) = grads.get(&e.pid) {
                flat[e.offset..e.offset + e.len].copy_from_slice(g.data());
            }
        }
        flat
    }

    /// Per-task or per-sample flattened gradients for the similarity
    /// diagnostics. Every returned pair carries the backbone slice and the
    /// probed task's head slice.
    pub fn task_gradients(&self, data: &Dataset, probe: GradProbe<'_>) -> Result<Vec<GradPair>> {
        if data.is_empty() {
            return Err(MtlError::invalid("empty batch"));
        }
        let single = |task: usize, samples: &[usize]| -> Result<GradPair> {
            let mut tape = Tape::new();
            let staged = self.stage(&mut tape);
            let mut forwards = Vec::with_capacity(samples.len());
            for &si in samples {
                let x = data
                    .inputs
                    .get(si)
                    .ok_or_else(|| MtlError::invalid(format!("sample {si} out of range")))?;
                forwards.push(self.forward_staged(&mut tape, &staged, x)?);
            }
            let loss = self.task_loss_node(&mut tape, &forwards, data, task, samples)?;
            let flat = self.flatten(&tape.backward(loss)?);
            Ok(GradPair {
                task,
                backbone: flat[self.backbone_range.clone()].to_vec(),
                head: flat[self.head_ranges[task].clone()].to_vec(),
            })
        };
        match probe {
            GradProbe::PerTask { sample } => (0..self.n_tasks())
                .map(|t| single(t, &[sample]))
                .collect(),
            GradProbe::PerTaskMean { samples } => {
                if samples.is_empty() {
                    return Err(MtlError::invalid("empty sample set"));
                }
                (0..self.n_tasks()).map(|t| single(t, samples)).collect()
            }
            GradProbe::PerSample { task, samples } => {
                if task >= self.n_tasks() {
                    return Err(MtlError::invalid(format!("task {task} out of range")));
                }
                if samples.is_empty() {
                    return Err(MtlError::invalid("empty sample set"));
                }
                samples.iter().map(|&s| single(task, &[s])).collect()
            }
        }
    }
}
