use crate::error::{MtlError, Result};

fn check_len(op: &'static str, params: &[f64], grads: &[f64]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(MtlError::shape(
            op,
            format!("{} params", params.len()),
            format!("{} grads", grads.len()),
        ));
    }
    Ok(())
}

/// Plain gradient descent, θ ← θ − γg.
#[derive(Clone, Debug)]
pub struct Gd {
    pub lr: f64,
}

impl Gd {
    /// The (positive) update vector γg; callers subtract it.
    pub fn update_vector(&self, grads: &[f64]) -> Vec<f64> {
        grads.iter().map(|&g| self.lr * g).collect()
    }

    pub fn step(&self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_len("gd_step", params, grads)?;
        for (p, d) in params.iter_mut().zip(self.update_vector(grads)) {
            *p -= d;
        }
        Ok(())
    }
}

/// Heavy-ball momentum: m ← μm + g; θ ← θ − γm.
#[derive(Clone, Debug)]
pub struct SgdMomentum {
    pub lr: f64,
    pub momentum: f64,
    m: Vec<f64>,
}

impl SgdMomentum {
    pub fn new(lr: f64, momentum: f64) -> Self {
        SgdMomentum {
            lr,
            momentum,
            m: Vec::new(),
        }
    }

    /// Advances the momentum buffer and returns the update γm.
    pub fn update_vector(&mut self, grads: &[f64]) -> Result<Vec<f64>> {
        if self.m.is_empty() {
            self.m = vec![0.0; grads.len()];
        }
        check_len("sgd_momentum_step state", &self.m, grads)?;
        let mut out = vec![0.0; grads.len()];
        for i in 0..grads.len() {
            self.m[i] = self.momentum * self.m[i] + grads[i];
            out[i] = self.lr * self.m[i];
        }
        Ok(out)
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_len("sgd_momentum_step", params, grads)?;
        let delta = self.update_vector(grads)?;
        for (p, d) in params.iter_mut().zip(delta) {
            *p -= d;
        }
        Ok(())
    }
}

/// signSGD with EMA momentum: m ← μm + (1−μ)g; θ ← θ − γ·sign(m), sign(0)=0.
#[derive(Clone, Debug)]
pub struct SignSgdMomentum {
    pub lr: f64,
    pub momentum: f64,
    m: Vec<f64>,
}

impl SignSgdMomentum {
    pub fn new(lr: f64, momentum: f64) -> Self {
        SignSgdMomentum {
            lr,
            momentum,
            m: Vec::new(),
        }
    }

    /// Advances the EMA buffer and returns the update γ·sign(m).
    pub fn update_vector(&mut self, grads: &[f64]) -> Result<Vec<f64>> {
        if self.m.is_empty() {
            self.m = vec![0.0; grads.len()];
        }
        check_len("signsgd_momentum_step state", &self.m, grads)?;
        let mut out = vec![0.0; grads.len()];
        for i in 0..grads.len() {
            self.m[i] = self.momentum * self.m[i] + (1.0 - self.momentum) * grads[i];
            let s = if self.m[i] > 0.0 {
                1.0
            } else if self.m[i] < 0.0 {
                -1.0
            } else {
                0.0
            };
            out[i] = self.lr * s;
        }
        Ok(out)
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_len("signsgd_momentum_step", params, grads)?;
        let delta = self.update_vector(grads)?;
        for (p, d) in params.iter_mut().zip(delta) {
            *p -= d;
        }
        Ok(())
    }
}

/// Adam with bias correction; the step counter increments before correction,
/// so the first step uses 1−β^1. ε sits outside the square root: √v̂ + ε.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn with_defaults(lr: f64) -> Self {
        Adam::new(lr, 0.9, 0.999, 1e-8)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// The (positive) update vector γ·m̂/(√v̂+ε); callers subtract it.
    pub fn update_vector(&mut self, grads: &[f64]) -> Result<Vec<f64>> {
        if self.m.is_empty() {
            self.m = vec![0.0; grads.len()];
            self.v = vec![0.0; grads.len()];
        }
        check_len("adam_step state", &self.m, grads)?;
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut out = vec![0.0; grads.len()];
        for i in 0..grads.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            out[i] = self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(out)
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_len("adam_step", params, grads)?;
        let delta = self.update_vector(grads)?;
        for (p, d) in params.iter_mut().zip(delta) {
            *p -= d;
        }
        Ok(())
    }
}

/// One Adam state per task; every task consumes its own full-length gradient
/// (zeros outside its partitions), and the parameter vector receives the sum
/// of the per-task preconditioned updates. Shared parameters therefore get
/// all T contributions while each head only ever sees its owner's.
#[derive(Clone, Debug)]
pub struct PerTaskAdam {
    states: Vec<Adam>,
}

impl PerTaskAdam {
    pub fn new(n_tasks: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        if n_tasks == 0 {
            return Err(MtlError::invalid("per-task adam needs >= 1 task"));
        }
        Ok(PerTaskAdam {
            states: (0..n_tasks).map(|_| Adam::new(lr, beta1, beta2, eps)).collect(),
        })
    }

    pub fn n_tasks(&self) -> usize {
        self.states.len()
    }

    /// Sum of the per-task Adam update vectors.
    pub fn update_vector(&mut self, per_task_grads: &[Vec<f64>]) -> Result<Vec<f64>> {
        if per_task_grads.len() != self.states.len() {
            return Err(MtlError::shape(
                "per_task_adam_step",
                format!("{} task gradients", self.states.len()),
                format!("{}", per_task_grads.len()),
            ));
        }
        let n = per_task_grads[0].len();
        let mut total = vec![0.0; n];
        for (state, g) in self.states.iter_mut().zip(per_task_grads) {
            check_len("per_task_adam_step", &total, g)?;
            let delta = state.update_vector(g)?;
            for (t, d) in total.iter_mut().zip(delta) {
                *t += d;
            }
        }
        Ok(total)
    }

    pub fn step(&mut self, params: &mut [f64], per_task_grads: &[Vec<f64>]) -> Result<()> {
        let total = self.update_vector(per_task_grads)?;
        check_len("per_task_adam_step", params, &total)?;
        for (p, d) in params.iter_mut().zip(total) {
            *p -= d;
        }
        Ok(())
    }
}

/// Uniform dispatch wrapper for the training loops.
#[derive(Clone, Debug)]
pub enum Optimizer {
    Gd(Gd),
    SgdMomentum(SgdMomentum),
    SignSgdMomentum(SignSgdMomentum),
    Adam(Adam),
    PerTaskAdam(PerTaskAdam),
}

impl Optimizer {
    pub fn name(&self) -> &'static str {
        match self {
            Optimizer::Gd(_) => "gd",
            Optimizer::SgdMomentum(_) => "sgd",
            Optimizer::SignSgdMomentum(_) => "signsgd",
            Optimizer::Adam(_) => "adam",
            Optimizer::PerTaskAdam(_) => "pertask-adam",
        }
    }

    /// True if this optimizer consumes per-task gradients instead of one
    /// combined gradient.
    pub fn is_per_task(&self) -> bool {
        matches!(self, Optimizer::PerTaskAdam(_))
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        match self {
            Optimizer::Gd(o) => o.step(params, grads),
            Optimizer::SgdMomentum(o) => o.step(params, grads),
            Optimizer::SignSgdMomentum(o) => o.step(params, grads),
            Optimizer::Adam(o) => o.step(params, grads),
            Optimizer::PerTaskAdam(_) => Err(MtlError::invalid(
                "per-task adam needs per-task gradients; use step_per_task",
            )),
        }
    }

    pub fn step_per_task(&mut self, params: &mut [f64], per_task: &[Vec<f64>]) -> Result<()> {
        match self {
            Optimizer::PerTaskAdam(o) => o.step(params, per_task),
            _ => Err(MtlError::invalid(format!(
                "{} does not take per-task gradients",
                self.name()
            ))),
        }
    }

    /// Advance state and return the update vector without applying it.
    pub fn update_vector(&mut self, grads: &[f64]) -> Result<Vec<f64>> {
        match self {
            Optimizer::Gd(o) => Ok(o.update_vector(grads)),
            Optimizer::SgdMomentum(o) => o.update_vector(grads),
            Optimizer::SignSgdMomentum(o) => o.update_vector(grads),
            Optimizer::Adam(o) => o.update_vector(grads),
            Optimizer::PerTaskAdam(_) => Err(MtlError::invalid(
                "per-task adam needs per-task gradients; use update_vector_per_task",
            )),
        }
    }

    /// Per-task form of [`Optimizer::update_vector`].
    pub fn update_vector_per_task(&mut self, per_task: &[Vec<f64>]) -> Result<Vec<f64>> {
        match self {
            Optimizer::PerTaskAdam(o) => o.update_vector(per_task),
            _ => Err(MtlError::invalid(format!(
                "{} does not take per-task gradients",
                self.name()
            ))),
        }
    }
}
