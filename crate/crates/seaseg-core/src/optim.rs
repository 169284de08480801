//! AdamW with decoupled weight decay, the step and SGDR learning-rate
//! schedules, and stochastic weight averaging.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::elem::Elem;
use crate::nn::{Binding, ParamStore};
use crate::tensor::Gradients;
#[allow(unused_imports)]
use num_traits::Float;

#[derive(Debug, Clone, PartialEq)]
pub enum OptimError {
    NonFiniteGradient { param: String },
    MissingGradient { param: String },
    ShapeMismatch { param: String },
    BadArg(String),
}

impl core::fmt::Display for OptimError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            OptimError::NonFiniteGradient { param } => {
                write!(f, "non-finite gradient for parameter {param}")
            }
            OptimError::MissingGradient { param } => {
                write!(f, "no gradient produced for parameter {param}")
            }
            OptimError::ShapeMismatch { param } => {
                write!(f, "gradient shape mismatch for parameter {param}")
            }
            OptimError::BadArg(msg) => write!(f, "{msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for OptimError {}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global-norm gradient clipping; off by default.
    pub clip_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            clip_norm: None,
        }
    }
}

/// AdamW state: per-parameter first/second moments plus the step count.
/// The update is `θ ← θ − lr·m̂/(√v̂+ε) − lr·λ·θ` with decoupled decay.
pub struct AdamW<T> {
    pub cfg: AdamWConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Elem> AdamW<T> {
    pub fn new(store: &ParamStore<T>, cfg: AdamWConfig) -> Self {
        AdamW {
            cfg,
            step: 0,
            m: store.iter().map(|p| vec![T::zero(); p.data.len()]).collect(),
            v: store.iter().map(|p| vec![T::zero(); p.data.len()]).collect(),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Vec<T>], &[Vec<T>]) {
        (&self.m, &self.v)
    }

    /// Restores optimizer state (for checkpoint resume).
    pub fn restore(&mut self, step: u64, m: Vec<Vec<T>>, v: Vec<Vec<T>>) -> Result<(), OptimError> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(OptimError::BadArg(format!(
                "moment count {} does not match parameter count {}",
                m.len(),
                self.m.len()
            )));
        }
        self.step = step;
        self.m = m;
        self.v = v;
        Ok(())
    }

    /// One update over every parameter in the store, reading gradients
    /// through the binding of the current tape.
    pub fn step(
        &mut self,
        store: &mut ParamStore<T>,
        binding: &Binding,
        grads: &Gradients<T>,
    ) -> Result<(), OptimError> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        let lr = T::from_f64(self.cfg.lr);
        let b1 = T::from_f64(self.cfg.beta1);
        let b2 = T::from_f64(self.cfg.beta2);
        let one_m_b1 = T::from_f64(1.0 - self.cfg.beta1);
        let one_m_b2 = T::from_f64(1.0 - self.cfg.beta2);
        let inv_bc1 = T::from_f64(1.0 / bc1);
        let inv_bc2 = T::from_f64(1.0 / bc2);
        let eps = T::from_f64(self.cfg.eps);
        let decay = T::from_f64(self.cfg.lr * self.cfg.weight_decay);

        // finiteness check plus (optionally) the global norm for clipping
        let mut sq_norm = 0.0f64;
        for i in 0..store.len() {
            let g = grads
                .get(binding.ids[i])
                .ok_or_else(|| OptimError::MissingGradient {
                    param: store.get(i).name.clone(),
                })?;
            if g.len() != store.get(i).data.len() {
                return Err(OptimError::ShapeMismatch {
                    param: store.get(i).name.clone(),
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(OptimError::NonFiniteGradient {
                    param: store.get(i).name.clone(),
                });
            }
            if self.cfg.clip_norm.is_some() {
                for &gv in g {
                    let f = gv.to_f64();
                    sq_norm += f * f;
                }
            }
        }
        let clip_scale = match self.cfg.clip_norm {
            Some(limit) if sq_norm.sqrt() > limit => {
                T::from_f64(limit / sq_norm.sqrt())
            }
            _ => T::one(),
        };

        for i in 0..store.len() {
            let g = grads.get(binding.ids[i]).expect("checked above");
            let p = store.get_mut(i);
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for k in 0..p.data.len() {
                let gk = g[k] * clip_scale;
                m[k] = b1 * m[k] + one_m_b1 * gk;
                v[k] = b2 * v[k] + one_m_b2 * gk * gk;
                let m_hat = m[k] * inv_bc1;
                let v_hat = v[k] * inv_bc2;
                let theta = p.data[k];
                p.data[k] = theta - lr * m_hat / (v_hat.sqrt() + eps) - decay * theta;
            }
        }
        Ok(())
    }
}

// ── learning-rate schedules ──────────────────────────────────────────

/// The 60-epoch step schedule: 1e-3 for epochs 0-19, 1e-4 for 20-39,
/// 1e-5 for 40-59.
pub fn step_lr(epoch: usize) -> Result<f64, OptimError> {
    if epoch >= 60 {
        return Err(OptimError::BadArg(format!(
            "step_lr defined for epochs 0..60, got {epoch}"
        )));
    }
    Ok(1e-3 * 0.1f64.powi((epoch / 20) as i32))
}

/// Step decay generalized to arbitrary phase lengths: the learning rate
/// drops by `factor` every `period` epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub initial: f64,
    pub factor: f64,
    pub period: usize,
}

impl StepSchedule {
    /// The configuration used in phase one of training.
    pub fn paper() -> Self {
        StepSchedule {
            initial: 1e-3,
            factor: 0.1,
            period: 20,
        }
    }

    pub fn value(&self, epoch: usize) -> f64 {
        self.initial * self.factor.powi((epoch / self.period.max(1)) as i32)
    }
}

/// Cosine schedule with warm restarts:
/// `min + (max - min)/2 * (1 + cos(pi * t / cycle))`, restarting at each
/// cycle boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdrSchedule {
    pub max_lr: f64,
    pub min_lr: f64,
    pub cycle: f64,
}

impl Default for SgdrSchedule {
    fn default() -> Self {
        SgdrSchedule {
            max_lr: 1e-5,
            min_lr: 1e-7,
            cycle: 6.0,
        }
    }
}

impl SgdrSchedule {
    /// Learning rate at `t` epochs since the start of the phase.
    pub fn value(&self, t: f64) -> f64 {
        let phase = ((t % self.cycle) + self.cycle) % self.cycle;
        self.min_lr
            + 0.5 * (self.max_lr - self.min_lr) * (1.0 + (core::f64::consts::PI * phase / self.cycle).cos())
    }
}

/// Backwards-cosine helper matching the spec signature: epoch position
/// within a single 6-epoch cycle.
pub fn sgdr_lr(epoch_in_cycle: f64) -> f64 {
    SgdrSchedule::default().value(epoch_in_cycle)
}

// ── stochastic weight averaging ──────────────────────────────────────

/// Running arithmetic mean of absorbed weight snapshots.
pub struct SwaState<T> {
    avg: Vec<Vec<T>>,
    count: u64,
}

impl<T: Elem> SwaState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        SwaState {
            avg: store.iter().map(|p| vec![T::zero(); p.data.len()]).collect(),
            count: 0,
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn average(&self) -> &[Vec<T>] {
        &self.avg
    }

    pub fn restore(&mut self, avg: Vec<Vec<T>>, count: u64) {
        self.avg = avg;
        self.count = count;
    }

    /// `avg ← avg + (w − avg)/(n+1)`.
    pub fn absorb(&mut self, store: &ParamStore<T>) -> Result<(), OptimError> {
        if store.len() != self.avg.len() {
            return Err(OptimError::BadArg(format!(
                "snapshot has {} parameters, average has {}",
                store.len(),
                self.avg.len()
            )));
        }
        self.count += 1;
        let inv = T::from_f64(1.0 / self.count as f64);
        for (slot, p) in self.avg.iter_mut().zip(store.iter()) {
            for (a, &w) in slot.iter_mut().zip(&p.data) {
                *a = *a + (w - *a) * inv;
            }
        }
        Ok(())
    }

    /// Writes the averaged weights back into a parameter store.
    pub fn install(&self, store: &mut ParamStore<T>) -> Result<(), OptimError> {
        if store.len() != self.avg.len() {
            return Err(OptimError::BadArg(
                "parameter count mismatch installing SWA average".into(),
            ));
        }
        for i in 0..store.len() {
            let p = store.get_mut(i);
            p.data.copy_from_slice(&self.avg[i]);
        }
        Ok(())
    }
}
