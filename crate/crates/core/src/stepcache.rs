//! Step-level prediction cache.
//!
//! After a warmup of full steps, the sampler runs a full forward every
//! `delta` steps. Steps in between reuse the two most recent full predictions
//! `delta` apart and extrapolate linearly:
//! `near + lambda * (near - far)` with `lambda = (step - near_step) / delta`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Matrix;

pub const DEFAULT_DELTA: usize = 2;
pub const DEFAULT_WARMUP: usize = 5;

/// FLOPs per element of one extrapolation (subtract, multiply, add).
pub const EXTRAPOLATION_FLOPS_PER_ELEMENT: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepCacheConfig {
    pub delta: usize,
    pub warmup: usize,
    pub total_steps: usize,
}

impl StepCacheConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::config("total steps must be at least 1"));
        }
        if self.delta == 0 {
            return Err(Error::config("refresh interval must be at least 1"));
        }
        if self.delta > 1 && self.warmup + 2 > self.total_steps {
            return Err(Error::config(format!(
                "warmup {} leaves fewer than two steps of {} for cache endpoints",
                self.warmup, self.total_steps
            )));
        }
        Ok(())
    }

    pub fn enabled(&self) -> bool {
        self.delta > 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum StepLabel {
    Full,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepSchedule {
    labels: Vec<StepLabel>,
    delta: usize,
    warmup: usize,
}

impl StepSchedule {
    pub fn labels(&self) -> &[StepLabel] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn delta(&self) -> usize {
        self.delta
    }

    pub fn warmup(&self) -> usize {
        self.warmup
    }

    pub fn label(&self, step: usize) -> Result<StepLabel> {
        self.labels.get(step).copied().ok_or_else(|| {
            Error::Schedule(format!("step {step} outside a {}-step schedule", self.len()))
        })
    }

    pub fn full_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == StepLabel::Full).count()
    }

    pub fn skip_count(&self) -> usize {
        self.len() - self.full_count()
    }

    pub fn skip_ratio(&self) -> f64 {
        self.skip_count() as f64 / self.len() as f64
    }

    /// The most recent FULL step before `step`.
    pub fn last_full_before(&self, step: usize) -> Option<usize> {
        (0..step.min(self.len())).rev().find(|&i| self.labels[i] == StepLabel::Full)
    }

    /// Checks warmup coverage and that every SKIP step has the endpoints it
    /// extrapolates from plus a FULL step no more than `delta` after them.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Schedule(msg));
        if let Some(i) = (0..self.warmup.min(self.len())).find(|&i| self.labels[i] != StepLabel::Full) {
            return fail(format!("warmup step {i} is not FULL"));
        }
        for (s, &label) in self.labels.iter().enumerate() {
            if label != StepLabel::Skip {
                continue;
            }
            let Some(near) = self.last_full_before(s) else {
                return fail(format!("SKIP step {s} has no earlier FULL step"));
            };
            if near < self.delta || self.labels[near - self.delta] != StepLabel::Full {
                return fail(format!("SKIP step {s} lacks a FULL step {} before {near}", self.delta));
            }
            if s - near >= self.delta {
                return fail(format!("SKIP step {s} is {} steps past its endpoint", s - near));
            }
            let upper = (near + self.delta).min(self.len() - 1);
            if !(s + 1..=upper).any(|j| self.labels[j] == StepLabel::Full) {
                return fail(format!("SKIP step {s} has no closing FULL step"));
            }
        }
        Ok(())
    }

    pub fn dump(&self) -> ScheduleDump {
        ScheduleDump {
            total_steps: self.len(),
            warmup: self.warmup,
            delta: self.delta,
            labels: self.labels.clone(),
            skip_ratio: self.skip_ratio(),
            full_count: self.full_count(),
            skip_count: self.skip_count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDump {
    #[serde(rename = "T")]
    pub total_steps: usize,
    #[serde(rename = "T_w")]
    pub warmup: usize,
    pub delta: usize,
    pub labels: Vec<StepLabel>,
    pub skip_ratio: f64,
    pub full_count: usize,
    pub skip_count: usize,
}

pub fn plan_schedule(cfg: &StepCacheConfig) -> Result<StepSchedule> {
    plan_schedule_with_forced(cfg, &[])
}

/// Like [`plan_schedule`], with extra steps that must run a full forward.
/// Forced steps past the end are ignored.
pub fn plan_schedule_with_forced(cfg: &StepCacheConfig, forced: &[usize]) -> Result<StepSchedule> {
    cfg.validate()?;
    let (t, delta, warmup) = (cfg.total_steps, cfg.delta, cfg.warmup);
    let candidate_full: Vec<bool> = (0..t)
        .map(|i| i < warmup || (i - warmup) % delta == 0 || forced.contains(&i))
        .collect();
    let mut labels = Vec::with_capacity(t);
    let mut last_full: Option<usize> = None;
    for i in 0..t {
        let skip = !candidate_full[i]
            && last_full.is_some_and(|near| {
                near >= delta
                    && labels[near - delta] == StepLabel::Full
                    && i - near < delta
                    && (i + 1..=(near + delta).min(t - 1)).any(|j| candidate_full[j])
            });
        if skip {
            labels.push(StepLabel::Skip);
        } else {
            labels.push(StepLabel::Full);
            last_full = Some(i);
        }
    }
    let schedule = StepSchedule {
        labels,
        delta,
        warmup,
    };
    schedule.check_invariants()?;
    Ok(schedule)
}

/// Recent FULL predictions, enough to supply a `near`/`far` pair exactly
/// `delta` steps apart.
#[derive(Debug, Clone)]
pub struct StepCacheState {
    delta: usize,
    history: VecDeque<(usize, Matrix)>,
}

impl StepCacheState {
    pub fn new(delta: usize) -> Self {
        Self {
            delta,
            history: VecDeque::new(),
        }
    }

    pub fn record(&mut self, step: usize, prediction: Matrix) {
        self.history.push_back((step, prediction));
        while self
            .history
            .front()
            .is_some_and(|(s, _)| s + self.delta < step)
        {
            self.history.pop_front();
        }
    }

    /// Step of the most recent FULL prediction.
    pub fn tau(&self) -> Option<usize> {
        self.history.back().map(|(s, _)| *s)
    }

    pub fn near(&self) -> Option<&Matrix> {
        self.history.back().map(|(_, m)| m)
    }

    pub fn far(&self) -> Option<&Matrix> {
        let tau = self.tau()?;
        let target = tau.checked_sub(self.delta)?;
        self.history
            .iter()
            .find(|(s, _)| *s == target)
            .map(|(_, m)| m)
    }

    pub fn is_valid(&self) -> bool {
        matches!((self.near(), self.far()), (Some(n), Some(f)) if n.shape() == f.shape())
    }

    pub fn clear(&mut self) {
        self.history.clear();
    }
}

/// `near + lambda * (near - far)` with `lambda = (step - tau) / delta`.
pub fn extrapolate(state: &StepCacheState, step: usize) -> Result<Matrix> {
    let (Some(tau), Some(near), Some(far)) = (state.tau(), state.near(), state.far()) else {
        return Err(Error::StepCache(
            "extrapolation needs two FULL predictions one interval apart".into(),
        ));
    };
    if near.shape() != far.shape() {
        return Err(Error::StepCache(format!(
            "endpoint shapes differ: {:?} vs {:?}",
            near.shape(),
            far.shape()
        )));
    }
    if step <= tau || step >= tau + state.delta {
        return Err(Error::Schedule(format!(
            "step {step} is not strictly between {tau} and {}",
            tau + state.delta
        )));
    }
    let lambda = (step - tau) as f64 / state.delta as f64;
    near.zip_with(far, |n, f| n + lambda * (n - f))
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub prediction: Matrix,
    pub label: StepLabel,
}

/// Schedule plus endpoint state for one sampling run.
#[derive(Debug, Clone)]
pub struct StepCache {
    schedule: StepSchedule,
    state: StepCacheState,
    full_calls: usize,
    extrapolations: usize,
}

impl StepCache {
    pub fn new(schedule: StepSchedule) -> Self {
        let state = StepCacheState::new(schedule.delta());
        Self {
            schedule,
            state,
            full_calls: 0,
            extrapolations: 0,
        }
    }

    pub fn schedule(&self) -> &StepSchedule {
        &self.schedule
    }

    pub fn state(&self) -> &StepCacheState {
        &self.state
    }

    pub fn full_calls(&self) -> usize {
        self.full_calls
    }

    pub fn extrapolations(&self) -> usize {
        self.extrapolations
    }

    /// Runs `full_forward` on FULL steps and stores its result; SKIP steps
    /// return an extrapolated prediction without calling it.
    pub fn step_or_skip(
        &mut self,
        step: usize,
        full_forward: impl FnOnce() -> Result<Matrix>,
    ) -> Result<StepOutcome> {
        let label = self.schedule.label(step)?;
        let prediction = match label {
            StepLabel::Full => {
                let p = full_forward()?;
                self.state.record(step, p.clone());
                self.full_calls += 1;
                p
            }
            StepLabel::Skip => {
                let p = extrapolate(&self.state, step)?;
                self.extrapolations += 1;
                p
            }
        };
        Ok(StepOutcome { prediction, label })
    }
}
