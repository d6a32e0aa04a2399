use serde::{Deserialize, Serialize};

use super::loss::{evaluate_loss, LossSpec};
use super::SoftmaxPolicy;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    /// KL coefficient of the preference loss.
    pub beta: f64,
    /// KL coefficient of the exploration loss.
    pub lambda: f64,
    /// Full-batch descent is deterministic; the seed is carried for provenance.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            steps: 100,
            beta: 0.1,
            lambda: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate must be non-negative, got {}", self.learning_rate));
        }
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if !(self.beta >= 0.0) {
            return bad(format!("beta must be non-negative, got {}", self.beta));
        }
        if !(self.lambda >= 0.0) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub policy: SoftmaxPolicy,
    /// Loss before each update.
    pub trace: Vec<f64>,
}

impl TrainOutcome {
    /// `step,loss` CSV with a header row.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (i, v) in self.trace.iter().enumerate() {
            out.push_str(&format!("{i},{v}\n"));
        }
        out
    }
}

/// Plain full-batch gradient descent on a copy of `policy`.
///
/// A zero learning rate is accepted and leaves the policy unchanged.
pub fn train(policy: &SoftmaxPolicy, spec: &LossSpec<'_>, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let mut current = policy.clone();
    let mut trace = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let report = evaluate_loss(&current, spec, config)?;
        if !report.value.is_finite() {
            return Err(Error::Diverged {
                step,
                value: report.value,
                trace,
            });
        }
        trace.push(report.value);
        current.apply_gradient(&report.gradient, config.learning_rate)?;
    }
    Ok(TrainOutcome {
        policy: current,
        trace,
    })
}
