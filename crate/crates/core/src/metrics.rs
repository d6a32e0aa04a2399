//! Expected score, success rate and best-of-N evaluation.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::SoftmaxPolicy;
use crate::rng::{self, StageRng};
use crate::toyenv::{enumerate_trajectories_capped, rollout, EnvSpec, Enumeration, DEFAULT_ENUMERATION_CAP};
use crate::types::Trajectory;

pub const DEFAULT_SUCCESS_THRESHOLD: f64 = 1.0;
pub const DEFAULT_BEST_OF_N: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    #[default]
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub mode: EvalMode,
    /// Total Monte Carlo episodes, split evenly across instructions.
    pub n_samples: u64,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mode: EvalMode::Exact,
            n_samples: 10_000,
            seed: 0,
            threshold: DEFAULT_SUCCESS_THRESHOLD,
        }
    }
}

impl EvalConfig {
    pub fn monte_carlo(n_samples: u64, seed: u64) -> Self {
        Self {
            mode: EvalMode::MonteCarlo,
            n_samples,
            seed,
            ..Self::default()
        }
    }

    fn validate(&self, instructions: usize) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "success threshold must lie in (0, 1], got {}",
                self.threshold
            )));
        }
        if instructions == 0 {
            return Err(Error::EmptyInput("no instructions to evaluate"));
        }
        if self.mode == EvalMode::MonteCarlo && self.n_samples < instructions as u64 {
            return Err(Error::InvalidConfig(format!(
                "n_samples ({}) must cover every instruction ({instructions})",
                self.n_samples
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionEval {
    pub instruction_id: String,
    pub expected_score: f64,
    pub success_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub samples: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub expected_score: f64,
    pub success_rate: f64,
    pub threshold: f64,
    pub mode: EvalMode,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub samples: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub standard_error: Option<f64>,
    pub per_instruction: Vec<InstructionEval>,
}

impl EvalReport {
    /// `instruction_id,expected_score,success` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("instruction_id,expected_score,success\n");
        for row in &self.per_instruction {
            let _ = writeln!(out, "{},{},{}", row.instruction_id, row.expected_score, row.success_rate);
        }
        out
    }

    fn aggregate(config: &EvalConfig, rows: Vec<InstructionEval>, standard_error: Option<f64>) -> Self {
        let k = rows.len() as f64;
        Self {
            expected_score: rows.iter().map(|r| r.expected_score).sum::<f64>() / k,
            success_rate: rows.iter().map(|r| r.success_rate).sum::<f64>() / k,
            threshold: config.threshold,
            mode: config.mode,
            samples: rows.iter().map(|r| r.samples).sum(),
            standard_error,
            per_instruction: rows,
        }
    }
}

/// Evaluates policies against one environment, caching enumerations.
#[derive(Debug)]
pub struct Evaluator<'a> {
    spec: &'a EnvSpec,
    cap: usize,
    cache: HashMap<String, Enumeration>,
}

impl<'a> Evaluator<'a> {
    pub fn new(spec: &'a EnvSpec) -> Self {
        Self::with_cap(spec, DEFAULT_ENUMERATION_CAP)
    }

    pub fn with_cap(spec: &'a EnvSpec, cap: usize) -> Self {
        Self {
            spec,
            cap,
            cache: HashMap::new(),
        }
    }

    pub fn spec(&self) -> &EnvSpec {
        self.spec
    }

    pub fn enumeration(&mut self, instruction_id: &str) -> Result<&Enumeration> {
        if !self.cache.contains_key(instruction_id) {
            let e = enumerate_trajectories_capped(self.spec, instruction_id, self.cap)?;
            self.cache.insert(instruction_id.to_string(), e);
        }
        Ok(&self.cache[instruction_id])
    }

    /// Score distribution of `policy` on one instruction: `(score, mass)`
    /// sorted by score, equal scores merged.
    pub fn score_distribution(&mut self, policy: &SoftmaxPolicy, instruction_id: &str) -> Result<Vec<(f64, f64)>> {
        let e = self.enumeration(instruction_id)?;
        let probs = e.probabilities(policy)?;
        let mut pts: Vec<(f64, f64)> = e.scores().zip(probs).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for (s, p) in pts {
            match merged.last_mut() {
                Some(last) if last.0 == s => last.1 += p,
                _ => merged.push((s, p)),
            }
        }
        Ok(merged)
    }

    pub fn evaluate(&mut self, policy: &SoftmaxPolicy, instructions: &[String], config: &EvalConfig) -> Result<EvalReport> {
        config.validate(instructions.len())?;
        match config.mode {
            EvalMode::Exact => {
                let rows = instructions
                    .iter()
                    .map(|id| {
                        let dist = self.score_distribution(policy, id)?;
                        Ok(InstructionEval {
                            instruction_id: id.clone(),
                            expected_score: dist.iter().map(|(s, p)| s * p).sum(),
                            success_rate: dist.iter().filter(|(s, _)| *s >= config.threshold).map(|(_, p)| p).sum(),
                            samples: None,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(EvalReport::aggregate(config, rows, None))
            }
            EvalMode::MonteCarlo => {
                let spec = self.spec;
                self.monte_carlo(instructions, config, "eval", |id, rng| Ok(rollout(policy, spec, id, rng)?.score))
            }
        }
    }

    /// Stratified sampling: each instruction gets an equal share of the
    /// budget (the first `n mod k` get one extra) from its own RNG stream.
    fn monte_carlo(
        &self,
        instructions: &[String],
        config: &EvalConfig,
        stream: &str,
        mut sample: impl FnMut(&str, &mut StageRng) -> Result<f64>,
    ) -> Result<EvalReport> {
        let k = instructions.len() as u64;
        let mut rows = Vec::with_capacity(instructions.len());
        let mut variance = 0.0;
        for (i, id) in instructions.iter().enumerate() {
            let n = config.n_samples / k + u64::from((i as u64) < config.n_samples % k);
            let mut rng = rng::stream(config.seed, &format!("{stream}/{id}"));
            let (mut sum, mut sum_sq, mut hits) = (0.0, 0.0, 0u64);
            for _ in 0..n {
                let s = sample(id, &mut rng)?;
                sum += s;
                sum_sq += s * s;
                hits += u64::from(s >= config.threshold);
            }
            let nf = n as f64;
            let mean = sum / nf;
            if n > 1 {
                let var = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
                variance += var / nf;
            }
            rows.push(InstructionEval {
                instruction_id: id.clone(),
                expected_score: mean,
                success_rate: hits as f64 / nf,
                samples: Some(n),
            });
        }
        let se = variance.sqrt() / k as f64;
        Ok(EvalReport::aggregate(config, rows, Some(se)))
    }

    /// Best-of-`n` evaluated in the mode `config` asks for.
    pub fn best_of_n(
        &mut self,
        policy: &SoftmaxPolicy,
        instructions: &[String],
        n: usize,
        config: &EvalConfig,
    ) -> Result<EvalReport> {
        match config.mode {
            EvalMode::Exact => self.best_of_n_exact(policy, instructions, n, config.threshold),
            EvalMode::MonteCarlo => {
                config.validate(instructions.len())?;
                let spec = self.spec;
                self.monte_carlo(instructions, config, "best-of-n", |id, rng| {
                    Ok(best_of_n_with(policy, spec, id, n, rng)?.score)
                })
            }
        }
    }

    /// Exact expected score and success rate of best-of-`n` sampling.
    pub fn best_of_n_exact(
        &mut self,
        policy: &SoftmaxPolicy,
        instructions: &[String],
        n: usize,
        threshold: f64,
    ) -> Result<EvalReport> {
        if n == 0 {
            return Err(Error::InvalidConfig("best-of-N needs N >= 1".into()));
        }
        let config = EvalConfig {
            mode: EvalMode::Exact,
            threshold,
            ..EvalConfig::default()
        };
        config.validate(instructions.len())?;
        let rows = instructions
            .iter()
            .map(|id| {
                let dist = self.score_distribution(policy, id)?;
                let mut below = 0.0f64;
                let mut expected = 0.0;
                for (s, p) in &dist {
                    let upto = (below + p).min(1.0);
                    expected += s * (upto.powi(n as i32) - below.powi(n as i32));
                    below = upto;
                }
                let hit: f64 = dist.iter().filter(|(s, _)| *s >= threshold).map(|(_, p)| p).sum();
                Ok(InstructionEval {
                    instruction_id: id.clone(),
                    expected_score: expected,
                    success_rate: 1.0 - (1.0 - hit.min(1.0)).powi(n as i32),
                    samples: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EvalReport::aggregate(&config, rows, None))
    }
}

/// `R(π)` over `instructions`, weighted uniformly.
pub fn expected_score(
    policy: &SoftmaxPolicy,
    spec: &EnvSpec,
    instructions: &[String],
    config: &EvalConfig,
) -> Result<EvalReport> {
    Evaluator::new(spec).evaluate(policy, instructions, config)
}

/// Fraction of episodes scoring at least `config.threshold`.
pub fn success_rate(
    policy: &SoftmaxPolicy,
    spec: &EnvSpec,
    instructions: &[String],
    config: &EvalConfig,
) -> Result<f64> {
    Ok(expected_score(policy, spec, instructions, config)?.success_rate)
}

/// `n` rollouts from a generator seeded with `seed`; returns the
/// highest-scoring one, earliest on ties.
pub fn best_of_n(
    policy: &SoftmaxPolicy,
    spec: &EnvSpec,
    instruction_id: &str,
    n: usize,
    seed: u64,
) -> Result<(Trajectory, f64)> {
    let best = best_of_n_with(policy, spec, instruction_id, n, &mut StageRng::seed_from_u64(seed))?;
    let score = best.score;
    Ok((best, score))
}

fn best_of_n_with(
    policy: &SoftmaxPolicy,
    spec: &EnvSpec,
    instruction_id: &str,
    n: usize,
    rng: &mut StageRng,
) -> Result<Trajectory> {
    if n == 0 {
        return Err(Error::InvalidConfig("best-of-N needs N >= 1".into()));
    }
    let mut best = rollout(policy, spec, instruction_id, rng)?;
    for _ in 1..n {
        let t = rollout(policy, spec, instruction_id, rng)?;
        if t.score > best.score {
            best = t;
        }
    }
    Ok(best)
}
