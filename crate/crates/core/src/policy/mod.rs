//! Tabular log-linear policies over (context key, action).
//!
//! A context is the instruction text plus the observation preceding the
//! action. The [`KeyFn`] decides how much of it the policy can distinguish:
//! `Fine` keys on everything, `Coarse` drops the final token of the
//! instruction, so instructions that differ only in that token share logits.
//! This is how a low-capacity (weak) policy is modelled.

mod loss;
mod train;

pub use loss::{
    action_log_prob, dpo_loss, evaluate_loss, explore_loss, implicit_score, mcts_sft_loss,
    sft_loss, trajectory_log_prob, DpoForm, Gradient, LossReport, LossSpec, PairSide,
};
pub use train::{train, TrainConfig, TrainOutcome};

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KeyFn {
    Coarse,
    Fine,
}

impl KeyFn {
    pub fn as_str(self) -> &'static str {
        match self {
            KeyFn::Coarse => "coarse",
            KeyFn::Fine => "fine",
        }
    }

    pub fn key(self, instruction: &str, observation: &str) -> String {
        let instruction = match self {
            KeyFn::Fine => instruction,
            KeyFn::Coarse => match instruction.trim_end().rsplit_once(char::is_whitespace) {
                Some((head, _)) => head.trim_end(),
                None => "",
            },
        };
        format!("{instruction} || {observation}")
    }
}

impl fmt::Display for KeyFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KeyFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coarse" => Ok(KeyFn::Coarse),
            "fine" => Ok(KeyFn::Fine),
            other => Err(Error::InvalidConfig(format!("unknown key_fn `{other}`"))),
        }
    }
}

/// A raw decision context with the actions available in it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RawContext {
    pub instruction: String,
    pub observation: String,
    pub actions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ContextEntry {
    pub(crate) actions: Vec<String>,
    pub(crate) logits: Vec<f64>,
}

impl ContextEntry {
    fn index_of(&self, action: &str) -> Option<usize> {
        self.actions.iter().position(|a| a == action)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    key_fn: KeyFn,
    temperature: f64,
    table: BTreeMap<String, ContextEntry>,
}

impl SoftmaxPolicy {
    pub fn new(key_fn: KeyFn, temperature: f64) -> Result<Self> {
        check_temperature(temperature)?;
        Ok(Self {
            key_fn,
            temperature,
            table: BTreeMap::new(),
        })
    }

    /// Uniform (all-zero logits) policy over the given contexts.
    pub fn uniform(key_fn: KeyFn, temperature: f64, contexts: &[RawContext]) -> Result<Self> {
        let mut p = Self::new(key_fn, temperature)?;
        for c in contexts {
            p.register(&c.instruction, &c.observation, &c.actions)?;
        }
        Ok(p)
    }

    /// A policy keyed by `key_fn` whose action distributions equal those of
    /// `reference` on every given context.
    pub fn warm_start(
        reference: &SoftmaxPolicy,
        key_fn: KeyFn,
        contexts: &[RawContext],
    ) -> Result<Self> {
        let mut p = Self::new(key_fn, reference.temperature)?;
        for c in contexts {
            let key = p.register(&c.instruction, &c.observation, &c.actions)?;
            let ref_key = reference.key(&c.instruction, &c.observation);
            let src = reference
                .table
                .get(&ref_key)
                .ok_or_else(|| Error::UnknownContext(ref_key.clone()))?;
            let dst = p.table.get_mut(&key).expect("just registered");
            for (i, a) in dst.actions.iter().enumerate() {
                let j = src
                    .index_of(a)
                    .ok_or_else(|| Error::VocabularyMismatch(ref_key.clone()))?;
                dst.logits[i] = src.logits[j];
            }
        }
        Ok(p)
    }

    /// Adds a context with zero logits. Re-registering a key is allowed only
    /// with the same action list.
    pub fn register(
        &mut self,
        instruction: &str,
        observation: &str,
        actions: &[String],
    ) -> Result<String> {
        let key = self.key(instruction, observation);
        match self.table.get(&key) {
            Some(entry) if entry.actions != actions => {
                return Err(Error::VocabularyMismatch(key));
            }
            Some(_) => {}
            None => {
                if actions.is_empty() {
                    return Err(Error::VocabularyMismatch(key));
                }
                self.table.insert(
                    key.clone(),
                    ContextEntry {
                        actions: actions.to_vec(),
                        logits: vec![0.0; actions.len()],
                    },
                );
            }
        }
        Ok(key)
    }

    pub fn key_fn(&self) -> KeyFn {
        self.key_fn
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn with_temperature(&self, temperature: f64) -> Result<Self> {
        check_temperature(temperature)?;
        Ok(Self {
            temperature,
            ..self.clone()
        })
    }

    pub fn key(&self, instruction: &str, observation: &str) -> String {
        self.key_fn.key(instruction, observation)
    }

    pub fn contexts(&self) -> impl Iterator<Item = &str> {
        self.table.keys().map(String::as_str)
    }

    pub fn num_contexts(&self) -> usize {
        self.table.len()
    }

    pub fn actions(&self, key: &str) -> Option<&[String]> {
        self.table.get(key).map(|e| e.actions.as_slice())
    }

    pub fn logits(&self, key: &str) -> Option<&[f64]> {
        self.table.get(key).map(|e| e.logits.as_slice())
    }

    pub fn logit(&self, key: &str, action: &str) -> Option<f64> {
        let e = self.table.get(key)?;
        e.index_of(action).map(|i| e.logits[i])
    }

    pub fn set_logit(&mut self, key: &str, action: &str, value: f64) -> Result<()> {
        let e = self
            .table
            .get_mut(key)
            .ok_or_else(|| Error::UnknownContext(key.to_string()))?;
        let i = e.index_of(action).ok_or_else(|| Error::UnknownAction {
            context: key.to_string(),
            action: action.to_string(),
        })?;
        e.logits[i] = value;
        Ok(())
    }

    pub(crate) fn entry(&self, key: &str) -> Result<&ContextEntry> {
        self.table
            .get(key)
            .ok_or_else(|| Error::UnknownContext(key.to_string()))
    }

    /// Log-probabilities of every action at `key`, in vocabulary order.
    pub fn log_probs(&self, key: &str) -> Result<Vec<f64>> {
        Ok(log_softmax(&self.entry(key)?.logits, self.temperature))
    }

    pub fn probs(&self, key: &str) -> Result<Vec<f64>> {
        Ok(self.log_probs(key)?.into_iter().map(f64::exp).collect())
    }

    /// Action distribution for a raw context, in vocabulary order.
    pub fn distribution(&self, instruction: &str, observation: &str) -> Result<(&[String], Vec<f64>)> {
        let key = self.key(instruction, observation);
        let entry = self.entry(&key)?;
        let probs = log_softmax(&entry.logits, self.temperature)
            .into_iter()
            .map(f64::exp)
            .collect();
        Ok((&entry.actions, probs))
    }

    /// `logits -= learning_rate * gradient`
    pub fn apply_gradient(&mut self, gradient: &Gradient, learning_rate: f64) -> Result<()> {
        for (key, g) in gradient.iter() {
            let e = self
                .table
                .get_mut(key)
                .ok_or_else(|| Error::UnknownContext(key.to_string()))?;
            if e.logits.len() != g.len() {
                return Err(Error::VocabularyMismatch(key.to_string()));
            }
            for (l, d) in e.logits.iter_mut().zip(g) {
                *l -= learning_rate * d;
            }
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            key_fn: self.key_fn.as_str().to_string(),
            temperature: self.temperature,
            logits: self
                .table
                .iter()
                .flat_map(|(k, e)| {
                    e.actions.iter().zip(&e.logits).map(move |(a, v)| LogitEntry {
                        context: k.clone(),
                        action: a.clone(),
                        value: *v,
                    })
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut p = Self::new(ckpt.key_fn.parse()?, ckpt.temperature)?;
        for entry in &ckpt.logits {
            let e = p.table.entry(entry.context.clone()).or_insert(ContextEntry {
                actions: Vec::new(),
                logits: Vec::new(),
            });
            if e.index_of(&entry.action).is_some() {
                return Err(Error::InvalidConfig(format!(
                    "duplicate checkpoint entry ({}, {})",
                    entry.context, entry.action
                )));
            }
            e.actions.push(entry.action.clone());
            e.logits.push(entry.value);
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, &self.to_checkpoint())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&io::read_json(path)?)
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "temperature must be positive and finite, got {t}"
        )))
    }
}

pub(crate) fn log_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits
        .iter()
        .map(|l| l / temperature)
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = max
        + logits
            .iter()
            .map(|l| (l / temperature - max).exp())
            .sum::<f64>()
            .ln();
    logits.iter().map(|l| l / temperature - lse).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub key_fn: String,
    pub temperature: f64,
    pub logits: Vec<LogitEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitEntry {
    pub context: String,
    pub action: String,
    pub value: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(instr: &str, obs: &str, actions: &[&str]) -> RawContext {
        RawContext {
            instruction: instr.into(),
            observation: obs.into(),
            actions: actions.iter().map(|a| a.to_string()).collect(),
        }
    }

    #[test]
    fn coarse_key_drops_last_instruction_token() {
        assert_eq!(KeyFn::Coarse.key("buy red small", "o"), "buy red || o");
        assert_eq!(KeyFn::Fine.key("buy red small", "o"), "buy red small || o");
        assert_eq!(KeyFn::Coarse.key("single", "o"), " || o");
    }

    #[test]
    fn uniform_log_probs() {
        let p = SoftmaxPolicy::uniform(KeyFn::Fine, 1.0, &[ctx("i", "o", &["a", "b", "c", "d"])]).unwrap();
        for lp in p.log_probs(&p.key("i", "o")).unwrap() {
            assert!((lp + 4f64.ln()).abs() < 1e-15);
        }
        let single = SoftmaxPolicy::uniform(KeyFn::Fine, 1.0, &[ctx("i", "o", &["a"])]).unwrap();
        assert_eq!(single.log_probs(&single.key("i", "o")).unwrap(), vec![0.0]);
    }

    #[test]
    fn coarse_aliasing_requires_identical_vocab() {
        let mut p = SoftmaxPolicy::new(KeyFn::Coarse, 1.0).unwrap();
        p.register("buy red small", "o", &["a".into(), "b".into()]).unwrap();
        p.register("buy red large", "o", &["a".into(), "b".into()]).unwrap();
        assert_eq!(p.num_contexts(), 1);
        assert!(matches!(
            p.register("buy red tiny", "o", &["a".into()]),
            Err(Error::VocabularyMismatch(_))
        ));
    }

    #[test]
    fn low_temperature_is_greedy() {
        let mut p = SoftmaxPolicy::uniform(KeyFn::Fine, 1e-6, &[ctx("i", "o", &["a", "b"])]).unwrap();
        let k = p.key("i", "o");
        p.set_logit(&k, "b", 0.01).unwrap();
        assert_eq!(p.probs(&k).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn warm_start_copies_distributions() {
        let contexts = [ctx("buy red small", "o", &["a", "b"]), ctx("buy red large", "o", &["a", "b"])];
        let mut weak = SoftmaxPolicy::uniform(KeyFn::Coarse, 1.0, &contexts).unwrap();
        weak.set_logit("buy red || o", "a", 1.5).unwrap();
        let strong = SoftmaxPolicy::warm_start(&weak, KeyFn::Fine, &contexts).unwrap();
        assert_eq!(strong.num_contexts(), 2);
        for c in &contexts {
            assert_eq!(
                strong.distribution(&c.instruction, &c.observation).unwrap().1,
                weak.distribution(&c.instruction, &c.observation).unwrap().1
            );
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut p = SoftmaxPolicy::uniform(
            KeyFn::Coarse,
            0.7,
            &[ctx("x y", "o", &["b", "a"]), ctx("x z", "q", &["c"])],
        )
        .unwrap();
        p.set_logit("x || o", "a", 0.1 + 0.2).unwrap();
        let json = serde_json::to_string(&p.to_checkpoint()).unwrap();
        let back = SoftmaxPolicy::from_checkpoint(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.actions("x || o").unwrap(), ["b", "a"]);
    }

    #[test]
    fn rejects_bad_temperature() {
        assert!(SoftmaxPolicy::new(KeyFn::Fine, 0.0).is_err());
        assert!(SoftmaxPolicy::new(KeyFn::Fine, f64::NAN).is_err());
    }
}
