//! Training losses with exact analytic gradients w.r.t. the logits table.
//!
//! With `p = softmax(l / T)`, `d log p_a / d l_b = (δ_ab − p_b) / T`; every
//! gradient below is assembled from that identity.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{SoftmaxPolicy, TrainConfig};
use crate::error::{Error, Result};
use crate::pairs::{PairDataset, PreferencePair};
use crate::types::{Step, Trajectory};

/// Gradient entries keyed by context, aligned with the policy's action
/// vocabulary for that context. Contexts the loss does not touch are absent.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradient(BTreeMap<String, Vec<f64>>);

impl Gradient {
    pub fn get(&self, policy: &SoftmaxPolicy, key: &str, action: &str) -> Option<f64> {
        let i = policy.actions(key)?.iter().position(|a| a == action)?;
        self.0.get(key).map(|g| g[i])
    }

    pub fn context(&self, key: &str) -> Option<&[f64]> {
        self.0.get(key).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.values().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }

    fn slot(&mut self, key: &str, width: usize) -> &mut Vec<f64> {
        self.0
            .entry(key.to_string())
            .or_insert_with(|| vec![0.0; width])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub value: f64,
    pub gradient: Gradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DpoForm {
    /// `−ln σ(r⁺ − r⁻) + β·KL(π ‖ π_ref)`: raw margin, additive KL penalty.
    #[default]
    AdditiveKl,
    /// `−ln σ(β·(r⁺ − r⁻))`: the conventional β-scaled margin, no extra KL.
    StandardDpo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairSide {
    Chosen,
    Rejected,
}

#[derive(Debug, Clone, Copy)]
pub enum LossSpec<'a> {
    Sft {
        demos: &'a [Trajectory],
    },
    Explore {
        demos: &'a [Trajectory],
        reference: &'a SoftmaxPolicy,
    },
    Dpo {
        pairs: &'a PairDataset,
        reference: &'a SoftmaxPolicy,
        form: DpoForm,
    },
    MctsSft {
        paths: &'a [Trajectory],
    },
}

/// `log π(action | instruction, observation)`
pub fn action_log_prob(
    policy: &SoftmaxPolicy,
    instruction: &str,
    observation: &str,
    action: &str,
) -> Result<f64> {
    let key = policy.key(instruction, observation);
    let entry = policy.entry(&key)?;
    let i = entry
        .actions
        .iter()
        .position(|a| a == action)
        .ok_or_else(|| Error::UnknownAction {
            context: key.clone(),
            action: action.to_string(),
        })?;
    Ok(super::log_softmax(&entry.logits, policy.temperature())[i])
}

/// Sum of step log-probabilities (the log of the product over steps).
pub fn trajectory_log_prob(policy: &SoftmaxPolicy, instruction: &str, steps: &[Step]) -> Result<f64> {
    steps
        .iter()
        .map(|s| action_log_prob(policy, instruction, &s.observation, &s.action))
        .sum()
}

/// Per-step log-probability and its gradient direction at one context.
struct StepTerm {
    key: String,
    log_prob: f64,
    /// `d log p_a / d l_b` for every b
    dlogp: Vec<f64>,
}

fn step_term(policy: &SoftmaxPolicy, instruction: &str, step: &Step) -> Result<StepTerm> {
    let key = policy.key(instruction, &step.observation);
    let entry = policy.entry(&key)?;
    let a = entry
        .actions
        .iter()
        .position(|x| *x == step.action)
        .ok_or_else(|| Error::UnknownAction {
            context: key.clone(),
            action: step.action.clone(),
        })?;
    let t = policy.temperature();
    let lp = super::log_softmax(&entry.logits, t);
    let dlogp = lp
        .iter()
        .enumerate()
        .map(|(b, l)| (if a == b { 1.0 } else { 0.0 } - l.exp()) / t)
        .collect();
    Ok(StepTerm {
        key,
        log_prob: lp[a],
        dlogp,
    })
}

fn nll(policy: &SoftmaxPolicy, data: &[Trajectory], what: &'static str) -> Result<LossReport> {
    if data.is_empty() {
        return Err(Error::EmptyInput(what));
    }
    let w = 1.0 / data.len() as f64;
    let mut value = 0.0;
    let mut gradient = Gradient::default();
    for t in data {
        for step in &t.steps {
            let term = step_term(policy, &t.instruction.text, step)?;
            value -= w * term.log_prob;
            let g = gradient.slot(&term.key, term.dlogp.len());
            for (gb, d) in g.iter_mut().zip(&term.dlogp) {
                *gb -= w * d;
            }
        }
    }
    Ok(LossReport { value, gradient })
}

/// `−(1/N) Σ_i Σ_t log π(a_t | context_t)`
pub fn sft_loss(policy: &SoftmaxPolicy, demos: &[Trajectory]) -> Result<LossReport> {
    nll(policy, demos, "sft_loss needs at least one demonstration")
}

/// Same objective as [`sft_loss`], over synthesized optimal paths.
pub fn mcts_sft_loss(policy: &SoftmaxPolicy, paths: &[Trajectory]) -> Result<LossReport> {
    nll(policy, paths, "mcts_sft_loss needs at least one path")
}

type ContextSet<'a> = BTreeSet<(&'a str, &'a str)>;

/// Mean per-context `KL(π ‖ π_ref)` over the given raw contexts, scaled by
/// `coef`, accumulated into `gradient`. Returns the unscaled mean KL.
fn mean_kl(
    policy: &SoftmaxPolicy,
    reference: &SoftmaxPolicy,
    contexts: &ContextSet<'_>,
    coef: f64,
    gradient: &mut Gradient,
) -> Result<f64> {
    if contexts.is_empty() {
        return Ok(0.0);
    }
    let w = 1.0 / contexts.len() as f64;
    let t = policy.temperature();
    let mut total = 0.0;
    for &(instruction, observation) in contexts {
        let key = policy.key(instruction, observation);
        let entry = policy.entry(&key)?;
        let ref_key = reference.key(instruction, observation);
        let ref_entry = reference.entry(&ref_key)?;
        if ref_entry.actions.len() != entry.actions.len() {
            return Err(Error::VocabularyMismatch(ref_key));
        }
        let ref_lp_all = super::log_softmax(&ref_entry.logits, reference.temperature());
        let ref_lp = entry
            .actions
            .iter()
            .map(|a| {
                ref_entry
                    .actions
                    .iter()
                    .position(|x| x == a)
                    .map(|j| ref_lp_all[j])
                    .ok_or_else(|| Error::VocabularyMismatch(ref_key.clone()))
            })
            .collect::<Result<Vec<f64>>>()?;
        let lp = super::log_softmax(&entry.logits, t);
        let kl: f64 = lp
            .iter()
            .zip(&ref_lp)
            .map(|(p, q)| p.exp() * (p - q))
            .sum();
        total += w * kl;
        if coef != 0.0 {
            let g = gradient.slot(&key, lp.len());
            for b in 0..lp.len() {
                g[b] += coef * w * lp[b].exp() * (lp[b] - ref_lp[b] - kl) / t;
            }
        }
    }
    Ok(total)
}

fn demo_contexts(demos: &[Trajectory]) -> ContextSet<'_> {
    demos
        .iter()
        .flat_map(|t| {
            t.steps
                .iter()
                .map(move |s| (t.instruction.text.as_str(), s.observation.as_str()))
        })
        .collect()
}

/// `sft_loss − λ·KL(π ‖ π_ref)`, the KL averaged over the demo contexts.
pub fn explore_loss(
    policy: &SoftmaxPolicy,
    demos: &[Trajectory],
    lambda: f64,
    reference: &SoftmaxPolicy,
) -> Result<LossReport> {
    let mut report = sft_loss(policy, demos)?;
    let kl = mean_kl(policy, reference, &demo_contexts(demos), -lambda, &mut report.gradient)?;
    report.value -= lambda * kl;
    Ok(report)
}

fn continuation(pair: &PreferencePair, side: PairSide) -> &[Step] {
    match side {
        PairSide::Chosen => &pair.chosen,
        PairSide::Rejected => &pair.rejected,
    }
}

/// `log π(σ | h) − log π_ref(σ | h)` for one side of a pair.
pub fn implicit_score(
    policy: &SoftmaxPolicy,
    reference: &SoftmaxPolicy,
    pair: &PreferencePair,
    side: PairSide,
) -> Result<f64> {
    let text = &pair.instruction.text;
    let steps = continuation(pair, side);
    Ok(trajectory_log_prob(policy, text, steps)? - trajectory_log_prob(reference, text, steps)?)
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Preference loss over tree-derived pairs; see [`DpoForm`] for the two
/// variants. KL contexts are every step context of τ⁺ and τ⁻.
pub fn dpo_loss(
    policy: &SoftmaxPolicy,
    reference: &SoftmaxPolicy,
    ds: &PairDataset,
    beta: f64,
    form: DpoForm,
) -> Result<LossReport> {
    if ds.is_empty() {
        return Err(Error::EmptyInput("dpo_loss needs at least one pair"));
    }
    let scale = match form {
        DpoForm::AdditiveKl => 1.0,
        DpoForm::StandardDpo => beta,
    };
    let w = 1.0 / ds.count() as f64;
    let mut value = 0.0;
    let mut gradient = Gradient::default();
    for pair in &ds.pairs {
        let text = &pair.instruction.text;
        let mut margin = 0.0;
        let mut terms = Vec::with_capacity(pair.chosen.len() + pair.rejected.len());
        for (side, sign) in [(PairSide::Chosen, 1.0), (PairSide::Rejected, -1.0)] {
            for step in continuation(pair, side) {
                let term = step_term(policy, text, step)?;
                let ref_lp = action_log_prob(reference, text, &step.observation, &step.action)?;
                margin += sign * (term.log_prob - ref_lp);
                terms.push((sign, term));
            }
        }
        value -= w * log_sigmoid(scale * margin);
        // d(−ln σ(s·m))/dm = −s·σ(−s·m)
        let dm = -w * scale * sigmoid(-scale * margin);
        for (sign, term) in terms {
            let g = gradient.slot(&term.key, term.dlogp.len());
            for (gb, d) in g.iter_mut().zip(&term.dlogp) {
                *gb += dm * sign * d;
            }
        }
    }
    if form == DpoForm::AdditiveKl {
        let contexts: ContextSet<'_> = ds
            .pairs
            .iter()
            .flat_map(|p| {
                p.prefix
                    .iter()
                    .chain(&p.chosen)
                    .chain(&p.rejected)
                    .map(move |s| (p.instruction.text.as_str(), s.observation.as_str()))
            })
            .collect();
        let kl = mean_kl(policy, reference, &contexts, beta, &mut gradient)?;
        value += beta * kl;
    }
    Ok(LossReport { value, gradient })
}

/// Evaluates the loss named by `spec`, taking β and λ from `config`.
pub fn evaluate_loss(
    policy: &SoftmaxPolicy,
    spec: &LossSpec<'_>,
    config: &TrainConfig,
) -> Result<LossReport> {
    match *spec {
        LossSpec::Sft { demos } => sft_loss(policy, demos),
        LossSpec::Explore { demos, reference } => {
            explore_loss(policy, demos, config.lambda, reference)
        }
        LossSpec::Dpo {
            pairs,
            reference,
            form,
        } => dpo_loss(policy, reference, pairs, config.beta, form),
        LossSpec::MctsSft { paths } => mcts_sft_loss(policy, paths),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{KeyFn, RawContext};
    use crate::types::{Instruction, Source};

    fn policy(actions: &[&str]) -> SoftmaxPolicy {
        SoftmaxPolicy::uniform(
            KeyFn::Fine,
            1.0,
            &[RawContext {
                instruction: "task".into(),
                observation: "o".into(),
                actions: actions.iter().map(|a| a.to_string()).collect(),
            }],
        )
        .unwrap()
    }

    fn demo(action: &str) -> Trajectory {
        Trajectory::new(
            Instruction::new("i", "task"),
            vec![Step::new("o", action)],
            None,
            1.0,
            Source::Expert,
        )
        .unwrap()
    }

    fn pair(chosen: &str, rejected: &str) -> PairDataset {
        PairDataset {
            pairs: vec![PreferencePair::new(
                Instruction::new("i", "task"),
                vec![],
                vec![Step::new("o", chosen)],
                vec![Step::new("o", rejected)],
                1.0,
                0.0,
            )],
        }
    }

    #[test]
    fn uniform_sft_is_ln_k() {
        let p = policy(&["a", "b", "c"]);
        let r = sft_loss(&p, &[demo("a")]).unwrap();
        assert!((r.value - 3f64.ln()).abs() < 1e-15);
        // ∂/∂l = p − onehot
        let g = r.gradient.context(&p.key("task", "o")).unwrap();
        assert!((g[0] + 2.0 / 3.0).abs() < 1e-15);
        assert!((g[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn certain_policy_has_zero_sft() {
        let mut p = policy(&["a", "b"]);
        p.set_logit(&p.key("task", "o"), "a", 1e3).unwrap();
        assert_eq!(sft_loss(&p, &[demo("a")]).unwrap().value, 0.0);
    }

    #[test]
    fn out_of_vocabulary_errors() {
        let p = policy(&["a"]);
        assert!(matches!(
            sft_loss(&p, &[demo("zzz")]),
            Err(Error::UnknownAction { .. })
        ));
        assert!(matches!(sft_loss(&p, &[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn explore_reduces_to_sft() {
        let mut p = policy(&["a", "b"]);
        p.set_logit(&p.key("task", "o"), "b", 0.3).unwrap();
        let mut r = policy(&["a", "b"]);
        r.set_logit(&r.key("task", "o"), "a", 0.9).unwrap();
        let demos = [demo("a")];
        let sft = sft_loss(&p, &demos).unwrap();
        assert_eq!(explore_loss(&p, &demos, 0.0, &r).unwrap().value.to_bits(), sft.value.to_bits());
        assert_eq!(explore_loss(&p, &demos, 0.7, &p).unwrap().value, sft.value);
        assert!(explore_loss(&p, &demos, 0.7, &r).unwrap().value < sft.value);
    }

    #[test]
    fn explore_vocabulary_mismatch() {
        let p = policy(&["a", "b"]);
        let r = policy(&["a", "c"]);
        assert!(matches!(
            explore_loss(&p, &[demo("a")], 0.1, &r),
            Err(Error::VocabularyMismatch(_))
        ));
    }

    #[test]
    fn dpo_zero_margin_is_ln2() {
        let p = policy(&["a", "b"]);
        let r = dpo_loss(&p, &p, &pair("a", "b"), 0.1, DpoForm::AdditiveKl).unwrap();
        assert!((r.value - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(matches!(
            dpo_loss(&p, &p, &PairDataset::default(), 0.1, DpoForm::AdditiveKl),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn dpo_beta_zero_scalar_value() {
        let reference = policy(&["a", "b"]);
        let mut p = policy(&["a", "b"]);
        let k = p.key("task", "o");
        p.set_logit(&k, "a", 0.8).unwrap();
        let ds = pair("a", "b");
        let d = implicit_score(&p, &reference, &ds.pairs[0], PairSide::Chosen).unwrap()
            - implicit_score(&p, &reference, &ds.pairs[0], PairSide::Rejected).unwrap();
        // log-odds shift between a and b is exactly the logit difference
        assert!((d - 0.8).abs() < 1e-12);
        let r = dpo_loss(&p, &reference, &ds, 0.0, DpoForm::AdditiveKl).unwrap();
        let expected = (1.0 + (-0.8f64).exp()).ln();
        assert!((r.value - expected).abs() < 1e-12);
    }

    #[test]
    fn implicit_score_single_step() {
        let mut p = policy(&["a", "b"]);
        let k = p.key("task", "o");
        p.set_logit(&k, "a", 1.0).unwrap();
        let q = policy(&["a", "b"]);
        let ds = pair("a", "b");
        let pa = 1.0f64.exp() / (1.0f64.exp() + 1.0);
        let s = implicit_score(&p, &q, &ds.pairs[0], PairSide::Chosen).unwrap();
        assert!((s - (pa.ln() - 0.5f64.ln())).abs() < 1e-12);
        assert_eq!(implicit_score(&p, &p, &ds.pairs[0], PairSide::Rejected).unwrap(), 0.0);
    }

    #[test]
    fn log_sigmoid_is_stable() {
        assert!((log_sigmoid(0.0) + std::f64::consts::LN_2).abs() < 1e-15);
        assert!(log_sigmoid(800.0) == 0.0);
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-9);
        assert_eq!(sigmoid(-1000.0), 0.0);
    }
}
