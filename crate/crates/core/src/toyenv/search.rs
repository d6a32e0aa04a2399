use std::collections::HashMap;

use rand::Rng;

use super::{EnvSpec, EnvState};
use crate::error::{Error, Result};
use crate::policy::{trajectory_log_prob, RawContext, SoftmaxPolicy};
use crate::types::{ExpertDataset, Instruction, Source, Step, Trajectory};

pub const DEFAULT_ENUMERATION_CAP: usize = 1_000_000;

/// Samples one episode from `policy`. Each recorded step carries the
/// observation that preceded its action.
pub fn rollout<R: Rng + ?Sized>(
    policy: &SoftmaxPolicy,
    spec: &EnvSpec,
    instruction_id: &str,
    rng: &mut R,
) -> Result<Trajectory> {
    let (mut state, mut observation) = spec.reset(instruction_id, 0)?;
    let instruction = spec.task(state.task_index()).instruction.clone();
    let mut steps = Vec::new();
    loop {
        let (actions, probs) = policy.distribution(&instruction.text, &observation)?;
        let valid = spec.valid_actions(&state);
        if actions.len() != valid.len() || actions.iter().any(|a| !valid.contains(a)) {
            return Err(Error::VocabularyMismatch(policy.key(&instruction.text, &observation)));
        }
        let action = actions[sample_index(&probs, rng)].clone();
        let out = spec.step(&state, &action)?;
        steps.push(Step::new(observation, action));
        if out.terminal {
            return Trajectory::new(
                instruction,
                steps,
                Some(out.observation),
                out.score.expect("terminal has a score"),
                Source::WeakExplore,
            );
        }
        state = out.state;
        observation = out.observation;
    }
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc && *p > 0.0 {
            return i;
        }
    }
    // rounding left u above the cumulative sum
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnumeratedPath {
    pub trajectory: Trajectory,
    /// (context index, action index within that context) per step
    choices: Vec<(usize, usize)>,
}

impl EnumeratedPath {
    /// Probability of this action sequence under `policy`: the product of
    /// per-step action probabilities.
    pub fn probability(&self, policy: &SoftmaxPolicy) -> Result<f64> {
        Ok(trajectory_log_prob(policy, &self.trajectory.instruction.text, &self.trajectory.steps)?.exp())
    }
}

/// Every terminal-reaching action sequence for one instruction.
#[derive(Debug, Clone, PartialEq)]
pub struct Enumeration {
    pub instruction: Instruction,
    /// Decision contexts reachable from reset, in discovery order.
    pub contexts: Vec<RawContext>,
    pub paths: Vec<EnumeratedPath>,
}

impl Enumeration {
    /// Path probabilities under `policy`, in path order. Computes each
    /// context's distribution once.
    pub fn probabilities(&self, policy: &SoftmaxPolicy) -> Result<Vec<f64>> {
        let tables = self
            .contexts
            .iter()
            .map(|c| {
                let (actions, probs) = policy.distribution(&c.instruction, &c.observation)?;
                c.actions
                    .iter()
                    .map(|a| {
                        actions
                            .iter()
                            .position(|x| x == a)
                            .map(|j| probs[j])
                            .ok_or_else(|| Error::VocabularyMismatch(policy.key(&c.instruction, &c.observation)))
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self
            .paths
            .iter()
            .map(|p| p.choices.iter().map(|&(c, a)| tables[c][a]).product())
            .collect())
    }

    pub fn scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.paths.iter().map(|p| p.trajectory.score)
    }
}

pub fn enumerate_trajectories(spec: &EnvSpec, instruction_id: &str) -> Result<Enumeration> {
    enumerate_trajectories_capped(spec, instruction_id, DEFAULT_ENUMERATION_CAP)
}

struct Walker<'a> {
    spec: &'a EnvSpec,
    instruction: Instruction,
    cap: usize,
    contexts: Vec<RawContext>,
    context_ids: HashMap<String, usize>,
    paths: Vec<EnumeratedPath>,
    steps: Vec<Step>,
    choices: Vec<(usize, usize)>,
}

impl Walker<'_> {
    fn context_id(&mut self, observation: &str, actions: &[String]) -> usize {
        if let Some(&id) = self.context_ids.get(observation) {
            return id;
        }
        let id = self.contexts.len();
        self.contexts.push(RawContext {
            instruction: self.instruction.text.clone(),
            observation: observation.to_string(),
            actions: actions.to_vec(),
        });
        self.context_ids.insert(observation.to_string(), id);
        id
    }

    fn walk(&mut self, state: &EnvState, observation: &str) -> Result<()> {
        let actions = self.spec.valid_actions(state);
        let ctx = self.context_id(observation, &actions);
        for (ai, action) in actions.iter().enumerate() {
            let out = self.spec.step(state, action)?;
            self.steps.push(Step::new(observation, action.clone()));
            self.choices.push((ctx, ai));
            if out.terminal {
                if self.paths.len() >= self.cap {
                    return Err(Error::EnumerationCap { cap: self.cap });
                }
                self.paths.push(EnumeratedPath {
                    trajectory: Trajectory::new(
                        self.instruction.clone(),
                        self.steps.clone(),
                        Some(out.observation.clone()),
                        out.score.expect("terminal has a score"),
                        Source::WeakExplore,
                    )?,
                    choices: self.choices.clone(),
                });
            } else {
                self.walk(&out.state, &out.observation)?;
            }
            self.steps.pop();
            self.choices.pop();
        }
        Ok(())
    }
}

/// Depth-first enumeration over valid actions, in valid-action order.
pub fn enumerate_trajectories_capped(
    spec: &EnvSpec,
    instruction_id: &str,
    cap: usize,
) -> Result<Enumeration> {
    let (state, observation) = spec.reset(instruction_id, 0)?;
    let instruction = spec.task(state.task_index()).instruction.clone();
    let mut walker = Walker {
        spec,
        instruction: instruction.clone(),
        cap,
        contexts: Vec::new(),
        context_ids: HashMap::new(),
        paths: Vec::new(),
        steps: Vec::new(),
        choices: Vec::new(),
    };
    walker.walk(&state, &observation)?;
    Ok(Enumeration {
        instruction,
        contexts: walker.contexts,
        paths: walker.paths,
    })
}

/// Every decision context reachable in `spec`, across all instructions.
pub fn reachable_contexts(spec: &EnvSpec) -> Result<Vec<RawContext>> {
    let mut out = Vec::new();
    for id in spec.instruction_ids() {
        out.extend(enumerate_trajectories(spec, &id)?.contexts);
    }
    Ok(out)
}

/// Per instruction, the highest-scoring enumerated trajectory; ties go to the
/// shortest, then to the lexicographically smallest action sequence.
pub fn expert_demos(spec: &EnvSpec) -> Result<ExpertDataset> {
    let mut entries = Vec::new();
    for id in spec.instruction_ids() {
        let e = enumerate_trajectories(spec, &id)?;
        let best = e
            .paths
            .iter()
            .map(|p| &p.trajectory)
            .min_by(|a, b| {
                b.score
                    .total_cmp(&a.score)
                    .then(a.len().cmp(&b.len()))
                    .then_with(|| a.actions().cmp(b.actions()))
            })
            .ok_or(Error::EmptyInput("instruction has no terminal trajectory"))?;
        let mut demo = best.clone();
        demo.source = Source::Expert;
        entries.push(demo);
    }
    ExpertDataset::new(entries)
}
