//! Deterministic, exactly enumerable task environments.
//!
//! `lineshop` is a shopping task with continuous scores (fraction of requested
//! attributes on the bought item); `binaryhouse` is a fetch-and-place task
//! with binary scores. Both are declared in TOML so that fixtures are data.
//! Rewards are terminal-only: the trajectory score is the single non-zero
//! reward on the final transition.

mod house;
mod search;
mod shop;

pub use search::{
    enumerate_trajectories, enumerate_trajectories_capped, expert_demos, reachable_contexts,
    rollout, EnumeratedPath, Enumeration, DEFAULT_ENUMERATION_CAP,
};

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::io;
use crate::types::Instruction;

pub const NOTHING_HAPPENED: &str = "Nothing happened.";

const LINESHOP_TOML: &str = include_str!("../../envs/lineshop.toml");
const BINARYHOUSE_TOML: &str = include_str!("../../envs/binaryhouse.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvKind {
    LineShop,
    BinaryHouse,
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::LineShop => "lineshop",
            EnvKind::BinaryHouse => "binaryhouse",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Item {
    pub name: String,
    pub attributes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Catalog {
    pub items: Vec<Item>,
}

impl Catalog {
    /// Distinct attribute values, sorted; these are the searchable queries.
    pub fn queries(&self) -> Vec<String> {
        self.items
            .iter()
            .flat_map(|i| i.attributes.iter().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Room {
    pub name: String,
    pub objects: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layout {
    pub rooms: Vec<Room>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum World {
    LineShop(Catalog),
    BinaryHouse(Layout),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Goal {
    Attributes(Vec<String>),
    Deliver { object: String, room: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub instruction: Instruction,
    pub goal: Goal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvSpec {
    pub max_steps: usize,
    pub world: World,
    pub tasks: Vec<Task>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub(crate) enum Phase {
    Search,
    Results { query: String },
    Item { item: usize, query: String },
    House { room: Option<usize>, holding: Option<String> },
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EnvState {
    task: usize,
    phase: Phase,
    history: Vec<String>,
}

impl EnvState {
    pub fn task_index(&self) -> usize {
        self.task
    }

    /// Actions taken so far, valid or not.
    pub fn history(&self) -> &[String] {
        &self.history
    }

    pub fn steps_taken(&self) -> usize {
        self.history.len()
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub observation: String,
    pub terminal: bool,
    pub score: Option<f64>,
}

/// Result of a mechanics transition before the step budget is applied.
pub(crate) struct Transition {
    phase: Phase,
    observation: String,
    score: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    env: RawEnv,
    catalog: Option<Catalog>,
    layout: Option<Layout>,
    instructions: Vec<RawInstruction>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnv {
    kind: String,
    max_steps: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInstruction {
    id: String,
    text: String,
    attributes: Option<Vec<String>>,
    object: Option<String>,
    room: Option<String>,
}

impl EnvSpec {
    pub fn lineshop_default() -> Self {
        Self::from_toml_str(LINESHOP_TOML).expect("bundled lineshop spec is valid")
    }

    pub fn binaryhouse_default() -> Self {
        Self::from_toml_str(BINARYHOUSE_TOML).expect("bundled binaryhouse spec is valid")
    }

    /// `builtin:lineshop`, `builtin:binaryhouse`, or a path to a TOML spec.
    pub fn resolve(source: &str, base: &Path) -> Result<Self> {
        match source {
            "builtin:lineshop" => Ok(Self::lineshop_default()),
            "builtin:binaryhouse" => Ok(Self::binaryhouse_default()),
            path => Self::load(&base.join(path)),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&io::read_to_string(path)?).map_err(|e| match e {
            Error::Toml { message, .. } => Error::Toml {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let raw: RawSpec = toml::from_str(s).map_err(|e| Error::Toml {
            path: "<inline>".into(),
            message: e.to_string(),
        })?;
        let invalid = |m: String| Error::InvalidConfig(m);
        if raw.env.max_steps == 0 {
            return Err(invalid("max_steps must be at least 1".into()));
        }
        let kind = match raw.env.kind.as_str() {
            "lineshop" => EnvKind::LineShop,
            "binaryhouse" => EnvKind::BinaryHouse,
            other => return Err(invalid(format!("unknown env kind `{other}`"))),
        };
        let world = match kind {
            EnvKind::LineShop => World::LineShop(
                raw.catalog
                    .ok_or_else(|| invalid("lineshop needs a [catalog] table".into()))?,
            ),
            EnvKind::BinaryHouse => World::BinaryHouse(
                raw.layout
                    .ok_or_else(|| invalid("binaryhouse needs a [layout] table".into()))?,
            ),
        };
        let mut ids = BTreeSet::new();
        let mut tasks = Vec::with_capacity(raw.instructions.len());
        for r in raw.instructions {
            if r.id.is_empty() || r.text.trim().is_empty() {
                return Err(invalid("instruction ids and texts must be non-empty".into()));
            }
            if !ids.insert(r.id.clone()) {
                return Err(invalid(format!("duplicate instruction id `{}`", r.id)));
            }
            let goal = match (kind, r.attributes, r.object, r.room) {
                (EnvKind::LineShop, Some(attrs), None, None) if !attrs.is_empty() => {
                    Goal::Attributes(attrs)
                }
                (EnvKind::BinaryHouse, None, Some(object), Some(room)) => {
                    Goal::Deliver { object, room }
                }
                _ => {
                    return Err(invalid(format!(
                        "instruction `{}` does not match the {kind} goal schema",
                        r.id
                    )))
                }
            };
            tasks.push(Task {
                instruction: Instruction::new(r.id, r.text),
                goal,
            });
        }
        let spec = Self {
            max_steps: raw.env.max_steps,
            world,
            tasks,
        };
        spec.validate_world()?;
        Ok(spec)
    }

    fn validate_world(&self) -> Result<()> {
        let invalid = |m: String| Err(Error::InvalidConfig(m));
        match &self.world {
            World::LineShop(catalog) => {
                if catalog.items.is_empty() {
                    return invalid("catalog has no items".into());
                }
                let mut names = BTreeSet::new();
                for item in &catalog.items {
                    if item.attributes.is_empty() || !names.insert(&item.name) {
                        return invalid(format!("catalog item `{}` is invalid or duplicated", item.name));
                    }
                }
            }
            World::BinaryHouse(layout) => {
                let mut objects = BTreeSet::new();
                let mut rooms = BTreeSet::new();
                for room in &layout.rooms {
                    if !rooms.insert(room.name.as_str()) || room.name == "hallway" {
                        return invalid(format!("room `{}` is invalid or duplicated", room.name));
                    }
                    for o in &room.objects {
                        if !objects.insert(o.as_str()) {
                            return invalid(format!("object `{o}` appears twice"));
                        }
                    }
                }
                for t in &self.tasks {
                    if let Goal::Deliver { object, room } = &t.goal {
                        if !objects.contains(object.as_str()) || !rooms.contains(room.as_str()) {
                            return invalid(format!(
                                "instruction `{}` names an unknown object or room",
                                t.instruction.id
                            ));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> EnvKind {
        match self.world {
            World::LineShop(_) => EnvKind::LineShop,
            World::BinaryHouse(_) => EnvKind::BinaryHouse,
        }
    }

    pub fn instructions(&self) -> impl Iterator<Item = &Instruction> {
        self.tasks.iter().map(|t| &t.instruction)
    }

    pub fn instruction_ids(&self) -> Vec<String> {
        self.instructions().map(|i| i.id.clone()).collect()
    }

    pub fn task_index(&self, instruction_id: &str) -> Result<usize> {
        self.tasks
            .iter()
            .position(|t| t.instruction.id == instruction_id)
            .ok_or_else(|| Error::UnknownInstruction(instruction_id.to_string()))
    }

    pub fn task(&self, index: usize) -> &Task {
        &self.tasks[index]
    }

    /// Initial state and observation. The environments have no stochastic
    /// initial conditions, so the seed does not change the result.
    pub fn reset(&self, instruction_id: &str, _seed: u64) -> Result<(EnvState, String)> {
        let task = self.task_index(instruction_id)?;
        let phase = match &self.world {
            World::LineShop(_) => Phase::Search,
            World::BinaryHouse(_) => Phase::House {
                room: None,
                holding: None,
            },
        };
        let state = EnvState {
            task,
            phase,
            history: Vec::new(),
        };
        let obs = self.observe(&state);
        Ok((state, obs))
    }

    /// The observation describing the current (non-terminal) phase.
    pub fn observe(&self, state: &EnvState) -> String {
        match &self.world {
            World::LineShop(c) => shop::observe(c, &state.phase),
            World::BinaryHouse(l) => house::observe(l, &state.phase),
        }
    }

    /// Actions accepted in `state`; empty once the episode is over.
    pub fn valid_actions(&self, state: &EnvState) -> Vec<String> {
        if state.is_done() {
            return Vec::new();
        }
        match &self.world {
            World::LineShop(c) => shop::actions(c, &state.phase),
            World::BinaryHouse(l) => house::actions(l, &state.phase),
        }
    }

    /// Applies one action. Invalid actions consume a step and leave the phase
    /// unchanged. Running out of steps ends the episode with score 0.
    pub fn step(&self, state: &EnvState, action: &str) -> Result<StepOutcome> {
        if state.is_done() {
            return Err(Error::InvalidConfig("episode already finished".into()));
        }
        let valid = self.valid_actions(state).iter().any(|a| a == action);
        let transition = if valid {
            match &self.world {
                World::LineShop(c) => shop::apply(c, &self.tasks[state.task].goal, &state.phase, action),
                World::BinaryHouse(l) => house::apply(l, &self.tasks[state.task].goal, &state.phase, action),
            }
        } else {
            Transition {
                phase: state.phase.clone(),
                observation: NOTHING_HAPPENED.to_string(),
                score: None,
            }
        };
        let mut history = state.history.clone();
        history.push(action.to_string());
        let timed_out = transition.score.is_none() && history.len() >= self.max_steps;
        let score = if timed_out { Some(0.0) } else { transition.score };
        let phase = if score.is_some() { Phase::Done } else { transition.phase };
        Ok(StepOutcome {
            state: EnvState {
                task: state.task,
                phase,
                history,
            },
            observation: transition.observation,
            terminal: score.is_some(),
            score,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(spec: &EnvSpec, id: &str, actions: &[&str]) -> StepOutcome {
        let (mut state, mut obs) = spec.reset(id, 0).unwrap();
        let mut last = None;
        for a in actions {
            let out = spec.step(&state, a).unwrap();
            state = out.state.clone();
            obs = out.observation.clone();
            last = Some(out);
        }
        let _ = obs;
        last.unwrap()
    }

    #[test]
    fn defaults_have_documented_sizes() {
        let ls = EnvSpec::lineshop_default();
        match &ls.world {
            World::LineShop(c) => {
                assert_eq!(c.items.len(), 8);
                assert!(c.items.iter().all(|i| i.attributes.len() == 2));
            }
            _ => unreachable!(),
        }
        assert_eq!(ls.tasks.len(), 12);
        let bh = EnvSpec::binaryhouse_default();
        match &bh.world {
            World::BinaryHouse(l) => {
                assert_eq!(l.rooms.len(), 4);
                assert!(l.rooms.iter().all(|r| r.objects.len() == 3));
            }
            _ => unreachable!(),
        }
        assert_eq!(bh.tasks.len(), 10);
    }

    #[test]
    fn reset_is_deterministic() {
        for spec in [EnvSpec::lineshop_default(), EnvSpec::binaryhouse_default()] {
            for id in spec.instruction_ids() {
                let a = spec.reset(&id, 1).unwrap();
                let b = spec.reset(&id, 1).unwrap();
                assert_eq!(a, b);
                assert_eq!(a, spec.reset(&id, 99).unwrap());
            }
        }
        let (_, obs) = EnvSpec::lineshop_default().reset("ls-00", 0).unwrap();
        assert_eq!(obs, "Search box: empty. Results: none.");
        assert!(matches!(
            EnvSpec::lineshop_default().reset("nope", 0),
            Err(Error::UnknownInstruction(_))
        ));
    }

    #[test]
    fn lineshop_partial_match_scores_half() {
        let spec = EnvSpec::lineshop_default();
        let out = run(&spec, "ls-00", &["search[red]", "click[red-large-tee]", "buy"]);
        assert!(out.terminal);
        assert_eq!(out.score, Some(0.5));
        assert_eq!(out.observation, "You bought red-large-tee.");
        let out = run(&spec, "ls-00", &["search[small]", "click[red-small-tee]", "buy"]);
        assert_eq!(out.score, Some(1.0));
    }

    #[test]
    fn binaryhouse_goal_scores_one() {
        let spec = EnvSpec::binaryhouse_default();
        let out = run(
            &spec,
            "bh-00",
            &["go to kitchen", "take apple", "go to hallway", "go to bedroom", "put apple"],
        );
        assert_eq!(out.score, Some(1.0));
        let out = run(&spec, "bh-00", &["go to kitchen", "take apple", "put apple"]);
        assert_eq!(out.score, Some(0.0));
    }

    #[test]
    fn timeout_ends_with_zero() {
        let spec = EnvSpec::lineshop_default();
        let out = run(&spec, "ls-00", &["search[red]", "back", "search[red]", "back", "search[red]"]);
        assert!(out.terminal);
        assert_eq!(out.score, Some(0.0));
        assert_eq!(out.state.steps_taken(), spec.max_steps);
        assert!(spec.step(&out.state, "back").is_err());
    }

    #[test]
    fn invalid_action_is_a_counted_no_op() {
        let spec = EnvSpec::lineshop_default();
        let (s0, _) = spec.reset("ls-00", 0).unwrap();
        let out = spec.step(&s0, "dance").unwrap();
        assert_eq!(out.observation, NOTHING_HAPPENED);
        assert!(!out.terminal);
        assert_eq!(out.state.steps_taken(), 1);
        assert_eq!(spec.valid_actions(&out.state), spec.valid_actions(&s0));
    }

    #[test]
    fn transitions_are_deterministic() {
        let spec = EnvSpec::binaryhouse_default();
        let (s, _) = spec.reset("bh-03", 0).unwrap();
        for a in spec.valid_actions(&s) {
            assert_eq!(spec.step(&s, &a).unwrap(), spec.step(&s, &a).unwrap());
        }
    }

    #[test]
    fn rejects_malformed_specs() {
        let bad_kind = "[env]\nkind = \"maze\"\nmax_steps = 3\ninstructions = []\n";
        assert!(EnvSpec::from_toml_str(bad_kind).is_err());
        let dup = r#"
[env]
kind = "lineshop"
max_steps = 3
[[catalog.items]]
name = "a"
attributes = ["x"]
[[instructions]]
id = "i"
text = "buy x"
attributes = ["x"]
[[instructions]]
id = "i"
text = "buy x"
attributes = ["x"]
"#;
        assert!(matches!(EnvSpec::from_toml_str(dup), Err(Error::InvalidConfig(_))));
        let wrong_goal = r#"
[env]
kind = "binaryhouse"
max_steps = 3
[[layout.rooms]]
name = "k"
objects = ["o"]
[[instructions]]
id = "i"
text = "bring o to k"
attributes = ["x"]
"#;
        assert!(EnvSpec::from_toml_str(wrong_goal).is_err());
    }
}
