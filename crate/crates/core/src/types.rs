//! Instructions, execution steps and scored trajectories, with the canonical
//! line-delimited JSON encoding used by every pipeline stage.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Instruction {
    pub id: String,
    pub text: String,
}

impl Instruction {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }
}

/// One execution step: the observation that preceded the action, an optional
/// thought (empty when the agent emits none) and the action itself.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Step {
    pub observation: String,
    pub thought: String,
    pub action: String,
}

impl Step {
    pub fn new(observation: impl Into<String>, action: impl Into<String>) -> Self {
        Self {
            observation: observation.into(),
            thought: String::new(),
            action: action.into(),
        }
    }

    pub fn with_thought(mut self, thought: impl Into<String>) -> Self {
        self.thought = thought.into();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    WeakExplore,
    Expert,
    Synthesized,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::WeakExplore => "weak-explore",
            Source::Expert => "expert",
            Source::Synthesized => "synthesized",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "weak-explore" => Ok(Source::WeakExplore),
            "expert" => Ok(Source::Expert),
            "synthesized" => Ok(Source::Synthesized),
            other => Err(other.to_string()),
        }
    }
}

/// A complete episode. `score` is the environment's terminal score G(e).
///
/// Fields are public so that invalid values can be represented and reported
/// by [`validate_trajectory`]; [`Trajectory::new`] is the checked constructor.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub instruction: Instruction,
    pub steps: Vec<Step>,
    pub final_observation: Option<String>,
    pub score: f64,
    pub source: Source,
}

impl Trajectory {
    pub fn new(
        instruction: Instruction,
        steps: Vec<Step>,
        final_observation: Option<String>,
        score: f64,
        source: Source,
    ) -> Result<Self> {
        let t = Self {
            instruction,
            steps,
            final_observation,
            score,
            source,
        };
        let report = validate_trajectory(&t);
        if report.is_empty() {
            Ok(t)
        } else {
            Err(Error::Violations(report))
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn actions(&self) -> impl Iterator<Item = &str> {
        self.steps.iter().map(|s| s.action.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    ScoreOutOfRange(f64),
    EmptySteps,
    EmptyAction { step: usize },
    EmptyObservation { step: usize },
    EmptyInstructionId,
    EmptyInstructionText,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ScoreOutOfRange(s) => write!(f, "score {s} outside [0, 1]"),
            Violation::EmptySteps => f.write_str("trajectory has no steps"),
            Violation::EmptyAction { step } => write!(f, "step {step} has an empty action"),
            Violation::EmptyObservation { step } => {
                write!(f, "step {step} has an empty observation")
            }
            Violation::EmptyInstructionId => f.write_str("instruction id is empty"),
            Violation::EmptyInstructionText => f.write_str("instruction text is empty"),
        }
    }
}

/// Lists every violated invariant; an empty report means the trajectory is valid.
pub fn validate_trajectory(t: &Trajectory) -> Vec<Violation> {
    let mut report = Vec::new();
    if t.instruction.id.is_empty() {
        report.push(Violation::EmptyInstructionId);
    }
    if t.instruction.text.is_empty() {
        report.push(Violation::EmptyInstructionText);
    }
    // NaN fails both comparisons and is reported as out of range
    if !(0.0..=1.0).contains(&t.score) {
        report.push(Violation::ScoreOutOfRange(t.score));
    }
    if t.steps.is_empty() {
        report.push(Violation::EmptySteps);
    }
    for (i, step) in t.steps.iter().enumerate() {
        if step.action.is_empty() {
            report.push(Violation::EmptyAction { step: i });
        }
        if i > 0 && step.observation.is_empty() {
            report.push(Violation::EmptyObservation { step: i });
        }
    }
    report
}

/// Expert demonstrations, one or more per instruction.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExpertDataset {
    pub entries: Vec<Trajectory>,
}

impl ExpertDataset {
    pub fn new(entries: Vec<Trajectory>) -> Result<Self> {
        if let Some(bad) = entries.iter().find(|t| t.source != Source::Expert) {
            return Err(Error::InvalidConfig(format!(
                "expert dataset entry for `{}` has source {}",
                bad.instruction.id, bad.source
            )));
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Wire record, field order is the canonical key order.
#[derive(Serialize, Deserialize)]
struct TrajectoryRecord {
    instruction_id: String,
    instruction: String,
    steps: Vec<Step>,
    final_observation: Option<String>,
    score: f64,
    source: String,
}

impl From<&Trajectory> for TrajectoryRecord {
    fn from(t: &Trajectory) -> Self {
        Self {
            instruction_id: t.instruction.id.clone(),
            instruction: t.instruction.text.clone(),
            steps: t.steps.clone(),
            final_observation: t.final_observation.clone(),
            score: t.score,
            source: t.source.as_str().to_string(),
        }
    }
}

/// Canonical single-line JSON for one trajectory (no trailing newline).
pub fn trajectory_to_json(t: &Trajectory) -> String {
    serde_json::to_string(&TrajectoryRecord::from(t)).expect("trajectory record serializes")
}

/// Canonical JSONL: one object per line, LF-terminated.
pub fn serialize_trajectories(trajectories: &[Trajectory]) -> String {
    let mut out = String::new();
    for t in trajectories {
        out.push_str(&trajectory_to_json(t));
        out.push('\n');
    }
    out
}

/// Parses line-delimited trajectories. Blank lines are skipped; any malformed
/// or invalid line rejects the whole stream.
pub fn parse_trajectories(stream: &str) -> Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    for (idx, raw) in stream.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let record: TrajectoryRecord =
            serde_json::from_str(raw).map_err(|e| Error::MalformedJson {
                line,
                message: e.to_string(),
            })?;
        let source = record
            .source
            .parse::<Source>()
            .map_err(|tag| Error::UnknownSource { line, tag })?;
        let t = Trajectory {
            instruction: Instruction::new(record.instruction_id, record.instruction),
            steps: record.steps,
            final_observation: record.final_observation,
            score: record.score,
            source,
        };
        let violations = validate_trajectory(&t);
        if !violations.is_empty() {
            return Err(Error::InvalidTrajectory { line, violations });
        }
        out.push(t);
    }
    Ok(out)
}
