//! Preference pairs taken from the divergence points of a trajectory tree.
//!
//! At every node with two or more children, each ordered child pair whose
//! branch quality differs (by at least `min_gap`) yields one pair. The two
//! continuations share the path from the root to the divergence node and then
//! follow each child down to its best-scoring terminal descendant.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::tree::{NodeId, TrajTree};
use crate::types::{Instruction, Step};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregate {
    /// Best terminal score in the branch.
    #[default]
    Max,
    /// Mean over every terminal score recorded in the branch.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairMode {
    #[default]
    AllPairs,
    BestVsWorst,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairConfig {
    pub min_gap: f64,
    pub aggregate: Aggregate,
    pub mode: PairMode,
}

impl PairConfig {
    pub fn with_min_gap(min_gap: f64) -> Self {
        Self {
            min_gap,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    pub instruction: Instruction,
    pub prefix: Vec<Step>,
    pub chosen: Vec<Step>,
    pub rejected: Vec<Step>,
    pub chosen_score: f64,
    pub rejected_score: f64,
    pub gap: f64,
}

impl PreferencePair {
    pub fn new(
        instruction: Instruction,
        prefix: Vec<Step>,
        chosen: Vec<Step>,
        rejected: Vec<Step>,
        chosen_score: f64,
        rejected_score: f64,
    ) -> Self {
        Self {
            instruction,
            prefix,
            chosen,
            rejected,
            chosen_score,
            rejected_score,
            gap: chosen_score - rejected_score,
        }
    }

    /// prefix ‖ chosen
    pub fn chosen_path(&self) -> Vec<Step> {
        self.prefix.iter().chain(&self.chosen).cloned().collect()
    }

    /// prefix ‖ rejected
    pub fn rejected_path(&self) -> Vec<Step> {
        self.prefix.iter().chain(&self.rejected).cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairDataset {
    pub pairs: Vec<PreferencePair>,
}

impl PairDataset {
    pub fn count(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn extend(&mut self, other: PairDataset) {
        self.pairs.extend(other.pairs);
    }
}

impl FromIterator<PreferencePair> for PairDataset {
    fn from_iter<I: IntoIterator<Item = PreferencePair>>(iter: I) -> Self {
        Self {
            pairs: iter.into_iter().collect(),
        }
    }
}

/// Per-node subtree summaries, computed bottom-up in one pass.
struct BranchSummary {
    best: Vec<f64>,
    sum: Vec<f64>,
    count: Vec<usize>,
}

impl BranchSummary {
    fn of(tree: &TrajTree) -> Self {
        let n = tree.len();
        let mut best = vec![f64::NEG_INFINITY; n];
        let mut sum = vec![0.0; n];
        let mut count = vec![0usize; n];
        // children have larger ids than parents, so reverse id order is bottom-up
        for node in tree.nodes().iter().rev() {
            let id = node.id;
            for &s in &node.terminal_scores {
                best[id] = best[id].max(s);
            }
            sum[id] += node.total_reward;
            count[id] += node.terminal_scores.len();
            for &c in &node.children {
                best[id] = best[id].max(best[c]);
                sum[id] += sum[c];
                count[id] += count[c];
            }
        }
        Self { best, sum, count }
    }

    fn quality(&self, id: NodeId, aggregate: Aggregate) -> f64 {
        match aggregate {
            Aggregate::Max => self.best[id],
            Aggregate::Mean if self.count[id] == 0 => f64::NEG_INFINITY,
            Aggregate::Mean => self.sum[id] / self.count[id] as f64,
        }
    }

    /// Descends from `from` to the terminal that achieves the branch's best
    /// score: stop at the first node whose own terminal scores reach it,
    /// otherwise take the lowest-id child whose subtree reaches it.
    fn best_continuation(&self, tree: &TrajTree, from: NodeId) -> Vec<Step> {
        let target = self.best[from];
        let mut cur = from;
        let mut steps = vec![tree.node(cur).payload.clone()];
        loop {
            let node = tree.node(cur);
            if node.terminal_scores.contains(&target) {
                return steps;
            }
            cur = *node
                .children
                .iter()
                .find(|&&c| self.best[c] == target)
                .expect("best score is attained in some child");
            steps.push(tree.node(cur).payload.clone());
        }
    }
}

pub fn extract_pairs(tree: &TrajTree, min_gap: f64) -> PairDataset {
    extract_pairs_with(tree, &PairConfig::with_min_gap(min_gap))
}

pub fn extract_pairs_with(tree: &TrajTree, config: &PairConfig) -> PairDataset {
    let summary = BranchSummary::of(tree);
    let qualifies = |gap: f64| gap > 0.0 && gap >= config.min_gap;
    let mut out = Vec::new();
    for node in tree.nodes().iter().filter(|n| n.children.len() >= 2) {
        let candidates: Vec<(NodeId, NodeId)> = match config.mode {
            PairMode::AllPairs => node
                .children
                .iter()
                .flat_map(|&a| node.children.iter().map(move |&b| (a, b)))
                .filter(|(a, b)| a != b)
                .collect(),
            PairMode::BestVsWorst => {
                let q = |c: &NodeId| summary.quality(*c, config.aggregate);
                let mut best = node.children[0];
                let mut worst = node.children[0];
                for c in &node.children[1..] {
                    if q(c) > q(&best) {
                        best = *c;
                    }
                    if q(c) < q(&worst) {
                        worst = *c;
                    }
                }
                vec![(best, worst)]
            }
        };
        let mut prefix = None;
        for (plus, minus) in candidates {
            let chosen_score = summary.quality(plus, config.aggregate);
            let rejected_score = summary.quality(minus, config.aggregate);
            if !qualifies(chosen_score - rejected_score) {
                continue;
            }
            let prefix = prefix.get_or_insert_with(|| tree.steps_to(node.id));
            out.push(PreferencePair::new(
                tree.instruction().clone(),
                prefix.clone(),
                summary.best_continuation(tree, plus),
                summary.best_continuation(tree, minus),
                chosen_score,
                rejected_score,
            ));
        }
    }
    PairDataset { pairs: out }
}

/// The trainer hand-off record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoRecord {
    pub instruction_id: String,
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub chosen_score: f64,
    pub rejected_score: f64,
}

/// Renders steps as `Observation:/Thought:/Action:` blocks, one line each.
pub fn render_steps(steps: &[Step]) -> String {
    let mut out = String::new();
    for s in steps {
        out.push_str("Observation: ");
        out.push_str(&s.observation);
        out.push_str("\nThought: ");
        out.push_str(&s.thought);
        out.push_str("\nAction: ");
        out.push_str(&s.action);
        out.push('\n');
    }
    out
}

/// Inverse of [`render_steps`] for single-line field values.
pub fn parse_rendered_steps(text: &str) -> Result<Vec<Step>> {
    let lines: Vec<&str> = text.lines().collect();
    if !lines.len().is_multiple_of(3) {
        return Err(Error::InvalidConfig(format!(
            "rendered steps have {} lines, expected a multiple of 3",
            lines.len()
        )));
    }
    lines
        .chunks(3)
        .map(|block| {
            let field = |line: &str, tag: &str| {
                line.strip_prefix(tag).map(str::to_string).ok_or_else(|| {
                    Error::InvalidConfig(format!("expected `{tag}` block line, got {line:?}"))
                })
            };
            Ok(Step {
                observation: field(block[0], "Observation: ")?,
                thought: field(block[1], "Thought: ")?,
                action: field(block[2], "Action: ")?,
            })
        })
        .collect()
}

impl DpoRecord {
    pub fn from_pair(pair: &PreferencePair) -> Self {
        Self {
            instruction_id: pair.instruction.id.clone(),
            prompt: format!("{}\n{}", pair.instruction.text, render_steps(&pair.prefix)),
            chosen: render_steps(&pair.chosen),
            rejected: render_steps(&pair.rejected),
            chosen_score: pair.chosen_score,
            rejected_score: pair.rejected_score,
        }
    }

    pub fn to_pair(&self) -> Result<PreferencePair> {
        let (text, prefix) = self.prompt.split_once('\n').ok_or_else(|| {
            Error::InvalidConfig("DPO prompt is missing the instruction line".into())
        })?;
        Ok(PreferencePair::new(
            Instruction::new(self.instruction_id.clone(), text),
            parse_rendered_steps(prefix)?,
            parse_rendered_steps(&self.chosen)?,
            parse_rendered_steps(&self.rejected)?,
            self.chosen_score,
            self.rejected_score,
        ))
    }
}

/// Writes one DPO record per pair and returns the number of lines written.
pub fn export_dpo_jsonl(ds: &PairDataset, destination: &Path) -> Result<usize> {
    let records: Vec<DpoRecord> = ds.pairs.iter().map(DpoRecord::from_pair).collect();
    io::write_jsonl(destination, &records)
}

pub fn parse_dpo_jsonl(stream: &str) -> Result<Vec<DpoRecord>> {
    stream
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::MalformedJson {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
