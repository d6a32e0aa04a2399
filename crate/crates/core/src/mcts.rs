//! Offline Monte Carlo Tree Search over a static trajectory tree.
//!
//! The tree is fully materialized from explored trajectories, so an iteration
//! is selection down to a terminal node followed by backup of that node's mean
//! terminal score. There is no expansion or rollout phase and the tree is
//! never modified.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::tree::{NodeId, TrajTree, ROOT};
use crate::types::{serialize_trajectories, Source, Trajectory};

/// What the `C` term of the UCB exploration bonus counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CmMode {
    /// Visit count of the parent being expanded (standard UCT).
    #[default]
    ParentVisits,
    /// Number of completed search iterations.
    GlobalIterations,
}

impl CmMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CmMode::ParentVisits => "parent-visits",
            CmMode::GlobalIterations => "global-iterations",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MctsConfig {
    pub iterations: u64,
    pub gamma: f64,
    pub cm_mode: CmMode,
    /// Recorded with the stats. Selection is fully deterministic (ties go to
    /// the lowest node id), so the seed does not influence the search.
    pub seed: u64,
}

impl MctsConfig {
    pub const DEFAULT_GAMMA: f64 = std::f64::consts::SQRT_2;
    pub const ITERATIONS_PER_LEAF: u64 = 50;
    pub const MAX_DEFAULT_ITERATIONS: u64 = 10_000;

    /// 50 iterations per leaf, capped at 10,000.
    pub fn default_iterations(tree: &TrajTree) -> u64 {
        let leaves = tree.nodes().iter().filter(|n| n.is_leaf()).count() as u64;
        (Self::ITERATIONS_PER_LEAF * leaves).clamp(1, Self::MAX_DEFAULT_ITERATIONS)
    }

    pub fn for_tree(tree: &TrajTree) -> Self {
        Self {
            iterations: Self::default_iterations(tree),
            gamma: Self::DEFAULT_GAMMA,
            cm_mode: CmMode::ParentVisits,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("MCTS iterations must be at least 1".into()));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "MCTS gamma must be non-negative, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Cumulative backed-up reward `r` and visit count `c`, indexed by node id.
#[derive(Debug, Clone, PartialEq)]
pub struct MctsStats {
    pub r: Vec<f64>,
    pub c: Vec<u64>,
    /// Completed iterations.
    pub total: u64,
}

impl MctsStats {
    fn new(n: usize) -> Self {
        Self {
            r: vec![0.0; n],
            c: vec![0; n],
            total: 0,
        }
    }

    pub fn mean(&self, id: NodeId) -> Option<f64> {
        (self.c[id] > 0).then(|| self.r[id] / self.c[id] as f64)
    }

    pub fn to_dump(&self, config: &MctsConfig) -> StatsDump {
        StatsDump {
            iterations: config.iterations,
            gamma: config.gamma,
            cm_mode: config.cm_mode.as_str().to_string(),
            seed: config.seed,
            stats: (0..self.c.len())
                .filter(|&i| self.c[i] > 0)
                .map(|i| NodeStat {
                    node_id: i,
                    r: self.r[i],
                    c: self.c[i],
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsDump {
    pub iterations: u64,
    pub gamma: f64,
    pub cm_mode: String,
    pub seed: u64,
    pub stats: Vec<NodeStat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeStat {
    pub node_id: NodeId,
    pub r: f64,
    pub c: u64,
}

/// `r/c + gamma * sqrt(ln(total) / c)`; an unvisited node (`c == 0`) scores
/// positive infinity.
pub fn ucb(r: f64, c: u64, total: u64, gamma: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::ZeroTotalVisits);
    }
    if c == 0 {
        return Ok(f64::INFINITY);
    }
    let c = c as f64;
    Ok(r / c + gamma * ((total as f64).ln() / c).sqrt())
}

fn check_searchable(tree: &TrajTree) -> Result<()> {
    if !tree.nodes().iter().any(|n| n.is_terminal()) {
        return Err(Error::NoTerminalScores);
    }
    if let Some(bad) = tree.nodes().iter().find(|n| n.is_leaf() && !n.is_terminal()) {
        return Err(Error::MalformedTree(format!(
            "leaf {} has no terminal score",
            bad.id
        )));
    }
    Ok(())
}

pub fn run_mcts(tree: &TrajTree, config: &MctsConfig) -> Result<MctsStats> {
    config.validate()?;
    check_searchable(tree)?;
    let mut stats = MctsStats::new(tree.len());
    let mut path = Vec::new();
    for _ in 0..config.iterations {
        path.clear();
        let mut cur = ROOT;
        path.push(cur);
        loop {
            let node = tree.node(cur);
            if node.is_leaf() {
                break;
            }
            let unvisited = node.children.iter().copied().find(|&c| stats.c[c] == 0);
            if node.is_terminal() && unvisited.is_none() {
                break;
            }
            cur = match unvisited {
                Some(c) => c,
                None => {
                    let total = match config.cm_mode {
                        CmMode::ParentVisits => stats.c[cur],
                        CmMode::GlobalIterations => stats.total,
                    };
                    let mut best = node.children[0];
                    let mut best_score = f64::NEG_INFINITY;
                    for &c in &node.children {
                        let score = ucb(stats.r[c], stats.c[c], total, config.gamma)?;
                        if score > best_score {
                            best = c;
                            best_score = score;
                        }
                    }
                    best
                }
            };
            path.push(cur);
        }
        let value = tree
            .node(cur)
            .mean_terminal_score()
            .expect("descent stops at a scored node");
        for &v in &path {
            stats.r[v] += value;
            stats.c[v] += 1;
        }
        stats.total += 1;
    }
    Ok(stats)
}

/// Greedy descent by highest `r/c` among visited children (ties → lowest id)
/// until a node with recorded terminal scores.
pub fn extract_optimal_path(tree: &TrajTree, stats: &MctsStats) -> Result<Trajectory> {
    if stats.c.len() != tree.len() {
        return Err(Error::InvalidConfig(
            "MCTS stats do not belong to this tree".into(),
        ));
    }
    let mut cur = ROOT;
    let mut steps = Vec::new();
    loop {
        let node = tree.node(cur);
        if cur != ROOT && node.is_terminal() {
            break;
        }
        let mut best: Option<(NodeId, f64)> = None;
        for &c in &node.children {
            if let Some(m) = stats.mean(c) {
                if best.is_none_or(|(_, b)| m > b) {
                    best = Some((c, m));
                }
            }
        }
        let (next, _) = best.ok_or(Error::NoVisitedTerminal)?;
        steps.push(tree.node(next).payload.clone());
        cur = next;
    }
    let score = tree.node(cur).mean_terminal_score().expect("terminal node");
    Trajectory::new(
        tree.instruction().clone(),
        steps,
        None,
        score,
        Source::Synthesized,
    )
}

/// Writes synthesized paths as trajectory JSONL; returns the record count.
pub fn export_sft_jsonl(paths: &[Trajectory], destination: &Path) -> Result<usize> {
    if let Some(bad) = paths.iter().find(|t| t.source != Source::Synthesized) {
        return Err(Error::InvalidConfig(format!(
            "SFT export expects synthesized paths, got {} for `{}`",
            bad.source, bad.instruction.id
        )));
    }
    io::write_atomic(destination, serialize_trajectories(paths).as_bytes())?;
    Ok(paths.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{build_tree, TreeConfig};
    use crate::types::{parse_trajectories, Instruction, Step};

    fn traj(steps: &[(&str, &str)], score: f64) -> Trajectory {
        Trajectory::new(
            Instruction::new("i", "task"),
            steps.iter().map(|(o, a)| Step::new(*o, *a)).collect(),
            None,
            score,
            Source::WeakExplore,
        )
        .unwrap()
    }

    fn config(iterations: u64) -> MctsConfig {
        MctsConfig {
            iterations,
            gamma: MctsConfig::DEFAULT_GAMMA,
            cm_mode: CmMode::ParentVisits,
            seed: 0,
        }
    }

    #[test]
    fn ucb_examples() {
        assert_eq!(ucb(1.0, 1, 1, 1.0).unwrap(), 1.0);
        assert_eq!(ucb(123.0, 0, 5, 1.0).unwrap(), f64::INFINITY);
        assert!(matches!(ucb(1.0, 1, 0, 1.0), Err(Error::ZeroTotalVisits)));
    }

    #[test]
    fn single_path_backup() {
        let tree = build_tree(&[traj(&[("a", "1"), ("b", "2"), ("c", "3")], 0.7)], &TreeConfig::default()).unwrap();
        let stats = run_mcts(&tree, &config(5)).unwrap();
        for id in 0..tree.len() {
            assert_eq!(stats.c[id], 5);
            assert!((stats.r[id] - 3.5).abs() < 1e-12);
        }
        let best = extract_optimal_path(&tree, &stats).unwrap();
        assert_eq!(best.len(), 3);
        assert_eq!(best.score, 0.7);
        assert_eq!(best.source, Source::Synthesized);
    }

    #[test]
    fn two_branch_prefers_high_branch() {
        let tree = build_tree(
            &[traj(&[("o", "hi")], 0.9), traj(&[("o", "lo")], 0.1)],
            &TreeConfig::default(),
        )
        .unwrap();
        for mode in [CmMode::ParentVisits, CmMode::GlobalIterations] {
            let stats = run_mcts(&tree, &MctsConfig { cm_mode: mode, ..config(100) }).unwrap();
            assert!(stats.c[1] > stats.c[2]);
            assert!((stats.mean(1).unwrap() - 0.9).abs() < 1e-12);
            assert_eq!(stats.c[1] + stats.c[2], 100);
            assert_eq!(extract_optimal_path(&tree, &stats).unwrap().steps[0].action, "hi");
        }
    }

    #[test]
    fn ties_go_to_lowest_id() {
        let tree = build_tree(
            &[traj(&[("o", "first")], 0.5), traj(&[("o", "second")], 0.5)],
            &TreeConfig::default(),
        )
        .unwrap();
        let stats = run_mcts(&tree, &config(10)).unwrap();
        assert_eq!(stats.mean(1), stats.mean(2));
        assert_eq!(extract_optimal_path(&tree, &stats).unwrap().steps[0].action, "first");
    }

    #[test]
    fn stops_at_scored_node_once_children_visited() {
        // "x" is both a terminal (0.2) and the parent of a deeper terminal (1.0)
        let tree = build_tree(
            &[traj(&[("o", "x")], 0.2), traj(&[("o", "x"), ("p", "y")], 1.0)],
            &TreeConfig::default(),
        )
        .unwrap();
        let stats = run_mcts(&tree, &config(4)).unwrap();
        assert_eq!(stats.c[2], 1);
        assert_eq!(stats.c[1], 4);
        assert!((stats.r[0] - (1.0 + 3.0 * 0.2)).abs() < 1e-12);
    }

    #[test]
    fn rejects_invalid_inputs() {
        let tree = build_tree(&[traj(&[("o", "a")], 0.5)], &TreeConfig::default()).unwrap();
        assert!(run_mcts(&tree, &config(0)).is_err());
        assert!(run_mcts(&tree, &MctsConfig { gamma: -1.0, ..config(1) }).is_err());
        let stats = MctsStats::new(tree.len());
        assert!(matches!(
            extract_optimal_path(&tree, &stats),
            Err(Error::NoVisitedTerminal)
        ));
    }

    #[test]
    fn default_iterations_scale_with_leaves() {
        let ts: Vec<_> = (0..3).map(|k| traj(&[("o", &k.to_string())], 0.0)).collect();
        let tree = build_tree(&ts, &TreeConfig::default()).unwrap();
        assert_eq!(MctsConfig::default_iterations(&tree), 150);
    }

    #[test]
    fn sft_export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("paths.jsonl");
        assert_eq!(export_sft_jsonl(&[], &path).unwrap(), 0);
        let tree = build_tree(&[traj(&[("a", "1"), ("b", "2")], 0.7)], &TreeConfig::default()).unwrap();
        let stats = run_mcts(&tree, &config(3)).unwrap();
        let e = extract_optimal_path(&tree, &stats).unwrap();
        assert_eq!(export_sft_jsonl(std::slice::from_ref(&e), &path).unwrap(), 1);
        let back = parse_trajectories(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(back, vec![e]);
        assert!(export_sft_jsonl(&[traj(&[("a", "1")], 0.1)], &path).is_err());
    }

    #[test]
    fn stats_dump_lists_visited_nodes() {
        let tree = build_tree(
            &[traj(&[("o", "hi")], 0.9), traj(&[("o", "lo")], 0.1)],
            &TreeConfig::default(),
        )
        .unwrap();
        let cfg = config(2);
        let dump = run_mcts(&tree, &cfg).unwrap().to_dump(&cfg);
        assert_eq!(dump.cm_mode, "parent-visits");
        assert_eq!(dump.stats.len(), 3);
        let json = serde_json::to_value(&dump).unwrap();
        assert_eq!(json["stats"][0]["node_id"], 0);
        assert_eq!(json["stats"][0]["c"], 2);
    }
}
