//! Trajectory trees: prefix merging of explored trajectories for one
//! instruction.
//!
//! A new step reuses an existing child when the actions are byte-identical and
//! the observations are similar enough under the configured
//! [`SimilarityProvider`]. The first qualifying child in insertion order wins,
//! and the reused child keeps its original observation and thought.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::types::{Instruction, Step, Trajectory};

pub type NodeId = usize;

pub const ROOT: NodeId = 0;

/// Tolerance on the Euclidean norm of sidecar embedding vectors.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityKind {
    Exact,
    TokenJaccard,
    EmbeddingCosine,
}

/// Observation text → unit vector, loaded from a sidecar file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    vectors: HashMap<String, Vec<f64>>,
    dim: Option<usize>,
}

#[derive(Deserialize)]
struct EmbeddingRecord {
    text: String,
    vector: Vec<f64>,
}

impl EmbeddingTable {
    pub fn insert(&mut self, text: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        let text = text.into();
        let norm = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::NonUnitEmbedding { text, norm });
        }
        match self.dim {
            Some(d) if d != vector.len() => {
                return Err(Error::EmbeddingDimension {
                    expected: d,
                    actual: vector.len(),
                })
            }
            _ => self.dim = Some(vector.len()),
        }
        self.vectors.insert(text, vector);
        Ok(())
    }

    pub fn get(&self, text: &str) -> Option<&[f64]> {
        self.vectors.get(text).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Parses the `{"text": ..., "vector": [...]}` JSONL sidecar.
    pub fn parse_jsonl(stream: &str) -> Result<Self> {
        let mut table = Self::default();
        for (idx, raw) in stream.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let rec: EmbeddingRecord =
                serde_json::from_str(raw).map_err(|e| Error::MalformedJson {
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            table.insert(rec.text, rec.vector)?;
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_jsonl(&io::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityProvider {
    kind: SimilarityKind,
    embeddings: Option<EmbeddingTable>,
}

impl SimilarityProvider {
    pub fn exact() -> Self {
        Self {
            kind: SimilarityKind::Exact,
            embeddings: None,
        }
    }

    pub fn token_jaccard() -> Self {
        Self {
            kind: SimilarityKind::TokenJaccard,
            embeddings: None,
        }
    }

    pub fn embedding_cosine(table: EmbeddingTable) -> Self {
        Self {
            kind: SimilarityKind::EmbeddingCosine,
            embeddings: Some(table),
        }
    }

    pub fn kind(&self) -> SimilarityKind {
        self.kind
    }

    pub fn range(&self) -> (f64, f64) {
        match self.kind {
            SimilarityKind::Exact | SimilarityKind::TokenJaccard => (0.0, 1.0),
            SimilarityKind::EmbeddingCosine => (-1.0, 1.0),
        }
    }

    /// Byte-equal texts are similarity 1 under every provider, including two
    /// empty observations.
    pub fn similarity(&self, a: &str, b: &str) -> Result<f64> {
        if a == b {
            return Ok(1.0);
        }
        match self.kind {
            SimilarityKind::Exact => Ok(0.0),
            SimilarityKind::TokenJaccard => Ok(jaccard(a, b)),
            SimilarityKind::EmbeddingCosine => {
                let table = self
                    .embeddings
                    .as_ref()
                    .ok_or_else(|| Error::MissingEmbedding(a.to_string()))?;
                let va = table
                    .get(a)
                    .ok_or_else(|| Error::MissingEmbedding(a.to_string()))?;
                let vb = table
                    .get(b)
                    .ok_or_else(|| Error::MissingEmbedding(b.to_string()))?;
                Ok(va.iter().zip(vb).map(|(x, y)| x * y).sum())
            }
        }
    }
}

fn jaccard(a: &str, b: &str) -> f64 {
    let ta: BTreeSet<String> = a.split_whitespace().map(str::to_lowercase).collect();
    let tb: BTreeSet<String> = b.split_whitespace().map(str::to_lowercase).collect();
    let union = ta.union(&tb).count();
    if union == 0 {
        return 1.0;
    }
    ta.intersection(&tb).count() as f64 / union as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeConfig {
    xi_sim: f64,
    provider: SimilarityProvider,
}

impl TreeConfig {
    pub const DEFAULT_XI_SIM: f64 = 0.90;

    pub fn new(xi_sim: f64, provider: SimilarityProvider) -> Result<Self> {
        let (lo, hi) = provider.range();
        if !(lo..=hi).contains(&xi_sim) {
            return Err(Error::InvalidThreshold { xi: xi_sim, lo, hi });
        }
        Ok(Self { xi_sim, provider })
    }

    pub fn xi_sim(&self) -> f64 {
        self.xi_sim
    }

    pub fn provider(&self) -> &SimilarityProvider {
        &self.provider
    }
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            xi_sim: Self::DEFAULT_XI_SIM,
            provider: SimilarityProvider::exact(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub id: NodeId,
    pub payload: Step,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub visit_count: u64,
    pub terminal_scores: Vec<f64>,
    pub total_reward: f64,
}

impl TreeNode {
    fn new(id: NodeId, payload: Step, parent: Option<NodeId>) -> Self {
        Self {
            id,
            payload,
            parent,
            children: Vec::new(),
            visit_count: 0,
            terminal_scores: Vec::new(),
            total_reward: 0.0,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn is_terminal(&self) -> bool {
        !self.terminal_scores.is_empty()
    }

    /// Mean of the recorded terminal scores, if any.
    pub fn mean_terminal_score(&self) -> Option<f64> {
        if self.terminal_scores.is_empty() {
            None
        } else {
            Some(self.total_reward / self.terminal_scores.len() as f64)
        }
    }
}

/// Node 0 is the synthetic root: its observation is the instruction text and
/// its action is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajTree {
    instruction: Instruction,
    nodes: Vec<TreeNode>,
}

impl TrajTree {
    fn with_root(instruction: Instruction) -> Self {
        let root = TreeNode::new(ROOT, Step::new(instruction.text.clone(), ""), None);
        Self {
            instruction,
            nodes: vec![root],
        }
    }

    pub fn instruction(&self) -> &Instruction {
        &self.instruction
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[ROOT]
    }

    pub fn node(&self, id: NodeId) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() <= 1
    }

    /// Node ids from the root down to `id`, inclusive of both.
    pub fn path_to(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Step payloads along the root-to-`id` path, without the root's step.
    pub fn steps_to(&self, id: NodeId) -> Vec<Step> {
        self.path_to(id)
            .into_iter()
            .skip(1)
            .map(|n| self.nodes[n].payload.clone())
            .collect()
    }

    fn insert(&mut self, t: &Trajectory, config: &TreeConfig) -> Result<()> {
        let mut cur = ROOT;
        self.nodes[ROOT].visit_count += 1;
        for step in &t.steps {
            let mut reuse = None;
            for &child in &self.nodes[cur].children {
                let node = &self.nodes[child];
                if node.payload.action == step.action
                    && config
                        .provider
                        .similarity(&node.payload.observation, &step.observation)?
                        >= config.xi_sim
                {
                    reuse = Some(child);
                    break;
                }
            }
            let next = match reuse {
                Some(child) => child,
                None => {
                    let id = self.nodes.len();
                    self.nodes.push(TreeNode::new(id, step.clone(), Some(cur)));
                    self.nodes[cur].children.push(id);
                    id
                }
            };
            self.nodes[next].visit_count += 1;
            cur = next;
        }
        let terminal = &mut self.nodes[cur];
        terminal.terminal_scores.push(t.score);
        terminal.total_reward += t.score;
        Ok(())
    }

    pub fn to_dump(&self) -> TreeDump {
        TreeDump {
            instruction_id: self.instruction.id.clone(),
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeDump {
                    id: n.id,
                    parent: n.parent,
                    observation: n.payload.observation.clone(),
                    thought: n.payload.thought.clone(),
                    action: n.payload.action.clone(),
                    visit_count: n.visit_count,
                    terminal_scores: n.terminal_scores.clone(),
                    total_reward: n.total_reward,
                    children: n.children.clone(),
                })
                .collect(),
        }
    }

    /// Rebuilds a tree from its dump, checking ids, parent/child links and
    /// reachability. The instruction text is recovered from the root.
    pub fn from_dump(dump: TreeDump) -> Result<Self> {
        let bad = |m: String| Error::MalformedTree(m);
        if dump.nodes.is_empty() {
            return Err(bad("no nodes".into()));
        }
        let n = dump.nodes.len();
        let mut nodes = Vec::with_capacity(n);
        for (i, d) in dump.nodes.into_iter().enumerate() {
            if d.id != i {
                return Err(bad(format!("node at position {i} has id {}", d.id)));
            }
            if (i == ROOT) != d.parent.is_none() {
                return Err(bad(format!("node {i} has an invalid parent")));
            }
            if d.children.iter().any(|&c| c >= n || c <= i) {
                return Err(bad(format!("node {i} has an invalid child id")));
            }
            if d.children.windows(2).any(|w| w[0] >= w[1]) {
                return Err(bad(format!("node {i} children are not increasing")));
            }
            nodes.push(TreeNode {
                id: d.id,
                payload: Step {
                    observation: d.observation,
                    thought: d.thought,
                    action: d.action,
                },
                parent: d.parent,
                children: d.children,
                visit_count: d.visit_count,
                terminal_scores: d.terminal_scores,
                total_reward: d.total_reward,
            });
        }
        let mut seen = vec![false; n];
        seen[ROOT] = true;
        for i in 0..n {
            for &c in &nodes[i].children {
                if nodes[c].parent != Some(i) || seen[c] {
                    return Err(bad(format!("child link {i} -> {c} is inconsistent")));
                }
                seen[c] = true;
            }
        }
        if let Some(orphan) = seen.iter().position(|s| !s) {
            return Err(bad(format!("node {orphan} is unreachable")));
        }
        let instruction = Instruction::new(dump.instruction_id, nodes[ROOT].payload.observation.clone());
        Ok(Self { instruction, nodes })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, &self.to_dump())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_dump(io::read_json(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeDump {
    pub instruction_id: String,
    pub nodes: Vec<NodeDump>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDump {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub observation: String,
    pub thought: String,
    pub action: String,
    pub visit_count: u64,
    pub terminal_scores: Vec<f64>,
    pub total_reward: f64,
    pub children: Vec<NodeId>,
}

/// Merges trajectories for one instruction into a tree, in input order.
pub fn build_tree(trajectories: &[Trajectory], config: &TreeConfig) -> Result<TrajTree> {
    let first = trajectories
        .first()
        .ok_or(Error::EmptyInput("build_tree needs at least one trajectory"))?;
    if let Some(other) = trajectories
        .iter()
        .find(|t| t.instruction.id != first.instruction.id)
    {
        return Err(Error::MixedInstructions {
            first: first.instruction.id.clone(),
            other: other.instruction.id.clone(),
        });
    }
    let mut tree = TrajTree::with_root(first.instruction.clone());
    for t in trajectories {
        tree.insert(t, config)?;
    }
    Ok(tree)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeStats {
    /// Maximum child count over all nodes.
    pub breadth: usize,
    /// Longest root-to-leaf path, in edges.
    pub depth: usize,
    pub divergence_points: usize,
    pub leaves: usize,
    pub ingested: u64,
}

pub fn tree_stats(tree: &TrajTree) -> TreeStats {
    let mut depth_of = vec![0usize; tree.len()];
    // children always carry larger ids than their parent
    for node in tree.nodes().iter().skip(1) {
        depth_of[node.id] = depth_of[node.parent.expect("non-root has parent")] + 1;
    }
    let nodes = tree.nodes();
    TreeStats {
        breadth: nodes.iter().map(|n| n.children.len()).max().unwrap_or(0),
        depth: depth_of.iter().copied().max().unwrap_or(0),
        divergence_points: nodes.iter().filter(|n| n.children.len() >= 2).count(),
        leaves: nodes.iter().filter(|n| n.is_leaf()).count(),
        ingested: tree.root().visit_count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Source;

    fn traj(id: &str, steps: &[(&str, &str)], score: f64) -> Trajectory {
        Trajectory::new(
            Instruction::new(id, "task"),
            steps.iter().map(|(o, a)| Step::new(*o, *a)).collect(),
            None,
            score,
            Source::WeakExplore,
        )
        .unwrap()
    }

    #[test]
    fn similarity_examples() {
        let exact = SimilarityProvider::exact();
        assert_eq!(exact.similarity("a b", "a b").unwrap(), 1.0);
        assert_eq!(exact.similarity("a b", "a  b").unwrap(), 0.0);
        let jac = SimilarityProvider::token_jaccard();
        assert_eq!(jac.similarity("buy red shoe", "buy blue shoe").unwrap(), 0.5);
        assert_eq!(jac.similarity("Buy RED", "buy red").unwrap(), 1.0);
        assert_eq!(jac.similarity("", "").unwrap(), 1.0);
        assert_eq!(jac.similarity("x", "").unwrap(), 0.0);

        let mut table = EmbeddingTable::default();
        let s = 0.5f64.sqrt();
        table.insert("a", vec![1.0, 0.0]).unwrap();
        table.insert("b", vec![s, s]).unwrap();
        let cos = SimilarityProvider::embedding_cosine(table);
        assert!((cos.similarity("a", "b").unwrap() - s).abs() < 1e-15);
        assert_eq!(cos.similarity("b", "b").unwrap(), 1.0);
        assert!(matches!(
            cos.similarity("a", "zzz"),
            Err(Error::MissingEmbedding(t)) if t == "zzz"
        ));
    }

    #[test]
    fn embedding_sidecar_validation() {
        let ok = "{\"text\":\"a\",\"vector\":[0.6,0.8]}\n{\"text\":\"b\",\"vector\":[1.0,0.0]}\n";
        assert_eq!(EmbeddingTable::parse_jsonl(ok).unwrap().len(), 2);
        let not_unit = "{\"text\":\"a\",\"vector\":[0.6,0.9]}\n";
        assert!(matches!(
            EmbeddingTable::parse_jsonl(not_unit),
            Err(Error::NonUnitEmbedding { .. })
        ));
        let dims = "{\"text\":\"a\",\"vector\":[1.0]}\n{\"text\":\"b\",\"vector\":[1.0,0.0]}\n";
        assert!(matches!(
            EmbeddingTable::parse_jsonl(dims),
            Err(Error::EmbeddingDimension { .. })
        ));
    }

    #[test]
    fn threshold_must_be_in_range() {
        assert!(TreeConfig::new(1.5, SimilarityProvider::exact()).is_err());
        assert!(TreeConfig::new(-0.5, SimilarityProvider::token_jaccard()).is_err());
        assert!(TreeConfig::new(-0.5, SimilarityProvider::embedding_cosine(EmbeddingTable::default())).is_ok());
    }

    #[test]
    fn identical_trajectories_merge_fully() {
        let t = traj("i", &[("o1", "a1"), ("o2", "a2"), ("o3", "a3")], 0.4);
        let tree = build_tree(&[t.clone(), t], &TreeConfig::default()).unwrap();
        assert_eq!(tree.len(), 4);
        for n in tree.nodes() {
            assert_eq!(n.visit_count, 2);
        }
        assert_eq!(tree.node(3).total_reward, 0.8);
        assert_eq!(tree.node(3).terminal_scores, vec![0.4, 0.4]);
    }

    #[test]
    fn distinct_first_actions_fan_out() {
        let ts: Vec<_> = (0..5)
            .map(|k| traj("i", &[("o", &format!("a{k}")), ("p", "z")], 0.1 * k as f64))
            .collect();
        let tree = build_tree(&ts, &TreeConfig::default()).unwrap();
        assert_eq!(tree.root().children.len(), 5);
        assert_eq!(tree.root().visit_count, 5);
    }

    #[test]
    fn same_action_dissimilar_observation_branches() {
        let a = traj("i", &[("red shoes here", "buy")], 1.0);
        let b = traj("i", &[("blue shoes here", "buy")], 0.0);
        let strict = build_tree(&[a.clone(), b.clone()], &TreeConfig::default()).unwrap();
        assert_eq!(strict.root().children.len(), 2);
        // jaccard = 2/4
        let loose = TreeConfig::new(0.5, SimilarityProvider::token_jaccard()).unwrap();
        let merged = build_tree(&[a, b], &loose).unwrap();
        assert_eq!(merged.len(), 2);
        assert_eq!(merged.node(1).payload.observation, "red shoes here");
        assert_eq!(merged.node(1).terminal_scores, vec![1.0, 0.0]);
    }

    #[test]
    fn first_thought_is_kept() {
        let mut a = traj("i", &[("o", "a")], 1.0);
        let mut b = a.clone();
        a.steps[0].thought = "first".into();
        b.steps[0].thought = "second".into();
        let tree = build_tree(&[a, b], &TreeConfig::default()).unwrap();
        assert_eq!(tree.node(1).payload.thought, "first");
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            build_tree(&[], &TreeConfig::default()),
            Err(Error::EmptyInput(_))
        ));
        let a = traj("i", &[("o", "a")], 1.0);
        let b = traj("j", &[("o", "a")], 1.0);
        assert!(matches!(
            build_tree(&[a, b], &TreeConfig::default()),
            Err(Error::MixedInstructions { .. })
        ));
    }

    #[test]
    fn stats_examples() {
        let single = traj("i", &[("a", "1"), ("b", "2"), ("c", "3"), ("d", "4")], 1.0);
        let s = tree_stats(&build_tree(&[single], &TreeConfig::default()).unwrap());
        assert_eq!(
            s,
            TreeStats {
                breadth: 1,
                depth: 4,
                divergence_points: 0,
                leaves: 1,
                ingested: 1
            }
        );

        let fan: Vec<_> = ["x", "y", "z"].iter().map(|a| traj("i", &[("o", a)], 0.0)).collect();
        let s = tree_stats(&build_tree(&fan, &TreeConfig::default()).unwrap());
        assert_eq!((s.breadth, s.depth, s.divergence_points, s.leaves, s.ingested), (3, 1, 1, 3, 3));
    }

    #[test]
    fn dump_round_trip_and_validation() {
        let ts = vec![
            traj("i", &[("o", "a"), ("p", "b")], 1.0),
            traj("i", &[("o", "a"), ("p", "c")], 0.5),
        ];
        let tree = build_tree(&ts, &TreeConfig::default()).unwrap();
        let json = serde_json::to_string(&tree.to_dump()).unwrap();
        let back = TrajTree::from_dump(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, tree);

        let mut dump = tree.to_dump();
        dump.nodes[1].children = vec![3, 2];
        assert!(TrajTree::from_dump(dump).is_err());
        let mut dump = tree.to_dump();
        dump.nodes[3].parent = Some(0);
        assert!(TrajTree::from_dump(dump).is_err());
    }
}
