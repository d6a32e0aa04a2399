//! Independent oracles and generators shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use w2sg_core::pairs::PreferencePair;
use w2sg_core::policy::{Gradient, KeyFn, RawContext, SoftmaxPolicy};
use w2sg_core::tree::{NodeId, TrajTree};
use w2sg_core::{Instruction, Source, Step, Trajectory};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn instruction() -> Instruction {
    Instruction::new("task", "do the task")
}

/// Random trajectories over small alphabets so that prefixes collide often.
/// Scores are multiples of 0.1 to make ties likely.
pub fn random_trajectories(rng: &mut impl Rng, max_count: usize, max_depth: usize) -> Vec<Trajectory> {
    let observations = ["o1", "o2", "o3"];
    let actions = ["a", "b", "c"];
    let n = rng.gen_range(1..=max_count);
    (0..n)
        .map(|_| {
            let depth = rng.gen_range(1..=max_depth);
            let steps = (0..depth)
                .map(|_| {
                    let mut s = Step::new(*observations.choose(rng).unwrap(), *actions.choose(rng).unwrap());
                    if rng.gen_bool(0.2) {
                        s.thought = format!("t{}", rng.gen_range(0..3));
                    }
                    s
                })
                .collect();
            let score = f64::from(rng.gen_range(0..=10u8)) / 10.0;
            Trajectory::new(instruction(), steps, None, score, Source::WeakExplore).unwrap()
        })
        .collect()
}

#[derive(Debug, Default)]
pub struct TrieEntry {
    /// Creation order over all trie nodes, the root being 0.
    pub order: usize,
    pub visits: u64,
    pub scores: Vec<f64>,
    pub thought: String,
}

/// Prefix trie keyed on (observation, action) sequences.
pub fn prefix_trie(trajectories: &[Trajectory]) -> BTreeMap<Vec<(String, String)>, TrieEntry> {
    let mut trie: BTreeMap<Vec<(String, String)>, TrieEntry> = BTreeMap::new();
    trie.insert(Vec::new(), TrieEntry::default());
    for t in trajectories {
        let mut key = Vec::new();
        trie.get_mut(&key).unwrap().visits += 1;
        for s in &t.steps {
            key.push((s.observation.clone(), s.action.clone()));
            let next = trie.len();
            let e = trie.entry(key.clone()).or_insert_with(|| TrieEntry {
                order: next,
                thought: s.thought.clone(),
                ..TrieEntry::default()
            });
            e.visits += 1;
        }
        trie.get_mut(&key).unwrap().scores.push(t.score);
    }
    trie
}

fn node_key(tree: &TrajTree, id: NodeId) -> Vec<(String, String)> {
    tree.steps_to(id)
        .into_iter()
        .map(|s| (s.observation, s.action))
        .collect()
}

/// Exact structural comparison of a tree built with exact matching at
/// threshold 1 against the prefix trie of the same input.
pub fn compare_with_trie(tree: &TrajTree, trajectories: &[Trajectory]) -> Result<(), String> {
    let trie = prefix_trie(trajectories);
    if tree.len() != trie.len() {
        return Err(format!("node count {} vs trie {}", tree.len(), trie.len()));
    }
    for node in tree.nodes() {
        let key = node_key(tree, node.id);
        let e = trie.get(&key).ok_or_else(|| format!("node {} has no trie counterpart", node.id))?;
        if e.order != node.id {
            return Err(format!("node {} created in trie position {}", node.id, e.order));
        }
        if e.visits != node.visit_count {
            return Err(format!("node {} visits {} vs {}", node.id, node.visit_count, e.visits));
        }
        if e.scores != node.terminal_scores {
            return Err(format!("node {} terminal scores differ", node.id));
        }
        if node.id != 0 && e.thought != node.payload.thought {
            return Err(format!("node {} kept a later thought", node.id));
        }
        let sum: f64 = e.scores.iter().sum();
        if sum != node.total_reward {
            return Err(format!("node {} total reward {} vs {sum}", node.id, node.total_reward));
        }
        let mut want: Vec<usize> = trie
            .iter()
            .filter(|(k, _)| k.len() == key.len() + 1 && k.starts_with(&key))
            .map(|(_, v)| v.order)
            .collect();
        want.sort_unstable();
        if want != node.children {
            return Err(format!("node {} children {:?} vs {want:?}", node.id, node.children));
        }
    }
    Ok(())
}

/// Best terminal score anywhere in the subtree of `id` (recursive search).
pub fn subtree_best(tree: &TrajTree, id: NodeId) -> f64 {
    let node = tree.node(id);
    let own = node.terminal_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    node.children.iter().map(|&c| subtree_best(tree, c)).fold(own, f64::max)
}

/// Every downward path from `id` that ends on a node recording `target`.
fn paths_to_score(tree: &TrajTree, id: NodeId, target: f64, prefix: &mut Vec<NodeId>, out: &mut Vec<Vec<NodeId>>) {
    prefix.push(id);
    let node = tree.node(id);
    if node.terminal_scores.contains(&target) {
        out.push(prefix.clone());
    }
    for &c in &node.children {
        paths_to_score(tree, c, target, prefix, out);
    }
    prefix.pop();
}

/// Lexicographically smallest id path (a prefix sorts first) from `id` to a
/// terminal recording the subtree's best score.
pub fn best_path(tree: &TrajTree, id: NodeId) -> Vec<Step> {
    let target = subtree_best(tree, id);
    let mut all = Vec::new();
    paths_to_score(tree, id, target, &mut Vec::new(), &mut all);
    let best = all.into_iter().min().expect("a best terminal exists");
    best.into_iter().map(|n| tree.node(n).payload.clone()).collect()
}

/// Brute force over every (divergence node, ordered child pair).
pub fn brute_force_pairs(tree: &TrajTree, min_gap: f64) -> Vec<PreferencePair> {
    let mut out = Vec::new();
    for node in tree.nodes() {
        if node.children.len() < 2 {
            continue;
        }
        let prefix: Vec<Step> = tree.path_to(node.id).into_iter().skip(1).map(|n| tree.node(n).payload.clone()).collect();
        for &a in &node.children {
            for &b in &node.children {
                let (sa, sb) = (subtree_best(tree, a), subtree_best(tree, b));
                if a == b || sa - sb <= 0.0 || sa - sb < min_gap {
                    continue;
                }
                out.push(PreferencePair::new(
                    tree.instruction().clone(),
                    prefix.clone(),
                    best_path(tree, a),
                    best_path(tree, b),
                    sa,
                    sb,
                ));
            }
        }
    }
    out
}

/// Random contexts with 1 to 4 actions each.
pub fn random_contexts(rng: &mut impl Rng, n: usize) -> Vec<RawContext> {
    (0..n)
        .map(|i| {
            let k = rng.gen_range(1..=4);
            RawContext {
                instruction: format!("task {}", i % 2),
                observation: format!("obs {i}"),
                actions: (0..k).map(|a| format!("act{a}")).collect(),
            }
        })
        .collect()
}

pub fn random_policy(rng: &mut impl Rng, key_fn: KeyFn, temperature: f64, contexts: &[RawContext], scale: f64) -> SoftmaxPolicy {
    let mut p = SoftmaxPolicy::uniform(key_fn, temperature, contexts).unwrap();
    for c in contexts {
        let key = p.key(&c.instruction, &c.observation);
        for a in &c.actions {
            p.set_logit(&key, a, rng.gen_range(-scale..scale)).unwrap();
        }
    }
    p
}

/// A random walk through the given contexts, as a trajectory.
pub fn random_walk(rng: &mut impl Rng, contexts: &[RawContext], max_len: usize) -> Trajectory {
    let len = rng.gen_range(1..=max_len);
    let task = rng.gen_range(0..2);
    let pool: Vec<&RawContext> = contexts.iter().filter(|c| c.instruction == format!("task {task}")).collect();
    let steps = (0..len)
        .map(|_| {
            let c = pool.choose(rng).unwrap();
            Step::new(c.observation.clone(), c.actions.choose(rng).unwrap().clone())
        })
        .collect();
    let score = rng.gen_range(0.0..=1.0);
    Trajectory::new(
        Instruction::new(format!("i{task}"), format!("task {task}")),
        steps,
        None,
        score,
        Source::Expert,
    )
    .unwrap()
}

/// Central finite differences over every logit of `policy`, compared with
/// `analytic`. Returns ‖g − fd‖ / max(‖g‖, ‖fd‖, 1e-8).
pub fn finite_difference_error(
    policy: &SoftmaxPolicy,
    analytic: &Gradient,
    loss: impl Fn(&SoftmaxPolicy) -> f64,
    h: f64,
) -> f64 {
    let (mut diff, mut g2, mut fd2) = (0.0, 0.0, 0.0);
    let keys: Vec<String> = policy.contexts().map(str::to_string).collect();
    for key in &keys {
        for action in policy.actions(key).unwrap().to_vec() {
            let base = policy.logit(key, &action).unwrap();
            let mut plus = policy.clone();
            plus.set_logit(key, &action, base + h).unwrap();
            let mut minus = policy.clone();
            minus.set_logit(key, &action, base - h).unwrap();
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let g = analytic.get(policy, key, &action).unwrap_or(0.0);
            diff += (g - fd).powi(2);
            g2 += g * g;
            fd2 += fd * fd;
        }
    }
    diff.sqrt() / g2.sqrt().max(fd2.sqrt()).max(1e-8)
}
