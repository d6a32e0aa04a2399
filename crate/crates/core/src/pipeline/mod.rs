//! Stage orchestration with on-disk artifacts.
//!
//! Every stage writes its outputs atomically under the run's output
//! directory. A stage whose artifacts already exist is loaded instead of
//! recomputed when reuse is allowed (`--resume`, or a prerequisite of a
//! single-stage command). All randomness comes from named streams of the
//! master seed:
//!
//! | stream                  | used by                                |
//! |-------------------------|----------------------------------------|
//! | `explore/<id>`          | weak exploration rollouts              |
//! | `ceiling-explore/<id>`  | strong SFT rollouts for ceiling pairs  |
//! | `mcts/<id>`             | recorded in MCTS stats                 |
//! | `eval/<id>`             | Monte Carlo evaluation                 |
//! | `best-of-n/<id>`        | Monte Carlo best-of-N evaluation       |

mod config;

pub use config::{
    EvalSection, ExploreSection, MctsSection, PairsSection, PolicySection, RunConfig, TrainSection, TreeSection,
};

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::mcts::{export_sft_jsonl, extract_optimal_path, run_mcts, MctsConfig};
use crate::metrics::{EvalConfig, EvalReport, Evaluator};
use crate::pairs::{export_dpo_jsonl, extract_pairs_with, parse_dpo_jsonl, PairDataset, PreferencePair};
use crate::policy::{train, LossSpec, RawContext, SoftmaxPolicy, TrainConfig};
use crate::rng;
use crate::toyenv::{expert_demos, reachable_contexts, rollout, EnvSpec};
use crate::tree::{build_tree, TrajTree};
use crate::types::{parse_trajectories, serialize_trajectories, ExpertDataset, Trajectory};

/// Report rows, in table order.
pub const METHODS: [&str; 6] = ["weak-sft", "w2s-tree-dpo", "w2s-mcts", "strong-sft", "best-of-n", "ceiling"];

/// Trainable stages, as named on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainStage {
    WeakSft,
    ExploreRefine,
    TreeDpo,
    MctsSft,
    StrongSft,
    Ceiling,
}

impl TrainStage {
    pub const ALL: [TrainStage; 6] = [
        TrainStage::WeakSft,
        TrainStage::ExploreRefine,
        TrainStage::TreeDpo,
        TrainStage::MctsSft,
        TrainStage::StrongSft,
        TrainStage::Ceiling,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TrainStage::WeakSft => "weak-sft",
            TrainStage::ExploreRefine => "explore-refine",
            TrainStage::TreeDpo => "tree-dpo",
            TrainStage::MctsSft => "mcts-sft",
            TrainStage::StrongSft => "strong-sft",
            TrainStage::Ceiling => "ceiling",
        }
    }

    fn policy_file(self) -> &'static str {
        match self {
            TrainStage::WeakSft => "weak_sft",
            TrainStage::ExploreRefine => "weak_explore",
            TrainStage::TreeDpo => "w2s_tree_dpo",
            TrainStage::MctsSft => "w2s_mcts",
            TrainStage::StrongSft => "strong_sft",
            TrainStage::Ceiling => "ceiling",
        }
    }
}

impl fmt::Display for TrainStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainStage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TrainStage::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown training stage `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub expected_score: f64,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct W2sReport {
    pub seed: u64,
    pub env: String,
    pub tree_dpo_pairs: usize,
    pub ceiling_pairs: usize,
    pub rows: Vec<ReportRow>,
}

impl W2sReport {
    pub fn score(&self, method: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.method == method).map(|r| r.expected_score)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,expected_score,success_rate\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.method, r.expected_score, r.success_rate);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub m: usize,
    pub scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub seed: u64,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    /// One row per breadth with one expected-score column per method.
    pub fn to_csv(&self) -> String {
        let mut out = format!("m,{}\n", METHODS.join(","));
        for r in &self.rows {
            let cols: Vec<String> = METHODS.iter().map(|m| r.scores.get(*m).map_or(String::new(), f64::to_string)).collect();
            let _ = writeln!(out, "{},{}", r.m, cols.join(","));
        }
        out
    }
}

/// A configured run: environment, output directory and reuse policy.
#[derive(Debug)]
pub struct Pipeline {
    config: RunConfig,
    spec: EnvSpec,
    out: PathBuf,
    resume: bool,
    target: Option<&'static str>,
    contexts: Vec<RawContext>,
    demos: ExpertDataset,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let spec = EnvSpec::resolve(&config.env, &config.base_dir)?;
        let contexts = reachable_contexts(&spec)?;
        let demos = expert_demos(&spec)?;
        Ok(Self {
            out: config.output_dir(),
            config,
            spec,
            resume: false,
            target: None,
            contexts,
            demos,
        })
    }

    /// Reuse the artifacts of every stage that already has them.
    pub fn with_resume(mut self, resume: bool) -> Self {
        self.resume = resume;
        self
    }

    /// Recompute only `stage` (unless resuming); its prerequisites are
    /// loaded from disk when present.
    fn targeting(mut self, stage: &'static str) -> Self {
        self.target = Some(stage);
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn demos(&self) -> &ExpertDataset {
        &self.demos
    }

    fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.out.join(rel)
    }

    fn instruction_ids(&self) -> Vec<String> {
        self.spec.instruction_ids()
    }

    fn stage<T>(
        &self,
        name: &'static str,
        artifacts: Vec<PathBuf>,
        load: impl FnOnce() -> Result<T>,
        run: impl FnOnce() -> Result<T>,
    ) -> Result<T> {
        let reuse = self.resume || self.target.is_some_and(|t| t != name);
        let cached = reuse && artifacts.iter().all(|p| p.is_file());
        let result = if cached {
            info!("{name}: reusing {} artifact(s)", artifacts.len());
            load()
        } else {
            info!("{name}: running");
            run()
        };
        result.map_err(|source| Error::Stage {
            stage: name.to_string(),
            artifacts,
            source: Box::new(source),
        })
    }

    fn policy_path(&self, stage: TrainStage) -> PathBuf {
        self.path(format!("policies/{}.json", stage.policy_file()))
    }

    fn trace_path(&self, stage: TrainStage) -> PathBuf {
        self.path(format!("traces/{}.csv", stage.policy_file()))
    }

    fn train_stage(
        &self,
        stage: TrainStage,
        init: impl FnOnce() -> Result<SoftmaxPolicy>,
        loss: LossSpec<'_>,
        config: &TrainConfig,
    ) -> Result<SoftmaxPolicy> {
        let path = self.policy_path(stage);
        let trace = self.trace_path(stage);
        self.stage(
            stage.as_str(),
            vec![path.clone(), trace.clone()],
            || SoftmaxPolicy::load(&path),
            || {
                let out = train(&init()?, &loss, config)?;
                out.policy.save(&path)?;
                io::write_atomic(&trace, out.trace_csv().as_bytes())?;
                Ok(out.policy)
            },
        )
    }

    /// Copies `policy` to its stage path without training; used when a stage
    /// has no data.
    fn passthrough(&self, stage: TrainStage, policy: SoftmaxPolicy) -> Result<SoftmaxPolicy> {
        let path = self.policy_path(stage);
        let trace = self.trace_path(stage);
        self.stage(
            stage.as_str(),
            vec![path.clone(), trace.clone()],
            || SoftmaxPolicy::load(&path),
            || {
                policy.save(&path)?;
                io::write_atomic(&trace, b"step,loss\n")?;
                Ok(policy)
            },
        )
    }

    pub fn expert(&self) -> Result<&ExpertDataset> {
        let path = self.path("expert/demos.jsonl");
        self.stage(
            "expert",
            vec![path.clone()],
            || Ok(()),
            || io::write_atomic(&path, serialize_trajectories(&self.demos.entries).as_bytes()),
        )?;
        Ok(&self.demos)
    }

    pub fn weak_sft(&self) -> Result<SoftmaxPolicy> {
        let p = &self.config.policy;
        self.train_stage(
            TrainStage::WeakSft,
            || SoftmaxPolicy::uniform(p.weak_key, p.temperature, &self.contexts),
            LossSpec::Sft { demos: &self.demos.entries },
            &self.config.train.weak_sft,
        )
    }

    /// The policy used for exploration: `weak` itself, or `weak` refined with
    /// the exploration loss when `explore.refine` is set.
    pub fn explore_policy(&self, weak: &SoftmaxPolicy) -> Result<SoftmaxPolicy> {
        if !self.config.explore.refine {
            return Ok(weak.clone());
        }
        self.train_stage(
            TrainStage::ExploreRefine,
            || Ok(weak.clone()),
            LossSpec::Explore {
                demos: &self.demos.entries,
                reference: weak,
            },
            &self.config.train.explore_refine,
        )
    }

    fn sample(
        &self,
        name: &'static str,
        dir: &str,
        stream: &str,
        policy: &SoftmaxPolicy,
    ) -> Result<BTreeMap<String, Vec<Trajectory>>> {
        let ids = self.instruction_ids();
        let paths: Vec<PathBuf> = ids.iter().map(|id| self.path(format!("{dir}/{id}.jsonl"))).collect();
        self.stage(
            name,
            paths.clone(),
            || {
                ids.iter()
                    .zip(&paths)
                    .map(|(id, p)| Ok((id.clone(), parse_trajectories(&io::read_to_string(p)?)?)))
                    .collect()
            },
            || {
                let temps = &self.config.explore.temperatures;
                let samplers = temps
                    .iter()
                    .map(|t| policy.with_temperature(*t))
                    .collect::<Result<Vec<_>>>()?;
                let mut out = BTreeMap::new();
                for (id, path) in ids.iter().zip(&paths) {
                    let mut rng = rng::stream(self.config.seed, &format!("{stream}/{id}"));
                    let trajectories = (0..self.config.explore.m)
                        .map(|j| rollout(&samplers[j % samplers.len()], &self.spec, id, &mut rng))
                        .collect::<Result<Vec<_>>>()?;
                    io::write_atomic(path, serialize_trajectories(&trajectories).as_bytes())?;
                    out.insert(id.clone(), trajectories);
                }
                Ok(out)
            },
        )
    }

    /// `explore.m` rollouts per instruction, temperatures cycled.
    pub fn explore(&self, policy: &SoftmaxPolicy) -> Result<BTreeMap<String, Vec<Trajectory>>> {
        self.sample("explore", "explore", "explore", policy)
    }

    pub fn build_trees(&self, explored: &BTreeMap<String, Vec<Trajectory>>) -> Result<Vec<TrajTree>> {
        let paths: Vec<PathBuf> = explored.keys().map(|id| self.path(format!("trees/{id}.json"))).collect();
        self.stage(
            "build-tree",
            paths.clone(),
            || paths.iter().map(|p| TrajTree::load(p)).collect(),
            || {
                let config = self.config.tree_config()?;
                explored
                    .values()
                    .zip(&paths)
                    .map(|(ts, p)| {
                        let tree = build_tree(ts, &config)?;
                        tree.save(p)?;
                        Ok(tree)
                    })
                    .collect()
            },
        )
    }

    fn pairs_stage(&self, name: &'static str, file: &str, make: impl FnOnce() -> Result<PairDataset>) -> Result<PairDataset> {
        let path = self.path(file);
        self.stage(
            name,
            vec![path.clone()],
            || {
                parse_dpo_jsonl(&io::read_to_string(&path)?)?
                    .iter()
                    .map(|r| r.to_pair())
                    .collect::<Result<Vec<_>>>()
                    .map(|pairs| PairDataset { pairs })
            },
            || {
                let ds = make()?;
                export_dpo_jsonl(&ds, &path)?;
                Ok(ds)
            },
        )
    }

    pub fn extract_pairs(&self, trees: &[TrajTree]) -> Result<PairDataset> {
        self.pairs_stage("extract-pairs", "pairs/tree_dpo.jsonl", || {
            let config = self.config.pair_config();
            let mut ds = PairDataset::default();
            for t in trees {
                ds.extend(extract_pairs_with(t, &config));
            }
            Ok(ds)
        })
    }

    /// Strong policy warm-started from `weak` and trained on tree pairs with
    /// `weak` as reference.
    pub fn tree_dpo(&self, weak: &SoftmaxPolicy, pairs: &PairDataset) -> Result<SoftmaxPolicy> {
        self.tree_dpo_with(weak, pairs, &self.config.train.tree_dpo)
    }

    pub fn tree_dpo_with(&self, weak: &SoftmaxPolicy, pairs: &PairDataset, config: &TrainConfig) -> Result<SoftmaxPolicy> {
        let init = || SoftmaxPolicy::warm_start(weak, self.config.policy.strong_key, &self.contexts);
        if pairs.is_empty() {
            warn!("tree-dpo: no preference pairs; keeping the warm start");
            return self.passthrough(TrainStage::TreeDpo, init()?);
        }
        self.train_stage(
            TrainStage::TreeDpo,
            init,
            LossSpec::Dpo {
                pairs,
                reference: weak,
                form: self.config.train.dpo_form,
            },
            config,
        )
    }

    /// One synthesized path per tree.
    pub fn mcts(&self, trees: &[TrajTree]) -> Result<Vec<Trajectory>> {
        let stats_paths: Vec<PathBuf> = trees
            .iter()
            .map(|t| self.path(format!("mcts/{}.stats.json", t.instruction().id)))
            .collect();
        let out = self.path("mcts/optimal_paths.jsonl");
        let mut artifacts = stats_paths.clone();
        artifacts.push(out.clone());
        self.stage(
            "mcts",
            artifacts,
            || parse_trajectories(&io::read_to_string(&out)?),
            || {
                let m = &self.config.mcts;
                let mut paths = Vec::with_capacity(trees.len());
                for (tree, sp) in trees.iter().zip(&stats_paths) {
                    let config = MctsConfig {
                        iterations: m.iterations.unwrap_or_else(|| MctsConfig::default_iterations(tree)),
                        gamma: m.gamma,
                        cm_mode: m.cm_mode,
                        seed: rng::stream_seed(self.config.seed, &format!("mcts/{}", tree.instruction().id)),
                    };
                    let stats = run_mcts(tree, &config)?;
                    io::write_json(sp, &stats.to_dump(&config))?;
                    paths.push(extract_optimal_path(tree, &stats)?);
                }
                export_sft_jsonl(&paths, &out)?;
                Ok(paths)
            },
        )
    }

    pub fn mcts_sft(&self, paths: &[Trajectory]) -> Result<SoftmaxPolicy> {
        let p = &self.config.policy;
        self.train_stage(
            TrainStage::MctsSft,
            || SoftmaxPolicy::uniform(p.strong_key, p.temperature, &self.contexts),
            LossSpec::MctsSft { paths },
            &self.config.train.mcts_sft,
        )
    }

    pub fn strong_sft(&self) -> Result<SoftmaxPolicy> {
        let p = &self.config.policy;
        self.train_stage(
            TrainStage::StrongSft,
            || SoftmaxPolicy::uniform(p.strong_key, p.temperature, &self.contexts),
            LossSpec::Sft { demos: &self.demos.entries },
            &self.config.train.strong_sft,
        )
    }

    /// Expert-versus-exploration pairs: every expert trajectory is preferred
    /// over every exploration of the same instruction, with an empty prefix.
    pub fn ceiling_pairs(&self, explored: &BTreeMap<String, Vec<Trajectory>>) -> Result<PairDataset> {
        self.pairs_stage("ceiling-pairs", "pairs/ceiling.jsonl", || {
            let mut pairs = Vec::new();
            for id in self.instruction_ids() {
                let experts: Vec<&Trajectory> = self.demos.entries.iter().filter(|e| e.instruction.id == id).collect();
                let own = explored.get(&id).map(Vec::as_slice).unwrap_or_default();
                if experts.is_empty() || own.is_empty() {
                    warn!("ceiling: instruction `{id}` lacks expert or exploration data; skipped");
                    continue;
                }
                for e in &experts {
                    for x in own {
                        pairs.push(PreferencePair::new(
                            e.instruction.clone(),
                            Vec::new(),
                            e.steps.clone(),
                            x.steps.clone(),
                            e.score,
                            x.score,
                        ));
                    }
                }
            }
            Ok(PairDataset { pairs })
        })
    }

    /// Strong SFT refined by preference training on expert-versus-own pairs.
    pub fn ceiling(&self, strong_sft: &SoftmaxPolicy) -> Result<(SoftmaxPolicy, usize)> {
        let explored = self.sample("ceiling-explore", "ceiling/explore", "ceiling-explore", strong_sft)?;
        let pairs = self.ceiling_pairs(&explored)?;
        if pairs.is_empty() {
            warn!("ceiling: no pairs; keeping strong SFT");
            return Ok((self.passthrough(TrainStage::Ceiling, strong_sft.clone())?, 0));
        }
        let policy = self.train_stage(
            TrainStage::Ceiling,
            || Ok(strong_sft.clone()),
            LossSpec::Dpo {
                pairs: &pairs,
                reference: strong_sft,
                form: self.config.train.dpo_form,
            },
            &self.config.train.ceiling,
        )?;
        Ok((policy, pairs.count()))
    }

    fn eval_config(&self) -> EvalConfig {
        let e = &self.config.eval;
        EvalConfig {
            mode: e.mode,
            n_samples: e.n_samples,
            seed: self.config.seed,
            threshold: e.threshold,
        }
    }

    fn eval_stage(&self, label: &str, make: impl FnOnce(&EvalConfig) -> Result<EvalReport>) -> Result<EvalReport> {
        let json = self.path(format!("eval/{label}.json"));
        let csv = self.path(format!("eval/{label}.csv"));
        self.stage(
            "eval",
            vec![json.clone(), csv.clone()],
            || io::read_json(&json),
            || {
                let report = make(&self.eval_config())?;
                io::write_json(&json, &report)?;
                io::write_atomic(&csv, report.to_csv().as_bytes())?;
                Ok(report)
            },
        )
    }

    /// Evaluates `policy` and writes `eval/<label>.{json,csv}`.
    pub fn evaluate(&self, evaluator: &mut Evaluator<'_>, label: &str, policy: &SoftmaxPolicy) -> Result<EvalReport> {
        let ids = self.instruction_ids();
        self.eval_stage(label, |c| evaluator.evaluate(policy, &ids, c))
    }

    pub fn evaluate_best_of_n(&self, evaluator: &mut Evaluator<'_>, policy: &SoftmaxPolicy) -> Result<EvalReport> {
        let ids = self.instruction_ids();
        let n = self.config.eval.best_of_n;
        self.eval_stage("best-of-n", |c| evaluator.best_of_n(policy, &ids, n, c))
    }

    /// The whole loop; writes six evaluation reports and `report.{json,csv}`.
    pub fn run_w2s(&self) -> Result<W2sReport> {
        self.expert()?;
        let weak = self.weak_sft()?;
        let explorer = self.explore_policy(&weak)?;
        let explored = self.explore(&explorer)?;
        let trees = self.build_trees(&explored)?;
        let pairs = self.extract_pairs(&trees)?;
        let tree_dpo = self.tree_dpo(&weak, &pairs)?;
        let paths = self.mcts(&trees)?;
        let mcts = self.mcts_sft(&paths)?;
        let strong = self.strong_sft()?;
        let (ceiling, ceiling_pairs) = self.ceiling(&strong)?;

        let mut evaluator = Evaluator::new(&self.spec);
        let reports = [
            self.evaluate(&mut evaluator, "weak-sft", &weak)?,
            self.evaluate(&mut evaluator, "w2s-tree-dpo", &tree_dpo)?,
            self.evaluate(&mut evaluator, "w2s-mcts", &mcts)?,
            self.evaluate(&mut evaluator, "strong-sft", &strong)?,
            self.evaluate_best_of_n(&mut evaluator, &strong)?,
            self.evaluate(&mut evaluator, "ceiling", &ceiling)?,
        ];
        let report = W2sReport {
            seed: self.config.seed,
            env: self.spec.kind().to_string(),
            tree_dpo_pairs: pairs.count(),
            ceiling_pairs,
            rows: METHODS
                .iter()
                .zip(&reports)
                .map(|(m, r)| ReportRow {
                    method: m.to_string(),
                    expected_score: r.expected_score,
                    success_rate: r.success_rate,
                })
                .collect(),
        };
        io::write_json(&self.path("report.json"), &report)?;
        io::write_atomic(&self.path("report.csv"), report.to_csv().as_bytes())?;
        Ok(report)
    }
}

/// Weak SFT (trained in-run if absent), then exploration.
pub fn cmd_explore(config: &RunConfig, resume: bool) -> Result<BTreeMap<String, Vec<Trajectory>>> {
    let p = Pipeline::new(config.clone())?.with_resume(resume).targeting("explore");
    let weak = p.weak_sft()?;
    p.explore(&p.explore_policy(&weak)?)
}

pub fn cmd_build_tree(config: &RunConfig, resume: bool) -> Result<Vec<TrajTree>> {
    let p = Pipeline::new(config.clone())?.with_resume(resume).targeting("build-tree");
    let weak = p.weak_sft()?;
    let explored = p.explore(&p.explore_policy(&weak)?)?;
    p.build_trees(&explored)
}

pub fn cmd_extract_pairs(config: &RunConfig, resume: bool) -> Result<PairDataset> {
    let p = Pipeline::new(config.clone())?.with_resume(resume).targeting("extract-pairs");
    let weak = p.weak_sft()?;
    let explored = p.explore(&p.explore_policy(&weak)?)?;
    p.extract_pairs(&p.build_trees(&explored)?)
}

pub fn cmd_mcts(config: &RunConfig, resume: bool) -> Result<Vec<Trajectory>> {
    let p = Pipeline::new(config.clone())?.with_resume(resume).targeting("mcts");
    let weak = p.weak_sft()?;
    let explored = p.explore(&p.explore_policy(&weak)?)?;
    p.mcts(&p.build_trees(&explored)?)
}

/// Trains one stage, computing or loading whatever it depends on.
pub fn cmd_train(config: &RunConfig, stage: TrainStage, resume: bool) -> Result<SoftmaxPolicy> {
    let p = Pipeline::new(config.clone())?.with_resume(resume).targeting(stage.as_str());
    match stage {
        TrainStage::WeakSft => p.weak_sft(),
        TrainStage::StrongSft => p.strong_sft(),
        TrainStage::Ceiling => Ok(p.ceiling(&p.strong_sft()?)?.0),
        TrainStage::ExploreRefine => {
            let weak = p.weak_sft()?;
            let forced = Pipeline {
                config: RunConfig {
                    explore: ExploreSection {
                        refine: true,
                        ..config.explore.clone()
                    },
                    ..config.clone()
                },
                ..p
            };
            forced.explore_policy(&weak)
        }
        TrainStage::TreeDpo | TrainStage::MctsSft => {
            let weak = p.weak_sft()?;
            let explored = p.explore(&p.explore_policy(&weak)?)?;
            let trees = p.build_trees(&explored)?;
            if stage == TrainStage::TreeDpo {
                p.tree_dpo(&weak, &p.extract_pairs(&trees)?)
            } else {
                p.mcts_sft(&p.mcts(&trees)?)
            }
        }
    }
}

/// Evaluates a saved policy; `label` names the report files.
pub fn cmd_eval(config: &RunConfig, policy_path: &Path, label: &str) -> Result<EvalReport> {
    let p = Pipeline::new(config.clone())?;
    let policy = SoftmaxPolicy::load(policy_path)?;
    let mut evaluator = Evaluator::new(&p.spec);
    let ids = p.instruction_ids();
    p.eval_stage(label, |c| evaluator.evaluate(&policy, &ids, c))
}

pub fn cmd_ceiling(config: &RunConfig, resume: bool) -> Result<SoftmaxPolicy> {
    cmd_train(config, TrainStage::Ceiling, resume)
}

pub fn cmd_w2s(config: &RunConfig, resume: bool) -> Result<W2sReport> {
    Pipeline::new(config.clone())?.with_resume(resume).run_w2s()
}

/// Runs the full loop once per breadth in `ms`, each under `out_dir/m-<M>`,
/// and writes `sweep_breadth.{json,csv}`.
pub fn cmd_sweep_breadth(config: &RunConfig, ms: &[usize], resume: bool) -> Result<SweepReport> {
    if ms.is_empty() {
        return Err(Error::EmptyInput("no breadth values to sweep"));
    }
    let mut rows = Vec::with_capacity(ms.len());
    for &m in ms {
        let mut c = config.clone();
        c.explore.m = m;
        c.out_dir = config.out_dir.join(format!("m-{m}"));
        let report = cmd_w2s(&c, resume)?;
        rows.push(SweepRow {
            m,
            scores: report.rows.iter().map(|r| (r.method.clone(), r.expected_score)).collect(),
        });
    }
    let sweep = SweepReport { seed: config.seed, rows };
    let out = config.output_dir();
    io::write_json(&out.join("sweep_breadth.json"), &sweep)?;
    io::write_atomic(&out.join("sweep_breadth.csv"), sweep.to_csv().as_bytes())?;
    Ok(sweep)
}
