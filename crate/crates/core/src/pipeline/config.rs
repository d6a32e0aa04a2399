use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::mcts::CmMode;
use crate::metrics::{EvalMode, DEFAULT_BEST_OF_N, DEFAULT_SUCCESS_THRESHOLD};
use crate::pairs::{Aggregate, PairConfig, PairMode};
use crate::policy::{DpoForm, KeyFn, TrainConfig};
use crate::tree::{EmbeddingTable, SimilarityKind, SimilarityProvider, TreeConfig};

/// Declarative description of one pipeline run.
///
/// Relative paths are resolved against `base_dir`, which is the directory of
/// the config file when loaded from disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// `builtin:lineshop`, `builtin:binaryhouse`, or a path to an env TOML.
    pub env: String,
    pub out_dir: PathBuf,
    pub policy: PolicySection,
    pub explore: ExploreSection,
    pub tree: TreeSection,
    pub pairs: PairsSection,
    pub mcts: MctsSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub weak_key: KeyFn,
    pub strong_key: KeyFn,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExploreSection {
    /// Rollouts per instruction.
    pub m: usize,
    /// Sampling temperatures, cycled across the `m` rollouts.
    pub temperatures: Vec<f64>,
    /// Refine the weak policy with the exploration loss before sampling.
    pub refine: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeSection {
    pub xi_sim: f64,
    pub provider: SimilarityKind,
    /// Embedding sidecar, required by `embedding-cosine`.
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairsSection {
    pub min_gap: f64,
    pub aggregate: Aggregate,
    pub mode: PairMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MctsSection {
    /// Defaults to 50 iterations per leaf, capped at 10,000.
    pub iterations: Option<u64>,
    pub gamma: f64,
    pub cm_mode: CmMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub weak_sft: TrainConfig,
    pub explore_refine: TrainConfig,
    pub tree_dpo: TrainConfig,
    pub dpo_form: DpoForm,
    pub mcts_sft: TrainConfig,
    pub strong_sft: TrainConfig,
    pub ceiling: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub mode: EvalMode,
    pub n_samples: u64,
    pub threshold: f64,
    pub best_of_n: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            env: "builtin:lineshop".into(),
            out_dir: "runs/default".into(),
            policy: PolicySection::default(),
            explore: ExploreSection::default(),
            tree: TreeSection::default(),
            pairs: PairsSection::default(),
            mcts: MctsSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl Default for PolicySection {
    fn default() -> Self {
        Self {
            weak_key: KeyFn::Coarse,
            strong_key: KeyFn::Fine,
            temperature: 1.0,
        }
    }
}

impl Default for ExploreSection {
    fn default() -> Self {
        Self {
            m: 6,
            temperatures: vec![0.3, 0.7, 1.0, 1.3],
            refine: false,
        }
    }
}

impl Default for TreeSection {
    fn default() -> Self {
        Self {
            xi_sim: TreeConfig::DEFAULT_XI_SIM,
            provider: SimilarityKind::Exact,
            embeddings: None,
        }
    }
}

impl Default for PairsSection {
    fn default() -> Self {
        let d = PairConfig::default();
        Self {
            min_gap: d.min_gap,
            aggregate: d.aggregate,
            mode: d.mode,
        }
    }
}

impl Default for MctsSection {
    fn default() -> Self {
        Self {
            iterations: None,
            gamma: crate::mcts::MctsConfig::DEFAULT_GAMMA,
            cm_mode: CmMode::default(),
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let sft = TrainConfig {
            learning_rate: 2.0,
            steps: 150,
            ..TrainConfig::default()
        };
        Self {
            weak_sft: sft,
            explore_refine: TrainConfig {
                learning_rate: 0.5,
                steps: 20,
                ..TrainConfig::default()
            },
            tree_dpo: TrainConfig {
                learning_rate: 1.0,
                steps: 100,
                beta: 0.1,
                ..TrainConfig::default()
            },
            dpo_form: DpoForm::default(),
            mcts_sft: sft,
            strong_sft: sft,
            ceiling: TrainConfig {
                learning_rate: 1.0,
                steps: 100,
                beta: 0.1,
                ..TrainConfig::default()
            },
        }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            mode: EvalMode::Exact,
            n_samples: 10_000,
            threshold: DEFAULT_SUCCESS_THRESHOLD,
            best_of_n: DEFAULT_BEST_OF_N,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = io::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, &base).map_err(|e| match e {
            Error::Toml { message, .. } => Error::Toml {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut config: RunConfig = toml::from_str(text).map_err(|e| Error::Toml {
            path: "<inline>".into(),
            message: e.to_string(),
        })?;
        config.base_dir = base_dir.to_path_buf();
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        self.base_dir.join(path)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.out_dir)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.explore.m == 0 {
            return bad("explore.m must be at least 1");
        }
        if self.explore.temperatures.is_empty() || self.explore.temperatures.iter().any(|t| !(*t > 0.0)) {
            return bad("explore.temperatures must be a non-empty list of positive values");
        }
        if !(self.policy.temperature > 0.0) {
            return bad("policy.temperature must be positive");
        }
        if self.eval.best_of_n == 0 {
            return bad("eval.best_of_n must be at least 1");
        }
        if !(self.pairs.min_gap >= 0.0) {
            return bad("pairs.min_gap must be non-negative");
        }
        let t = &self.train;
        for c in [t.weak_sft, t.explore_refine, t.tree_dpo, t.mcts_sft, t.strong_sft, t.ceiling] {
            c.validate()?;
        }
        if let Some(p) = &self.tree.embeddings {
            if !self.resolve(p).is_file() {
                return Err(Error::InvalidConfig(format!(
                    "embedding file {} does not exist",
                    self.resolve(p).display()
                )));
            }
        }
        if !self.env.starts_with("builtin:") && !self.resolve(Path::new(&self.env)).is_file() {
            return Err(Error::InvalidConfig(format!("env spec {} does not exist", self.env)));
        }
        self.tree_config()?;
        Ok(())
    }

    pub fn tree_config(&self) -> Result<TreeConfig> {
        let provider = match self.tree.provider {
            SimilarityKind::Exact => SimilarityProvider::exact(),
            SimilarityKind::TokenJaccard => SimilarityProvider::token_jaccard(),
            SimilarityKind::EmbeddingCosine => {
                let path = self.tree.embeddings.as_ref().ok_or_else(|| {
                    Error::InvalidConfig("embedding-cosine needs tree.embeddings".into())
                })?;
                SimilarityProvider::embedding_cosine(EmbeddingTable::load(&self.resolve(path))?)
            }
        };
        TreeConfig::new(self.tree.xi_sim, provider)
    }

    pub fn pair_config(&self) -> PairConfig {
        PairConfig {
            min_gap: self.pairs.min_gap,
            aggregate: self.pairs.aggregate,
            mode: self.pairs.mode,
        }
    }
}
