//! Deterministic inputs for the benchmarks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use w2sg_core::pairs::PairDataset;
use w2sg_core::policy::RawContext;
use w2sg_core::toyenv::{expert_demos, reachable_contexts};
use w2sg_core::tree::{build_tree, TrajTree, TreeConfig};
use w2sg_core::{extract_pairs, EnvSpec, Instruction, KeyFn, SoftmaxPolicy, Source, Step, Trajectory};

/// `n` trajectories of length up to `depth` over a three-letter alphabet.
pub fn trajectories(seed: u64, n: usize, depth: usize) -> Vec<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = ["look", "open", "take"];
    (0..n)
        .map(|_| {
            let steps = (0..rng.gen_range(1..=depth))
                .map(|_| Step::new(*words.choose(&mut rng).unwrap(), *words.choose(&mut rng).unwrap()))
                .collect();
            let score = f64::from(rng.gen_range(0..=10u8)) / 10.0;
            Trajectory::new(Instruction::new("b", "bench"), steps, None, score, Source::WeakExplore).unwrap()
        })
        .collect()
}

pub fn tree(seed: u64, n: usize, depth: usize) -> TrajTree {
    build_tree(&trajectories(seed, n, depth), &TreeConfig::default()).unwrap()
}

/// Policy data on the default shopping environment.
pub struct PolicyFixture {
    pub spec: EnvSpec,
    pub contexts: Vec<RawContext>,
    pub policy: SoftmaxPolicy,
    pub reference: SoftmaxPolicy,
    pub demos: Vec<Trajectory>,
    pub pairs: PairDataset,
}

pub fn policy_fixture(seed: u64) -> PolicyFixture {
    let spec = EnvSpec::lineshop_default();
    let contexts = reachable_contexts(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut random = || {
        let mut p = SoftmaxPolicy::uniform(KeyFn::Fine, 1.0, &contexts).unwrap();
        for c in &contexts {
            let key = p.key(&c.instruction, &c.observation);
            for a in &c.actions {
                p.set_logit(&key, a, rng.gen_range(-2.0..2.0)).unwrap();
            }
        }
        p
    };
    let policy = random();
    let reference = random();
    let demos = expert_demos(&spec).unwrap().entries;
    let mut pairs = PairDataset::default();
    let mut sample = ChaCha8Rng::seed_from_u64(seed ^ 1);
    for id in spec.instruction_ids() {
        let ts: Vec<Trajectory> = (0..8)
            .map(|_| w2sg_core::toyenv::rollout(&policy, &spec, &id, &mut sample).unwrap())
            .collect();
        pairs.extend(extract_pairs(&build_tree(&ts, &TreeConfig::default()).unwrap(), 0.0));
    }
    PolicyFixture {
        spec,
        contexts,
        policy,
        reference,
        demos,
        pairs,
    }
}
