mod common;

use proptest::prelude::*;
use rand::Rng;

use common::*;
use w2sg_core::pairs::{export_dpo_jsonl, extract_pairs, parse_dpo_jsonl, DpoRecord, PairDataset, PreferencePair};
use w2sg_core::tree::{build_tree, TreeConfig};
use w2sg_core::types::serialize_trajectories;
use w2sg_core::{parse_trajectories, Instruction, Source, Step, Trajectory};

fn tree_for(seed: u64) -> w2sg_core::tree::TrajTree {
    let ts = random_trajectories(&mut rng(seed), 40, 6);
    build_tree(&ts, &TreeConfig::default()).unwrap()
}

proptest! {
    #[test]
    fn matches_brute_force(seed in any::<u64>(), gap in prop::sample::select(vec![0.0, 0.1, 0.25, 0.5])) {
        let tree = tree_for(seed);
        prop_assert_eq!(extract_pairs(&tree, gap).pairs, brute_force_pairs(&tree, gap));
    }

    #[test]
    fn pair_count_shrinks_as_min_gap_grows(seed in any::<u64>(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let tree = tree_for(seed);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(extract_pairs(&tree, lo).count() >= extract_pairs(&tree, hi).count());
    }

    #[test]
    fn both_sides_share_the_prefix_and_diverge_immediately(seed in any::<u64>()) {
        let tree = tree_for(seed);
        for p in extract_pairs(&tree, 0.0).pairs {
            prop_assert!(p.gap > 0.0);
            prop_assert!(!p.chosen.is_empty() && !p.rejected.is_empty());
            let (c, r) = (p.chosen_path(), p.rejected_path());
            prop_assert_eq!(&c[..p.prefix.len()], &r[..p.prefix.len()]);
            let (c0, r0) = (&p.chosen[0], &p.rejected[0]);
            prop_assert!(c0.observation != r0.observation || c0.action != r0.action || c0.thought != r0.thought);
        }
    }

    #[test]
    fn export_is_deterministic(seed in any::<u64>()) {
        let tree = tree_for(seed);
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
        let n = export_dpo_jsonl(&extract_pairs(&tree, 0.0), &a).unwrap();
        export_dpo_jsonl(&extract_pairs(&tree, 0.0), &b).unwrap();
        let text = std::fs::read(&a).unwrap();
        prop_assert_eq!(&text, &std::fs::read(&b).unwrap());
        prop_assert_eq!(text.iter().filter(|&&c| c == b'\n').count(), n);
    }
}

fn random_steps(r: &mut impl Rng, min: usize) -> Vec<Step> {
    (0..r.gen_range(min..4))
        .map(|_| {
            Step::new(format!("obs {} \"quoted\" ü", r.gen_range(0..100)), format!("click[{}]", r.gen_range(0..9)))
                .with_thought(if r.gen_bool(0.5) { format!("think {}", r.gen::<u16>()) } else { String::new() })
        })
        .collect()
}

#[test]
fn dpo_records_round_trip() {
    let mut r = rng(9);
    let pairs: PairDataset = (0..200)
        .map(|i| {
            let chosen_score = r.gen_range(0.5..=1.0);
            PreferencePair::new(
                Instruction::new(format!("i{i}"), format!("find item {i}")),
                random_steps(&mut r, 0),
                random_steps(&mut r, 1),
                random_steps(&mut r, 1),
                chosen_score,
                chosen_score - r.gen_range(0.01..0.5),
            )
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pairs.jsonl");
    assert_eq!(export_dpo_jsonl(&pairs, &path).unwrap(), 200);
    let records = parse_dpo_jsonl(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let back: Vec<PreferencePair> = records.iter().map(|r| r.to_pair().unwrap()).collect();
    assert_eq!(back, pairs.pairs);
    assert!(records.iter().zip(&pairs.pairs).all(|(r, p)| *r == DpoRecord::from_pair(p)));
}

#[test]
fn empty_dataset_writes_empty_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("none.jsonl");
    assert_eq!(export_dpo_jsonl(&PairDataset::default(), &path).unwrap(), 0);
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "");
}

#[test]
fn trajectories_round_trip() {
    let mut r = rng(3);
    let sources = [Source::Expert, Source::WeakExplore, Source::Synthesized];
    let ts: Vec<Trajectory> = (0..200)
        .map(|i| {
            Trajectory::new(
                Instruction::new(format!("i{i}"), "buy the \"red\" shoe\ttoday"),
                random_steps(&mut r, 1),
                r.gen_bool(0.3).then(|| "final".to_string()),
                r.gen_range(0.0..=1.0),
                sources[i % 3],
            )
            .unwrap()
        })
        .collect();
    let text = serialize_trajectories(&ts);
    assert_eq!(text.lines().count(), 200);
    assert_eq!(parse_trajectories(&text).unwrap(), ts);
}
