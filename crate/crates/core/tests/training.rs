use audiohall::corpus::Split;
use audiohall::embed_store::{align, AlignMode};
use audiohall::fusion::{evaluate_f1, train, TrainConfig};
use audiohall::pairs::{labeled_pairs, LabeledPair};
use audiohall::synthetic::{planted_direction, PlantedConfig, SyntheticSet};

fn split<'a>(set: &'a SyntheticSet, s: Split) -> Vec<LabeledPair<'a>> {
    let aligned = align(&set.corpus, &set.audio, &set.text, s, AlignMode::Strict).unwrap();
    labeled_pairs(&aligned.samples).unwrap()
}

fn config(seed: u64) -> TrainConfig {
    TrainConfig {
        hidden: 64,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn planted_direction_is_learned_across_seeds() {
    for seed in [3u64, 11] {
        let set = planted_direction(&PlantedConfig { seed, ..PlantedConfig::default() });
        let (tr, va, te) = (split(&set, Split::Train), split(&set, Split::Val), split(&set, Split::Test));
        let out = train(&tr, &va, &config(seed)).unwrap();
        let f1 = evaluate_f1(&out.head, &te, 0.5).unwrap();
        assert!(f1 >= 0.95, "seed {seed}: test F1 {f1}");
        assert!(out.log.len() > 10);
        assert!(out.log[10].train_loss < out.log[0].train_loss);
        let best = out.best_epoch.unwrap();
        assert_eq!(out.log[best].val_f1, evaluate_f1(&out.head, &va, 0.5).unwrap());
    }
}

#[test]
fn early_stopping_respects_patience() {
    let set = planted_direction(&PlantedConfig { seed: 1, ..PlantedConfig::default() });
    let (tr, va) = (split(&set, Split::Train), split(&set, Split::Val));
    let cfg = TrainConfig { patience: 3, ..config(1) };
    let out = train(&tr, &va, &cfg).unwrap();
    let best = out.best_epoch.unwrap();
    assert!(out.log.len() <= best + 1 + 3);
    assert!(out.log[best + 1..].iter().all(|e| e.val_f1 <= out.log[best].val_f1));
}

#[test]
fn embeddings_are_untouched_by_training() {
    let set = planted_direction(&PlantedConfig { samples: 120, splits: audiohall::corpus::SplitCounts::new(80, 40, 0), ..PlantedConfig::default() });
    let before = (set.audio.to_bytes(), set.text.to_bytes());
    let (tr, va) = (split(&set, Split::Train), split(&set, Split::Val));
    train(&tr, &va, &TrainConfig { max_epochs: 5, patience: 5, ..config(0) }).unwrap();
    assert_eq!((set.audio.to_bytes(), set.text.to_bytes()), before);
}
