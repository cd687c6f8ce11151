use std::collections::HashMap;

use cobweb_lab::data::{self, read_dump, synth_clusters, write_dump, write_idx, Dataset};
use cobweb_lab::protocol::{make_schedule, per_class_accuracy, Learner, ModelKind, ProtocolConfig, SplitMetrics};
use cobweb_lab::{CobwebTree, Execution, Instance, TreeConfig};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pool(counts: &[usize], seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            train.push(Instance::labeled(vec![rng.random()], c));
        }
    }
    train.shuffle(&mut rng);
    Dataset {
        name: "pool".into(),
        dim: 1,
        classes: counts.len(),
        train,
        test: Vec::new(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schedule_partitions_the_pool(
        per in 1usize..6,
        extra in prop::collection::vec(0usize..40, 2..6),
        chosen_pick in any::<prop::sample::Index>(),
        seed in any::<u64>(),
    ) {
        let counts: Vec<usize> = extra.iter().map(|e| 2 * per + e).collect();
        let ds = pool(&counts, seed);
        let chosen = chosen_pick.index(counts.len());
        let s = make_schedule(&ds, chosen, per, seed).unwrap();
        s.validate(&ds).unwrap();

        let mut all: Vec<usize> = s.splits.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..ds.train.len()).collect::<Vec<_>>());

        let label = |i: &usize| ds.train[*i].label.unwrap();
        let class_counts = |split: &[usize]| {
            let mut m = vec![0usize; counts.len()];
            split.iter().for_each(|i| m[label(i)] += 1);
            m
        };
        prop_assert_eq!(class_counts(&s.splits[0]), vec![per; counts.len()]);
        let d2 = class_counts(&s.splits[1]);
        for (c, &n) in d2.iter().enumerate() {
            prop_assert_eq!(n, if c == chosen { counts[c] - per } else { per });
        }
        let late: Vec<Vec<usize>> = s.splits[2..].iter().map(|sp| class_counts(sp)).collect();
        for c in 0..counts.len() {
            let col: Vec<usize> = late.iter().map(|row| row[c]).collect();
            if c == chosen {
                prop_assert!(col.iter().all(|&n| n == 0));
            } else {
                prop_assert!(col.iter().max().unwrap() - col.iter().min().unwrap() <= 1);
            }
        }
    }

    #[test]
    fn dump_round_trip_is_stable(n in 0usize..20, dim in 1usize..6, classes in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut half = |n: usize| -> Vec<Instance> {
            (0..n)
                .map(|_| {
                    let label = if rng.random_bool(0.8) { Some(rng.random_range(0..classes)) } else { None };
                    Instance::new((0..dim).map(|_| rng.random()).collect(), label)
                })
                .collect()
        };
        let ds = Dataset { name: "r".into(), dim, classes, train: half(n), test: half(n / 2) };
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        write_dump(&a, &ds).unwrap();
        let once = read_dump(&a).unwrap();
        write_dump(&b, &once).unwrap();
        prop_assert_eq!(read_dump(&b).unwrap(), once.clone());
        prop_assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        for (x, y) in once.train.iter().zip(&ds.train) {
            prop_assert_eq!(x.label, y.label);
            prop_assert!(x.features.iter().zip(&y.features).all(|(u, v)| (u - v).abs() < 1e-7));
        }
    }

    #[test]
    fn idx_round_trip_is_exact(pixels in prop::collection::vec(any::<u8>(), 0..=48), rows in 1usize..3) {
        let cols = 4 / rows * 2;
        let dim = rows * cols;
        let n = pixels.len() / dim;
        let xs: Vec<Instance> = pixels
            .chunks_exact(dim)
            .take(n)
            .enumerate()
            .map(|(i, px)| Instance::labeled(px.iter().map(|&p| p as f64 / 255.0).collect(), i % 10))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
        write_idx(&img, &lab, &xs, rows, cols).unwrap();
        let (back, d) = data::load_idx(&img, &lab).unwrap();
        prop_assert_eq!(d, dim);
        prop_assert_eq!(back, xs);
    }
}

#[test]
fn synth_without_spread_repeats_the_class_mean() {
    let ds = synth_clusters(3, 4, 5, 0.0, 11).unwrap();
    for c in 0..3 {
        let members: Vec<&Instance> = ds.train.iter().chain(&ds.test).filter(|x| x.label == Some(c)).collect();
        assert_eq!(members.len(), 10);
        assert!(members.iter().all(|x| x.features == members[0].features));
    }
    assert_eq!(synth_clusters(3, 4, 5, 0.2, 11).unwrap(), synth_clusters(3, 4, 5, 0.2, 11).unwrap());
    ds.validate().unwrap();
}

#[test]
fn one_level_tree_separates_distant_clusters() {
    let seed = (0..100u64)
        .find(|&s| {
            let m = synth_clusters(2, 2, 1, 0.0, s).unwrap().train;
            let d: f64 = m[0].features.iter().zip(&m[1].features).map(|(a, b)| (a - b).powi(2)).sum();
            d.sqrt() > 0.5
        })
        .unwrap();
    let ds = synth_clusters(2, 2, 50, 0.01, seed).unwrap();
    let cfg = ProtocolConfig {
        tree: TreeConfig::fixed(2, 2),
        ..ProtocolConfig::default()
    };
    let mut learner = Learner::new(ModelKind::Cobweb4vFixed, &ds, &cfg, 0).unwrap();
    learner.train(&ds.train, Execution::Sequential).unwrap();
    let predicted = learner.predict(&ds.test, &cfg.predict, Execution::Sequential).unwrap();
    assert_eq!(per_class_accuracy(&ds.test, &predicted, 2), vec![Some(1.0), Some(1.0)]);
    if let Learner::Tree(t) = &learner {
        assert_eq!(t.summary().max_depth, 2);
    }
}

#[test]
fn accuracy_of_perfect_and_random_predictors() {
    let test: Vec<Instance> = (0..10_000).map(|i| Instance::labeled(vec![0.0], i % 10)).collect();
    let truth: Vec<usize> = test.iter().map(|x| x.label.unwrap()).collect();
    assert!(per_class_accuracy(&test, &truth, 10).iter().all(|a| *a == Some(1.0)));

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let guesses: Vec<usize> = (0..test.len()).map(|_| rng.random_range(0..10)).collect();
    let sigma = (0.1f64 * 0.9 / 1000.0).sqrt();
    for a in per_class_accuracy(&test, &guesses, 10) {
        assert!((a.unwrap() - 0.1).abs() < 3.0 * sigma, "{a:?}");
    }

    let m = SplitMetrics::from_predictions(1, 3, &test, &guesses, 10, 0.0);
    let restricted: Vec<(usize, usize)> = test.iter().zip(&guesses).filter(|(x, _)| x.label == Some(3)).map(|(x, &g)| (x.label.unwrap(), g)).collect();
    let direct = restricted.iter().filter(|(y, g)| y == g).count() as f64 / restricted.len() as f64;
    assert_eq!(m.chosen_acc, Some(direct));

    let missing = per_class_accuracy(&test[..5], &guesses[..5], 10);
    assert_eq!(missing[7], None);
}

#[test]
fn evaluation_does_not_change_models() {
    let ds = synth_clusters(3, 4, 20, 0.05, 2).unwrap();
    let cfg = ProtocolConfig::default();
    for kind in ModelKind::ALL {
        let mut learner = Learner::new(kind, &ds, &cfg, 1).unwrap();
        learner.train(&ds.train, Execution::Sequential).unwrap();
        let snapshot = |l: &Learner| match l {
            Learner::Tree(t) => t.to_json(),
            Learner::Nn { model, .. } => model.to_json().unwrap(),
            Learner::Mlp { model, .. } => model.to_json().unwrap(),
        };
        let before = snapshot(&learner);
        learner.predict(&ds.test, &cfg.predict, Execution::Parallel).unwrap();
        assert_eq!(snapshot(&learner), before, "{}", kind.tag());
    }
}

#[test]
fn bundled_subset_shape() {
    let ds = data::mnist_desk().unwrap();
    assert_eq!((ds.train.len(), ds.test.len(), ds.dim, ds.classes), (6000, 1000, 784, 10));
    ds.validate().unwrap();
    let mut per_class: HashMap<usize, usize> = HashMap::new();
    ds.train.iter().for_each(|x| *per_class.entry(x.label.unwrap()).or_default() += 1);
    assert_eq!(per_class.len(), 10);
    assert!(per_class.values().all(|&n| n >= 60), "{per_class:?}");
}

#[test]
fn tree_checkpoint_rejects_future_versions() {
    let mut tree = CobwebTree::new(1, 1, TreeConfig::default()).unwrap();
    tree.fit(&Instance::labeled(vec![0.5], 0)).unwrap();
    let text = tree.to_json().replacen("\"version\":1", "\"version\":2", 1);
    assert!(matches!(
        CobwebTree::from_json(&text),
        Err(cobweb_lab::Error::SchemaVersion { expected: 1, found: 2 })
    ));
}
