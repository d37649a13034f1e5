mod common;

use optiforest::forest::{average_path_length, Epsilon, Forest, ForestConfig, Mode};
use optiforest::lsh_tree::LshParams;
use optiforest::model::{decode, encode};
use optiforest::opt_tree::build_optimal_tree_traced;
use optiforest::theory::{BranchingDistribution, E};
use optiforest::subsample;
use optiforest::{load_model, save_model, DataMatrix, NodeKind, TreeNode};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}

fn assert_conserved(node: &TreeNode) {
    if !node.is_leaf() {
        let sum: usize = node.children.iter().map(|c| c.size).sum();
        assert_eq!(sum, node.size);
        assert!(node.children.len() >= 2);
        for c in &node.children {
            assert_eq!(c.depth, node.depth + 1);
            assert_conserved(c);
        }
    }
}

#[test]
fn hundred_trees_on_ten_thousand_rows() {
    let data = DataMatrix::from_rows(&gaussian(10_000, 6, 1), None).unwrap();
    let forest = Forest::fit(&data, &ForestConfig::default()).unwrap();
    assert_eq!(forest.trees.len(), 100);
    assert_eq!(forest.psi_effective, 512);
    assert_eq!(forest.epsilon_used, 55);
    for tree in &forest.trees {
        assert_eq!(tree.size, 512);
        assert_eq!(tree.leaf_count_sum(), 512);
        assert_conserved(tree);
    }
}

#[test]
fn thousand_trees_conserve_instances() {
    let data = common::gaussian_with_outliers(2);
    for mode in [Mode::OptIForest, Mode::LshOnly] {
        let forest = Forest::fit(
            &data,
            &ForestConfig {
                trees: 1000,
                sample_size: 64,
                epsilon: if mode == Mode::LshOnly { Epsilon::Psi } else { Epsilon::Value(7) },
                mode,
                ..Default::default()
            },
        )
        .unwrap();
        for tree in &forest.trees {
            assert_eq!(tree.leaf_count_sum(), 64);
            assert_conserved(tree);
        }
    }
}

#[test]
fn small_data_model_is_bit_identical() {
    let rows = gaussian(40, 3, 9);
    let data = DataMatrix::from_rows(&rows, None).unwrap();
    let config = ForestConfig {
        trees: 1,
        sample_size: 40,
        seed: 3,
        ..Default::default()
    };
    let a = Forest::fit(&data, &config).unwrap();
    let b = Forest::fit(&data, &config).unwrap();
    assert_eq!(encode(&a).unwrap(), encode(&b).unwrap());
}

#[test]
fn saved_model_scores_identically() {
    let data = common::gaussian_with_outliers(4);
    let forest = Forest::fit(
        &data,
        &ForestConfig {
            trees: 30,
            minmax: true,
            ..Default::default()
        },
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    save_model(&forest, &path).unwrap();
    let loaded = load_model(&path).unwrap();
    assert_eq!(loaded, forest);
    assert_eq!(forest.score_all(&data).unwrap(), loaded.score_all(&data).unwrap());
    assert_eq!(decode(&encode(&loaded).unwrap()).unwrap(), forest);
}

#[test]
fn build_is_independent_of_thread_count() {
    let data = common::gaussian_with_outliers(8);
    let config = ForestConfig {
        trees: 40,
        ..Default::default()
    };
    let fit_with = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| Forest::fit(&data, &config).unwrap())
    };
    let serial = fit_with(1);
    assert_eq!(serial, fit_with(4));
    assert_eq!(serial, fit_with(7));
}

#[test]
fn far_outlier_ranks_first() {
    let mut first = 0;
    for seed in 0..15u64 {
        let mut rows: Vec<Vec<f64>> = gaussian(300, 3, 100 + seed)
            .into_iter()
            .map(|r| r.into_iter().map(|x| 0.5 * x).collect())
            .collect();
        rows.push(vec![9.0, -9.0, 9.0]);
        let data = DataMatrix::from_rows(&rows, None).unwrap();
        let forest = Forest::fit(
            &data,
            &ForestConfig {
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        let scores = forest.score_all(&data).unwrap();
        let top = (0..scores.len()).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
        first += usize::from(top == 300);
    }
    assert!(first >= 14, "outlier ranked first in {first}/15 runs");
}

#[test]
fn score_all_is_rowwise_and_order_preserving() {
    let data = common::gaussian_with_outliers(6);
    let forest = Forest::fit(
        &data,
        &ForestConfig {
            trees: 25,
            ..Default::default()
        },
    )
    .unwrap();
    let scores = forest.score_all(&data).unwrap();
    for (i, s) in scores.iter().enumerate() {
        assert_eq!(*s, forest.score(data.row(i)).unwrap());
    }

    let mut order: Vec<usize> = (0..data.n_rows()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
    let permuted = forest.score_all(&data.select_rows(&order)).unwrap();
    for (k, &i) in order.iter().enumerate() {
        assert_eq!(permuted[k], scores[i]);
    }

    let empty = DataMatrix::from_rows(&[], None).unwrap();
    assert!(forest.score_all(&empty).unwrap().is_empty());
    assert!(forest.score(&[1.0, 2.0]).is_err());
}

#[test]
fn tree_order_does_not_change_scores() {
    let data = common::gaussian_with_outliers(10);
    let forest = Forest::fit(
        &data,
        &ForestConfig {
            trees: 50,
            ..Default::default()
        },
    )
    .unwrap();
    let mut shuffled = forest.clone();
    shuffled.trees.shuffle(&mut ChaCha8Rng::seed_from_u64(2));
    let a = forest.score_all(&data).unwrap();
    let b = shuffled.score_all(&data).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-12 * x.abs(), "{x} vs {y}");
    }
}

#[test]
fn scores_are_bounded_and_monotone_in_path_length() {
    let data = common::gaussian_with_outliers(12);
    let forest = Forest::fit(
        &data,
        &ForestConfig {
            trees: 40,
            ..Default::default()
        },
    )
    .unwrap();
    let mut pairs: Vec<(f64, f64)> = data
        .rows()
        .map(|x| {
            let h = forest.mean_path_length(x).unwrap();
            (h, forest.score(x).unwrap())
        })
        .collect();
    for &(_, s) in &pairs {
        assert!(s > 0.0 && s < 1.0);
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    for w in pairs.windows(2) {
        if w[1].0 > w[0].0 {
            assert!(w[1].1 < w[0].1);
        }
    }
    assert_eq!(forest.score_from_path_length(forest.c_psi), 0.5);
    assert!(forest.score_from_path_length(1e-9) > 0.999_999);
    assert_eq!(forest.c_psi, average_path_length(forest.psi_effective));
}

#[test]
fn learned_nodes_appear_above_the_cut() {
    let data = common::gaussian_with_outliers(13);
    let forest = Forest::fit(
        &data,
        &ForestConfig {
            trees: 10,
            sample_size: 256,
            epsilon: Epsilon::Value(7),
            ..Default::default()
        },
    )
    .unwrap();
    for tree in &forest.trees {
        assert!(matches!(tree.kind, NodeKind::Learned { .. }));
        for node in tree.iter() {
            if let NodeKind::Learned { centres } = &node.kind {
                assert_eq!(centres.len(), node.children.len());
                assert!((2..=3).contains(&centres.len()));
            }
        }
    }
}

fn no_lsh_above_learned(node: &TreeNode, below_lsh: bool) -> bool {
    let learned = matches!(node.kind, NodeKind::Learned { .. });
    if learned && below_lsh {
        return false;
    }
    let lsh = matches!(node.kind, NodeKind::Lsh { .. });
    node.children.iter().all(|c| no_lsh_above_learned(c, below_lsh || lsh))
}

#[test]
fn learned_routers_stay_above_lsh_routers() {
    let data = common::gaussian_with_outliers(14);
    for eps in [1, 7, 55] {
        let forest = Forest::fit(
            &data,
            &ForestConfig {
                trees: 20,
                sample_size: 128,
                epsilon: Epsilon::Value(eps),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(forest.trees.iter().all(|t| no_lsh_above_learned(t, false)));
    }
}

#[test]
fn finite23_merges_average_e_children() {
    let data = common::gaussian_with_outliers(15);
    let (mut draws, mut draw_sum) = (0usize, 0usize);
    let (mut selective, mut selective_children) = (0usize, 0usize);
    let mut tree = 0u64;
    while draws < 10_000 {
        let mut rng = optiforest::forest::tree_rng(21, tree as usize);
        tree += 1;
        let sub = subsample(&data, 32, &mut rng).unwrap();
        let (root, trace) = build_optimal_tree_traced(
            &data,
            &sub,
            1,
            BranchingDistribution::Finite23,
            &LshParams::default(),
            &mut rng,
        )
        .unwrap();
        for step in &trace.steps {
            draws += 1;
            draw_sum += step.v as usize;
            if let Some(chosen) = &step.chosen {
                assert_eq!(chosen.len(), step.v as usize);
                selective += 1;
                selective_children += chosen.len();
            }
        }
        let learned = root
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::Learned { .. }))
            .count();
        assert_eq!(learned, trace.steps.len());
    }
    let drawn_mean = draw_sum as f64 / draws as f64;
    let child_mean = selective_children as f64 / selective as f64;
    assert!((drawn_mean - E).abs() < 0.02, "drawn mean {drawn_mean}");
    assert!((child_mean - E).abs() < 0.02, "selective-merge child mean {child_mean}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fitted_scores_stay_in_unit_interval(
        seed in 0u64..1000,
        n in 2usize..80,
        dim in 1usize..5,
        psi in 2usize..64,
        lsh_only in any::<bool>(),
    ) {
        let rows = gaussian(n, dim, seed);
        let data = DataMatrix::from_rows(&rows, None).unwrap();
        let config = ForestConfig {
            trees: 8,
            sample_size: psi,
            epsilon: if lsh_only { Epsilon::Psi } else { Epsilon::Value(psi.min(3)) },
            mode: if lsh_only { Mode::LshOnly } else { Mode::OptIForest },
            seed,
            ..Default::default()
        };
        let forest = Forest::fit(&data, &config).unwrap();
        prop_assert_eq!(forest.psi_effective, psi.min(n));
        for tree in &forest.trees {
            prop_assert_eq!(tree.leaf_count_sum(), psi.min(n));
        }
        for s in forest.score_all(&data).unwrap() {
            prop_assert!(s > 0.0 && s < 1.0);
        }
        let again = Forest::fit(&data, &config).unwrap();
        prop_assert_eq!(again, forest);
    }
}
