mod common;

use std::collections::BTreeSet;

use cleve::clustering::{
    constraint_f, joint_cluster, objective_o, spectral_cluster, CandidateContext, ClusterAssignment, ClusteringConfig,
};
use cleve::evaluation::b_cubed;
use cleve::optim::stream_rng;
use cleve::tensor::Matrix;
use common::oracle;
use rand::seq::SliceRandom;
use rand::Rng;

/// Same partition up to renaming.
fn same_partition(a: &[usize], b: &[usize]) -> bool {
    (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

/// Block affinity over shuffled items: ones within a block, `noise` scaled
/// uniform values across blocks.
fn block_affinity<R: Rng>(sizes: &[usize], noise: f64, rng: &mut R) -> (Matrix, Vec<usize>) {
    let mut truth: Vec<usize> = sizes.iter().enumerate().flat_map(|(b, &s)| vec![b; s]).collect();
    truth.shuffle(rng);
    let n = truth.len();
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = if truth[i] == truth[j] { 1.0 } else { noise * rng.gen::<f64>() };
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
    (m, truth)
}

#[test]
fn objective_matches_pair_enumeration() {
    let mut rng = stream_rng(11, 0, 0);
    for _ in 0..300 {
        let (t, a) = oracle::random_contexts(rng.gen_range(1..=12), rng.gen_range(1..=12), &mut rng);
        let c_t = oracle::random_assignment(t.len(), &mut rng);
        let c_a = oracle::random_assignment(a.len(), &mut rng);
        let lambda = rng.gen::<f64>();
        let got = objective_o(&t, &a, &c_t, &c_a, lambda).unwrap();
        let want = oracle::objective(&t, &a, &c_t, &c_a, lambda);
        assert!((got - want).abs() <= 1e-9, "{got} vs {want}");
    }
}

#[test]
fn objective_extremes() {
    let mut rng = stream_rng(12, 0, 0);
    let (t, a) = oracle::random_contexts(5, 6, &mut rng);
    let one_t = ClusterAssignment { labels: vec![0; 5], k: 1 };
    let one_a = ClusterAssignment { labels: vec![0; 6], k: 1 };
    let single_t = ClusterAssignment::singletons(5);
    let single_a = ClusterAssignment::singletons(6);
    let together = objective_o(&t, &a, &one_t, &one_a, 0.5).unwrap();
    let apart = objective_o(&t, &a, &single_t, &single_a, 0.5).unwrap();
    assert!((together - oracle::objective(&t, &a, &one_t, &one_a, 0.5)).abs() < 1e-9);
    assert!((apart - oracle::objective(&t, &a, &single_t, &single_a, 0.5)).abs() < 1e-9);
}

#[test]
fn b_cubed_matches_rationals() {
    let mut rng = stream_rng(13, 0, 0);
    for _ in 0..500 {
        let n = rng.gen_range(1..=12);
        let kp = rng.gen_range(1..=n);
        let kg = rng.gen_range(1..=n);
        let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..kp)).collect();
        let gold: Vec<usize> = (0..n).map(|_| rng.gen_range(0..kg)).collect();
        let got = b_cubed(&oracle::keyed(&pred), &oracle::keyed(&gold)).unwrap();
        let want = oracle::b_cubed(&pred, &gold);
        assert!(oracle::matches(got.precision, want.precision), "{pred:?} {gold:?}");
        assert!(oracle::matches(got.recall, want.recall), "{pred:?} {gold:?}");
        assert!(oracle::matches(got.f1, want.f1), "{pred:?} {gold:?}");
        assert_eq!(got.n_items, n);
    }
}

#[test]
fn b_cubed_perfect_and_lumped() {
    let gold = [0, 0, 1, 1, 2];
    let perfect = b_cubed(&oracle::keyed(&gold), &oracle::keyed(&gold)).unwrap();
    assert_eq!((perfect.precision, perfect.recall, perfect.f1), (1.0, 1.0, 1.0));
    let lumped = b_cubed(&oracle::keyed(&[0; 5]), &oracle::keyed(&gold)).unwrap();
    assert_eq!(lumped.recall, 1.0);
    assert!(oracle::matches(lumped.precision, num_rational::Ratio::new(9, 25)));
}

#[test]
fn spectral_recovers_blocks() {
    let mut rng = stream_rng(14, 0, 0);
    for trial in 0..60 {
        let k = 2 + trial % 3;
        let sizes: Vec<usize> = (0..k).map(|_| rng.gen_range(2..=10)).collect();
        let (sim, truth) = block_affinity(&sizes, 0.0, &mut rng);
        let got = spectral_cluster(&sim, k, trial as u64).unwrap();
        assert_eq!(got.k, k);
        assert!(same_partition(&got.labels, &truth), "trial {trial}");
    }
}

#[test]
fn spectral_recovers_large_noisy_blocks() {
    let mut rng = stream_rng(15, 0, 0);
    let (sim, truth) = block_affinity(&[120, 100, 90], 0.2, &mut rng);
    let got = spectral_cluster(&sim, 3, 1).unwrap();
    assert!(same_partition(&got.labels, &truth));
}

#[test]
fn spectral_edge_cases() {
    let mut rng = stream_rng(16, 0, 0);
    let (sim, _) = block_affinity(&[3, 3], 0.3, &mut rng);
    assert_eq!(spectral_cluster(&sim, 1, 0).unwrap().labels, vec![0; 6]);
    let all = spectral_cluster(&sim, 6, 0).unwrap();
    assert_eq!(all.labels.iter().collect::<BTreeSet<_>>().len(), 6);
    assert!(spectral_cluster(&sim, 7, 0).is_err());
    let mut bad = sim.clone();
    bad.set(0, 1, f64::NAN);
    assert!(spectral_cluster(&bad, 2, 0).is_err());
}

#[test]
fn constraint_values() {
    let s = |xs: &[(&str, usize)]| xs.iter().map(|&(r, c)| (r.to_string(), c)).collect::<BTreeSet<_>>();
    let same = s(&[("ARG0", 1)]);
    assert!((constraint_f(&same, &same) - 2f64.ln()).abs() < 1e-12);
    assert_eq!(constraint_f(&s(&[("ARG0", 1)]), &s(&[("ARG1", 1)])), 0.0);
    let third = constraint_f(&s(&[("ARG0", 1), ("ARG1", 2)]), &s(&[("ARG1", 2), ("ARG2", 0)]));
    assert!((third - (4.0f64 / 3.0).ln()).abs() < 1e-12);
    assert_eq!(constraint_f(&s(&[]), &s(&[])), 0.0);
}

/// Two trigger types with distinct vectors and relation patterns, two
/// argument types.
fn planted() -> (Vec<CandidateContext>, Vec<CandidateContext>, Vec<usize>, Vec<usize>) {
    let mut rng = stream_rng(17, 0, 0);
    let mut triggers = Vec::new();
    let mut arguments = Vec::new();
    let (mut gt, mut ga) = (Vec::new(), Vec::new());
    for i in 0..24 {
        let class = i % 2;
        let mut sem = vec![0.05 * rng.gen::<f64>(); 4];
        sem[class] += 1.0;
        let t = triggers.len();
        let a = arguments.len();
        let rel = if class == 0 { "ARG0" } else { "ARG1" };
        let mut asem = vec![0.05 * rng.gen::<f64>(); 4];
        asem[2 + class] += 1.0;
        arguments.push(CandidateContext {
            id: format!("a{a}"),
            semantic: asem,
            links: vec![(rel.into(), t)],
            ..Default::default()
        });
        triggers.push(CandidateContext {
            id: format!("t{t}"),
            semantic: sem,
            links: vec![(rel.into(), a)],
            ..Default::default()
        });
        gt.push(class);
        ga.push(class);
    }
    (triggers, arguments, gt, ga)
}

#[test]
fn joint_cluster_finds_planted_types() {
    let (t, a, gt, ga) = planted();
    let cfg = ClusteringConfig {
        k_triggers: [2, 2],
        k_arguments: [2, 2],
        ..Default::default()
    };
    let out = joint_cluster(&t, &a, &cfg).unwrap();
    assert!(same_partition(&out.triggers.labels, &gt));
    assert!(same_partition(&out.arguments.labels, &ga));
    let o = objective_o(&t, &a, &out.triggers, &out.arguments, cfg.lambda).unwrap();
    assert!((o - out.objective).abs() < 1e-9);
    assert!(out.history.iter().all(|&h| h >= out.objective - 1e-9));
}

#[test]
fn joint_cluster_is_deterministic_and_validates() {
    let (t, a, _, _) = planted();
    let cfg = ClusteringConfig {
        k_triggers: [2, 4],
        k_arguments: [2, 3],
        max_iterations: 3,
        ..Default::default()
    };
    let x = joint_cluster(&t, &a, &cfg).unwrap();
    cleve::par::set_sequential(true);
    let y = joint_cluster(&t, &a, &cfg).unwrap();
    cleve::par::set_sequential(false);
    assert_eq!(x, y);
    assert!(joint_cluster(&[], &a, &cfg).is_err());
    let bad = ClusteringConfig { lambda: 1.5, ..cfg };
    assert!(joint_cluster(&t, &a, &bad).is_err());
    let bad = ClusteringConfig { k_triggers: [3, 2], ..cfg };
    assert!(joint_cluster(&t, &a, &bad).is_err());
}
