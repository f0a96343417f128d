mod common;

use std::collections::BTreeSet;

use cleve::optim::stream_rng;
use cleve::subgraph_sampler::{induce, pick_ego, rwr_counted, sample_positive_pair, sample_subgraph, DEFAULT_MAX_STEPS};
use common::{edge_keys, random_dag, undirected_component};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn walk_is_connected_and_rooted(seed in any::<u64>(), p in 0.05f64..0.95, cap in 1usize..200) {
        let mut rng = stream_rng(seed, 0, 0);
        let g = random_dag(30, &mut rng);
        let ego = pick_ego(&g, &mut rng).unwrap();
        prop_assert!(g.edges.iter().all(|e| e.dst != ego));
        let (visited, steps) = rwr_counted(&g, ego, p, cap, &mut rng);
        prop_assert!(visited.contains(&ego));
        prop_assert!(steps <= cap);
        prop_assert_eq!(undirected_component(&g, ego, &visited), visited);
    }

    #[test]
    fn induced_edges_match_filter(seed in any::<u64>()) {
        let mut rng = stream_rng(seed, 1, 0);
        let g = random_dag(30, &mut rng);
        let ids = g.node_ids();
        let keep: BTreeSet<_> = ids.iter().copied().filter(|_| rand::Rng::gen_bool(&mut rng, 0.5)).collect();
        let sub = induce(&g, &keep).unwrap();
        let mut expected = Vec::new();
        for e in &g.edges {
            if keep.contains(&e.src) && keep.contains(&e.dst) {
                expected.push(e.clone());
            }
        }
        prop_assert_eq!(edge_keys(&sub.edges), edge_keys(&expected));
        prop_assert_eq!(sub.node_ids().into_iter().collect::<BTreeSet<_>>(), keep);
    }

    #[test]
    fn anonymized_sample_maps_back(seed in any::<u64>()) {
        let mut rng = stream_rng(seed, 2, 0);
        let g = random_dag(30, &mut rng);
        let s = sample_subgraph(&g, 7, 0.8, DEFAULT_MAX_STEPS, &mut rng).unwrap();
        prop_assert_eq!(s.source, 7);
        let mut anon: Vec<usize> = s.id_map.values().copied().collect();
        anon.sort_unstable();
        prop_assert_eq!(anon, (0..s.len()).collect::<Vec<_>>());
        for (&orig, &a) in &s.id_map {
            prop_assert_eq!(s.nodes[a], orig);
        }
        let nodes: BTreeSet<_> = s.nodes.iter().copied().collect();
        let back: Vec<_> = s
            .edges
            .iter()
            .map(|e| cleve::amr::AmrEdge::new(s.nodes[e.src], s.nodes[e.dst], e.rel.clone()))
            .collect();
        let expected = induce(&g, &nodes).unwrap();
        prop_assert_eq!(edge_keys(&back), edge_keys(&expected.edges));
        prop_assert_eq!(s.nodes[s.anonymized_ego()], s.ego);
    }
}

#[test]
fn positive_pair_shares_source() {
    let mut rng = stream_rng(3, 0, 0);
    for _ in 0..50 {
        let g = random_dag(12, &mut rng);
        let (a, b) = sample_positive_pair(&g, 4, 0.8, DEFAULT_MAX_STEPS, &mut rng).unwrap();
        assert_eq!((a.source, b.source), (4, 4));
    }
}

#[test]
fn zero_step_cap_keeps_only_ego() {
    let mut rng = stream_rng(4, 0, 0);
    let g = random_dag(10, &mut rng);
    let ego = pick_ego(&g, &mut rng).unwrap();
    let (visited, steps) = rwr_counted(&g, ego, 0.5, 0, &mut rng);
    assert_eq!(visited, BTreeSet::from([ego]));
    assert_eq!(steps, 0);
}
