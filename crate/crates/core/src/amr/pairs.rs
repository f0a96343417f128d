use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{AmrGraph, NodeId};

/// Core event relations: `ARG` followed by digits, `time`, `location`.
pub fn core_relation(rel: &str) -> bool {
    rel == "time"
        || rel == "location"
        || rel
            .strip_prefix("ARG")
            .is_some_and(|d| d.chars().all(|c| c.is_ascii_digit()))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairSet {
    /// (trigger, argument), sorted and distinct.
    pub positives: Vec<(NodeId, NodeId)>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }
}

pub fn positive_pairs(g: &AmrGraph) -> PairSet {
    let set: BTreeSet<(NodeId, NodeId)> = g
        .edges
        .iter()
        .filter(|e| core_relation(&e.rel))
        .map(|e| (e.src, e.dst))
        .collect();
    PairSet {
        positives: set.into_iter().collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Replaced {
    Trigger,
    Argument,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NegativeSample {
    pub pair: (NodeId, NodeId),
    pub replaced: Replaced,
}

/// Samples up to `m_t` trigger-replaced and `m_a` argument-replaced
/// negatives for the positive pair `(t, a)`.
pub fn sample_negatives<R: Rng + ?Sized>(
    g: &AmrGraph,
    pair: (NodeId, NodeId),
    m_t: usize,
    m_a: usize,
    rng: &mut R,
) -> Vec<NegativeSample> {
    sample_negatives_among(g, pair, m_t, m_a, |_| true, rng)
}

/// As [`sample_negatives`], restricted to candidate nodes accepted by
/// `allowed`. Candidates exclude both endpoints of the positive pair and
/// any node joined to the kept endpoint by a core edge in the relevant
/// direction. Sampling is uniform without replacement over the candidates
/// in id order, so a fixed rng state gives a fixed result.
pub fn sample_negatives_among<R: Rng + ?Sized>(
    g: &AmrGraph,
    (t, a): (NodeId, NodeId),
    m_t: usize,
    m_a: usize,
    allowed: impl Fn(NodeId) -> bool,
    rng: &mut R,
) -> Vec<NegativeSample> {
    let core: BTreeSet<(NodeId, NodeId)> = g
        .edges
        .iter()
        .filter(|e| core_relation(&e.rel))
        .map(|e| (e.src, e.dst))
        .collect();
    let mut ids = g.node_ids();
    ids.sort_unstable();
    let open = |v: NodeId| v != t && v != a && allowed(v);

    let trig: Vec<NodeId> = ids
        .iter()
        .copied()
        .filter(|&v| open(v) && !core.contains(&(v, a)))
        .collect();
    let args: Vec<NodeId> = ids
        .iter()
        .copied()
        .filter(|&v| open(v) && !core.contains(&(t, v)))
        .collect();

    let mut out: Vec<NegativeSample> = trig
        .choose_multiple(rng, m_t)
        .map(|&v| NegativeSample {
            pair: (v, a),
            replaced: Replaced::Trigger,
        })
        .collect();
    out.extend(args.choose_multiple(rng, m_a).map(|&v| NegativeSample {
        pair: (t, v),
        replaced: Replaced::Argument,
    }));
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Candidates {
    pub triggers: Vec<NodeId>,
    pub arguments: Vec<NodeId>,
}

/// Triggers have an outgoing core edge, arguments an incoming one.
pub fn identify_candidates(g: &AmrGraph) -> Candidates {
    let mut triggers = BTreeSet::new();
    let mut arguments = BTreeSet::new();
    for e in g.edges.iter().filter(|e| core_relation(&e.rel)) {
        triggers.insert(e.src);
        arguments.insert(e.dst);
    }
    Candidates {
        triggers: triggers.into_iter().collect(),
        arguments: arguments.into_iter().collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amr::{fixtures, merge_entity_nodes, AmrEdge, AmrNode};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn core_relation_family() {
        for r in ["ARG0", "ARG1", "ARG5", "ARG", "time", "location"] {
            assert!(core_relation(r), "{r}");
        }
        for r in ["op1", "name", "mod", "ARGx", "Time", "ARG0-of"] {
            assert!(!core_relation(r), "{r}");
        }
    }

    #[test]
    fn fixture_pairs_include_time_and_location() {
        let g = merge_entity_nodes(&fixtures::attack_report());
        let p = positive_pairs(&g);
        assert!(p.positives.contains(&(5, 6)));
        assert!(p.positives.contains(&(5, 7)));
        assert_eq!(p.positives, vec![(0, 1), (0, 5), (5, 6), (5, 7)]);
    }

    #[test]
    fn op_only_graph_has_no_pairs() {
        let g = AmrGraph::new(
            vec![],
            vec![AmrNode::new(0, "and", None), AmrNode::new(1, "x", None)],
            vec![AmrEdge::new(0, 1, "op1")],
        );
        assert!(positive_pairs(&g).is_empty());
    }

    #[test]
    fn parallel_core_edges_deduplicate() {
        let g = AmrGraph::new(
            vec![],
            vec![AmrNode::new(0, "t", None), AmrNode::new(1, "a", None)],
            vec![AmrEdge::new(0, 1, "ARG0"), AmrEdge::new(0, 1, "ARG1")],
        );
        assert_eq!(positive_pairs(&g).positives, vec![(0, 1)]);
    }

    #[test]
    fn worked_negative_case() {
        // Positive (attack, Netanya): "report" is a valid replacement argument,
        // "today" is not because attack -time-> today exists.
        let g = merge_entity_nodes(&fixtures::attack_report());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let negs = sample_negatives(&g, (5, 7), 0, 30, &mut rng);
        let args: Vec<NodeId> = negs.iter().map(|n| n.pair.1).collect();
        assert!(args.contains(&0));
        assert!(!args.contains(&6));
        assert!(negs.iter().all(|n| n.replaced == Replaced::Argument));
    }

    #[test]
    fn two_node_graph_has_no_negatives() {
        let g = AmrGraph::new(
            vec![],
            vec![AmrNode::new(0, "t", None), AmrNode::new(1, "a", None)],
            vec![AmrEdge::new(0, 1, "ARG0")],
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_negatives(&g, (0, 1), 9, 30, &mut rng).is_empty());
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let g = merge_entity_nodes(&fixtures::attack_report());
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            sample_negatives(&g, (0, 5), 2, 2, &mut rng)
        };
        assert_eq!(run(), run());
        assert_eq!(run().len(), 4);
    }

    #[test]
    fn candidates_on_chain() {
        let g = AmrGraph::new(
            vec![],
            vec![
                AmrNode::new(0, "t", None),
                AmrNode::new(1, "a", None),
                AmrNode::new(2, "b", None),
            ],
            vec![AmrEdge::new(0, 1, "ARG0"), AmrEdge::new(1, 2, "ARG1")],
        );
        let c = identify_candidates(&g);
        assert_eq!(c.triggers, vec![0, 1]);
        assert_eq!(c.arguments, vec![1, 2]);
        assert_eq!(identify_candidates(&AmrGraph::default()), Candidates::default());
    }

    #[test]
    fn report_and_attack_are_both_triggers() {
        let g = merge_entity_nodes(&fixtures::attack_report());
        let c = identify_candidates(&g);
        assert!(c.triggers.contains(&0) && c.triggers.contains(&5));
    }

    fn arb_dag() -> impl Strategy<Value = AmrGraph> {
        let rels = prop::sample::select(vec!["ARG0", "ARG1", "time", "location", "mod", "op1"]);
        (2usize..12).prop_flat_map(move |n| {
            prop::collection::vec((0..n, 0..n, rels.clone()), 0..20).prop_map(move |raw| {
                let nodes = (0..n).map(|i| AmrNode::new(i, format!("c{i}"), None)).collect();
                let edges = raw
                    .into_iter()
                    .filter(|(a, b, _)| a < b)
                    .map(|(a, b, r)| AmrEdge::new(a, b, r))
                    .collect();
                AmrGraph::new(vec![], nodes, edges)
            })
        })
    }

    proptest! {
        #[test]
        fn negatives_respect_no_core_edge(g in arb_dag(), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let core: BTreeSet<(NodeId, NodeId)> = g.edges.iter()
                .filter(|e| core_relation(&e.rel)).map(|e| (e.src, e.dst)).collect();
            for &pair in &positive_pairs(&g).positives {
                prop_assert!(core.contains(&pair));
                for n in sample_negatives(&g, pair, 9, 30, &mut rng) {
                    prop_assert!(!core.contains(&n.pair));
                    match n.replaced {
                        Replaced::Trigger => prop_assert_eq!(n.pair.1, pair.1),
                        Replaced::Argument => prop_assert_eq!(n.pair.0, pair.0),
                    }
                }
            }
        }

        #[test]
        fn merge_is_idempotent(g in arb_dag()) {
            let once = merge_entity_nodes(&g);
            prop_assert_eq!(merge_entity_nodes(&once), once);
        }
    }
}
