//! Generated event corpora with known latent classes, for end-to-end
//! checks and demos.
//!
//! Each sentence mentions two events. A trigger word comes from the
//! vocabulary of one of four event classes; every class fills a fixed set
//! of core roles with entities drawn from one of three entity classes.
//! Adjectives hang off arguments by `:mod` edges and an `and` node joins
//! the triggers; neither becomes a candidate.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::amr::{AmrEdge, AmrGraph, AmrNode, Span};
use crate::downstream::{candidate_id, SupervisedInstance};
use crate::evaluation::GoldLabel;
use crate::optim::stream_rng;

pub struct EventClass {
    pub name: &'static str,
    pub words: &'static [&'static str],
    /// (relation, entity class index) per core role.
    pub roles: &'static [(&'static str, usize)],
}

pub struct EntityClass {
    pub name: &'static str,
    pub words: &'static [&'static str],
}

pub const EVENT_CLASSES: [EventClass; 4] = [
    EventClass {
        name: "attack",
        words: &["attacked", "bombed", "raided", "stormed", "shelled"],
        roles: &[("ARG0", 0), ("ARG1", 1)],
    },
    EventClass {
        name: "transport",
        words: &["moved", "shipped", "carried", "hauled", "ferried"],
        roles: &[("ARG0", 0), ("ARG1", 2), ("ARG2", 1)],
    },
    EventClass {
        name: "meet",
        words: &["met", "visited", "greeted", "hosted", "welcomed"],
        roles: &[("ARG0", 0), ("ARG1", 0)],
    },
    EventClass {
        name: "transfer",
        words: &["sold", "donated", "traded", "lent", "gifted"],
        roles: &[("ARG0", 0), ("ARG1", 2), ("ARG2", 0)],
    },
];

pub const ENTITY_CLASSES: [EntityClass; 3] = [
    EntityClass {
        name: "agent",
        words: &["soldiers", "rebels", "officials", "merchants", "diplomats", "farmers"],
    },
    EntityClass {
        name: "place",
        words: &["city", "village", "harbor", "border", "capital", "valley"],
    },
    EntityClass {
        name: "goods",
        words: &["weapons", "grain", "medicine", "fuel", "cars", "timber"],
    },
];

const ADJECTIVES: [&str; 5] = ["old", "large", "small", "northern", "local"];

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub graphs: Vec<AmrGraph>,
    /// One label per trigger and argument candidate.
    pub gold: Vec<GoldLabel>,
    /// Event class of the first event of each sentence.
    pub event_class: Vec<usize>,
}

type Labels = Vec<(usize, &'static str, &'static str)>;

/// A run of tokens and the nodes aligned to them (offsets into the run).
struct Unit {
    words: Vec<&'static str>,
    nodes: Vec<(usize, usize)>,
}

/// Two events whose trigger words and argument phrases appear in random
/// order, so attachments can only be read off the graph or inferred from
/// which trigger and entity words go together across the corpus. The first
/// event has class `class`, the second a different random class.
fn sentence<R: Rng + ?Sized>(class: usize, rng: &mut R) -> (AmrGraph, Labels) {
    let other = (class + rng.gen_range(1..EVENT_CLASSES.len())) % EVENT_CLASSES.len();
    let mut nodes: Vec<AmrNode> = Vec::new();
    let mut edges = Vec::new();
    let mut labels = Vec::new();
    let mut units = Vec::new();
    let new_node = |nodes: &mut Vec<AmrNode>, concept: String| {
        nodes.push(AmrNode::new(nodes.len(), concept, None));
        nodes.len() - 1
    };
    let mut triggers = Vec::new();
    for c in [class, other] {
        let ev = &EVENT_CLASSES[c];
        let word = *ev.words.choose(rng).expect("non-empty");
        let t = new_node(&mut nodes, format!("{word}-01"));
        triggers.push(t);
        labels.push((t, "trigger", ev.name));
        units.push(Unit {
            words: vec![word],
            nodes: vec![(t, 0)],
        });
        for &(rel, ent) in ev.roles {
            let noun = *ENTITY_CLASSES[ent].words.choose(rng).expect("non-empty");
            let a = new_node(&mut nodes, noun.to_string());
            edges.push(AmrEdge::new(t, a, rel));
            labels.push((a, "argument", ENTITY_CLASSES[ent].name));
            let mut unit = Unit {
                words: vec!["the"],
                nodes: Vec::new(),
            };
            if rng.gen_bool(0.3) {
                let adj = *ADJECTIVES.choose(rng).expect("non-empty");
                let m = new_node(&mut nodes, adj.to_string());
                edges.push(AmrEdge::new(a, m, "mod"));
                unit.nodes.push((m, unit.words.len()));
                unit.words.push(adj);
            }
            unit.nodes.push((a, unit.words.len()));
            unit.words.push(noun);
            units.push(unit);
        }
    }
    let and = new_node(&mut nodes, "and".to_string());
    edges.push(AmrEdge::new(and, triggers[0], "op1"));
    edges.push(AmrEdge::new(and, triggers[1], "op2"));
    units.shuffle(rng);
    let last = units.len() - 1;
    units.insert(
        last,
        Unit {
            words: vec!["and"],
            nodes: vec![(and, 0)],
        },
    );

    let mut tokens: Vec<String> = Vec::new();
    for u in &units {
        for &(id, offset) in &u.nodes {
            nodes[id].span = Some(Span::single(tokens.len() + offset));
        }
        tokens.extend(u.words.iter().map(|w| w.to_string()));
    }
    tokens.push(".".into());
    (AmrGraph::new(tokens, nodes, edges), labels)
}

/// `n` sentences with event classes in round-robin order.
pub fn liberal_corpus(n: usize, seed: u64) -> SynthCorpus {
    let mut graphs = Vec::with_capacity(n);
    let mut gold = Vec::new();
    let mut event_class = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % EVENT_CLASSES.len();
        let mut rng = stream_rng(seed, 30, i as u64);
        let (g, labels) = sentence(class, &mut rng);
        for (node, role, label) in labels {
            gold.push(GoldLabel {
                id: candidate_id(i, node),
                role: role.into(),
                label: label.into(),
            });
        }
        graphs.push(g);
        event_class.push(class);
    }
    SynthCorpus {
        graphs,
        gold,
        event_class,
    }
}

/// Trigger classification instances for the first event of each
/// sentence, labelled with its event class, graphs attached.
pub fn supervised_instances(n: usize, seed: u64) -> Vec<SupervisedInstance> {
    let corpus = liberal_corpus(n, seed);
    corpus
        .graphs
        .into_iter()
        .zip(corpus.event_class)
        .map(|(g, class)| {
            let trigger = g.node(0).and_then(|n| n.span).expect("trigger is node 0");
            SupervisedInstance {
                tokens: g.sentence_tokens,
                trigger,
                argument: None,
                label: EVENT_CLASSES[class].name.into(),
                nodes: g.nodes,
                edges: g.edges,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amr::identify_candidates;
    use std::collections::BTreeSet;

    #[test]
    fn graphs_are_valid_and_labelled() {
        let c = liberal_corpus(40, 3);
        let labelled: BTreeSet<&str> = c.gold.iter().map(|g| g.id.as_str()).collect();
        for (i, g) in c.graphs.iter().enumerate() {
            g.validate("synthetic").unwrap();
            assert!(g.find_cycle().is_none());
            let cands = identify_candidates(g);
            assert_eq!(cands.triggers.len(), 2);
            assert!(cands.triggers.contains(&0));
            for v in cands.triggers.iter().chain(&cands.arguments) {
                assert!(labelled.contains(candidate_id(i, *v).as_str()));
            }
        }
        let n_cands: usize = c
            .graphs
            .iter()
            .map(|g| {
                let k = identify_candidates(g);
                k.triggers.len() + k.arguments.len()
            })
            .sum();
        assert_eq!(n_cands, c.gold.len());
    }

    #[test]
    fn deterministic() {
        let a = liberal_corpus(10, 7);
        let b = liberal_corpus(10, 7);
        assert_eq!(a.graphs, b.graphs);
        assert_ne!(a.graphs, liberal_corpus(10, 8).graphs);
    }
}
