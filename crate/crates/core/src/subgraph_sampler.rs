//! Random walk with restart, subgraph induction and id anonymization.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::amr::{AmrEdge, AmrGraph, NodeId};
use crate::error::{Error, Result};

/// Walk length cap; guarantees termination when restarts dominate.
pub const DEFAULT_MAX_STEPS: usize = 128;
pub const DEFAULT_RESTART: f64 = 0.8;

/// An anonymized induced subgraph. Anonymized id `i` stands for original
/// node `nodes[i]`, so node features travel with their nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubgraphSample {
    pub source: usize,
    pub ego: NodeId,
    pub nodes: Vec<NodeId>,
    pub id_map: BTreeMap<NodeId, usize>,
    /// Edges over anonymized ids, directions and labels kept.
    pub edges: Vec<AmrEdge>,
}

impl SubgraphSample {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn anonymized_ego(&self) -> usize {
        self.id_map[&self.ego]
    }
}

/// Uniform choice among root nodes.
pub fn pick_ego<R: Rng + ?Sized>(g: &AmrGraph, rng: &mut R) -> Result<NodeId> {
    if g.is_empty() {
        return Err(Error::EmptyGraph);
    }
    if g.find_cycle().is_some() {
        return Err(Error::graph("graph", "cycle; no well-defined ego"));
    }
    let mut roots = g.roots();
    roots.sort_unstable();
    roots.choose(rng).copied().ok_or(Error::NoRoot)
}

/// Walks the undirected view of `g` from `ego`. Each step restarts at the
/// ego with probability `p_restart`, otherwise moves to a uniform random
/// neighbor. The walk ends once every neighbor of the current node has been
/// visited, or after `max_steps` steps.
pub fn rwr<R: Rng + ?Sized>(
    g: &AmrGraph,
    ego: NodeId,
    p_restart: f64,
    max_steps: usize,
    rng: &mut R,
) -> BTreeSet<NodeId> {
    rwr_counted(g, ego, p_restart, max_steps, rng).0
}

/// [`rwr`] that also reports how many steps the walk took.
pub fn rwr_counted<R: Rng + ?Sized>(
    g: &AmrGraph,
    ego: NodeId,
    p_restart: f64,
    max_steps: usize,
    rng: &mut R,
) -> (BTreeSet<NodeId>, usize) {
    let nbrs = g.undirected_neighbors();
    let empty = Vec::new();
    let neighbors = |v: NodeId| nbrs.get(&v).unwrap_or(&empty);
    let mut visited = BTreeSet::from([ego]);
    let done = |v: NodeId, visited: &BTreeSet<NodeId>| neighbors(v).iter().all(|u| visited.contains(u));
    if done(ego, &visited) {
        return (visited, 0);
    }
    let mut current = ego;
    let mut steps = 0;
    while steps < max_steps {
        steps += 1;
        current = if rng.gen::<f64>() < p_restart {
            ego
        } else {
            *neighbors(current)
                .choose(rng)
                .expect("walk only reaches nodes with neighbors")
        };
        visited.insert(current);
        if done(current, &visited) {
            break;
        }
    }
    (visited, steps)
}

/// The subgraph on `nodes` with every edge of `g` between two of them.
pub fn induce(g: &AmrGraph, nodes: &BTreeSet<NodeId>) -> Result<AmrGraph> {
    if let Some(&bad) = nodes.iter().find(|&&v| !g.contains(v)) {
        return Err(Error::UnknownNode(bad));
    }
    Ok(AmrGraph {
        sentence_tokens: g.sentence_tokens.clone(),
        nodes: g
            .nodes
            .iter()
            .filter(|n| nodes.contains(&n.id))
            .cloned()
            .collect(),
        edges: g
            .edges
            .iter()
            .filter(|e| nodes.contains(&e.src) && nodes.contains(&e.dst))
            .cloned()
            .collect(),
    })
}

/// Relabels the nodes of `sub` with a uniform random permutation of
/// `0..n`.
pub fn anonymize<R: Rng + ?Sized>(sub: &AmrGraph, source: usize, ego: NodeId, rng: &mut R) -> SubgraphSample {
    let mut ids = sub.node_ids();
    ids.sort_unstable();
    let mut perm: Vec<usize> = (0..ids.len()).collect();
    perm.shuffle(rng);
    let id_map: BTreeMap<NodeId, usize> = ids.iter().copied().zip(perm.iter().copied()).collect();
    let mut nodes = vec![0; ids.len()];
    for (&orig, &anon) in &id_map {
        nodes[anon] = orig;
    }
    let edges = sub
        .edges
        .iter()
        .map(|e| AmrEdge::new(id_map[&e.src], id_map[&e.dst], e.rel.clone()))
        .collect();
    SubgraphSample {
        source,
        ego,
        nodes,
        id_map,
        edges,
    }
}

/// One ego pick, walk, induction and anonymization.
pub fn sample_subgraph<R: Rng + ?Sized>(
    g: &AmrGraph,
    source: usize,
    p_restart: f64,
    max_steps: usize,
    rng: &mut R,
) -> Result<SubgraphSample> {
    let ego = pick_ego(g, rng)?;
    let visited = rwr(g, ego, p_restart, max_steps, rng);
    let sub = induce(g, &visited)?;
    Ok(anonymize(&sub, source, ego, rng))
}

/// Two independent draws from the same graph.
pub fn sample_positive_pair<R: Rng + ?Sized>(
    g: &AmrGraph,
    source: usize,
    p_restart: f64,
    max_steps: usize,
    rng: &mut R,
) -> Result<(SubgraphSample, SubgraphSample)> {
    let a = sample_subgraph(g, source, p_restart, max_steps, rng)?;
    let b = sample_subgraph(g, source, p_restart, max_steps, rng)?;
    Ok((a, b))
}
