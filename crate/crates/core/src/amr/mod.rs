//! AMR graph model and the graph-side self-supervision signals.
//!
//! A sentence is a list of tokens plus a directed acyclic graph of concept
//! nodes joined by labelled relations. Nodes may be aligned to a half-open
//! token span. Everything downstream (pair discrimination, subgraph
//! sampling, candidate identification) reads this representation.

mod jsonl;
mod merge;
mod pairs;
mod penman;

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use jsonl::{parse_jsonl_line, read_corpus_jsonl, to_jsonl_line, write_corpus_jsonl};
pub use merge::{merge_entity_nodes, merge_entity_nodes_with_report, MergeReport};
pub use pairs::{
    core_relation, identify_candidates, positive_pairs, sample_negatives, sample_negatives_among,
    Candidates, NegativeSample, PairSet, Replaced,
};
pub use penman::{read_penman, read_penman_documents, strip_sense};

pub type NodeId = usize;

/// Half-open token range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn single(i: usize) -> Self {
        Span::new(i, i + 1)
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn cover(&self, other: &Span) -> Span {
        Span::new(self.start.min(other.start), self.end.max(other.end))
    }
}

impl From<[usize; 2]> for Span {
    fn from(v: [usize; 2]) -> Self {
        Span::new(v[0], v[1])
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AmrNode {
    pub id: NodeId,
    pub concept: String,
    #[serde(default)]
    pub span: Option<Span>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub merged_from: Vec<NodeId>,
}

impl AmrNode {
    pub fn new(id: NodeId, concept: impl Into<String>, span: Option<Span>) -> Self {
        AmrNode {
            id,
            concept: concept.into(),
            span,
            merged_from: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AmrEdge {
    pub src: NodeId,
    pub dst: NodeId,
    pub rel: String,
}

impl AmrEdge {
    pub fn new(src: NodeId, dst: NodeId, rel: impl Into<String>) -> Self {
        AmrEdge {
            src,
            dst,
            rel: rel.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AmrGraph {
    #[serde(rename = "tokens")]
    pub sentence_tokens: Vec<String>,
    pub nodes: Vec<AmrNode>,
    pub edges: Vec<AmrEdge>,
}

impl AmrGraph {
    pub fn new(tokens: Vec<String>, nodes: Vec<AmrNode>, edges: Vec<AmrEdge>) -> Self {
        AmrGraph {
            sentence_tokens: tokens,
            nodes,
            edges,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Option<&AmrNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.iter().any(|n| n.id == id)
    }

    pub fn node_ids(&self) -> Vec<NodeId> {
        self.nodes.iter().map(|n| n.id).collect()
    }

    /// Node id → position in `nodes`.
    pub fn index(&self) -> HashMap<NodeId, usize> {
        self.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect()
    }

    /// Nodes without incoming edges, in node order.
    pub fn roots(&self) -> Vec<NodeId> {
        let targets: BTreeSet<NodeId> = self.edges.iter().map(|e| e.dst).collect();
        self.nodes
            .iter()
            .map(|n| n.id)
            .filter(|id| !targets.contains(id))
            .collect()
    }

    /// Undirected adjacency: node id → sorted distinct neighbours.
    pub fn undirected_neighbors(&self) -> HashMap<NodeId, Vec<NodeId>> {
        let mut adj: HashMap<NodeId, BTreeSet<NodeId>> =
            self.nodes.iter().map(|n| (n.id, BTreeSet::new())).collect();
        for e in &self.edges {
            adj.entry(e.src).or_default().insert(e.dst);
            adj.entry(e.dst).or_default().insert(e.src);
        }
        adj.into_iter()
            .map(|(k, v)| (k, v.into_iter().collect()))
            .collect()
    }

    /// Checks every graph invariant; `name` labels the error.
    pub fn validate(&self, name: &str) -> Result<()> {
        let n_tok = self.sentence_tokens.len();
        let mut seen = BTreeSet::new();
        for node in &self.nodes {
            if !seen.insert(node.id) {
                return Err(Error::graph(name, format!("duplicate node id {}", node.id)));
            }
            if let Some(s) = node.span {
                if s.end <= s.start || s.end > n_tok {
                    return Err(Error::graph(
                        name,
                        format!("node {} span {s} outside {n_tok} tokens", node.id),
                    ));
                }
            }
        }
        for e in &self.edges {
            for end in [e.src, e.dst] {
                if !seen.contains(&end) {
                    return Err(Error::graph(
                        name,
                        format!("edge {}->{} ({}) references missing node {end}", e.src, e.dst, e.rel),
                    ));
                }
            }
            if e.src == e.dst {
                return Err(Error::graph(name, format!("self-loop on node {}", e.src)));
            }
        }
        if let Some(cycle_node) = self.find_cycle() {
            return Err(Error::graph(name, format!("cycle through node {cycle_node}")));
        }
        if !self.nodes.is_empty() && self.roots().is_empty() {
            return Err(Error::graph(name, "no root node"));
        }
        Ok(())
    }

    /// Returns a node on a directed cycle, if any (Kahn's algorithm).
    pub fn find_cycle(&self) -> Option<NodeId> {
        let index = self.index();
        let mut indeg = vec![0usize; self.nodes.len()];
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            let (Some(&s), Some(&d)) = (index.get(&e.src), index.get(&e.dst)) else {
                continue;
            };
            indeg[d] += 1;
            out[s].push(d);
        }
        let mut stack: Vec<usize> = (0..self.nodes.len()).filter(|&i| indeg[i] == 0).collect();
        let mut removed = 0;
        while let Some(i) = stack.pop() {
            removed += 1;
            for &d in &out[i] {
                indeg[d] -= 1;
                if indeg[d] == 0 {
                    stack.push(d);
                }
            }
        }
        if removed == self.nodes.len() {
            None
        } else {
            indeg
                .iter()
                .position(|&d| d > 0)
                .map(|i| self.nodes[i].id)
        }
    }

    /// Whether `to` is reachable from `from` along directed edges.
    pub fn reachable(&self, from: NodeId, to: NodeId) -> bool {
        let mut stack = vec![from];
        let mut seen = BTreeSet::new();
        while let Some(v) = stack.pop() {
            if v == to {
                return true;
            }
            if !seen.insert(v) {
                continue;
            }
            stack.extend(self.edges.iter().filter(|e| e.src == v).map(|e| e.dst));
        }
        false
    }

    /// Tokens covered by a node's span, joined by spaces; the concept otherwise.
    pub fn surface(&self, id: NodeId) -> String {
        match self.node(id) {
            Some(AmrNode {
                span: Some(s), ..
            }) => self.sentence_tokens[s.start..s.end].join(" "),
            Some(n) => n.concept.clone(),
            None => String::new(),
        }
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_is_valid() {
        fixtures::attack_report().validate("fixture").unwrap();
    }

    #[test]
    fn detects_cycle_and_dangling_edge() {
        let mut g = AmrGraph::new(
            vec!["a".into(), "b".into()],
            vec![AmrNode::new(0, "a", None), AmrNode::new(1, "b", None)],
            vec![AmrEdge::new(0, 1, "ARG0"), AmrEdge::new(1, 0, "ARG1")],
        );
        assert!(g.validate("g").is_err());
        g.edges = vec![AmrEdge::new(0, 5, "ARG0")];
        let err = g.validate("g").unwrap_err().to_string();
        assert!(err.contains("missing node 5"), "{err}");
    }

    #[test]
    fn span_out_of_range_rejected() {
        let g = AmrGraph::new(
            vec!["a".into()],
            vec![AmrNode::new(0, "a", Some(Span::new(0, 2)))],
            vec![],
        );
        assert!(g.validate("g").is_err());
    }
}
