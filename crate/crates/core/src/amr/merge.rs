use std::collections::{BTreeMap, BTreeSet, HashSet};

use super::{AmrEdge, AmrGraph, NodeId, Span};

/// Whether an edge links the pieces of a named entity (`name`, `op1`, ...).
pub(crate) fn is_entity_link(rel: &str) -> bool {
    rel == "name"
        || rel
            .strip_prefix("op")
            .is_some_and(|d| !d.is_empty() && d.chars().all(|c| c.is_ascii_digit()))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MergeReport {
    /// Merged nodes produced (one per collapsed component).
    pub merged_nodes: usize,
    /// Nodes absorbed into a merged node.
    pub absorbed: usize,
    pub warnings: Vec<String>,
}

pub fn merge_entity_nodes(g: &AmrGraph) -> AmrGraph {
    merge_entity_nodes_with_report(g).0
}

/// Collapses every component connected by entity-link edges into its head
/// node (the member no entity link points into). The merged span covers all
/// member spans; absorbed ids are listed in `merged_from`.
pub fn merge_entity_nodes_with_report(g: &AmrGraph) -> (AmrGraph, MergeReport) {
    let mut report = MergeReport::default();
    let index = g.index();

    // Union-find over node positions, joined by entity links.
    let mut parent: Vec<usize> = (0..g.nodes.len()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut linked_into: HashSet<NodeId> = HashSet::new();
    for e in g.edges.iter().filter(|e| is_entity_link(&e.rel)) {
        let (a, b) = (index[&e.src], index[&e.dst]);
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
        linked_into.insert(e.dst);
    }

    let mut components: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..g.nodes.len() {
        let r = find(&mut parent, i);
        components.entry(r).or_default().push(i);
    }

    // node id -> id of its representative (head)
    let mut rep: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    let mut heads: BTreeMap<NodeId, (Option<Span>, Vec<NodeId>)> = BTreeMap::new();
    for members in components.values() {
        let ids: Vec<NodeId> = members.iter().map(|&i| g.nodes[i].id).collect();
        if ids.len() == 1 {
            rep.insert(ids[0], ids[0]);
            continue;
        }
        let head = members
            .iter()
            .map(|&i| g.nodes[i].id)
            .find(|id| !linked_into.contains(id))
            .unwrap_or(ids[0]);
        let span = members
            .iter()
            .filter_map(|&i| g.nodes[i].span)
            .reduce(|a, b| a.cover(&b));
        let mut absorbed: Vec<NodeId> = ids.iter().copied().filter(|&id| id != head).collect();
        for &id in &ids {
            rep.insert(id, head);
            if let Some(node) = g.node(id) {
                absorbed.extend(node.merged_from.iter().copied());
            }
        }
        absorbed.sort_unstable();
        absorbed.dedup();
        report.merged_nodes += 1;
        report.absorbed += ids.len() - 1;
        heads.insert(head, (span, absorbed));
    }

    let nodes = g
        .nodes
        .iter()
        .filter(|n| rep[&n.id] == n.id)
        .map(|n| {
            let mut n = n.clone();
            if let Some((span, absorbed)) = heads.get(&n.id) {
                n.span = *span;
                n.merged_from = absorbed.clone();
            }
            n
        })
        .collect();

    let mut out = AmrGraph::new(g.sentence_tokens.clone(), nodes, Vec::new());
    let mut seen: BTreeSet<(NodeId, NodeId, String)> = BTreeSet::new();
    for e in &g.edges {
        let (src, dst) = (rep[&e.src], rep[&e.dst]);
        if src == dst {
            if !is_entity_link(&e.rel) {
                report.warnings.push(format!(
                    "dropped edge {}->{} ({}): self-loop after merging",
                    e.src, e.dst, e.rel
                ));
            }
            continue;
        }
        if !seen.insert((src, dst, e.rel.clone())) {
            continue;
        }
        if out.reachable(dst, src) {
            report.warnings.push(format!(
                "dropped edge {}->{} ({}): cycle after merging",
                e.src, e.dst, e.rel
            ));
            continue;
        }
        out.edges.push(AmrEdge::new(src, dst, e.rel.clone()));
    }
    (out, report)
}
