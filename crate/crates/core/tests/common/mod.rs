#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use cleve::amr::{AmrEdge, AmrGraph, AmrNode, NodeId};
use rand::seq::SliceRandom;
use rand::Rng;

pub const RELATIONS: [&str; 6] = ["ARG0", "ARG1", "ARG2", "mod", "time", "location"];

/// Random DAG with up to `max_nodes` nodes on scattered ids. Edges only
/// run forward in a hidden topological order.
pub fn random_dag<R: Rng>(max_nodes: usize, rng: &mut R) -> AmrGraph {
    let n = rng.gen_range(1..=max_nodes);
    let mut ids: Vec<NodeId> = (0..4 * max_nodes).collect();
    ids.shuffle(rng);
    ids.truncate(n);
    let p = rng.gen_range(0.05..0.4);
    let nodes = ids
        .iter()
        .map(|&id| AmrNode::new(id, format!("c{}", id % 7), None))
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p) {
                let rel = *RELATIONS.choose(rng).unwrap();
                edges.push(AmrEdge::new(ids[i], ids[j], rel));
            }
        }
    }
    AmrGraph::new(Vec::new(), nodes, edges)
}

/// Nodes reachable from `start` over undirected edges restricted to `within`.
pub fn undirected_component(g: &AmrGraph, start: NodeId, within: &BTreeSet<NodeId>) -> BTreeSet<NodeId> {
    let mut adj: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for e in &g.edges {
        if within.contains(&e.src) && within.contains(&e.dst) {
            adj.entry(e.src).or_default().push(e.dst);
            adj.entry(e.dst).or_default().push(e.src);
        }
    }
    let mut seen = BTreeSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        for &u in adj.get(&v).map(Vec::as_slice).unwrap_or(&[]) {
            if seen.insert(u) {
                queue.push_back(u);
            }
        }
    }
    seen
}

pub fn edge_keys(edges: &[AmrEdge]) -> Vec<(NodeId, NodeId, String)> {
    let mut keys: Vec<_> = edges.iter().map(|e| (e.src, e.dst, e.rel.clone())).collect();
    keys.sort();
    keys
}

pub const FD_STEP: f64 = 1e-5;

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_diff(x: &[f64], i: usize, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut xp = x.to_vec();
    xp[i] += FD_STEP;
    let up = f(&xp);
    xp[i] -= 2.0 * FD_STEP;
    let down = f(&xp);
    (up - down) / (2.0 * FD_STEP)
}

/// Norm floor below which [`rel_err`] compares absolutely; central
/// differences carry rounding noise around 1e-9.
pub const REL_FLOOR: f64 = 1e-4;

/// `‖a − b‖ / max(‖a‖, ‖b‖, REL_FLOOR)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(REL_FLOOR)
}

/// Indices of the `top` largest-magnitude entries plus `random` uniform ones.
pub fn probe_indices<R: Rng>(grad: &[f64], top: usize, random: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..grad.len()).collect();
    order.sort_by(|&a, &b| grad[b].abs().total_cmp(&grad[a].abs()));
    let mut picked: Vec<usize> = order.into_iter().take(top).collect();
    for _ in 0..random {
        if !grad.is_empty() {
            picked.push(rng.gen_range(0..grad.len()));
        }
    }
    picked.sort_unstable();
    picked.dedup();
    picked
}

pub mod oracle {
    use std::collections::{BTreeMap, BTreeSet};

    use cleve::clustering::{CandidateContext, ClusterAssignment};
    use num_rational::Ratio;
    use rand::Rng;

    fn cos(a: &[f64], b: &[f64]) -> f64 {
        let mut ab = 0.0;
        let mut aa = 0.0;
        let mut bb = 0.0;
        for i in 0..a.len() {
            ab += a[i] * b[i];
            aa += a[i] * a[i];
            bb += b[i] * b[i];
        }
        ab / (aa.sqrt() * bb.sqrt())
    }

    fn jaccard_term(x: &[(String, usize)], y: &[(String, usize)]) -> f64 {
        let x: BTreeSet<&(String, usize)> = x.iter().collect();
        let y: BTreeSet<&(String, usize)> = y.iter().collect();
        let both = x.iter().filter(|t| y.contains(*t)).count();
        let either = x.len() + y.len() - both;
        if either == 0 {
            0.0
        } else {
            (1.0 + both as f64 / either as f64).ln()
        }
    }

    fn tuples(c: &CandidateContext, other: &ClusterAssignment) -> Vec<(String, usize)> {
        c.links.iter().map(|(r, j)| (r.clone(), other.labels[*j])).collect()
    }

    fn pair_sum(n: usize, labels: &[usize], sim: impl Fn(usize, usize) -> f64) -> f64 {
        let mut total = 0.0;
        for u in 0..n {
            for v in 0..n {
                if u < v {
                    let s = sim(u, v);
                    total += if labels[u] == labels[v] { 1.0 - s } else { s };
                }
            }
        }
        total
    }

    /// Double loop over all pairs, similarities recomputed from scratch.
    pub fn objective(
        triggers: &[CandidateContext],
        arguments: &[CandidateContext],
        c_t: &ClusterAssignment,
        c_a: &ClusterAssignment,
        lambda: f64,
    ) -> f64 {
        let trig = |u: usize, v: usize| {
            let (a, b) = (&triggers[u], &triggers[v]);
            let shared: Vec<f64> = a
                .relation_vectors
                .iter()
                .filter_map(|(r, x)| b.relation_vectors.get(r).map(|y| cos(x, y)))
                .collect();
            let rel = if shared.is_empty() {
                0.0
            } else {
                shared.iter().sum::<f64>() / shared.len() as f64
            };
            lambda * cos(&a.semantic, &b.semantic) + jaccard_term(&tuples(a, c_a), &tuples(b, c_a)) + (1.0 - lambda) * rel
        };
        let arg = |u: usize, v: usize| {
            let (a, b) = (&arguments[u], &arguments[v]);
            cos(&a.semantic, &b.semantic) + jaccard_term(&tuples(a, c_t), &tuples(b, c_t))
        };
        pair_sum(triggers.len(), &c_t.labels, trig) + pair_sum(arguments.len(), &c_a.labels, arg)
    }

    fn gauss<R: Rng>(d: usize, rng: &mut R) -> Vec<f64> {
        (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// Random triggers and arguments with symmetric links.
    pub fn random_contexts<R: Rng>(
        n_t: usize,
        n_a: usize,
        rng: &mut R,
    ) -> (Vec<CandidateContext>, Vec<CandidateContext>) {
        const RELS: [&str; 3] = ["ARG0", "ARG1", "location"];
        let mut triggers: Vec<CandidateContext> = (0..n_t)
            .map(|i| CandidateContext {
                id: format!("t{i}"),
                semantic: gauss(4, rng),
                ..Default::default()
            })
            .collect();
        let mut arguments: Vec<CandidateContext> = (0..n_a)
            .map(|i| CandidateContext {
                id: format!("a{i}"),
                semantic: gauss(4, rng),
                ..Default::default()
            })
            .collect();
        for t in 0..n_t {
            for a in 0..n_a {
                if rng.gen_bool(0.25) {
                    let r = RELS[rng.gen_range(0..RELS.len())].to_string();
                    triggers[t].links.push((r.clone(), a));
                    arguments[a].links.push((r.clone(), t));
                    triggers[t].relation_vectors.entry(r).or_insert_with(|| gauss(3, rng));
                }
            }
            triggers[t].structure = Some(gauss(3, rng));
        }
        (triggers, arguments)
    }

    pub fn random_assignment<R: Rng>(n: usize, rng: &mut R) -> ClusterAssignment {
        let k = rng.gen_range(1..=n.max(1));
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        ClusterAssignment { k, labels }
    }

    pub struct ExactBCubed {
        pub precision: Ratio<i64>,
        pub recall: Ratio<i64>,
        pub f1: Ratio<i64>,
    }

    /// B-cubed in exact rationals, by counting per item.
    pub fn b_cubed(pred: &[usize], gold: &[usize]) -> ExactBCubed {
        let n = pred.len() as i64;
        let mut p = Ratio::from_integer(0);
        let mut r = Ratio::from_integer(0);
        for i in 0..pred.len() {
            let same_cluster = (0..pred.len()).filter(|&j| pred[j] == pred[i]).count() as i64;
            let same_class = (0..pred.len()).filter(|&j| gold[j] == gold[i]).count() as i64;
            let both = (0..pred.len()).filter(|&j| pred[j] == pred[i] && gold[j] == gold[i]).count() as i64;
            p += Ratio::new(both, same_cluster);
            r += Ratio::new(both, same_class);
        }
        p /= n;
        r /= n;
        let f1 = Ratio::from_integer(2) * p * r / (p + r);
        ExactBCubed { precision: p, recall: r, f1 }
    }

    /// The f64 nearest to `q`.
    pub fn to_f64(q: Ratio<i64>) -> f64 {
        *q.numer() as f64 / *q.denom() as f64
    }

    /// Maps keyed by item index for the library scorer.
    pub fn keyed(labels: &[usize]) -> BTreeMap<usize, usize> {
        labels.iter().copied().enumerate().collect()
    }

    /// Exact agreement with the rational value, up to the last-place
    /// rounding of a float running sum.
    pub fn matches(x: f64, q: Ratio<i64>) -> bool {
        let exact = to_f64(q);
        (x - exact).abs() <= 4.0 * f64::EPSILON * exact.abs().max(f64::MIN_POSITIVE)
    }
}
