use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::amr::{core_relation, identify_candidates, AmrGraph, NodeId};
use crate::clustering::{joint_cluster, CandidateContext, ClusterAssignment, ClusteringConfig, ClusteringOutput, JointClustering};
use crate::error::{Error, Result};
use crate::graph_encoder::{init_node_features, GraphEncoder, GraphInput};
use crate::par;
use crate::tensor::cosine;
use crate::text_encoder::TextEncoder;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LiberalConfig {
    pub clustering: ClusteringConfig,
    /// Cluster triggers on semantic vectors and constraints only.
    pub ablate_structure: bool,
    /// Exemplars listed per cluster in the schema summary.
    pub exemplars: usize,
}

impl Default for LiberalConfig {
    fn default() -> Self {
        LiberalConfig {
            clustering: ClusteringConfig::default(),
            ablate_structure: false,
            exemplars: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaCluster {
    pub id: usize,
    pub role: String,
    pub exemplars: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SchemaSummary {
    pub clusters: Vec<SchemaCluster>,
}

#[derive(Debug, Clone)]
pub struct LiberalResult {
    pub clustering: JointClustering,
    pub output: ClusteringOutput,
    pub triggers: Vec<CandidateContext>,
    pub arguments: Vec<CandidateContext>,
    pub schema: SchemaSummary,
}

/// Candidate id used in clustering output and gold files.
pub fn candidate_id(sentence: usize, node: NodeId) -> String {
    format!("{sentence}:{node}")
}

struct SentenceCandidates {
    triggers: Vec<(NodeId, CandidateContext)>,
    arguments: Vec<(NodeId, CandidateContext)>,
    /// (trigger, argument, relation) over core edges.
    links: Vec<(NodeId, NodeId, String)>,
    surfaces: BTreeMap<NodeId, String>,
}

fn sentence_candidates(
    index: usize,
    g: &AmrGraph,
    text: &TextEncoder,
    graph: &GraphEncoder,
    with_structure: bool,
) -> Result<SentenceCandidates> {
    let cands = identify_candidates(g);
    let mut out = SentenceCandidates {
        triggers: Vec::new(),
        arguments: Vec::new(),
        links: Vec::new(),
        surfaces: BTreeMap::new(),
    };
    if cands.triggers.is_empty() {
        return Ok(out);
    }
    let feats = init_node_features(g, text)?;
    let whole = if with_structure {
        Some(graph.encode_graph(&GraphInput::from_graph(g, &feats)?)?)
    } else {
        None
    };
    let mut hop_cache: BTreeMap<NodeId, Vec<f64>> = BTreeMap::new();
    let context = |v: NodeId| CandidateContext {
        id: candidate_id(index, v),
        semantic: feats[&v].clone(),
        ..Default::default()
    };
    for &t in &cands.triggers {
        let mut c = context(t);
        if with_structure {
            let mut per_rel: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
            for e in g.edges.iter().filter(|e| e.src == t && core_relation(&e.rel)) {
                if !hop_cache.contains_key(&e.dst) {
                    hop_cache.insert(e.dst, graph.one_hop_embedding(g, &feats, e.dst)?);
                }
                let v = &hop_cache[&e.dst];
                let slot = per_rel.entry(e.rel.clone()).or_insert_with(|| (vec![0.0; v.len()], 0));
                slot.0.iter_mut().zip(v).for_each(|(a, b)| *a += b);
                slot.1 += 1;
            }
            c.relation_vectors = per_rel
                .into_iter()
                .map(|(r, (sum, n))| (r, sum.into_iter().map(|x| x / n as f64).collect()))
                .collect();
            c.structure = whole.clone();
        }
        out.triggers.push((t, c));
    }
    for &a in &cands.arguments {
        out.arguments.push((a, context(a)));
    }
    for e in g.edges.iter().filter(|e| core_relation(&e.rel)) {
        out.links.push((e.src, e.dst, e.rel.clone()));
    }
    for &v in cands.triggers.iter().chain(&cands.arguments) {
        out.surfaces.insert(v, g.surface(v));
    }
    Ok(out)
}

/// Nearest members to each cluster centroid, by cosine.
fn exemplars(
    role: &str,
    contexts: &[CandidateContext],
    surfaces: &[String],
    assign: &ClusterAssignment,
    top: usize,
) -> Vec<SchemaCluster> {
    assign
        .clusters()
        .into_iter()
        .enumerate()
        .map(|(id, members)| {
            let d = contexts[members[0]].semantic.len();
            let mut centroid = vec![0.0; d];
            for &m in &members {
                centroid.iter_mut().zip(&contexts[m].semantic).for_each(|(c, x)| *c += x);
            }
            let mut scored: Vec<(f64, usize)> =
                members.iter().map(|&m| (cosine(&centroid, &contexts[m].semantic), m)).collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            SchemaCluster {
                id,
                role: role.to_string(),
                exemplars: scored.iter().take(top).map(|&(_, m)| surfaces[m].clone()).collect(),
            }
        })
        .collect()
}

/// Identifies trigger and argument candidates in every graph, builds their
/// semantic and structure contexts and clusters them jointly.
pub fn liberal_pipeline(
    corpus: &[AmrGraph],
    text: &TextEncoder,
    graph: &GraphEncoder,
    config: &LiberalConfig,
) -> Result<LiberalResult> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let with_structure = !config.ablate_structure;
    if with_structure && graph.input_dim() != text.dim() {
        return Err(Error::Dimension(format!(
            "graph encoder expects {}-d features, text encoder gives {}",
            graph.input_dim(),
            text.dim()
        )));
    }
    let indexed: Vec<(usize, &AmrGraph)> = corpus.iter().enumerate().collect();
    let per_sentence = par::map(&indexed, |&(i, g)| sentence_candidates(i, g, text, graph, with_structure))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let mut triggers = Vec::new();
    let mut arguments = Vec::new();
    let mut trigger_surfaces = Vec::new();
    let mut argument_surfaces = Vec::new();
    let mut trigger_index = BTreeMap::new();
    let mut argument_index = BTreeMap::new();
    for (s, sc) in per_sentence.iter().enumerate() {
        for (v, c) in &sc.triggers {
            trigger_index.insert((s, *v), triggers.len());
            triggers.push(c.clone());
            trigger_surfaces.push(sc.surfaces[v].clone());
        }
        for (v, c) in &sc.arguments {
            argument_index.insert((s, *v), arguments.len());
            arguments.push(c.clone());
            argument_surfaces.push(sc.surfaces[v].clone());
        }
    }
    for (s, sc) in per_sentence.iter().enumerate() {
        for (t, a, r) in &sc.links {
            let (ti, ai) = (trigger_index[&(s, *t)], argument_index[&(s, *a)]);
            triggers[ti].links.push((r.clone(), ai));
            arguments[ai].links.push((r.clone(), ti));
        }
    }
    if triggers.is_empty() || arguments.is_empty() {
        return Err(Error::NoCandidates);
    }

    let mut cluster_cfg = config.clustering;
    if config.ablate_structure {
        cluster_cfg.lambda = 1.0;
    }
    let clustering = joint_cluster(&triggers, &arguments, &cluster_cfg)?;
    let top = config.exemplars;
    let mut clusters = exemplars("trigger", &triggers, &trigger_surfaces, &clustering.triggers, top);
    clusters.extend(exemplars("argument", &arguments, &argument_surfaces, &clustering.arguments, top));
    let output = clustering.output(&triggers, &arguments);
    Ok(LiberalResult {
        clustering,
        output,
        triggers,
        arguments,
        schema: SchemaSummary { clusters },
    })
}
