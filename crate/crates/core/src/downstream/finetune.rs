use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{dynamic_multi_pooling_on_tape, ClassifierHead};
use crate::amr::{strip_sense, AmrEdge, AmrGraph, AmrNode, NodeId, Span};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph_encoder::{one_hop_subgraph, GraphEncoder, GraphInput};
use crate::optim::{stream_rng, sum_gradients, Adam, AdamParams};
use crate::par;
use crate::tensor::Matrix;
use crate::text_encoder::{insert_markers, TextEncoder, MAX_MARKERS};

/// One labelled trigger (or trigger + argument) occurrence. An AMR graph
/// of the sentence may be attached; without it the structure feature is
/// computed on a single-node graph for the trigger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisedInstance {
    pub tokens: Vec<String>,
    pub trigger: Span,
    #[serde(default)]
    pub argument: Option<Span>,
    pub label: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nodes: Vec<AmrNode>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edges: Vec<AmrEdge>,
}

impl SupervisedInstance {
    fn validate(&self, line: usize) -> Result<()> {
        let n = self.tokens.len();
        for s in std::iter::once(&self.trigger).chain(&self.argument) {
            if s.is_empty() || s.end > n {
                return Err(Error::Json {
                    line,
                    message: format!("span {s} out of range for {n} tokens"),
                });
            }
        }
        if let Some(a) = &self.argument {
            if a.overlaps(&self.trigger) {
                return Err(Error::Json {
                    line,
                    message: format!("argument {a} overlaps trigger {}", self.trigger),
                });
            }
        }
        if !self.nodes.is_empty() {
            self.graph().validate(&format!("line {line}"))?;
        }
        Ok(())
    }

    fn graph(&self) -> AmrGraph {
        AmrGraph::new(self.tokens.clone(), self.nodes.clone(), self.edges.clone())
    }

    /// Node standing for the trigger: exact span match first, then the
    /// node whose span covers the trigger start.
    fn trigger_node(&self) -> Option<NodeId> {
        let spanned = || self.nodes.iter().filter_map(|n| n.span.map(|s| (n.id, s)));
        spanned()
            .find(|(_, s)| *s == self.trigger)
            .or_else(|| spanned().find(|(_, s)| s.start <= self.trigger.start && self.trigger.start < s.end))
            .map(|(id, _)| id)
    }
}

pub fn read_instances_jsonl(path: impl AsRef<Path>) -> Result<Vec<SupervisedInstance>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let inst: SupervisedInstance = serde_json::from_str(line).map_err(|e| Error::Json {
            line: i + 1,
            message: e.to_string(),
        })?;
        inst.validate(i + 1)?;
        out.push(inst);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    /// Pooled semantic vector and structure embedding.
    #[default]
    Both,
    Semantic,
    Structure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub adam: AdamParams,
    pub head_hidden: usize,
    pub features: FeatureSet,
    /// Update the text and graph encoders along with the head.
    pub update_encoders: bool,
    /// Label excluded from micro-F1 counts (e.g. a "no event" class).
    pub negative_label: Option<String>,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            batch_size: 40,
            epochs: 30,
            lr: 1e-5,
            adam: AdamParams::default(),
            head_hidden: 128,
            features: FeatureSet::Both,
            update_encoders: true,
            negative_label: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_f1: f64,
}

#[derive(Debug, Clone)]
pub struct FinetunedModel {
    pub text: TextEncoder,
    pub graph: GraphEncoder,
    pub head: ClassifierHead,
    pub labels: Vec<String>,
    pub features: FeatureSet,
    pub epochs: Vec<EpochStats>,
    /// 1-based epoch whose parameters were kept; 0 means the initial ones.
    pub best_epoch: usize,
}

/// Micro-averaged F1 over all labels except `negative`. Without a negative
/// label this equals accuracy.
pub fn micro_f1(pred: &[String], gold: &[String], negative: Option<&str>) -> f64 {
    let positive = |l: &String| Some(l.as_str()) != negative;
    let tp = pred.iter().zip(gold).filter(|(p, g)| p == g && positive(g)).count() as f64;
    let np = pred.iter().filter(|p| positive(p)).count() as f64;
    let ng = gold.iter().filter(|g| positive(g)).count() as f64;
    if tp == 0.0 {
        return 0.0;
    }
    let (p, r) = (tp / np, tp / ng);
    2.0 * p * r / (p + r)
}

enum FeatureSource {
    Row(usize),
    Token(usize),
}

/// An instance mapped onto one encoder pass.
struct Prepared {
    ids: Vec<usize>,
    /// Output rows of the original tokens that survived truncation.
    token_rows: Vec<usize>,
    /// Pooling split positions within `token_rows`.
    splits: Vec<usize>,
    nodes: Vec<FeatureSource>,
    structure: GraphInput,
}

fn prepare(inst: &SupervisedInstance, text: &TextEncoder) -> Result<Prepared> {
    let vocab = &text.vocab;
    let graph = inst.graph();
    let center = inst.trigger_node();
    let sub = match center {
        Some(c) => Some(one_hop_subgraph(&graph, c)?),
        None => None,
    };

    let mut spans = vec![inst.trigger];
    spans.extend(inst.argument);
    let mut marked_nodes: Vec<(NodeId, usize)> = Vec::new();
    if let Some(sub) = &sub {
        let mut ids = sub.node_ids();
        ids.sort_unstable();
        for v in ids {
            if Some(v) == center {
                continue;
            }
            let Some(s) = sub.node(v).and_then(|n| n.span) else { continue };
            if spans.len() < MAX_MARKERS && spans.iter().all(|t| !t.overlaps(&s)) {
                marked_nodes.push((v, spans.len()));
                spans.push(s);
            }
        }
    }
    let marked = insert_markers(&inst.tokens, &spans)?;
    let prep = text.prepare(&marked);
    let open = |k: usize| prep.markers[k].map(|(o, _)| o);
    let trigger_row = open(0).ok_or(Error::SpanUnavailable(0))?;

    let mut token_rows = Vec::new();
    let mut kept_index = BTreeMap::new();
    for (tok, row) in prep.token_rows.iter().enumerate() {
        if let Some(r) = row {
            kept_index.insert(tok, token_rows.len());
            token_rows.push(*r);
        }
    }
    let mut splits = vec![*kept_index.get(&inst.trigger.start).ok_or(Error::SpanUnavailable(0))?];
    if let Some(a) = inst.argument {
        splits.push(*kept_index.get(&a.start).ok_or(Error::SpanUnavailable(1))?);
    }
    splits.sort_unstable();

    let token_id = |concept: &str| match vocab.get(concept) {
        Some(id) => id,
        None => vocab.id(strip_sense(concept)),
    };
    let (nodes, structure) = match &sub {
        None => (vec![FeatureSource::Row(trigger_row)], GraphInput::new(Matrix::zeros(1, 0), &[])),
        Some(sub) => {
            let mut ids = sub.node_ids();
            ids.sort_unstable();
            let row_of: BTreeMap<NodeId, usize> = ids.iter().enumerate().map(|(i, &v)| (v, i)).collect();
            let sources = ids
                .iter()
                .map(|&v| {
                    if Some(v) == center {
                        return FeatureSource::Row(trigger_row);
                    }
                    let marker = marked_nodes.iter().find(|(n, _)| *n == v).and_then(|&(_, k)| open(k));
                    match marker {
                        Some(r) => FeatureSource::Row(r),
                        None => FeatureSource::Token(token_id(&sub.node(v).expect("listed").concept)),
                    }
                })
                .collect();
            let edges: Vec<(usize, usize, &str)> = sub
                .edges
                .iter()
                .map(|e| (row_of[&e.src], row_of[&e.dst], e.rel.as_str()))
                .collect();
            (sources, GraphInput::new(Matrix::zeros(ids.len(), 0), &edges))
        }
    };
    Ok(Prepared {
        ids: prep.ids,
        token_rows,
        splits,
        nodes,
        structure,
    })
}

struct Bound {
    text: Vec<Var>,
    graph: Vec<Var>,
    head: Vec<Var>,
}

fn bind_all(tape: &mut Tape, model: &FinetunedModel, trainable_encoders: bool) -> Bound {
    Bound {
        text: model.text.params.bind(tape, trainable_encoders),
        graph: model.graph.params.bind(tape, trainable_encoders),
        head: model.head.bind(tape, true),
    }
}

fn logits_on_tape(tape: &mut Tape, model: &FinetunedModel, vars: &Bound, p: &Prepared) -> Result<Var> {
    let out = model.text.forward(tape, &vars.text, &p.ids);
    let mut parts = Vec::new();
    if model.features != FeatureSet::Structure {
        parts.push(dynamic_multi_pooling_on_tape(tape, out, &p.token_rows, &p.splits)?);
    }
    if model.features != FeatureSet::Semantic {
        let rows: Vec<Var> = p
            .nodes
            .iter()
            .map(|s| match *s {
                FeatureSource::Row(r) => tape.gather_rows(out, &[r]),
                FeatureSource::Token(id) => tape.gather_rows(vars.text[0], &[id]),
            })
            .collect();
        let feats = tape.concat_rows(&rows);
        parts.push(model.graph.forward::<rand_chacha::ChaCha8Rng>(tape, &vars.graph, feats, &p.structure, None));
    }
    let x = tape.concat_cols(&parts);
    Ok(ClassifierHead::logits_on_tape(tape, &vars.head, x))
}

fn embedding_dim(text: &TextEncoder, graph: &GraphEncoder, features: FeatureSet, n_splits: usize) -> usize {
    let sem = (n_splits + 1) * text.dim();
    match features {
        FeatureSet::Both => sem + graph.dim(),
        FeatureSet::Semantic => sem,
        FeatureSet::Structure => graph.dim(),
    }
}

impl FinetunedModel {
    fn all_tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = self.text.params.tensors_mut();
        v.extend(self.graph.params.tensors_mut());
        v.extend(self.head.tensors_mut());
        v
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        let mut v = self.text.params.shapes();
        v.extend(self.graph.params.shapes());
        v.extend(self.head.tensors().iter().map(|m| m.shape()));
        v
    }

    /// Class probabilities, in `labels` order.
    pub fn probabilities(&self, inst: &SupervisedInstance) -> Result<Vec<f64>> {
        let p = prepare(inst, &self.text)?;
        let mut tape = Tape::new();
        let vars = bind_all(&mut tape, self, false);
        let logits = logits_on_tape(&mut tape, self, &vars, &p)?;
        let probs = tape.softmax_rows(logits, None);
        Ok(tape.value(probs).data.clone())
    }

    pub fn predict(&self, inst: &SupervisedInstance) -> Result<String> {
        let p = self.probabilities(inst)?;
        let best = (0..p.len())
            .max_by(|&a, &b| p[a].total_cmp(&p[b]).then(b.cmp(&a)))
            .expect("at least two classes");
        Ok(self.labels[best].clone())
    }

    pub fn evaluate(&self, data: &[SupervisedInstance], negative: Option<&str>) -> Result<f64> {
        let preds: Vec<String> = par::map(data, |i| self.predict(i)).into_iter().collect::<Result<_>>()?;
        let gold: Vec<String> = data.iter().map(|i| i.label.clone()).collect();
        Ok(micro_f1(&preds, &gold, negative))
    }
}

/// Cross-entropy fine-tuning of the head (and, by default, both encoders).
/// The parameters with the best dev micro-F1 are kept, earliest on ties.
pub fn finetune(
    train: &[SupervisedInstance],
    dev: &[SupervisedInstance],
    text: TextEncoder,
    graph: GraphEncoder,
    config: &FinetuneConfig,
) -> Result<FinetunedModel> {
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if config.batch_size == 0 || !(config.lr >= 0.0) {
        return Err(Error::InvalidArgument("batch_size must be positive and lr non-negative".into()));
    }
    let labels: Vec<String> = {
        let mut l: Vec<String> = train.iter().map(|i| i.label.clone()).collect();
        l.sort();
        l.dedup();
        l
    };
    if labels.len() < 2 {
        return Err(Error::SingleClass);
    }
    let n_splits = 1 + usize::from(train[0].argument.is_some());
    if train.iter().chain(dev).any(|i| 1 + usize::from(i.argument.is_some()) != n_splits) {
        return Err(Error::InvalidArgument(
            "instances must all have an argument span or all lack one".into(),
        ));
    }
    if graph.input_dim() != text.dim() {
        return Err(Error::Dimension(format!(
            "graph encoder expects {}-d features, text encoder gives {}",
            graph.input_dim(),
            text.dim()
        )));
    }
    let label_index: BTreeMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let prepared: Vec<Prepared> = par::map(train, |i| prepare(i, &text)).into_iter().collect::<Result<_>>()?;
    let targets: Vec<usize> = train.iter().map(|i| label_index[i.label.as_str()]).collect();

    let mut rng = stream_rng(config.seed, 20, 0);
    let in_dim = embedding_dim(&text, &graph, config.features, n_splits);
    let head = ClassifierHead::init(in_dim, config.head_hidden, labels.len(), &mut rng);
    let mut model = FinetunedModel {
        text,
        graph,
        head,
        labels,
        features: config.features,
        epochs: Vec::new(),
        best_epoch: 0,
    };
    let negative = config.negative_label.as_deref();
    let dev_f1 = |m: &FinetunedModel| if dev.is_empty() { Ok(0.0) } else { m.evaluate(dev, negative) };
    let mut adam = Adam::new(config.lr, config.adam, &model.shapes());
    let mut best = (dev_f1(&model)?, model.clone_params());

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut stream_rng(config.seed, 21, epoch as u64));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results = par::map(batch, |&i| -> Result<(f64, Vec<Matrix>)> {
                let mut tape = Tape::new();
                let vars = bind_all(&mut tape, &model, config.update_encoders);
                let logits = logits_on_tape(&mut tape, &model, &vars, &prepared[i])?;
                let lse = tape.log_sum_exp(logits);
                let y = tape.select(logits, &[(0, targets[i])]);
                let loss = tape.sub(lse, y);
                let mut g = tape.backward(loss);
                let all: Vec<Var> = vars.text.iter().chain(&vars.graph).chain(&vars.head).copied().collect();
                let grads = all
                    .iter()
                    .zip(model.shapes())
                    .map(|(&v, (r, c))| g.take_or_zeros(v, r, c))
                    .collect();
                Ok((tape.scalar(loss), grads))
            });
            let mut parts = Vec::with_capacity(results.len());
            for r in results {
                let (l, g) = r?;
                epoch_loss += l;
                parts.push(g);
            }
            if !epoch_loss.is_finite() {
                return Err(Error::NonFinite(format!("fine-tuning loss in epoch {epoch}")));
            }
            let grads = sum_gradients(parts).expect("non-empty batch");
            adam.step(&mut model.all_tensors_mut(), &grads);
        }
        let f1 = dev_f1(&model)?;
        model.epochs.push(EpochStats {
            epoch,
            train_loss: epoch_loss / train.len() as f64,
            dev_f1: f1,
        });
        if f1 > best.0 {
            best = (f1, model.clone_params());
            model.best_epoch = epoch;
        }
    }
    model.restore_params(best.1);
    Ok(model)
}

impl FinetunedModel {
    fn clone_params(&self) -> Vec<Matrix> {
        let mut v: Vec<Matrix> = self.text.params.tensors().into_iter().cloned().collect();
        v.extend(self.graph.params.tensors().into_iter().cloned());
        v.extend(self.head.tensors().into_iter().cloned());
        v
    }

    fn restore_params(&mut self, saved: Vec<Matrix>) {
        for (slot, m) in self.all_tensors_mut().into_iter().zip(saved) {
            *slot = m;
        }
    }
}
