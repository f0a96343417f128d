//! Trigger–argument pair discrimination.
//!
//! Each sentence is encoded once with every usable node span marked. The
//! positive pair of a core edge is scored against negatives that swap out
//! the trigger or the argument, and the loss is the cross-entropy of
//! picking the positive.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::amr::{positive_pairs, sample_negatives_among, AmrGraph, NodeId, Span};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::optim::{stream_rng, sum_gradients, Adam, AdamParams, LossTrace};
use crate::par;
use crate::persistence::{take_matrix, CheckpointError, NamedTensor};
use crate::tensor::{dot, log_sum_exp, Matrix};
use crate::text_encoder::{insert_markers, EncoderConfig, TextEncoder, Vocabulary, MAX_MARKERS};

/// Bilinear similarity `x_tᵀ W x_a`.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearScorer {
    pub w: Matrix,
}

impl BilinearScorer {
    /// `I/d` plus N(0, (0.01/d)²) noise, so unit-variance inputs start with
    /// scores of order one.
    pub fn init<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let scale = 1.0 / dim.max(1) as f64;
        let mut w = Matrix::randn(dim, dim, 0.01 * scale, rng);
        for i in 0..dim {
            w.data[i * dim + i] += scale;
        }
        w.quantize_f32();
        BilinearScorer { w }
    }

    pub fn dim(&self) -> usize {
        self.w.rows
    }

    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        vec![NamedTensor::from_matrix("scorer.w", &self.w)]
    }

    pub fn from_tensors(tensors: &[NamedTensor], dim: usize) -> Result<Self, CheckpointError> {
        Ok(BilinearScorer {
            w: take_matrix(tensors, "scorer.w", (dim, dim))?,
        })
    }
}

pub fn pair_score(x_t: &[f64], x_a: &[f64], scorer: &BilinearScorer) -> Result<f64> {
    let d = scorer.dim();
    if x_t.len() != d || x_a.len() != d || scorer.w.cols != d {
        return Err(Error::Dimension(format!(
            "pair_score: x_t {} / x_a {} against W {}x{}",
            x_t.len(),
            x_a.len(),
            scorer.w.rows,
            scorer.w.cols
        )));
    }
    let wa: Vec<f64> = (0..d).map(|i| dot(scorer.w.row(i), x_a)).collect();
    Ok(dot(x_t, &wa))
}

/// `−s⁺ + log(exp(s⁺) + Σ exp(s_neg))`, max-shifted.
pub fn pair_loss_from_scores(positive: f64, negatives: &[f64]) -> f64 {
    let mut all = Vec::with_capacity(negatives.len() + 1);
    all.push(positive);
    all.extend_from_slice(negatives);
    // Clamp tiny negative results of rounding; the positive is in the sum.
    (log_sum_exp(&all) - positive).max(0.0)
}

pub fn pair_loss(
    positive: (&[f64], &[f64]),
    neg_triggers: &[Vec<f64>],
    neg_args: &[Vec<f64>],
    scorer: &BilinearScorer,
) -> Result<f64> {
    let (x_t, x_a) = positive;
    let s_pos = pair_score(x_t, x_a, scorer)?;
    let mut negs = Vec::with_capacity(neg_triggers.len() + neg_args.len());
    for t in neg_triggers {
        negs.push(pair_score(t, x_a, scorer)?);
    }
    for a in neg_args {
        negs.push(pair_score(x_t, a, scorer)?);
    }
    Ok(pair_loss_from_scores(s_pos, &negs))
}

/// Nodes to mark in one encoder pass: at most [`MAX_MARKERS`] spanned nodes
/// with pairwise non-overlapping spans. Nodes in `priority` are taken first
/// (in the given order), then the rest by id.
pub fn select_marked_nodes(g: &AmrGraph, priority: &[NodeId]) -> Vec<NodeId> {
    let mut order: Vec<NodeId> = Vec::new();
    let mut seen = BTreeSet::new();
    let mut rest = g.node_ids();
    rest.sort_unstable();
    for &v in priority.iter().chain(rest.iter()) {
        if seen.insert(v) {
            order.push(v);
        }
    }
    let mut chosen: Vec<(NodeId, Span)> = Vec::new();
    for v in order {
        if chosen.len() == MAX_MARKERS {
            break;
        }
        let Some(span) = g.node(v).and_then(|n| n.span) else {
            continue;
        };
        if chosen.iter().all(|(_, s)| !s.overlaps(&span)) {
            chosen.push((v, span));
        }
    }
    let mut ids: Vec<NodeId> = chosen.into_iter().map(|(v, _)| v).collect();
    ids.sort_unstable();
    ids
}

/// A sentence ready for scoring: token ids with markers and the output row
/// of every node that kept its marker.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkedGraph {
    pub ids: Vec<usize>,
    pub node_rows: BTreeMap<NodeId, usize>,
    /// Positive pairs whose endpoints both have rows.
    pub pairs: Vec<(NodeId, NodeId)>,
}

pub fn mark_graph(g: &AmrGraph, encoder: &TextEncoder) -> Result<MarkedGraph> {
    let all_pairs = positive_pairs(g).positives;
    let mut priority = Vec::new();
    for &(t, a) in &all_pairs {
        priority.push(t);
        priority.push(a);
    }
    let nodes = select_marked_nodes(g, &priority);
    let spans: Vec<Span> = nodes
        .iter()
        .map(|&v| g.node(v).and_then(|n| n.span).expect("selected nodes carry spans"))
        .collect();
    let marked = insert_markers(&g.sentence_tokens, &spans)?;
    let prep = encoder.prepare(&marked);
    let node_rows: BTreeMap<NodeId, usize> = nodes
        .iter()
        .zip(&prep.markers)
        .filter_map(|(&v, m)| m.map(|(open, _)| (v, open)))
        .collect();
    let pairs = all_pairs
        .into_iter()
        .filter(|(t, a)| node_rows.contains_key(t) && node_rows.contains_key(a))
        .collect();
    Ok(MarkedGraph {
        ids: prep.ids,
        node_rows,
        pairs,
    })
}

/// A positive pair with its sampled negatives, ready for [`batch_loss`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair {
    pub pair: (NodeId, NodeId),
    /// Trigger-replaced pairs first, then argument-replaced.
    pub negatives: Vec<(NodeId, NodeId)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceItem {
    pub marked: MarkedGraph,
    pub pairs: Vec<ScoredPair>,
}

/// Samples negatives for every usable positive pair of `g`. Negatives are
/// drawn among nodes that kept a marker.
pub fn sentence_item<R: Rng + ?Sized>(
    g: &AmrGraph,
    marked: &MarkedGraph,
    m_t: usize,
    m_a: usize,
    rng: &mut R,
) -> SentenceItem {
    let pairs = marked
        .pairs
        .iter()
        .map(|&pair| {
            let negs = sample_negatives_among(
                g,
                pair,
                m_t,
                m_a,
                |v| marked.node_rows.contains_key(&v),
                rng,
            );
            ScoredPair {
                pair,
                negatives: negs.into_iter().map(|n| n.pair).collect(),
            }
        })
        .collect();
    SentenceItem {
        marked: marked.clone(),
        pairs,
    }
}

/// Records the summed pair losses of one sentence on `tape`. Returns None
/// when the sentence has no pairs.
fn sentence_loss_on_tape(
    tape: &mut Tape,
    encoder: &TextEncoder,
    enc_vars: &[Var],
    w: Var,
    item: &SentenceItem,
) -> Option<Var> {
    if item.pairs.is_empty() {
        return None;
    }
    let out = encoder.forward(tape, enc_vars, &item.marked.ids);
    let nodes: Vec<NodeId> = item.marked.node_rows.keys().copied().collect();
    let slot: BTreeMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let rows: Vec<usize> = nodes.iter().map(|v| item.marked.node_rows[v]).collect();
    let x = tape.gather_rows(out, &rows);
    let xw = tape.matmul(x, w);
    let scores = tape.matmul_t(xw, x);
    let mut terms = Vec::with_capacity(item.pairs.len());
    for p in &item.pairs {
        let cell = |(t, a): (NodeId, NodeId)| (slot[&t], slot[&a]);
        let mut cells = vec![cell(p.pair)];
        cells.extend(p.negatives.iter().map(|&n| cell(n)));
        let all = tape.select(scores, &cells);
        let lse = tape.log_sum_exp(all);
        let pos = tape.select(scores, &cells[..1]);
        terms.push(tape.sub(lse, pos));
    }
    Some(tape.add_all(&terms))
}

/// Summed loss of one sentence and gradients for the encoder tensors
/// followed by `W`.
pub fn sentence_loss_and_grads(
    encoder: &TextEncoder,
    scorer: &BilinearScorer,
    item: &SentenceItem,
) -> (f64, Vec<Matrix>) {
    let mut tape = Tape::new();
    let mut vars = encoder.params.bind(&mut tape, true);
    vars.push(tape.param(scorer.w.clone()));
    let shapes: Vec<(usize, usize)> = encoder
        .params
        .shapes()
        .into_iter()
        .chain([scorer.w.shape()])
        .collect();
    let w = *vars.last().expect("scorer var");
    match sentence_loss_on_tape(&mut tape, encoder, &vars[..vars.len() - 1], w, item) {
        None => (0.0, shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect()),
        Some(loss) => {
            let mut grads = tape.backward(loss);
            let g = vars
                .iter()
                .zip(&shapes)
                .map(|(&v, &(r, c))| grads.take_or_zeros(v, r, c))
                .collect();
            (tape.scalar(loss), g)
        }
    }
}

/// Loss of one sentence without building gradients.
pub fn sentence_loss(encoder: &TextEncoder, scorer: &BilinearScorer, item: &SentenceItem) -> f64 {
    let mut tape = Tape::new();
    let vars = encoder.params.bind(&mut tape, false);
    let w = tape.constant(scorer.w.clone());
    sentence_loss_on_tape(&mut tape, encoder, &vars, w, item)
        .map(|l| tape.scalar(l))
        .unwrap_or(0.0)
}

/// Sum over sentences and their positive pairs of the pair loss.
pub fn batch_loss(encoder: &TextEncoder, scorer: &BilinearScorer, batch: &[SentenceItem]) -> f64 {
    par::map(batch, |item| sentence_loss(encoder, scorer, item))
        .into_iter()
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SemanticTrainConfig {
    /// Sentences per step.
    pub batch_size: usize,
    pub lr: f64,
    pub adam: AdamParams,
    pub m_t: usize,
    pub m_a: usize,
    pub max_seq_len: usize,
    pub steps: usize,
    /// Validation loss is computed every this many steps (and at the end).
    pub eval_every: usize,
    /// Upper bound on held-out sentences; the split is 10% of the corpus
    /// capped at this value, at least one.
    pub validation_size: usize,
    pub seed: u64,
    pub encoder: EncoderConfig,
}

impl Default for SemanticTrainConfig {
    fn default() -> Self {
        SemanticTrainConfig {
            batch_size: 40,
            lr: 1e-5,
            adam: AdamParams::default(),
            m_t: 9,
            m_a: 30,
            max_seq_len: 128,
            steps: 1000,
            eval_every: 50,
            validation_size: 1000,
            seed: 0,
            encoder: EncoderConfig::default(),
        }
    }
}

impl SemanticTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("lr must be non-negative, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidArgument("eval_every must be positive".into()));
        }
        self.encoder_config().validate()
    }

    /// Encoder architecture with `max_seq_len` applied.
    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            max_len: self.max_seq_len,
            ..self.encoder
        }
    }
}

pub struct SemanticModel {
    pub encoder: TextEncoder,
    pub scorer: BilinearScorer,
    pub trace: LossTrace,
}

/// Vocabulary over every sentence token of `corpus`.
pub fn corpus_vocabulary(corpus: &[AmrGraph]) -> Vocabulary {
    Vocabulary::build(
        corpus
            .iter()
            .flat_map(|g| g.sentence_tokens.iter().map(String::as_str)),
    )
}

/// Builds a fresh encoder and scorer from `config` and trains them.
pub fn train_semantic(corpus: &[AmrGraph], config: &SemanticTrainConfig) -> Result<SemanticModel> {
    config.validate()?;
    let mut rng = stream_rng(config.seed, 0, 0);
    let encoder = TextEncoder::new(config.encoder_config(), corpus_vocabulary(corpus), &mut rng)?;
    let scorer = BilinearScorer::init(encoder.dim(), &mut rng);
    train_semantic_from(corpus, encoder, scorer, config)
}

const TRAIN_STREAM: u64 = 1;
const VAL_STREAM: u64 = 2;
const ORDER_STREAM: u64 = 3;

/// Continues training the given encoder and scorer. Returns the parameters
/// with the lowest validation loss (the initial ones included).
///
/// Trace losses are averaged per positive pair so that batches of
/// different sizes are comparable; gradients follow the summed loss.
pub fn train_semantic_from(
    corpus: &[AmrGraph],
    mut encoder: TextEncoder,
    mut scorer: BilinearScorer,
    config: &SemanticTrainConfig,
) -> Result<SemanticModel> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if scorer.dim() != encoder.dim() {
        return Err(Error::Dimension(format!(
            "scorer {} vs encoder {}",
            scorer.dim(),
            encoder.dim()
        )));
    }
    let marked: Vec<MarkedGraph> = par::map(corpus, |g| mark_graph(g, &encoder))
        .into_iter()
        .collect::<Result<_>>()?;
    let usable: Vec<usize> = (0..corpus.len()).filter(|&i| !marked[i].pairs.is_empty()).collect();
    if usable.is_empty() {
        return Err(Error::NoPositivePairs);
    }

    let mut order = usable.clone();
    order.shuffle(&mut stream_rng(config.seed, ORDER_STREAM, 0));
    let (val_idx, train_idx) = if order.len() < 2 {
        (order.clone(), order.clone())
    } else {
        let n_val = (order.len() / 10).clamp(1, config.validation_size.max(1));
        let (v, t) = order.split_at(n_val);
        (v.to_vec(), t.to_vec())
    };
    let val_items: Vec<SentenceItem> = val_idx
        .iter()
        .map(|&i| {
            let mut rng = stream_rng(config.seed, VAL_STREAM, i as u64);
            sentence_item(&corpus[i], &marked[i], config.m_t, config.m_a, &mut rng)
        })
        .collect();
    let val_pairs: usize = val_items.iter().map(|s| s.pairs.len()).sum();
    let val_loss = |enc: &TextEncoder, sc: &BilinearScorer| {
        batch_loss(enc, sc, &val_items) / val_pairs.max(1) as f64
    };

    let mut shapes = encoder.params.shapes();
    shapes.push(scorer.w.shape());
    let mut adam = Adam::new(config.lr, config.adam, &shapes);
    let mut trace = LossTrace::default();
    let mut best = (val_loss(&encoder, &scorer), encoder.params.clone(), scorer.clone());
    trace.val.push((0, best.0));

    let mut batch_rng = stream_rng(config.seed, ORDER_STREAM, 1);
    let mut epoch: Vec<usize> = Vec::new();
    for step in 1..=config.steps {
        let mut picked = Vec::with_capacity(config.batch_size);
        while picked.len() < config.batch_size.min(train_idx.len()) {
            if epoch.is_empty() {
                epoch = train_idx.clone();
                epoch.shuffle(&mut batch_rng);
            }
            picked.push(epoch.pop().expect("refilled"));
        }
        let results = par::map(&picked, |&i| {
            let mut rng = stream_rng(config.seed, TRAIN_STREAM, ((step as u64) << 32) | i as u64);
            let item = sentence_item(&corpus[i], &marked[i], config.m_t, config.m_a, &mut rng);
            let (loss, grads) = sentence_loss_and_grads(&encoder, &scorer, &item);
            (loss, item.pairs.len(), grads)
        });
        let mut total = 0.0;
        let mut n_pairs = 0;
        let mut parts = Vec::with_capacity(results.len());
        for (l, n, g) in results {
            total += l;
            n_pairs += n;
            parts.push(g);
        }
        let grads = sum_gradients(parts).expect("non-empty batch");
        if !total.is_finite() {
            return Err(Error::NonFinite(format!("semantic loss at step {step}")));
        }
        trace.train.push(total / n_pairs.max(1) as f64);
        {
            let mut params = encoder.params.tensors_mut();
            params.push(&mut scorer.w);
            adam.step(&mut params, &grads);
        }
        if step % config.eval_every == 0 || step == config.steps {
            let v = val_loss(&encoder, &scorer);
            trace.val.push((step, v));
            if v < best.0 {
                best = (v, encoder.params.clone(), scorer.clone());
            }
        }
    }
    encoder.params = best.1;
    Ok(SemanticModel {
        encoder,
        scorer: best.2,
        trace,
    })
}
