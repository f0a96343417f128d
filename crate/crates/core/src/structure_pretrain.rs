//! Subgraph discrimination with a temperature-scaled InfoNCE objective.
//!
//! A batch of `m` graphs yields `2m` subgraphs; slots `2i` and `2i + 1`
//! (0-based) come from the same graph. Each even slot is an anchor whose
//! positive is its sibling, and every other subgraph in the batch is a
//! negative.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::amr::AmrGraph;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph_encoder::{init_node_features, GraphEncoder, GraphEncoderConfig, GraphInput, NodeFeatures};
use crate::optim::{stream_rng, sum_gradients, Adam, AdamParams, LossTrace};
use crate::par;
use crate::subgraph_sampler::{sample_positive_pair, SubgraphSample, DEFAULT_MAX_STEPS};
use crate::tensor::{dot, log_sum_exp, Matrix};
use crate::text_encoder::TextEncoder;

fn check_batch(count: usize, tau: f64) -> Result<()> {
    if count < 2 || count % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "InfoNCE needs an even number (≥ 2) of embeddings, got {count}"
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

/// `Σ_i −log softmax_{j ≠ 2i}(a_{2i}·a_j / τ)[2i + 1]`.
pub fn infonce_loss(embeddings: &[Vec<f64>], tau: f64) -> Result<f64> {
    check_batch(embeddings.len(), tau)?;
    let mut total = 0.0;
    for i in (0..embeddings.len()).step_by(2) {
        let anchor = &embeddings[i];
        let logits: Vec<f64> = embeddings
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, e)| dot(anchor, e) / tau)
            .collect();
        let pos = dot(anchor, &embeddings[i + 1]) / tau;
        total += log_sum_exp(&logits) - pos;
    }
    Ok(total)
}

/// [`infonce_loss`] recorded on `tape` over the rows of `x` (`2m × d`).
pub fn infonce_on_tape(tape: &mut Tape, x: Var, tau: f64) -> Result<Var> {
    let n = tape.value(x).rows;
    check_batch(n, tau)?;
    let s = tape.matmul_t(x, x);
    let s = tape.scale(s, 1.0 / tau);
    let mut terms = Vec::with_capacity(n / 2);
    for i in (0..n).step_by(2) {
        let mut cells = vec![(i, i + 1)];
        cells.extend((0..n).filter(|&j| j != i && j != i + 1).map(|j| (i, j)));
        let all = tape.select(s, &cells);
        let lse = tape.log_sum_exp(all);
        let pos = tape.select(s, &cells[..1]);
        terms.push(tape.sub(lse, pos));
    }
    Ok(tape.add_all(&terms))
}

/// Two samples per graph, graph `i` in slots `2i` and `2i + 1`. `sources`
/// are the corpus indices recorded in the samples.
pub fn build_structure_batch<R: Rng + ?Sized>(
    graphs: &[&AmrGraph],
    sources: &[usize],
    p_restart: f64,
    max_steps: usize,
    rng: &mut R,
) -> Result<Vec<SubgraphSample>> {
    let mut out = Vec::with_capacity(2 * graphs.len());
    for (g, &src) in graphs.iter().zip(sources) {
        let (a, b) = sample_positive_pair(g, src, p_restart, max_steps, rng)?;
        out.push(a);
        out.push(b);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StructureTrainConfig {
    /// Graphs per batch; each contributes two subgraphs.
    pub batch_size: usize,
    pub restart_probability: f64,
    pub max_walk_steps: usize,
    pub temperature: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub training_steps: usize,
    pub learning_rate: f64,
    pub adam: AdamParams,
    pub layers: usize,
    pub dropout: f64,
    pub hidden_dim: usize,
    pub seed: u64,
}

impl Default for StructureTrainConfig {
    /// Desk-scale run: small batch, short schedule.
    fn default() -> Self {
        StructureTrainConfig {
            batch_size: 8,
            warmup_steps: 100,
            training_steps: 1000,
            ..Self::paper()
        }
    }
}

impl StructureTrainConfig {
    /// The published large-scale schedule.
    pub fn paper() -> Self {
        StructureTrainConfig {
            batch_size: 1024,
            restart_probability: 0.8,
            max_walk_steps: DEFAULT_MAX_STEPS,
            temperature: 0.07,
            warmup_steps: 7500,
            weight_decay: 1e-5,
            training_steps: 75_000,
            learning_rate: 0.005,
            adam: AdamParams::default(),
            layers: 5,
            dropout: 0.5,
            hidden_dim: 64,
            seed: 0,
        }
    }

    pub fn encoder_config(&self) -> GraphEncoderConfig {
        GraphEncoderConfig {
            layers: self.layers,
            hidden_dim: self.hidden_dim,
            dropout: self.dropout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidArgument("temperature must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.restart_probability) {
            return Err(Error::InvalidArgument("restart_probability must lie in [0, 1]".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning_rate must be non-negative".into()));
        }
        Ok(())
    }
}

/// Node features for every graph, from a frozen text encoder.
pub fn corpus_features(corpus: &[AmrGraph], encoder: &TextEncoder) -> Result<Vec<NodeFeatures>> {
    par::map(corpus, |g| init_node_features(g, encoder))
        .into_iter()
        .collect()
}

/// Trains a fresh graph encoder over `corpus` with features from `encoder`.
pub fn train_structure(
    corpus: &[AmrGraph],
    encoder: &TextEncoder,
    config: &StructureTrainConfig,
) -> Result<(GraphEncoder, LossTrace)> {
    let features = corpus_features(corpus, encoder)?;
    let mut rng = stream_rng(config.seed, 0, 0);
    let gin = GraphEncoder::new(config.encoder_config(), encoder.dim(), &mut rng)?;
    train_structure_from(corpus, &features, gin, config)
}

const BATCH_STREAM: u64 = 10;
const SAMPLE_STREAM: u64 = 11;
const DROPOUT_STREAM: u64 = 12;

/// Continues training `gin`. Returns the final parameters and per-step
/// losses (summed over anchors).
pub fn train_structure_from(
    corpus: &[AmrGraph],
    features: &[NodeFeatures],
    mut gin: GraphEncoder,
    config: &StructureTrainConfig,
) -> Result<(GraphEncoder, LossTrace)> {
    config.validate()?;
    let usable: Vec<usize> = (0..corpus.len()).filter(|&i| !corpus[i].is_empty()).collect();
    if usable.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let m = config.batch_size.min(usable.len());
    let mut adam = Adam::new(config.learning_rate, config.adam, &gin.params.shapes())
        .with_warmup(config.warmup_steps)
        .with_weight_decay(config.weight_decay);
    let mut trace = LossTrace::default();
    let mut order_rng = stream_rng(config.seed, BATCH_STREAM, 0);
    let mut epoch: Vec<usize> = Vec::new();

    for step in 1..=config.training_steps {
        let mut picked = Vec::with_capacity(m);
        while picked.len() < m {
            if epoch.is_empty() {
                epoch = usable.clone();
                epoch.shuffle(&mut order_rng);
            }
            picked.push(epoch.pop().expect("refilled"));
        }
        let (loss, grads) = structure_step(corpus, features, &gin, &picked, step as u64, config)?;
        trace.train.push(loss);
        let mut params = gin.params.tensors_mut();
        adam.step(&mut params, &grads);
    }
    Ok((gin, trace))
}

/// Loss and parameter gradients for one batch. Subgraph encoding runs per
/// slot in parallel; the InfoNCE gradient is then pushed back through each
/// slot's tape.
pub fn structure_step(
    corpus: &[AmrGraph],
    features: &[NodeFeatures],
    gin: &GraphEncoder,
    picked: &[usize],
    step: u64,
    config: &StructureTrainConfig,
) -> Result<(f64, Vec<Matrix>)> {
    let pairs = par::map(picked, |&gi| {
        let mut rng = stream_rng(config.seed, SAMPLE_STREAM, (step << 32) | gi as u64);
        sample_positive_pair(&corpus[gi], gi, config.restart_probability, config.max_walk_steps, &mut rng)
    });
    let mut samples = Vec::with_capacity(2 * picked.len());
    for p in pairs {
        let (a, b) = p?;
        samples.push(a);
        samples.push(b);
    }
    let forwards = par::map_range(samples.len(), |slot| -> Result<(Tape, Vec<Var>, Var)> {
        let s = &samples[slot];
        let input = GraphInput::from_sample(s, &features[s.source])?;
        let mut tape = Tape::new();
        let vars = gin.params.bind(&mut tape, true);
        let x = tape.constant(input.features.clone());
        let mut rng = stream_rng(config.seed, DROPOUT_STREAM, (step << 32) | slot as u64);
        let out = gin.forward(&mut tape, &vars, x, &input, Some(&mut rng));
        Ok((tape, vars, out))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let rows: Vec<Vec<f64>> = forwards.iter().map(|(t, _, o)| t.value(*o).data.clone()).collect();
    let mut head = Tape::new();
    let x = head.param(Matrix::from_rows(&rows));
    let loss = infonce_on_tape(&mut head, x, config.temperature)?;
    let loss_value = head.scalar(loss);
    if !loss_value.is_finite() {
        return Err(Error::NonFinite(format!("structure loss at step {step}")));
    }
    let upstream = head.backward(loss).get(x).cloned().expect("embeddings receive gradient");

    let shapes = gin.params.shapes();
    let parts = par::map_range(forwards.len(), |slot| {
        let (tape, vars, out) = &forwards[slot];
        let seed = Matrix::row_vector(upstream.row(slot).to_vec());
        let mut g = tape.backward_seeded(*out, seed);
        vars.iter()
            .zip(&shapes)
            .map(|(&v, &(r, c))| g.take_or_zeros(v, r, c))
            .collect::<Vec<_>>()
    });
    Ok((loss_value, sum_gradients(parts).expect("batch is non-empty")))
}
