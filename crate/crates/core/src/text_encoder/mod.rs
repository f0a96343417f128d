//! Contextual sentence encoder with span markers.
//!
//! A small post-LN Transformer over whitespace tokens. Spans of interest are
//! wrapped in `[Ei]`/`[/Ei]` markers before encoding, and the output row at
//! a span's open marker is that span's representation.

mod markers;
mod vocab;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::amr::Span;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::persistence::{take_matrix, CheckpointError, NamedTensor};
use crate::tensor::Matrix;

pub use markers::{insert_markers, truncate, MarkedSentence};
pub use vocab::{close_marker, open_marker, TokenKind, Vocabulary, BOS, EOS, MAX_MARKERS, PAD, UNK};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub layers: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    /// Residual connections around attention and feed-forward blocks.
    pub residual: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            layers: 2,
            hidden_dim: 64,
            heads: 4,
            ffn_dim: 256,
            max_len: 128,
            residual: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.heads == 0 || self.hidden_dim % self.heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "hidden_dim {} must be a positive multiple of heads {}",
                self.hidden_dim, self.heads
            )));
        }
        if self.max_len == 0 || self.ffn_dim == 0 {
            return Err(Error::InvalidArgument("max_len and ffn_dim must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub wq: Matrix,
    pub bq: Matrix,
    pub wk: Matrix,
    pub bk: Matrix,
    pub wv: Matrix,
    pub bv: Matrix,
    pub wo: Matrix,
    pub bo: Matrix,
    pub ln1_g: Matrix,
    pub ln1_b: Matrix,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    pub ln2_g: Matrix,
    pub ln2_b: Matrix,
}

const LAYER_TENSORS: [&str; 16] = [
    "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln1_g", "ln1_b", "w1", "b1", "w2", "b2",
    "ln2_g", "ln2_b",
];

impl LayerParams {
    fn init<R: Rng + ?Sized>(d: usize, ffn: usize, rng: &mut R) -> Self {
        let std = (d as f64).powf(-0.5);
        let wq = Matrix::randn(d, d, std, rng);
        LayerParams {
            wk: wq.clone(),
            wq,
            bq: Matrix::zeros(1, d),
            bk: Matrix::zeros(1, d),
            wv: Matrix::randn(d, d, std, rng),
            bv: Matrix::zeros(1, d),
            wo: Matrix::randn(d, d, std, rng),
            bo: Matrix::zeros(1, d),
            ln1_g: Matrix::from_vec(1, d, vec![1.0; d]),
            ln1_b: Matrix::zeros(1, d),
            w1: Matrix::randn(d, ffn, std, rng),
            b1: Matrix::zeros(1, ffn),
            w2: Matrix::randn(ffn, d, (ffn as f64).powf(-0.5), rng),
            b2: Matrix::zeros(1, d),
            ln2_g: Matrix::from_vec(1, d, vec![1.0; d]),
            ln2_b: Matrix::zeros(1, d),
        }
    }

    fn zeros(d: usize, ffn: usize) -> Self {
        LayerParams {
            wq: Matrix::zeros(d, d),
            bq: Matrix::zeros(1, d),
            wk: Matrix::zeros(d, d),
            bk: Matrix::zeros(1, d),
            wv: Matrix::zeros(d, d),
            bv: Matrix::zeros(1, d),
            wo: Matrix::zeros(d, d),
            bo: Matrix::zeros(1, d),
            ln1_g: Matrix::zeros(1, d),
            ln1_b: Matrix::zeros(1, d),
            w1: Matrix::zeros(d, ffn),
            b1: Matrix::zeros(1, ffn),
            w2: Matrix::zeros(ffn, d),
            b2: Matrix::zeros(1, d),
            ln2_g: Matrix::zeros(1, d),
            ln2_b: Matrix::zeros(1, d),
        }
    }

    fn tensors(&self) -> [&Matrix; 16] {
        [
            &self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.wo, &self.bo,
            &self.ln1_g, &self.ln1_b, &self.w1, &self.b1, &self.w2, &self.b2, &self.ln2_g,
            &self.ln2_b,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Matrix; 16] {
        [
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln1_g,
            &mut self.ln1_b,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.ln2_g,
            &mut self.ln2_b,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub tok_embed: Matrix,
    pub pos_embed: Matrix,
    pub layers: Vec<LayerParams>,
}

/// Sine/cosine position table with per-entry RMS `rms`.
fn sinusoid_table(len: usize, d: usize, rms: f64) -> Matrix {
    let amp = rms * std::f64::consts::SQRT_2;
    let mut m = Matrix::zeros(len, d);
    for pos in 0..len {
        for i in 0..d {
            let rate = 10000f64.powf(-((i / 2 * 2) as f64) / d as f64);
            let angle = pos as f64 * rate;
            m.data[pos * d + i] = amp * if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    m
}

impl EncoderParams {
    /// Token embeddings drawn from N(0, 0.7²), the learned position table
    /// starting from sinusoids of the same RMS, layer weights Xavier-scaled
    /// with query and key tied.
    pub fn init<R: Rng + ?Sized>(cfg: &EncoderConfig, vocab_size: usize, rng: &mut R) -> Self {
        let d = cfg.hidden_dim;
        let mut p = EncoderParams {
            tok_embed: Matrix::randn(vocab_size, d, 0.7, rng),
            pos_embed: sinusoid_table(cfg.max_len, d, 0.7),
            layers: (0..cfg.layers)
                .map(|_| LayerParams::init(d, cfg.ffn_dim, rng))
                .collect(),
        };
        for m in p.tensors_mut() {
            m.quantize_f32();
        }
        p
    }

    pub fn zeros(cfg: &EncoderConfig, vocab_size: usize) -> Self {
        let d = cfg.hidden_dim;
        EncoderParams {
            tok_embed: Matrix::zeros(vocab_size, d),
            pos_embed: Matrix::zeros(cfg.max_len, d),
            layers: (0..cfg.layers)
                .map(|_| LayerParams::zeros(d, cfg.ffn_dim))
                .collect(),
        }
    }

    /// Every tensor in a fixed order; [`EncoderParams::tensors_mut`] matches it.
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut v = vec![&self.tok_embed, &self.pos_embed];
        for l in &self.layers {
            v.extend(l.tensors());
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = vec![&mut self.tok_embed, &mut self.pos_embed];
        for l in &mut self.layers {
            v.extend(l.tensors_mut());
        }
        v
    }

    pub fn names(&self) -> Vec<String> {
        let mut v = vec!["encoder.tok_embed".to_string(), "encoder.pos_embed".to_string()];
        for k in 0..self.layers.len() {
            v.extend(LAYER_TENSORS.iter().map(|t| format!("encoder.layer{k}.{t}")));
        }
        v
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.tensors().iter().map(|m| m.shape()).collect()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.tensors()
            .into_iter()
            .map(|m| {
                if trainable {
                    tape.param(m.clone())
                } else {
                    tape.constant(m.clone())
                }
            })
            .collect()
    }
}

/// Output of [`TextEncoder::encode`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSentence {
    pub ids: Vec<usize>,
    /// One row per (possibly truncated) token.
    pub output: Matrix,
    /// Per span: (open, close) marker positions, None if lost to truncation.
    pub marker_positions: Vec<Option<(usize, usize)>>,
    /// Per original token: its row, None if truncated away.
    pub token_rows: Vec<Option<usize>>,
}

impl EncodedSentence {
    /// Output row at the span's open marker.
    pub fn span_representation(&self, span_index: usize) -> Result<Vec<f64>> {
        match self.marker_positions.get(span_index) {
            Some(Some((open, _))) => Ok(self.output.row(*open).to_vec()),
            _ => Err(Error::SpanUnavailable(span_index)),
        }
    }
}

pub fn span_representation(enc: &EncodedSentence, span_index: usize) -> Result<Vec<f64>> {
    enc.span_representation(span_index)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoder {
    pub config: EncoderConfig,
    pub vocab: Vocabulary,
    pub params: EncoderParams,
}

impl TextEncoder {
    pub fn new<R: Rng + ?Sized>(config: EncoderConfig, vocab: Vocabulary, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = EncoderParams::init(&config, vocab.len(), rng);
        for id in 0..vocab.len() {
            if vocab.kind(id) != TokenKind::Word {
                params.tok_embed.row_mut(id).fill(0.0);
            }
        }
        Ok(TextEncoder {
            config,
            vocab,
            params,
        })
    }

    pub fn dim(&self) -> usize {
        self.config.hidden_dim
    }

    /// Token ids of a marked sentence after truncation, plus the bookkeeping
    /// from [`truncate`].
    pub fn prepare(&self, marked: &MarkedSentence) -> Prepared {
        let (tokens, markers, token_rows) = truncate(marked, self.config.max_len);
        Prepared {
            ids: tokens.iter().map(|t| self.vocab.id(t)).collect(),
            markers,
            token_rows,
        }
    }

    /// Records the forward pass on `tape`; returns the `n × d` output node.
    /// `vars` come from [`EncoderParams::bind`].
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], ids: &[usize]) -> Var {
        let cfg = &self.config;
        let n = ids.len();
        assert!(n <= cfg.max_len, "sequence longer than max_len");
        let pad = self.vocab.pad_id();
        let allowed: Vec<bool> = ids.iter().map(|&i| i != pad).collect();
        let positions = self.vocab.position_ids(ids);

        let tok = tape.gather_rows(vars[0], ids);
        let pos = tape.gather_rows(vars[1], &positions);
        let mut x = tape.add(tok, pos);

        let dh = cfg.hidden_dim / cfg.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        for k in 0..cfg.layers {
            let l = &vars[2 + 16 * k..2 + 16 * (k + 1)];
            let (wq, bq, wk, bk, wv, bv, wo, bo) = (l[0], l[1], l[2], l[3], l[4], l[5], l[6], l[7]);
            let (ln1_g, ln1_b, w1, b1, w2, b2, ln2_g, ln2_b) =
                (l[8], l[9], l[10], l[11], l[12], l[13], l[14], l[15]);

            let q = tape.matmul(x, wq);
            let q = tape.add_row(q, bq);
            let kk = tape.matmul(x, wk);
            let kk = tape.add_row(kk, bk);
            let v = tape.matmul(x, wv);
            let v = tape.add_row(v, bv);
            let mut heads = Vec::with_capacity(cfg.heads);
            for h in 0..cfg.heads {
                let qh = tape.slice_cols(q, h * dh, dh);
                let kh = tape.slice_cols(kk, h * dh, dh);
                let vh = tape.slice_cols(v, h * dh, dh);
                let s = tape.matmul_t(qh, kh);
                let s = tape.scale(s, scale);
                let p = tape.softmax_rows(s, Some(&allowed));
                heads.push(tape.matmul(p, vh));
            }
            let att = tape.concat_cols(&heads);
            let att = tape.matmul(att, wo);
            let att = tape.add_row(att, bo);
            let h1 = if cfg.residual { tape.add(x, att) } else { att };
            let h1 = tape.layer_norm(h1, ln1_g, ln1_b);

            let f = tape.matmul(h1, w1);
            let f = tape.add_row(f, b1);
            let f = tape.gelu(f);
            let f = tape.matmul(f, w2);
            let f = tape.add_row(f, b2);
            let h2 = if cfg.residual { tape.add(h1, f) } else { f };
            x = tape.layer_norm(h2, ln2_g, ln2_b);
        }
        x
    }

    /// Deterministic inference pass over a marked sentence.
    pub fn encode(&self, marked: &MarkedSentence) -> EncodedSentence {
        let prep = self.prepare(marked);
        self.encode_ids(&prep.ids, prep.markers, prep.token_rows)
    }

    /// Encodes already-mapped ids (e.g. with padding appended).
    pub fn encode_ids(
        &self,
        ids: &[usize],
        marker_positions: Vec<Option<(usize, usize)>>,
        token_rows: Vec<Option<usize>>,
    ) -> EncodedSentence {
        let output = if ids.is_empty() {
            Matrix::zeros(0, self.dim())
        } else {
            let mut tape = Tape::new();
            let vars = self.params.bind(&mut tape, false);
            let out = self.forward(&mut tape, &vars, ids);
            tape.value(out).clone()
        };
        EncodedSentence {
            ids: ids.to_vec(),
            output,
            marker_positions,
            token_rows,
        }
    }

    /// Representations for arbitrary (possibly overlapping, possibly many)
    /// spans of one sentence. Spans are packed greedily into marker groups
    /// of at most [`MAX_MARKERS`] non-overlapping spans, one encoder pass
    /// per group. Entries are None for spans lost to truncation.
    pub fn span_vectors<S: AsRef<str> + Sync>(&self, tokens: &[S], spans: &[Span]) -> Result<Vec<Option<Vec<f64>>>> {
        let groups = pack_marker_groups(spans);
        let mut out = vec![None; spans.len()];
        for group in groups {
            let group_spans: Vec<Span> = group.iter().map(|&i| spans[i]).collect();
            let marked = insert_markers(tokens, &group_spans)?;
            let enc = self.encode(&marked);
            for (j, &i) in group.iter().enumerate() {
                out[i] = enc.span_representation(j).ok();
            }
        }
        Ok(out)
    }

    /// Row of the token embedding table for `token` (`<unk>` if absent).
    pub fn token_embedding(&self, token: &str) -> Vec<f64> {
        self.params.tok_embed.row(self.vocab.id(token)).to_vec()
    }

    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        self.params
            .names()
            .into_iter()
            .zip(self.params.tensors())
            .map(|(n, m)| NamedTensor::from_matrix(n, m))
            .collect()
    }

    pub fn from_tensors(
        config: EncoderConfig,
        vocab: Vocabulary,
        tensors: &[NamedTensor],
    ) -> std::result::Result<Self, CheckpointError> {
        let mut params = EncoderParams::zeros(&config, vocab.len());
        let names = params.names();
        for (name, slot) in names.iter().zip(params.tensors_mut()) {
            *slot = take_matrix(tensors, name, slot.shape())?;
        }
        Ok(TextEncoder {
            config,
            vocab,
            params,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub ids: Vec<usize>,
    pub markers: Vec<Option<(usize, usize)>>,
    pub token_rows: Vec<Option<usize>>,
}

/// Greedy first-fit packing of spans into non-overlapping groups of at most
/// [`MAX_MARKERS`]. Spans are visited in start order.
pub fn pack_marker_groups(spans: &[Span]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..spans.len()).collect();
    order.sort_by_key(|&i| (spans[i].start, spans[i].end, i));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        let slot = groups.iter().position(|g| {
            g.len() < MAX_MARKERS && g.iter().all(|&j| !spans[j].overlaps(&spans[i]))
        });
        match slot {
            Some(k) => groups[k].push(i),
            None => groups.push(vec![i]),
        }
    }
    groups
}
