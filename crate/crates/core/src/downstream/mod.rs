//! Adaptation of the pre-trained encoders: supervised instance
//! classification and unsupervised event discovery by clustering.

mod finetune;
mod liberal;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::persistence::{take_matrix, CheckpointError, NamedTensor};
use crate::tensor::Matrix;

pub use finetune::{
    finetune, micro_f1, read_instances_jsonl, EpochStats, FeatureSet, FinetuneConfig, FinetunedModel,
    SupervisedInstance,
};
pub use liberal::{candidate_id, liberal_pipeline, LiberalConfig, LiberalResult, SchemaCluster, SchemaSummary};

fn check_splits(n: usize, splits: &[usize]) -> Result<()> {
    if splits.is_empty() || splits.windows(2).any(|w| w[0] >= w[1]) || splits.iter().any(|&s| s >= n) {
        return Err(Error::InvalidArgument(format!(
            "pooling splits {splits:?} must be strictly increasing positions in 0..{n}"
        )));
    }
    Ok(())
}

/// Row ranges of the `splits.len() + 1` pooling segments. A split token
/// closes its segment.
fn segments(n: usize, splits: &[usize]) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::with_capacity(splits.len() + 1);
    let mut start = 0;
    for &s in splits {
        out.push(start..s + 1);
        start = s + 1;
    }
    out.push(start..n);
    out
}

/// Max-pools each segment of `vectors` (`n × d`) and concatenates the
/// results. Empty segments give zeros.
pub fn dynamic_multi_pooling(vectors: &Matrix, splits: &[usize]) -> Result<Vec<f64>> {
    check_splits(vectors.rows, splits)?;
    let d = vectors.cols;
    let mut out = Vec::with_capacity(d * (splits.len() + 1));
    for seg in segments(vectors.rows, splits) {
        if seg.is_empty() {
            out.extend(std::iter::repeat_n(0.0, d));
            continue;
        }
        for c in 0..d {
            out.push(seg.clone().map(|r| vectors.get(r, c)).fold(f64::NEG_INFINITY, f64::max));
        }
    }
    Ok(out)
}

/// [`dynamic_multi_pooling`] on the tape over the given rows of `x`.
pub fn dynamic_multi_pooling_on_tape(tape: &mut Tape, x: Var, rows: &[usize], splits: &[usize]) -> Result<Var> {
    check_splits(rows.len(), splits)?;
    let d = tape.value(x).cols;
    let parts: Vec<Var> = segments(rows.len(), splits)
        .into_iter()
        .map(|seg| {
            if seg.is_empty() {
                tape.constant(Matrix::zeros(1, d))
            } else {
                tape.max_rows(x, &rows[seg])
            }
        })
        .collect();
    Ok(tape.concat_cols(&parts))
}

/// `x_sem` followed by `g_str`.
pub fn instance_embedding(x_sem: &[f64], g_str: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(x_sem.len() + g_str.len());
    v.extend_from_slice(x_sem);
    v.extend_from_slice(g_str);
    v
}

/// One tanh hidden layer and a softmax output.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

impl ClassifierHead {
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, classes: usize, rng: &mut R) -> Self {
        let mut h = ClassifierHead {
            w1: Matrix::randn(input, hidden, 1.0 / (input.max(1) as f64).sqrt(), rng),
            b1: Matrix::zeros(1, hidden),
            w2: Matrix::randn(hidden, classes, 1.0 / (hidden as f64).sqrt(), rng),
            b2: Matrix::zeros(1, classes),
        };
        for m in h.tensors_mut() {
            m.quantize_f32();
        }
        h
    }

    pub fn zeros(input: usize, hidden: usize, classes: usize) -> Self {
        ClassifierHead {
            w1: Matrix::zeros(input, hidden),
            b1: Matrix::zeros(1, hidden),
            w2: Matrix::zeros(hidden, classes),
            b2: Matrix::zeros(1, classes),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows
    }

    pub fn classes(&self) -> usize {
        self.w2.cols
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn names() -> [&'static str; 4] {
        ["head.w1", "head.b1", "head.w2", "head.b2"]
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.tensors()
            .into_iter()
            .map(|m| if trainable { tape.param(m.clone()) } else { tape.constant(m.clone()) })
            .collect()
    }

    /// `1 × C` logits for the `1 × input` row `x`.
    pub fn logits_on_tape(tape: &mut Tape, vars: &[Var], x: Var) -> Var {
        let h = tape.matmul(x, vars[0]);
        let h = tape.add_row(h, vars[1]);
        let h = tape.tanh(h);
        let o = tape.matmul(h, vars[2]);
        tape.add_row(o, vars[3])
    }

    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        Self::names()
            .into_iter()
            .zip(self.tensors())
            .map(|(n, m)| NamedTensor::from_matrix(n, m))
            .collect()
    }

    pub fn from_tensors(tensors: &[NamedTensor]) -> Result<Self, CheckpointError> {
        let w1 = tensors
            .iter()
            .find(|t| t.name == "head.w1")
            .ok_or_else(|| CheckpointError::MissingTensor("head.w1".into()))?
            .to_matrix()?;
        let w2 = tensors
            .iter()
            .find(|t| t.name == "head.w2")
            .ok_or_else(|| CheckpointError::MissingTensor("head.w2".into()))?
            .to_matrix()?;
        Ok(ClassifierHead {
            b1: take_matrix(tensors, "head.b1", (1, w1.cols))?,
            b2: take_matrix(tensors, "head.b2", (1, w2.cols))?,
            w1,
            w2,
        })
    }
}

/// Class probabilities for one instance embedding.
pub fn classify(head: &ClassifierHead, embedding: &[f64]) -> Result<Vec<f64>> {
    if embedding.len() != head.input_dim() {
        return Err(Error::Dimension(format!(
            "embedding has {} entries, head expects {}",
            embedding.len(),
            head.input_dim()
        )));
    }
    let mut tape = Tape::new();
    let vars = head.bind(&mut tape, false);
    let x = tape.constant(Matrix::row_vector(embedding.to_vec()));
    let logits = ClassifierHead::logits_on_tape(&mut tape, &vars, x);
    let p = tape.softmax_rows(logits, None);
    Ok(tape.value(p).data.clone())
}
