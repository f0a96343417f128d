//! Contrastive pre-training of event representations over AMR graphs.

pub mod amr;
pub mod autodiff;
pub mod clustering;
pub mod downstream;
pub mod error;
pub mod evaluation;
pub mod graph_encoder;
pub mod optim;
pub mod par;
pub mod persistence;
pub mod semantic_pretrain;
pub mod structure_pretrain;
pub mod subgraph_sampler;
pub mod synth;
pub mod tensor;
pub mod text_encoder;

pub use error::{Error, Result};
