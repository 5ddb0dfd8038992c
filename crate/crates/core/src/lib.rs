//! Graph-based multimodal commonsense knowledge distillation.
//!
//! Per-sample heterogeneous subgraphs (question, language context, visual
//! context, vision-language, plus retrieved commonsense triplets) feed a
//! two-layer GCN teacher. Its temperature-softened predictions are distilled
//! into small students that only see the four content embeddings.
//!
//! Everything runs on a small dense `f64` tensor type with a tape-based
//! reverse-mode autodiff ([`tape`]).

mod binio;
pub mod checkpoint;
pub mod distill;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod manifest;
pub mod metrics;
pub mod optim;
pub mod student;
pub mod synth;
pub mod tape;
pub mod teacher;
pub mod tensor;
pub mod triplets;

pub use error::{Error, Result};
