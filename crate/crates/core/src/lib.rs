//! Zero-shot dialogue state tracking by transfer from question answering.
//!
//! A small encoder-decoder reader is trained on extractive and multichoice
//! QA records, with a choice-selection head that fuses candidate answers
//! into the decoder memory. Dialogue slots are then asked as questions.

pub mod backbone;
pub mod corpus;
pub mod error;
pub mod evaluator;
pub mod fusion;
pub mod graph;
pub mod model;
pub mod params;
pub mod query;
pub mod synthetic;
pub mod tensor;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};
pub use fusion::Ablation;
pub use model::{ModelConfig, ReaderModel};
pub use tensor::Matrix;
pub use trainer::TrainConfig;
