//! Hebrew diacritization with a character-level bidirectional LSTM tagger.
//!
//! The crate covers the full pipeline: the Unicode codec for dotted text,
//! corpus loading and chunking, the network with exact gradients, training
//! with Adam and a cyclical learning rate, greedy decoding, and the DEC, CHA,
//! WOR and VOC evaluation metrics.

pub mod cli;
pub mod codec;
pub mod corpus;
pub mod dotter;
pub mod exec;
pub mod gradcheck;
mod linalg;
pub mod metrics;
pub mod network;
pub mod trainer;

pub use exec::Exec;
