//! Formal verse generation with a language model conditioned on structure
//! descriptors: per-line syllable counts and rhyme classes given as control
//! tokens ahead of the text.
//!
//! The numeric core in [`lm`] is generic over the scalar type; the aliases
//! below fix it to `f32` (the default) or `f64`.

pub mod phonology;
pub mod segmentation;
pub mod descriptor;
pub mod tokenizer;
pub mod lm;
pub mod constraints;
pub mod pipeline;
pub mod evalkit;
pub mod synth;
#[cfg(test)]
mod testkit;

pub type Model = lm::AnyModel<f32>;
pub type Model64 = lm::AnyModel<f64>;
pub type Transformer = lm::Transformer<f32>;
pub type Transformer64 = lm::Transformer<f64>;
pub type NGram = lm::NGram<f32>;
pub type NGram64 = lm::NGram<f64>;
pub type Checkpoint = lm::Checkpoint<f32>;
pub type Checkpoint64 = lm::Checkpoint<f64>;
