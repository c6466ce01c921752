//! Dialog state tracking framed as reading comprehension.
//!
//! A conversation prefix is flattened into a passage, and for every slot the
//! tracker answers "what is the value of this slot?" with three decisions:
//! whether the slot changes this turn ([`models::CarryoverModel`]), what kind
//! of value it takes ([`models::TypeModel`]), and, for free-text values,
//! which passage span holds it ([`models::SpanModel`]). A closed-vocabulary
//! tracker ([`models::JstModel`]) serves as a hybrid partner.

pub mod checkpoint;
pub mod corpus;
pub mod embeddings;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod heads;
pub mod jst;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
