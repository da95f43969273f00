//! Retrieval-augmented multiple-choice question answering over textbook
//! corpora.
//!
//! The pipeline rewrites and expands the question, retrieves passages with a
//! hybrid sparse + dense retriever followed by cross-encoder reranking,
//! filters the evidence at passage and segment level, and asks a reader LLM
//! for the answer. All neural services sit behind the traits in
//! [`providers`], each with a deterministic mock.

pub mod augmenter;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod providers;
pub mod reader;
pub mod refiner;
pub mod retrieval;
pub mod templates;
pub mod text;

pub use error::{Error, Result};
