//! Difficulty-graded curricula for retrieval-augmented generation.
//!
//! Generator side: Easy / Common / Hard document sets per query ([`augment`]).
//! Retriever side: generator-preference reranking ([`rerank`]), stratified
//! stage sampling ([`curriculum`]) and a tiered pairwise ranking loss that
//! trains a dense encoder ([`train`]).

pub mod augment;
pub mod corpus;
pub mod genclient;
pub mod jsonl;
pub mod pipeline;
pub mod retrieval;
pub mod rerank;
pub mod curriculum;
pub mod eval;
pub mod seeds;
pub mod synth;
pub mod train;
