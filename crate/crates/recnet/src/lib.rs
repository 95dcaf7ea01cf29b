//! Self-evolving preference propagation for agentic recommenders.
//!
//! Users and items are modeled as client agents holding textual preference
//! profiles. Router agents summarize communities of related clients and
//! multicast profile updates to every client scoring above a similarity
//! threshold; clients buffer incoming updates, merge them under learned
//! filter rules, and the whole network optimizes itself from interaction
//! feedback through textual gradients. An evaluation harness measures the
//! effect with leave-one-out NDCG over pluggable prompt backends.
//!
//! Module map:
//! - [`model`]: domain types and network validation
//! - [`text`]: shared tokenizer and stopword list
//! - [`embedding`]: hash and remote embedders, cosine similarity
//! - [`backend`]: the six prompt operations plus ranking, mock and HTTP

pub mod backend;
pub mod cli;
pub mod embedding;
pub mod engine;
pub mod eval;
pub mod model;
pub mod optimization;
pub mod reception;
pub mod routing;
pub mod text;
