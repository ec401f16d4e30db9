//! Multimodal item enrichment for recommendation.
//!
//! The crate is organised as a pipeline:
//!
//! - [`corpus`] parses rating datasets, converts them to implicit feedback,
//!   filters to a k-core and produces per-user splits plus sampled
//!   evaluation candidates.
//! - [`prompting`] renders the prompt catalogue (text-only, multimodal and
//!   cross-reflection templates).
//! - [`gateway`] sends prompts to chat-completion backends with retries, a
//!   persistent response cache and resumable corpus fan-out.
//! - [`embedding`] turns responses into vectors and concatenates them into
//!   item representations.
//! - [`recsys`] trains the two-tower scorer with binary cross-entropy and
//!   AdamW.
//! - [`eval`] ranks sampled candidates and computes Precision/Recall/NDCG.
//! - [`analysis`] compares description, image-description and response
//!   embeddings by cosine similarity.

pub mod analysis;
pub mod corpus;
pub mod embedding;
pub mod eval;
pub mod gateway;
pub mod http;
pub mod pool;
pub mod prompting;
pub mod recsys;
pub mod rng;
pub mod synthetic;

#[cfg(feature = "testkit")]
pub mod testkit;
