//! Zero-shot emotion annotation of frame-sampled video segments with large
//! multimodal models, and the tooling to evaluate the results.
//!
//! The crate is organised along the pipeline:
//!
//! ```text
//! manifest -> key frames / composite strip -> prompts -> backend (live or simulated)
//!          -> JSONL store -> strategies A1..D2 -> reports -> Friedman / Dunn
//! ```
//!
//! - [`labels`]: the seven-class and three-class taxonomies and answer parsing
//! - [`sampling`]: key-frame indices and the horizontal composite image
//! - [`annotator`]: prompt templates, chat requests, live/simulated backends,
//!   rate limiting and retries
//! - [`strategies`]: per-frame, majority, majority-without-Neutral and
//!   composite strategies
//! - [`evaluation`]: confusion matrices and classification reports
//! - [`statistics`]: Friedman (Kendall's W) and Dunn tests, chi-square and
//!   normal tails
//! - [`corpus`]: manifest CSV, the resumable annotation store, cost estimates
//! - [`pipeline`]: the stages wired together

pub mod annotator;
pub mod corpus;
pub mod evaluation;
pub mod labels;
pub mod pipeline;
pub mod sampling;
pub mod statistics;
pub mod strategies;

pub use labels::{map_to_sentiment, parse_label, Emotion, Label, Sentiment, Taxonomy};
pub use strategies::StrategyId;
