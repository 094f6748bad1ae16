//! Learn a dialogue quality evaluator from pairwise preference labels cast by
//! a panel of judges whose individual reliability is unknown.
//!
//! A small MLP head maps a dialogue embedding to a scalar quality score; a
//! probit preference model turns score differences into win probabilities; and
//! each judge carries per-head hit / correct-rejection rates. Head weights and
//! judge reliabilities are fit jointly by maximum likelihood, so systematically
//! noisy judges are down-weighted instead of poisoning the score function.
//!
//! Module map:
//! - [`model`]: score heads, judge panel, preference probability.
//! - [`model_file`]: binary serialization of a trained model.
//! - [`mle`]: the marginal likelihood of panel labels and its exact gradients.
//! - [`train`]: AdamW loop with warmup + cosine schedule.
//! - [`datapipe`]: dialogue records, annotation sheets, dataset filters.
//! - [`store`]: on-disk embedding matrix keyed by item id.
//! - [`embed`]: HTTP client for an embeddings endpoint, with disk cache.
//! - [`synth`]: synthetic corpora with known ground truth.
//! - [`metrics`]: correlation / accuracy protocols and report types.

pub mod datapipe;
pub mod embed;
pub mod metrics;
pub mod mle;
pub mod model;
pub mod model_file;
pub mod rng;
pub mod store;
pub mod synth;
pub mod train;
