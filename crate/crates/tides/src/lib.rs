//! Spatial-aware cellular traffic forecasting.
//!
//! The pipeline has two phases. Phase 1 clusters city regions by
//! geography, traffic statistics, and local spatial autocorrelation
//! ([`geo`]). Phase 2 trains one predictor per cluster: each input window
//! is instance-normalized ([`revin`]), summarized into a statistical text
//! prompt ([`prompt`]), patch-embedded, mixed across neighboring regions
//! by graph-masked attention, aligned against a token-embedding space,
//! and decoded by a small frozen causal backbone ([`model`]). Training,
//! metrics, and baselines live in [`train`], [`metrics`], and
//! [`baselines`]; dataset ingestion and the synthetic city generator in
//! [`data`].
//!
//! The `book/` directory contains a narrative guide to each stage.

pub mod attention;
pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod geo;
pub mod metrics;
pub mod model;
pub mod prompt;
pub mod revin;
pub mod tensor;
pub mod train;

pub use error::{Result, TidesError};

/// Deterministic RNG used everywhere randomness is needed.
pub fn seeded_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

/// The `book/` guide, re-exposed as rustdoc pages so `cargo test` runs
/// every code block in the chapters (mdbook itself cannot resolve crate
/// dependencies in its `test` subcommand).
pub mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    pub mod autodiff {}
    #[doc = include_str!("../../../book/src/spatial.md")]
    pub mod spatial {}
    #[doc = include_str!("../../../book/src/prompts.md")]
    pub mod prompts {}
    #[doc = include_str!("../../../book/src/attention.md")]
    pub mod attention {}
    #[doc = include_str!("../../../book/src/model.md")]
    pub mod model {}
    #[doc = include_str!("../../../book/src/training.md")]
    pub mod training {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    pub mod pipeline {}
}
