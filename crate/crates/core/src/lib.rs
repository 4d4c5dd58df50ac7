//! Toxicity-scaled perplexity safety scores for language models.
//!
//! The pipeline has four stages, each in its own module:
//!
//! * [`corpus`] ingests annotated sentences, keeps the ones whose annotators
//!   agree on the targeted group, and labels them harmful or benign.
//! * [`scoring`] turns per-token log-probabilities (produced by any model,
//!   causal or masked) into perplexities and toxicity-scaled log-perplexities.
//! * [`rankstat`] compares harmful and benign sentences per group with the
//!   Mann-Whitney U statistic and reports its effect size, the safety score.
//! * [`analysis`] correlates safety scores with other metrics and with model
//!   architecture.
//!
//! [`toylm`] is a small n-gram model that stands in for a real network so the
//! whole pipeline can run offline, and [`cli`] wires everything together.
//!
//! ```
//! use safety_score::rankstat::{safety_score, PopulationPair};
//!
//! // log-scaled perplexities of harmful and benign sentences for one group
//! let pair = PopulationPair::new("women", vec![3f64.ln(), 5f64.ln()], vec![2f64.ln(), 4f64.ln()])?;
//! let result = safety_score(&pair, 0.0);
//! assert_eq!(result.u, 3.0);
//! assert_eq!(result.safety, 0.75);
//! # Ok::<(), safety_score::rankstat::RankError>(())
//! ```

pub mod analysis;
pub mod cli;
pub mod corpus;
pub mod demo;
pub mod io;
pub mod rankstat;
pub mod report;
pub mod scoring;
pub mod toylm;

/// Schema tag written into every emitted file.
pub const SCHEMA_VERSION: &str = "v1";

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/corpus.md")]
    struct Corpus;
    #[doc = include_str!("../../../book/src/perplexity.md")]
    struct Perplexity;
    #[doc = include_str!("../../../book/src/safety-score.md")]
    struct SafetyScore;
    #[doc = include_str!("../../../book/src/correlation.md")]
    struct Correlation;
    #[doc = include_str!("../../../book/src/toy-model.md")]
    struct ToyModel;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
