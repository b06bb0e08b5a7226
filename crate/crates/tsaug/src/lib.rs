//! Time-series data augmentation with measurable quality.
//!
//! This crate implements a toolkit for augmenting labeled time-series data
//! and for quantifying what an augmentation does to a learning task:
//!
//! * [`augment`] — eight basic transforms (jitter, scale, rotate/flip,
//!   permute, magnitude warp, time warp, window slice, window warp), all pure
//!   functions of `(series, params, stream)`.
//! * [`randaug`] — parameter-free random augmentation: `J` ops drawn
//!   uniformly per sample at one shared magnitude level `M`.
//! * [`policy`] — a learned augmentation policy (`K` sub-policies of `J`
//!   parameterized ops) optimized jointly with model training by a
//!   score-function gradient estimator.
//! * [`model`] — small MLP and Conv-1D backbones with hand-derived
//!   backpropagation, Adam, and a deterministic training loop.
//! * [`metrics`] — affinity and diversity, the two quality measures of an
//!   augmentation, plus the sweep machinery to produce scatter reports.
//! * [`data`] — CSV ingestion, manifests, and synthetic dataset generators.
//!
//! Everything stochastic flows from an explicit [`RngStream`], so any
//! pipeline rerun with the same seed reproduces its output bit for bit.

pub mod augment;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod policy;
pub mod randaug;
pub mod rng;
pub mod series;
pub mod spline;

pub use augment::{apply, apply_chain, AugOpKind, ChainOp, MagnitudeTable, OpParams};
pub use error::{Error, Result};
pub use randaug::RandAugmentConfig;
pub use rng::RngStream;
pub use series::{normalize_zscore, ChannelStats, Dataset, SplitTag, TimeSeries};
pub use spline::{resample_linear, CubicSpline};

/// Doc-tests for the guide: every fenced Rust block in the book chapters is
/// compiled and run by `cargo test --doc`, keeping the book in sync with the
/// library.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }

    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(series_and_streams, "../../../book/src/series-and-streams.md");
    chapter!(splines, "../../../book/src/splines.md");
    chapter!(transforms, "../../../book/src/transforms.md");
    chapter!(random_augmentation, "../../../book/src/random-augmentation.md");
    chapter!(policy_search, "../../../book/src/policy-search.md");
    chapter!(models_and_training, "../../../book/src/models-and-training.md");
    chapter!(affinity_diversity, "../../../book/src/affinity-diversity.md");
    chapter!(datasets, "../../../book/src/datasets.md");
    chapter!(command_line, "../../../book/src/command-line.md");
}
