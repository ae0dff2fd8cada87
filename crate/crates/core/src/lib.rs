//! Long-tailed out-of-distribution detection at desk scale.
//!
//! The pipeline trains a small dense network with a shared feature extractor
//! and an ensemble of classifier heads over `C + k` logits, where the extra
//! `k` abstention classes absorb outlier training data via dynamically
//! assigned virtual labels. Tail classes are augmented by pasting their
//! foregrounds onto context-rich backgrounds (CutMix), and a second stage
//! fine-tunes the heads with a logit-adjusted loss. Detection quality is
//! evaluated with a full AUROC/AUPR/operating-point metrics engine, each
//! metric paired with a brute-force oracle twin.

pub mod augment;
pub mod datasets;
pub mod error;
pub mod experiment;
pub mod gradnoise;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod trainer;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;
