//! Drift versus selection in historical word-frequency series.
//!
//! The crate simulates Wright-Fisher trajectories, builds per-verb
//! frequency series from corpus counts, and tests them for selection with
//! the frequency increment test and a convolutional classifier.

pub mod binning;
pub mod error;
pub mod fit;
pub mod ingest;
pub mod pipeline;
pub mod rng;
pub mod stats;
pub mod tsc;
pub mod wf;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/ingest.md")]
    mod ingest {}
    #[doc = include_str!("../../../book/src/binning.md")]
    mod binning {}
    #[doc = include_str!("../../../book/src/fit.md")]
    mod fit {}
    #[doc = include_str!("../../../book/src/classifier.md")]
    mod classifier {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
}
