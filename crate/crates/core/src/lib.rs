pub mod artifacts;
pub mod checkpoint;
pub mod config;
pub mod detect;
pub mod error;
pub mod mining;
pub mod model;
pub mod numerics;
pub mod optim;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod synthdata;
pub mod trainset;

pub use error::{Error, Result};

// The book's code listings run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/workflow.md")]
    mod workflow {}
    #[doc = include_str!("../../../book/src/benchmark.md")]
    mod benchmark {}
}
