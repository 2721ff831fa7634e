pub mod clean;
pub mod dedup;
mod error;
pub mod eval;
pub mod heuristics;
pub mod pipeline;
pub mod quality;
pub mod record;
pub mod stats;

pub use error::{Error, Result};

/// Book chapters, compiled so their snippets stay in sync with the API.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/records.md")]
    mod records {}
    #[doc = include_str!("../../../book/src/cleaning.md")]
    mod cleaning {}
    #[doc = include_str!("../../../book/src/heuristics.md")]
    mod heuristics {}
    #[doc = include_str!("../../../book/src/dedup.md")]
    mod dedup {}
    #[doc = include_str!("../../../book/src/quality.md")]
    mod quality {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
}
