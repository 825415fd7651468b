//! Quality assessment for tactile graphics.
//!
//! The crate turns crowd ballots on natural-photo / tactile-drawing pairs into
//! consensus-labeled binary records ([`aggregation`]), trains one small probe
//! per checkbox option over frozen image and text embeddings ([`embedding`],
//! [`probe`]), reports accuracy at option, task and family level
//! ([`evaluation`]), and uses probe scores to drive targeted image edits
//! ([`editing`]). The taxonomy and record schema live in [`corpus`].

pub mod aggregation;
pub mod corpus;
pub mod editing;
pub mod embedding;
pub mod evaluation;
pub mod probe;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/taxonomy.md")]
    mod taxonomy {}
    #[doc = include_str!("../../../book/src/aggregation.md")]
    mod aggregation {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/probes.md")]
    mod probes {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/editing.md")]
    mod editing {}
}
