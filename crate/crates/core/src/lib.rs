//! Rotation- and scale-invariant point cloud classification from graphs of
//! surface parts.
//!
//! Modules, bottom-up: [`geometry`] (clouds, I/O, spatial index, sampling),
//! [`part_graph`] (part growing, frames, connectivity), [`nn`] (tensors,
//! autodiff tape, layers, optimizer), [`skpconv`] (kernel point
//! convolutions), [`voting`] (center votes and clustering) and
//! [`pipeline`] (data, training, evaluation, command line).

pub mod error;
pub mod geometry;
pub mod nn;
pub mod part_graph;
pub mod pipeline;
pub mod skpconv;
pub mod voting;

pub use error::{Error, Result};

/// The guide in `book/`, compiled so its snippets run as doctests.
#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/point-clouds.md")]
    pub struct PointClouds;
    #[doc = include_str!("../../../book/src/part-graphs.md")]
    pub struct PartGraphs;
    #[doc = include_str!("../../../book/src/autodiff.md")]
    pub struct Autodiff;
    #[doc = include_str!("../../../book/src/convolutions.md")]
    pub struct Convolutions;
    #[doc = include_str!("../../../book/src/voting.md")]
    pub struct Voting;
    #[doc = include_str!("../../../book/src/pipeline.md")]
    pub struct Pipeline;
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct Cli;
}
