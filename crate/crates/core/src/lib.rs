//! Spanning crowns in spectral expanders, and the Hamilton cycles in the
//! graph square that they certify.
//!
//! The pipeline takes a near-regular expander, splits off three matchmaker
//! sets, threads one of them onto a path with a rollback-based tree
//! embedder, closes a cycle of length `⌈n/2⌉` from two double brooms, and
//! matches the remaining vertices onto it as spikes. Every stage output is
//! re-verified, and [`certify`] checks the final crown without trusting
//! any of the construction code.

pub mod certificate;
pub mod certify;
pub mod embedder;
pub mod generators;
pub mod graph;
pub mod matching;
pub mod matchmaker;
pub mod pipeline;
pub mod rng;
pub mod spectral;

pub use certificate::{Crown, PipelineCertificate, SquareHamiltonCertificate};
pub use graph::{Graph, GraphError, VertexSet};
