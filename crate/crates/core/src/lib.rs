//! Multiscale hierarchy of particle filters.
//!
//! A corpus of trajectories is clustered by discrete Fréchet distance into a
//! single-linkage filtration tree ([`filtration::ClusterTree`]). Each cluster
//! gets a localized velocity-field model ([`dynamics::ClassDynamics`]), and a
//! stack of consistent particle filters ([`filter::FilterStack`]) tracks a
//! moving agent at every level of the tree at once. Fine observations are
//! noisy positions; coarse observations name a cluster at some level.
//!
//! The [`eval`] module holds the two baseline filters, the metrics and the
//! scenario harness; [`datasets`] and [`obsgen`] produce corpora and
//! observation streams.

pub mod datasets;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod filter;
pub mod filtration;
pub mod geometry;
pub mod io;
pub mod kdtree;
pub mod obsgen;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};
pub use filter::{FilterConfig, FilterStack, Observation, Particle, Prior};
pub use filtration::{ClusterTree, NodeId};
pub use geometry::{DistanceMatrix, Point, Trajectory};
