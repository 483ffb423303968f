//! Micro-video tagging on a heterogeneous video-tag network.
//!
//! The pipeline runs in five stages, one module each:
//!
//! * [`corpus`]: load and split annotated videos, follow edges and tag
//!   embeddings;
//! * [`ontology`]: discover `is_subtopic_of` relations from tag
//!   co-occurrence and prune them into a DAG;
//! * [`hetgraph`]: build the directed video-tag network and sample layered
//!   neighborhoods;
//! * [`radar`]: the gated graph transformer / adversarial aggregation GNN,
//!   trained by [`trainer`] and scored by [`eval`].
//!
//! [`synthgen`] produces synthetic corpora with a planted ontology and
//! controllable imitation between followed creators.

pub mod autodiff;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod hetgraph;
pub mod ontology;
pub mod radar;
pub mod real;
pub mod synthgen;
pub mod trainer;

pub use error::{RadarError, Result};
pub use real::Real;
