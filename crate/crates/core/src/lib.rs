//! Joint span-based extraction of scientific entities, relations and
//! coreference clusters, with evaluation and a corpus-level knowledge graph.

pub mod autodiff;
pub mod cli;
pub mod corpus;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod io;
pub mod kgraph;
pub mod labels;
pub mod metrics;
pub mod model;
pub mod scorer;
pub mod spanspace;
pub mod trainer;

pub use error::{Error, Result, ValidationError};
