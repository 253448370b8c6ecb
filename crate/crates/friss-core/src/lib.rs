//! FRISS: a semi-supervised, interpretable multi-view frame classifier.
//!
//! The pipeline: SRL-pre-annotated documents ([`corpus`]) are embedded by a
//! pluggable encoder ([`encoding`]), passed through a multi-view
//! dictionary-learning autoencoder ([`autoencoder`]) and a document-level
//! classifier ([`classifier`]), jointly optimized ([`trainer`]). Trained
//! dictionaries are interpreted via descriptor extraction and span
//! highlighting ([`interpret`]).

pub mod autoencoder;
pub mod classifier;
pub mod corpus;
pub mod encoding;
pub mod error;
pub mod graph;
pub mod interpret;
pub mod model;
pub mod synthetic;
pub mod trainer;

pub use error::{FrissError, Result};
