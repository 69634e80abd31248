//! Mobility dataset characterization and next-place model selection.

pub mod error;
pub mod ingest;
pub mod meta;
pub mod model;
pub mod pipeline;
pub mod poi;
pub mod predictors;
pub mod selector;
pub mod synthgen;
pub mod validation;

pub use error::{Error, ErrorKind, Result};
pub use model::{
    concat_user_streams, Coord, Dataset, GeoPoint, PoiAlphabet, PoiId, PoiRecord, PoiSequence,
    Provenance, RawTrajectory, RunPolicy, SeparatorPolicy, SymbolStream, Timestamp, Visit,
};
