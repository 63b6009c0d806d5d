//! Location privacy evaluation for crowdsensed measurement traces.
//!
//! Traces are ingested, protected by a location privacy mechanism, attacked
//! by a clustering adversary and scored for privacy gain and data utility.

pub mod attack;
pub mod error;
pub mod geo;
pub mod index;
pub mod ingest;
pub mod lppm;
pub mod metrics;
pub mod seed;
pub mod synth;
pub mod trace;
pub mod utility;

pub use error::{Error, Result};
pub use geo::{haversine, GeoPoint};
pub use trace::{Measurement, UserTrace, UtcOffset};
