//! Event-aligned emotion dynamics around explicit affect-labeling statements.
//!
//! The crate follows a message corpus through the whole analysis:
//!
//! 1. [`ingest`] parses JSON Lines message records into per-subject timelines.
//! 2. [`affect`] finds "I feel ..." statements and builds filtered positive and
//!    negative cohorts anchored on the statement time `t0`.
//! 3. [`sentiment`] scores every surrounding message with a rule-based valence
//!    engine.
//! 4. [`epoch`] aligns scores on `t0` and aggregates them into offset windows.
//! 5. [`nullmodel`], [`changepoint`], [`fitting`], [`mixture`] and [`rdd`]
//!    quantify when the emotional period starts and ends, its shape, how it
//!    varies across subjects, and how male and female series differ.
//!
//! [`synthgen`] produces corpora with planted episodes and known ground truth,
//! and [`pipeline`] runs every stage end to end and persists the results.

pub mod affect;
pub mod changepoint;
pub mod epoch;
pub mod error;
pub mod fitting;
pub mod ingest;
pub mod mixture;
pub mod nullmodel;
pub mod pipeline;
pub mod rdd;
pub mod report;
pub mod sentiment;
pub mod stats;
pub mod synthgen;
pub mod time;

pub use error::{Error, Result};

/// Version tag written into every persisted JSON artifact.
pub const SCHEMA_VERSION: u32 = 1;

use serde::{Deserialize, Serialize};

/// Valence direction of an affect-labeling statement and of the cohort built on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Positive => 1.0,
            Polarity::Negative => -1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
        }
    }
}

impl std::fmt::Display for Polarity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
