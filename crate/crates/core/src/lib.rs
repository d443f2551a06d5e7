//! Deterministic hard-sphere dynamics and a term-by-term evaluator of the
//! hard-sphere BBGKY and Enskog series for empirical (Dirac) measures.

pub mod dynamics;
pub mod empirical;
pub mod enskog;
pub mod flows;
pub mod geometry;
pub mod hierarchy;
pub mod scenarios;
pub mod trees;

/// Version tag carried by every scenario file and report.
pub const SCHEMA_VERSION: u32 = 1;
