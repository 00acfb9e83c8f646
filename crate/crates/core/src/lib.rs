//! Interactive symbolic map-world toolkit.
//!
//! The crate models a partially observable grid city (roads, intersections,
//! POIs), runs goal-driven exploration episodes over it, consolidates the
//! resulting event traces into four spatial memory representations, generates
//! five families of multiple-choice spatial tasks with ground-truth oracles,
//! executes four prompting schemes against pluggable agent endpoints, and
//! aggregates everything through an experiment harness with a CLI.

pub mod explore;
pub mod harness;
pub mod ingest;
pub mod mapenv;
pub mod memory;
pub mod reason;
pub mod synth;
pub mod tasks;
mod util;
