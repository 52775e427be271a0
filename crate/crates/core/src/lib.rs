//! Evaluation harness for steering and measuring how well LLM decision-makers
//! align to decision-maker attributes (DMAs) on labeled triage scenarios.
//!
//! The pipeline is: load a [`dataset::Dataset`], assemble prompts for a mode
//! ([`prompts`]), sample completions from a [`backend::Backend`], extract the
//! chosen index ([`parsing`]), aggregate samples with weighted self-consistency
//! ([`consistency`]), and score the decisions ([`metrics`]). The [`runner`]
//! orchestrates all of it and persists every raw completion so a run can be
//! replayed offline; [`report`] renders the results.

pub mod backend;
pub mod cli;
pub mod consistency;
pub mod dataset;
pub mod metrics;
pub mod parsing;
pub mod prompts;
pub mod report;
pub mod runner;

pub use dataset::{Attribute, Choice, Dataset, Level, Scenario};
pub use prompts::{AlignmentMode, AlignmentTarget, PromptBundle};
