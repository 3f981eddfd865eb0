//! Expert-routing analysis for Mixture-of-Experts language models.
//!
//! The pipeline: parse a POS-annotated corpus ([`corpus`]), segment it into
//! subtokens that inherit their word's tag ([`tokenizer`]), record which
//! experts each token is routed to at every layer ([`moe`], [`trace`]),
//! then measure how concentrated each POS is on a few experts
//! ([`metrics`]), how well routing paths predict POS ([`probe`]) and how
//! paths cluster in 2D ([`projection`]). [`report`] renders the results.

pub mod corpus;
pub mod tokenizer;
pub mod linalg;
pub mod moe;
pub mod trace;
pub mod metrics;
pub mod probe;
pub mod projection;
pub mod report;
