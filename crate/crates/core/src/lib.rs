//! Incremental ML-pipeline engine with shadow pipelines for data-centric
//! debugging.
//!
//! A [`plan::PipelinePlan`] is executed by [`engine`] over a
//! [`corpus::Dataset`]. Shadow pipelines in [`shadow`] inspect the run for
//! elevated-error slices, likely label errors and typo robustness, and turn
//! their findings into [`suggest::Suggestion`]s whose impact is measured by
//! re-running only the affected rows. [`ivm`] maintains runs across plan
//! edits and [`session::Session`] ties everything into the interactive loop
//! served by the CLI and the HTTP API.

pub mod bench;
pub mod corpus;
pub mod engine;
pub mod ivm;
pub mod plan;
pub mod relation;
pub mod server;
pub mod session;
pub mod shadow;
pub mod suggest;
pub mod text;
