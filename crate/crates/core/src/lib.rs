//! Constraint-profile retrieval, tree search and solver-guided repair for
//! LLM-generated constraint models.
//!
//! The pipeline turns a natural-language problem into a CP model program:
//! an analyzer model extracts the problem's constraint profile, exemplars
//! with overlapping profiles are retrieved, a modeling model writes a
//! candidate, the candidate is checked against test cases through an
//! external runner, and failures are repaired with retrieved correction
//! exemplars.

pub mod bench;
pub mod candidate;
pub mod carm;
pub mod commands;
pub mod config;
pub mod correction;
pub mod gateway;
pub mod harness;
pub mod ontology;
pub mod pipeline;
pub mod store;
pub mod stub;
pub mod tot;

pub use candidate::{CandidateModel, Provenance};
pub use ontology::{ConstraintProfile, ConstraintType, Ontology};
