//! Structured extraction of scientific papers from LaTeX sources.
//!
//! The pipeline turns a bundle of `.tex` files into a [`corpus::PaperDocument`]:
//! a section tree of sentences, a list of typed objects (tables, figures,
//! equations, algorithms, theorems, verbatim blocks, text blocks), parsed
//! bibliography entries, and citation links resolved against an external
//! metadata database. On top of the corpus, [`taskgen`] derives two
//! text-generation datasets: description samples (object content plus the
//! body-text context preceding the sentence that first refers to the object)
//! and paragraph samples (abstract plus 300-word passages from cited papers).
//!
//! Stages, in order:
//!
//! 1. [`ingest`] — entry detection, comment stripping, include merging,
//!    user-macro expansion.
//! 2. [`parse`] — environment block extraction, section tree, sentence
//!    splitting, citation markers.
//! 3. [`classify`] — env name to one of seven object kinds (plus `other`).
//! 4. [`postprocess`] — table linearization, equation/emphasis tokens,
//!    figure path extraction.
//! 5. [`bibres`] — bibliography field extraction and edit-distance linking.
//! 6. [`corpus`] — document assembly, word-count/section filters, stats,
//!    JSONL emission.
//! 7. [`taskgen`] — dataset derivation and context selectors.
//!
//! The `texstruct` binary drives the stages as subcommands; see [`cli`].

pub mod bibres;
pub mod classify;
pub mod cli;
pub mod corpus;
pub mod ingest;
pub mod parse;
pub mod postprocess;
mod scan;
pub mod taskgen;

/// A non-fatal condition noticed while processing one paper.
///
/// Warnings never abort a batch; the CLI collects them into a JSON-lines log.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Warning {
    /// Pipeline stage that raised the warning ("ingest", "parse", ...).
    pub stage: String,
    pub message: String,
}

impl Warning {
    pub fn new(stage: &str, message: impl Into<String>) -> Self {
        Warning {
            stage: stage.to_string(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Warning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}] {}", self.stage, self.message)
    }
}
