//! Comparison models: a Bayesian multinomial HMM whose states emit words
//! directly, and LDA over flat documents.

pub mod bmhmm;
pub mod lda;

pub use bmhmm::{BmHmmCheckpoint, BmHmmModel};
pub use lda::{LdaCheckpoint, LdaModel, LdaParams};
