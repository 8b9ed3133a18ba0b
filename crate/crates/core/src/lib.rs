//! Transductive string kernels and the two-round transductive kernel
//! classifier for cross-domain text classification.
//!
//! The pipeline:
//!
//! 1. [`ngram`]: character n-gram profiles and the presence, intersection
//!    and spectrum kernels, blended over a range of n-gram lengths.
//! 2. [`matrix`]: the full kernel matrix over training and test documents,
//!    normalized, passed through an RBF transform and multiplied with its
//!    transpose to obtain a kernel adapted to the test set.
//! 3. [`classifier`]: one-versus-all kernel ridge regression in dual form.
//! 4. [`tkc`]: two rounds of training, where the most confidently labeled
//!    test samples join the training set for the second round.
//! 5. [`corpus`] and [`eval`]: review ingestion, experiment splits,
//!    accuracy and McNemar's test.

pub mod classifier;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod matrix;
pub mod ngram;
pub mod tkc;

pub use error::{Error, Result};
