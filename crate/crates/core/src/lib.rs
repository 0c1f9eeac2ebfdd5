//! Compressive blind signal separation: acquire mixed signals through a
//! random Bernoulli measurement operator, separate them directly in the
//! compressed domain with a learned two-decoder model, and evaluate the
//! separation with a frozen-model classifier. A constructive harness
//! checks the exact reconstruct-separate-recompress composition and its
//! sqrt(k)-scaled error bound on finite signal families.

pub mod data;
pub mod error;
pub mod experiment;
pub mod mixing;
pub mod neural;
pub mod oracle;
pub mod sensing;
pub mod sparse_recovery;

pub use error::{Error, Result};
pub use mixing::{build_mixture_family, mix, MixedSample, SignalSet};
pub use neural::SeparatorModel;
pub use sensing::{rip_audit, SensingMatrix};
pub use sparse_recovery::{omp_reconstruct, RecoveryResult, SparseVector};
