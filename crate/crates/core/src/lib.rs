//! Grey-guided hazard classification.
//!
//! Token embeddings of a hazard description are squeezed into a scalar
//! series, a Fourier-forced grey model is fitted to its averaged
//! accumulation, and the fitted time-response coefficients are appended to
//! every token as guidance features for a hierarchical feature-fusion
//! classifier.

pub mod grey;
pub mod hts;
pub mod hffnn;
pub mod metrics;
pub mod nn;
pub mod pipeline;
