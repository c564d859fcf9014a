//! Blind separation of convolutive two-channel sound mixtures.
//!
//! The separation works per frequency bin: each bin of a short-time spectrum
//! is treated as an instantaneous mixture and unmixed with JADE (whitening
//! followed by joint diagonalization of fourth-order cumulant matrices). The
//! per-bin permutation ambiguity is resolved by maximizing lagged amplitude
//! correlations against a reference bin, and the per-bin scaling ambiguity is
//! fixed by an exponentially weighted least squares problem that makes the
//! time-domain demixing filters as short as possible. In dynamic mode the
//! statistics are updated over a sliding window of frames and successive
//! outputs are stitched together after a time-domain order/sign alignment.
//!
//! The main entry points are [`pipeline::separate_batch`],
//! [`pipeline::separate_dynamic`] and the incremental
//! [`pipeline::StreamingSeparator`].

pub mod align;
pub mod cli;
pub mod error;
pub mod jade;
pub mod metrics;
pub mod pipeline;
pub mod rescale;
pub mod signal_io;
pub mod spectral;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use num_complex::Complex64;
pub use signal_io::{MixingFilters, TimeSeries};
