//! Software model of TFHE programmable bootstrapping with a configurable
//! fixed-point FFT datapath.
//!
//! The crate is organized around the dataflow of a gate bootstrap:
//!
//! - [`torus`]: discretized-torus arithmetic, the three ciphertext forms
//!   (TLWE / TGLWE / TGGSW), key generation and signed gadget decomposition.
//! - [`fixed`]: emulation of parameterized two's-complement fixed-point
//!   arithmetic, including the 3-multiply complex product used by the
//!   FFT butterflies.
//! - [`fft`]: negacyclic polynomial multiplication via fold + twist + cyclic
//!   size-N/2 FFT, runnable on an exact double-precision reference path or
//!   on the emulated fixed-point path with a per-stage scaling schedule.
//! - [`pbs`]: test-polynomial encoding, CMUX, blind rotation, batch
//!   bootstrapping and the bootstrapped NAND gate.
//! - [`noise`]: MSB placement from overflow probability, LSB selection from
//!   measured approximation-noise variance, and parameter sweeps.
//! - [`perf`]: analytic streaming-pipeline model (cycles, batch size,
//!   latency, throughput, bootstrapping-key bandwidth).

pub mod fft;
pub mod fixed;
pub mod io;
pub mod noise;
pub mod params;
pub mod pbs;
pub mod perf;
pub mod rng;
pub mod torus;

mod error;

pub use error::Error;
pub use fixed::{FixedPointFormat, FixedPointValue, FpContext, OverflowMode, RoundingMode};
pub use params::{DatapathFormats, ParamSet, TfheParams};
pub use torus::{TorusElement, TorusPolynomial};

pub type Result<T> = std::result::Result<T, Error>;
