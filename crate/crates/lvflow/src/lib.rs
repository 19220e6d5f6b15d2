//! Lattice Liouville measure coupled to the Gaussian free field on the
//! two-dimensional unit torus, driven by a renormalisation flow over scales.
//!
//! The crate builds three coupled random fields on the dyadic torus
//! `Ω_ε = {0, ε, …, 1−ε}²`, `1/ε = 2^k`:
//!
//! * `Φ^GFF`, the massive Gaussian free field with covariance `(−Δ^ε + m²)⁻¹`,
//!   decomposed over a geometric grid of scales,
//! * `Φ^Lv`, the Liouville field, obtained from the same driving noise by a
//!   backward stochastic flow whose drift is the gradient of a renormalised
//!   potential,
//! * `Φ^Δ = Φ^Lv − Φ^GFF`, the non-positive difference field.
//!
//! Modules follow the pipeline: [`torus`] (grids, fields, spectral transforms),
//! [`covariance`] (heat-kernel multipliers and scale grids), [`streams`]
//! (counter-based noise keys), [`gff`] (coupled Gaussian paths), [`potential`]
//! (renormalised potential, drift and Hessian estimators), [`flow`] (Picard
//! solver for the backward SDE), [`gmc`] (Gaussian multiplicative chaos
//! diagnostics), [`extremes`] (maxima, envelopes, Gumbel fits), [`oracle`]
//! (importance-sampling ground truth), plus [`config`]/[`manifest`]/[`report`]
//! for the command-line harness.

pub mod config;
pub mod covariance;
pub mod extremes;
pub mod fft;
pub mod flow;
pub mod gff;
pub mod gmc;
pub mod manifest;
pub mod oracle;
pub mod potential;
pub mod report;
pub mod streams;
pub mod tolerances;
pub mod torus;

use std::fmt;

/// Crate-wide error type.
///
/// Numerical routines prefer returning data with diagnostics over failing;
/// errors are reserved for violated preconditions and genuinely unusable
/// states (overflow ceilings, degenerate ensembles, bad configuration).
#[derive(Debug, Clone, PartialEq)]
pub enum LvError {
    /// Grid side is not a power of two, or is too small.
    BadGridSize(usize),
    /// Two fields or coefficient sets live on different grids.
    DimensionMismatch { left: usize, right: usize },
    /// A scalar parameter is outside its admissible range.
    BadParameter { name: &'static str, value: f64, constraint: &'static str },
    /// An exponent would overflow `f64` (red-flag event; see `potential`).
    Overflow { exponent: f64 },
    /// Importance-sampling ensemble is too degenerate to use.
    EssBelowFloor { ess: f64, floor: f64 },
    /// Monte Carlo weights collapsed below representable range.
    DegenerateWeights { mean: f64 },
    /// Scale grid with a knot ratio above 2 cannot resolve the flow.
    ScaleGridTooCoarse { ratio: f64 },
    /// Configuration file or override could not be parsed.
    Config(String),
    /// Filesystem or serialisation failure in the harness.
    Io(String),
}

impl fmt::Display for LvError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LvError::BadGridSize(n) => {
                write!(f, "grid side {n} is not a power of two >= 2")
            }
            LvError::DimensionMismatch { left, right } => {
                write!(f, "grid sides differ: {left} vs {right}")
            }
            LvError::BadParameter { name, value, constraint } => {
                write!(f, "parameter {name} = {value} violates {constraint}")
            }
            LvError::Overflow { exponent } => {
                write!(f, "exponential overflow: exponent {exponent} exceeds the f64 ceiling")
            }
            LvError::EssBelowFloor { ess, floor } => {
                write!(f, "effective sample size {ess:.1} below floor {floor:.1}")
            }
            LvError::DegenerateWeights { mean } => {
                write!(f, "weight mean {mean:.3e} below representable floor")
            }
            LvError::ScaleGridTooCoarse { ratio } => {
                write!(f, "scale grid ratio {ratio} exceeds 2; refine the grid")
            }
            LvError::Config(msg) => write!(f, "config error: {msg}"),
            LvError::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl std::error::Error for LvError {}

impl From<std::io::Error> for LvError {
    fn from(e: std::io::Error) -> Self {
        LvError::Io(e.to_string())
    }
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, LvError>;
