//! Numerical tolerances of the validation harness.
//!
//! Every constant is either an exactness tolerance (identities that hold
//! to rounding), a sigma multiplier on Monte Carlo standard errors, or a
//! stability band for quantities the theory bounds only up to an
//! unspecified constant.  They are collected here so each acceptance
//! statement names its tolerance instead of burying a literal.

/// Tolerance for spectral identities that hold exactly (closed-form
/// eigenvalues, heat-kernel row sums, covariance entries on tiny grids).
pub const EXACT_TOL: f64 = 1e-12;

/// Allowed relative variation across the mesh ladder of the range of
/// `c_t(x, y) - (1/2 pi) log(L_t / (|x-y| \/ eps))`.  The log-correlation
/// statement bounds the deviation by a mesh-independent constant; 20%
/// absorbs the lattice anisotropy of the smallest grids.
pub const LOG_CORR_RANGE_DRIFT: f64 = 0.20;

/// Cap on the constant `C` in
/// `E[(R_t(x, eps2) - R_t(x, eps1))^2] <= C (eps2 - eps1) / L_t`
/// over the whole `(t, eps-pair)` matrix of the mesh-increment check.
/// Pinned from an exact spectral evaluation maximised over the rounding
/// cell (largest observed ratio 0.004241 at t = 0.05, pair 2^-4 vs 2^-5,
/// mass 1) with better than 2x headroom.
pub const MESH_INCREMENT_CONSTANT_CAP: f64 = 0.01;

/// Sigma multiplier for one-sided Monte Carlo inequality checks (FKG
/// covariance sign, drift sandwich, difference-field sign).
pub const INEQUALITY_SIGMA: f64 = 3.0;

/// Sigma multiplier for the gradient consistency check between the drift
/// estimator and finite differences of the potential estimator.
pub const GRADIENT_SIGMA: f64 = 3.0;

/// Sigma multiplier for the endpoint-law battery; wider than the
/// inequality band because the flow side carries quadrature bias that
/// only vanishes under scale-grid refinement.
pub const ENDPOINT_SIGMA: f64 = 4.0;

/// Envelope excess parameter of the scale-maximum monitor.
pub const ENVELOPE_RHO: f64 = 0.99;

/// Upper end of the small-scale window `[eps^2, t0]` the envelope
/// statement is asserted on; the underlying good event concerns scales
/// below an order-one threshold.
pub const ENVELOPE_WINDOW_T0: f64 = 0.01;

/// Largest accepted fraction of replicas with any envelope violation in
/// the window.
pub const ENVELOPE_MAX_VIOLATION_RATE: f64 = 0.01;

/// Regularity margin subtracted from the Hoelder exponent budgets.
pub const HOLDER_DELTA: f64 = 0.1;

/// Allowed relative deviation from linear `lambda` scaling of the
/// Hoelder constants over `lambda` in `{0.5, 1, 2}`.
pub const HOLDER_LINEARITY_BAND: f64 = 0.30;

/// Allowed factor between Hoelder constants measured on successive
/// grids of the shared-mode mesh ladder.
pub const HOLDER_EPS_STABILITY_FACTOR: f64 = 1.5;

/// Band around `0` for `E[max Phi_0^GFF] - m_eps` across the mesh ladder.
pub const MAX_CENTRING_BAND: f64 = 2.0;

/// Largest accepted Kolmogorov-Smirnov distance of the Gumbel fit to
/// centred interacting maxima.
pub const GUMBEL_KS_MAX: f64 = 0.08;

/// Allowed relative deviation of the fitted right-tail slope from the
/// limit slope `sqrt(8 pi)`.
pub const GUMBEL_TAIL_SLOPE_BAND: f64 = 0.25;

/// Sigma multiplier for the chaos-measure diagnostics (unit mean,
/// second moment, potential reconstruction).
pub const GMC_SIGMA: f64 = 3.0;
