//! Extreme-value diagnostics for the coupled field family.
//!
//! The scale-`t` Gaussian field on the unit torus is log-correlated as the
//! mesh shrinks: its pointwise variance grows like `(2pi)^{-1} log(1/L_t)`
//! with `L_t = sqrt(t) /\ 1/m`, so its maximum over the `n^2` sites
//! concentrates around a deterministic centring with Gumbel fluctuations.
//! This module collects the quantitative probes of that picture used by the
//! validation harness:
//!
//! * `m_eps` is the centring sequence
//!   `(2 log(1/eps) - (3/4) log log(1/eps)) / sqrt(2 pi)`
//!   for the maximum of the full-scale field at mesh `eps`.
//! * `hdphs` is the regularity profile
//!   `beta -> 2 sqrt(beta / 2 pi) - beta / (4 pi)` on `[0, 8 pi]`.  It
//!   interpolates from `0` to `2`, crosses `1` at `beta = 8 pi (1 - 1/sqrt 2)^2`,
//!   and `2 - hdphs(beta)` is the regularity budget available to the
//!   difference field at coupling `beta`.
//! * `scale_max_monitor` compares the running maximum of the scale-`t`
//!   field against the envelope `(2/sqrt(2 pi) + rho) log(1/L_t)` and
//!   reports the per-knot violation flags together with the offset
//!   `max_j (max_x Phi_{t_j}(x) - envelope(t_j))`, a proxy for the almost
//!   sure finiteness of the corresponding supremum.
//! * `integrated_a_diagnostic` accumulates
//!   `A_s = exp(sqrt(beta) max_x Phi_s(x)) * L_{s \/ eps^2}^{beta/4 pi}`
//!   over the scale grid and tracks `(int_0^t A_s ds) / L_t^delta`, which
//!   stays bounded, and decays towards small `t`, whenever
//!   `delta < 2 - hdphs(beta)`.
//! * `gumbel_fit` calibrates centred maxima against the Gumbel family
//!   `F(x) = exp(-exp(-(x - mu)/sigma))` by maximum likelihood and reports
//!   the Kolmogorov-Smirnov distance and the empirical right-tail slope,
//!   to be compared with the limit slope `sqrt(8 pi)`.
//! * `holder_constants` measures Hoelder quotients of the difference field
//!   produced by the flow solver: below the unit crossing of the profile the
//!   lattice gradient is `(1 - hdphs - delta)`-Hoelder, above it the field
//!   itself is `(2 - hdphs - delta)`-Hoelder.

use crate::covariance::CovarianceSpec;
use crate::flow::FlowState;
use crate::gff::GffPath;
use crate::torus::{lattice_gradient, Axis, LatticeField};
use crate::{LvError, Result};

use std::f64::consts::PI;

/// Centring sequence for the maximum of the full-scale field at mesh `eps`.
///
/// `m_eps = (2 log(1/eps) - (3/4) log log(1/eps)) / sqrt(2 pi)`.
/// The argument must lie in `(0, 1)`; the subtracted iterated logarithm is
/// the signature of a log-correlated (rather than independent) maximum.
pub fn m_eps(eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(LvError::BadParameter {
            name: "eps",
            value: eps,
            constraint: "0 < eps < 1",
        });
    }
    let log_inv = (1.0 / eps).ln();
    Ok((2.0 * log_inv - 0.75 * log_inv.ln()) / (2.0 * PI).sqrt())
}

/// Regularity profile `2 sqrt(beta / 2 pi) - beta / (4 pi)` on `[0, 8 pi]`.
///
/// Strictly increasing from `hdphs(0) = 0` to `hdphs(8 pi) = 2`; the value
/// `1` is attained exactly at `beta = 8 pi (1 - 1/sqrt 2)^2`, the boundary
/// between the gradient-Hoelder and field-Hoelder regimes of the
/// difference field.
pub fn hdphs(beta: f64) -> Result<f64> {
    if !(beta >= 0.0 && beta <= 8.0 * PI) {
        return Err(LvError::BadParameter {
            name: "beta",
            value: beta,
            constraint: "0 <= beta <= 8*pi",
        });
    }
    Ok(2.0 * (beta / (2.0 * PI)).sqrt() - beta / (4.0 * PI))
}

/// Effective scale length `L_t = sqrt(t) /\ 1/m`.
fn scale_length(t: f64, mass: f64) -> f64 {
    t.sqrt().min(1.0 / mass)
}

/// Per-knot comparison of the running maximum of the scale-`t` field with
/// the envelope `(2/sqrt(2 pi) + rho) log(1/L_t)`.
#[derive(Debug, Clone)]
pub struct ScaleEnvelope {
    eps: f64,
    knots: Vec<f64>,
    maxima: Vec<f64>,
    envelopes: Vec<f64>,
    violations: Vec<bool>,
    offset: f64,
}

impl ScaleEnvelope {
    /// Scale knots the monitor was evaluated on.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// `max_x Phi_{t_j}(x)` for each knot.
    pub fn maxima(&self) -> &[f64] {
        &self.maxima
    }

    /// Envelope value `(2/sqrt(2 pi) + rho) log(1/L_{t_j})` for each knot.
    pub fn envelopes(&self) -> &[f64] {
        &self.envelopes
    }

    /// `maxima[j] > envelopes[j]` for each knot.
    pub fn violations(&self) -> &[bool] {
        &self.violations
    }

    /// Largest excess `max_j (maxima[j] - envelopes[j])` over all knots.
    ///
    /// The envelope statement concerns small scales; over the window
    /// `[eps^2, t_0]` this offset stays bounded as the mesh shrinks, while
    /// at order-one scales the envelope degenerates to `0` and the offset
    /// is dominated by the field itself.
    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Number of violated knots inside the window `[eps^2, t0]`.
    pub fn violations_in_window(&self, t0: f64) -> usize {
        self.window_indices(t0).filter(|&j| self.violations[j]).count()
    }

    /// Number of knots inside the window `[eps^2, t0]`.
    pub fn window_len(&self, t0: f64) -> usize {
        self.window_indices(t0).count()
    }

    /// Largest excess over the window `[eps^2, t0]`, `-inf` if empty.
    pub fn offset_in_window(&self, t0: f64) -> f64 {
        self.window_indices(t0)
            .map(|j| self.maxima[j] - self.envelopes[j])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn window_indices(&self, t0: f64) -> impl Iterator<Item = usize> + '_ {
        let lo = self.eps * self.eps;
        self.knots
            .iter()
            .enumerate()
            .filter(move |&(_, &t)| t >= lo * (1.0 - 1e-12) && t <= t0 * (1.0 + 1e-12))
            .map(|(j, _)| j)
    }
}

/// Evaluates the small-scale maximum envelope along one sampled path.
///
/// For each knot `t_j` of `path` on grid `g` the monitor records
/// `max_x Phi_{t_j}(x)` and the envelope `(2/sqrt(2 pi) + rho) log(1/L_{t_j})`
/// with `L_t = sqrt(t) /\ 1/mass`.  `rho` must lie in `(0, 1)` and `mass`
/// must be positive.
pub fn scale_max_monitor(
    path: &GffPath,
    g: usize,
    mass: f64,
    rho: f64,
) -> Result<ScaleEnvelope> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(LvError::BadParameter {
            name: "rho",
            value: rho,
            constraint: "0 < rho < 1",
        });
    }
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(LvError::BadParameter {
            name: "mass",
            value: mass,
            constraint: "mass > 0",
        });
    }
    if g >= path.grids().len() {
        return Err(LvError::Config(format!(
            "grid index {g} out of range for a path with {} grids",
            path.grids().len()
        )));
    }
    let slope = 2.0 / (2.0 * PI).sqrt() + rho;
    let knots = path.knots().to_vec();
    let mut maxima = Vec::with_capacity(knots.len());
    let mut envelopes = Vec::with_capacity(knots.len());
    let mut violations = Vec::with_capacity(knots.len());
    let mut offset = f64::NEG_INFINITY;
    for j in 0..knots.len() {
        let max = path.field(g, j).max_value();
        let env = slope * (1.0 / scale_length(knots[j], mass)).ln();
        maxima.push(max);
        envelopes.push(env);
        violations.push(max > env);
        offset = offset.max(max - env);
    }
    Ok(ScaleEnvelope {
        eps: path.grids()[g].eps(),
        knots,
        maxima,
        envelopes,
        violations,
        offset,
    })
}

/// Prefix integrals of `A_s` against the scale grid, normalised by `L_t^delta`.
#[derive(Debug, Clone)]
pub struct IntegratedA {
    knots: Vec<f64>,
    ratios: Vec<f64>,
    sup: f64,
}

impl IntegratedA {
    /// Scale knots the quadrature ran over.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// `(int_{t_0}^{t_j} A_s ds) / L_{t_j}^delta` per knot; the entry at the
    /// first knot is `0` because the prefix quadrature starts there.
    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    /// Supremum of the ratios over all knots.
    pub fn sup(&self) -> f64 {
        self.sup
    }
}

/// Accumulates `A_s = exp(sqrt(beta) max_x Phi_s(x)) L_{s \/ eps^2}^{beta/4 pi}`
/// over the scale grid and reports `(int A)/L_t^delta` per knot.
///
/// The quadrature is trapezoidal in `log s` over the knots of `path`.
/// Requires `beta` in `(0, 8 pi)` and `delta` in `(0, 2 - hdphs(beta))`,
/// the regime in which the normalised prefix integral stays bounded.
pub fn integrated_a_diagnostic(
    path: &GffPath,
    g: usize,
    mass: f64,
    beta: f64,
    delta: f64,
) -> Result<IntegratedA> {
    if !(beta > 0.0 && beta < 8.0 * PI) {
        return Err(LvError::BadParameter {
            name: "beta",
            value: beta,
            constraint: "0 < beta < 8*pi",
        });
    }
    let budget = 2.0 - hdphs(beta)?;
    if !(delta > 0.0 && delta < budget) {
        return Err(LvError::BadParameter {
            name: "delta",
            value: delta,
            constraint: "0 < delta < 2 - hdphs(beta)",
        });
    }
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(LvError::BadParameter {
            name: "mass",
            value: mass,
            constraint: "mass > 0",
        });
    }
    if g >= path.grids().len() {
        return Err(LvError::Config(format!(
            "grid index {g} out of range for a path with {} grids",
            path.grids().len()
        )));
    }
    let eps = path.grids()[g].eps();
    let floor = eps * eps;
    let knots = path.knots().to_vec();
    let sqrt_beta = beta.sqrt();
    let values: Vec<f64> = knots
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let max = path.field(g, j).max_value();
            (sqrt_beta * max).exp() * scale_length(t.max(floor), mass).powf(beta / (4.0 * PI))
        })
        .collect();
    let mut ratios = Vec::with_capacity(knots.len());
    let mut integral = 0.0;
    let mut sup = f64::NEG_INFINITY;
    for j in 0..knots.len() {
        if j > 0 {
            // ds = s d(log s) turns the geometric grid into a uniform one.
            let dlog = (knots[j] / knots[j - 1]).ln();
            integral += 0.5 * (values[j - 1] * knots[j - 1] + values[j] * knots[j]) * dlog;
        }
        let ratio = integral / scale_length(knots[j], mass).powf(delta);
        ratios.push(ratio);
        sup = sup.max(ratio);
    }
    Ok(IntegratedA { knots, ratios, sup })
}

/// Centred per-replica maxima together with the parameters they came from.
#[derive(Debug, Clone)]
pub struct MaxSample {
    /// One centred maximum per replica.
    pub values: Vec<f64>,
    /// Grid side the maxima were taken on.
    pub n: usize,
    /// Coupling strength of the exponential interaction.
    pub beta: f64,
    /// Coupling constant multiplying the interaction.
    pub lambda: f64,
}

/// Maximum-likelihood Gumbel calibration of a sample of centred maxima.
#[derive(Debug, Clone, Copy)]
pub struct GumbelFit {
    /// Location `mu` of the fitted law `exp(-exp(-(x - mu)/sigma))`.
    pub location: f64,
    /// Scale `sigma` of the fitted law; the limit prediction is
    /// `1/sqrt(8 pi)`.
    pub scale: f64,
    /// Kolmogorov-Smirnov distance between the sample and the fitted law.
    pub ks_distance: f64,
    /// Slope of `-log P(X > x)` fitted on the upper quartile; the limit
    /// prediction is `sqrt(8 pi)`.
    pub tail_slope: f64,
    /// Newton iterations used by the scale equation.
    pub iterations: usize,
}

/// Minimum number of maxima accepted by `gumbel_fit`.
pub const GUMBEL_MIN_SAMPLES: usize = 500;

/// Fits a Gumbel law to centred maxima by maximum likelihood.
///
/// The scale solves `sigma = mean(x) - sum(x e^{-x/sigma}) / sum(e^{-x/sigma})`
/// by Newton iteration started from the moment estimate `sd * sqrt(6)/pi`;
/// the location then has the closed form `-sigma log mean(e^{-x/sigma})`.
/// The exponentials are evaluated relative to the sample minimum so the
/// weights stay in `(0, 1]`.  The right-tail slope is an independent least
/// squares fit of `log P(X > x)` over the upper quartile of the order
/// statistics.
pub fn gumbel_fit(sample: &MaxSample) -> Result<GumbelFit> {
    let x = &sample.values;
    let n = x.len();
    if n < GUMBEL_MIN_SAMPLES {
        return Err(LvError::BadParameter {
            name: "samples",
            value: n as f64,
            constraint: "at least 500 centred maxima",
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(LvError::BadParameter {
            name: "samples",
            value: f64::NAN,
            constraint: "finite centred maxima",
        });
    }
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
    if !(var > 0.0) {
        return Err(LvError::BadParameter {
            name: "samples",
            value: var,
            constraint: "nondegenerate spread",
        });
    }
    let floor = x.iter().cloned().fold(f64::INFINITY, f64::min);

    // Weighted sums S0 = sum w, S1 = sum x w, S2 = sum x^2 w with
    // w = e^{-(x - floor)/sigma}; the common factor e^{floor/sigma}
    // cancels from every ratio below.
    let sums = |sigma: f64| -> (f64, f64, f64) {
        let mut s0 = 0.0;
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for &v in x {
            let w = (-(v - floor) / sigma).exp();
            s0 += w;
            s1 += v * w;
            s2 += v * v * w;
        }
        (s0, s1, s2)
    };

    let mut sigma = (var.sqrt()) * 6f64.sqrt() / PI;
    let mut iterations = 0;
    for _ in 0..200 {
        iterations += 1;
        let (s0, s1, s2) = sums(sigma);
        let f = sigma - mean + s1 / s0;
        // f'(sigma) = 1 + (S2 S0 - S1^2) / (sigma^2 S0^2) >= 1.
        let fp = 1.0 + (s2 * s0 - s1 * s1) / (sigma * sigma * s0 * s0);
        let step = f / fp;
        let mut next = sigma - step;
        while next <= 0.0 {
            next = (sigma + next.max(0.0)) / 2.0;
        }
        let done = f.abs() <= 1e-12 * (1.0 + mean.abs());
        sigma = next;
        if done {
            break;
        }
    }
    let (s0, _, _) = sums(sigma);
    let location = floor - sigma * (s0 / nf).ln();

    let mut sorted = x.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cdf = |v: f64| (-(-(v - location) / sigma).exp()).exp();
    let mut ks = 0.0f64;
    for (i, &v) in sorted.iter().enumerate() {
        let f = cdf(v);
        ks = ks.max((f - (i + 1) as f64 / nf).abs());
        ks = ks.max((f - i as f64 / nf).abs());
    }

    // Exceedance regression over the upper quartile of the order statistics.
    let start = (3 * n) / 4;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut count = 0.0;
    for i in start..n {
        let v = sorted[i];
        let exceed = 1.0 - (i as f64 + 0.5) / nf;
        let y = exceed.ln();
        sx += v;
        sy += y;
        sxx += v * v;
        sxy += v * y;
        count += 1.0;
    }
    let denom = count * sxx - sx * sx;
    let tail_slope = if denom > 0.0 {
        -(count * sxy - sx * sy) / denom
    } else {
        f64::NAN
    };

    Ok(GumbelFit { location, scale: sigma, ks_distance: ks, tail_slope, iterations })
}

/// Regime of the Hoelder probe, selected by the computed profile value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HolderRegime {
    /// `hdphs(beta) < 1`: the lattice gradient of the difference field is
    /// `(1 - hdphs - delta)`-Hoelder.
    Gradient,
    /// `1 <= hdphs(beta) < 2`: the difference field itself is
    /// `(2 - hdphs - delta)`-Hoelder.
    Field,
}

/// Hoelder quotients of the difference field from one flow solution.
#[derive(Debug, Clone, Copy)]
pub struct HolderReport {
    /// Regime the probe ran in, selected by `hdphs(beta)`.
    pub regime: HolderRegime,
    /// Computed profile value `hdphs(beta)`.
    pub rho_beta: f64,
    /// Hoelder exponent used in the quotient.
    pub exponent: f64,
    /// `max_j sup_x |Phi^Delta_{t_j}(x)|` over all knots.
    pub max_abs: f64,
    /// Sup norm of the lattice gradient at the finest knot.
    pub max_grad_abs: f64,
    /// `sup |f(x) - f(y)| / d(x,y)^exponent` of the finest-knot difference
    /// field over pairs with `0 < d(x,y) <= 1/4` (field regime only).
    pub field_quotient: Option<f64>,
    /// Same quotient for both components of the lattice gradient
    /// (gradient regime only).
    pub grad_quotient: Option<f64>,
}

/// Largest pair distance entering the Hoelder quotients.
pub const HOLDER_MAX_DISTANCE: f64 = 0.25;

/// `sup |f(x) - f(y)| / d(x, y)^exponent` over site pairs within
/// `max_distance` in torus metric.
fn holder_quotient(field: &LatticeField, exponent: f64, max_distance: f64) -> f64 {
    let grid = field.grid();
    let n = grid.n();
    let eps = grid.eps();
    let f = field.as_slice();
    let axis_len = |d: usize| -> f64 { d.min(n - d) as f64 * eps };
    let mut quotient = 0.0f64;
    for di in 0..n {
        for dj in 0..n {
            if di == 0 && dj == 0 {
                continue;
            }
            let dx = axis_len(di);
            let dy = axis_len(dj);
            let dist = (dx * dx + dy * dy).sqrt();
            if dist > max_distance {
                continue;
            }
            let denom = dist.powf(exponent);
            let mut max_diff = 0.0f64;
            for i in 0..n {
                let ii = (i + di) % n;
                for j in 0..n {
                    let jj = (j + dj) % n;
                    let diff = (f[ii * n + jj] - f[i * n + j]).abs();
                    max_diff = max_diff.max(diff);
                }
            }
            quotient = quotient.max(max_diff / denom);
        }
    }
    quotient
}

/// Measures Hoelder quotients of the difference field of `state`.
///
/// The regime is selected by the computed profile value `hdphs(beta)`:
/// below `1` the probe measures the gradient quotient at exponent
/// `1 - hdphs - delta`, at or above `1` the field quotient at exponent
/// `2 - hdphs - delta`.  Quotients are taken on the finest-knot field,
/// the roughest member of the family, over pairs within torus distance
/// `1/4`; `delta` must leave the exponent positive.
pub fn holder_constants(state: &FlowState, beta: f64, delta: f64) -> Result<HolderReport> {
    let rho_beta = hdphs(beta)?;
    let (regime, exponent) = if rho_beta < 1.0 {
        (HolderRegime::Gradient, 1.0 - rho_beta - delta)
    } else {
        (HolderRegime::Field, 2.0 - rho_beta - delta)
    };
    if !(delta > 0.0 && exponent > 0.0) {
        return Err(LvError::BadParameter {
            name: "delta",
            value: delta,
            constraint: "0 < delta < regularity budget of the regime",
        });
    }
    let knots = state.knots().len();
    let mut max_abs = 0.0f64;
    for j in 0..knots {
        max_abs = max_abs.max(state.difference_field(j).sup_norm());
    }
    let finest = state.difference_field(0);
    let grad_x = lattice_gradient(finest, Axis::X);
    let grad_y = lattice_gradient(finest, Axis::Y);
    let max_grad_abs = grad_x.sup_norm().max(grad_y.sup_norm());
    let (field_quotient, grad_quotient) = match regime {
        HolderRegime::Field => {
            (Some(holder_quotient(finest, exponent, HOLDER_MAX_DISTANCE)), None)
        }
        HolderRegime::Gradient => {
            let qx = holder_quotient(&grad_x, exponent, HOLDER_MAX_DISTANCE);
            let qy = holder_quotient(&grad_y, exponent, HOLDER_MAX_DISTANCE);
            (None, Some(qx.max(qy)))
        }
    };
    Ok(HolderReport {
        regime,
        rho_beta,
        exponent,
        max_abs,
        max_grad_abs,
        field_quotient,
        grad_quotient,
    })
}

/// Sup norm of the order-`k` forward divided difference, `k` in `{1, 2}`.
///
/// Order `1` is the larger of the two lattice gradient components; order
/// `2` maximises over all four iterated components.  Multiplied by `L_t^k`
/// this measures the smoothness of a positive-scale field on its natural
/// length.
pub fn derivative_sup(field: &LatticeField, order: usize) -> Result<f64> {
    match order {
        1 => {
            let gx = lattice_gradient(field, Axis::X);
            let gy = lattice_gradient(field, Axis::Y);
            Ok(gx.sup_norm().max(gy.sup_norm()))
        }
        2 => {
            let mut sup = 0.0f64;
            for a in [Axis::X, Axis::Y] {
                let g = lattice_gradient(field, a);
                for b in [Axis::X, Axis::Y] {
                    sup = sup.max(lattice_gradient(&g, b).sup_norm());
                }
            }
            Ok(sup)
        }
        _ => Err(LvError::BadParameter {
            name: "order",
            value: order as f64,
            constraint: "order in {1, 2}",
        }),
    }
}

/// Verifies that `cov` and the monitored field live on the same grid.
///
/// Convenience guard for harness code that pairs a sampled path with an
/// externally supplied covariance.
pub fn check_same_grid(cov: &CovarianceSpec, field: &LatticeField) -> Result<()> {
    if cov.grid().n() != field.grid().n() {
        return Err(LvError::DimensionMismatch {
            left: cov.grid().n(),
            right: field.grid().n(),
        });
    }
    Ok(())
}
