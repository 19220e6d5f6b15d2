//! The Wick-ordered exponential potential and its renormalised descendants.
//!
//! The bare potential on `Ω_ε` is
//!
//! ```text
//! v₀(φ) = λ ∫ :e^{√β φ_x}:_ε dx,    :e^{√β φ}:_ε = ε^{β/4π} e^{√β φ},
//! ```
//!
//! and integrating the Gaussian field below scale `t` out of the partition
//! function defines the renormalised potential
//!
//! ```text
//! v_t(φ) = −log E_ζ[e^{−v₀(φ+ζ)}],    ζ ~ N(0, c_t).
//! ```
//!
//! Everything the flow needs is a conditional expectation under the weight
//! `w = e^{−v₀(φ+ζ)} ∈ (0, 1]`:
//!
//! * gradient (Fréchet, w.r.t. `⟨f,g⟩ = ε²Σfg`):
//!   `(∇v_t)_x = √β λ E[:e^{√β(φ_x+ζ_x)}:_ε w] / E[w]`,
//! * drift: `ċ_t ∇v_t(φ)`, one heat convolution of the gradient,
//! * Hessian entries: tilted covariances of Wick exponentials; the diagonal
//!   carries the lattice delta `ε^{−2}`.
//!
//! The Wick factor at scale `t` is exact here: `E[:e^{√β(φ+ζ)}:_ε] =
//! ε^{β/4π} e^{(β/2)c_t(x,x)} e^{√βφ}`, which behaves like `L_t^{β/4π}e^{√βφ}`
//! up to a mass-dependent constant. Bounds are checked with the exact factor;
//! the asymptotic shorthand enters only normalisations of reported constants.
//!
//! Estimators draw sample `i` from its own keyed stream, share each draw `ζ`
//! across every site and across numerator and denominator (maximal variance
//! cancellation; consistent, with O(1/M) ratio bias), and report honest
//! uncertainty through batch means over 16 sample blocks.

use crate::covariance::{cap_l, theta, CovarianceSpec};
use crate::gff::sample_with_variance_table;
use crate::streams::SampleStream;
use crate::torus::LatticeField;
use crate::{LvError, Result};

/// Exponent ceiling: beyond this, `exp` overflows `f64`. Hitting it is a
/// red-flag event for the harness, not a recoverable state.
const EXP_CEILING: f64 = 700.0;

/// Number of sample blocks used for batch-means standard errors.
const BATCHES: usize = 16;

/// Coupling constants of the exponential interaction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialParams {
    beta: f64,
    lambda: f64,
}

impl PotentialParams {
    /// Requires `0 < β < 8π` (the subcritical window) and `λ ≥ 0`; `λ = 0`
    /// is admitted so the free field embeds as a degenerate case.
    pub fn new(beta: f64, lambda: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 8.0 * std::f64::consts::PI) {
            return Err(LvError::BadParameter {
                name: "beta",
                value: beta,
                constraint: "0 < beta < 8*pi",
            });
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(LvError::BadParameter {
                name: "lambda",
                value: lambda,
                constraint: "lambda >= 0",
            });
        }
        Ok(PotentialParams { beta, lambda })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// `length^{β/4π} e^{√β φ_x}` entrywise: the Wick-ordered exponential at an
/// arbitrary reference length.
pub fn wick_exp(params: PotentialParams, length: f64, phi: &LatticeField) -> Result<LatticeField> {
    if !(length > 0.0) {
        return Err(LvError::BadParameter {
            name: "length",
            value: length,
            constraint: "length > 0",
        });
    }
    let sqrt_beta = params.beta.sqrt();
    let log_prefactor = params.beta / (4.0 * std::f64::consts::PI) * length.ln();
    let peak = sqrt_beta * phi.max_value() + log_prefactor;
    if peak > EXP_CEILING {
        return Err(LvError::Overflow { exponent: peak });
    }
    let values = phi.as_slice().iter().map(|&v| (sqrt_beta * v + log_prefactor).exp()).collect();
    LatticeField::from_values(phi.grid(), values)
}

/// Reference length realising the exact scale-`t` Wick factor: with
/// `ℓ = ε e^{2π c_t(x,x)}`, one has `ℓ^{β/4π} = ε^{β/4π} e^{(β/2)c_t(x,x)}`,
/// so `wick_exp(params, ℓ, φ) = E[:e^{√β(φ+ζ)}:_ε]` exactly, for every `β`.
/// Asymptotically `ℓ ≍ L_t`.
pub fn wick_scale_length(cov: &CovarianceSpec, t: f64) -> f64 {
    cov.grid().eps() * (2.0 * std::f64::consts::PI * cov.diag_variance(t)).exp()
}

/// `v₀(φ) = λ ∫ :e^{√βφ}:_ε dx ≥ 0`.
pub fn v0(params: PotentialParams, phi: &LatticeField) -> Result<f64> {
    if params.lambda == 0.0 {
        return Ok(0.0);
    }
    let wick = wick_exp(params, phi.grid().eps(), phi)?;
    Ok(params.lambda * wick.discrete_integral())
}

/// Jensen upper bound `λ ∫ ε^{β/4π} e^{√βφ_x + (β/2)c_t(x,x)} dx ≥ v_t(φ)`.
pub fn jensen_bound(params: PotentialParams, cov: &CovarianceSpec, t: f64, phi: &LatticeField) -> Result<f64> {
    let wick = wick_exp(params, wick_scale_length(cov, t), phi)?;
    Ok(params.lambda * wick.discrete_integral())
}

/// Monte Carlo estimate of `v_t(φ)` with its delta-method standard error.
pub fn estimate_vt(
    params: PotentialParams,
    cov: &CovarianceSpec,
    t: f64,
    phi: &LatticeField,
    m_samples: usize,
    stream: &SampleStream,
) -> Result<(f64, f64)> {
    if m_samples < 2 {
        return Err(LvError::BadParameter {
            name: "m_samples",
            value: m_samples as f64,
            constraint: "M >= 2",
        });
    }
    if params.lambda == 0.0 {
        return Ok((0.0, 0.0));
    }
    let table = cov.cov_table(t);
    // Weights e^{−v₀} can underflow on fields with large positive peaks, so
    // they are rescaled by the smallest sampled v₀; the shift cancels in the
    // relative error and is added back to the log of the mean.
    let mut exponents = Vec::with_capacity(m_samples);
    for i in 0..m_samples {
        let mut rng = stream.rng(i as u32);
        let zeta = sample_with_variance_table(cov.grid(), &table, &mut rng);
        let shifted = phi.add(&zeta)?;
        exponents.push(v0(params, &shifted)?);
    }
    let c = exponents.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for &e in &exponents {
        let w = (-(e - c)).exp();
        sum += w;
        sum_sq += w * w;
    }
    let m = m_samples as f64;
    let mean = sum / m;
    if !(mean > 1e-300) {
        return Err(LvError::DegenerateWeights { mean });
    }
    let var = (sum_sq / m - mean * mean).max(0.0) / (m - 1.0);
    Ok((c - mean.ln(), var.sqrt() / mean))
}

/// One drift evaluation `ċ_t ∇v_t(φ)` with uncertainty.
#[derive(Debug, Clone)]
pub struct DriftEstimate {
    /// `ċ_t ∇v_t(φ)`, pooled over all inner samples.
    pub value: LatticeField,
    /// Per-site batch-means standard error of `value`.
    pub stderr: LatticeField,
    /// Inner sample count.
    pub m_samples: usize,
    /// Mean weight per sample relative to the most favourable draw, in
    /// `(0, 1]`; values near `1/M` signal an effective sample size of one.
    pub denominator_mean: f64,
}

/// Estimates the drift by the all-site ratio estimator: every inner draw `ζ`
/// is shared across sites and between numerator and denominator, and the heat
/// convolution is applied once to the pooled ratio field (plus once per batch
/// for the error bars).
pub fn estimate_drift(
    params: PotentialParams,
    cov: &CovarianceSpec,
    t: f64,
    phi: &LatticeField,
    m_samples: usize,
    stream: &SampleStream,
) -> Result<DriftEstimate> {
    let grid = cov.grid();
    if phi.grid().n() != grid.n() {
        return Err(LvError::DimensionMismatch { left: grid.n(), right: phi.grid().n() });
    }
    if params.lambda == 0.0 {
        return Ok(DriftEstimate {
            value: LatticeField::zeros(grid),
            stderr: LatticeField::zeros(grid),
            m_samples,
            denominator_mean: 1.0,
        });
    }
    if m_samples < 2 * BATCHES {
        return Err(LvError::BadParameter {
            name: "m_samples",
            value: m_samples as f64,
            constraint: "M >= 32",
        });
    }
    let table = cov.cov_table(t);
    let eps = grid.eps();
    let sqrt_beta_lambda = params.beta.sqrt() * params.lambda;

    let per_batch = m_samples / BATCHES;
    let used = per_batch * BATCHES;
    // Weights are carried relative to the running minimum of v₀ within each
    // batch, so a field with a large positive peak degrades into noise
    // instead of flushing every weight to zero. Ratios are invariant under
    // the per-batch scaling; pooling across batches restores a common scale.
    let mut batch_num: Vec<LatticeField> = Vec::with_capacity(BATCHES);
    let mut batch_den: Vec<f64> = Vec::with_capacity(BATCHES);
    let mut batch_ref: Vec<f64> = Vec::with_capacity(BATCHES);
    for b in 0..BATCHES {
        let mut num = LatticeField::zeros(grid);
        let mut den = 0.0;
        let mut c_ref = f64::INFINITY;
        for i in b * per_batch..(b + 1) * per_batch {
            let mut rng = stream.rng(i as u32);
            let zeta = sample_with_variance_table(grid, &table, &mut rng);
            let shifted = phi.add(&zeta)?;
            let wick = wick_exp(params, eps, &shifted)?;
            let exponent = params.lambda * wick.discrete_integral();
            if exponent < c_ref {
                let rescale = if c_ref.is_finite() { (exponent - c_ref).exp() } else { 0.0 };
                num = num.scale(rescale);
                den *= rescale;
                c_ref = exponent;
            }
            let w = (-(exponent - c_ref)).exp();
            num.axpy(w, &wick)?;
            den += w;
        }
        batch_num.push(num);
        batch_den.push(den);
        batch_ref.push(c_ref);
    }

    let global_ref = batch_ref.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut pooled = LatticeField::zeros(grid);
    let mut total_den = 0.0;
    for b in 0..BATCHES {
        let f = (-(batch_ref[b] - global_ref)).exp();
        pooled.axpy(f, &batch_num[b])?;
        total_den += f * batch_den[b];
    }
    let denominator_mean = total_den / used as f64;
    if !(denominator_mean > 1e-300) {
        return Err(LvError::DegenerateWeights { mean: denominator_mean });
    }
    let ratio = pooled.scale(sqrt_beta_lambda / total_den);
    let value = cov.heat_apply(t, &ratio)?;

    // Batch drift fields, convolved like the pooled one, give the spread.
    let mut batch_fields: Vec<LatticeField> = Vec::with_capacity(BATCHES);
    for (num, &den) in batch_num.iter().zip(batch_den.iter()) {
        let r = num.scale(sqrt_beta_lambda / den.max(1e-300));
        batch_fields.push(cov.heat_apply(t, &r)?);
    }
    let mut stderr = LatticeField::zeros(grid);
    {
        let out = stderr.as_mut_slice();
        for s in 0..grid.sites() {
            let mean: f64 =
                batch_fields.iter().map(|f| f.as_slice()[s]).sum::<f64>() / BATCHES as f64;
            let var: f64 = batch_fields
                .iter()
                .map(|f| (f.as_slice()[s] - mean).powi(2))
                .sum::<f64>()
                / ((BATCHES - 1) as f64);
            out[s] = (var / BATCHES as f64).sqrt();
        }
    }

    Ok(DriftEstimate { value, stderr, m_samples: used, denominator_mean })
}

/// Pointwise upper bound for the drift: `λ√β (ċ_t ∗ :e^{√βφ}:_{scale t})`,
/// with the exact scale-`t` Wick factor. Every drift entry lies in
/// `[0, bound]` up to Monte Carlo noise.
pub fn drift_pointwise_bound(
    params: PotentialParams,
    cov: &CovarianceSpec,
    t: f64,
    phi: &LatticeField,
) -> Result<LatticeField> {
    let wick = wick_exp(params, wick_scale_length(cov, t), phi)?;
    Ok(cov.heat_apply(t, &wick)?.scale(params.beta.sqrt() * params.lambda))
}

/// Hessian entry `(He v_t)_{x,y}` (Fréchet convention) with batch-means
/// standard error. Off-diagonal entries are `−βλ²` times the tilted
/// covariance of the two Wick exponentials; the diagonal adds the lattice
/// delta term `ε^{−2} βλ E[:e:_x w]/E[w]`.
pub fn estimate_hessian_entry(
    params: PotentialParams,
    cov: &CovarianceSpec,
    t: f64,
    x: usize,
    y: usize,
    phi: &LatticeField,
    m_samples: usize,
    stream: &SampleStream,
) -> Result<(f64, f64)> {
    if params.lambda == 0.0 {
        return Ok((0.0, 0.0));
    }
    if m_samples < 2 * BATCHES {
        return Err(LvError::BadParameter {
            name: "m_samples",
            value: m_samples as f64,
            constraint: "M >= 32",
        });
    }
    let grid = cov.grid();
    let table = cov.cov_table(t);
    let eps = grid.eps();
    let per_batch = m_samples / BATCHES;
    let beta = params.beta;
    let lambda = params.lambda;

    let entry_from = |sw: f64, sx: f64, sy: f64, sxy: f64, count: f64| -> f64 {
        let rx = sx / sw;
        let ry = sy / sw;
        let cov_term = sxy / sw - rx * ry;
        let _ = count;
        if x == y {
            beta * lambda * rx / (eps * eps) - beta * lambda * lambda * cov_term
        } else {
            -beta * lambda * lambda * cov_term
        }
    };

    // Same per-batch weight stabilisation as the drift estimator: sums are
    // carried relative to the smallest v₀ in the batch (the entry formula is
    // invariant), and batches are pooled on a common scale.
    let mut batch_vals = Vec::with_capacity(BATCHES);
    let mut sums: Vec<(f64, [f64; 4])> = Vec::with_capacity(BATCHES);
    for b in 0..BATCHES {
        let mut c_ref = f64::INFINITY;
        let mut s = [0.0f64; 4];
        for i in b * per_batch..(b + 1) * per_batch {
            let mut rng = stream.rng(i as u32);
            let zeta = sample_with_variance_table(grid, &table, &mut rng);
            let shifted = phi.add(&zeta)?;
            let wick = wick_exp(params, eps, &shifted)?;
            let exponent = lambda * wick.discrete_integral();
            if exponent < c_ref {
                let rescale = if c_ref.is_finite() { (exponent - c_ref).exp() } else { 0.0 };
                for v in &mut s {
                    *v *= rescale;
                }
                c_ref = exponent;
            }
            let w = (-(exponent - c_ref)).exp();
            let ex = wick.as_slice()[x];
            let ey = wick.as_slice()[y];
            s[0] += w;
            s[1] += ex * w;
            s[2] += ey * w;
            s[3] += ex * ey * w;
        }
        batch_vals.push(entry_from(s[0], s[1], s[2], s[3], per_batch as f64));
        sums.push((c_ref, s));
    }
    let global_ref = sums.iter().map(|&(c, _)| c).fold(f64::INFINITY, f64::min);
    let mut t_sums = [0.0f64; 4];
    for &(c, s) in &sums {
        let f = (-(c - global_ref)).exp();
        for (acc, v) in t_sums.iter_mut().zip(s.iter()) {
            *acc += f * v;
        }
    }
    let weight_mean = t_sums[0] / (per_batch * BATCHES) as f64;
    if !(weight_mean > 1e-300) {
        return Err(LvError::DegenerateWeights { mean: weight_mean });
    }
    let value = entry_from(t_sums[0], t_sums[1], t_sums[2], t_sums[3], (per_batch * BATCHES) as f64);
    let mean_b: f64 = batch_vals.iter().sum::<f64>() / BATCHES as f64;
    let var_b: f64 =
        batch_vals.iter().map(|v| (v - mean_b).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
    Ok((value, (var_b / BATCHES as f64).sqrt()))
}

/// Report of one gradient-continuity probe.
#[derive(Debug, Clone)]
pub struct ContinuityReport {
    /// `‖drift(φ) − drift(φ')‖_∞` under shared inner noise.
    pub diff_sup: f64,
    /// `θ_t λ L_t^{β/4π} (e^{√β max φ} + e^{√β max φ'}) ‖φ−φ'‖_∞`.
    pub normalizer: f64,
    /// `diff_sup / normalizer` (zero when the arguments coincide).
    pub c_empirical: f64,
    /// Upper bound on the noise in `diff_sup`: the sup over sites of the sum
    /// of the two standard-error fields.
    pub noise_sup: f64,
}

/// Checks Lipschitz continuity of the drift in the field argument, with the
/// theorem's normalisation `θ_t λ L_t^{β/4π} e^{√β max φ}`, and records the
/// empirical constant. Both drift evaluations share the same inner noise, so
/// coinciding arguments give exactly zero difference.
pub fn drift_continuity_probe(
    params: PotentialParams,
    cov: &CovarianceSpec,
    t: f64,
    phi: &LatticeField,
    phi2: &LatticeField,
    m_samples: usize,
    stream: &SampleStream,
) -> Result<ContinuityReport> {
    let d1 = estimate_drift(params, cov, t, phi, m_samples, stream)?;
    let d2 = estimate_drift(params, cov, t, phi2, m_samples, stream)?;
    let diff_sup = d1.value.sub(&d2.value)?.sup_norm();
    let noise_sup = d1.stderr.add(&d2.stderr)?.max_value();
    let sqrt_beta = params.beta.sqrt();
    let peak = sqrt_beta * phi.max_value().max(phi2.max_value());
    if peak > EXP_CEILING {
        return Err(LvError::Overflow { exponent: peak });
    }
    let lt = cap_l(cov.mass(), t);
    let normalizer = theta(cov.mass(), t)
        * params.lambda
        * lt.powf(params.beta / (4.0 * std::f64::consts::PI))
        * ((sqrt_beta * phi.max_value()).exp() + (sqrt_beta * phi2.max_value()).exp())
        * phi.sub(phi2)?.sup_norm();
    let c_empirical = if normalizer > 0.0 { diff_sup / normalizer } else { 0.0 };
    Ok(ContinuityReport { diff_sup, normalizer, c_empirical, noise_sup })
}

/// Per-site outcome of a positive-association probe.
#[derive(Debug, Clone)]
pub struct FkgReport {
    /// `Ê[:e:_y w] − Ê[:e:_y] Ê[w]` per site; negative under positive
    /// association of the Gaussian measure.
    pub statistic: Vec<f64>,
    /// Batch-means standard error per site.
    pub stderr: Vec<f64>,
    /// Largest standardised statistic over sites.
    pub max_z: f64,
}

/// Tests `E[:e^{√β(φ_y+ζ_y)}:_ε e^{−v₀}] ≤ E[:e^{√β(φ_y+ζ_y)}:_ε]·E[e^{−v₀}]`
/// at every site, reporting the per-site gap and its uncertainty.
pub fn fkg_probe(
    params: PotentialParams,
    cov: &CovarianceSpec,
    t: f64,
    phi: &LatticeField,
    m_samples: usize,
    stream: &SampleStream,
) -> Result<FkgReport> {
    if m_samples < 2 * BATCHES {
        return Err(LvError::BadParameter {
            name: "m_samples",
            value: m_samples as f64,
            constraint: "M >= 32",
        });
    }
    let grid = cov.grid();
    let table = cov.cov_table(t);
    let eps = grid.eps();
    let per_batch = m_samples / BATCHES;
    let sites = grid.sites();

    // Per batch and site: mean(:e: w) − mean(:e:)·mean(w).
    let mut batch_stats: Vec<Vec<f64>> = Vec::with_capacity(BATCHES);
    for b in 0..BATCHES {
        let mut s_ew = vec![0.0f64; sites];
        let mut s_e = vec![0.0f64; sites];
        let mut s_w = 0.0f64;
        for i in b * per_batch..(b + 1) * per_batch {
            let mut rng = stream.rng(i as u32);
            let zeta = sample_with_variance_table(grid, &table, &mut rng);
            let shifted = phi.add(&zeta)?;
            let wick = wick_exp(params, eps, &shifted)?;
            let w = (-params.lambda * wick.discrete_integral()).exp();
            for (s, &e) in wick.as_slice().iter().enumerate() {
                s_ew[s] += e * w;
                s_e[s] += e;
            }
            s_w += w;
        }
        let mb = per_batch as f64;
        let stats: Vec<f64> =
            (0..sites).map(|s| s_ew[s] / mb - (s_e[s] / mb) * (s_w / mb)).collect();
        batch_stats.push(stats);
    }

    let mut statistic = vec![0.0f64; sites];
    let mut stderr = vec![0.0f64; sites];
    let mut max_z = f64::NEG_INFINITY;
    for s in 0..sites {
        let mean: f64 = batch_stats.iter().map(|b| b[s]).sum::<f64>() / BATCHES as f64;
        let var: f64 = batch_stats.iter().map(|b| (b[s] - mean).powi(2)).sum::<f64>()
            / (BATCHES - 1) as f64;
        let se = (var / BATCHES as f64).sqrt();
        statistic[s] = mean;
        stderr[s] = se;
        let z = if se > 0.0 { mean / se } else { 0.0 };
        max_z = max_z.max(z);
    }
    Ok(FkgReport { statistic, stderr, max_z })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::streams::Domain;
    use crate::torus::TorusGrid;
    use rand::Rng;

    fn cov(n: usize, m: f64) -> CovarianceSpec {
        CovarianceSpec::new(TorusGrid::new(n).unwrap(), m).unwrap()
    }

    fn stream(a: u64, b: u64) -> SampleStream {
        SampleStream::new(0xfeed, Domain::FlowInner, a, b, 0)
    }

    fn random_field(grid: TorusGrid, seed: u64, amp: f64) -> LatticeField {
        let mut rng = crate::streams::rng_for(
            seed,
            crate::streams::StreamKey::new(Domain::Probe, 7, 7, 7),
            0,
        );
        LatticeField::from_values(
            grid,
            (0..grid.sites()).map(|_| rng.gen_range(-amp..amp)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn params_validated() {
        assert!(PotentialParams::new(2.0 * std::f64::consts::PI, 1.0).is_ok());
        assert!(PotentialParams::new(0.0, 1.0).is_err());
        assert!(PotentialParams::new(8.0 * std::f64::consts::PI, 1.0).is_err());
        assert!(PotentialParams::new(1.0, -0.5).is_err());
        assert!(PotentialParams::new(1.0, 0.0).is_ok());
    }

    #[test]
    fn wick_exp_reference_values() {
        let grid = TorusGrid::new(4).unwrap();
        let zero = LatticeField::zeros(grid);
        // ε^{β/4π} at φ = 0: (1/4)^{1/2} and (1/4)^1.
        let p2 = PotentialParams::new(2.0 * std::f64::consts::PI, 1.0).unwrap();
        let w2 = wick_exp(p2, 0.25, &zero).unwrap();
        assert!(w2.as_slice().iter().all(|&v| (v - 0.5).abs() < 1e-14));
        let p4 = PotentialParams::new(4.0 * std::f64::consts::PI, 1.0).unwrap();
        let w4 = wick_exp(p4, 0.25, &zero).unwrap();
        assert!(w4.as_slice().iter().all(|&v| (v - 0.25).abs() < 1e-14));
    }

    #[test]
    fn wick_exp_is_monotone_and_guards_overflow() {
        let grid = TorusGrid::new(4).unwrap();
        let p = PotentialParams::new(4.0 * std::f64::consts::PI, 1.0).unwrap();
        let lo = random_field(grid, 1, 1.0);
        let hi = LatticeField::from_values(
            grid,
            lo.as_slice().iter().map(|v| v + 0.3).collect(),
        )
        .unwrap();
        let wl = wick_exp(p, 0.25, &lo).unwrap();
        let wh = wick_exp(p, 0.25, &hi).unwrap();
        for (a, b) in wl.as_slice().iter().zip(wh.as_slice().iter()) {
            assert!(a < b);
        }
        let huge = LatticeField::constant(grid, 250.0);
        assert!(matches!(
            wick_exp(p, 0.25, &huge),
            Err(LvError::Overflow { .. })
        ));
        assert!(wick_exp(p, 0.0, &lo).is_err());
    }

    #[test]
    fn v0_reference_and_shift_homogeneity() {
        let grid = TorusGrid::new(2).unwrap();
        let p = PotentialParams::new(4.0 * std::f64::consts::PI, 1.0).unwrap();
        let zero = LatticeField::zeros(grid);
        // ε^{β/4π} = 1/2 at β = 4π, times unit area.
        assert!((v0(p, &zero).unwrap() - 0.5).abs() < 1e-14);
        let p0 = PotentialParams::new(4.0 * std::f64::consts::PI, 0.0).unwrap();
        assert_eq!(v0(p0, &zero).unwrap(), 0.0);
        let f = random_field(grid, 3, 0.7);
        let c = 0.42;
        let shifted = LatticeField::from_values(
            grid,
            f.as_slice().iter().map(|v| v + c).collect(),
        )
        .unwrap();
        let lhs = v0(p, &shifted).unwrap();
        let rhs = v0(p, &f).unwrap() * (p.beta().sqrt() * c).exp();
        assert!((lhs - rhs).abs() < 1e-12 * rhs.abs().max(1.0));
        assert!(v0(p, &f).unwrap() >= 0.0);
    }

    #[test]
    fn wick_scale_length_matches_exact_expectation() {
        // wick_exp at the scale length equals ε^{β/4π}e^{(β/2)c_t(x,x)}.
        let c = cov(4, 1.0);
        let p = PotentialParams::new(4.0 * std::f64::consts::PI, 1.0).unwrap();
        let t = 0.5;
        let len = wick_scale_length(&c, t);
        let zero = LatticeField::zeros(c.grid());
        let w = wick_exp(p, len, &zero).unwrap();
        let exact = c.grid().eps().powf(1.0) * (0.5 * p.beta() * c.diag_variance(t)).exp();
        assert!((w.as_slice()[0] - exact).abs() < 1e-12 * exact);
    }

    #[test]
    fn vt_estimate_is_sandwiched_and_deterministic() {
        let c = cov(2, 1.0);
        let p = PotentialParams::new(2.0 * std::f64::consts::PI, 1.0).unwrap();
        let phi = random_field(c.grid(), 5, 0.5);
        let s = stream(1, 1);
        let (v, se) = estimate_vt(p, &c, 0.5, &phi, 4000, &s).unwrap();
        let (v2, _) = estimate_vt(p, &c, 0.5, &phi, 4000, &s).unwrap();
        assert_eq!(v, v2);
        assert!(v >= 0.0);
        let jb = jensen_bound(p, &c, 0.5, &phi).unwrap();
        assert!(v <= jb + 3.0 * se, "v_t {v} vs Jensen {jb} (se {se})");
        let p0 = PotentialParams::new(2.0 * std::f64::consts::PI, 0.0).unwrap();
        assert_eq!(estimate_vt(p0, &c, 0.5, &phi, 10, &s).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn vt_matches_frozen_brute_force_reference() {
        // Reference produced once by examples/dev_oracle_vt.rs: an
        // independent implementation (direct covariance matrix by mode sum,
        // hand-rolled Cholesky, separate generator) averaging 1e7 weights at
        // n=2, beta=2*pi, lambda=1, m=1, t=0.5, phi=0.
        const REFERENCE: f64 = 0.9419609293;
        const REFERENCE_SE: f64 = 2.691e-4;
        let c = cov(2, 1.0);
        let p = PotentialParams::new(2.0 * std::f64::consts::PI, 1.0).unwrap();
        let zero = LatticeField::zeros(c.grid());
        let (v, se) = estimate_vt(p, &c, 0.5, &zero, 200_000, &stream(11, 0)).unwrap();
        let tol = 3.0 * (se + REFERENCE_SE);
        assert!(
            (v - REFERENCE).abs() < tol,
            "v_t {v} vs reference {REFERENCE} (tol {tol})"
        );
    }

    #[test]
    fn jensen_sandwich_across_parameter_matrix() {
        let c = cov(2, 1.0);
        let s = stream(2, 0);
        for (bi, beta_over_pi) in [2.0, 4.0, 6.0].iter().enumerate() {
            let p = PotentialParams::new(beta_over_pi * std::f64::consts::PI, 0.8).unwrap();
            for (ti, t) in [0.3, 1.0, f64::INFINITY].iter().enumerate() {
                let phi = random_field(c.grid(), 40 + bi as u64, 0.4);
                let s2 = SampleStream { b: (bi * 8 + ti) as u64, ..s };
                let (v, se) = estimate_vt(p, &c, *t, &phi, 3000, &s2).unwrap();
                let jb = jensen_bound(p, &c, *t, &phi).unwrap();
                assert!(v >= 0.0);
                assert!(v <= jb + 3.0 * se, "beta/π={beta_over_pi} t={t}: {v} vs {jb}");
            }
        }
    }

    #[test]
    fn drift_zero_coupling_shortcircuits() {
        let c = cov(4, 1.0);
        let p = PotentialParams::new(2.0 * std::f64::consts::PI, 0.0).unwrap();
        let phi = random_field(c.grid(), 6, 0.5);
        let d = estimate_drift(p, &c, 0.4, &phi, 64, &stream(3, 0)).unwrap();
        assert!(d.value.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(d.denominator_mean, 1.0);
    }

    #[test]
    fn drift_sign_and_pointwise_bound() {
        // 0 ≤ drift ≤ λ√β ċ_t ∗ :e^{√βφ}:_{scale t}, within 3 stderr.
        let c = cov(4, 1.0);
        let phi = random_field(c.grid(), 8, 0.6);
        for beta_over_pi in [2.0, 4.0] {
            let p = PotentialParams::new(beta_over_pi * std::f64::consts::PI, 1.0).unwrap();
            let d = estimate_drift(p, &c, 0.5, &phi, 4096, &stream(4, beta_over_pi as u64))
                .unwrap();
            let bound = drift_pointwise_bound(p, &c, 0.5, &phi).unwrap();
            for s in 0..c.grid().sites() {
                let v = d.value.as_slice()[s];
                let se = d.stderr.as_slice()[s];
                let b = bound.as_slice()[s];
                assert!(v >= -3.0 * se, "site {s}: {v} below noise floor");
                assert!(v <= b + 3.0 * se, "site {s}: {v} above bound {b}");
            }
            assert!(d.denominator_mean > 0.0 && d.denominator_mean <= 1.0);
        }
    }

    #[test]
    fn drift_matches_finite_difference_of_vt() {
        // Central differences of v_t in each φ_y, divided by ε² (Fréchet
        // convention) and convolved with ċ_t, reproduce the drift. Common
        // random numbers keep the comparison tight.
        let c = cov(2, 1.0);
        let p = PotentialParams::new(2.0 * std::f64::consts::PI, 1.0).unwrap();
        let phi = random_field(c.grid(), 9, 0.4);
        let t = 0.5;
        let m = 40_000;
        let s = stream(5, 0);
        let d = estimate_drift(p, &c, t, &phi, m, &s).unwrap();
        let h = 1e-3;
        let eps2 = c.grid().eps() * c.grid().eps();
        let mut grad = LatticeField::zeros(c.grid());
        let mut grad_se = vec![0.0f64; 4];
        for site in 0..4 {
            let mut up = phi.clone();
            up.as_mut_slice()[site] += h;
            let mut dn = phi.clone();
            dn.as_mut_slice()[site] -= h;
            let su = SampleStream { b: 100 + site as u64, ..s };
            let (vu, seu) = estimate_vt(p, &c, t, &up, m, &su).unwrap();
            let (vd, sed) = estimate_vt(p, &c, t, &dn, m, &su).unwrap();
            let (i, j) = c.grid().coords(site);
            grad.set(i, j, (vu - vd) / (2.0 * h) / eps2);
            grad_se[site] = (seu + sed) / (2.0 * h) / eps2;
        }
        let fd_drift = c.heat_apply(t, &grad).unwrap();
        for site in 0..4 {
            let a = d.value.as_slice()[site];
            let b = fd_drift.as_slice()[site];
            // Heat smoothing mixes the finite-difference errors; bound the
            // noise by the max of the gradient stderrs plus the drift's own.
            let se = d.stderr.as_slice()[site]
                + grad_se.iter().cloned().fold(0.0f64, f64::max);
            assert!((a - b).abs() < 3.0 * se, "site {site}: {a} vs {b} (se {se})");
        }
    }

    #[test]
    fn fkg_probe_negative_at_all_sites() {
        let c = cov(4, 1.0);
        let phi_zero = LatticeField::zeros(c.grid());
        let phi_rand = random_field(c.grid(), 10, 0.5);
        for (bi, beta_over_pi) in [2.0, 4.0, 6.0].iter().enumerate() {
            let p = PotentialParams::new(beta_over_pi * std::f64::consts::PI, 1.0).unwrap();
            for (fi, phi) in [&phi_zero, &phi_rand].iter().enumerate() {
                let s = stream(6, (bi * 2 + fi) as u64);
                let rep = fkg_probe(p, &c, 0.5, phi, 8192, &s).unwrap();
                assert!(
                    rep.max_z <= 3.0,
                    "beta/π={beta_over_pi} field {fi}: max z {z}",
                    z = rep.max_z
                );
            }
        }
    }

    #[test]
    fn hessian_entries_obey_bounds() {
        let c = cov(2, 1.0);
        let p = PotentialParams::new(2.0 * std::f64::consts::PI, 1.0).unwrap();
        let phi = random_field(c.grid(), 11, 0.4);
        let t = 0.5;
        let m = 20_000;
        let (dxx, se_xx) = estimate_hessian_entry(p, &c, t, 0, 0, &phi, m, &stream(7, 0)).unwrap();
        let (dyy, se_yy) = estimate_hessian_entry(p, &c, t, 3, 3, &phi, m, &stream(7, 1)).unwrap();
        let (dxy, se_xy) = estimate_hessian_entry(p, &c, t, 0, 3, &phi, m, &stream(7, 2)).unwrap();
        // Convexity: nonnegative diagonal.
        assert!(dxx >= -3.0 * se_xx, "dxx {dxx}");
        assert!(dyy >= -3.0 * se_yy, "dyy {dyy}");
        // Positive semidefiniteness on indicator pairs.
        assert!(
            2.0 * dxy.abs() <= dxx + dyy + 3.0 * (se_xx + se_yy + 2.0 * se_xy),
            "2|dxy| {v} vs {dxx} + {dyy}",
            v = 2.0 * dxy.abs()
        );
        // FKG cap on the diagonal with the exact scale factor and lattice δ.
        let wick = wick_exp(p, wick_scale_length(&c, t), &phi).unwrap();
        let eps2 = c.grid().eps() * c.grid().eps();
        let cap = p.beta() * p.lambda() * wick.as_slice()[0] / eps2;
        assert!(dxx <= cap + 3.0 * se_xx, "dxx {dxx} vs cap {cap}");
        // λ = 0 degenerates to zero.
        let p0 = PotentialParams::new(2.0 * std::f64::consts::PI, 0.0).unwrap();
        assert_eq!(
            estimate_hessian_entry(p0, &c, t, 0, 1, &phi, 64, &stream(7, 3)).unwrap(),
            (0.0, 0.0)
        );
    }

    #[test]
    fn continuity_probe_linear_response() {
        let c = cov(4, 1.0);
        let p = PotentialParams::new(2.0 * std::f64::consts::PI, 1.0).unwrap();
        let phi = random_field(c.grid(), 12, 0.3);
        let t = 0.4;
        let m = 8192;
        // Identical arguments: exactly zero difference under shared noise.
        let same = drift_continuity_probe(p, &c, t, &phi, &phi, m, &stream(8, 0)).unwrap();
        assert_eq!(same.diff_sup, 0.0);
        assert_eq!(same.c_empirical, 0.0);
        // Small constant shifts: near-linear response, ratios within 25%.
        let mut cs = Vec::new();
        for (k, dc) in [0.01, 0.02, 0.04].iter().enumerate() {
            let shifted = LatticeField::from_values(
                c.grid(),
                phi.as_slice().iter().map(|v| v + dc).collect(),
            )
            .unwrap();
            let rep =
                drift_continuity_probe(p, &c, t, &phi, &shifted, m, &stream(8, 1 + k as u64))
                    .unwrap();
            cs.push(rep.diff_sup / dc);
        }
        for w in cs.windows(2) {
            let ratio = w[1] / w[0];
            assert!((0.75..1.25).contains(&ratio), "nonlinear response: {cs:?}");
        }
        // Uniform envelope across scales: the recorded constant never rises
        // above its value at the smallest admissible scale t = ε². (It does
        // decay, increasingly so once the lattice diagonal saturates while
        // the normalizer keeps growing, so two-sided stability is not a
        // consequence of the envelope and is not asserted.)
        let shifted = LatticeField::from_values(
            c.grid(),
            phi.as_slice().iter().map(|v| v + 0.05).collect(),
        )
        .unwrap();
        let eps2 = c.grid().eps() * c.grid().eps();
        let mut consts = Vec::new();
        for (k, t) in [1.0, 2.0, 4.0, 8.0, 16.0].iter().map(|f| f * eps2).enumerate() {
            let rep =
                drift_continuity_probe(p, &c, t, &phi, &shifted, m, &stream(9, k as u64))
                    .unwrap();
            consts.push(rep.c_empirical);
        }
        let anchor = consts[0];
        assert!((0.5..5.0).contains(&anchor), "anchor constant off scale: {anchor}");
        for (k, &cv) in consts.iter().enumerate() {
            assert!(cv > 0.0);
            assert!(cv <= anchor * 1.2, "constant rose above anchor at step {k}: {consts:?}");
        }
    }
}
