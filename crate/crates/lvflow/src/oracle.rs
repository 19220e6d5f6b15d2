//! Ground-truth sampling of the zero-scale interacting law on small grids.
//!
//! The interacting measure on mesh `eps` has density `e^{-v_0(phi)} / Z`
//! with respect to the free field `N(0, c_inf)`, where
//! `v_0(phi) = lambda int :e^{sqrt(beta) phi}:_eps dx >= 0`.  Expectations
//! under the interacting law therefore admit self-normalised importance
//! sampling from the free field with the bounded weight `w = e^{-v_0}`
//! in `(0, 1]`:
//!
//! `E[F] = sum_i w_i F(phi_i) / sum_i w_i`.
//!
//! On grids up to side `8` the weights stay far from degenerate and the
//! estimator is an oracle for the law produced by the flow solver: the
//! endpoint field `Phi^Lv_0 = Phi^GFF_0 + Phi^Delta_0` of a converged
//! solution must reproduce every moment of the reweighted free field up
//! to Monte Carlo noise and the quadrature bias of the drift integral.
//!
//! Estimates are anchored: a ratio `sum w F / sum w` is accumulated as
//! `F(phi_0) + sum w (F - F(phi_0)) / sum w`, which returns constants
//! bit-for-bit, and weights are carried relative to the running minimum
//! of `v_0` so no estimate is lost to exponent underflow.  Effective
//! sample size `(sum w)^2 / sum w^2` is recorded and gated against a
//! configured floor before any estimate is emitted.

use crate::covariance::CovarianceSpec;
use crate::flow::FlowState;
use crate::gff::sample_field_full;
use crate::potential::{v0, PotentialParams};
use crate::streams::SampleStream;
use crate::torus::LatticeField;
use crate::{LvError, Result};

use std::f64::consts::PI;

/// Smallest admissible draw count for any oracle estimate.
pub const ORACLE_MIN_DRAWS: usize = 1_000;

/// Tuning knobs of the oracle and of the endpoint comparison.
#[derive(Debug, Clone, Copy)]
pub struct OracleConfig {
    /// Free-field draws per oracle ensemble.
    pub n_draws: usize,
    /// Minimum accepted `ESS / n_draws`.
    pub ess_floor_fraction: f64,
    /// Minimum flow replicas accepted by the endpoint comparison.
    pub min_replicas: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { n_draws: 200_000, ess_floor_fraction: 0.02, min_replicas: 1_000 }
    }
}

impl OracleConfig {
    fn ess_floor(&self, n: usize) -> f64 {
        self.ess_floor_fraction * n as f64
    }
}

/// Free-field draws with interaction weights `e^{-v_0}`.
///
/// Weights are stored relative to the smallest exponent of the ensemble,
/// so the largest stored weight is exactly `1`; every ratio estimate and
/// the effective sample size are invariant under that common rescaling.
#[derive(Debug, Clone)]
pub struct WeightedEnsemble {
    fields: Vec<LatticeField>,
    exponents: Vec<f64>,
    weights: Vec<f64>,
    ess: f64,
}

impl WeightedEnsemble {
    /// Draws `n_draws` free fields from `N(0, c_inf)` and weights them by
    /// `e^{-v_0}`.  Draw `i` uses the substream of `stream` at replica `i`,
    /// so ensembles are reproducible and extendable.
    pub fn build(
        params: PotentialParams,
        cov: &CovarianceSpec,
        n_draws: usize,
        stream: &SampleStream,
    ) -> Result<Self> {
        if n_draws < ORACLE_MIN_DRAWS {
            return Err(LvError::BadParameter {
                name: "n_draws",
                value: n_draws as f64,
                constraint: "n_draws >= 1000",
            });
        }
        let mut fields = Vec::with_capacity(n_draws);
        let mut exponents = Vec::with_capacity(n_draws);
        for i in 0..n_draws {
            let sub = SampleStream { replica: i as u64, ..*stream };
            let mut rng = sub.rng(0);
            let phi = sample_field_full(cov, &mut rng);
            let exponent = v0(params, &phi)?;
            fields.push(phi);
            exponents.push(exponent);
        }
        let shift = exponents.iter().cloned().fold(f64::INFINITY, f64::min);
        let weights: Vec<f64> =
            exponents.iter().map(|&e| (-(e - shift)).exp().max(f64::MIN_POSITIVE)).collect();
        let s: f64 = weights.iter().sum();
        let s2: f64 = weights.iter().map(|w| w * w).sum();
        Ok(WeightedEnsemble { fields, exponents, weights, ess: s * s / s2 })
    }

    /// Number of draws.
    pub fn len(&self) -> usize {
        self.fields.len()
    }

    /// True when the ensemble holds no draws (never after `build`).
    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    /// Effective sample size `(sum w)^2 / sum w^2`.
    pub fn ess(&self) -> f64 {
        self.ess
    }

    /// Interaction exponents `v_0(phi_i) >= 0`.
    pub fn exponents(&self) -> &[f64] {
        &self.exponents
    }

    /// Weights relative to the smallest exponent, all in `(0, 1]`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// The free-field draws.
    pub fn fields(&self) -> &[LatticeField] {
        &self.fields
    }

    /// Self-normalised expectation of `f` with delta-method standard error.
    ///
    /// Refuses with `EssBelowFloor` when the recorded effective sample
    /// size is below `floor`.
    pub fn expectation(
        &self,
        floor: f64,
        f: &dyn Fn(&LatticeField) -> f64,
    ) -> Result<(f64, f64)> {
        if self.ess < floor {
            return Err(LvError::EssBelowFloor { ess: self.ess, floor });
        }
        let anchor = f(&self.fields[0]);
        let mut s_w = 0.0;
        let mut s_wg = 0.0;
        let mut values = Vec::with_capacity(self.fields.len());
        for (phi, &w) in self.fields.iter().zip(&self.weights) {
            let g = f(phi) - anchor;
            values.push(g);
            s_w += w;
            s_wg += w * g;
        }
        let g_bar = s_wg / s_w;
        let mut s_dev = 0.0;
        for (&g, &w) in values.iter().zip(&self.weights) {
            let d = g - g_bar;
            s_dev += w * w * d * d;
        }
        Ok((anchor + g_bar, s_dev.sqrt() / s_w))
    }
}

/// Value, delta-method standard error, and effective sample size of one
/// self-normalised estimate.
#[derive(Debug, Clone, Copy)]
pub struct SnisEstimate {
    /// `sum w F / sum w`.
    pub value: f64,
    /// Delta-method standard error `sqrt(sum w^2 (F - R)^2) / sum w`.
    pub stderr: f64,
    /// `(sum w)^2 / sum w^2` of the ensemble the estimate used.
    pub ess: f64,
}

/// Streaming self-normalised expectation of `f` under the interacting law.
///
/// One pass over `n_draws` reproducible free-field draws; nothing is
/// stored, so draw counts in the millions are cheap.  The anchored
/// accumulation returns constants bit-for-bit and the weight sums are
/// rescaled to the running minimum exponent, which leaves the ratio, the
/// standard error, and the effective sample size unchanged.
pub fn snis_expectation(
    params: PotentialParams,
    cov: &CovarianceSpec,
    f: &dyn Fn(&LatticeField) -> f64,
    n_draws: usize,
    config: &OracleConfig,
    stream: &SampleStream,
) -> Result<SnisEstimate> {
    if n_draws < ORACLE_MIN_DRAWS {
        return Err(LvError::BadParameter {
            name: "n_draws",
            value: n_draws as f64,
            constraint: "n_draws >= 1000",
        });
    }
    let mut shift = f64::INFINITY;
    let mut anchor = 0.0;
    let mut s_w = 0.0;
    let mut s_w2 = 0.0;
    let mut s_wg = 0.0;
    let mut s_w2g = 0.0;
    let mut s_w2g2 = 0.0;
    for i in 0..n_draws {
        let sub = SampleStream { replica: i as u64, ..*stream };
        let mut rng = sub.rng(0);
        let phi = sample_field_full(cov, &mut rng);
        let exponent = v0(params, &phi)?;
        if i == 0 {
            anchor = f(&phi);
            shift = exponent;
        } else if exponent < shift {
            // Rebase every sum onto the new minimum exponent.
            let factor = (-(shift - exponent)).exp();
            s_w *= factor;
            s_wg *= factor;
            s_w2 *= factor * factor;
            s_w2g *= factor * factor;
            s_w2g2 *= factor * factor;
            shift = exponent;
        }
        let w = (-(exponent - shift)).exp().max(f64::MIN_POSITIVE);
        let g = f(&phi) - anchor;
        s_w += w;
        s_w2 += w * w;
        s_wg += w * g;
        s_w2g += w * w * g;
        s_w2g2 += w * w * g * g;
    }
    let ess = s_w * s_w / s_w2;
    let floor = config.ess_floor(n_draws);
    if ess < floor {
        return Err(LvError::EssBelowFloor { ess, floor });
    }
    let g_bar = s_wg / s_w;
    let var = (s_w2g2 - 2.0 * g_bar * s_w2g + g_bar * g_bar * s_w2).max(0.0);
    Ok(SnisEstimate { value: anchor + g_bar, stderr: var.sqrt() / s_w, ess })
}

/// One statistic compared between two estimators.
#[derive(Debug, Clone)]
pub struct ComparisonRow {
    /// Which statistic the row refers to.
    pub label: String,
    /// First estimate and its standard error.
    pub left: f64,
    pub left_se: f64,
    /// Second estimate and its standard error.
    pub right: f64,
    pub right_se: f64,
    /// `(left - right) / sqrt(left_se^2 + right_se^2)`.
    pub z: f64,
}

/// Endpoint comparison between a flow ensemble and the sampling oracle.
#[derive(Debug, Clone)]
pub struct EndpointReport {
    /// One row per statistic; `left` is the flow ensemble, `right` the
    /// oracle.
    pub rows: Vec<ComparisonRow>,
    /// Largest `|z|` over the battery.
    pub max_z: f64,
    /// Fraction of rows with `|z| <= 3`.
    pub frac_within_3: f64,
    /// Effective sample size of the oracle ensemble.
    pub ess: f64,
    /// Flow replicas compared.
    pub replicas: usize,
    /// Oracle draws used.
    pub draws: usize,
}

/// Two-seed consistency check of the oracle itself.
#[derive(Debug, Clone)]
pub struct AgreementReport {
    /// One row per statistic; `left` and `right` are the two seeds.
    pub rows: Vec<ComparisonRow>,
    /// Largest `|z|` over the battery.
    pub max_z: f64,
    /// Effective sample sizes of the two ensembles.
    pub ess_left: f64,
    pub ess_right: f64,
}

/// Statistic battery: per-site means, all second moments, per-site Wick
/// means `eps^{beta/4pi} e^{sqrt(beta) phi_x}`.
fn battery_labels(params: PotentialParams, n: usize) -> Vec<String> {
    let _ = params;
    let mut labels = Vec::new();
    for i in 0..n {
        for j in 0..n {
            labels.push(format!("mean[{i},{j}]"));
        }
    }
    let sites = n * n;
    for x in 0..sites {
        for y in x..sites {
            labels.push(format!("m2[{x},{y}]"));
        }
    }
    for i in 0..n {
        for j in 0..n {
            labels.push(format!("wick[{i},{j}]"));
        }
    }
    labels
}

/// Values of the whole battery on one field, in `battery_labels` order.
fn battery_values(params: PotentialParams, phi: &LatticeField) -> Vec<f64> {
    let grid = phi.grid();
    let n = grid.n();
    let sites = n * n;
    let f = phi.as_slice();
    let mut out = Vec::with_capacity(sites + sites * (sites + 1) / 2 + sites);
    out.extend_from_slice(f);
    for x in 0..sites {
        for y in x..sites {
            out.push(f[x] * f[y]);
        }
    }
    let pref = grid.eps().powf(params.beta() / (4.0 * PI));
    let sqrt_beta = params.beta().sqrt();
    for &v in f {
        out.push(pref * (sqrt_beta * v).exp());
    }
    out
}

/// Weighted battery estimates `(value, stderr)` over an ensemble.
fn weighted_battery(
    ensemble: &WeightedEnsemble,
    params: PotentialParams,
    floor: f64,
) -> Result<Vec<(f64, f64)>> {
    if ensemble.ess() < floor {
        return Err(LvError::EssBelowFloor { ess: ensemble.ess(), floor });
    }
    let anchors = battery_values(params, &ensemble.fields()[0]);
    let b = anchors.len();
    let mut s_w = 0.0;
    let mut s_wg = vec![0.0; b];
    let mut s_w2g = vec![0.0; b];
    let mut s_w2g2 = vec![0.0; b];
    let mut s_w2 = 0.0;
    for (phi, &w) in ensemble.fields().iter().zip(ensemble.weights()) {
        let vals = battery_values(params, phi);
        s_w += w;
        s_w2 += w * w;
        for k in 0..b {
            let g = vals[k] - anchors[k];
            s_wg[k] += w * g;
            s_w2g[k] += w * w * g;
            s_w2g2[k] += w * w * g * g;
        }
    }
    let mut out = Vec::with_capacity(b);
    for k in 0..b {
        let g_bar = s_wg[k] / s_w;
        let var = (s_w2g2[k] - 2.0 * g_bar * s_w2g[k] + g_bar * g_bar * s_w2).max(0.0);
        out.push((anchors[k] + g_bar, var.sqrt() / s_w));
    }
    Ok(out)
}

/// Unweighted battery estimates over flow endpoint fields.
fn ensemble_battery(params: PotentialParams, endpoints: &[LatticeField]) -> Vec<(f64, f64)> {
    let b = battery_values(params, &endpoints[0]).len();
    let r = endpoints.len() as f64;
    let mut sums = vec![0.0; b];
    let mut sq = vec![0.0; b];
    for phi in endpoints {
        let vals = battery_values(params, phi);
        for k in 0..b {
            sums[k] += vals[k];
            sq[k] += vals[k] * vals[k];
        }
    }
    (0..b)
        .map(|k| {
            let mean = sums[k] / r;
            let var = (sq[k] / r - mean * mean).max(0.0) / (r - 1.0);
            (mean, var.sqrt())
        })
        .collect()
}

fn comparison_rows(
    labels: Vec<String>,
    left: &[(f64, f64)],
    right: &[(f64, f64)],
) -> (Vec<ComparisonRow>, f64, f64) {
    let mut rows = Vec::with_capacity(labels.len());
    let mut max_z = 0.0f64;
    let mut within = 0usize;
    for ((label, &(l, l_se)), &(r, r_se)) in labels.into_iter().zip(left).zip(right) {
        let denom = (l_se * l_se + r_se * r_se).sqrt().max(f64::MIN_POSITIVE);
        let z = (l - r) / denom;
        max_z = max_z.max(z.abs());
        if z.abs() <= 3.0 {
            within += 1;
        }
        rows.push(ComparisonRow { label, left: l, left_se: l_se, right: r, right_se: r_se, z });
    }
    let frac = within as f64 / rows.len() as f64;
    (rows, max_z, frac)
}

/// Compares the endpoint law of a flow ensemble with the sampling oracle.
///
/// Battery: per-site means, all second moments `E[phi_x phi_y]`, and
/// per-site Wick means `E[eps^{beta/4pi} e^{sqrt(beta) phi_x}]`.  The flow
/// side is the plain ensemble average over the replicas' endpoint fields
/// `Phi^Lv_0`; the oracle side reweights `config.n_draws` free-field
/// draws.  Reported `z` values combine both standard errors; quadrature
/// bias of the drift integral enters the flow side and shrinks as the
/// scale grid refines.
pub fn validate_flow_endpoint(
    params: PotentialParams,
    cov: &CovarianceSpec,
    states: &[FlowState],
    config: &OracleConfig,
    stream: &SampleStream,
) -> Result<EndpointReport> {
    if states.len() < config.min_replicas {
        return Err(LvError::BadParameter {
            name: "replicas",
            value: states.len() as f64,
            constraint: "at least the configured minimum of flow replicas",
        });
    }
    let mut endpoints = Vec::with_capacity(states.len());
    for state in states {
        let endpoint = state.lv_endpoint()?;
        if endpoint.grid().n() != cov.grid().n() {
            return Err(LvError::DimensionMismatch {
                left: endpoint.grid().n(),
                right: cov.grid().n(),
            });
        }
        endpoints.push(endpoint);
    }
    let ensemble = WeightedEnsemble::build(params, cov, config.n_draws, stream)?;
    let oracle = weighted_battery(&ensemble, params, config.ess_floor(config.n_draws))?;
    let flow = ensemble_battery(params, &endpoints);
    let labels = battery_labels(params, cov.grid().n());
    let (rows, max_z, frac_within_3) = comparison_rows(labels, &flow, &oracle);
    Ok(EndpointReport {
        rows,
        max_z,
        frac_within_3,
        ess: ensemble.ess(),
        replicas: states.len(),
        draws: config.n_draws,
    })
}

/// Runs the statistic battery under two independent seeds of the oracle
/// and reports the standardised discrepancies.
pub fn two_seed_agreement(
    params: PotentialParams,
    cov: &CovarianceSpec,
    config: &OracleConfig,
    stream_left: &SampleStream,
    stream_right: &SampleStream,
) -> Result<AgreementReport> {
    let floor = config.ess_floor(config.n_draws);
    let left = WeightedEnsemble::build(params, cov, config.n_draws, stream_left)?;
    let right = WeightedEnsemble::build(params, cov, config.n_draws, stream_right)?;
    let left_battery = weighted_battery(&left, params, floor)?;
    let right_battery = weighted_battery(&right, params, floor)?;
    let labels = battery_labels(params, cov.grid().n());
    let (rows, max_z, _) = comparison_rows(labels, &left_battery, &right_battery);
    Ok(AgreementReport { rows, max_z, ess_left: left.ess(), ess_right: right.ess() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::ScaleGrid;
    use crate::flow::{picard_solve, FlowConfig};
    use crate::gff::CoupledGffSampler;
    use crate::streams::Domain;
    use crate::torus::TorusGrid;
    use std::sync::Arc;

    fn cov2() -> CovarianceSpec {
        CovarianceSpec::new(TorusGrid::new(2).unwrap(), 1.0).unwrap()
    }

    fn stream(seed: u64) -> SampleStream {
        SampleStream { root_seed: seed, domain: Domain::Oracle, a: 1, b: 0, replica: 0 }
    }

    #[test]
    fn weights_and_ess_within_bounds() {
        let cov = cov2();
        let p = PotentialParams::new(2.0 * PI, 1.0).unwrap();
        let ens = WeightedEnsemble::build(p, &cov, 2_000, &stream(11)).unwrap();
        assert_eq!(ens.len(), 2_000);
        assert!(ens.exponents().iter().all(|&e| e >= 0.0));
        assert!(ens.weights().iter().all(|&w| w > 0.0 && w <= 1.0));
        let max_w = ens.weights().iter().cloned().fold(0.0f64, f64::max);
        assert_eq!(max_w, 1.0);
        assert!(ens.ess() <= ens.len() as f64);
        assert!(ens.ess() > 0.3 * ens.len() as f64, "ess = {}", ens.ess());
    }

    #[test]
    fn self_normalisation_is_bit_exact() {
        let cov = cov2();
        let p = PotentialParams::new(2.0 * PI, 1.0).unwrap();
        let config = OracleConfig::default();
        for c in [1.0, 7.25, -3.5] {
            let est =
                snis_expectation(p, &cov, &|_| c, 2_000, &config, &stream(7)).unwrap();
            assert_eq!(est.value, c);
            assert_eq!(est.stderr, 0.0);
        }
        let ens = WeightedEnsemble::build(p, &cov, 2_000, &stream(7)).unwrap();
        let (v, se) = ens.expectation(1.0, &|_| 7.25).unwrap();
        assert_eq!(v, 7.25);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn zero_coupling_reduces_to_plain_monte_carlo() {
        let cov = cov2();
        let p = PotentialParams::new(2.0 * PI, 0.0).unwrap();
        let ens = WeightedEnsemble::build(p, &cov, 4_000, &stream(3)).unwrap();
        assert!(ens.weights().iter().all(|&w| w == 1.0));
        assert_eq!(ens.ess(), 4_000.0);
        let (mean, se) = ens.expectation(1.0, &|phi| phi.as_slice()[0]).unwrap();
        assert!(mean.abs() <= 3.0 * se, "free mean {mean} (se {se})");
        let (m2, se2) = ens.expectation(1.0, &|phi| {
            let v = phi.as_slice()[0];
            v * v
        }).unwrap();
        let exact = cov.cov_entry(f64::INFINITY, 0, 0);
        assert!((m2 - exact).abs() <= 4.0 * se2, "second moment {m2} vs {exact} (se {se2})");
    }

    // Reference values from a 10^7-draw run of a brute-force sampler built
    // on a direct covariance matrix and a hand-rolled Cholesky factor,
    // kept in examples/dev_oracle_snis.rs (n = 2, beta = 2 pi, lambda = 1,
    // m = 1).
    const REF_MEAN: f64 = -0.841_231_266_4;
    const REF_MEAN_SE: f64 = 3.193e-4;
    const REF_M2: f64 = 1.275_770_379_8;
    const REF_M2_SE: f64 = 8.062e-4;
    const REF_M2_DIAG: f64 = 1.062_328_705_6;
    const REF_M2_DIAG_SE: f64 = 7.202e-4;
    const REF_WICK: f64 = 0.335_844_701_5;
    const REF_WICK_SE: f64 = 1.773e-4;

    #[test]
    fn matches_frozen_independent_reference() {
        let cov = cov2();
        let p = PotentialParams::new(2.0 * PI, 1.0).unwrap();
        let config = OracleConfig::default();
        let n = 1_000_000;
        let s = stream(41);

        let mean = snis_expectation(p, &cov, &|phi| phi.as_slice()[0], n, &config, &s).unwrap();
        assert!(mean.value < -0.5, "interacting mean not negative: {}", mean.value);
        assert!(
            (mean.value - REF_MEAN).abs() <= 3.0 * (mean.stderr + REF_MEAN_SE),
            "mean {v} vs reference {REF_MEAN} (se {e})",
            v = mean.value,
            e = mean.stderr
        );

        let m2 = snis_expectation(
            p,
            &cov,
            &|phi| phi.as_slice()[0] * phi.as_slice()[0],
            n,
            &config,
            &s,
        )
        .unwrap();
        assert!(
            (m2.value - REF_M2).abs() <= 3.0 * (m2.stderr + REF_M2_SE),
            "m2 {v} vs reference {REF_M2}",
            v = m2.value
        );

        // Site (1,1) is the diagonal neighbour of site (0,0) on the 2x2 grid.
        let m2d = snis_expectation(
            p,
            &cov,
            &|phi| phi.as_slice()[0] * phi.as_slice()[3],
            n,
            &config,
            &s,
        )
        .unwrap();
        assert!(
            (m2d.value - REF_M2_DIAG).abs() <= 3.0 * (m2d.stderr + REF_M2_DIAG_SE),
            "diag m2 {v} vs reference {REF_M2_DIAG}",
            v = m2d.value
        );

        let pref = cov.grid().eps().powf(p.beta() / (4.0 * PI));
        let sqrt_beta = p.beta().sqrt();
        let wick = snis_expectation(
            p,
            &cov,
            &|phi| pref * (sqrt_beta * phi.as_slice()[0]).exp(),
            n,
            &config,
            &s,
        )
        .unwrap();
        assert!(
            (wick.value - REF_WICK).abs() <= 3.0 * (wick.stderr + REF_WICK_SE),
            "wick {v} vs reference {REF_WICK}",
            v = wick.value
        );
    }

    #[test]
    fn ess_gate_refuses_degenerate_weights() {
        let cov = cov2();
        let p = PotentialParams::new(2.0 * PI, 1_000.0).unwrap();
        let config = OracleConfig::default();
        let err = snis_expectation(p, &cov, &|phi| phi.as_slice()[0], 2_000, &config, &stream(5));
        assert!(matches!(err, Err(LvError::EssBelowFloor { .. })), "got {err:?}");
    }

    #[test]
    fn rejects_too_few_draws() {
        let cov = cov2();
        let p = PotentialParams::new(2.0 * PI, 1.0).unwrap();
        let config = OracleConfig::default();
        assert!(snis_expectation(p, &cov, &|_| 0.0, 500, &config, &stream(5)).is_err());
        assert!(WeightedEnsemble::build(p, &cov, 500, &stream(5)).is_err());
    }

    fn flow_states(
        cov: &Arc<CovarianceSpec>,
        params: PotentialParams,
        t_min: f64,
        ratio: f64,
        m_samples: usize,
        replicas: u64,
    ) -> Vec<FlowState> {
        let scale = ScaleGrid::geometric(t_min, ratio, cov.mass(), 0.05).unwrap();
        let sampler = CoupledGffSampler::new(vec![cov.clone()], scale, 0xf10e).unwrap();
        let config = FlowConfig { m_samples, ..FlowConfig::default() };
        (0..replicas)
            .map(|r| {
                let path = sampler.sample_path(r);
                picard_solve(params, cov, &path, 0, &config, r).unwrap()
            })
            .collect()
    }

    #[test]
    fn endpoint_validation_free_case_is_noise_only() {
        let cov = Arc::new(cov2());
        let p = PotentialParams::new(2.0 * PI, 0.0).unwrap();
        let states = flow_states(&cov, p, 0.25, 1.7, 64, 1_000);
        let config = OracleConfig { n_draws: 100_000, ..OracleConfig::default() };
        let report =
            validate_flow_endpoint(p, &cov, &states, &config, &stream(17)).unwrap();
        assert_eq!(report.replicas, 1_000);
        assert!(report.frac_within_3 >= 0.94, "frac {}", report.frac_within_3);
        assert!(report.max_z < 4.5, "max z {}", report.max_z);
    }

    // The difference field is frozen below the smallest knot, so the
    // endpoint carries an O(t_min) bias from the dropped drift increment;
    // t_min must sit well below eps^2 for the comparison to be clean.
    #[test]
    fn endpoint_validation_interacting_case_matches_oracle() {
        let cov = Arc::new(cov2());
        let p = PotentialParams::new(2.0 * PI, 1.0).unwrap();
        let states = flow_states(&cov, p, 0.01, 1.3, 256, 1_000);
        let config = OracleConfig { n_draws: 200_000, ..OracleConfig::default() };
        let report =
            validate_flow_endpoint(p, &cov, &states, &config, &stream(23)).unwrap();
        assert!(report.max_z <= 4.0, "max z {z}", z = report.max_z);
        assert!(report.ess > 0.3 * report.draws as f64);
    }

    #[test]
    fn endpoint_validation_rejects_bad_inputs() {
        let cov = Arc::new(cov2());
        let p = PotentialParams::new(2.0 * PI, 0.0).unwrap();
        let states = flow_states(&cov, p, 0.25, 1.7, 64, 10);
        let config = OracleConfig::default();
        assert!(validate_flow_endpoint(p, &cov, &states, &config, &stream(1)).is_err());
        let cov4 = Arc::new(CovarianceSpec::new(TorusGrid::new(4).unwrap(), 1.0).unwrap());
        let small = OracleConfig { min_replicas: 10, ..OracleConfig::default() };
        assert!(validate_flow_endpoint(p, &cov4, &states, &small, &stream(1)).is_err());
    }

    #[test]
    fn two_seeds_agree_on_the_battery() {
        let cov = cov2();
        let p = PotentialParams::new(2.0 * PI, 1.0).unwrap();
        let config = OracleConfig { n_draws: 200_000, ..OracleConfig::default() };
        let report =
            two_seed_agreement(p, &cov, &config, &stream(101), &stream(202)).unwrap();
        assert_eq!(report.rows.len(), 4 + 10 + 4);
        assert!(report.max_z <= 3.0, "max z {z}", z = report.max_z);
        assert!(report.ess_left > 0.0 && report.ess_right > 0.0);
    }
}
