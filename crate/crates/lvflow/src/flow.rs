//! Backward-flow solver producing the coupled field triple.
//!
//! The target process solves, knot by knot on a geometric scale grid,
//!
//! ```text
//! D_t = −∫_t^∞ ċ_s ∇v_s(Φ_s + D_s) ds,    D_∞ = 0,
//! ```
//!
//! where `Φ_s` is the Gaussian scale path. The solution is found by damped
//! Picard iteration: starting from `D⁰ ≡ 0`, each sweep evaluates the drift
//! at every knot on the current iterate, recomputes all suffix integrals by a
//! trapezoid rule in `log t` (the integrand varies on multiplicative scales),
//! and moves the iterate a fraction `damping` of the way toward the sweep
//! output. The sweep map is monotone decreasing in `D` (larger fields mean
//! larger drift), so undamped iterates straddle the fixed point and can lock
//! into a two-cycle once the local slope passes −1; under-relaxation keeps
//! the same fixed points while contracting slopes down to `1 − 2/damping`.
//! The coupled triple is then read off as
//!
//! ```text
//! (Φ_t,  Φ_t + D_t,  D_t)    per knot t.
//! ```
//!
//! Monte Carlo drift noise interacts with the iteration in two ways, and the
//! inner-noise keying is chosen to keep both honest:
//!
//! * consecutive iterates must be comparable below the resampling noise, so
//!   an iteration reuses the previous one's noise bank on odd steps (the
//!   consecutive delta at an odd step is a common-random-number measurement
//!   of the pure update);
//! * a single frozen bank would lock the fixed point onto that bank's noise
//!   realisation, so banks refresh on every even step.
//!
//! Convergence is therefore declared at odd steps from the third sweep on,
//! when a clean delta falls below the tolerance. The first sweep can never
//! qualify: its delta is the size of the drift integral itself, not a
//! measurement of the update map. The default tolerance is three times the
//! damping-scaled median per-site standard error of the current sweep's
//! drift integral, since iterating below the noise floor carries no
//! information.

use crate::covariance::CovarianceSpec;
use crate::gff::GffPath;
use crate::potential::{estimate_drift, PotentialParams};
use crate::streams::{Domain, SampleStream};
use crate::torus::LatticeField;
use crate::{LvError, Result};

/// Tuning knobs for [`picard_solve`].
#[derive(Debug, Clone)]
pub struct FlowConfig {
    /// Inner samples per drift evaluation.
    pub m_samples: usize,
    /// Iteration cap; exceeding it flags the state divergent.
    pub max_iterations: usize,
    /// Convergence tolerance on clean sup-norm deltas of the damped update.
    /// `None` selects three times the damping-scaled median per-site standard
    /// error of the drift integral, refreshed every sweep. An explicit value
    /// is used as given.
    pub tolerance: Option<f64>,
    /// Under-relaxation factor in `(0, 1]`: each sweep moves this fraction of
    /// the way from the current iterate to the sweep output. `1` is the pure
    /// Picard update.
    pub damping: f64,
    /// Root seed for the inner-noise streams.
    pub root_seed: u64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            m_samples: 256,
            max_iterations: 12,
            tolerance: None,
            damping: 0.5,
            root_seed: 1,
        }
    }
}

/// Converged (or capped) solver output for one replica on one grid: the
/// Gaussian knot fields, the difference-field iterate, its accumulated
/// standard errors, and the iteration trace.
#[derive(Debug, Clone)]
pub struct FlowState {
    knots: Vec<f64>,
    gff_fields: Vec<LatticeField>,
    below_increment: LatticeField,
    d_fields: Vec<LatticeField>,
    stderr_fields: Vec<LatticeField>,
    drift_fields: Vec<LatticeField>,
    deltas: Vec<f64>,
    iterations: usize,
    converged: bool,
    tolerance: f64,
    m_samples: usize,
}

impl FlowState {
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Gaussian field at knot `j`.
    pub fn gff_field(&self, j: usize) -> &LatticeField {
        &self.gff_fields[j]
    }

    /// Difference field at knot `j`.
    pub fn difference_field(&self, j: usize) -> &LatticeField {
        &self.d_fields[j]
    }

    /// Accumulated per-site standard error of the difference field at knot `j`.
    pub fn stderr_field(&self, j: usize) -> &LatticeField {
        &self.stderr_fields[j]
    }

    /// Cached drift evaluation at knot `j` from the final sweep.
    pub fn drift_field(&self, j: usize) -> &LatticeField {
        &self.drift_fields[j]
    }

    /// Interacting field at knot `j`: the Gaussian field plus the difference.
    pub fn lv_field(&self, j: usize) -> Result<LatticeField> {
        self.gff_fields[j].add(&self.d_fields[j])
    }

    /// Gaussian scales below the first knot, for endpoint assembly.
    pub fn below_increment(&self) -> &LatticeField {
        &self.below_increment
    }

    /// Endpoint of the interacting flow: first-knot field plus all scales
    /// below the grid.
    pub fn lv_endpoint(&self) -> Result<LatticeField> {
        self.lv_field(0)?.add(&self.below_increment)
    }

    /// Consecutive sup-norm deltas, one per completed sweep.
    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn m_samples(&self) -> usize {
        self.m_samples
    }

    /// Ratios of successive sup-norm deltas, `deltas[n]/deltas[n−1]`.
    pub fn contraction_ratios(&self) -> Vec<f64> {
        self.deltas.windows(2).map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 }).collect()
    }
}

fn knot_index(knots: &[f64], t: f64) -> Result<usize> {
    let idx = knots.iter().position(|&k| (k - t).abs() <= 1e-12 * k.max(1.0));
    idx.ok_or_else(|| LvError::Config(format!("t = {t} is not a knot of the scale grid")))
}

/// Suffix trapezoid weights in `log t`: `weights(j)[l]` multiplies the
/// integrand at knot `l` in the quadrature of `∫_{t_j}^{t_K}`.
fn suffix_weights(knots: &[f64], j: usize) -> Vec<f64> {
    let mut w = vec![0.0; knots.len()];
    for l in j..knots.len() - 1 {
        let dlog = (knots[l + 1] / knots[l]).ln();
        w[l] += 0.5 * dlog * knots[l];
        w[l + 1] += 0.5 * dlog * knots[l + 1];
    }
    w
}

/// Solves the backward flow on grid `grid_index` of `path` by Picard
/// iteration, one clean convergence check per noise bank.
pub fn picard_solve(
    params: PotentialParams,
    cov: &CovarianceSpec,
    path: &GffPath,
    grid_index: usize,
    config: &FlowConfig,
    replica: u64,
) -> Result<FlowState> {
    let grid = cov.grid();
    if path.grids()[grid_index].n() != grid.n() {
        return Err(LvError::DimensionMismatch {
            left: grid.n(),
            right: path.grids()[grid_index].n(),
        });
    }
    let knots: Vec<f64> = path.knots().to_vec();
    let k = knots.len();
    if k < 2 {
        return Err(LvError::Config("scale grid needs at least two knots".into()));
    }
    if config.max_iterations == 0 {
        return Err(LvError::BadParameter {
            name: "max_iterations",
            value: 0.0,
            constraint: "P >= 1",
        });
    }
    if !(config.damping > 0.0 && config.damping <= 1.0) {
        return Err(LvError::BadParameter {
            name: "damping",
            value: config.damping,
            constraint: "0 < damping <= 1",
        });
    }
    let gff_fields: Vec<LatticeField> = (0..k).map(|j| path.field(grid_index, j).clone()).collect();
    let weights: Vec<Vec<f64>> = (0..k).map(|j| suffix_weights(&knots, j)).collect();
    let stream_a = |knot: usize| ((grid.n() as u64) << 32) | knot as u64;

    let mut d: Vec<LatticeField> = (0..k).map(|_| LatticeField::zeros(grid)).collect();
    let mut stderr: Vec<LatticeField> = (0..k).map(|_| LatticeField::zeros(grid)).collect();
    let mut drifts: Vec<LatticeField> = (0..k).map(|_| LatticeField::zeros(grid)).collect();
    let mut deltas: Vec<f64> = Vec::new();
    let mut tolerance = config.tolerance.unwrap_or(0.0);
    let mut converged = false;
    let mut iterations = 0;

    for n in 1..=config.max_iterations {
        let bank = (n >> 1) as u64;
        let mut drift_se: Vec<LatticeField> = Vec::with_capacity(k);
        let mut new_drifts: Vec<LatticeField> = Vec::with_capacity(k);
        for (j, t) in knots.iter().enumerate() {
            let arg = gff_fields[j].add(&d[j])?;
            let stream =
                SampleStream::new(config.root_seed, Domain::FlowInner, stream_a(j), bank, replica);
            let est = estimate_drift(params, cov, *t, &arg, config.m_samples, &stream)?;
            new_drifts.push(est.value);
            drift_se.push(est.stderr);
        }
        let mut new_d: Vec<LatticeField> = Vec::with_capacity(k);
        let mut new_se: Vec<LatticeField> = Vec::with_capacity(k);
        for j in 0..k {
            let mut acc = LatticeField::zeros(grid);
            let mut var = vec![0.0f64; grid.sites()];
            for (l, &wl) in weights[j].iter().enumerate() {
                if wl != 0.0 {
                    acc.axpy(-wl, &new_drifts[l])?;
                    for (s, v) in var.iter_mut().enumerate() {
                        *v += wl * wl * drift_se[l].as_slice()[s].powi(2);
                    }
                }
            }
            new_d.push(acc);
            new_se.push(LatticeField::from_values(
                grid,
                var.into_iter().map(f64::sqrt).collect(),
            )?);
        }
        if config.tolerance.is_none() {
            let mut all: Vec<f64> = new_se
                .iter()
                .flat_map(|f| f.as_slice().iter().copied())
                .collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            tolerance = 3.0 * config.damping * all[all.len() / 2];
        }
        let damped: Vec<LatticeField> = (0..k)
            .map(|j| d[j].scale(1.0 - config.damping).add(&new_d[j].scale(config.damping)))
            .collect::<Result<_>>()?;
        let delta = (0..k)
            .map(|j| damped[j].sub(&d[j]).map(|f| f.sup_norm()))
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0f64, f64::max);
        deltas.push(delta);
        d = damped;
        stderr = new_se;
        drifts = new_drifts;
        iterations = n;
        // Odd sweeps reuse the bank of the previous sweep, so their delta is
        // a common-random-number measurement of the damped update. The first
        // sweep's delta is the size of the drift integral itself and must
        // never count as a convergence signal.
        if n >= 3 && n % 2 == 1 && delta <= tolerance {
            converged = true;
            break;
        }
    }

    Ok(FlowState {
        knots,
        gff_fields,
        below_increment: path.below_increment(grid_index).clone(),
        d_fields: d,
        stderr_fields: stderr,
        drift_fields: drifts,
        deltas,
        iterations,
        converged,
        tolerance,
        m_samples: config.m_samples,
    })
}

/// Trapezoid-in-`log t` integral of the cached drift over `[t_a, t_b]`,
/// signed like the difference field. For an undamped solve
/// (`damping = 1`), `drift_integral(t, t_K)` reproduces `−D_t` exactly;
/// under-relaxation leaves the iterate a damped average of past sweeps, so
/// the identity then holds only up to the convergence tolerance. Both
/// endpoints must be knots.
pub fn drift_integral(state: &FlowState, t_a: f64, t_b: f64) -> Result<LatticeField> {
    let ja = knot_index(&state.knots, t_a)?;
    let jb = knot_index(&state.knots, t_b)?;
    if ja > jb {
        return Err(LvError::Config(format!("empty interval [{t_a}, {t_b}] reversed")));
    }
    let grid = state.d_fields[0].grid();
    let mut acc = LatticeField::zeros(grid);
    for l in ja..jb {
        let dlog = (state.knots[l + 1] / state.knots[l]).ln();
        acc.axpy(0.5 * dlog * state.knots[l], &state.drift_fields[l])?;
        acc.axpy(0.5 * dlog * state.knots[l + 1], &state.drift_fields[l + 1])?;
    }
    Ok(acc)
}

/// Correlation test between small-scale Gaussian increments and the
/// interacting field at scale `t`.
#[derive(Debug, Clone)]
pub struct IndependenceReport {
    /// Sampled site pairs (x for the increment, y for the field).
    pub pairs: usize,
    /// Replica count behind each correlation.
    pub replicas: usize,
    /// Acceptance band `4/√replicas`.
    pub threshold: f64,
    /// Empirical correlations, one per pair.
    pub correlations: Vec<f64>,
    /// Largest absolute correlation.
    pub max_abs: f64,
    /// Fraction of pairs outside the band.
    pub exceed_fraction: f64,
}

/// Correlates `(Φ_0 − Φ_t)(x)` of the Gaussian path against the interacting
/// field at scale `t` at `y`, over replicas, for a deterministic spread of
/// site pairs.
pub fn independence_probe(states: &[FlowState], t: f64, max_pairs: usize) -> Result<IndependenceReport> {
    if states.len() < 2 {
        return Err(LvError::Config("independence probe needs at least two replicas".into()));
    }
    let jt = knot_index(&states[0].knots, t)?;
    let grid = states[0].d_fields[0].grid();
    let sites = grid.sites();
    let stride = (sites * sites / max_pairs.max(1)).max(1);
    let mut pair_list: Vec<(usize, usize)> = Vec::new();
    let mut cursor = 0usize;
    while cursor < sites * sites && pair_list.len() < max_pairs {
        pair_list.push((cursor / sites, cursor % sites));
        cursor += stride;
    }

    let r = states.len();
    let mut correlations = Vec::with_capacity(pair_list.len());
    for &(x, y) in &pair_list {
        let mut xs = Vec::with_capacity(r);
        let mut ys = Vec::with_capacity(r);
        for st in states {
            let small = st.below_increment.as_slice()[x] + st.gff_fields[0].as_slice()[x]
                - st.gff_fields[jt].as_slice()[x];
            let lv = st.gff_fields[jt].as_slice()[y] + st.d_fields[jt].as_slice()[y];
            xs.push(small);
            ys.push(lv);
        }
        correlations.push(pearson(&xs, &ys));
    }
    let threshold = 4.0 / (r as f64).sqrt();
    let max_abs = correlations.iter().map(|c| c.abs()).fold(0.0f64, f64::max);
    let exceed =
        correlations.iter().filter(|c| c.abs() > threshold).count() as f64 / correlations.len() as f64;
    Ok(IndependenceReport {
        pairs: correlations.len(),
        replicas: r,
        threshold,
        correlations,
        max_abs,
        exceed_fraction: exceed,
    })
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    let mut sab = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
        sab += (x - ma) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::ScaleGrid;
    use crate::gff::CoupledGffSampler;
    use crate::torus::TorusGrid;
    use std::sync::Arc;

    fn setup(n: usize, m: f64, t_min: f64) -> (Arc<CovarianceSpec>, CoupledGffSampler) {
        let cov = Arc::new(CovarianceSpec::new(TorusGrid::new(n).unwrap(), m).unwrap());
        let scale = ScaleGrid::geometric(t_min, 1.7, m, 0.05).unwrap();
        let sampler = CoupledGffSampler::new(vec![cov.clone()], scale, 0xabcd).unwrap();
        (cov, sampler)
    }

    #[test]
    fn zero_coupling_converges_at_first_clean_check_to_zero() {
        let (cov, sampler) = setup(4, 1.0, 0.05);
        let p = PotentialParams::new(4.0 * std::f64::consts::PI, 0.0).unwrap();
        let path = sampler.sample_path(0);
        let state =
            picard_solve(p, &cov, &path, 0, &FlowConfig::default(), 0).unwrap();
        assert!(state.converged());
        assert_eq!(state.iterations(), 3);
        for j in 0..state.knots().len() {
            assert!(state.difference_field(j).as_slice().iter().all(|&v| v == 0.0));
            let lv = state.lv_field(j).unwrap();
            assert_eq!(lv.as_slice(), state.gff_field(j).as_slice());
        }
    }

    #[test]
    fn difference_field_is_nonpositive_within_noise() {
        let (cov, sampler) = setup(4, 1.0, 0.05);
        let p = PotentialParams::new(4.0 * std::f64::consts::PI, 1.0).unwrap();
        let config = FlowConfig { m_samples: 128, ..FlowConfig::default() };
        for replica in 0..4u64 {
            let path = sampler.sample_path(replica);
            let state = picard_solve(p, &cov, &path, 0, &config, replica).unwrap();
            assert!(state.converged(), "replica {replica} did not converge");
            let last = state.knots().len() - 1;
            assert!(state.difference_field(last).sup_norm() <= state.tolerance());
            for j in 0..state.knots().len() {
                for (s, &v) in state.difference_field(j).as_slice().iter().enumerate() {
                    let se = state.stderr_field(j).as_slice()[s];
                    assert!(
                        v <= 3.0 * se + 1e-12,
                        "replica {replica} knot {j} site {s}: {v} vs 3se {b}",
                        b = 3.0 * se
                    );
                }
            }
        }
    }

    #[test]
    fn deltas_shrink_and_ratios_contract() {
        let (cov, sampler) = setup(8, 1.0, 0.02);
        let p = PotentialParams::new(4.0 * std::f64::consts::PI, 1.0).unwrap();
        let config = FlowConfig { m_samples: 768, ..FlowConfig::default() };
        let mut contracting = 0;
        let total = 6;
        for replica in 0..total {
            let path = sampler.sample_path(replica);
            let state = picard_solve(p, &cov, &path, 0, &config, replica).unwrap();
            assert!(state.converged());
            let deltas = state.deltas();
            assert!(deltas.len() >= 2);
            if state.contraction_ratios().iter().all(|&r| r < 1.0) {
                contracting += 1;
            }
            for w in deltas.windows(2) {
                assert!(w[1] <= 1.5 * w[0], "delta grew: {deltas:?}");
            }
        }
        assert!(contracting >= total - 1, "only {contracting}/{total} replicas contracted");
    }

    #[test]
    fn solver_is_deterministic_per_replica() {
        let (cov, sampler) = setup(4, 1.0, 0.05);
        let p = PotentialParams::new(2.0 * std::f64::consts::PI, 1.0).unwrap();
        let config = FlowConfig { m_samples: 64, ..FlowConfig::default() };
        let path = sampler.sample_path(3);
        let a = picard_solve(p, &cov, &path, 0, &config, 3).unwrap();
        let b = picard_solve(p, &cov, &path, 0, &config, 3).unwrap();
        for j in 0..a.knots().len() {
            assert_eq!(a.difference_field(j).as_slice(), b.difference_field(j).as_slice());
        }
        let other = picard_solve(p, &cov, &path, 0, &config, 4).unwrap();
        assert_ne!(
            a.difference_field(0).as_slice(),
            other.difference_field(0).as_slice()
        );
    }

    #[test]
    fn drift_integral_is_additive_and_empty_on_point_intervals() {
        let (cov, sampler) = setup(4, 1.0, 0.05);
        let p = PotentialParams::new(4.0 * std::f64::consts::PI, 1.0).unwrap();
        // damping = 1 so the final iterate is exactly the suffix integral of
        // the cached drift and the reconstruction identity is sharp.
        let config = FlowConfig { m_samples: 64, damping: 1.0, ..FlowConfig::default() };
        let path = sampler.sample_path(1);
        let state = picard_solve(p, &cov, &path, 0, &config, 1).unwrap();
        let k = state.knots();
        let (a, b, c) = (k[0], k[2], k[k.len() - 1]);
        let whole = drift_integral(&state, a, c).unwrap();
        let left = drift_integral(&state, a, b).unwrap();
        let right = drift_integral(&state, b, c).unwrap();
        let recombined = left.add(&right).unwrap();
        let gap = whole.sub(&recombined).unwrap().sup_norm();
        assert!(gap < 1e-12, "additivity gap {gap}");
        let point = drift_integral(&state, b, b).unwrap();
        assert!(point.as_slice().iter().all(|&v| v == 0.0));
        assert!(drift_integral(&state, c, a).is_err());
        assert!(drift_integral(&state, 0.123456, c).is_err());
        // The integral up to the last knot reproduces −D at the left endpoint.
        let full = drift_integral(&state, a, c).unwrap();
        let gap2 = full.scale(-1.0).sub(state.difference_field(0)).unwrap().sup_norm();
        assert!(gap2 < 1e-12, "integral does not match difference field: {gap2}");
    }

    #[test]
    fn independence_of_small_scales_free_case() {
        let (cov, sampler) = setup(4, 1.0, 0.05);
        let p = PotentialParams::new(2.0 * std::f64::consts::PI, 0.0).unwrap();
        let config = FlowConfig { m_samples: 32, ..FlowConfig::default() };
        let replicas = 400;
        let mut states = Vec::with_capacity(replicas);
        for replica in 0..replicas as u64 {
            let path = sampler.sample_path(replica);
            states.push(picard_solve(p, &cov, &path, 0, &config, replica).unwrap());
        }
        let t = states[0].knots()[3];
        let rep = independence_probe(&states, t, 48).unwrap();
        assert!(
            rep.max_abs <= rep.threshold,
            "free-field correlation {c} above {b}",
            c = rep.max_abs,
            b = rep.threshold
        );
    }

    #[test]
    fn independence_of_small_scales_interacting_case() {
        let (cov, sampler) = setup(4, 1.0, 0.05);
        let p = PotentialParams::new(4.0 * std::f64::consts::PI, 1.0).unwrap();
        let config = FlowConfig { m_samples: 48, ..FlowConfig::default() };
        let replicas = 300;
        let mut states = Vec::with_capacity(replicas);
        for replica in 0..replicas as u64 {
            let path = sampler.sample_path(replica);
            states.push(picard_solve(p, &cov, &path, 0, &config, replica).unwrap());
        }
        let knots = states[0].knots().to_vec();
        let t = knots[3];
        let rep = independence_probe(&states, t, 48).unwrap();
        assert!(rep.exceed_fraction <= 0.02, "exceedances {e}", e = rep.exceed_fraction);
        // Terminal knot: the difference field vanishes there, leaving pure
        // large-scale Gaussian data, so the same band applies.
        let rep_end = independence_probe(&states, knots[knots.len() - 1], 32).unwrap();
        assert!(rep_end.exceed_fraction <= 0.02);
    }
}
