//! Sampling of the scale-decomposed Gaussian free field, jointly over a
//! ladder of mesh sizes.
//!
//! The field at scale `t` is `Φ_t = ∫_t^∞ q_s dW_s` mode by mode, with
//! `q̂_s(k) = e^{−sΛ_k/2}`, so `Φ_0` is the full GFF, `Φ_t` has covariance
//! `c_∞ − c_t`, and increments over disjoint scale intervals are independent.
//! The coupling across meshes drives every grid that carries a physical mode
//! `k = 2πj` with the same white-in-scale noise `W_j`; only the lattice
//! dispersion `Λ_k^ε` differs. Consequences realised exactly here:
//!
//! * marginals exact: per grid and per scale knot, each mode's variance is
//!   the closed-form integral of its own `e^{−sΛ}`;
//! * cross-mesh coupling exact: for grids `1, 2` sharing a mode,
//!   `E[ΔΦ¹ ΔΦ²] = ∫ e^{−s(Λ¹+Λ²)/2} ds` over the scale interval, realised
//!   through a per-interval Gram matrix and its Cholesky factor;
//! * restriction consistency: dropping the finer grids of a ladder
//!   reproduces the coarse sample bit for bit, because factors are ordered
//!   coarsest first and draws are consumed in carrier order.
//!
//! Mode bookkeeping: on a grid of side `n`, stored modes pair under the
//! reflection `j ↦ −j` taken in the dual group (the Nyquist coordinate
//! `n/2` is its own negative). Each class is addressed by its
//! lexicographically largest member, an integer vector independent of the
//! mesh, and that address keys the noise stream. A class that is a proper
//! pair carries one complex degree of freedom; a self-paired class carries
//! one real one. A coarse Nyquist class reappears on finer grids as the
//! pair class with the same address, so the shared stream couples them,
//! while the alias partner born on the finer grid gets a fresh address and
//! fresh noise.

use crate::covariance::{integrated_heat, CovarianceSpec, ScaleGrid};
use crate::streams::{pack_mode, rng_for, Domain, StreamKey};
use crate::torus::{spectral_inverse, LatticeField, SpectralCoeffs, TorusGrid};
use crate::{LvError, Result};
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use std::collections::BTreeMap;
use std::sync::Arc;

/// Reflection of a signed mode coordinate in the dual group of side `n`.
fn neg_coord(j: i64, n: i64) -> i64 {
    if j == n / 2 {
        j
    } else {
        -j
    }
}

/// One reflection class of stored modes: its canonical address and whether
/// it is a proper pair (complex coefficient) or self-paired (real).
#[derive(Debug, Clone, Copy)]
struct ModeClass {
    rep: (i64, i64),
    proper: bool,
}

/// All reflection classes of a grid, sorted by canonical address.
fn mode_classes(grid: TorusGrid) -> Vec<ModeClass> {
    let n = grid.n() as i64;
    let mut classes = Vec::new();
    for p1 in 0..grid.n() {
        for p2 in 0..grid.n() {
            let j = (grid.signed_mode(p1), grid.signed_mode(p2));
            let r = (neg_coord(j.0, n), neg_coord(j.1, n));
            if j >= r {
                classes.push(ModeClass { rep: j, proper: j != r });
            }
        }
    }
    classes.sort_by_key(|c| c.rep);
    classes
}

/// Draws a centred Gaussian field whose per-mode variances are given in
/// stored-mode order. One class at a time, in canonical order: a self-paired
/// class consumes one standard normal, a proper pair two.
pub fn sample_with_variance_table<R: Rng>(
    grid: TorusGrid,
    table: &[f64],
    rng: &mut R,
) -> LatticeField {
    assert_eq!(table.len(), grid.sites());
    let mut coeffs = SpectralCoeffs::zeros(grid);
    let buf = coeffs.as_mut_slice();
    let n = grid.n();
    for class in mode_classes(grid) {
        let (r1, r2) = class.rep;
        let idx = grid.mode_index(r1) * n + grid.mode_index(r2);
        let v = table[idx];
        if class.proper {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            let half = (0.5 * v).sqrt();
            let zeta = Complex64::new(half * a, half * b);
            let cidx = grid.mode_index(neg_coord(r1, n as i64)) * n
                + grid.mode_index(neg_coord(r2, n as i64));
            buf[idx] = zeta;
            buf[cidx] = zeta.conj();
        } else {
            let a: f64 = rng.sample(StandardNormal);
            buf[idx] = Complex64::new(v.sqrt() * a, 0.0);
        }
    }
    spectral_inverse(&coeffs)
}

/// `ζ ~ N(0, c_t)`: the Gaussian integration variable of the scale-`t`
/// renormalised potential.
pub fn sample_field_cov<R: Rng>(cov: &CovarianceSpec, t: f64, rng: &mut R) -> LatticeField {
    sample_with_variance_table(cov.grid(), &cov.cov_table(t), rng)
}

/// A draw of the full GFF, `N(0, c_∞)`.
pub fn sample_field_full<R: Rng>(cov: &CovarianceSpec, rng: &mut R) -> LatticeField {
    sample_field_cov(cov, f64::INFINITY, rng)
}

/// One noise address shared across the ladder: the grids that carry it,
/// coarsest first, each with its own dispersion value and pairing kind.
struct KeyEntry {
    packed: u64,
    rep: (i64, i64),
    carriers: Vec<Carrier>,
}

struct Carrier {
    grid: usize,
    lambda: f64,
    proper: bool,
}

/// Joint sampler for the scale decomposition on a ladder of grids.
pub struct CoupledGffSampler {
    covs: Vec<Arc<CovarianceSpec>>,
    scale: ScaleGrid,
    root_seed: u64,
    keys: Vec<KeyEntry>,
    /// Lower-triangular Cholesky factors of the per-interval Gram matrices,
    /// flattened per interval with per-key offsets.
    chol: Vec<Vec<f64>>,
    offsets: Vec<usize>,
}

impl CoupledGffSampler {
    /// Grids must be strictly increasing in resolution and share one mass.
    pub fn new(
        covs: Vec<Arc<CovarianceSpec>>,
        scale: ScaleGrid,
        root_seed: u64,
    ) -> Result<Self> {
        if covs.is_empty() {
            return Err(LvError::Config("sampler needs at least one grid".into()));
        }
        let m = covs[0].mass();
        for w in covs.windows(2) {
            if w[1].grid().n() <= w[0].grid().n() {
                return Err(LvError::Config(
                    "ladder grids must be strictly increasing in resolution".into(),
                ));
            }
        }
        if covs.iter().any(|c| c.mass() != m) {
            return Err(LvError::Config("ladder grids must share one mass".into()));
        }

        let mut map: BTreeMap<(i64, i64), KeyEntry> = BTreeMap::new();
        for (g, cov) in covs.iter().enumerate() {
            let grid = cov.grid();
            for class in mode_classes(grid) {
                let idx1 = grid.mode_index(class.rep.0);
                let idx2 = grid.mode_index(class.rep.1);
                let lambda = cov.multiplier(idx1, idx2);
                map.entry(class.rep)
                    .or_insert_with(|| KeyEntry {
                        packed: pack_mode(class.rep.0, class.rep.1),
                        rep: class.rep,
                        carriers: Vec::new(),
                    })
                    .carriers
                    .push(Carrier { grid: g, lambda, proper: class.proper });
            }
        }
        let keys: Vec<KeyEntry> = map.into_values().collect();

        let mut offsets = Vec::with_capacity(keys.len());
        let mut total = 0usize;
        for key in &keys {
            offsets.push(total);
            let g = key.carriers.len();
            total += g * (g + 1) / 2;
        }

        let bounds = interval_bounds(&scale);
        let mut chol = Vec::with_capacity(bounds.len());
        for &(u, v) in &bounds {
            let mut slab = vec![0.0f64; total];
            for (key, &off) in keys.iter().zip(offsets.iter()) {
                let g = key.carriers.len();
                let mut gram = vec![0.0f64; g * g];
                for a in 0..g {
                    for b in 0..g {
                        let mu = 0.5 * (key.carriers[a].lambda + key.carriers[b].lambda);
                        gram[a * g + b] = integrated_heat(mu, u, v);
                    }
                }
                cholesky_lower(&mut gram, g);
                let mut k = 0;
                for a in 0..g {
                    for b in 0..=a {
                        slab[off + k] = gram[a * g + b];
                        k += 1;
                    }
                }
            }
            chol.push(slab);
        }

        Ok(CoupledGffSampler { covs, scale, root_seed, keys, chol, offsets })
    }

    pub fn scale_grid(&self) -> &ScaleGrid {
        &self.scale
    }

    pub fn grids(&self) -> Vec<TorusGrid> {
        self.covs.iter().map(|c| c.grid()).collect()
    }

    pub fn covariances(&self) -> &[Arc<CovarianceSpec>] {
        &self.covs
    }

    /// Samples the whole scale path of one replica: fields at every knot on
    /// every grid, plus the below-grid increment over `[0, t_min]`.
    pub fn sample_path(&self, replica: u64) -> GffPath {
        let knots = self.scale.knots();
        let k = knots.len();
        let n_grids = self.covs.len();

        // increments[g][l]: interval l contribution on grid g.
        let mut increments: Vec<Vec<LatticeField>> = Vec::with_capacity(n_grids);
        let mut spectra: Vec<SpectralCoeffs> = self
            .covs
            .iter()
            .map(|c| SpectralCoeffs::zeros(c.grid()))
            .collect();
        for _ in 0..n_grids {
            increments.push(Vec::with_capacity(k + 1));
        }

        for l in 0..=k {
            for s in spectra.iter_mut() {
                for c in s.as_mut_slice() {
                    *c = Complex64::new(0.0, 0.0);
                }
            }
            let slab = &self.chol[l];
            for (key, &off) in self.keys.iter().zip(self.offsets.iter()) {
                let mut rng = rng_for(
                    self.root_seed,
                    StreamKey::new(Domain::GffMode, key.packed, l as u64, 0),
                    replica,
                );
                let g = key.carriers.len();
                let mut za = [0.0f64; 8];
                let mut zb = [0.0f64; 8];
                debug_assert!(g <= 8);
                for c in 0..g {
                    za[c] = rng.sample(StandardNormal);
                    zb[c] = rng.sample(StandardNormal);
                }
                let mut tri = off;
                for (c, carrier) in key.carriers.iter().enumerate() {
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    for d in 0..=c {
                        let l_cd = slab[tri + d];
                        alpha += l_cd * za[d];
                        beta += l_cd * zb[d];
                    }
                    tri += c + 1;
                    scatter_class(
                        &mut spectra[carrier.grid],
                        key.rep,
                        carrier.proper,
                        alpha,
                        beta,
                    );
                }
            }
            for (g, s) in spectra.iter().enumerate() {
                increments[g].push(spectral_inverse(s));
            }
        }

        // Suffix sums over finite intervals and the tail give the knots.
        let mut fields: Vec<Vec<LatticeField>> = Vec::with_capacity(n_grids);
        let mut below: Vec<LatticeField> = Vec::with_capacity(n_grids);
        for (g, incs) in increments.into_iter().enumerate() {
            let grid = self.covs[g].grid();
            let mut at_knots: Vec<LatticeField> = vec![LatticeField::zeros(grid); k];
            let mut acc = LatticeField::zeros(grid);
            for j in (0..k).rev() {
                acc.axpy(1.0, &incs[j]).expect("same grid");
                at_knots[j] = acc.clone();
            }
            fields.push(at_knots);
            below.push(incs[k].clone());
        }

        GffPath { grids: self.grids(), knots: knots.to_vec(), fields, below }
    }

    /// Exact covariance `E[Φ_t^{g1}(x) Φ_t^{g2}(y)]` of the coupled fields,
    /// summed in closed form over shared noise addresses. Site indices are
    /// row-major on their own grids. For `g1 = g2` this reduces to the
    /// marginal `(c_∞ − c_t)(x, y)`.
    pub fn coupled_covariance(&self, g1: usize, g2: usize, t: f64, x: usize, y: usize) -> f64 {
        let grid1 = self.covs[g1].grid();
        let grid2 = self.covs[g2].grid();
        let (xi, xj) = grid1.coords(x);
        let (yi, yj) = grid2.coords(y);
        let mut acc = 0.0;
        for key in &self.keys {
            let c1 = key.carriers.iter().find(|c| c.grid == g1);
            let c2 = key.carriers.iter().find(|c| c.grid == g2);
            let (c1, c2) = match (c1, c2) {
                (Some(a), Some(b)) => (a, b),
                _ => continue,
            };
            let sigma = integrated_heat(0.5 * (c1.lambda + c2.lambda), t, f64::INFINITY);
            let w = if c1.proper { std::f64::consts::SQRT_2 } else { 1.0 }
                * if c2.proper { std::f64::consts::SQRT_2 } else { 1.0 };
            let phase1 = 2.0 * std::f64::consts::PI
                * (key.rep.0 as f64 * xi as f64 + key.rep.1 as f64 * xj as f64)
                / grid1.n() as f64;
            let phase2 = 2.0 * std::f64::consts::PI
                * (key.rep.0 as f64 * yi as f64 + key.rep.1 as f64 * yj as f64)
                / grid2.n() as f64;
            let mut term = phase1.cos() * phase2.cos();
            if c1.proper && c2.proper {
                term += phase1.sin() * phase2.sin();
            }
            acc += w * sigma * term;
        }
        acc
    }
}

/// Finite intervals between consecutive knots, then the tail `[t_max, ∞)`,
/// then the below-grid interval `[0, t_min]`; indices match stream keys.
fn interval_bounds(scale: &ScaleGrid) -> Vec<(f64, f64)> {
    let knots = scale.knots();
    let k = knots.len();
    let mut bounds = Vec::with_capacity(k + 1);
    for l in 0..k - 1 {
        bounds.push((knots[l], knots[l + 1]));
    }
    bounds.push((knots[k - 1], f64::INFINITY));
    bounds.push((0.0, knots[0]));
    bounds
}

/// Writes one class coefficient into a spectral buffer: real `α` for a
/// self-paired class, `ζ = (α + iβ)/√2` with its conjugate for a proper pair.
fn scatter_class(
    spectrum: &mut SpectralCoeffs,
    rep: (i64, i64),
    proper: bool,
    alpha: f64,
    beta: f64,
) {
    let grid = spectrum.grid();
    let n = grid.n();
    let idx = grid.mode_index(rep.0) * n + grid.mode_index(rep.1);
    let buf = spectrum.as_mut_slice();
    if proper {
        let inv = std::f64::consts::FRAC_1_SQRT_2;
        let zeta = Complex64::new(inv * alpha, inv * beta);
        let cidx = grid.mode_index(neg_coord(rep.0, n as i64)) * n
            + grid.mode_index(neg_coord(rep.1, n as i64));
        buf[idx] = zeta;
        buf[cidx] = zeta.conj();
    } else {
        buf[idx] = Complex64::new(alpha, 0.0);
    }
}

/// In-place lower Cholesky of a dense `g×g` matrix (row major). Pivots that
/// vanish to rounding are clamped to zero, which realises exact linear
/// dependence (perfectly coupled modes) instead of failing.
fn cholesky_lower(a: &mut [f64], g: usize) {
    for i in 0..g {
        for j in 0..=i {
            let mut s = a[i * g + j];
            for p in 0..j {
                s -= a[i * g + p] * a[j * g + p];
            }
            if i == j {
                a[i * g + j] = if s > 0.0 { s.sqrt() } else { 0.0 };
            } else {
                let d = a[j * g + j];
                a[i * g + j] = if d > 0.0 { s / d } else { 0.0 };
            }
        }
        for j in i + 1..g {
            a[i * g + j] = 0.0;
        }
    }
}

/// One replica's sampled scale path: fields at every knot per grid, and the
/// `[0, t_min]` increment completing `Φ_0`.
pub struct GffPath {
    grids: Vec<TorusGrid>,
    knots: Vec<f64>,
    fields: Vec<Vec<LatticeField>>,
    below: Vec<LatticeField>,
}

impl GffPath {
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn grids(&self) -> &[TorusGrid] {
        &self.grids
    }

    /// `Φ_{t_j}` on ladder grid `g`.
    pub fn field(&self, g: usize, knot: usize) -> &LatticeField {
        &self.fields[g][knot]
    }

    /// Gaussian increment over `[0, t_min]` on ladder grid `g`.
    pub fn below_increment(&self, g: usize) -> &LatticeField {
        &self.below[g]
    }

    /// The full-field sample `Φ_0 = Φ_{t_min} +` below-grid increment.
    pub fn endpoint_field(&self, g: usize) -> LatticeField {
        self.fields[g][0].add(&self.below[g]).expect("same grid")
    }
}
