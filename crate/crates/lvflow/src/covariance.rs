//! Heat-kernel decomposition of the massive Gaussian free field covariance.
//!
//! On `Ω_ε` with mass `m`, the GFF covariance operator is
//! `c_∞^ε = (−Δ^ε + m²)⁻¹`, diagonal in Fourier with multiplier
//!
//! ```text
//! Λ_k = Σ_{i=1,2} ε⁻²(2 − 2cos(ε k_i)) + m²  ≥ m²,   k ∈ Ω_ε^*.
//! ```
//!
//! It decomposes over scales `t ∈ [0, ∞)` through the heat semigroup
//! `ċ_t = e^{−t(−Δ^ε + m²)}` (multiplier `e^{−tΛ_k}`, positivity preserving)
//! as `c_t = ∫_0^t ċ_s ds` (multiplier `(1 − e^{−tΛ_k})/Λ_k`), with
//! `c_∞ − c_t` the covariance of the field still to be integrated out below
//! scale `t`. Operators act on fields by `(A f)(x) = ε² Σ_y A(x, y) f(y)`;
//! kernels are recovered from multipliers by `A(x, y) = Σ_k â(k) e^{ik·(x−y)}`.
//!
//! Two deterministic scale functions recur everywhere: `θ_t = e^{−m²t/2}`,
//! the large-`t` decay rate, and the effective scale `L_t = √t ∧ 1/m`.
//!
//! `t = ∞` is represented by `f64::INFINITY`; every multiplier formula
//! degrades gracefully there (`e^{−∞Λ} = 0`).

use crate::fft::fft2_inplace;
use crate::torus::{LatticeField, TorusGrid};
use crate::{LvError, Result};
use rustfft::num_complex::Complex64;
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

/// `θ_t = e^{−m²t/2}`.
pub fn theta(m: f64, t: f64) -> f64 {
    (-0.5 * m * m * t).exp()
}

/// `L_t = √t ∧ 1/m`, the effective correlation length at scale `t`.
pub fn cap_l(m: f64, t: f64) -> f64 {
    t.sqrt().min(1.0 / m)
}

/// Grid-and-mass bundle with the Fourier multiplier table and kernel caches.
///
/// Kernel rows (one inverse transform of a multiplier table) are cached per
/// `(t, kind)`; caches are write-once behind a mutex so concurrent replica
/// workers share them safely.
pub struct CovarianceSpec {
    grid: TorusGrid,
    m: f64,
    lambda: Vec<f64>,
    rows: Mutex<HashMap<(u64, RowKind), Arc<Vec<f64>>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum RowKind {
    /// Kernel of `ċ_t`, multiplier `e^{−tΛ}`.
    Heat,
    /// Kernel of `c_t`, multiplier `(1 − e^{−tΛ})/Λ`.
    Cov,
    /// Kernel of `c_∞ − c_t`, multiplier `e^{−tΛ}/Λ`; the covariance of the
    /// field with everything below scale `t` integrated out.
    Tail,
}

impl CovarianceSpec {
    /// Requires `m ≥ 1`: all scale estimates in the crate are stated for a
    /// mass bounded away from zero, and the scale grids truncate by powers of
    /// `θ_t`, which degenerates as `m → 0`.
    pub fn new(grid: TorusGrid, m: f64) -> Result<Self> {
        if !(m >= 1.0) || !m.is_finite() {
            return Err(LvError::BadParameter { name: "m", value: m, constraint: "m >= 1" });
        }
        let n = grid.n();
        let inv_eps2 = (n * n) as f64;
        let mut lambda = Vec::with_capacity(grid.sites());
        for p1 in 0..n {
            let a1 = 2.0 * std::f64::consts::PI * p1 as f64 / n as f64;
            let axis1 = inv_eps2 * (2.0 - 2.0 * a1.cos());
            for p2 in 0..n {
                let a2 = 2.0 * std::f64::consts::PI * p2 as f64 / n as f64;
                let axis2 = inv_eps2 * (2.0 - 2.0 * a2.cos());
                lambda.push(axis1 + axis2 + m * m);
            }
        }
        Ok(CovarianceSpec { grid, m, lambda, rows: Mutex::new(HashMap::new()) })
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn mass(&self) -> f64 {
        self.m
    }

    /// Multiplier `Λ_k` at stored mode indices `(p₁, p₂)`.
    pub fn multiplier(&self, p1: usize, p2: usize) -> f64 {
        self.lambda[p1 * self.grid.n() + p2]
    }

    /// Flat multiplier table in stored-mode order.
    pub fn lambda_table(&self) -> &[f64] {
        &self.lambda
    }

    /// Per-mode variance `∫_{t₁}^{t₂} e^{−sΛ} ds = (e^{−t₁Λ} − e^{−t₂Λ})/Λ`
    /// of a noise increment between scales. Infinite `t₂` is allowed.
    pub fn increment_variance(&self, p1: usize, p2: usize, t1: f64, t2: f64) -> f64 {
        integrated_heat(self.multiplier(p1, p2), t1, t2)
    }

    /// `c_t` multiplier `(1 − e^{−tΛ})/Λ` at stored mode indices.
    pub fn cov_multiplier(&self, p1: usize, p2: usize, t: f64) -> f64 {
        cov_multiplier_of(self.multiplier(p1, p2), t)
    }

    /// `c_∞ − c_t` multiplier `e^{−tΛ}/Λ` at stored mode indices.
    pub fn tail_multiplier(&self, p1: usize, p2: usize, t: f64) -> f64 {
        integrated_heat(self.multiplier(p1, p2), t, f64::INFINITY)
    }

    /// Per-mode variance table of `c_t` in stored-mode order.
    pub fn cov_table(&self, t: f64) -> Vec<f64> {
        self.lambda.iter().map(|&l| cov_multiplier_of(l, t)).collect()
    }

    /// Per-mode variance table of `c_∞ − c_t` in stored-mode order.
    pub fn tail_table(&self, t: f64) -> Vec<f64> {
        self.lambda.iter().map(|&l| integrated_heat(l, t, f64::INFINITY)).collect()
    }

    /// Applies `ċ_t` to a field: `(ċ_t f)(x) = ε² Σ_y ċ_t(x,y) f(y)`,
    /// spectrally exact multiplication by `e^{−tΛ_k}`.
    pub fn heat_apply(&self, t: f64, field: &LatticeField) -> Result<LatticeField> {
        if field.grid().n() != self.grid.n() {
            return Err(LvError::DimensionMismatch { left: self.grid.n(), right: field.grid().n() });
        }
        if !(t >= 0.0) {
            return Err(LvError::BadParameter { name: "t", value: t, constraint: "t >= 0" });
        }
        let n = self.grid.n();
        let mut buf: Vec<Complex64> =
            field.as_slice().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft2_inplace(&mut buf, n, false);
        let scale = 1.0 / (n * n) as f64;
        for (c, &lam) in buf.iter_mut().zip(self.lambda.iter()) {
            *c *= scale * (-t * lam).exp();
        }
        fft2_inplace(&mut buf, n, true);
        LatticeField::from_values(self.grid, buf.into_iter().map(|c| c.re).collect())
    }

    /// Kernel row of `ċ_t` as a field over displacements `d = x − y`.
    pub fn heat_row(&self, t: f64) -> Arc<Vec<f64>> {
        self.row(t, RowKind::Heat)
    }

    /// Kernel row of `c_t` over displacements.
    pub fn cov_row(&self, t: f64) -> Arc<Vec<f64>> {
        self.row(t, RowKind::Cov)
    }

    /// Kernel row of `c_∞ − c_t` over displacements.
    pub fn tail_row(&self, t: f64) -> Arc<Vec<f64>> {
        self.row(t, RowKind::Tail)
    }

    fn row(&self, t: f64, kind: RowKind) -> Arc<Vec<f64>> {
        debug_assert!(t >= 0.0);
        let key = (t.to_bits(), kind);
        if let Some(row) = self.rows.lock().expect("row cache poisoned").get(&key) {
            return row.clone();
        }
        let n = self.grid.n();
        let mut buf: Vec<Complex64> = self
            .lambda
            .iter()
            .map(|&lam| {
                let v = match kind {
                    RowKind::Heat => (-t * lam).exp(),
                    RowKind::Cov => cov_multiplier_of(lam, t),
                    RowKind::Tail => integrated_heat(lam, t, f64::INFINITY),
                };
                Complex64::new(v, 0.0)
            })
            .collect();
        fft2_inplace(&mut buf, n, true);
        let row = Arc::new(buf.into_iter().map(|c| c.re).collect::<Vec<f64>>());
        self.rows.lock().expect("row cache poisoned").entry(key).or_insert(row).clone()
    }

    /// Covariance entry `c_t(x, y) = Σ_k ĉ_t(k) e^{ik·(x−y)}` for sites given
    /// by row-major indices. Translation invariance makes this a row lookup.
    pub fn cov_entry(&self, t: f64, x: usize, y: usize) -> f64 {
        let n = self.grid.n();
        let (xi, xj) = self.grid.coords(x);
        let (yi, yj) = self.grid.coords(y);
        let di = (xi + n - yi) % n;
        let dj = (xj + n - yj) % n;
        self.cov_row(t)[di * n + dj]
    }

    /// On-diagonal variance `c_t(x, x) = Σ_k ĉ_t(k)`, site independent.
    pub fn diag_variance(&self, t: f64) -> f64 {
        self.cov_row(t)[0]
    }

    /// Entry of `c_∞ − c_t` at row-major site indices.
    pub fn tail_entry(&self, t: f64, x: usize, y: usize) -> f64 {
        let n = self.grid.n();
        let (xi, xj) = self.grid.coords(x);
        let (yi, yj) = self.grid.coords(y);
        let di = (xi + n - yi) % n;
        let dj = (xj + n - yj) % n;
        self.tail_row(t)[di * n + dj]
    }

    /// On-diagonal variance of the scale-`t` field, `(c_∞ − c_t)(x, x)`.
    pub fn tail_diag_variance(&self, t: f64) -> f64 {
        self.tail_row(t)[0]
    }

    /// `ε² Σ_d |∂^order ċ_t(d)|`, the L¹ norm of the heat kernel row or of its
    /// iterated forward differences. For `order ≥ 1` the reported value is the
    /// maximum over the distinct direction tuples (two first differences;
    /// xx, xy, yy second differences). Requires `t ≥ ε²`: below the mesh scale
    /// the discrete kernel no longer resolves the continuum estimates this
    /// quantity is compared against.
    pub fn kernel_row_l1(&self, t: f64, order: usize) -> Result<f64> {
        let eps = self.grid.eps();
        if !(t >= eps * eps) {
            return Err(LvError::BadParameter { name: "t", value: t, constraint: "t >= eps^2" });
        }
        if order > 2 {
            return Err(LvError::BadParameter {
                name: "order",
                value: order as f64,
                constraint: "order <= 2",
            });
        }
        let row = self.heat_row(t);
        let n = self.grid.n();
        let eps2 = eps * eps;
        let inv_eps = n as f64;
        let l1_of = |f: &dyn Fn(usize, usize) -> f64| -> f64 {
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..n {
                    acc += f(i, j).abs();
                }
            }
            eps2 * acc
        };
        let at = |i: usize, j: usize| row[(i % n) * n + (j % n)];
        Ok(match order {
            0 => l1_of(&|i, j| at(i, j)),
            1 => {
                let dx = l1_of(&|i, j| inv_eps * (at(i + 1, j) - at(i, j)));
                let dy = l1_of(&|i, j| inv_eps * (at(i, j + 1) - at(i, j)));
                dx.max(dy)
            }
            _ => {
                let sq = inv_eps * inv_eps;
                let dxx = l1_of(&|i, j| sq * (at(i + 2, j) - 2.0 * at(i + 1, j) + at(i, j)));
                let dyy = l1_of(&|i, j| sq * (at(i, j + 2) - 2.0 * at(i, j + 1) + at(i, j)));
                let dxy = l1_of(&|i, j| {
                    sq * (at(i + 1, j + 1) - at(i + 1, j) - at(i, j + 1) + at(i, j))
                });
                dxx.max(dyy).max(dxy)
            }
        })
    }

    /// `ε² Σ_d |ċ_t(x, ·) − ċ_t(y, ·)|` for a site displacement `x − y` given
    /// in lattice steps; compared against `C (1 ∧ |x−y|/L_t) θ_t`.
    pub fn heat_row_difference_l1(&self, t: f64, shift: (usize, usize)) -> f64 {
        let row = self.heat_row(t);
        let n = self.grid.n();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let si = (i + shift.0) % n;
                let sj = (j + shift.1) % n;
                acc += (row[si * n + sj] - row[i * n + j]).abs();
            }
        }
        self.grid.eps().powi(2) * acc
    }
}

fn cov_multiplier_of(lambda: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if t == f64::INFINITY {
        1.0 / lambda
    } else {
        // (1 − e^{−tΛ})/Λ via expm1 for accuracy at small tΛ.
        -(-t * lambda).exp_m1() / lambda
    }
}

/// `∫_{t₁}^{t₂} e^{−sλ} ds` with either endpoint possibly infinite.
pub fn integrated_heat(lambda: f64, t1: f64, t2: f64) -> f64 {
    debug_assert!(0.0 <= t1 && t1 <= t2);
    let upper = if t2 == f64::INFINITY { 0.0 } else { (-t2 * lambda).exp() };
    let lower = if t1 == f64::INFINITY { 0.0 } else { (-t1 * lambda).exp() };
    (lower - upper) / lambda
}

/// Geometric grid of scale knots `t_j = t_min · r^j` used to discretise all
/// integrals over scale. The last knot is the first one where `θ_t` falls
/// below the truncation threshold, so everything beyond it is negligible at
/// the accuracy the harness works to.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleGrid {
    knots: Vec<f64>,
    ratio: f64,
}

impl ScaleGrid {
    /// Builds knots from `t_min` with ratio `r ∈ (1, 2]` until
    /// `θ_t < theta_cutoff` for mass `m`.
    pub fn geometric(t_min: f64, ratio: f64, m: f64, theta_cutoff: f64) -> Result<Self> {
        if !(t_min > 0.0) || !t_min.is_finite() {
            return Err(LvError::BadParameter {
                name: "t_min",
                value: t_min,
                constraint: "t_min > 0",
            });
        }
        if !(ratio > 1.0) {
            return Err(LvError::BadParameter {
                name: "ratio",
                value: ratio,
                constraint: "ratio > 1",
            });
        }
        if ratio > 2.0 {
            return Err(LvError::ScaleGridTooCoarse { ratio });
        }
        if !(theta_cutoff > 0.0 && theta_cutoff < 1.0) {
            return Err(LvError::BadParameter {
                name: "theta_cutoff",
                value: theta_cutoff,
                constraint: "0 < cutoff < 1",
            });
        }
        let mut knots = vec![t_min];
        loop {
            let t = *knots.last().expect("nonempty");
            if theta(m, t) < theta_cutoff {
                break;
            }
            knots.push(t * ratio);
            if knots.len() > 100_000 {
                return Err(LvError::BadParameter {
                    name: "theta_cutoff",
                    value: theta_cutoff,
                    constraint: "cutoff reachable within 1e5 knots",
                });
            }
        }
        Ok(ScaleGrid { knots, ratio })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn t_min(&self) -> f64 {
        self.knots[0]
    }

    pub fn t_max(&self) -> f64 {
        *self.knots.last().expect("nonempty")
    }

    /// Index of the first knot `≥ t` (knot count if none).
    pub fn first_knot_at_or_above(&self, t: f64) -> usize {
        self.knots.partition_point(|&k| k < t)
    }

    /// Trapezoid weights in `log t` for `∫_{t_a}^{t_max} f(s) ds` restricted
    /// to knots `[a, end)`: with `u = log s`, `∫ f ds = ∫ f(e^u) e^u du`.
    pub fn quadrature_weights(&self, a: usize) -> Vec<f64> {
        let k = self.knots.len();
        assert!(a < k);
        let mut w = vec![0.0; k - a];
        for j in a..k - 1 {
            let du = (self.knots[j + 1] / self.knots[j]).ln();
            w[j - a] += 0.5 * du * self.knots[j];
            w[j + 1 - a] += 0.5 * du * self.knots[j + 1];
        }
        w
    }
}
