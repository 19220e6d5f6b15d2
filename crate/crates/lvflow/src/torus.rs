//! Dyadic discretisations of the unit torus and fields living on them.
//!
//! The torus `Ω = (R/Z)²` is discretised as `Ω_ε = {0, ε, 2ε, …, 1−ε}²` with
//! `1/ε = n = 2^k`. A site `(i, j)` sits at `x = (i·ε, j·ε)` and fields are
//! stored row-major as `values[i·n + j]`. Discrete analogues of the continuum
//! operations carry the volume element `ε²`:
//!
//! * integral        `∫ f = ε² Σ_x f(x)`
//! * inner product   `⟨f, g⟩ = ε² Σ_x f(x) g(x)`
//! * Laplacian       `Δf(x) = ε⁻² Σ_{y∼x} (f(y) − f(x))`, neighbours with
//!                   multiplicity, so the `n = 2` torus counts each of the two
//!                   distinct neighbours twice
//! * gradient        `(∂_e f)(x) = ε⁻¹ (f(x+εe) − f(x))`, forward difference
//!
//! The Fourier dual is `Ω_ε^* = {k ∈ 2πZ² : −π/ε < k_i ≤ π/ε}`, indexed by
//! integer modes `j_i ∈ {−(n/2−1), …, n/2}` with `k = 2πj`; the Nyquist row
//! `j_i = n/2` is its own reflection. Spectral coefficients follow the
//! convention `f(x) = Σ_k c(k) e^{ik·x}`, i.e. `c(k) = n⁻² Σ_x f(x) e^{−ik·x}`,
//! under which Parseval reads `ε² Σ_x |f|² = Σ_k |c(k)|²` and a real field has
//! Hermitian coefficients `c(−k) = conj(c(k))`.

use crate::fft::fft2_inplace;
use crate::{LvError, Result};
use rustfft::num_complex::Complex64;

/// A dyadic grid on the unit torus. Cheap to copy; carries only the side `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TorusGrid {
    n: usize,
}

impl TorusGrid {
    /// A grid with `n = 2^k ≥ 2` sites per side, mesh `ε = 1/n`.
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 || !n.is_power_of_two() {
            return Err(LvError::BadGridSize(n));
        }
        Ok(TorusGrid { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Mesh size `ε = 1/n`.
    pub fn eps(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Number of sites `n²`.
    pub fn sites(&self) -> usize {
        self.n * self.n
    }

    /// Row-major index of the site at `x = (i·ε, j·ε)`.
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.n && j < self.n);
        i * self.n + j
    }

    /// Site coordinates `(i, j)` of a row-major index.
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx / self.n, idx % self.n)
    }

    /// Continuum position of a site.
    pub fn position(&self, idx: usize) -> (f64, f64) {
        let (i, j) = self.coords(idx);
        (i as f64 * self.eps(), j as f64 * self.eps())
    }

    /// Signed integer mode for a stored axis index: `p ↦ p` for `p ≤ n/2`,
    /// else `p − n`, covering `{−(n/2−1), …, n/2}`.
    pub fn signed_mode(&self, p: usize) -> i64 {
        debug_assert!(p < self.n);
        if p <= self.n / 2 {
            p as i64
        } else {
            p as i64 - self.n as i64
        }
    }

    /// Stored axis index of a signed integer mode (wraps modulo `n`).
    pub fn mode_index(&self, j: i64) -> usize {
        j.rem_euclid(self.n as i64) as usize
    }

    /// Euclidean distance on the torus between two sites (minimum over
    /// periodic images).
    pub fn torus_distance(&self, a: usize, b: usize) -> f64 {
        let (ai, aj) = self.coords(a);
        let (bi, bj) = self.coords(b);
        let d1 = axis_distance(ai, bi, self.n) * self.eps();
        let d2 = axis_distance(aj, bj, self.n) * self.eps();
        (d1 * d1 + d2 * d2).sqrt()
    }
}

fn axis_distance(a: usize, b: usize, n: usize) -> f64 {
    let d = (a as i64 - b as i64).rem_euclid(n as i64) as usize;
    d.min(n - d) as f64
}

/// Axis of a forward difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// A real scalar field on a [`TorusGrid`], stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl LatticeField {
    pub fn zeros(grid: TorusGrid) -> Self {
        LatticeField { grid, values: vec![0.0; grid.sites()] }
    }

    pub fn constant(grid: TorusGrid, c: f64) -> Self {
        LatticeField { grid, values: vec![c; grid.sites()] }
    }

    /// Wraps a row-major value vector; its length must be `n²`.
    pub fn from_values(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.sites() {
            return Err(LvError::DimensionMismatch { left: grid.sites(), right: values.len() });
        }
        Ok(LatticeField { grid, values })
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let idx = self.grid.index(i, j);
        self.values[idx] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// `ε² Σ_x f(x)`, the discrete integral over the torus.
    pub fn discrete_integral(&self) -> f64 {
        self.grid.eps().powi(2) * pairwise_sum(&self.values)
    }

    /// `⟨f, g⟩ = ε² Σ_x f(x) g(x)`.
    pub fn inner_product(&self, other: &LatticeField) -> Result<f64> {
        check_same_grid(self, other)?;
        let products: Vec<f64> =
            self.values.iter().zip(other.values.iter()).map(|(a, b)| a * b).collect();
        Ok(self.grid.eps().powi(2) * pairwise_sum(&products))
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }

    /// Entrywise sum; grids must match.
    pub fn add(&self, other: &LatticeField) -> Result<LatticeField> {
        check_same_grid(self, other)?;
        let values = self.values.iter().zip(other.values.iter()).map(|(a, b)| a + b).collect();
        Ok(LatticeField { grid: self.grid, values })
    }

    /// Entrywise difference; grids must match.
    pub fn sub(&self, other: &LatticeField) -> Result<LatticeField> {
        check_same_grid(self, other)?;
        let values = self.values.iter().zip(other.values.iter()).map(|(a, b)| a - b).collect();
        Ok(LatticeField { grid: self.grid, values })
    }

    pub fn scale(&self, c: f64) -> LatticeField {
        LatticeField { grid: self.grid, values: self.values.iter().map(|v| c * v).collect() }
    }

    /// In-place `self += c · other`; grids must match.
    pub fn axpy(&mut self, c: f64, other: &LatticeField) -> Result<()> {
        check_same_grid(self, other)?;
        for (a, b) in self.values.iter_mut().zip(other.values.iter()) {
            *a += c * b;
        }
        Ok(())
    }

    /// Restriction to a coarser dyadic grid: keeps every `(n/m)`-th site along
    /// each axis, which is exact because coarse sites are a subset of fine
    /// sites.
    pub fn restrict_to(&self, coarse: TorusGrid) -> Result<LatticeField> {
        let n = self.grid.n();
        let m = coarse.n();
        if m > n || n % m != 0 {
            return Err(LvError::DimensionMismatch { left: n, right: m });
        }
        let step = n / m;
        let mut values = Vec::with_capacity(m * m);
        for i in 0..m {
            for j in 0..m {
                values.push(self.values[self.grid.index(i * step, j * step)]);
            }
        }
        Ok(LatticeField { grid: coarse, values })
    }
}

fn check_same_grid(a: &LatticeField, b: &LatticeField) -> Result<()> {
    if a.grid.n() != b.grid.n() {
        return Err(LvError::DimensionMismatch { left: a.grid.n(), right: b.grid.n() });
    }
    Ok(())
}

/// `Δf(x) = ε⁻² Σ_{y∼x} (f(y) − f(x))` with neighbours counted with
/// multiplicity, so that the operator agrees with spectral multiplication by
/// `−Σ_i ε⁻²(2 − 2cos(ε k_i))` on every grid including `n = 2`.
pub fn apply_laplacian(field: &LatticeField) -> LatticeField {
    let grid = field.grid();
    let n = grid.n();
    let inv_eps2 = (n * n) as f64;
    let f = field.as_slice();
    let mut out = vec![0.0; grid.sites()];
    for i in 0..n {
        let up = (i + n - 1) % n;
        let down = (i + 1) % n;
        for j in 0..n {
            let left = (j + n - 1) % n;
            let right = (j + 1) % n;
            let c = f[i * n + j];
            let sum = f[up * n + j] + f[down * n + j] + f[i * n + left] + f[i * n + right];
            out[i * n + j] = inv_eps2 * (sum - 4.0 * c);
        }
    }
    LatticeField { grid, values: out }
}

/// Forward difference `ε⁻¹ (f(x + ε e) − f(x))` along the given axis.
pub fn lattice_gradient(field: &LatticeField, axis: Axis) -> LatticeField {
    let grid = field.grid();
    let n = grid.n();
    let inv_eps = n as f64;
    let f = field.as_slice();
    let mut out = vec![0.0; grid.sites()];
    for i in 0..n {
        for j in 0..n {
            let shifted = match axis {
                Axis::X => f[((i + 1) % n) * n + j],
                Axis::Y => f[i * n + (j + 1) % n],
            };
            out[i * n + j] = inv_eps * (shifted - f[i * n + j]);
        }
    }
    LatticeField { grid, values: out }
}

/// Fourier coefficients of a field, `f(x) = Σ_k c(k) e^{ik·x}`, stored
/// row-major over stored mode indices `(p₁, p₂) ∈ {0,…,n−1}²`.
#[derive(Debug, Clone)]
pub struct SpectralCoeffs {
    grid: TorusGrid,
    coeffs: Vec<Complex64>,
}

impl SpectralCoeffs {
    pub fn zeros(grid: TorusGrid) -> Self {
        SpectralCoeffs { grid, coeffs: vec![Complex64::default(); grid.sites()] }
    }

    pub fn from_coeffs(grid: TorusGrid, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.sites() {
            return Err(LvError::DimensionMismatch { left: grid.sites(), right: coeffs.len() });
        }
        Ok(SpectralCoeffs { grid, coeffs })
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// Coefficient at stored mode indices `(p₁, p₂)`.
    pub fn at(&self, p1: usize, p2: usize) -> Complex64 {
        self.coeffs[p1 * self.grid.n() + p2]
    }

    /// Stored index of the reflected mode `−k`, with Nyquist rows fixed.
    fn reflected(&self, p1: usize, p2: usize) -> (usize, usize) {
        let n = self.grid.n();
        ((n - p1) % n, (n - p2) % n)
    }

    /// Projects onto the Hermitian subspace `c(−k) = conj(c(k))`, the
    /// coefficient image of real fields. Idempotent; call after any mutation
    /// that might break the symmetry.
    pub fn enforce_hermitian(&mut self) {
        let n = self.grid.n();
        for p1 in 0..n {
            for p2 in 0..n {
                let (q1, q2) = self.reflected(p1, p2);
                if (p1, p2) < (q1, q2) {
                    let a = self.coeffs[p1 * n + p2];
                    let b = self.coeffs[q1 * n + q2];
                    let half = 0.5 * (a + b.conj());
                    self.coeffs[p1 * n + p2] = half;
                    self.coeffs[q1 * n + q2] = half.conj();
                } else if (p1, p2) == (q1, q2) {
                    self.coeffs[p1 * n + p2] = Complex64::new(self.coeffs[p1 * n + p2].re, 0.0);
                }
            }
        }
    }

    /// Largest deviation from Hermitian symmetry, `max_k |c(−k) − conj(c(k))|`.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.grid.n();
        let mut worst = 0.0f64;
        for p1 in 0..n {
            for p2 in 0..n {
                let (q1, q2) = self.reflected(p1, p2);
                let defect = (self.coeffs[q1 * n + q2] - self.coeffs[p1 * n + p2].conj()).norm();
                worst = worst.max(defect);
            }
        }
        worst
    }
}

/// `c(k) = n⁻² Σ_x f(x) e^{−ik·x}`; the coefficients of a real field are
/// Hermitian up to roundoff.
pub fn spectral_forward(field: &LatticeField) -> SpectralCoeffs {
    let grid = field.grid();
    let n = grid.n();
    let mut buf: Vec<Complex64> =
        field.as_slice().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_inplace(&mut buf, n, false);
    let scale = 1.0 / (n * n) as f64;
    for c in buf.iter_mut() {
        *c *= scale;
    }
    SpectralCoeffs { grid, coeffs: buf }
}

/// `f(x) = Σ_k c(k) e^{ik·x}`, real part of the synthesis sum. For Hermitian
/// coefficients the imaginary part vanishes up to roundoff.
pub fn spectral_inverse(coeffs: &SpectralCoeffs) -> LatticeField {
    let grid = coeffs.grid();
    let n = grid.n();
    let mut buf = coeffs.coeffs.clone();
    fft2_inplace(&mut buf, n, true);
    LatticeField { grid, values: buf.into_iter().map(|c| c.re).collect() }
}

/// Sum by recursive halving. Error grows like `O(log n)` in the term count
/// rather than `O(n)`, and the result is independent of chunking decisions
/// made by callers, which keeps Monte Carlo reductions reproducible.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        len => {
            let mid = len / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: TorusGrid, seed: u64) -> LatticeField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..grid.sites()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        LatticeField::from_values(grid, values).unwrap()
    }

    #[test]
    fn grid_rejects_non_powers_of_two() {
        assert!(TorusGrid::new(0).is_err());
        assert!(TorusGrid::new(1).is_err());
        assert!(TorusGrid::new(3).is_err());
        assert!(TorusGrid::new(6).is_err());
        assert!(TorusGrid::new(8).is_ok());
    }

    #[test]
    fn integral_of_constant_one_is_one() {
        for n in [2, 4, 32] {
            let grid = TorusGrid::new(n).unwrap();
            let f = LatticeField::constant(grid, 1.0);
            assert!((f.discrete_integral() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn integral_on_two_by_two() {
        let grid = TorusGrid::new(2).unwrap();
        let f = LatticeField::from_values(grid, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((f.discrete_integral() - 2.5).abs() < 1e-15);
    }

    #[test]
    fn integral_is_linear() {
        let grid = TorusGrid::new(8).unwrap();
        let f = random_field(grid, 1);
        let g = random_field(grid, 2);
        let combo = f.scale(2.5).add(&g.scale(-1.25)).unwrap();
        let expect = 2.5 * f.discrete_integral() - 1.25 * g.discrete_integral();
        assert!((combo.discrete_integral() - expect).abs() < 1e-13);
    }

    #[test]
    fn laplacian_of_indicator_on_two_by_two() {
        // Both lattice directions wrap onto the same neighbour, which must be
        // counted twice: Δf(0,0) = 4·(0 − 1)·ε⁻² = −16.
        let grid = TorusGrid::new(2).unwrap();
        let mut f = LatticeField::zeros(grid);
        f.set(0, 0, 1.0);
        let lap = apply_laplacian(&f);
        assert!((lap.at(0, 0) + 16.0).abs() < 1e-12);
        assert!((lap.at(0, 1) - 8.0).abs() < 1e-12);
        assert!((lap.at(1, 0) - 8.0).abs() < 1e-12);
        assert!((lap.at(1, 1) - 0.0).abs() < 1e-12);
    }

    #[test]
    fn laplacian_kills_constants() {
        let grid = TorusGrid::new(16).unwrap();
        let f = LatticeField::constant(grid, 3.7);
        assert!(apply_laplacian(&f).sup_norm() < 1e-10);
    }

    #[test]
    fn laplacian_matches_spectral_multiplier() {
        let grid = TorusGrid::new(8).unwrap();
        let n = grid.n();
        let f = random_field(grid, 3);
        let lap = apply_laplacian(&f);
        let mut coeffs = spectral_forward(&f);
        let inv_eps2 = (n * n) as f64;
        for p1 in 0..n {
            for p2 in 0..n {
                let angle1 = 2.0 * std::f64::consts::PI * p1 as f64 / n as f64;
                let angle2 = 2.0 * std::f64::consts::PI * p2 as f64 / n as f64;
                let symbol = -inv_eps2 * (2.0 - 2.0 * angle1.cos() + 2.0 - 2.0 * angle2.cos());
                let idx = p1 * n + p2;
                coeffs.as_mut_slice()[idx] *= symbol;
            }
        }
        let via_spectrum = spectral_inverse(&coeffs);
        for (a, b) in lap.as_slice().iter().zip(via_spectrum.as_slice().iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn laplacian_is_self_adjoint() {
        let grid = TorusGrid::new(8).unwrap();
        let f = random_field(grid, 4);
        let g = random_field(grid, 5);
        let lhs = apply_laplacian(&f).inner_product(&g).unwrap();
        let rhs = f.inner_product(&apply_laplacian(&g)).unwrap();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn gradient_of_indicator_on_two_by_two() {
        let grid = TorusGrid::new(2).unwrap();
        let mut f = LatticeField::zeros(grid);
        f.set(0, 0, 1.0);
        let g = lattice_gradient(&f, Axis::X);
        assert!((g.at(0, 0) + 2.0).abs() < 1e-14);
        assert!((g.at(1, 0) - 2.0).abs() < 1e-14);
        assert!(g.at(0, 1).abs() < 1e-14);
    }

    #[test]
    fn gradient_of_sawtooth_wraps() {
        // f(i, j) = i/4 has slope 1 in the x direction except across the
        // periodic seam, where the forward difference sees the full drop.
        let grid = TorusGrid::new(4).unwrap();
        let mut f = LatticeField::zeros(grid);
        for i in 0..4 {
            for j in 0..4 {
                f.set(i, j, i as f64 / 4.0);
            }
        }
        let g = lattice_gradient(&f, Axis::X);
        for j in 0..4 {
            assert!((g.at(0, j) - 1.0).abs() < 1e-13);
            assert!((g.at(1, j) - 1.0).abs() < 1e-13);
            assert!((g.at(2, j) - 1.0).abs() < 1e-13);
            assert!((g.at(3, j) + 3.0).abs() < 1e-13);
        }
        assert!(lattice_gradient(&f, Axis::Y).sup_norm() < 1e-13);
    }

    #[test]
    fn forward_of_constant_is_zero_mode() {
        let grid = TorusGrid::new(8).unwrap();
        let f = LatticeField::constant(grid, 1.0);
        let coeffs = spectral_forward(&f);
        assert!((coeffs.at(0, 0) - Complex64::new(1.0, 0.0)).norm() < 1e-13);
        let rest: f64 = coeffs.as_slice()[1..].iter().map(|c| c.norm()).sum();
        assert!(rest < 1e-11);
    }

    #[test]
    fn spectral_roundtrip_is_tight() {
        let grid = TorusGrid::new(16).unwrap();
        let f = random_field(grid, 6);
        let back = spectral_inverse(&spectral_forward(&f));
        let scale = f.sup_norm();
        for (a, b) in f.as_slice().iter().zip(back.as_slice().iter()) {
            assert!((a - b).abs() < 1e-12 * scale.max(1.0));
        }
    }

    #[test]
    fn parseval_identity() {
        let grid = TorusGrid::new(8).unwrap();
        let f = random_field(grid, 7);
        let physical = f.inner_product(&f).unwrap();
        let spectral: f64 = spectral_forward(&f).as_slice().iter().map(|c| c.norm_sqr()).sum();
        assert!((physical - spectral).abs() < 1e-12 * physical.max(1.0));
    }

    #[test]
    fn real_fields_have_hermitian_coefficients() {
        let grid = TorusGrid::new(8).unwrap();
        let f = random_field(grid, 8);
        let coeffs = spectral_forward(&f);
        assert!(coeffs.hermitian_defect() < 1e-13);
    }

    #[test]
    fn enforce_hermitian_is_idempotent_and_realises_fields() {
        let grid = TorusGrid::new(8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let coeffs: Vec<Complex64> = (0..grid.sites())
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let mut c = SpectralCoeffs::from_coeffs(grid, coeffs).unwrap();
        c.enforce_hermitian();
        assert!(c.hermitian_defect() < 1e-14);
        let once = c.as_slice().to_vec();
        c.enforce_hermitian();
        for (a, b) in once.iter().zip(c.as_slice().iter()) {
            assert!((a - b).norm() < 1e-15);
        }
        // A Hermitian coefficient set synthesises to a genuinely real field:
        // roundtrip through the inverse and forward transforms is stable.
        let field = spectral_inverse(&c);
        let back = spectral_forward(&field);
        for (a, b) in back.as_slice().iter().zip(c.as_slice().iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn restriction_subsamples_exactly() {
        let fine = TorusGrid::new(8).unwrap();
        let coarse = TorusGrid::new(4).unwrap();
        let f = random_field(fine, 10);
        let r = f.restrict_to(coarse).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(r.at(i, j), f.at(2 * i, 2 * j));
            }
        }
        assert!(f.restrict_to(TorusGrid::new(16).unwrap()).is_err());
    }

    #[test]
    fn pairwise_sum_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let values: Vec<f64> = (0..1023).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let naive: f64 = values.iter().sum();
        assert!((pairwise_sum(&values) - naive).abs() < 1e-10);
        assert_eq!(pairwise_sum(&[]), 0.0);
        assert_eq!(pairwise_sum(&[4.25]), 4.25);
    }

    #[test]
    fn torus_distance_wraps() {
        let grid = TorusGrid::new(8).unwrap();
        let a = grid.index(0, 0);
        let b = grid.index(7, 0);
        assert!((grid.torus_distance(a, b) - 0.125).abs() < 1e-15);
        let c = grid.index(4, 4);
        assert!((grid.torus_distance(a, c) - (0.5f64 * 0.5 + 0.25).sqrt()).abs() < 1e-15);
    }
}
