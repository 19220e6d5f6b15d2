//! Cached two-dimensional FFTs on square power-of-two grids.
//!
//! Row-major data of length `n²` is transformed along rows, transposed,
//! transformed again and transposed back. No normalisation is applied in
//! either direction; callers own the `1/n²` factor. Plans are shared
//! process-wide because planning is far more expensive than executing at the
//! grid sizes used here (`n ≤ 256`).

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

fn plan(n: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    static PLANS: OnceLock<Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>> = OnceLock::new();
    let cache = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (n, direction == FftDirection::Inverse);
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    guard
        .entry(key)
        .or_insert_with(|| FftPlanner::new().plan_fft(n, direction))
        .clone()
}

fn transpose(buf: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            buf.swap(i * n + j, j * n + i);
        }
    }
}

/// In-place 2D DFT of an `n × n` row-major buffer.
///
/// `inverse = false` computes `Σ_x f(x) e^{−ik·x}` per axis; `inverse = true`
/// computes the conjugate-kernel sum `Σ_k c(k) e^{+ik·x}`.
pub fn fft2_inplace(buf: &mut [Complex64], n: usize, inverse: bool) {
    debug_assert_eq!(buf.len(), n * n);
    let direction = if inverse { FftDirection::Inverse } else { FftDirection::Forward };
    let fft = plan(n, direction);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    fft.process_with_scratch(buf, &mut scratch);
    transpose(buf, n);
    fft.process_with_scratch(buf, &mut scratch);
    transpose(buf, n);
}

/// Scratch-reusing variant for hot loops: `scratch` grows on demand and can be
/// carried across calls to avoid reallocation.
pub fn fft2_with_scratch(buf: &mut [Complex64], n: usize, inverse: bool, scratch: &mut Vec<Complex64>) {
    debug_assert_eq!(buf.len(), n * n);
    let direction = if inverse { FftDirection::Inverse } else { FftDirection::Forward };
    let fft = plan(n, direction);
    let needed = fft.get_inplace_scratch_len();
    if scratch.len() < needed {
        scratch.resize(needed, Complex64::default());
    }
    fft.process_with_scratch(buf, &mut scratch[..needed]);
    transpose(buf, n);
    fft.process_with_scratch(buf, &mut scratch[..needed]);
    transpose(buf, n);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_then_inverse_recovers_input_up_to_n_squared() {
        let n = 8;
        let mut buf: Vec<Complex64> =
            (0..n * n).map(|i| Complex64::new((i % 7) as f64 - 3.0, (i % 5) as f64)).collect();
        let original = buf.clone();
        fft2_inplace(&mut buf, n, false);
        fft2_inplace(&mut buf, n, true);
        let scale = (n * n) as f64;
        for (a, b) in buf.iter().zip(original.iter()) {
            assert!((a / scale - b).norm() < 1e-12);
        }
    }

    #[test]
    fn matches_naive_dft_on_small_grid() {
        let n = 4;
        let mut buf: Vec<Complex64> =
            (0..n * n).map(|i| Complex64::new(i as f64, -(i as f64) * 0.5)).collect();
        let input = buf.clone();
        fft2_inplace(&mut buf, n, false);
        for k1 in 0..n {
            for k2 in 0..n {
                let mut acc = Complex64::default();
                for x1 in 0..n {
                    for x2 in 0..n {
                        let phase = -2.0 * std::f64::consts::PI
                            * ((k1 * x1) as f64 + (k2 * x2) as f64)
                            / n as f64;
                        acc += input[x1 * n + x2] * Complex64::from_polar(1.0, phase);
                    }
                }
                assert!((buf[k1 * n + k2] - acc).norm() < 1e-10);
            }
        }
    }
}
