// One-off dev run: brute-force reference for v_t on the 2x2 grid at
// beta=2*pi, lambda=1, m=1, t=0.5, phi=0, built from a direct covariance
// matrix and a hand-rolled Cholesky, independent of the library code paths.
use rand::{Rng, SeedableRng};

fn main() {
    let beta = 2.0 * std::f64::consts::PI;
    let lambda = 1.0;
    let t = 0.5;
    let eps: f64 = 0.5;
    // Sites in index order (i,j) = (0,0),(0,1),(1,0),(1,1) at positions eps*(i,j).
    let pos = [(0.0, 0.0), (0.0, 0.5), (0.5, 0.0), (0.5, 0.5)];
    // Modes j1,j2 in {0,1}, k = 2*pi*j, lattice symbol 4*(2-2cos(pi*j)) per axis.
    let mut cov = [[0.0f64; 4]; 4];
    for j1 in 0..2 {
        for j2 in 0..2 {
            let lam = 4.0 * (2.0 - 2.0 * (std::f64::consts::PI * j1 as f64).cos())
                + 4.0 * (2.0 - 2.0 * (std::f64::consts::PI * j2 as f64).cos())
                + 1.0;
            let mult = (1.0 - (-t * lam).exp()) / lam;
            for (a, &(ax, ay)) in pos.iter().enumerate() {
                for (b, &(bx, by)) in pos.iter().enumerate() {
                    let phase = 2.0 * std::f64::consts::PI
                        * (j1 as f64 * (ax - bx) + j2 as f64 * (ay - by));
                    cov[a][b] += mult * phase.cos();
                }
            }
        }
    }
    // Cholesky, lower triangular.
    let mut l = [[0.0f64; 4]; 4];
    for i in 0..4 {
        for j in 0..=i {
            let mut s = cov[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                l[i][j] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut rng = rand::rngs::StdRng::seed_from_u64(20260819);
    let m_samples = 10_000_000u64;
    let sqrt_beta = beta.sqrt();
    let pref = eps.powf(beta / (4.0 * std::f64::consts::PI));
    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    for _ in 0..m_samples {
        let z: [f64; 4] = std::array::from_fn(|_| {
            let u: f64 = rng.sample(rand_distr::StandardNormal);
            u
        });
        let mut v0 = 0.0;
        for i in 0..4 {
            let mut zeta = 0.0;
            for k in 0..=i {
                zeta += l[i][k] * z[k];
            }
            v0 += lambda * eps * eps * pref * (sqrt_beta * zeta).exp();
        }
        let w = (-v0).exp();
        sum += w;
        sum_sq += w * w;
    }
    let m = m_samples as f64;
    let mean = sum / m;
    let var = (sum_sq / m - mean * mean) / (m - 1.0);
    println!("v_t = {:.10}  se = {:.3e}", -mean.ln(), var.sqrt() / mean);
    println!("cov diag = {:.10} (expect 1+2/17+1/33 = {:.10})", cov[0][0] * 0.0 + {
        // c_inf diagonal check of the construction at t = infinity
        let mut d = 0.0;
        for j1 in 0..2 {
            for j2 in 0..2 {
                let lam = 4.0 * (2.0 - 2.0 * (std::f64::consts::PI * j1 as f64).cos())
                    + 4.0 * (2.0 - 2.0 * (std::f64::consts::PI * j2 as f64).cos())
                    + 1.0;
                d += 1.0 / lam;
            }
        }
        d
    }, 1.0 + 2.0 / 17.0 + 1.0 / 33.0);
}
