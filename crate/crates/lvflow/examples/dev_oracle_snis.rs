// One-off dev run: brute-force self-normalised importance sampling
// reference for zero-scale statistics on the 2x2 grid at beta=2*pi,
// lambda=1, m=1, built from a direct covariance matrix and a hand-rolled
// Cholesky, independent of the library code paths.  Reports E[phi_0],
// E[phi_0^2], E[phi_0 phi_diag], and E[eps^{beta/4pi} e^{sqrt(beta) phi_0}]
// under the reweighted law, with delta-method standard errors.
use rand::{Rng, SeedableRng};

fn snis(samples: &[(f64, f64)]) -> (f64, f64) {
    // samples = (weight, value); anchor on the first value for stability.
    let a = samples[0].1;
    let mut s_w = 0.0;
    let mut s_wg = 0.0;
    for &(w, f) in samples {
        s_w += w;
        s_wg += w * (f - a);
    }
    let r = a + s_wg / s_w;
    let mut s = 0.0;
    for &(w, f) in samples {
        s += w * w * (f - r) * (f - r);
    }
    (r, s.sqrt() / s_w)
}

fn main() {
    let beta = 2.0 * std::f64::consts::PI;
    let lambda = 1.0;
    let eps: f64 = 0.5;
    let pos = [(0.0, 0.0), (0.0, 0.5), (0.5, 0.0), (0.5, 0.5)];
    let mut cov = [[0.0f64; 4]; 4];
    for j1 in 0..2 {
        for j2 in 0..2 {
            let lam = 4.0 * (2.0 - 2.0 * (std::f64::consts::PI * j1 as f64).cos())
                + 4.0 * (2.0 - 2.0 * (std::f64::consts::PI * j2 as f64).cos())
                + 1.0;
            let mult = 1.0 / lam;
            for (a, &(ax, ay)) in pos.iter().enumerate() {
                for (b, &(bx, by)) in pos.iter().enumerate() {
                    let phase = 2.0 * std::f64::consts::PI
                        * (j1 as f64 * (ax - bx) + j2 as f64 * (ay - by));
                    cov[a][b] += mult * phase.cos();
                }
            }
        }
    }
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
    let mut rng = rand::rngs::StdRng::seed_from_u64(8191945);
    let m_samples = 10_000_000usize;
    let sqrt_beta = beta.sqrt();
    let pref = eps.powf(beta / (4.0 * std::f64::consts::PI));
    // Rows: (phi_0, phi_0^2, phi_0*phi_11, wick at site 0).
    let mut rows: Vec<[f64; 5]> = Vec::with_capacity(m_samples);
    for _ in 0..m_samples {
        let z: [f64; 4] = std::array::from_fn(|_| {
            let u: f64 = rng.sample(rand_distr::StandardNormal);
            u
        });
        let mut phi = [0.0f64; 4];
        for i in 0..4 {
            for k in 0..=i {
                phi[i] += l[i][k] * z[k];
            }
        }
        let mut v0 = 0.0;
        for &p in &phi {
            v0 += lambda * eps * eps * pref * (sqrt_beta * p).exp();
        }
        let w = (-v0).exp();
        rows.push([w, phi[0], phi[0] * phi[0], phi[0] * phi[3], pref * (sqrt_beta * phi[0]).exp()]);
    }
    let ess = {
        let s: f64 = rows.iter().map(|r| r[0]).sum();
        let s2: f64 = rows.iter().map(|r| r[0] * r[0]).sum();
        s * s / s2
    };
    println!("ESS = {:.0} of {}", ess, m_samples);
    for (name, idx) in [("E[phi_0]", 1), ("E[phi_0^2]", 2), ("E[phi_0 phi_diag]", 3), ("E[wick_0]", 4)]
    {
        let samples: Vec<(f64, f64)> = rows.iter().map(|r| (r[0], r[idx])).collect();
        let (v, se) = snis(&samples);
        println!("{name} = {v:.10}  se = {se:.3e}");
    }
    println!("c_inf[0][0] = {:.10} (expect {:.10})", cov[0][0], 1.0 + 2.0 / 17.0 + 1.0 / 33.0);
}
