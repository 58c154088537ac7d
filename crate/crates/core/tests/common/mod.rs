//! Brute-force oracles shared by the integration tests and the acceptance
//! suite. Everything here works on small dense matrices and recomputes the
//! model's joint density from scratch.

#![allow(dead_code)]

pub mod gir;
pub mod instances;

use barcode::data_model::{CountMatrix, CovariateMatrix, FactorState, HyperParams, LoadingState};
use barcode::gibbs::{ChainState, FactorCountAlloc};
use barcode::latent_regression::{GPKernel, RegressionState};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Beta, Distribution, Gamma, Normal, Poisson};
use statrs::distribution::{Continuous, ContinuousCDF, Gamma as GammaDist, Normal as NormalDist};
use statrs::function::gamma::ln_gamma;

pub fn ln_gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    GammaDist::new(shape, rate).unwrap().ln_pdf(x)
}

pub fn std_normal_cdf(x: f64) -> f64 {
    NormalDist::new(0.0, 1.0).unwrap().cdf(x)
}

/// Poisson log-likelihood of a dense count table given dense `theta`
/// (n x L) and `lambda` (p x L).
pub fn dense_loglik(y: &[Vec<u32>], theta: &[f64], lambda: &[f64], l: usize) -> f64 {
    let mut ll = 0.0;
    for (i, row) in y.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let mu: f64 = (0..l).map(|k| theta[i * l + k] * lambda[j * l + k]).sum();
            if v > 0 && mu <= 0.0 {
                return f64::NEG_INFINITY;
            }
            if v > 0 {
                ll += v as f64 * mu.ln();
            }
            ll -= mu + ln_gamma(v as f64 + 1.0);
        }
    }
    ll
}

fn normalize(logw: &[f64]) -> Vec<f64> {
    let m = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

/// Exact conditional of the switch row `s_j.` (configuration index: bit `k`
/// is `s_jk`) with `theta`, `Gamma`, `nu` and `psi` fixed. Switched-off
/// loadings follow the `Ga(1, tau0)` pseudo-prior.
#[allow(clippy::too_many_arguments)]
pub fn species_row_conditional(
    y: &[Vec<u32>],
    theta: &[f64],
    s: &[u8],
    gamma: &[f64],
    nu: &[f64],
    psi: f64,
    h: &HyperParams,
    l: usize,
    j: usize,
) -> Vec<f64> {
    let mut logw = Vec::new();
    for cfg in 0..(1usize << l) {
        let mut s2 = s.to_vec();
        let mut lp = 0.0;
        for k in 0..l {
            let on = (cfg >> k) & 1;
            s2[j * l + k] = on as u8;
            let g = gamma[j * l + k];
            lp += if on == 1 {
                psi.ln() + ln_gamma_pdf(g, h.a_gamma, nu[k])
            } else {
                (1.0 - psi).ln() + ln_gamma_pdf(g, 1.0, h.tau0)
            };
        }
        let lambda: Vec<f64> = s2.iter().zip(gamma).map(|(&a, &b)| a as f64 * b).collect();
        logw.push(lp + dense_loglik(y, theta, &lambda, l));
    }
    normalize(&logw)
}

/// Column normalizers `T_l` (active sum, or full sum when nothing is active).
pub fn norms(c: &[u8], zeta: &[f64], n: usize, l: usize) -> Vec<f64> {
    (0..l)
        .map(|k| {
            if k == 0 {
                return 1.0;
            }
            let act: f64 = (0..n).filter(|&i| c[i * l + k] == 1).map(|i| zeta[i * l + k]).sum();
            if act > 0.0 {
                act
            } else {
                (0..n).map(|i| zeta[i * l + k]).sum()
            }
        })
        .collect()
}

/// Log joint density, up to a constant, of `C` in the coordinates
/// `(Z, Gamma~ = Gamma / T)` with everything else fixed: probit prior,
/// Poisson likelihood, prior of `Gamma = Gamma~ T` and the Jacobian `T^p`
/// per non-reference factor.
#[allow(clippy::too_many_arguments)]
pub fn switch_log_target(
    y: &[Vec<u32>],
    c: &[u8],
    zeta: &[f64],
    gamma_tilde: &[f64],
    s: &[u8],
    nu: &[f64],
    eta: &[f64],
    h: &HyperParams,
    n: usize,
    l: usize,
) -> f64 {
    let p = y[0].len();
    let t = norms(c, zeta, n, l);
    let mut theta = vec![0.0; n * l];
    for i in 0..n {
        theta[i * l] = 1.0 / n as f64;
        for k in 1..l {
            if c[i * l + k] == 1 {
                theta[i * l + k] = zeta[i * l + k] / t[k];
            }
        }
    }
    let mut gamma = vec![0.0; p * l];
    let mut lp = 0.0;
    for j in 0..p {
        for k in 0..l {
            let g = gamma_tilde[j * l + k] * t[k];
            gamma[j * l + k] = g;
            if k >= 1 {
                lp += if s[j * l + k] == 1 {
                    ln_gamma_pdf(g, h.a_gamma, nu[k])
                } else {
                    ln_gamma_pdf(g, 1.0, h.tau0)
                } + t[k].ln();
            }
        }
    }
    for i in 0..n {
        for k in 1..l {
            let pr = std_normal_cdf(eta[i * l + k]);
            lp += if c[i * l + k] == 1 { pr.ln() } else { (1.0 - pr).ln() };
        }
    }
    let lambda: Vec<f64> = s.iter().zip(&gamma).map(|(&a, &b)| a as f64 * b).collect();
    lp + dense_loglik(y, &theta, &lambda, l)
}

/// Transition probabilities of one sequential sweep over the rows of `C`
/// for `L = 2` (one free switch per row): the product, over rows in order,
/// of each row's exact conditional given the rows already updated.
/// Configuration index: bit `i` is the new `c_i1`.
#[allow(clippy::too_many_arguments)]
pub fn sample_sweep_kernel(
    y: &[Vec<u32>],
    c0: &[u8],
    zeta: &[f64],
    gamma_tilde: &[f64],
    s: &[u8],
    nu: &[f64],
    eta: &[f64],
    h: &HyperParams,
    n: usize,
) -> Vec<f64> {
    let l = 2;
    let mut probs = vec![0.0; 1 << n];
    for (cfg, out) in probs.iter_mut().enumerate() {
        let mut c = c0.to_vec();
        let mut prob = 1.0;
        for i in 0..n {
            let mut lw = [0.0; 2];
            for (v, w) in lw.iter_mut().enumerate() {
                c[i * l + 1] = v as u8;
                *w = switch_log_target(y, &c, zeta, gamma_tilde, s, nu, eta, h, n, l);
            }
            let pr = normalize(&lw);
            let v = (cfg >> i) & 1;
            prob *= pr[v];
            c[i * l + 1] = v as u8;
        }
        *out = prob;
    }
    probs
}

/// Checks observed configuration counts against exact probabilities:
/// every count within `z` binomial standard errors.
pub fn within_binomial_se(counts: &[u64], probs: &[f64], draws: u64, z: f64) -> Result<(), String> {
    for (k, (&c, &p)) in counts.iter().zip(probs).enumerate() {
        let f = c as f64 / draws as f64;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        if (f - p).abs() > z * se + 1e-12 {
            return Err(format!(
                "configuration {k}: frequency {f:.5} vs exact {p:.5} (se {se:.5})"
            ));
        }
    }
    Ok(())
}

/// One draw of every latent quantity and of `Y` from the prior, for the
/// joint-distribution test. No spatial effects.
pub struct ForwardDraw {
    pub state: ChainState,
    pub y: CountMatrix,
}

pub fn forward_draw(
    x: &CovariateMatrix,
    site_of: &[usize],
    kernel: Option<&GPKernel>,
    p: usize,
    h: &HyperParams,
    rng: &mut ChaCha20Rng,
) -> ForwardDraw {
    let (n, l, q) = (x.n(), h.factors, x.q());
    let m = kernel.map_or(0, |k| k.k.nrows());
    let psi: f64 = Beta::new(h.psi_a, h.psi_b).unwrap().sample(rng);
    let nu: Vec<f64> = (0..l)
        .map(|_| Gamma::new(h.a_nu, 1.0 / h.b_nu).unwrap().sample(rng))
        .collect();
    let mut s = vec![0u8; p * l];
    let mut gamma = vec![0.0; p * l];
    for j in 0..p {
        for k in 0..l {
            let on = rng.random::<f64>() < psi;
            s[j * l + k] = on as u8;
            gamma[j * l + k] = if on {
                Gamma::new(h.a_gamma, 1.0 / nu[k]).unwrap().sample(rng)
            } else {
                Gamma::new(1.0, 1.0 / h.tau0).unwrap().sample(rng)
            }
            .max(f64::MIN_POSITIVE);
        }
    }
    let sd = h.sigma0_sq.sqrt();
    let mut reg = RegressionState::zeros(n, l, q, m);
    for k in 1..l {
        for a in 0..q {
            reg.beta[k * q + a] = Normal::new(0.0, sd).unwrap().sample(rng);
        }
        if let Some(kern) = kernel {
            let e = DVector::from_fn(m, |_, _| Normal::new(0.0, 1.0).unwrap().sample(rng));
            let xi = &kern.chol * e;
            reg.xi[k * m..(k + 1) * m].copy_from_slice(xi.as_slice());
        }
    }
    let mut c = vec![1u8; n * l];
    let mut zeta = vec![1.0; n * l];
    for i in 0..n {
        for k in 1..l {
            let mut eta: f64 = (0..q).map(|a| x.row(i)[a] * reg.beta[k * q + a]).sum();
            if m > 0 {
                eta += reg.xi[k * m + site_of[i]];
            }
            let z = eta + Normal::new(0.0, 1.0).unwrap().sample(rng);
            c[i * l + k] = (z > 0.0) as u8;
            reg.zaug[i * l + k] = z;
            zeta[i * l + k] = Gamma::new(h.alpha, 1.0).unwrap().sample(rng).max(f64::MIN_POSITIVE);
        }
    }
    let factors = FactorState::new(n, l, c, zeta).unwrap();
    let loadings = LoadingState::new(p, l, s, gamma, nu, psi).unwrap();
    let y = regenerate(&factors, &loadings, n, p, rng).with_sites(site_of.to_vec()).unwrap();
    let alloc = FactorCountAlloc::new(&y, l);
    ForwardDraw {
        state: ChainState {
            factors,
            loadings,
            regression: reg,
            alloc,
        },
        y,
    }
}

/// Draws `Y ~ Poisson(mu)` given the latent state.
pub fn regenerate(f: &FactorState, g: &LoadingState, n: usize, p: usize, rng: &mut ChaCha20Rng) -> CountMatrix {
    let l = f.factors();
    let mut entries = Vec::new();
    for i in 0..n {
        for j in 0..p {
            let mu: f64 = (0..l).map(|k| f.theta(i, k) * g.lambda(j, k)).sum();
            if mu > 0.0 {
                let v: f64 = Poisson::new(mu).unwrap().sample(rng);
                if v > 0.0 {
                    entries.push((i, j, v as u32));
                }
            }
        }
    }
    CountMatrix::from_triplets(n, p, entries, vec![0; n]).unwrap()
}

pub fn chacha(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Mean and standard error from batch means (for autocorrelated chains).
pub fn batch_mean_se(values: &[f64], batches: usize) -> (f64, f64) {
    let n = values.len();
    let size = n / batches;
    let mean = values.iter().sum::<f64>() / n as f64;
    let bm: Vec<f64> = (0..batches)
        .map(|b| values[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let bmean = bm.iter().sum::<f64>() / batches as f64;
    let var = bm.iter().map(|v| (v - bmean).powi(2)).sum::<f64>() / (batches as f64 - 1.0);
    (mean, (var / batches as f64).sqrt())
}

/// Mean and standard error of independent draws.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
