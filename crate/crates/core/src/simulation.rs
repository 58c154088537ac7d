//! Synthetic data from a known barcode model, and recovery metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rand::RngCore;

use crate::archive::PosteriorArchive;
use crate::data_model::{CountMatrix, CovariateMatrix, HyperParams};
use crate::distributions::{gamma_draw, poisson_draw, RngStream};
use crate::error::{BarcodeError, Result};
use crate::gibbs::{fit, SweepConfig};
use crate::latent_regression::quantile;
use crate::posthoc::{align_columns, permute_columns};

/// Default number of factors in simulation studies.
pub const SIM_FACTORS: usize = 4;
/// Covariates drawn in covariate mode, besides the intercept.
pub const SIM_COVARIATES: usize = 5;
/// Variance of the generated coefficients `B`. Replicate fits in covariate
/// mode use it as their coefficient prior, so the fitted model is the
/// generating one.
pub const SIM_BETA_VARIANCE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimScenario {
    pub n: usize,
    pub p: usize,
    #[serde(default = "default_factors")]
    pub l: usize,
    #[serde(default)]
    pub seed: u64,
    /// Draw `X` and `B` and generate `C` from the probit layer.
    #[serde(default)]
    pub with_covariates: bool,
    #[serde(default = "default_replicates")]
    pub n_replicates: usize,
}

fn default_factors() -> usize {
    SIM_FACTORS
}
fn default_replicates() -> usize {
    25
}

impl SimScenario {
    pub fn new(n: usize, p: usize, seed: u64) -> Self {
        SimScenario {
            n,
            p,
            l: SIM_FACTORS,
            seed,
            with_covariates: false,
            n_replicates: default_replicates(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 || self.p < 1 {
            return Err(BarcodeError::InvalidParameter("n and p must be positive".into()));
        }
        if self.l < 2 {
            return Err(BarcodeError::InvalidParameter("need at least two factors".into()));
        }
        Ok(())
    }
}

/// Grid for recovering `S`: `p = 50`, growing `n`.
pub fn s_recovery_grid(seed: u64) -> Vec<SimScenario> {
    [50, 100, 500, 1000].iter().map(|&n| SimScenario::new(n, 50, seed)).collect()
}

/// Grid for recovering `C`: `n = 500`, growing `p`.
pub fn c_recovery_grid(seed: u64) -> Vec<SimScenario> {
    [15, 30, 50, 75].iter().map(|&p| SimScenario::new(500, p, seed)).collect()
}

/// Grid for recovering `B`: growing `n`, `p = 50`, covariates on.
pub fn b_recovery_grid(seed: u64) -> Vec<SimScenario> {
    [100, 250, 500, 1000]
        .iter()
        .map(|&n| SimScenario {
            with_covariates: true,
            ..SimScenario::new(n, 50, seed)
        })
        .collect()
}

/// Latent quantities behind a synthetic data set (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    pub n: usize,
    pub p: usize,
    pub l: usize,
    pub c: Vec<u8>,
    pub phi: Vec<f64>,
    pub s: Vec<u8>,
    pub gamma: Vec<f64>,
    /// Design matrix (intercept only unless in covariate mode).
    pub x: CovariateMatrix,
    /// L x q, row 0 zero; present in covariate mode.
    pub beta: Option<Vec<f64>>,
}

impl SimTruth {
    pub fn mean(&self, i: usize, j: usize) -> f64 {
        let l = self.l;
        (0..l)
            .map(|k| {
                let a = self.c[i * l + k] as f64 * self.phi[i * l + k];
                let b = self.s[j * l + k] as f64 * self.gamma[j * l + k];
                a * b
            })
            .sum()
    }
}

/// Strength of the reference factor in generated data (the mean of the
/// other strengths).
pub const SIM_REFERENCE_STRENGTH: f64 = 3.0;

fn bernoulli_row(row: &mut [u8], rng: &mut RngStream) {
    for v in row.iter_mut() {
        *v = u8::from(rng.open01() < 0.5);
    }
}

/// Draws one data set. `C` (non-reference columns) and `S` are
/// Bernoulli(1/2), with any all-zero row redrawn; the reference column of
/// `C` is one. `Phi ~ Ga(1, 1/3)`, `Gamma ~ Ga(1, 1/5)` and
/// `Y ~ Poisson(M)`. In covariate mode `C` follows the probit layer
/// without spatial effects instead.
pub fn generate(scenario: &SimScenario, rng: &mut RngStream) -> Result<(CountMatrix, SimTruth)> {
    scenario.validate()?;
    let (n, p, l) = (scenario.n, scenario.p, scenario.l);

    let (x, beta) = if scenario.with_covariates {
        let names: Vec<String> = (1..=SIM_COVARIATES).map(|c| format!("x{c}")).collect();
        let cols: Vec<Vec<f64>> = (0..SIM_COVARIATES)
            .map(|_| (0..n).map(|_| rng.std_normal()).collect())
            .collect();
        let x = CovariateMatrix::from_columns(n, names, cols)?;
        let q = x.q();
        let mut beta = vec![0.0; l * q];
        for v in beta[q..].iter_mut() {
            *v = SIM_BETA_VARIANCE.sqrt() * rng.std_normal();
        }
        (x, Some(beta))
    } else {
        (CovariateMatrix::intercept(n), None)
    };

    let mut c = vec![0u8; n * l];
    for i in 0..n {
        c[i * l] = 1;
        let row = &mut c[i * l + 1..(i + 1) * l];
        match &beta {
            Some(b) => {
                let q = x.q();
                for (k, v) in row.iter_mut().enumerate() {
                    let eta: f64 = (0..q).map(|a| x.row(i)[a] * b[(k + 1) * q + a]).sum();
                    *v = u8::from(eta + rng.std_normal() > 0.0);
                }
            }
            None => loop {
                bernoulli_row(row, rng);
                if row.iter().any(|&v| v == 1) {
                    break;
                }
            },
        }
    }
    let mut s = vec![0u8; p * l];
    for j in 0..p {
        let row = &mut s[j * l..(j + 1) * l];
        loop {
            bernoulli_row(row, rng);
            if row.iter().any(|&v| v == 1) {
                break;
            }
        }
    }
    let mut phi = vec![0.0; n * l];
    for i in 0..n {
        phi[i * l] = SIM_REFERENCE_STRENGTH;
        for k in 1..l {
            phi[i * l + k] = gamma_draw(1.0, 1.0 / 3.0, rng)?;
        }
    }
    let mut gamma = vec![0.0; p * l];
    for g in gamma.iter_mut() {
        *g = gamma_draw(1.0, 1.0 / 5.0, rng)?;
    }
    let truth = SimTruth {
        n,
        p,
        l,
        c,
        phi,
        s,
        gamma,
        x,
        beta,
    };
    let mut entries = Vec::new();
    for i in 0..n {
        for j in 0..p {
            let v = poisson_draw(truth.mean(i, j), rng);
            if v > 0 {
                let v = u32::try_from(v)
                    .map_err(|_| BarcodeError::Numerical("simulated count overflows u32".into()))?;
                entries.push((i, j, v));
            }
        }
    }
    let y = CountMatrix::from_triplets(n, p, entries, vec![0; n])?;
    Ok((y, truth))
}

/// Mean absolute difference per column between `est` and `truth` after
/// reordering the columns of `est` by `perm`.
pub fn column_errors(est: &[f64], truth: &[u8], rows: usize, cols: usize, perm: &[usize]) -> Vec<f64> {
    let aligned = permute_columns(est, rows, cols, perm);
    (0..cols)
        .map(|k| {
            (0..rows)
                .map(|r| (aligned[r * cols + k] - truth[r * cols + k] as f64).abs())
                .sum::<f64>()
                / rows.max(1) as f64
        })
        .collect()
}

/// Mean elementwise absolute difference between a posterior-mean binary
/// matrix and the truth, after the best column permutation (column 0
/// fixed).
pub fn recovery_error(est: &[f64], truth: &[u8], rows: usize, cols: usize) -> Result<f64> {
    if est.len() != rows * cols || truth.len() != rows * cols {
        return Err(BarcodeError::Shape(format!("both matrices must be {rows} x {cols}")));
    }
    let t: Vec<f64> = truth.iter().map(|&v| v as f64).collect();
    let perm = align_columns(est, &t, rows, cols)?;
    let errs = column_errors(est, truth, rows, cols, &perm);
    Ok(errs.iter().sum::<f64>() / cols as f64)
}

/// Fraction of truths inside their interval (bounds inclusive).
pub fn coverage_check(intervals: &[(f64, f64)], truth: &[f64]) -> Result<f64> {
    if intervals.len() != truth.len() {
        return Err(BarcodeError::Shape("one interval per true value is required".into()));
    }
    if truth.is_empty() {
        return Err(BarcodeError::InvalidParameter("no intervals to check".into()));
    }
    let hit = intervals
        .iter()
        .zip(truth)
        .filter(|((lo, hi), t)| lo <= t && *t <= hi)
        .count();
    Ok(hit as f64 / truth.len() as f64)
}

/// Central credible interval of `level` from a sample of draws.
pub fn credible_interval(draws: &[f64], level: f64) -> (f64, f64) {
    let mut v = draws.to_vec();
    v.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    (quantile(&v, tail), quantile(&v, 1.0 - tail))
}

/// Metrics of one simulation replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateMetrics {
    pub n: usize,
    pub p: usize,
    pub replicate: usize,
    /// Recovery error of `S` over all columns.
    pub s_error: f64,
    /// Recovery error of `C` over the non-reference columns.
    pub c_error: f64,
    /// Coverage of the 95 % intervals of `B` (covariate mode only).
    pub b_coverage: Option<f64>,
    /// Median width of those intervals.
    pub b_width: Option<f64>,
}

/// Fits one replicate and scores it. Factor labels are aligned once, on
/// `C` and `S` stacked, and the same permutation is applied to `B`. The
/// number of factors, and in covariate mode the coefficient prior, are
/// those of the generator.
pub fn run_replicate(
    scenario: &SimScenario,
    replicate: usize,
    hypers: &HyperParams,
    config: &SweepConfig,
) -> Result<ReplicateMetrics> {
    let mut rng = RngStream::new(scenario.seed, 1_000 + replicate as u64);
    let (y, truth) = generate(scenario, &mut rng)?;
    let hypers = HyperParams {
        factors: scenario.l,
        sigma0_sq: if scenario.with_covariates { SIM_BETA_VARIANCE } else { hypers.sigma0_sq },
        ..hypers.clone()
    };
    let config = SweepConfig {
        spatial: false,
        ..config.clone()
    };
    let fit_seed = rng.next_u64();
    let archive = fit(&y, &truth.x, None, &hypers, &config, fit_seed)?;
    score_replicate(scenario, replicate, &truth, &archive)
}

/// Scores an archive fitted to data generated with `truth`.
pub fn score_replicate(
    scenario: &SimScenario,
    replicate: usize,
    truth: &SimTruth,
    archive: &PosteriorArchive,
) -> Result<ReplicateMetrics> {
    let (n, p, l) = (truth.n, truth.p, truth.l);
    let mean_c = archive.mean_c();
    let mean_s = archive.mean_s();
    let mut est = mean_c.clone();
    est.extend_from_slice(&mean_s);
    let mut tru: Vec<f64> = truth.c.iter().map(|&v| v as f64).collect();
    tru.extend(truth.s.iter().map(|&v| v as f64));
    let perm = align_columns(&est, &tru, n + p, l)?;

    let s_err = column_errors(&mean_s, &truth.s, p, l, &perm);
    let c_err = column_errors(&mean_c, &truth.c, n, l, &perm);
    let (b_coverage, b_width) = match &truth.beta {
        Some(beta) => {
            let q = truth.x.q();
            let mut intervals = Vec::new();
            let mut truths = Vec::new();
            let mut widths = Vec::new();
            for k in 1..l {
                for a in 0..q {
                    let draws: Vec<f64> = archive.draws().map(|d| d.beta[perm[k] * q + a]).collect();
                    let iv = credible_interval(&draws, 0.95);
                    widths.push(iv.1 - iv.0);
                    intervals.push(iv);
                    truths.push(beta[k * q + a]);
                }
            }
            widths.sort_by(f64::total_cmp);
            (Some(coverage_check(&intervals, &truths)?), Some(quantile(&widths, 0.5)))
        }
        None => (None, None),
    };
    Ok(ReplicateMetrics {
        n: scenario.n,
        p: scenario.p,
        replicate,
        s_error: s_err.iter().sum::<f64>() / l as f64,
        c_error: c_err[1..].iter().sum::<f64>() / (l - 1) as f64,
        b_coverage,
        b_width,
    })
}

/// Runs every replicate of `scenario` in parallel.
pub fn run_scenario(
    scenario: &SimScenario,
    hypers: &HyperParams,
    config: &SweepConfig,
) -> Result<Vec<ReplicateMetrics>> {
    (0..scenario.n_replicates)
        .into_par_iter()
        .map(|r| run_replicate(scenario, r, hypers, config))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_strengths_have_the_design_means() {
        let sc = SimScenario::new(2000, 500, 3);
        let (_, t) = generate(&sc, &mut RngStream::new(3, 9)).unwrap();
        let l = t.l;
        let phi: Vec<f64> = (0..t.n).flat_map(|i| (1..l).map(move |k| (i, k))).map(|(i, k)| t.phi[i * l + k]).collect();
        let mean_phi = phi.iter().sum::<f64>() / phi.len() as f64;
        let mean_gamma = t.gamma.iter().sum::<f64>() / t.gamma.len() as f64;
        // standard errors: 3/sqrt(6000) and 5/sqrt(2000)
        assert!((mean_phi - 3.0).abs() < 4.0 * 3.0 / (phi.len() as f64).sqrt(), "{mean_phi}");
        assert!((mean_gamma - 5.0).abs() < 4.0 * 5.0 / (t.gamma.len() as f64).sqrt(), "{mean_gamma}");
    }

    #[test]
    fn no_all_zero_rows() {
        for seed in 0..5 {
            let sc = SimScenario { l: 2, ..SimScenario::new(200, 100, seed) };
            let (_, t) = generate(&sc, &mut RngStream::new(seed, 0)).unwrap();
            for i in 0..t.n {
                assert_eq!(t.c[i * 2], 1);
                assert_eq!(t.c[i * 2 + 1], 1, "with L = 2 the only free switch must be on");
            }
            for j in 0..t.p {
                assert!(t.s[j * 2..j * 2 + 2].iter().any(|&v| v == 1));
            }
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let sc = SimScenario { with_covariates: true, ..SimScenario::new(30, 10, 1) };
        let a = generate(&sc, &mut RngStream::new(1, 4)).unwrap();
        let b = generate(&sc, &mut RngStream::new(1, 4)).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn recovery_error_extremes() {
        let truth = vec![1u8, 0, 0, 1, 1, 1, 0, 0];
        let exact: Vec<f64> = truth.iter().map(|&v| v as f64).collect();
        assert_eq!(recovery_error(&exact, &truth, 4, 2).unwrap(), 0.0);
        let flipped: Vec<f64> = truth.iter().map(|&v| 1.0 - v as f64).collect();
        assert_eq!(recovery_error(&flipped, &truth, 4, 2).unwrap(), 1.0);
        assert_eq!(recovery_error(&[0.5; 8], &truth, 4, 2).unwrap(), 0.5);
    }

    #[test]
    fn coverage_extremes() {
        let truth = [0.3, -1.0, 2.0];
        let wide: Vec<(f64, f64)> = truth.iter().map(|t| (t - 1.0, t + 1.0)).collect();
        assert_eq!(coverage_check(&wide, &truth).unwrap(), 1.0);
        let points: Vec<(f64, f64)> = truth.iter().map(|t| (t + 0.5, t + 0.5)).collect();
        assert_eq!(coverage_check(&points, &truth).unwrap(), 0.0);
    }
}
