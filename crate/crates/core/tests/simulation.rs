mod common;

use barcode::data_model::HyperParams;
use barcode::distributions::RngStream;
use barcode::gibbs::SweepConfig;
use barcode::simulation::{
    b_recovery_grid, c_recovery_grid, coverage_check, credible_interval, generate, recovery_error, run_replicate,
    s_recovery_grid, SimScenario, SIM_COVARIATES, SIM_FACTORS,
};
use common::{chacha, std_normal_cdf};
use rand_distr::{Distribution, Normal};

#[test]
fn generated_counts_have_the_model_mean() {
    // 10^4 independent data sets; per cell, the average residual y - mu
    // must vanish within its Poisson standard error.
    let sc = SimScenario::new(6, 4, 77);
    let reps = 10_000u64;
    let mut resid = vec![0.0; 24];
    let mut var = vec![0.0; 24];
    for r in 0..reps {
        let (y, truth) = generate(&sc, &mut RngStream::new(77, r)).unwrap();
        for i in 0..6 {
            for j in 0..4 {
                let mu = truth.mean(i, j);
                resid[i * 4 + j] += y.get(i, j) as f64 - mu;
                var[i * 4 + j] += mu;
            }
        }
    }
    for e in 0..24 {
        let se = var[e].sqrt() / reps as f64;
        let m = resid[e] / reps as f64;
        assert!(m.abs() < 4.0 * se, "cell {e}: mean residual {m} (se {se})");
    }
}

#[test]
fn covariate_mode_draws_switches_from_the_probit() {
    let sc = SimScenario {
        with_covariates: true,
        ..SimScenario::new(4000, 5, 3)
    };
    let (_, truth) = generate(&sc, &mut RngStream::new(3, 0)).unwrap();
    let q = truth.x.q();
    assert_eq!(q, SIM_COVARIATES + 1);
    let beta = truth.beta.as_ref().unwrap();
    assert!(beta[..q].iter().all(|&b| b == 0.0));
    let l = truth.l;
    for k in 1..l {
        let expected: f64 = (0..sc.n)
            .map(|i| {
                let eta: f64 = (0..q).map(|a| truth.x.row(i)[a] * beta[k * q + a]).sum();
                std_normal_cdf(eta)
            })
            .sum::<f64>();
        let on = (0..sc.n).filter(|&i| truth.c[i * l + k] == 1).count() as f64;
        assert!((on - expected).abs() < 5.0 * (sc.n as f64 / 4.0).sqrt(), "factor {k}: {on} vs {expected}");
    }
}

#[test]
fn grids_match_the_study_design() {
    let ns: Vec<usize> = s_recovery_grid(0).iter().map(|s| s.n).collect();
    assert_eq!(ns, vec![50, 100, 500, 1000]);
    assert!(s_recovery_grid(0).iter().all(|s| s.p == 50 && s.n_replicates == 25 && s.l == SIM_FACTORS));
    let ps: Vec<usize> = c_recovery_grid(0).iter().map(|s| s.p).collect();
    assert_eq!(ps, vec![15, 30, 50, 75]);
    assert!(c_recovery_grid(0).iter().all(|s| s.n == 500));
    assert!(b_recovery_grid(0).iter().all(|s| s.with_covariates));
}

#[test]
fn gaussian_toy_posterior_covers_at_the_nominal_rate() {
    // mu ~ N(0, 1), x_1..x_5 ~ N(mu, 1): posterior N(sum x / 6, 1 / 6)
    let trials = 500;
    let mut rng = chacha(12);
    let std = Normal::new(0.0, 1.0).unwrap();
    let mut intervals = Vec::new();
    let mut truths = Vec::new();
    for _ in 0..trials {
        let mu: f64 = std.sample(&mut rng);
        let sum: f64 = (0..5).map(|_| mu + std.sample(&mut rng)).sum();
        let post = Normal::new(sum / 6.0, (1.0f64 / 6.0).sqrt()).unwrap();
        let draws: Vec<f64> = (0..4000).map(|_| post.sample(&mut rng)).collect();
        intervals.push(credible_interval(&draws, 0.95));
        truths.push(mu);
    }
    let cov = coverage_check(&intervals, &truths).unwrap();
    let se = (0.95f64 * 0.05 / trials as f64).sqrt();
    assert!((cov - 0.95).abs() < 3.0 * se + 0.005, "{cov}");
}

#[test]
fn recovery_error_is_invariant_to_column_order() {
    let truth: Vec<u8> = vec![1, 1, 0, 0, 1, 0, 1, 0, 1, 1, 1, 0];
    // columns 1 and 3 swapped in the estimate
    let est: Vec<f64> = truth
        .chunks(4)
        .flat_map(|r| [r[0], r[3], r[2], r[1]].map(f64::from))
        .collect();
    assert_eq!(recovery_error(&est, &truth, 3, 4).unwrap(), 0.0);
    let half = vec![0.5; 12];
    assert_eq!(recovery_error(&half, &truth, 3, 4).unwrap(), 0.5);
}

#[test]
fn a_replicate_runs_end_to_end() {
    let sc = SimScenario {
        with_covariates: true,
        ..SimScenario::new(120, 20, 9)
    };
    let m = run_replicate(&sc, 0, &HyperParams::default(), &SweepConfig::short(100, 100, 2, 1)).unwrap();
    assert_eq!((m.n, m.p, m.replicate), (120, 20, 0));
    assert!((0.0..=1.0).contains(&m.s_error) && (0.0..=1.0).contains(&m.c_error));
    assert!(m.b_coverage.is_some() && m.b_width.unwrap() > 0.0);
    let again = run_replicate(&sc, 0, &HyperParams::default(), &SweepConfig::short(100, 100, 2, 1)).unwrap();
    assert_eq!(m, again);
}
