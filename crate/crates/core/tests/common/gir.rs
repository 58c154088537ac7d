//! Forward simulation of (parameters, data) from the prior against a Gibbs
//! chain that alternates one sweep with redrawing the data. Both target the
//! same joint distribution, so parameter means must agree.

use barcode::data_model::{CovariateMatrix, HyperParams};
use barcode::distributions::RngStream;
use barcode::gibbs::{ChainState, FactorCountAlloc, Sweeper};
use barcode::latent_regression::{build_kernel, GPKernel, ProbitLayer, SiteGeometry};

use super::*;

pub struct GirSetup {
    pub hypers: HyperParams,
    pub x: CovariateMatrix,
    pub site_of: Vec<usize>,
    pub kernel: Option<GPKernel>,
    pub p: usize,
}

/// n = 4, p = 3, L = 2, no spatial effects. Hyperparameters give every
/// tracked quantity finite prior moments.
pub fn small_setup() -> GirSetup {
    GirSetup {
        hypers: HyperParams {
            factors: 2,
            a_gamma: 2.0,
            a_nu: 5.0,
            b_nu: 5.0,
            sigma0_sq: 1.0,
            ..HyperParams::default()
        },
        x: CovariateMatrix::from_raw(
            4,
            2,
            vec![1.0, -1.2, 1.0, -0.3, 1.0, 0.4, 1.0, 1.1],
            vec!["intercept".into(), "x1".into()],
        )
        .unwrap(),
        site_of: vec![0; 4],
        kernel: None,
        p: 3,
    }
}

/// L = 3 (blocks split the factors) with two spatial sites.
pub fn spatial_setup() -> GirSetup {
    let geom = SiteGeometry::new(vec![[0.0, 0.0], [1.0, 0.5]]).unwrap();
    GirSetup {
        hypers: HyperParams {
            factors: 3,
            block_size: 2,
            ..small_setup().hypers
        },
        x: CovariateMatrix::intercept(4),
        site_of: vec![0, 0, 1, 1],
        kernel: Some(build_kernel(&geom, 0.7).unwrap()),
        p: 3,
    }
}

fn stats(state: &ChainState) -> Vec<(String, f64)> {
    let g = state.loadings.gamma();
    let s = state.loadings.s();
    let l = state.factors.factors();
    let c = state.factors.c();
    let z = state.factors.zeta();
    let free: Vec<usize> = (0..c.len()).filter(|e| e % l != 0).collect();
    let mean = |v: &mut dyn Iterator<Item = f64>| {
        let (sum, cnt) = v.fold((0.0, 0usize), |(a, b), x| (a + x, b + 1));
        sum / cnt as f64
    };
    let reg = &state.regression;
    let mut out = vec![
        ("psi".to_string(), state.loadings.psi()),
        ("mean Gamma".to_string(), mean(&mut g.iter().copied())),
        ("mean ln Gamma".to_string(), mean(&mut g.iter().map(|v| v.ln()))),
        ("share of S on".to_string(), mean(&mut s.iter().map(|&v| v as f64))),
        ("share of C on".to_string(), mean(&mut free.iter().map(|&e| c[e] as f64))),
        ("mean Z".to_string(), mean(&mut free.iter().map(|&e| z[e]))),
    ];
    for k in 0..l {
        out.push((format!("nu_{k}"), state.loadings.nu()[k]));
    }
    for k in 1..l {
        for a in 0..reg.q {
            let b = reg.beta[k * reg.q + a];
            out.push((format!("beta_{k}{a}"), b));
            out.push((format!("beta_{k}{a}^2"), b * b));
        }
        for a in 0..reg.m {
            let x = reg.xi[k * reg.m + a];
            out.push((format!("xi_{k}{a}"), x));
            out.push((format!("xi_{k}{a}^2"), x * x));
        }
    }
    out
}

/// Returns (name, forward mean, gibbs mean, combined se) per statistic.
pub fn run_gir(setup: &GirSetup, rounds: usize, seed: u64) -> Vec<(String, f64, f64, f64)> {
    let h = &setup.hypers;
    let n = setup.x.n();
    let mut rng = chacha(seed);
    let draw = |rng: &mut _| forward_draw(&setup.x, &setup.site_of, setup.kernel.as_ref(), setup.p, h, rng);

    let mut names = Vec::new();
    let mut fwd: Vec<Vec<f64>> = Vec::new();
    for _ in 0..rounds {
        let st = stats(&draw(&mut rng).state);
        if fwd.is_empty() {
            names = st.iter().map(|(a, _)| a.clone()).collect();
            fwd = vec![Vec::with_capacity(rounds); st.len()];
        }
        for (v, (_, s)) in fwd.iter_mut().zip(st) {
            v.push(s);
        }
    }

    let layer = ProbitLayer::new(&setup.x, &setup.site_of, setup.kernel.as_ref(), h.sigma0_sq).unwrap();
    let start = draw(&mut rng);
    let mut state = start.state;
    let mut y = start.y;
    let mut srng = RngStream::new(seed, 1);
    let mut gibbs: Vec<Vec<f64>> = vec![Vec::with_capacity(rounds); names.len()];
    for _ in 0..rounds {
        state.alloc = FactorCountAlloc::new(&y, h.factors);
        Sweeper::new(&y, &layer, h).sweep(&mut state, &mut srng).unwrap();
        for (v, (_, s)) in gibbs.iter_mut().zip(stats(&state)) {
            v.push(s);
        }
        y = regenerate(&state.factors, &state.loadings, n, setup.p, &mut rng)
            .with_sites(setup.site_of.clone())
            .unwrap();
    }

    names
        .into_iter()
        .enumerate()
        .map(|(k, name)| {
            let (mf, sf) = mean_se(&fwd[k]);
            let (mg, sg) = batch_mean_se(&gibbs[k], 50);
            (name, mf, mg, (sf * sf + sg * sg).sqrt())
        })
        .collect()
}
