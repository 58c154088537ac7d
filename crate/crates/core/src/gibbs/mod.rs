//! The Gibbs sampler.
//!
//! One sweep runs, in order:
//! 1. species switches `S` (blocked),
//! 2. sample switches `C` (blocked),
//! 3. allocation of each nonzero count across factors,
//! 4. loading strengths `Gamma`,
//! 5. normalizing auxiliaries `u`,
//! 6. unnormalized strengths `Z`,
//! 7. probit utilities and `(beta_l, xi_l)`,
//! 8. `psi` and `nu`.
//!
//! Steps 1-3 only visit stored nonzeros, so the dominant cost scales with
//! `nnz(Y)`, not with `n * p`.

mod conjugate;
mod switches;
mod warm_start;

pub use conjugate::{
    allocate_counts, update_gamma, update_hypers, update_u_and_zeta, FactorCountAlloc,
    DORMANT_SHAPE_FLOOR,
};
pub use switches::{update_sample_switches, update_species_switches};
pub use warm_start::{kl_divergence, warm_start, WarmStart};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archive::{ChainArchive, Dims, Draw, PosteriorArchive};
use crate::data_model::{CountMatrix, CovariateMatrix, FactorState, HyperParams, LoadingState};
use crate::distributions::RngStream;
use crate::error::{BarcodeError, Result};
use crate::latent_regression::{
    build_kernel, update_probit_layer, ProbitLayer, RegressionState, SiteGeometry,
};

use switches::BlockScratch;

fn default_burnin() -> usize {
    25_000
}
fn default_samples() -> usize {
    25_000
}
fn default_thin() -> usize {
    10
}
fn default_chains() -> usize {
    4
}
fn default_true() -> bool {
    true
}
fn default_warm_iters() -> usize {
    500
}

/// Run-length settings. `n_samples` counts post-burn-in sweeps; every
/// `thin`-th of them is archived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_burnin")]
    pub n_burnin: usize,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
    #[serde(default = "default_chains")]
    pub n_chains: usize,
    #[serde(default = "default_true")]
    pub warm_start: bool,
    #[serde(default = "default_warm_iters")]
    pub warm_start_iters: usize,
    /// Include the spatial Gaussian-process effects in the probit layer.
    #[serde(default = "default_true")]
    pub spatial: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            n_burnin: default_burnin(),
            n_samples: default_samples(),
            thin: default_thin(),
            n_chains: default_chains(),
            warm_start: true,
            warm_start_iters: default_warm_iters(),
            spatial: true,
        }
    }
}

impl SweepConfig {
    pub fn short(n_burnin: usize, n_samples: usize, thin: usize, n_chains: usize) -> Self {
        SweepConfig {
            n_burnin,
            n_samples,
            thin,
            n_chains,
            ..SweepConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.thin < 1 {
            return Err(BarcodeError::InvalidParameter("thin must be >= 1".into()));
        }
        if self.n_chains < 1 {
            return Err(BarcodeError::InvalidParameter("at least one chain is required".into()));
        }
        Ok(())
    }
}

/// Complete sampler state for one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub factors: FactorState,
    pub loadings: LoadingState,
    pub regression: RegressionState,
    pub alloc: FactorCountAlloc,
}

impl ChainState {
    /// All switches on, strengths from `phi` / `gamma`, `psi = 1/2`,
    /// `nu = 1`, regression at zero.
    pub fn from_strengths(
        y: &CountMatrix,
        l: usize,
        q: usize,
        m: usize,
        phi: &[f64],
        gamma: &[f64],
    ) -> Result<Self> {
        let (n, p) = (y.n(), y.p());
        let factors = FactorState::from_phi(n, l, phi)?;
        let loadings = LoadingState::new(p, l, vec![1; p * l], gamma.to_vec(), vec![1.0; l], 0.5)?;
        Ok(ChainState {
            factors,
            loadings,
            regression: RegressionState::zeros(n, l, q, m),
            alloc: FactorCountAlloc::new(y, l),
        })
    }

    pub fn snapshot(&self, sweep: usize, loglik: f64) -> Draw {
        Draw {
            sweep,
            loglik,
            c: self.factors.c().to_vec(),
            phi: self.factors.phi_matrix(),
            s: self.loadings.s().to_vec(),
            gamma: self.loadings.gamma().to_vec(),
            beta: self.regression.beta.clone(),
            xi: self.regression.xi.clone(),
            psi: self.loadings.psi(),
            nu: self.loadings.nu().to_vec(),
        }
    }
}

/// Initial state: warm start when requested, otherwise unit strengths
/// scaled to the mean count.
pub fn initial_state(
    y: &CountMatrix,
    layer: &ProbitLayer,
    hypers: &HyperParams,
    config: &SweepConfig,
    rng: &mut RngStream,
) -> Result<ChainState> {
    let (n, p, l) = (y.n(), y.p(), hypers.factors);
    let (phi, gamma) = if config.warm_start {
        let ws = warm_start(y, l, config.warm_start_iters, rng)?;
        (ws.phi, ws.gamma)
    } else {
        let phi = vec![1.0 / n as f64; n * l];
        let per_species = (y.total() as f64 / (p as f64 * l as f64)).max(1e-3);
        (phi, vec![per_species; p * l])
    };
    ChainState::from_strengths(y, l, layer.q(), layer.m(), &phi, &gamma)
}

/// Poisson log-likelihood of the current state, computed over nonzeros.
pub fn state_log_likelihood(y: &CountMatrix, state: &ChainState) -> f64 {
    let f = &state.factors;
    let g = &state.loadings;
    let l = f.factors();
    let mut ll = 0.0;
    let mut theta = vec![0.0; l];
    for i in 0..y.n() {
        for (k, t) in theta.iter_mut().enumerate() {
            *t = f.theta(i, k);
        }
        for e in y.row_range(i) {
            let j = y.entry_col(e);
            let mu: f64 = (0..l).map(|k| theta[k] * g.lambda(j, k)).sum();
            if mu <= 0.0 {
                return f64::NEG_INFINITY;
            }
            ll += y.entry_value(e) as f64 * mu.ln();
        }
    }
    for j in 0..y.p() {
        for k in 0..l {
            ll -= g.lambda(j, k) * f.column_mass(k);
        }
    }
    ll - y.log_factorial_sum()
}

/// Checks the structural invariants of a state after a full sweep.
pub fn check_invariants(y: &CountMatrix, state: &ChainState) -> std::result::Result<(), String> {
    let f = &state.factors;
    let l = f.factors();
    let n = f.n();
    for i in 0..n {
        if f.switch(i, 0) != 1 {
            return Err(format!("reference switch off in sample {i}"));
        }
        if f.phi(i, 0) != 1.0 / n as f64 {
            return Err(format!("reference strength changed in sample {i}"));
        }
    }
    for k in 1..l {
        if !f.column_active(k) {
            continue;
        }
        let sum: f64 = (0..n).map(|i| f.theta(i, k)).sum();
        if (sum - 1.0).abs() >= 1e-12 {
            return Err(format!("active strengths of factor {k} sum to {sum}"));
        }
    }
    for i in 0..n {
        for e in y.row_range(i) {
            let j = y.entry_col(e);
            let a = state.alloc.entry(e);
            let total: u64 = a.iter().map(|&v| v as u64).sum();
            if total != y.entry_value(e) as u64 {
                return Err(format!("allocation of ({i}, {j}) sums to {total}"));
            }
            for (k, &v) in a.iter().enumerate() {
                if v > 0 && (f.switch(i, k) == 0 || state.loadings.s()[j * l + k] == 0) {
                    return Err(format!("count allocated to inactive factor {k} at ({i}, {j})"));
                }
            }
        }
    }
    Ok(())
}

/// Runs steps 1-8 on `state`. Scratch buffers are reused across sweeps.
pub struct Sweeper<'a> {
    y: &'a CountMatrix,
    layer: &'a ProbitLayer,
    hypers: &'a HyperParams,
    scratch: BlockScratch,
}

impl<'a> Sweeper<'a> {
    pub fn new(y: &'a CountMatrix, layer: &'a ProbitLayer, hypers: &'a HyperParams) -> Self {
        Sweeper {
            y,
            layer,
            hypers,
            scratch: BlockScratch::default(),
        }
    }

    pub fn sweep(&mut self, state: &mut ChainState, rng: &mut RngStream) -> Result<()> {
        let (y, hypers) = (self.y, self.hypers);
        switches::update_species_switches_with(
            y,
            &state.factors,
            &mut state.loadings,
            hypers,
            rng,
            &mut self.scratch,
        )?;
        switches::update_sample_switches_with(
            y,
            &mut state.factors,
            &mut state.loadings,
            &state.regression,
            self.layer,
            hypers,
            rng,
            &mut self.scratch,
        )?;
        allocate_counts(y, &state.factors, &state.loadings, &mut state.alloc, rng)?;
        update_gamma(&state.alloc, &state.factors, &mut state.loadings, hypers, rng);
        update_u_and_zeta(&state.alloc, &mut state.factors, hypers, rng);
        update_probit_layer(state.factors.c(), self.layer, &mut state.regression, rng);
        update_hypers(&mut state.loadings, hypers, rng)?;
        Ok(())
    }
}

/// Runs one chain from `init` and archives thinned post-burn-in draws.
pub fn run_chain(
    y: &CountMatrix,
    layer: &ProbitLayer,
    hypers: &HyperParams,
    config: &SweepConfig,
    init: ChainState,
    chain: usize,
    rng: &mut RngStream,
) -> Result<ChainArchive> {
    run_chain_with(y, layer, hypers, config, init, chain, rng, |_, _| Ok(()))
}

/// As [`run_chain`], calling `inspect(sweep, state)` after every sweep.
#[allow(clippy::too_many_arguments)]
pub fn run_chain_with<F>(
    y: &CountMatrix,
    layer: &ProbitLayer,
    hypers: &HyperParams,
    config: &SweepConfig,
    init: ChainState,
    chain: usize,
    rng: &mut RngStream,
    mut inspect: F,
) -> Result<ChainArchive>
where
    F: FnMut(usize, &ChainState) -> Result<()>,
{
    config.validate()?;
    let mut state = init;
    let mut sweeper = Sweeper::new(y, layer, hypers);
    let total = config.n_burnin + config.n_samples;
    let mut archive = ChainArchive {
        chain,
        seed: rng.seed(),
        stream_id: rng.stream_id(),
        sweeps_completed: 0,
        loglik_trace: Vec::with_capacity(total),
        draws: Vec::with_capacity(config.n_samples / config.thin),
    };
    for t in 0..total {
        sweeper.sweep(&mut state, rng).map_err(|e| BarcodeError::Aborted {
            sweep: t,
            reason: e.to_string(),
        })?;
        let ll = state_log_likelihood(y, &state);
        if ll == f64::NEG_INFINITY {
            return Err(BarcodeError::Aborted {
                sweep: t,
                reason: "state assigns zero mean to a positive count".into(),
            });
        }
        inspect(t, &state)?;
        archive.loglik_trace.push(ll);
        archive.sweeps_completed = t + 1;
        if t >= config.n_burnin && (t - config.n_burnin + 1) % config.thin == 0 {
            archive.draws.push(state.snapshot(t, ll));
        }
    }
    Ok(archive)
}

/// Stream id reserved for initialization; chain `k` uses stream `k + 1`.
pub const INIT_STREAM: u64 = 0;

/// Fits the model: builds the probit layer (with the spatial kernel when
/// `geometry` is given and `config.spatial` is set), computes one shared
/// initial state and runs `config.n_chains` chains in parallel.
pub fn fit(
    y: &CountMatrix,
    x: &CovariateMatrix,
    geometry: Option<&SiteGeometry>,
    hypers: &HyperParams,
    config: &SweepConfig,
    seed: u64,
) -> Result<PosteriorArchive> {
    hypers.validate()?;
    config.validate()?;
    if x.n() != y.n() {
        return Err(BarcodeError::Shape(format!(
            "{} covariate rows for {} samples",
            x.n(),
            y.n()
        )));
    }
    let kernel = match (geometry, config.spatial) {
        (Some(g), true) => {
            if y.site_of().iter().any(|&k| k >= g.m()) {
                return Err(BarcodeError::Shape("sample refers to an unknown site".into()));
            }
            Some(build_kernel(g, hypers.gp_variance)?)
        }
        _ => None,
    };
    let layer = ProbitLayer::new(x, y.site_of(), kernel.as_ref(), hypers.sigma0_sq)?;
    let mut init_rng = RngStream::new(seed, INIT_STREAM);
    let init = initial_state(y, &layer, hypers, config, &mut init_rng)?;

    let chains = (0..config.n_chains)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngStream::new(seed, k as u64 + 1);
            run_chain(y, &layer, hypers, config, init.clone(), k, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(PosteriorArchive {
        dims: Dims {
            n: y.n(),
            p: y.p(),
            l: hypers.factors,
            q: layer.q(),
            m: layer.m(),
        },
        seed,
        hypers: hypers.clone(),
        config: config.clone(),
        site_of: y.site_of().to_vec(),
        covariate_names: x.names().to_vec(),
        chains,
    })
}
