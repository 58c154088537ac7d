//! Posterior draws collected by the sampler.

use serde::{Deserialize, Serialize};

use crate::data_model::HyperParams;
use crate::gibbs::SweepConfig;

/// Problem dimensions echoed into every archive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub p: usize,
    pub l: usize,
    pub q: usize,
    /// Number of spatial sites carrying a random effect (0 without one).
    pub m: usize,
}

/// One retained state. Matrices are row-major: `c`, `phi` are n x L,
/// `s`, `gamma` are p x L, `beta` is L x q and `xi` is L x m (row 0 of
/// the last two belongs to the reference factor and stays zero).
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub sweep: usize,
    pub loglik: f64,
    pub c: Vec<u8>,
    pub phi: Vec<f64>,
    pub s: Vec<u8>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub xi: Vec<f64>,
    pub psi: f64,
    pub nu: Vec<f64>,
}

impl Draw {
    #[inline]
    pub fn theta(&self, l: usize, i: usize, k: usize) -> f64 {
        let e = i * l + k;
        if self.c[e] == 1 {
            self.phi[e]
        } else {
            0.0
        }
    }

    #[inline]
    pub fn lambda(&self, l: usize, j: usize, k: usize) -> f64 {
        let e = j * l + k;
        if self.s[e] == 1 {
            self.gamma[e]
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainArchive {
    pub chain: usize,
    pub seed: u64,
    pub stream_id: u64,
    pub sweeps_completed: usize,
    /// Log-likelihood after every sweep, burn-in included.
    pub loglik_trace: Vec<f64>,
    pub draws: Vec<Draw>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorArchive {
    pub dims: Dims,
    pub seed: u64,
    pub hypers: HyperParams,
    pub config: SweepConfig,
    pub site_of: Vec<usize>,
    pub covariate_names: Vec<String>,
    pub chains: Vec<ChainArchive>,
}

impl PosteriorArchive {
    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(|c| c.draws.len()).sum()
    }

    pub fn draws(&self) -> impl Iterator<Item = &Draw> {
        self.chains.iter().flat_map(|c| c.draws.iter())
    }

    /// Posterior mean of `C` (n x L).
    pub fn mean_c(&self) -> Vec<f64> {
        mean_of(self.draws().map(|d| d.c.iter().map(|&v| v as f64)), self.dims.n * self.dims.l)
    }

    /// Posterior mean of `S` (p x L).
    pub fn mean_s(&self) -> Vec<f64> {
        mean_of(self.draws().map(|d| d.s.iter().map(|&v| v as f64)), self.dims.p * self.dims.l)
    }

    /// Posterior mean of `C o Phi` (n x L).
    pub fn mean_theta(&self) -> Vec<f64> {
        let l = self.dims.l;
        mean_of(
            self.draws()
                .map(|d| d.c.iter().zip(&d.phi).map(|(&c, &f)| if c == 1 { f } else { 0.0 })),
            self.dims.n * l,
        )
    }

    /// Posterior mean of `S o Gamma` (p x L).
    pub fn mean_lambda(&self) -> Vec<f64> {
        mean_of(
            self.draws()
                .map(|d| d.s.iter().zip(&d.gamma).map(|(&s, &g)| if s == 1 { g } else { 0.0 })),
            self.dims.p * self.dims.l,
        )
    }

    pub fn mean_beta(&self) -> Vec<f64> {
        mean_of(self.draws().map(|d| d.beta.iter().copied()), self.dims.l * self.dims.q)
    }
}

fn mean_of<I, J>(rows: I, len: usize) -> Vec<f64>
where
    I: Iterator<Item = J>,
    J: Iterator<Item = f64>,
{
    let mut acc = vec![0.0; len];
    let mut count = 0usize;
    for row in rows {
        count += 1;
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    if count > 0 {
        acc.iter_mut().for_each(|a| *a /= count as f64);
    }
    acc
}
