//! Count allocation (step 3) and the conjugate updates (steps 4-6 and 8).

use crate::data_model::{CountMatrix, FactorState, HyperParams, LoadingState};
use crate::distributions::{beta_draw, gamma, multinomial_fill, RngStream};
use crate::error::{BarcodeError, Result};

/// Shape used for `u_l` when factor `l` holds no counts.
pub const DORMANT_SHAPE_FLOOR: f64 = 1e-8;

/// Factor-specific counts `y_ijl` for every stored nonzero, with margins.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorCountAlloc {
    l: usize,
    counts: Vec<u32>,
    by_species: Vec<u64>,
    by_sample: Vec<u64>,
    totals: Vec<u64>,
}

impl FactorCountAlloc {
    pub fn new(y: &CountMatrix, l: usize) -> Self {
        FactorCountAlloc {
            l,
            counts: vec![0; y.nnz() * l],
            by_species: vec![0; y.p() * l],
            by_sample: vec![0; y.n() * l],
            totals: vec![0; l],
        }
    }

    pub fn factors(&self) -> usize {
        self.l
    }

    /// Allocation of row-ordered entry `e` across factors.
    pub fn entry(&self, e: usize) -> &[u32] {
        &self.counts[e * self.l..(e + 1) * self.l]
    }

    /// `y_{.jl}`
    pub fn species_total(&self, j: usize, k: usize) -> u64 {
        self.by_species[j * self.l + k]
    }

    /// `y_{i.l}`
    pub fn sample_total(&self, i: usize, k: usize) -> u64 {
        self.by_sample[i * self.l + k]
    }

    /// `y_{..l}`
    pub fn factor_total(&self, k: usize) -> u64 {
        self.totals[k]
    }
}

/// Step 3: split every nonzero count across the factors active in both its
/// sample and its species, proportionally to `c_il phi_il s_jl gamma_jl`.
/// Zero cells are never visited.
pub fn allocate_counts(
    y: &CountMatrix,
    factors: &FactorState,
    loadings: &LoadingState,
    alloc: &mut FactorCountAlloc,
    rng: &mut RngStream,
) -> Result<()> {
    let l = factors.factors();
    alloc.by_species.iter_mut().for_each(|v| *v = 0);
    alloc.by_sample.iter_mut().for_each(|v| *v = 0);
    alloc.totals.iter_mut().for_each(|v| *v = 0);
    let mut theta = vec![0.0; l];
    let mut w = vec![0.0; l];
    for i in 0..y.n() {
        for (k, t) in theta.iter_mut().enumerate() {
            *t = factors.theta(i, k);
        }
        for e in y.row_range(i) {
            let j = y.entry_col(e);
            let yv = y.entry_value(e) as u64;
            let mut sum = 0.0;
            for k in 0..l {
                w[k] = theta[k] * loadings.lambda(j, k);
                sum += w[k];
            }
            if !(sum > 0.0) {
                return Err(BarcodeError::Inadmissible(format!(
                    "count {yv} at sample {i}, species {j} has zero mean"
                )));
            }
            let out = &mut alloc.counts[e * l..(e + 1) * l];
            multinomial_fill(yv, &w, sum, out, rng);
            for k in 0..l {
                let c = out[k] as u64;
                alloc.by_species[j * l + k] += c;
                alloc.by_sample[i * l + k] += c;
                alloc.totals[k] += c;
            }
        }
    }
    Ok(())
}

/// Step 4: `gamma_jl ~ Ga(a_gamma + y_.jl, nu_l + sum_i c_il phi_il)` for
/// active loadings and the pseudo-prior `Ga(1, tau0)` for dormant ones.
pub fn update_gamma(
    alloc: &FactorCountAlloc,
    factors: &FactorState,
    loadings: &mut LoadingState,
    hypers: &HyperParams,
    rng: &mut RngStream,
) {
    let l = loadings.factors();
    let mass: Vec<f64> = (0..l).map(|k| factors.column_mass(k)).collect();
    for j in 0..loadings.p() {
        for k in 0..l {
            let e = j * l + k;
            loadings.gamma[e] = if loadings.s[e] == 1 {
                let shape = hypers.a_gamma + alloc.species_total(j, k) as f64;
                gamma(shape, loadings.nu[k] + mass[k], rng)
            } else {
                gamma(1.0, hypers.tau0, rng)
            };
        }
    }
}

/// Steps 5-6: `u_l ~ Ga(y_..l, sum_i c_il zeta_il)`, then
/// `zeta_il ~ Ga(alpha + y_i.l, 1 + u_l)` for active entries and the prior
/// `Ga(alpha, 1)` for inactive ones. Normalizers are refreshed afterwards.
pub fn update_u_and_zeta(
    alloc: &FactorCountAlloc,
    factors: &mut FactorState,
    hypers: &HyperParams,
    rng: &mut RngStream,
) {
    let (n, l) = (factors.n(), factors.factors());
    for k in 1..l {
        let shape = (alloc.factor_total(k) as f64).max(DORMANT_SHAPE_FLOOR);
        let active: f64 = (0..n)
            .filter(|&i| factors.c[i * l + k] == 1)
            .map(|i| factors.zeta[i * l + k])
            .sum();
        let rate = if active > 0.0 { active } else { factors.norms()[k] };
        factors.u[k] = gamma(shape, rate, rng);
    }
    for i in 0..n {
        for k in 1..l {
            let e = i * l + k;
            factors.zeta[e] = if factors.c[e] == 1 {
                gamma(
                    hypers.alpha + alloc.sample_total(i, k) as f64,
                    1.0 + factors.u[k],
                    rng,
                )
            } else {
                gamma(hypers.alpha, 1.0, rng)
            };
        }
    }
    factors.refresh_norms();
}

/// Step 8: `psi ~ Beta(psi_a + #on, psi_b + #off)` over all of `S`, and
/// `nu_l ~ Ga(a_nu + a_gamma #on_l, b_nu + sum_{on} gamma_jl)`.
pub fn update_hypers(loadings: &mut LoadingState, hypers: &HyperParams, rng: &mut RngStream) -> Result<()> {
    let (p, l) = (loadings.p(), loadings.factors());
    let on = loadings.s.iter().filter(|&&s| s == 1).count();
    let off = loadings.s.len() - on;
    loadings.psi = beta_draw(hypers.psi_a + on as f64, hypers.psi_b + off as f64, rng)?;
    for k in 0..l {
        let mut count = 0usize;
        let mut sum = 0.0;
        for j in 0..p {
            if loadings.s[j * l + k] == 1 {
                count += 1;
                sum += loadings.gamma[j * l + k];
            }
        }
        loadings.nu[k] = gamma(
            hypers.a_nu + hypers.a_gamma * count as f64,
            hypers.b_nu + sum,
            rng,
        );
    }
    Ok(())
}
