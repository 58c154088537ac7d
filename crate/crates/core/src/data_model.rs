//! Core domain types: the sparse count matrix, latent factor and loading
//! states, hyperparameters, and the mean / likelihood computations.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::distributions::ln_factorial;
use crate::error::{BarcodeError, Result};

/// Sparse n x p abundance matrix with a sample -> site map.
///
/// Nonzeros are stored twice: compressed by sample (rows) for the sample
/// switch sweep, and compressed by species (columns) for the species sweep.
/// The column view stores the position of each entry in the row view so
/// that per-entry state (factor allocations) has a single home.
#[derive(Debug, Clone, PartialEq)]
pub struct CountMatrix {
    n: usize,
    p: usize,
    m: usize,
    site_of: Vec<usize>,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<u32>,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    csc_to_csr: Vec<usize>,
    log_fact_sum: f64,
}

impl CountMatrix {
    /// Builds the matrix from `(sample, species, count)` triplets. Zero counts
    /// are dropped; duplicate keys are an error.
    pub fn from_triplets(
        n: usize,
        p: usize,
        entries: impl IntoIterator<Item = (usize, usize, u32)>,
        site_of: Vec<usize>,
    ) -> Result<Self> {
        if site_of.len() != n {
            return Err(BarcodeError::Shape(format!(
                "site map has {} entries for {n} samples",
                site_of.len()
            )));
        }
        let m = site_of.iter().map(|&k| k + 1).max().unwrap_or(0);
        let mut trip: Vec<(usize, usize, u32)> = entries
            .into_iter()
            .filter(|&(_, _, y)| y > 0)
            .collect();
        for &(i, j, _) in &trip {
            if i >= n || j >= p {
                return Err(BarcodeError::Shape(format!(
                    "entry ({i}, {j}) outside a {n} x {p} matrix"
                )));
            }
        }
        trip.sort_unstable_by_key(|&(i, j, _)| (i, j));
        if let Some(w) = trip.windows(2).find(|w| w[0].0 == w[1].0 && w[0].1 == w[1].1) {
            return Err(BarcodeError::data(
                None,
                format!("duplicate entry for sample {} species {}", w[0].0, w[0].1),
            ));
        }

        let nnz = trip.len();
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        for &(i, j, y) in &trip {
            row_ptr[i + 1] += 1;
            col_idx.push(j);
            values.push(y);
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }

        let mut col_ptr = vec![0usize; p + 1];
        for &j in &col_idx {
            col_ptr[j + 1] += 1;
        }
        for j in 0..p {
            col_ptr[j + 1] += col_ptr[j];
        }
        let mut fill = col_ptr.clone();
        let mut row_idx = vec![0usize; nnz];
        let mut csc_to_csr = vec![0usize; nnz];
        for i in 0..n {
            for e in row_ptr[i]..row_ptr[i + 1] {
                let j = col_idx[e];
                row_idx[fill[j]] = i;
                csc_to_csr[fill[j]] = e;
                fill[j] += 1;
            }
        }
        let log_fact_sum = values.iter().map(|&y| ln_factorial(y as u64)).sum();

        Ok(CountMatrix {
            n,
            p,
            m,
            site_of,
            row_ptr,
            col_idx,
            values,
            col_ptr,
            row_idx,
            csc_to_csr,
            log_fact_sum,
        })
    }

    pub fn from_dense(rows: &[Vec<u32>], site_of: Vec<usize>) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != p) {
            return Err(BarcodeError::Shape("ragged dense count matrix".into()));
        }
        let trip = rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().enumerate().map(move |(j, &y)| (i, j, y)));
        CountMatrix::from_triplets(n, p, trip, site_of)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of sites referenced by the site map.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn site_of(&self) -> &[usize] {
        &self.site_of
    }

    /// Sum of `ln(y!)` over the nonzeros.
    pub fn log_factorial_sum(&self) -> f64 {
        self.log_fact_sum
    }

    pub fn total(&self) -> u64 {
        self.values.iter().map(|&y| y as u64).sum()
    }

    /// Range of entry indices belonging to sample `i`.
    #[inline]
    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }

    #[inline]
    pub fn col_range(&self, j: usize) -> std::ops::Range<usize> {
        self.col_ptr[j]..self.col_ptr[j + 1]
    }

    /// Species index of entry `e` (row ordering).
    #[inline]
    pub fn entry_col(&self, e: usize) -> usize {
        self.col_idx[e]
    }

    #[inline]
    pub fn entry_value(&self, e: usize) -> u32 {
        self.values[e]
    }

    /// Sample index and row-ordered entry index for column-ordered position `t`.
    #[inline]
    pub fn col_entry(&self, t: usize) -> (usize, usize) {
        (self.row_idx[t], self.csc_to_csr[t])
    }

    /// Iterates `(sample, species, count)` in row order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, u32)> + '_ {
        (0..self.n).flat_map(move |i| {
            self.row_range(i)
                .map(move |e| (i, self.col_idx[e], self.values[e]))
        })
    }

    pub fn get(&self, i: usize, j: usize) -> u32 {
        let r = self.row_range(i);
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0,
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<u32>> {
        let mut out = vec![vec![0u32; self.p]; self.n];
        for (i, j, y) in self.iter() {
            out[i][j] = y;
        }
        out
    }

    /// Restriction to a subset of samples, keeping species and site ids.
    pub fn select_rows(&self, rows: &[usize]) -> Result<CountMatrix> {
        let mut trip = Vec::new();
        for (new_i, &i) in rows.iter().enumerate() {
            for e in self.row_range(i) {
                trip.push((new_i, self.col_idx[e], self.values[e]));
            }
        }
        let sites = rows.iter().map(|&i| self.site_of[i]).collect();
        CountMatrix::from_triplets(rows.len(), self.p, trip, sites)
    }

    /// Same counts with a different sample -> site map.
    pub fn with_sites(&self, site_of: Vec<usize>) -> Result<CountMatrix> {
        CountMatrix::from_triplets(self.n, self.p, self.iter(), site_of)
    }
}

/// Normalizes auxiliary intensities into factor strengths. Column 0 is the
/// reference factor and is fixed to `1/n`; every other column is divided by
/// the sum of its active entries, or by its full sum when no entry is active.
pub fn compute_phi(zeta: &[f64], c: &[u8], n: usize, l: usize) -> Result<Vec<f64>> {
    if zeta.len() != n * l || c.len() != n * l {
        return Err(BarcodeError::Shape(format!(
            "expected {n} x {l} intensity and switch matrices"
        )));
    }
    if zeta.iter().any(|z| !(*z > 0.0) || !z.is_finite()) {
        return Err(BarcodeError::Inadmissible(
            "auxiliary intensities must be positive and finite".into(),
        ));
    }
    let norms = column_norms(zeta, c, n, l);
    let mut phi = vec![0.0; n * l];
    for i in 0..n {
        phi[i * l] = 1.0 / n as f64;
        for k in 1..l {
            phi[i * l + k] = zeta[i * l + k] / norms[k];
        }
    }
    Ok(phi)
}

pub(crate) fn column_norms(zeta: &[f64], c: &[u8], n: usize, l: usize) -> Vec<f64> {
    let mut active = vec![0.0; l];
    let mut all = vec![0.0; l];
    for i in 0..n {
        for k in 1..l {
            let z = zeta[i * l + k];
            all[k] += z;
            if c[i * l + k] == 1 {
                active[k] += z;
            }
        }
    }
    (0..l)
        .map(|k| {
            if k == 0 {
                1.0
            } else if active[k] > 0.0 {
                active[k]
            } else {
                all[k]
            }
        })
        .collect()
}

/// Sample-side latent state: switches `C`, auxiliary intensities `Z` and the
/// normalizing auxiliaries `u`. Strengths `Phi` are derived from `Z` and `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorState {
    n: usize,
    l: usize,
    pub(crate) c: Vec<u8>,
    pub(crate) zeta: Vec<f64>,
    pub(crate) u: Vec<f64>,
    pub(crate) norms: Vec<f64>,
}

impl FactorState {
    pub fn new(n: usize, l: usize, c: Vec<u8>, zeta: Vec<f64>) -> Result<Self> {
        if l < 1 || c.len() != n * l || zeta.len() != n * l {
            return Err(BarcodeError::Shape(format!(
                "factor state must be {n} x {l}"
            )));
        }
        if c.iter().any(|&x| x > 1) {
            return Err(BarcodeError::InvalidParameter("switches must be 0/1".into()));
        }
        if (0..n).any(|i| c[i * l] != 1) {
            return Err(BarcodeError::InvalidParameter(
                "reference column of C must be all ones".into(),
            ));
        }
        if zeta.iter().any(|z| !(*z > 0.0) || !z.is_finite()) {
            return Err(BarcodeError::Inadmissible(
                "auxiliary intensities must be positive and finite".into(),
            ));
        }
        let norms = column_norms(&zeta, &c, n, l);
        Ok(FactorState {
            n,
            l,
            c,
            zeta,
            u: vec![1.0; l],
            norms,
        })
    }

    /// State with every switch on and intensities taken from `phi` (columns
    /// 1.. are rescaled by `n` so `Z` sits on the scale of its prior).
    pub fn from_phi(n: usize, l: usize, phi: &[f64]) -> Result<Self> {
        let mut zeta = vec![1.0; n * l];
        for i in 0..n {
            for k in 1..l {
                zeta[i * l + k] = (phi[i * l + k] * n as f64).max(1e-300);
            }
        }
        FactorState::new(n, l, vec![1; n * l], zeta)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn factors(&self) -> usize {
        self.l
    }

    pub fn c(&self) -> &[u8] {
        &self.c
    }

    pub fn zeta(&self) -> &[f64] {
        &self.zeta
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    #[inline]
    pub fn switch(&self, i: usize, k: usize) -> u8 {
        self.c[i * self.l + k]
    }

    #[inline]
    pub fn phi(&self, i: usize, k: usize) -> f64 {
        if k == 0 {
            1.0 / self.n as f64
        } else {
            self.zeta[i * self.l + k] / self.norms[k]
        }
    }

    /// Active strength `c_il * phi_il`.
    #[inline]
    pub fn theta(&self, i: usize, k: usize) -> f64 {
        if self.c[i * self.l + k] == 1 {
            self.phi(i, k)
        } else {
            0.0
        }
    }

    pub fn phi_matrix(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n * self.l];
        for i in 0..self.n {
            for k in 0..self.l {
                out[i * self.l + k] = self.phi(i, k);
            }
        }
        out
    }

    pub fn theta_matrix(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n * self.l];
        for i in 0..self.n {
            for k in 0..self.l {
                out[i * self.l + k] = self.theta(i, k);
            }
        }
        out
    }

    /// `sum_i c_il phi_il`: one for the reference and for any column with an
    /// active entry, zero for a fully switched-off column.
    #[inline]
    pub fn column_mass(&self, k: usize) -> f64 {
        if k == 0 || self.column_active(k) {
            1.0
        } else {
            0.0
        }
    }

    pub fn column_active(&self, k: usize) -> bool {
        k == 0 || (0..self.n).any(|i| self.c[i * self.l + k] == 1)
    }

    pub(crate) fn refresh_norms(&mut self) {
        self.norms = column_norms(&self.zeta, &self.c, self.n, self.l);
    }

    pub(crate) fn norms(&self) -> &[f64] {
        &self.norms
    }
}

/// Species-side latent state.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadingState {
    p: usize,
    l: usize,
    pub(crate) s: Vec<u8>,
    pub(crate) gamma: Vec<f64>,
    pub(crate) nu: Vec<f64>,
    pub(crate) psi: f64,
}

impl LoadingState {
    pub fn new(p: usize, l: usize, s: Vec<u8>, gamma: Vec<f64>, nu: Vec<f64>, psi: f64) -> Result<Self> {
        if s.len() != p * l || gamma.len() != p * l || nu.len() != l {
            return Err(BarcodeError::Shape(format!("loading state must be {p} x {l}")));
        }
        if s.iter().any(|&x| x > 1) {
            return Err(BarcodeError::InvalidParameter("switches must be 0/1".into()));
        }
        if gamma.iter().chain(nu.iter()).any(|g| !(*g > 0.0) || !g.is_finite()) {
            return Err(BarcodeError::InvalidParameter(
                "loading strengths and rates must be positive".into(),
            ));
        }
        if !(psi > 0.0 && psi < 1.0) && psi != 1.0 {
            return Err(BarcodeError::InvalidParameter(format!("psi = {psi} outside (0, 1]")));
        }
        Ok(LoadingState { p, l, s, gamma, nu, psi })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn factors(&self) -> usize {
        self.l
    }

    pub fn s(&self) -> &[u8] {
        &self.s
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn psi(&self) -> f64 {
        self.psi
    }

    /// Active loading `s_jl * gamma_jl`.
    #[inline]
    pub fn lambda(&self, j: usize, k: usize) -> f64 {
        let e = j * self.l + k;
        if self.s[e] == 1 {
            self.gamma[e]
        } else {
            0.0
        }
    }
}

fn default_factors() -> usize {
    7
}
fn half() -> f64 {
    0.5
}
fn one() -> f64 {
    1.0
}
fn ten() -> f64 {
    10.0
}
fn two() -> usize {
    2
}

/// Model hyperparameters. Unknown keys are rejected when deserializing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    /// Number of factors including the reference.
    #[serde(default = "default_factors")]
    pub factors: usize,
    #[serde(default = "half")]
    pub a_gamma: f64,
    #[serde(default = "half")]
    pub a_nu: f64,
    #[serde(default = "half")]
    pub b_nu: f64,
    /// Dirichlet concentration of the normalized strengths.
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "ten")]
    pub psi_a: f64,
    #[serde(default = "ten")]
    pub psi_b: f64,
    /// Prior variance of the probit regression coefficients.
    #[serde(default = "ten")]
    pub sigma0_sq: f64,
    /// Rate of the Ga(1, tau0) pseudo-prior for switched-off loadings.
    #[serde(default = "one")]
    pub tau0: f64,
    /// Marginal variance of the spatial Gaussian process.
    #[serde(default = "one")]
    pub gp_variance: f64,
    #[serde(default = "two")]
    pub block_size: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            factors: 7,
            a_gamma: 0.5,
            a_nu: 0.5,
            b_nu: 0.5,
            alpha: 1.0,
            psi_a: 10.0,
            psi_b: 10.0,
            sigma0_sq: 10.0,
            tau0: 1.0,
            gp_variance: 1.0,
            block_size: 2,
        }
    }
}

impl HyperParams {
    pub fn with_factors(factors: usize) -> Self {
        HyperParams {
            factors,
            ..HyperParams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.factors < 2 {
            return Err(BarcodeError::InvalidParameter(
                "at least two factors (reference plus one) are required".into(),
            ));
        }
        if self.block_size < 1 {
            return Err(BarcodeError::InvalidParameter("block_size must be >= 1".into()));
        }
        let named = [
            ("a_gamma", self.a_gamma),
            ("a_nu", self.a_nu),
            ("b_nu", self.b_nu),
            ("alpha", self.alpha),
            ("psi_a", self.psi_a),
            ("psi_b", self.psi_b),
            ("sigma0_sq", self.sigma0_sq),
            ("tau0", self.tau0),
            ("gp_variance", self.gp_variance),
        ];
        for (name, v) in named {
            if !(v > 0.0 && v.is_finite()) {
                return Err(BarcodeError::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Design matrix with an intercept in column 0 and standardized covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateMatrix {
    n: usize,
    q: usize,
    x: Vec<f64>,
    names: Vec<String>,
}

impl CovariateMatrix {
    /// Intercept-only design.
    pub fn intercept(n: usize) -> Self {
        CovariateMatrix {
            n,
            q: 1,
            x: vec![1.0; n],
            names: vec!["intercept".into()],
        }
    }

    /// Standardizes each raw column to mean 0 and sd 1 (population sd) and
    /// prepends the intercept. A constant column cannot be standardized.
    pub fn from_columns(n: usize, names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(BarcodeError::Shape("covariate names and columns differ".into()));
        }
        let q = columns.len() + 1;
        let mut x = vec![0.0; n * q];
        for i in 0..n {
            x[i * q] = 1.0;
        }
        for (c, (name, col)) in names.iter().zip(columns.iter()).enumerate() {
            if col.len() != n {
                return Err(BarcodeError::Shape(format!(
                    "covariate {name} has {} values for {n} samples",
                    col.len()
                )));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(BarcodeError::data(None, format!("non-finite value in covariate {name}")));
            }
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            if !(sd > 1e-12 * mean.abs().max(1.0)) {
                return Err(BarcodeError::data(
                    None,
                    format!("degenerate covariate {name}: zero variance"),
                ));
            }
            for i in 0..n {
                x[i * q + c + 1] = (col[i] - mean) / sd;
            }
        }
        let mut all_names = vec!["intercept".to_string()];
        all_names.extend(names);
        Ok(CovariateMatrix {
            n,
            q,
            x,
            names: all_names,
        })
    }

    /// Uses `x` as given (row-major, intercept already in column 0).
    pub fn from_raw(n: usize, q: usize, x: Vec<f64>, names: Vec<String>) -> Result<Self> {
        if x.len() != n * q || names.len() != q || q == 0 {
            return Err(BarcodeError::Shape("covariate matrix dimensions".into()));
        }
        if (0..n).any(|i| x[i * q] != 1.0) {
            return Err(BarcodeError::InvalidParameter(
                "first covariate column must be the intercept".into(),
            ));
        }
        Ok(CovariateMatrix { n, q, x, names })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.q..(i + 1) * self.q]
    }

    pub fn values(&self) -> &[f64] {
        &self.x
    }

    pub fn select_rows(&self, rows: &[usize]) -> CovariateMatrix {
        let mut x = Vec::with_capacity(rows.len() * self.q);
        for &i in rows {
            x.extend_from_slice(self.row(i));
        }
        CovariateMatrix {
            n: rows.len(),
            q: self.q,
            x,
            names: self.names.clone(),
        }
    }
}

/// Dense expected-count matrix `(C o Phi)(S o Gamma)^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanMatrix {
    pub n: usize,
    pub p: usize,
    pub values: Vec<f64>,
}

impl MeanMatrix {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.p + j]
    }
}

pub fn compute_mean(factors: &FactorState, loadings: &LoadingState) -> Result<MeanMatrix> {
    if factors.factors() != loadings.factors() {
        return Err(BarcodeError::Shape(format!(
            "factor state has {} factors, loadings {}",
            factors.factors(),
            loadings.factors()
        )));
    }
    let (n, p, l) = (factors.n(), loadings.p(), factors.factors());
    let theta = factors.theta_matrix();
    let mut values = vec![0.0; n * p];
    for i in 0..n {
        for j in 0..p {
            values[i * p + j] = (0..l)
                .map(|k| theta[i * l + k] * loadings.lambda(j, k))
                .sum();
        }
    }
    Ok(MeanMatrix { n, p, values })
}

/// Poisson log-likelihood of `y` under mean `mean`. Returns exactly
/// `f64::NEG_INFINITY` when a positive count meets a zero mean.
pub fn log_likelihood(y: &CountMatrix, mean: &MeanMatrix) -> Result<f64> {
    if y.n() != mean.n || y.p() != mean.p {
        return Err(BarcodeError::Shape("count and mean matrices differ in shape".into()));
    }
    let mut ll = -mean.values.iter().sum::<f64>();
    for (i, j, v) in y.iter() {
        let mu = mean.get(i, j);
        if mu <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        ll += v as f64 * mu.ln();
    }
    Ok(ll - y.log_factorial_sum())
}

/// Marginal covariance of one sample's counts:
/// `diag(Lambda E) + Lambda V Lambda^T` with `Lambda = S o Gamma` (p x L).
pub fn marginal_covariance(
    loadings: &LoadingState,
    mean_theta: &[f64],
    cov_theta: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let (p, l) = (loadings.p(), loadings.factors());
    if mean_theta.len() != l || cov_theta.nrows() != l || cov_theta.ncols() != l {
        return Err(BarcodeError::Shape("moment dimensions must equal the factor count".into()));
    }
    let asym = (cov_theta - cov_theta.transpose()).abs().max();
    if asym > 1e-10 {
        return Err(BarcodeError::InvalidParameter(format!(
            "factor covariance is asymmetric (max deviation {asym:e})"
        )));
    }
    let lambda = DMatrix::from_fn(p, l, |j, k| loadings.lambda(j, k));
    let e = nalgebra::DVector::from_column_slice(mean_theta);
    let marginal_mean = &lambda * e;
    let mut out = &lambda * cov_theta * lambda.transpose();
    for j in 0..p {
        out[(j, j)] += marginal_mean[j];
    }
    // symmetrize away rounding
    let out = (&out + out.transpose()) * 0.5;
    Ok(out)
}
