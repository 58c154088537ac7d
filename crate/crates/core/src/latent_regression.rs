//! Probit regression of factor presence on covariates, with an exponential
//! Gaussian-process intercept per site.
//!
//! Presence of factor `l > 0` in sample `i` has prior probability
//! `Phi_N(x_i' beta_l + xi_{l, site(i)})`. Given the switches, the latent
//! probit utilities are truncated normals and `(beta_l, xi_l)` is Gaussian.
//! The joint posterior precision of `(beta_l, xi_l)` does not depend on the
//! utilities, so it is factored once per run and every draw costs two
//! triangular solves.

use nalgebra::{DMatrix, DVector};

use crate::data_model::CovariateMatrix;
use crate::distributions::{truncated_normal_draw, RngStream, Side};
use crate::error::{BarcodeError, Result};

/// Site coordinates (projected units) and their pairwise distances.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteGeometry {
    coords: Vec<[f64; 2]>,
    dist: DMatrix<f64>,
}

impl SiteGeometry {
    pub fn new(coords: Vec<[f64; 2]>) -> Result<Self> {
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(BarcodeError::InvalidParameter("non-finite site coordinate".into()));
        }
        let m = coords.len();
        let dist = DMatrix::from_fn(m, m, |a, b| {
            let dx = coords[a][0] - coords[b][0];
            let dy = coords[a][1] - coords[b][1];
            (dx * dx + dy * dy).sqrt()
        });
        Ok(SiteGeometry { coords, dist })
    }

    pub fn m(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn dist(&self) -> &DMatrix<f64> {
        &self.dist
    }

    pub fn subset(&self, sites: &[usize]) -> Result<SiteGeometry> {
        SiteGeometry::new(sites.iter().map(|&k| self.coords[k]).collect())
    }

    /// Off-diagonal distances `d_ab`, `a < b`.
    pub fn pair_distances(&self) -> Vec<f64> {
        let m = self.m();
        let mut out = Vec::with_capacity(m * m.saturating_sub(1) / 2);
        for a in 0..m {
            for b in a + 1..m {
                out.push(self.dist[(a, b)]);
            }
        }
        out
    }
}

/// Quantile with linear interpolation between order statistics.
pub(crate) fn quantile(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Exponential covariance `variance * exp(-d / lengthscale)` over the sites.
#[derive(Debug, Clone)]
pub struct GPKernel {
    pub lengthscale: f64,
    pub variance: f64,
    pub k: DMatrix<f64>,
    /// Lower Cholesky factor of `k` (with any jitter applied).
    pub chol: DMatrix<f64>,
    pub jitter: f64,
}

/// Correlation at which the effective range is read off: `exp(-3) ~ 0.05`.
pub const EFFECTIVE_RANGE_FACTOR: f64 = 3.0;

pub fn build_kernel(geometry: &SiteGeometry, variance: f64) -> Result<GPKernel> {
    if !(variance > 0.0) {
        return Err(BarcodeError::InvalidParameter("kernel variance must be positive".into()));
    }
    let m = geometry.m();
    if m == 0 {
        return Err(BarcodeError::InvalidParameter("no sites".into()));
    }
    let lengthscale = if m == 1 {
        1.0
    } else {
        let mut d = geometry.pair_distances();
        d.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        let mut q05 = quantile(&d, 0.05);
        if q05 <= 0.0 {
            q05 = d.iter().copied().find(|&x| x > 0.0).ok_or_else(|| {
                BarcodeError::InvalidParameter("all sites share one location".into())
            })?;
        }
        q05 / EFFECTIVE_RANGE_FACTOR
    };
    kernel_with_lengthscale(geometry, variance, lengthscale)
}

pub fn kernel_with_lengthscale(
    geometry: &SiteGeometry,
    variance: f64,
    lengthscale: f64,
) -> Result<GPKernel> {
    let m = geometry.m();
    let k = DMatrix::from_fn(m, m, |a, b| {
        variance * (-geometry.dist()[(a, b)] / lengthscale).exp()
    });
    for jitter in [1e-8, 1e-6] {
        let mut kj = k.clone();
        for a in 0..m {
            kj[(a, a)] += jitter * variance;
        }
        if let Some(ch) = kj.cholesky() {
            return Ok(GPKernel {
                lengthscale,
                variance,
                k,
                chol: ch.l(),
                jitter: jitter * variance,
            });
        }
    }
    Err(BarcodeError::Numerical("kernel matrix is not positive definite".into()))
}

/// Probit coefficients `B` (L x q, row 0 unused), spatial effects `Xi`
/// (L x m, row 0 unused) and latent utilities (n x L, column 0 unused).
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionState {
    pub n: usize,
    pub l: usize,
    pub q: usize,
    pub m: usize,
    pub beta: Vec<f64>,
    pub xi: Vec<f64>,
    pub zaug: Vec<f64>,
}

impl RegressionState {
    pub fn zeros(n: usize, l: usize, q: usize, m: usize) -> Self {
        RegressionState {
            n,
            l,
            q,
            m,
            beta: vec![0.0; l * q],
            xi: vec![0.0; l * m],
            zaug: vec![0.0; n * l],
        }
    }

    pub fn beta_row(&self, k: usize) -> &[f64] {
        &self.beta[k * self.q..(k + 1) * self.q]
    }

    #[inline]
    pub fn xi(&self, k: usize, site: usize) -> f64 {
        if self.m == 0 {
            0.0
        } else {
            self.xi[k * self.m + site]
        }
    }
}

/// Precomputed Gaussian conditional for `(beta_l, xi_l)` given utilities.
#[derive(Debug, Clone)]
pub struct ProbitLayer {
    x: CovariateMatrix,
    site_of: Vec<usize>,
    q: usize,
    m: usize,
    /// Lower Cholesky factor of the posterior precision.
    prec_lower: DMatrix<f64>,
    prec_upper: DMatrix<f64>,
}

impl ProbitLayer {
    /// Builds the layer. `spatial = None` drops the site effects entirely
    /// (pure Bayesian probit on the covariates).
    pub fn new(
        x: &CovariateMatrix,
        site_of: &[usize],
        spatial: Option<&GPKernel>,
        sigma0_sq: f64,
    ) -> Result<Self> {
        let (n, q) = (x.n(), x.q());
        if site_of.len() != n {
            return Err(BarcodeError::Shape("site map and covariates differ in length".into()));
        }
        let m = spatial.map_or(0, |k| k.k.nrows());
        if site_of.iter().any(|&s| spatial.is_some() && s >= m) {
            return Err(BarcodeError::Shape("sample refers to a site outside the kernel".into()));
        }
        let prec = Self::precision(x, site_of, spatial, sigma0_sq)?;
        let mut result = None;
        for extra in [0.0, 1e-8] {
            let mut pj = prec.clone();
            for a in 0..pj.nrows() {
                pj[(a, a)] += extra;
            }
            if let Some(ch) = pj.cholesky() {
                result = Some(ch.l());
                break;
            }
        }
        let prec_lower = result.ok_or_else(|| {
            BarcodeError::Numerical("probit posterior precision is not positive definite".into())
        })?;
        let prec_upper = prec_lower.transpose();
        Ok(ProbitLayer {
            x: x.clone(),
            site_of: site_of.to_vec(),
            q,
            m,
            prec_lower,
            prec_upper,
        })
    }

    /// Posterior precision `blockdiag(I / sigma0^2, K^-1) + [X A]^T [X A]`.
    pub fn precision(
        x: &CovariateMatrix,
        site_of: &[usize],
        spatial: Option<&GPKernel>,
        sigma0_sq: f64,
    ) -> Result<DMatrix<f64>> {
        let (n, q) = (x.n(), x.q());
        let m = spatial.map_or(0, |k| k.k.nrows());
        let d = q + m;
        let mut prec = DMatrix::<f64>::zeros(d, d);
        for i in 0..n {
            let xi = x.row(i);
            for a in 0..q {
                for b in 0..q {
                    prec[(a, b)] += xi[a] * xi[b];
                }
            }
            if m > 0 {
                let s = q + site_of[i];
                for a in 0..q {
                    prec[(a, s)] += xi[a];
                    prec[(s, a)] += xi[a];
                }
                prec[(s, s)] += 1.0;
            }
        }
        for a in 0..q {
            prec[(a, a)] += 1.0 / sigma0_sq;
        }
        if let Some(kernel) = spatial {
            let mut kj = kernel.k.clone();
            for a in 0..m {
                kj[(a, a)] += kernel.jitter;
            }
            let kinv = kj
                .cholesky()
                .ok_or_else(|| BarcodeError::Numerical("kernel factorization failed".into()))?
                .inverse();
            for a in 0..m {
                for b in 0..m {
                    prec[(q + a, q + b)] += kinv[(a, b)];
                }
            }
        }
        Ok(prec)
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn covariates(&self) -> &CovariateMatrix {
        &self.x
    }

    /// `X^T z` stacked over `A^T z`.
    pub fn rhs(&self, z: &[f64]) -> DVector<f64> {
        let mut r = DVector::zeros(self.q + self.m);
        for (i, &zi) in z.iter().enumerate() {
            let xi = self.x.row(i);
            for a in 0..self.q {
                r[a] += xi[a] * zi;
            }
            if self.m > 0 {
                r[self.q + self.site_of[i]] += zi;
            }
        }
        r
    }

    /// Posterior mean given utilities `z`.
    pub fn posterior_mean(&self, z: &[f64]) -> DVector<f64> {
        let mut v = self.rhs(z);
        self.prec_lower.solve_lower_triangular_mut(&mut v);
        self.prec_upper.solve_upper_triangular_mut(&mut v);
        v
    }

    /// One draw of `(beta, xi)` stacked, given utilities `z`.
    pub fn draw(&self, z: &[f64], rng: &mut RngStream) -> DVector<f64> {
        let mean = self.posterior_mean(z);
        let mut eps = DVector::from_fn(self.q + self.m, |_, _| rng.std_normal());
        self.prec_upper.solve_upper_triangular_mut(&mut eps);
        mean + eps
    }

    #[inline]
    pub fn linear_predictor(&self, state: &RegressionState, i: usize, k: usize) -> f64 {
        let b = state.beta_row(k);
        let xi = self.x.row(i);
        let mut eta: f64 = b.iter().zip(xi).map(|(a, c)| a * c).sum();
        if self.m > 0 {
            eta += state.xi(k, self.site_of[i]);
        }
        eta
    }
}

/// One probit-layer update for factors `1..L`: redraw the utilities given
/// the switches, then draw `(beta_l, xi_l)` jointly.
pub fn update_probit_layer(
    c: &[u8],
    layer: &ProbitLayer,
    state: &mut RegressionState,
    rng: &mut RngStream,
) {
    let (n, l) = (state.n, state.l);
    let mut z = vec![0.0; n];
    for k in 1..l {
        for (i, zi) in z.iter_mut().enumerate() {
            let eta = layer.linear_predictor(state, i, k);
            let side = if c[i * l + k] == 1 {
                Side::AboveZero
            } else {
                Side::BelowZero
            };
            *zi = truncated_normal_draw(eta, side, rng);
            state.zaug[i * l + k] = *zi;
        }
        let draw = layer.draw(&z, rng);
        state.beta[k * state.q..(k + 1) * state.q].copy_from_slice(&draw.as_slice()[..state.q]);
        if state.m > 0 {
            state.xi[k * state.m..(k + 1) * state.m].copy_from_slice(&draw.as_slice()[state.q..]);
        }
    }
}
