//! Warm start from a Poisson (generalized KL) nonnegative factorization.

use crate::data_model::CountMatrix;
use crate::distributions::RngStream;
use crate::error::{BarcodeError, Result};

#[derive(Debug, Clone)]
pub struct WarmStart {
    /// n x L strengths; every column sums to one and column 0 is `1/n`.
    pub phi: Vec<f64>,
    /// p x L loadings.
    pub gamma: Vec<f64>,
    /// Generalized KL divergence after each iteration.
    pub objective: Vec<f64>,
}

const FLOOR: f64 = 1e-12;

/// Generalized KL divergence `sum y ln(y / mu) - y + mu` of `Y` from `W H^T`.
pub fn kl_divergence(y: &CountMatrix, w: &[f64], h: &[f64], l: usize) -> f64 {
    let mut kl = 0.0;
    for i in 0..y.n() {
        let wr = &w[i * l..(i + 1) * l];
        for e in y.row_range(i) {
            let j = y.entry_col(e);
            let hr = &h[j * l..(j + 1) * l];
            let mu: f64 = wr.iter().zip(hr).map(|(a, b)| a * b).sum();
            let v = y.entry_value(e) as f64;
            kl += if mu > 0.0 { v * (v / mu).ln() - v } else { f64::INFINITY };
        }
    }
    let mut wsum = vec![0.0; l];
    let mut hsum = vec![0.0; l];
    for i in 0..y.n() {
        for k in 0..l {
            wsum[k] += w[i * l + k];
        }
    }
    for j in 0..y.p() {
        for k in 0..l {
            hsum[k] += h[j * l + k];
        }
    }
    kl + wsum.iter().zip(&hsum).map(|(a, b)| a * b).sum::<f64>()
}

/// Multiplicative updates for `Y ~ W H^T` under Poisson loss with the first
/// column of `W` held constant (the reference factor). Afterwards every
/// column of `W` is scaled to sum to one and the scale moves into `H`.
pub fn warm_start(y: &CountMatrix, l: usize, iterations: usize, rng: &mut RngStream) -> Result<WarmStart> {
    if l < 2 {
        return Err(BarcodeError::InvalidParameter("warm start needs at least two factors".into()));
    }
    if y.nnz() == 0 {
        return Err(BarcodeError::InvalidParameter("cannot factorize an all-zero count matrix".into()));
    }
    let (n, p) = (y.n(), y.p());
    let scale = (y.total() as f64 / (n * p * l) as f64).sqrt();
    let mut w: Vec<f64> = (0..n * l)
        .map(|e| if e % l == 0 { scale } else { scale * (0.5 + rng.open01()) })
        .collect();
    let mut h: Vec<f64> = (0..p * l).map(|_| scale * (0.5 + rng.open01())).collect();

    let mut ratio = vec![0.0; y.nnz()];
    let mut num = vec![0.0; n.max(p) * l];
    let mut den = vec![0.0; l];
    let mut objective = Vec::with_capacity(iterations);

    for _ in 0..iterations {
        // H update
        fill_ratio(y, &w, &h, l, &mut ratio);
        num[..p * l].iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            for e in y.row_range(i) {
                let j = y.entry_col(e);
                for k in 0..l {
                    num[j * l + k] += w[i * l + k] * ratio[e];
                }
            }
        }
        den.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            for k in 0..l {
                den[k] += w[i * l + k];
            }
        }
        for j in 0..p {
            for k in 0..l {
                if den[k] > 0.0 {
                    h[j * l + k] *= num[j * l + k] / den[k];
                }
            }
        }

        // W update, reference column fixed
        fill_ratio(y, &w, &h, l, &mut ratio);
        den.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..p {
            for k in 0..l {
                den[k] += h[j * l + k];
            }
        }
        for i in 0..n {
            let mut acc = vec![0.0; l];
            for e in y.row_range(i) {
                let j = y.entry_col(e);
                for k in 1..l {
                    acc[k] += h[j * l + k] * ratio[e];
                }
            }
            for k in 1..l {
                if den[k] > 0.0 {
                    w[i * l + k] *= acc[k] / den[k];
                }
            }
        }
        objective.push(kl_divergence(y, &w, &h, l));
    }

    let mut phi = vec![0.0; n * l];
    let mut gamma = vec![0.0; p * l];
    for k in 0..l {
        let col_max = (0..n).map(|i| w[i * l + k]).fold(0.0, f64::max).max(FLOOR);
        let mut sum = 0.0;
        for i in 0..n {
            let v = w[i * l + k].max(FLOOR * col_max);
            phi[i * l + k] = v;
            sum += v;
        }
        for i in 0..n {
            phi[i * l + k] /= sum;
        }
        let h_max = (0..p).map(|j| h[j * l + k]).fold(0.0, f64::max).max(FLOOR);
        for j in 0..p {
            gamma[j * l + k] = (h[j * l + k].max(FLOOR * h_max) * sum).max(f64::MIN_POSITIVE);
        }
    }
    for i in 0..n {
        phi[i * l] = 1.0 / n as f64;
    }
    Ok(WarmStart { phi, gamma, objective })
}

fn fill_ratio(y: &CountMatrix, w: &[f64], h: &[f64], l: usize, ratio: &mut [f64]) {
    for i in 0..y.n() {
        let wr = &w[i * l..(i + 1) * l];
        for e in y.row_range(i) {
            let j = y.entry_col(e);
            let hr = &h[j * l..(j + 1) * l];
            let mu: f64 = wr.iter().zip(hr).map(|(a, b)| a * b).sum();
            ratio[e] = if mu > 0.0 { y.entry_value(e) as f64 / mu } else { 0.0 };
        }
    }
}
