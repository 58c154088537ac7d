//! Summaries of a posterior archive: convergence diagnostics, barcode
//! clusters, regions of common profile, fit ratios, label alignment and
//! cross-validated prediction.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::archive::PosteriorArchive;
use crate::data_model::{CountMatrix, CovariateMatrix, HyperParams};
use crate::distributions::{norm_cdf, RngStream};
use crate::error::{BarcodeError, Result};
use crate::gibbs::{fit, SweepConfig};
use crate::latent_regression::SiteGeometry;

/// Potential scale reduction factor of `chains`.
///
/// With `W` the mean within-chain variance and `B/n` the variance of the
/// chain means, this returns `sqrt(1 + (B/n) / W)`. Identical chains give
/// exactly 1. `Ok(None)` marks an undefined value (every chain constant).
pub fn psrf(chains: &[Vec<f64>]) -> Result<Option<f64>> {
    if chains.len() < 2 {
        return Err(BarcodeError::InvalidParameter("PSRF needs at least two chains".into()));
    }
    let n = chains[0].len();
    if n < 10 || chains.iter().any(|c| c.len() != n) {
        return Err(BarcodeError::InvalidParameter(
            "PSRF needs chains of equal length, at least 10".into(),
        ));
    }
    let m = chains.len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / n as f64).collect();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n as f64 - 1.0))
        .sum::<f64>()
        / m;
    let grand = means.iter().sum::<f64>() / m;
    let b_over_n = means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>() / (m - 1.0);
    if !(w > 0.0) {
        return Ok(None);
    }
    Ok(Some((1.0 + b_over_n / w).sqrt()))
}

/// One row of the diagnostics table: PSRF of a parameter group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsrfRow {
    pub group: String,
    pub n_params: usize,
    pub n_undefined: usize,
    pub q025: Option<f64>,
    pub median: Option<f64>,
    pub q975: Option<f64>,
}

/// PSRF for the log-likelihood, `psi`, `nu`, `Gamma`, `Phi`, `B` and `Xi`,
/// with 2.5 / 50 / 97.5 % quantiles across the elements of each group.
/// The log-likelihood uses the post-burn-in part of the trace.
pub fn psrf_table(archive: &PosteriorArchive) -> Result<Vec<PsrfRow>> {
    let d = archive.dims;
    let burn = archive.config.n_burnin;
    let ll: Vec<Vec<f64>> = archive
        .chains
        .iter()
        .map(|c| c.loglik_trace[burn.min(c.loglik_trace.len())..].to_vec())
        .collect();
    let mut rows = vec![group_row("loglik", vec![psrf(&ll)?])];

    let elementwise = |name: &str, len: usize, skip: &dyn Fn(usize) -> bool, get: &dyn Fn(&crate::archive::Draw, usize) -> f64| -> Result<PsrfRow> {
        let mut values = Vec::with_capacity(len);
        for e in 0..len {
            if skip(e) {
                continue;
            }
            let traces: Vec<Vec<f64>> = archive
                .chains
                .iter()
                .map(|c| c.draws.iter().map(|dr| get(dr, e)).collect())
                .collect();
            values.push(psrf(&traces)?);
        }
        Ok(group_row(name, values))
    };
    let none = |_: usize| false;
    rows.push(elementwise("psi", 1, &none, &|dr, _| dr.psi)?);
    rows.push(elementwise("nu", d.l, &none, &|dr, e| dr.nu[e])?);
    rows.push(elementwise("Gamma", d.p * d.l, &none, &|dr, e| dr.gamma[e])?);
    rows.push(elementwise("Phi", d.n * d.l, &|e| e % d.l == 0, &|dr, e| dr.phi[e])?);
    if d.q > 0 {
        rows.push(elementwise("B", d.l * d.q, &|e| e < d.q, &|dr, e| dr.beta[e])?);
    }
    if d.m > 0 {
        rows.push(elementwise("Xi", d.l * d.m, &|e| e < d.m, &|dr, e| dr.xi[e])?);
    }
    Ok(rows)
}

fn group_row(group: &str, values: Vec<Option<f64>>) -> PsrfRow {
    let mut defined: Vec<f64> = values.iter().filter_map(|v| *v).collect();
    defined.sort_by(f64::total_cmp);
    let q = |prob: f64| {
        if defined.is_empty() {
            None
        } else {
            Some(crate::latent_regression::quantile(&defined, prob))
        }
    };
    PsrfRow {
        group: group.to_string(),
        n_params: values.len(),
        n_undefined: values.len() - defined.len(),
        q025: q(0.025),
        median: q(0.5),
        q975: q(0.975),
    }
}

/// Species that share a barcode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Cluster {
    pub barcode: Vec<u8>,
    pub members: Vec<usize>,
    /// Exactly one non-reference factor is active.
    pub specialist: bool,
    /// Only the reference factor is active.
    pub generalist: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterReport {
    /// Posterior-median `S` row of every species.
    pub barcodes: Vec<Vec<u8>>,
    /// Cluster index of every species.
    pub labels: Vec<usize>,
    /// Occupied clusters, largest first (ties by barcode).
    pub clusters: Vec<Cluster>,
}

/// Elementwise posterior median of a binary quantity given its mean.
#[inline]
fn median_switch(mean: f64) -> u8 {
    u8::from(mean > 0.5)
}

/// Groups species by the posterior median of their `S` rows.
pub fn barcode_clusters(archive: &PosteriorArchive) -> Result<ClusterReport> {
    if archive.n_draws() == 0 {
        return Err(BarcodeError::InvalidParameter("archive holds no draws".into()));
    }
    let (p, l) = (archive.dims.p, archive.dims.l);
    let mean_s = archive.mean_s();
    let barcodes: Vec<Vec<u8>> = (0..p)
        .map(|j| mean_s[j * l..(j + 1) * l].iter().map(|&v| median_switch(v)).collect())
        .collect();
    Ok(cluster_barcodes(barcodes))
}

/// Clusters explicit barcodes (column 0 is the reference factor).
pub fn cluster_barcodes(barcodes: Vec<Vec<u8>>) -> ClusterReport {
    let mut groups: BTreeMap<Vec<u8>, Vec<usize>> = BTreeMap::new();
    for (j, b) in barcodes.iter().enumerate() {
        groups.entry(b.clone()).or_default().push(j);
    }
    let mut clusters: Vec<Cluster> = groups
        .into_iter()
        .map(|(barcode, members)| {
            let others = barcode.iter().skip(1).filter(|&&v| v == 1).count();
            let reference = barcode.first().copied() == Some(1);
            Cluster {
                specialist: others == 1,
                generalist: reference && others == 0,
                barcode,
                members,
            }
        })
        .collect();
    clusters.sort_by(|a, b| b.members.len().cmp(&a.members.len()).then(a.barcode.cmp(&b.barcode)));
    let mut labels = vec![0; barcodes.len()];
    for (c, cl) in clusters.iter().enumerate() {
        for &j in &cl.members {
            labels[j] = c;
        }
    }
    ClusterReport {
        barcodes,
        labels,
        clusters,
    }
}

/// Dominant factor of every site: the argmax over factors of the posterior
/// mean strength `c_il phi_il`, averaged over the site's samples. Ties go to
/// the lowest factor index; sites without samples get `None`.
pub fn regions_of_common_profile(archive: &PosteriorArchive) -> Vec<Option<usize>> {
    let (n, l) = (archive.dims.n, archive.dims.l);
    dominant_factors(&archive.mean_theta(), n, l, &archive.site_of)
}

/// [`regions_of_common_profile`] on an explicit n x L strength table.
pub fn dominant_factors(theta: &[f64], n: usize, l: usize, site_of: &[usize]) -> Vec<Option<usize>> {
    let m = site_of.iter().map(|&k| k + 1).max().unwrap_or(0);
    let mut sum = vec![0.0; m * l];
    let mut count = vec![0usize; m];
    for i in 0..n {
        let k = site_of[i];
        count[k] += 1;
        for f in 0..l {
            sum[k * l + f] += theta[i * l + f];
        }
    }
    (0..m)
        .map(|k| {
            if count[k] == 0 {
                return None;
            }
            let row = &sum[k * l..(k + 1) * l];
            let mut best = 0;
            for f in 1..l {
                if row[f] > row[best] {
                    best = f;
                }
            }
            Some(best)
        })
        .collect()
}

/// Posterior-predictive marginal moments of one species relative to the
/// observed ones. `None` marks an undefined ratio (zero denominator).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpeciesFit {
    pub expectation_ratio: Option<f64>,
    pub variance_ratio: Option<f64>,
}

/// For every species, the marginal mean and variance of a predicted count
/// over a uniformly chosen sample and posterior draw, divided by the
/// empirical mean and (population) variance of the observed column.
///
/// The predicted count is Poisson given `mu_ij`, so by the law of total
/// variance its marginal variance is `E[mu] + Var[mu]` over `(i, draw)`.
pub fn variance_explained(y: &CountMatrix, archive: &PosteriorArchive) -> Result<Vec<SpeciesFit>> {
    let d = archive.dims;
    if y.n() != d.n || y.p() != d.p {
        return Err(BarcodeError::Shape("count matrix does not match archive".into()));
    }
    if d.n < 2 {
        return Err(BarcodeError::InvalidParameter("need at least two samples".into()));
    }
    let draws = archive.n_draws();
    if draws == 0 {
        return Err(BarcodeError::InvalidParameter("archive holds no draws".into()));
    }
    let (n, p, l) = (d.n, d.p, d.l);
    let mut first = vec![0.0; p];
    let mut second = vec![0.0; p];
    let mut theta_bar = vec![0.0; l];
    let mut gram = vec![0.0; l * l];
    let mut lam = vec![0.0; l];
    for dr in archive.draws() {
        theta_bar.iter_mut().for_each(|v| *v = 0.0);
        gram.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            for a in 0..l {
                let ta = dr.theta(l, i, a);
                if ta == 0.0 {
                    continue;
                }
                theta_bar[a] += ta;
                for b in 0..l {
                    gram[a * l + b] += ta * dr.theta(l, i, b);
                }
            }
        }
        for j in 0..p {
            for (k, v) in lam.iter_mut().enumerate() {
                *v = dr.lambda(l, j, k);
            }
            let mean: f64 = (0..l).map(|k| theta_bar[k] * lam[k]).sum::<f64>() / n as f64;
            let mut sq = 0.0;
            for a in 0..l {
                for b in 0..l {
                    sq += lam[a] * gram[a * l + b] * lam[b];
                }
            }
            first[j] += mean;
            second[j] += sq / n as f64;
        }
    }
    let mut obs_sum = vec![0.0; p];
    let mut obs_sq = vec![0.0; p];
    for (_, j, v) in y.iter() {
        obs_sum[j] += v as f64;
        obs_sq[j] += (v as f64).powi(2);
    }
    Ok((0..p)
        .map(|j| {
            let e_mu = first[j] / draws as f64;
            let e_mu2 = second[j] / draws as f64;
            let pred_var = e_mu + (e_mu2 - e_mu * e_mu).max(0.0);
            let obs_mean = obs_sum[j] / n as f64;
            let obs_var = (obs_sq[j] / n as f64 - obs_mean * obs_mean).max(0.0);
            SpeciesFit {
                expectation_ratio: (obs_mean > 0.0).then(|| e_mu / obs_mean),
                variance_ratio: (obs_var > 1e-12 * obs_mean.max(1.0)).then(|| pred_var / obs_var),
            }
        })
        .collect())
}

/// Matches the columns of `est` to those of `reference` (both `rows x cols`,
/// row-major) by maximizing total agreement `sum_r 1 - |est - ref|`.
/// Column 0 (the reference factor) always maps to itself.
///
/// Returns `perm` with `perm[k]` the column of `est` matched to column `k`
/// of `reference`.
pub fn align_columns(est: &[f64], reference: &[f64], rows: usize, cols: usize) -> Result<Vec<usize>> {
    if est.len() != rows * cols || reference.len() != rows * cols {
        return Err(BarcodeError::Shape(format!("both matrices must be {rows} x {cols}")));
    }
    if cols <= 1 {
        return Ok((0..cols).collect());
    }
    let k = cols - 1;
    // cost[a][b]: reference column a+1 matched with estimate column b+1
    let mut cost = vec![0.0; k * k];
    for a in 0..k {
        for b in 0..k {
            cost[a * k + b] = (0..rows)
                .map(|r| (est[r * cols + b + 1] - reference[r * cols + a + 1]).abs())
                .sum();
        }
    }
    let assign = hungarian(&cost, k);
    let mut perm = vec![0; cols];
    for a in 0..k {
        perm[a + 1] = assign[a] + 1;
    }
    Ok(perm)
}

/// Reorders the columns of a row-major `rows x cols` matrix by `perm`.
pub fn permute_columns<T: Copy>(values: &[T], rows: usize, cols: usize, perm: &[usize]) -> Vec<T> {
    let mut out = Vec::with_capacity(values.len());
    for r in 0..rows {
        for &c in perm {
            out.push(values[r * cols + c]);
        }
    }
    out
}

fn permute_rows<T: Copy>(values: &[T], cols: usize, perm: &[usize]) -> Vec<T> {
    perm.iter().flat_map(|&r| values[r * cols..(r + 1) * cols].iter().copied()).collect()
}

/// Relabels the factors of every chain to match chain 0, so that
/// per-element summaries across chains compare like with like. Each chain
/// is matched on its posterior means of `C` and `S` stacked.
pub fn align_chains(archive: &PosteriorArchive) -> Result<PosteriorArchive> {
    let d = archive.dims;
    let means = |chain: &crate::archive::ChainArchive| -> Vec<f64> {
        let k = chain.draws.len().max(1) as f64;
        let mut acc = vec![0.0; (d.n + d.p) * d.l];
        for dr in &chain.draws {
            for (a, &v) in acc.iter_mut().zip(dr.c.iter().chain(&dr.s)) {
                *a += v as f64;
            }
        }
        acc.iter().map(|v| v / k).collect()
    };
    let mut out = archive.clone();
    let Some(first) = archive.chains.first() else {
        return Ok(out);
    };
    let reference = means(first);
    for chain in out.chains.iter_mut().skip(1) {
        let perm = align_columns(&means(chain), &reference, d.n + d.p, d.l)?;
        for dr in chain.draws.iter_mut() {
            dr.c = permute_columns(&dr.c, d.n, d.l, &perm);
            dr.phi = permute_columns(&dr.phi, d.n, d.l, &perm);
            dr.s = permute_columns(&dr.s, d.p, d.l, &perm);
            dr.gamma = permute_columns(&dr.gamma, d.p, d.l, &perm);
            dr.nu = permute_columns(&dr.nu, 1, d.l, &perm);
            dr.beta = permute_rows(&dr.beta, d.q, &perm);
            dr.xi = permute_rows(&dr.xi, d.m, &perm);
        }
    }
    Ok(out)
}

/// Minimum-cost perfect matching on a square `k x k` cost matrix. Returns
/// the column assigned to each row.
fn hungarian(cost: &[f64], k: usize) -> Vec<usize> {
    let inf = f64::INFINITY;
    let mut u = vec![0.0; k + 1];
    let mut v = vec![0.0; k + 1];
    let mut matched = vec![0usize; k + 1]; // column -> row (1-based, 0 = free)
    let mut way = vec![0usize; k + 1];
    for row in 1..=k {
        matched[0] = row;
        let mut j0 = 0;
        let mut minv = vec![inf; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[j0] = true;
            let i0 = matched[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=k {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * k + j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=k {
                if used[j] {
                    u[matched[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched[j0] = matched[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; k];
    for j in 1..=k {
        assign[matched[j] - 1] = j - 1;
    }
    assign
}

/// Result of one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub rmse: f64,
    pub max_prediction: f64,
    /// Upper bound on any prediction: `max_j sum_l E[lambda_jl]`.
    pub bound: f64,
}

/// Stream id used to shuffle samples into folds.
pub const FOLD_STREAM: u64 = u64::MAX;

/// Assigns every sample to one of `folds` folds of near-equal size.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = RngStream::new(seed, FOLD_STREAM);
    for a in (1..n).rev() {
        let b = rng.index(a + 1);
        order.swap(a, b);
    }
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % folds;
    }
    fold
}

/// K-fold cross-validation holding out whole samples.
///
/// For a held-out sample the prediction averages, over posterior draws,
/// `sum_l p_il lambda_jl / n_l`, where `p_il` is the probit presence
/// probability (reference factor: 1), `n_l` the number of active training
/// samples of factor `l` (reference: all training samples, at least 1).
/// The spatial effect of a site without training samples is 0.
pub fn cv_predict(
    y: &CountMatrix,
    x: &CovariateMatrix,
    geometry: Option<&SiteGeometry>,
    hypers: &HyperParams,
    config: &SweepConfig,
    folds: usize,
    seed: u64,
) -> Result<Vec<FoldResult>> {
    if folds < 2 || folds > y.n() {
        return Err(BarcodeError::InvalidParameter(format!(
            "cannot split {} samples into {folds} folds",
            y.n()
        )));
    }
    let assignment = fold_assignment(y.n(), folds, seed);
    let dense = y.to_dense();
    let mut out = Vec::with_capacity(folds);
    for f in 0..folds {
        let train: Vec<usize> = (0..y.n()).filter(|&i| assignment[i] != f).collect();
        let test: Vec<usize> = (0..y.n()).filter(|&i| assignment[i] == f).collect();

        // compact the training sites
        let mut site_map: BTreeMap<usize, usize> = BTreeMap::new();
        for &i in &train {
            let next = site_map.len();
            site_map.entry(y.site_of()[i]).or_insert(next);
        }
        let mut sites_sorted: Vec<(usize, usize)> = site_map.iter().map(|(&a, &b)| (a, b)).collect();
        sites_sorted.sort_by_key(|&(_, new)| new);
        let train_sites: Vec<usize> = train.iter().map(|&i| site_map[&y.site_of()[i]]).collect();
        let y_train = y.select_rows(&train)?.with_sites(train_sites)?;
        let x_train = x.select_rows(&train);
        let geom_train = match geometry {
            Some(g) => Some(g.subset(&sites_sorted.iter().map(|&(old, _)| old).collect::<Vec<_>>())?),
            None => None,
        };
        let archive = fit(
            &y_train,
            &x_train,
            geom_train.as_ref(),
            hypers,
            config,
            seed.wrapping_add(f as u64 + 1),
        )?;

        let pred = predict_heldout(&archive, x, y.site_of(), &site_map, &test);
        let bound = prediction_bound(&archive);
        let mut sq = 0.0;
        let mut max_prediction: f64 = 0.0;
        for (t, &i) in test.iter().enumerate() {
            for j in 0..y.p() {
                let mu = pred[t * y.p() + j];
                if !mu.is_finite() {
                    return Err(BarcodeError::Numerical(format!(
                        "non-finite prediction for sample {i}, species {j}"
                    )));
                }
                max_prediction = max_prediction.max(mu);
                sq += (dense[i][j] as f64 - mu).powi(2);
            }
        }
        out.push(FoldResult {
            fold: f,
            n_train: train.len(),
            n_test: test.len(),
            rmse: (sq / (test.len() * y.p()) as f64).sqrt(),
            max_prediction,
            bound,
        });
    }
    Ok(out)
}

/// Posterior-predictive means for samples `rows` of `x` (row-major
/// `rows.len() x p`). `site_map` maps original site ids to the archive's
/// site indices.
pub fn predict_heldout(
    archive: &PosteriorArchive,
    x: &CovariateMatrix,
    site_of: &[usize],
    site_map: &BTreeMap<usize, usize>,
    rows: &[usize],
) -> Vec<f64> {
    let d = archive.dims;
    let (n, p, l, q, m) = (d.n, d.p, d.l, d.q, d.m);
    let mut out = vec![0.0; rows.len() * p];
    let draws = archive.n_draws();
    if draws == 0 {
        return out;
    }
    let mut weight = vec![0.0; l];
    for dr in archive.draws() {
        let mut active = vec![0usize; l];
        for i in 0..n {
            for (k, a) in active.iter_mut().enumerate() {
                *a += dr.c[i * l + k] as usize;
            }
        }
        for (t, &i) in rows.iter().enumerate() {
            let xi_site = site_map.get(&site_of[i]).copied().filter(|_| m > 0);
            weight[0] = 1.0 / n as f64;
            for k in 1..l {
                let mut eta: f64 = (0..q).map(|c| dr.beta[k * q + c] * x.row(i)[c]).sum();
                if let Some(s) = xi_site {
                    eta += dr.xi[k * m + s];
                }
                weight[k] = norm_cdf(eta) / active[k].max(1) as f64;
            }
            let row = &mut out[t * p..(t + 1) * p];
            for (j, v) in row.iter_mut().enumerate() {
                *v += (0..l).map(|k| weight[k] * dr.lambda(l, j, k)).sum::<f64>();
            }
        }
    }
    out.iter_mut().for_each(|v| *v /= draws as f64);
    out
}

fn prediction_bound(archive: &PosteriorArchive) -> f64 {
    let (p, l) = (archive.dims.p, archive.dims.l);
    let lam = archive.mean_lambda();
    (0..p)
        .map(|j| lam[j * l..(j + 1) * l].iter().sum::<f64>())
        .fold(0.0, f64::max)
}

/// Percentage of samples whose posterior-median switch is on, per factor.
pub fn factor_presence(archive: &PosteriorArchive) -> Vec<f64> {
    let (n, l) = (archive.dims.n, archive.dims.l);
    let mean_c = archive.mean_c();
    (0..l)
        .map(|k| {
            let on = (0..n).filter(|&i| median_switch(mean_c[i * l + k]) == 1).count();
            100.0 * on as f64 / n as f64
        })
        .collect()
}

/// Per year: percentage of that year's samples with each factor present,
/// and the relative cumulative strengths `sum_i E[c_il phi_il]` normalized
/// over the non-reference factors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YearSummary {
    pub year: i64,
    pub n_samples: usize,
    pub presence: Vec<f64>,
    pub relative_strength: Vec<f64>,
}

pub fn presence_by_year(archive: &PosteriorArchive, years: &[i64]) -> Result<Vec<YearSummary>> {
    let (n, l) = (archive.dims.n, archive.dims.l);
    if years.len() != n {
        return Err(BarcodeError::Shape(format!("{} years for {n} samples", years.len())));
    }
    let mean_c = archive.mean_c();
    let mean_theta = archive.mean_theta();
    let mut by_year: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &yr) in years.iter().enumerate() {
        by_year.entry(yr).or_default().push(i);
    }
    Ok(by_year
        .into_iter()
        .map(|(year, rows)| {
            let presence = (0..l)
                .map(|k| {
                    let on = rows.iter().filter(|&&i| median_switch(mean_c[i * l + k]) == 1).count();
                    100.0 * on as f64 / rows.len() as f64
                })
                .collect();
            let mut strength: Vec<f64> = (0..l)
                .map(|k| if k == 0 { 0.0 } else { rows.iter().map(|&i| mean_theta[i * l + k]).sum() })
                .collect();
            let total: f64 = strength.iter().sum();
            if total > 0.0 {
                strength.iter_mut().for_each(|v| *v /= total);
            }
            YearSummary {
                year,
                n_samples: rows.len(),
                presence,
                relative_strength: strength,
            }
        })
        .collect())
}

/// Posterior summary of one regression coefficient.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovariateEffect {
    pub factor: usize,
    pub covariate: String,
    pub mean: f64,
    pub prob_positive: f64,
    /// +1 / -1 when `Pr(beta > 0)` / `Pr(beta < 0)` exceeds the threshold,
    /// else 0.
    pub sign: i8,
}

/// Sign table of `beta_lk` for the non-reference factors.
pub fn covariate_signs(archive: &PosteriorArchive, threshold: f64) -> Vec<CovariateEffect> {
    let (l, q) = (archive.dims.l, archive.dims.q);
    let draws = archive.n_draws().max(1) as f64;
    let mut out = Vec::new();
    for k in 1..l {
        for c in 0..q {
            let mut sum = 0.0;
            let mut pos = 0usize;
            let mut neg = 0usize;
            for dr in archive.draws() {
                let b = dr.beta[k * q + c];
                sum += b;
                pos += usize::from(b > 0.0);
                neg += usize::from(b < 0.0);
            }
            let prob_positive = pos as f64 / draws;
            let sign = if prob_positive > threshold {
                1
            } else if neg as f64 / draws > threshold {
                -1
            } else {
                0
            };
            out.push(CovariateEffect {
                factor: k,
                covariate: archive.covariate_names.get(c).cloned().unwrap_or_else(|| format!("x{c}")),
                mean: sum / draws,
                prob_positive,
                sign,
            });
        }
    }
    out
}
