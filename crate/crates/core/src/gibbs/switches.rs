//! Blocked updates of the binary switches `S` (step 1) and `C` (step 2).
//!
//! For each species (sample) the factor indices are shuffled and cut into
//! blocks of at most `block_size`. Every `2^b` configuration of a block is
//! weighted in log space; configurations that leave a positive count with a
//! zero mean get weight `-inf` and are never drawn.

use crate::data_model::{CountMatrix, FactorState, HyperParams, LoadingState};
use crate::distributions::{gamma_log_pdf, log_categorical_draw, log_norm_cdf, RngStream};
use crate::error::Result;
use crate::latent_regression::{ProbitLayer, RegressionState};

#[derive(Debug, Default)]
pub(crate) struct BlockScratch {
    rest: Vec<f64>,
    contrib: Vec<f64>,
    ys: Vec<f64>,
    log_w: Vec<f64>,
    order: Vec<usize>,
}

fn shuffle(order: &mut [usize], rng: &mut RngStream) {
    for a in (1..order.len()).rev() {
        let b = rng.index(a + 1);
        order.swap(a, b);
    }
}

/// `sum_t y_t ln(rest_t + sum_{r in cfg} contrib_{t r})`, or `-inf` when some
/// mean vanishes.
#[inline]
fn config_loglik(rest: &[f64], contrib: &[f64], ys: &[f64], b: usize, cfg: usize) -> f64 {
    let mut ll = 0.0;
    for (t, (&r, &y)) in rest.iter().zip(ys).enumerate() {
        let mut mu = r;
        let row = &contrib[t * b..(t + 1) * b];
        for (bit, &a) in row.iter().enumerate() {
            if cfg >> bit & 1 == 1 {
                mu += a;
            }
        }
        if mu <= 0.0 {
            return f64::NEG_INFINITY;
        }
        ll += y * mu.ln();
    }
    ll
}

/// Log weight of every block configuration: the prior terms of each bit
/// (`w_on` / `w_off`) plus the likelihood of the affected counts.
fn fill_config_weights(log_w: &mut Vec<f64>, w_on: &[f64], w_off: &[f64], rest: &[f64], contrib: &[f64], ys: &[f64]) {
    let b = w_on.len();
    log_w.clear();
    for cfg in 0..(1usize << b) {
        let mut w = 0.0;
        for bit in 0..b {
            w += if cfg >> bit & 1 == 1 { w_on[bit] } else { w_off[bit] };
        }
        if w > f64::NEG_INFINITY {
            w += config_loglik(rest, contrib, ys, b, cfg);
        }
        log_w.push(w);
    }
}

/// Step 1: species preferences `s_jl`, with `Phi`, `C` and `Gamma` fixed.
///
/// A dormant loading carries the pseudo-prior `Ga(1, tau0)`, so the weight
/// of each configuration includes the density of the current `gamma_jl`
/// under the prior of its branch.
pub fn update_species_switches(
    y: &CountMatrix,
    factors: &FactorState,
    loadings: &mut LoadingState,
    hypers: &HyperParams,
    rng: &mut RngStream,
) -> Result<()> {
    let mut scratch = BlockScratch::default();
    update_species_switches_with(y, factors, loadings, hypers, rng, &mut scratch)
}

pub(crate) fn update_species_switches_with(
    y: &CountMatrix,
    factors: &FactorState,
    loadings: &mut LoadingState,
    hypers: &HyperParams,
    rng: &mut RngStream,
    scratch: &mut BlockScratch,
) -> Result<()> {
    let l = factors.factors();
    let p = y.p();
    let theta = factors.theta_matrix();
    let mass: Vec<f64> = (0..l).map(|k| factors.column_mass(k)).collect();
    let ln_on = loadings.psi.ln();
    let ln_off = (1.0 - loadings.psi).ln();
    let bs = hypers.block_size.min(l);

    let BlockScratch {
        rest,
        contrib,
        ys,
        log_w,
        order,
    } = scratch;
    order.clear();
    order.extend(0..l);
    let mut in_block = vec![false; l];
    let (mut w_on, mut w_off) = (vec![0.0; bs], vec![0.0; bs]);

    for j in 0..p {
        shuffle(order, rng);
        for block in order.chunks(bs) {
            let b = block.len();
            block.iter().for_each(|&k| in_block[k] = true);
            rest.clear();
            contrib.clear();
            ys.clear();
            {
                let s = &loadings.s[j * l..(j + 1) * l];
                let g = &loadings.gamma[j * l..(j + 1) * l];
                for t in y.col_range(j) {
                    let (i, e) = y.col_entry(t);
                    let row = &theta[i * l..(i + 1) * l];
                    let mut r = 0.0;
                    for k in 0..l {
                        if s[k] == 1 && !in_block[k] {
                            r += row[k] * g[k];
                        }
                    }
                    rest.push(r);
                    contrib.extend(block.iter().map(|&k| row[k] * g[k]));
                    ys.push(y.entry_value(e) as f64);
                }
            }

            for (bit, &k) in block.iter().enumerate() {
                let gk = loadings.gamma[j * l + k];
                w_on[bit] = ln_on + gamma_log_pdf(gk, hypers.a_gamma, loadings.nu[k]) - gk * mass[k];
                w_off[bit] = ln_off + gamma_log_pdf(gk, 1.0, hypers.tau0);
            }
            fill_config_weights(log_w, &w_on[..b], &w_off[..b], rest, contrib, ys);
            let pick = log_categorical_draw(log_w, rng)?;
            for (bit, &k) in block.iter().enumerate() {
                loadings.s[j * l + k] = (pick >> bit & 1) as u8;
                in_block[k] = false;
            }
        }
    }
    Ok(())
}

/// Step 2: sample factor switches `c_il` for `l >= 1`.
///
/// Switching `c_il` changes the normalizer `T_l = sum_i c_il zeta_il` of the
/// whole column. The update therefore holds `Z` and the rescaled loadings
/// `Gamma~ = Gamma / T_l` fixed, under which the means of every other sample
/// are unchanged. The cost of the reparameterization is the term
/// `K_l ln T_l - R_l T_l` (prior of `Gamma` plus Jacobian). `Gamma` is mapped
/// back with the new normalizers once all samples are visited.
pub fn update_sample_switches(
    y: &CountMatrix,
    factors: &mut FactorState,
    loadings: &mut LoadingState,
    regression: &RegressionState,
    layer: &ProbitLayer,
    hypers: &HyperParams,
    rng: &mut RngStream,
) -> Result<()> {
    let mut scratch = BlockScratch::default();
    update_sample_switches_with(y, factors, loadings, regression, layer, hypers, rng, &mut scratch)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn update_sample_switches_with(
    y: &CountMatrix,
    factors: &mut FactorState,
    loadings: &mut LoadingState,
    regression: &RegressionState,
    layer: &ProbitLayer,
    hypers: &HyperParams,
    rng: &mut RngStream,
    scratch: &mut BlockScratch,
) -> Result<()> {
    let l = factors.factors();
    let (n, p) = (y.n(), y.p());
    if l < 2 {
        return Ok(());
    }
    let norms = factors.norms().to_vec();

    // active loadings on the rescaled scale; column 0 is not rescaled
    let mut lt = vec![0.0; p * l];
    let mut a_on = vec![0.0; l];
    let mut a_off = vec![0.0; l];
    let mut n_on = vec![0usize; l];
    for j in 0..p {
        for k in 0..l {
            let e = j * l + k;
            let g = loadings.gamma[e] / norms[k];
            if loadings.s[e] == 1 {
                lt[e] = g;
                a_on[k] += g;
                n_on[k] += 1;
            } else {
                a_off[k] += g;
            }
        }
    }
    let shape_t: Vec<f64> = (0..l)
        .map(|k| hypers.a_gamma * n_on[k] as f64 + (p - n_on[k]) as f64)
        .collect();
    let rate_t: Vec<f64> = (0..l)
        .map(|k| loadings.nu[k] * a_on[k] + hypers.tau0 * a_off[k])
        .collect();

    let mut active = vec![0.0; l];
    let mut total = vec![0.0; l];
    let mut count = vec![0usize; l];
    for i in 0..n {
        for k in 1..l {
            let e = i * l + k;
            total[k] += factors.zeta[e];
            if factors.c[e] == 1 {
                active[k] += factors.zeta[e];
                count[k] += 1;
            }
        }
    }
    let ref_w = 1.0 / n as f64;
    let bs = hypers.block_size.min(l - 1);

    let BlockScratch {
        rest,
        contrib,
        ys,
        log_w,
        order,
    } = scratch;
    let mut in_block = vec![false; l];
    let (mut w_on, mut w_off) = (vec![0.0; bs], vec![0.0; bs]);
    let mut lp_on = vec![0.0; l];
    let mut lp_off = vec![0.0; l];

    for i in 0..n {
        order.clear();
        order.extend(1..l);
        shuffle(order, rng);
        for k in 1..l {
            let eta = layer.linear_predictor(regression, i, k);
            lp_on[k] = log_norm_cdf(eta);
            lp_off[k] = log_norm_cdf(-eta);
        }
        let zrow_start = i * l;
        for block in order.chunks(bs) {
            let b = block.len();
            block.iter().for_each(|&k| in_block[k] = true);
            rest.clear();
            contrib.clear();
            ys.clear();
            for e in y.row_range(i) {
                let j = y.entry_col(e);
                let lrow = &lt[j * l..(j + 1) * l];
                let mut r = ref_w * lrow[0];
                for k in 1..l {
                    if !in_block[k] && factors.c[zrow_start + k] == 1 {
                        r += factors.zeta[zrow_start + k] * lrow[k];
                    }
                }
                rest.push(r);
                contrib.extend(block.iter().map(|&k| factors.zeta[zrow_start + k] * lrow[k]));
                ys.push(y.entry_value(e) as f64);
            }

            for (bit, &k) in block.iter().enumerate() {
                let z = factors.zeta[zrow_start + k];
                let cur = factors.c[zrow_start + k] as usize;
                for on in 0..2usize {
                    let new_count = count[k] - cur + on;
                    let t_new = if new_count == 0 {
                        total[k]
                    } else {
                        (active[k] + (on as f64 - cur as f64) * z).max(f64::MIN_POSITIVE)
                    };
                    let w = shape_t[k] * t_new.ln() - rate_t[k] * t_new;
                    if on == 1 {
                        w_on[bit] = w + lp_on[k] - z * a_on[k];
                    } else {
                        w_off[bit] = w + lp_off[k];
                    }
                }
            }
            fill_config_weights(log_w, &w_on[..b], &w_off[..b], rest, contrib, ys);
            let pick = log_categorical_draw(log_w, rng)?;
            for (bit, &k) in block.iter().enumerate() {
                in_block[k] = false;
                let e = zrow_start + k;
                let on = (pick >> bit & 1) as u8;
                let cur = factors.c[e];
                if on == cur {
                    continue;
                }
                factors.c[e] = on;
                if on == 1 {
                    active[k] += factors.zeta[e];
                    count[k] += 1;
                } else {
                    active[k] -= factors.zeta[e];
                    count[k] -= 1;
                    if count[k] > 0 && active[k] < 1e-8 * total[k] {
                        active[k] = (0..n)
                            .filter(|&r| factors.c[r * l + k] == 1)
                            .map(|r| factors.zeta[r * l + k])
                            .sum();
                    }
                }
            }
        }
    }

    factors.refresh_norms();
    let new_norms = factors.norms();
    for j in 0..p {
        for k in 1..l {
            let e = j * l + k;
            if norms[k] != new_norms[k] {
                loadings.gamma[e] = (loadings.gamma[e] / norms[k] * new_norms[k]).max(f64::MIN_POSITIVE);
            }
        }
    }
    Ok(())
}
