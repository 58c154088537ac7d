mod common;

use barcode::data_model::FactorState;
use barcode::distributions::RngStream;
use barcode::gibbs::{update_sample_switches, update_species_switches};
use barcode::latent_regression::ProbitLayer;
use common::instances::tiny_instance;
use common::*;

#[test]
fn species_switch_frequencies_match_enumeration() {
    let mut inst = tiny_instance();
    // every sample carries factor 1, so no configuration is ruled out
    inst.factors = FactorState::new(3, 2, vec![1; 6], inst.factors.zeta().to_vec()).unwrap();
    let (n, p, l) = (3, 2, 2);
    let theta: Vec<f64> = (0..n * l).map(|e| inst.factors.theta(e / l, e % l)).collect();
    let g = &inst.loadings;
    let rows: Vec<Vec<f64>> = (0..p)
        .map(|j| species_row_conditional(&inst.dense, &theta, g.s(), g.gamma(), g.nu(), g.psi(), &inst.hypers, l, j))
        .collect();
    // joint over both species: index = row0 config + 4 * row1 config
    let exact: Vec<f64> = (0..16).map(|c| rows[0][c & 3] * rows[1][c >> 2]).collect();

    let draws = 20_000u64;
    let mut counts = vec![0u64; 16];
    let mut rng = RngStream::new(101, 0);
    for _ in 0..draws {
        let mut lo = inst.loadings.clone();
        update_species_switches(&inst.y, &inst.factors, &mut lo, &inst.hypers, &mut rng).unwrap();
        let s = lo.s();
        let cfg = s[0] as usize | (s[1] as usize) << 1 | (s[2] as usize) << 2 | (s[3] as usize) << 3;
        counts[cfg] += 1;
    }
    within_binomial_se(&counts, &exact, draws, 3.0).unwrap();
}

#[test]
fn sample_switch_frequencies_match_enumeration() {
    let inst = tiny_instance();
    let (n, l) = (3, 2);
    let layer = ProbitLayer::new(&inst.x, inst.y.site_of(), None, inst.hypers.sigma0_sq).unwrap();
    let f = &inst.factors;
    let g = &inst.loadings;
    let c0 = f.c().to_vec();
    let zeta = f.zeta().to_vec();
    let t = norms(&c0, &zeta, n, l);
    let gamma_tilde: Vec<f64> = g.gamma().iter().enumerate().map(|(e, v)| v / t[e % l]).collect();
    let eta: Vec<f64> = (0..n * l)
        .map(|e| if e % l == 0 { 0.0 } else { layer.linear_predictor(&inst.regression, e / l, e % l) })
        .collect();
    let exact = sample_sweep_kernel(&inst.dense, &c0, &zeta, &gamma_tilde, g.s(), g.nu(), &eta, &inst.hypers, n);

    let draws = 20_000u64;
    let mut counts = vec![0u64; 8];
    let mut rng = RngStream::new(202, 0);
    for _ in 0..draws {
        let mut fa = inst.factors.clone();
        let mut lo = inst.loadings.clone();
        update_sample_switches(&inst.y, &mut fa, &mut lo, &inst.regression, &layer, &inst.hypers, &mut rng).unwrap();
        let cfg = (0..n).map(|i| (fa.c()[i * l + 1] as usize) << i).sum::<usize>();
        counts[cfg] += 1;
    }
    within_binomial_se(&counts, &exact, draws, 3.0).unwrap();
}

#[test]
fn sample_switch_update_rescales_loadings_consistently() {
    // Whatever the new switches, the means of samples whose own switch did
    // not change keep their value: Gamma is mapped through the new
    // normalizer.
    let inst = tiny_instance();
    let layer = ProbitLayer::new(&inst.x, inst.y.site_of(), None, inst.hypers.sigma0_sq).unwrap();
    let mut rng = RngStream::new(3, 0);
    for _ in 0..200 {
        let mut fa = inst.factors.clone();
        let mut lo = inst.loadings.clone();
        update_sample_switches(&inst.y, &mut fa, &mut lo, &inst.regression, &layer, &inst.hypers, &mut rng).unwrap();
        for i in 0..3 {
            if fa.c()[i * 2 + 1] == 1 && inst.factors.c()[i * 2 + 1] == 1 {
                for j in 0..2 {
                    let before = inst.factors.theta(i, 1) * inst.loadings.lambda(j, 1);
                    let after = fa.theta(i, 1) * lo.lambda(j, 1);
                    assert!((before - after).abs() <= 1e-12 * before.max(1.0), "{before} vs {after}");
                }
            }
        }
    }
}

#[test]
fn oracle_instance_has_spread_out_probabilities() {
    // guards against a degenerate instance where the comparison is vacuous
    let mut inst = tiny_instance();
    inst.factors = FactorState::new(3, 2, vec![1; 6], inst.factors.zeta().to_vec()).unwrap();
    let theta: Vec<f64> = (0..6).map(|e| inst.factors.theta(e / 2, e % 2)).collect();
    let g = &inst.loadings;
    let row = species_row_conditional(&inst.dense, &theta, g.s(), g.gamma(), g.nu(), g.psi(), &inst.hypers, 2, 1);
    // a species with counts cannot switch every factor off
    assert_eq!(row[0], 0.0);
    assert!(row[1..].iter().all(|&p| p > 0.01), "{row:?}");
}
