//! Simulation-based checks of the full pipeline against known truths.

use dyncov::bandwidth::{select_bandwidth, BandwidthGrid};
use dyncov::covariance::{default_mean_grid, estimate_ll_raw, estimate_lf, estimate_means, estimate_nw, raw_covariances};
use dyncov::sim::bench::{mean_bandwidth_grid, replicate_raw};
use dyncov::sim::{generate_replicate, true_cov, true_mean, SimConfig, SpreadReading, VcmSimConfig};
use dyncov::vcm::{default_lambdas, estimate_gamma, lambda_scores, VcmBandwidths};
use dyncov::{frobenius_dist, linspace, Kernel};
use rayon::prelude::*;

const SIZES: [usize; 3] = [250, 500, 1000];

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

fn model(p: usize, n: usize, seed: u64) -> SimConfig {
    SimConfig::draw(p, n, seed, SpreadReading::Variance).unwrap()
}

#[test]
fn mean_sup_error_shrinks_with_n() {
    let grid = linspace(0.05, 0.95, 91);
    let medians: Vec<f64> = SIZES
        .iter()
        .map(|&n| {
            let sim = model(3, n, 4);
            let errors: Vec<f64> = (0..20u64)
                .into_par_iter()
                .map(|r| {
                    let data = generate_replicate(&sim, r).unwrap();
                    let bw = mean_bandwidth_grid(&data, Some(5), r).unwrap();
                    let h = dyncov::bandwidth::cv_mean_bandwidth(&data, &bw, Kernel::Epanechnikov).unwrap();
                    let means = estimate_means(&data, h, &grid, Kernel::Epanechnikov).unwrap();
                    grid.iter()
                        .map(|&x| {
                            let fit = means.eval(x).unwrap();
                            let truth = true_mean(&sim, x);
                            fit.iter().zip(&truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
                        })
                        .fold(0.0, f64::max)
                })
                .collect();
            median(errors)
        })
        .collect();
    assert!(medians.windows(2).all(|w| w[1] < w[0]), "{medians:?}");
}

#[test]
fn local_linear_goes_indefinite_at_the_boundary() {
    let sim = model(20, 250, 1);
    let indefinite = (0..20u64)
        .filter(|&r| {
            let (_, raw, _) = replicate_raw(&sim, r, Kernel::Epanechnikov, Some(5)).unwrap();
            let ll = estimate_ll_raw(&raw, 1.0, 0.43, Kernel::Epanechnikov).unwrap();
            let ev = ll.eigenvalues().unwrap();
            ev[0] < -1e-10 * ev[ev.len() - 1].abs()
        })
        .count();
    assert!(indefinite >= 1);
}

#[test]
fn frechet_beats_nadaraya_watson_at_the_left_boundary() {
    let sim = model(5, 250, 2);
    let truth = true_cov(&sim, 0.0).unwrap();
    let (nw, lf): (Vec<f64>, Vec<f64>) = (0..20u64)
        .map(|r| {
            let (_, raw, _) = replicate_raw(&sim, r, Kernel::Epanechnikov, Some(5)).unwrap();
            let nw = estimate_nw(&raw, 0.0, 0.2, Kernel::Epanechnikov).unwrap();
            let lf = estimate_lf(&raw, 0.0, 0.2, Kernel::Epanechnikov).unwrap();
            (frobenius_dist(&nw, &truth).unwrap(), frobenius_dist(&lf, &truth).unwrap())
        })
        .unzip();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&nw) > mean(&lf), "NW {} vs LF {}", mean(&nw), mean(&lf));
}

#[test]
fn selected_bandwidth_is_stable_across_fold_seeds() {
    let sim = model(5, 500, 3);
    let (data, _, h_mean) = replicate_raw(&sim, 0, Kernel::Epanechnikov, Some(5)).unwrap();
    let base = BandwidthGrid::default_for(&data, 0).unwrap();
    let candidates = base.candidates().to_vec();
    let picks: Vec<f64> = (0..5u64)
        .map(|seed| {
            let grid = BandwidthGrid::new(candidates.clone(), base.folds(), seed).unwrap();
            select_bandwidth(&data, &grid, h_mean, Kernel::Epanechnikov).unwrap()
        })
        .collect();
    // One grid step on the log-spaced candidate grid.
    let step = (candidates[1] / candidates[0]).ln();
    let (lo, hi) = picks.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &h| (a.min(h), b.max(h)));
    assert!((hi / lo).ln() <= step * (1.0 + 1e-9), "{picks:?}");
}

#[test]
fn gamma_sup_error_shrinks_with_n() {
    let grid = linspace(0.1, 0.9, 41);
    let medians: Vec<f64> = SIZES
        .iter()
        .map(|&n| {
            let vsim = VcmSimConfig::new(model(3, n, 5), 1.0);
            let truth: Vec<Vec<f64>> = grid.iter().map(|&x| vsim.true_gamma(x).unwrap()).collect();
            let h = 0.3 * (n as f64 / 250.0).powf(-0.2);
            let errors: Vec<f64> = (0..20u64)
                .into_par_iter()
                .map(|r| {
                    let (data, outcomes) = vsim.generate_replicate(r).unwrap();
                    let means = estimate_means(&data, 0.2, &default_mean_grid(&data), Kernel::Epanechnikov).unwrap();
                    let gamma = estimate_gamma(&data, &outcomes, &means, &grid, h, Kernel::Epanechnikov).unwrap();
                    let mut sup: f64 = 0.0;
                    for (t, tg) in truth.iter().enumerate() {
                        for (j, g) in gamma.iter().enumerate() {
                            sup = sup.max((g.values()[t] - tg[j]).abs());
                        }
                    }
                    sup
                })
                .collect();
            median(errors)
        })
        .collect();
    assert!(medians.windows(2).all(|w| w[1] < w[0]), "{medians:?}");
}

#[test]
fn lambda_selection_is_reproducible() {
    let vsim = VcmSimConfig::new(model(3, 250, 6), 1.0);
    let (data, outcomes) = vsim.generate_replicate(0).unwrap();
    let means = estimate_means(&data, 0.2, &default_mean_grid(&data), Kernel::Epanechnikov).unwrap();
    let raw = raw_covariances(&data, &means).unwrap();
    assert_eq!(raw.n(), data.n());
    let run = |seed| {
        lambda_scores(
            &data,
            &outcomes,
            &means,
            VcmBandwidths::new(0.2, 0.3),
            &default_lambdas(),
            5,
            seed,
            Kernel::Epanechnikov,
        )
        .unwrap()
    };
    let a = run(11);
    let b = run(11);
    assert_eq!(a, b);
    assert_eq!(a.argmin().unwrap(), b.argmin().unwrap());
}
