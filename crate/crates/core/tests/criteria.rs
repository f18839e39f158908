mod common;

use common::random_run_config;
use eprsim_core::config::RunConfig;
use eprsim_core::criteria::*;
use eprsim_core::experiment::{run_experiment, Experiment};
use eprsim_core::sampler::*;
use eprsim_core::spin::*;
use eprsim_core::splitter::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

fn normals(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn var(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

#[test]
fn inference_variance_is_residual_of_correlation() {
    let x = normals(1, 2000);
    let e = normals(2, 2000);
    let y: Vec<f64> = x.iter().zip(&e).map(|(a, b)| 3.0 - 0.7 * a + 0.4 * b).collect();
    let inf = optimal_inference(&x, &y).unwrap();
    let (mx, my) = (x.iter().sum::<f64>() / 2000.0, y.iter().sum::<f64>() / 2000.0);
    let cxy = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / 1999.0;
    let rho2 = cxy * cxy / (var(&x) * var(&y));
    assert!((inf.var_inf - var(&y) * (1.0 - rho2)).abs() < 1e-12);
    assert!((inf.g - 0.7).abs() < 0.03);
    // the prediction is unbiased
    assert!((my - (-inf.g * mx + inf.c)).abs() < 1e-12);
}

#[test]
fn independent_data_gives_no_gain() {
    let x = normals(3, 5000);
    let y = normals(4, 5000);
    let inf = optimal_inference(&x, &y).unwrap();
    assert!(inf.g.abs() < 4.0 / 5000f64.sqrt());
    assert!((inf.var_inf / var(&y) - 1.0).abs() < 0.01);
}

#[test]
fn jitter_correction_recovers_injected_slope() {
    let sy = normals(5, 1000);
    let dt: Vec<f64> = normals(6, 1000).iter().map(|v| v * 4e-9).collect();
    let k = 5e9;
    let injected: Vec<f64> = sy.iter().zip(&dt).map(|(y, t)| y + k * t).collect();
    let (corrected, g) = jitter_correct(&injected, &dt).unwrap();
    assert!((var(&corrected) / var(&sy) - 1.0).abs() < 0.02);
    assert!((g + k).abs() < 0.1 * k);
    let (same, g0) = jitter_correct(&sy, &vec![0.0; 1000]).unwrap();
    assert_eq!((same, g0), (sy, 0.0));
}

#[test]
fn experimental_jitter_phase_width() {
    assert!((NoiseModel::experimental().jitter_phase_sigma() - 0.045).abs() < 0.001);
}

#[test]
fn separable_moments_saturate_bounds() {
    let m = moments_from_state(&make_coherent_state(1000, std::f64::consts::FRAC_PI_2, 0.0).unwrap());
    let e = criteria_from_moments(&split_moments(&m, 0.5).unwrap()).unwrap();
    for v in [e.values.epr_a_to_b, e.values.epr_b_to_a, e.values.hei_a, e.values.hei_b] {
        assert!((v - 1.0).abs() < 1e-9, "{v}");
    }
    assert!(e.values.ent >= 1.0 - 1e-9);
}

#[test]
fn heisenberg_product_of_pure_squeezed_split() {
    let chi = chi_t_for_squeezing(1400, -7.0).unwrap();
    let (state, _) = squeezed_state(1400, chi).unwrap();
    let contrast = 0.96;
    let pure = moments_from_state(&state);
    let jm = split_moments(&eprsim_core::experiment::apply_contrast(&pure, contrast), 0.5).unwrap();
    let e = criteria_from_moments(&jm).unwrap();
    let q = 0.5;
    let (vz, vy) = (pure.variance(2), pure.variance(1));
    let n = 1400.0;
    let want = 4.0 * (q * q * vz + q * q * n / 4.0) * (q * q * vy + q * q * n / 4.0) / (q * contrast * pure.mean[0]).powi(2);
    assert!((e.values.hei_b / want - 1.0).abs() < 1e-9, "{} vs {want}", e.values.hei_b);
}

#[test]
fn zero_gains_reduce_ent_to_heisenberg() {
    let cfg = RunConfig { n_blocks: 2, ..RunConfig::default() };
    let ds = run_experiment(&cfg, 3).unwrap();
    let s = ShotStats::from_records(&ds.records).summary(false).unwrap();
    let e = evaluate(&s).unwrap();
    assert!((ent_value(&s, 0.0, 0.0) - e.values.hei_b).abs() < 1e-12 * e.values.hei_b);
}

#[test]
fn split_coherent_state_data_is_not_entangled() {
    let cfg = RunConfig { n_atoms: 1000, squeezing: eprsim_core::config::Squeezing::None, noise: NoiseModel::ideal(), ..RunConfig::default() };
    let ds = run_experiment(&cfg, 21).unwrap();
    let report = analyze(&ds.records, &AnalysisOptions::default()).unwrap();
    let e = report.errors.unwrap().single_block;
    let ent = ent_criterion(&ds.records).unwrap();
    let epr = epr_criterion(&ds.records, Direction::AToB, Policy::default()).unwrap();
    assert!(ent > 1.0 - 3.0 * e.ent, "{ent} +- {}", e.ent);
    assert!(epr > 1.0 - 3.0 * e.epr_a_to_b, "{epr} +- {}", e.epr_a_to_b);
}

#[test]
fn stationary_block_average_matches_pooled_value() {
    let ds = run_experiment(&RunConfig::default(), 2).unwrap();
    let report = analyze(&ds.records, &AnalysisOptions::default()).unwrap();
    let avg = report.blocks.average.unwrap();
    let single = report.blocks.single_block.values;
    let err = report.errors.unwrap().average;
    for (a, s, e) in [(avg.epr_a_to_b, single.epr_a_to_b, err.epr_a_to_b), (avg.ent, single.ent, err.ent), (avg.hei_b, single.hei_b, err.hei_b)] {
        assert!((a - s).abs() < 3.0 * e, "{a} vs {s} (se {e})");
    }
}

#[test]
fn bootstrap_is_deterministic_and_scales() {
    let base = RunConfig::default();
    let ds = run_experiment(&base, 4).unwrap();
    let opts = AnalysisOptions::default();
    let a = bootstrap_errors(&ds.records, &opts.block_spec, opts.policy, 200, 9).unwrap();
    assert_eq!(a, bootstrap_errors(&ds.records, &opts.block_spec, opts.policy, 200, 9).unwrap());
    assert!(bootstrap_errors(&ds.records, &opts.block_spec, opts.policy, 50, 9).is_err());

    let big = run_experiment(&RunConfig { n_blocks: 80, ..base.clone() }, 4).unwrap();
    let small = run_experiment(&RunConfig { n_blocks: 40, ..base }, 5).unwrap();
    let e_big = bootstrap_errors(&big.records, &opts.block_spec, opts.policy, 400, 1).unwrap();
    let e_small = bootstrap_errors(&small.records, &opts.block_spec, opts.policy, 400, 1).unwrap();
    let ratio = e_small.single_block.epr_a_to_b / e_big.single_block.epr_a_to_b;
    assert!((ratio - 2f64.sqrt()).abs() < 0.35, "{ratio}");
}

#[test]
fn drifting_phase_penalizes_the_pooled_analysis() {
    let cfg = RunConfig {
        noise: NoiseModel { b_phase_drift_per_shot: 3e-5, ..RunConfig::default().noise },
        ..RunConfig::default()
    };
    let ds = run_experiment(&cfg, 1).unwrap();
    let report = analyze(&ds.records, &AnalysisOptions::default()).unwrap();
    let avg = report.blocks.average.unwrap().epr_a_to_b;
    let single = report.blocks.single_block.values.epr_a_to_b;
    assert!(single >= avg, "single {single} < average {avg}");
}

#[test]
fn fitting_delays_without_phase_effect_only_raises_epr() {
    // the fitted slope on pure noise removes part of the A-correlated signal,
    // which inflates the inferred variance by about rho^2 / ((1 - rho^2) n)
    let base = RunConfig::default();
    let cfg = RunConfig { noise: NoiseModel { omega_rf: 0.0, ..base.noise }, ..base };
    let ds = run_experiment(&cfg, 1).unwrap();
    let run = |jitter_correction| {
        let opts = AnalysisOptions { policy: Policy { jitter_correction }, ..AnalysisOptions::default() };
        let r = analyze(&ds.records, &opts).unwrap();
        (r.values().epr_a_to_b, r.errors.unwrap().average.epr_a_to_b)
    };
    let ((corrected, se), (raw, _)) = (run(true), run(false));
    assert!(corrected > raw, "{corrected} vs {raw}");
    assert!(corrected - raw < 2.0 * se, "{corrected} vs {raw} (se {se})");
}

#[test]
fn incomplete_data_is_reported() {
    let ds = run_experiment(&RunConfig { n_shots: Some(150), ..RunConfig::default() }, 1).unwrap();
    assert!(matches!(epr_criterion(&ds.records, Direction::AToB, Policy::default()), Err(eprsim_core::Error::IncompleteDataset(_))));
    let ds = run_experiment(&RunConfig { n_shots: Some(215), ..RunConfig::default() }, 1).unwrap();
    let report = analyze(&ds.records, &AnalysisOptions::default()).unwrap();
    assert_eq!(report.blocks.n_blocks, 0);
    assert!(report.blocks.average.is_none() && report.errors.is_none());
}

#[test]
fn inference_reduces_conditional_variance_in_default_regime() {
    let exp = Experiment::prepare(&RunConfig::default()).unwrap();
    let ds = exp.run(0.0, 1).unwrap();
    let z: Vec<&ShotRecord> = ds.records.iter().filter(|r| r.basis_a == Basis::Z).collect();
    let a: Vec<f64> = z.iter().map(|r| r.spin_a()).collect();
    let b: Vec<f64> = z.iter().map(|r| r.spin_b()).collect();
    let inf = optimal_inference(&a, &b).unwrap();
    assert!(inf.var_inf < 0.8 * var(&b));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn inferred_variance_never_exceeds_variance(x in prop::collection::vec(-100.0..100.0f64, 2..60), shift in -5.0..5.0f64) {
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| shift * v + (i as f64 * 0.37).sin() * 10.0).collect();
        let inf = optimal_inference(&x, &y).unwrap();
        prop_assert!(inf.var_inf <= var(&y) * (1.0 + 1e-12) + 1e-12);
        prop_assert!(inf.var_inf >= 0.0);
    }

    #[test]
    fn correction_never_increases_variance(y in prop::collection::vec(-50.0..50.0f64, 3..80), seed in 0u64..1000) {
        let dt = normals(seed, y.len());
        let (c, _) = jitter_correct(&y, &dt).unwrap();
        prop_assert!(var(&c) <= var(&y) * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn steering_implies_entanglement_bound(seed in any::<u64>()) {
        let cfg = random_run_config(seed);
        let ds = run_experiment(&cfg, cfg.seed).unwrap();
        let opts = AnalysisOptions { policy: Policy { jitter_correction: false }, block_spec: cfg.block, bootstrap_resamples: 100, bootstrap_seed: 1 };
        let blocks = block_analysis(&ds.records, &opts.block_spec, opts.policy).unwrap();
        for e in blocks.per_block.iter().chain([&blocks.single_block]) {
            let v = e.values;
            prop_assert!(v.epr_a_to_b >= v.ent * (1.0 - 1e-9), "{:?}", v);
            prop_assert!(v.epr_b_to_a >= v.ent * (1.0 - 1e-9), "{:?}", v);
            prop_assert!(v.ent_reused_gains >= v.ent * (1.0 - 1e-9));
        }
    }
}
