use std::f64::consts::FRAC_PI_2;

use eprsim_core::config::{Engine, RunConfig, Squeezing};
use eprsim_core::criteria::{analyze, AnalysisOptions, BlockSpec};
use eprsim_core::experiment::{run_experiment, Experiment};
use eprsim_core::sampler::*;
use eprsim_core::spin::*;
use eprsim_core::splitter::*;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn cov(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() - 1) as f64
}

/// Checks mean, variances and cross covariance of the measured spins
/// against the analytic values at `k` sigma.
fn check_component(records: &[ShotRecord], mean_a: f64, mean_b: f64, c: [[f64; 2]; 2], k: f64) {
    let n = records.len() as f64;
    let a: Vec<f64> = records.iter().map(|r| r.spin_a()).collect();
    let b: Vec<f64> = records.iter().map(|r| r.spin_b()).collect();
    let tol = |v: f64| k * (v / n).sqrt() + 1e-9;
    assert!((mean(&a) - mean_a).abs() < tol(c[0][0]), "mean A {} vs {mean_a}", mean(&a));
    assert!((mean(&b) - mean_b).abs() < tol(c[1][1]), "mean B {} vs {mean_b}", mean(&b));
    // normal-theory standard errors of the second moments
    let se_var = |v: f64| k * v * (2.0 / (n - 1.0)).sqrt() + 1e-9;
    assert!((cov(&a, &a) - c[0][0]).abs() < se_var(c[0][0]), "var A {} vs {}", cov(&a, &a), c[0][0]);
    assert!((cov(&b, &b) - c[1][1]).abs() < se_var(c[1][1]), "var B {} vs {}", cov(&b, &b), c[1][1]);
    let se_cov = k * ((c[0][0] * c[1][1] + c[0][1] * c[0][1]) / n).sqrt() + 1e-9;
    assert!((cov(&a, &b) - c[0][1]).abs() < se_cov, "cov {} vs {}", cov(&a, &b), c[0][1]);
}

fn component_moments(jm: &JointMoments, i: usize, sign: f64) -> (f64, f64, [[f64; 2]; 2]) {
    let c = [[jm.covariance[i][i], jm.covariance[i][i + 3]], [jm.covariance[i + 3][i], jm.covariance[i + 3][i + 3]]];
    (sign * jm.mean[i], sign * jm.mean[i + 3], c)
}

fn test_state(n: usize) -> DickeState {
    apply_oat(
        &make_coherent_state(n, 1.2, 0.5).unwrap(),
        &OatSpec { chi_t: 0.15, post_rotation: AxisAngle { axis: [0.0, 0.6, 0.8], angle: 0.7 } },
    )
    .unwrap()
}

const BASES: [(Basis, usize, f64); 4] = [(Basis::Z, 2, 1.0), (Basis::Y, 1, 1.0), (Basis::X, 0, 1.0), (Basis::MinusX, 0, -1.0)];

#[test]
fn exact_sampling_reproduces_bipartite_moments() {
    let split = split_exact(&test_state(10), 0.5).unwrap();
    let jm = moments_from_bipartite(&split);
    for (basis, i, sign) in BASES {
        let recs = sample_exact(&split, MeasurementSetting::both(basis, 0.0).unwrap(), NoiseModel::ideal(), 10_000, 3).unwrap();
        let (ma, mb, c) = component_moments(&jm, i, sign);
        check_component(&recs, ma, mb, c, 5.0);
    }
}

#[test]
fn gaussian_sampling_reproduces_joint_moments() {
    let jm = split_moments(&moments_from_state(&test_state(600)), 0.4).unwrap();
    for (basis, i, sign) in BASES {
        let recs = sample_gaussian(&jm, MeasurementSetting::both(basis, 0.0).unwrap(), NoiseModel::ideal(), 10_000, 5).unwrap();
        let (ma, mb, c) = component_moments(&jm, i, sign);
        check_component(&recs, ma, mb, c, 5.0);
    }
}

#[test]
fn split_coherent_state_partition_variance() {
    let n = 12;
    let split = split_exact(&make_coherent_state(n, FRAC_PI_2, 0.0).unwrap(), 0.5).unwrap();
    let recs = sample_exact(&split, MeasurementSetting::both(Basis::Z, 0.0).unwrap(), NoiseModel::ideal(), 10_000, 8).unwrap();
    let a: Vec<f64> = recs.iter().map(|r| r.spin_a()).collect();
    let want = n as f64 / 8.0;
    assert!((cov(&a, &a) - want).abs() < 5.0 * want * (2.0 / 9_999.0f64).sqrt());
}

#[test]
fn noise_free_exact_sampling_conserves_atoms() {
    let split = split_exact(&test_state(9), 0.3).unwrap();
    for (basis, _, _) in BASES {
        for r in sample_exact(&split, MeasurementSetting::both(basis, 0.7).unwrap(), NoiseModel::ideal(), 500, 1).unwrap() {
            assert_eq!(r.n1a + r.n2a + r.n1b + r.n2b, 9.0);
        }
    }
}

#[test]
fn theta_rotation_mixes_y_and_z_of_b() {
    let jm = split_moments(&moments_from_state(&test_state(800)), 0.5).unwrap();
    let theta: f64 = 0.9;
    let recs = sample_gaussian(&jm, MeasurementSetting::new(Basis::Y, Basis::Y, theta).unwrap(), NoiseModel::ideal(), 20_000, 2).unwrap();
    let b: Vec<f64> = recs.iter().map(|r| r.spin_b()).collect();
    let want = theta.cos() * jm.mean[4] + theta.sin() * jm.mean[5];
    let var = theta.cos().powi(2) * jm.covariance[4][4] + theta.sin().powi(2) * jm.covariance[5][5] + 2.0 * theta.sin() * theta.cos() * jm.covariance[4][5];
    assert!((mean(&b) - want).abs() < 5.0 * (var / 20_000.0).sqrt());
}

fn default_moments() -> JointMoments {
    let cfg = RunConfig { noise: NoiseModel::ideal(), ..RunConfig::default() };
    *Experiment::prepare(&cfg).unwrap().joint_moments()
}

#[test]
fn jitter_adds_phase_variance_to_rotated_b() {
    let jm = default_moments();
    let on = NoiseModel { jitter_sigma_dt: 4e-9, omega_rf: 2.0 * std::f64::consts::PI * 1.79e6, ..NoiseModel::ideal() };
    let off = NoiseModel { jitter_sigma_dt: 0.0, ..on };
    let setting = MeasurementSetting::both(Basis::Y, 0.0).unwrap();
    let spins = |noise| -> Vec<f64> { sample_gaussian(&jm, setting, noise, 20_000, 9).unwrap().iter().map(|r| r.spin_b()).collect() };
    let (b_on, b_off) = (spins(on), spins(off));
    let predicted = (jm.mean[3] * on.jitter_phase_sigma()).powi(2);
    let excess = cov(&b_on, &b_on) - cov(&b_off, &b_off);
    assert!((excess / predicted - 1.0).abs() < 0.1, "{excess} vs {predicted}");
}

#[test]
fn jitter_leaves_z_shots_and_a_untouched() {
    let jm = default_moments();
    let split = split_exact(&test_state(8), 0.5).unwrap();
    let on = NoiseModel { jitter_sigma_dt: 4e-9, omega_rf: 2.0 * std::f64::consts::PI * 1.79e6, ..NoiseModel::ideal() };
    let off = NoiseModel { jitter_sigma_dt: 0.0, ..on };
    let z = MeasurementSetting::both(Basis::Z, 0.0).unwrap();
    let y = MeasurementSetting::both(Basis::Y, 0.0).unwrap();
    let counts = |r: &[ShotRecord]| -> Vec<[f64; 4]> { r.iter().map(|r| [r.n1a, r.n2a, r.n1b, r.n2b]).collect() };
    assert_eq!(counts(&sample_gaussian(&jm, z, on, 2000, 4).unwrap()), counts(&sample_gaussian(&jm, z, off, 2000, 4).unwrap()));
    assert_eq!(counts(&sample_exact(&split, z, on, 2000, 4).unwrap()), counts(&sample_exact(&split, z, off, 2000, 4).unwrap()));
    // A's outcome in a rotated basis does not see B's phase either
    let a = |noise| -> Vec<f64> { sample_gaussian(&jm, y, noise, 2000, 4).unwrap().iter().map(|r| r.spin_a()).collect() };
    assert_eq!(a(on), a(off));
}

#[test]
fn sampling_is_deterministic_and_order_free() {
    let jm = default_moments();
    let setting = MeasurementSetting::both(Basis::X, 0.3).unwrap();
    let sampler = GaussianSampler::new(&jm, NoiseModel::experimental()).unwrap();
    let all: Vec<u64> = (0..200).collect();
    let tail: Vec<u64> = (100..200).rev().collect();
    let full = sampler.sample_ids(&setting, &all, 42);
    let mut part = sampler.sample_ids(&setting, &tail, 42);
    part.reverse();
    assert_eq!(&full[100..], &part[..]);
    assert_eq!(full, sampler.sample_ids(&setting, &all, 42));
    assert_ne!(full, sampler.sample_ids(&setting, &all, 43));

    let split = split_exact(&test_state(6), 0.5).unwrap();
    let mut exact = ExactSampler::new(&split, NoiseModel { contrast: 1.0, ..NoiseModel::experimental() }).unwrap();
    let first = exact.sample_ids(&setting, &all, 7).unwrap();
    let mut again = ExactSampler::new(&split, NoiseModel { contrast: 1.0, ..NoiseModel::experimental() }).unwrap();
    let mut part = again.sample_ids(&setting, &tail, 7).unwrap();
    part.reverse();
    assert_eq!(&first[100..], &part[..]);
}

#[test]
fn schedule_multiplicities_and_block_count() {
    let cfg = RunConfig { n_blocks: 1, ..RunConfig::default() };
    let ds = run_experiment(&cfg, 1).unwrap();
    assert_eq!(ds.records.len(), 220);
    let count = |b: Basis| ds.records.iter().filter(|r| r.basis_a == b && r.basis_b == b).count();
    assert_eq!((count(Basis::Z), count(Basis::Y), count(Basis::X), count(Basis::MinusX)), (100, 100, 10, 10));

    let cfg = RunConfig { n_shots: Some(4500), n_blocks: 21, ..RunConfig::default() };
    let ds = run_experiment(&cfg, 1).unwrap();
    let report = analyze(&ds.records, &AnalysisOptions::default()).unwrap();
    assert_eq!(report.blocks.n_blocks, 4500 / 220);
    let d = report.blocks.n_shots_discarded;
    assert_eq!(d.z + d.y + d.x, 4500 - 20 * 220);

    let a = run_experiment(&RunConfig::default(), 5).unwrap();
    assert_eq!(a, run_experiment(&RunConfig::default(), 5).unwrap());
}

#[test]
fn gaussian_and_exact_criteria_agree_at_small_n() {
    let base = RunConfig {
        n_atoms: 12,
        squeezing: Squeezing::ChiT(0.08),
        noise: NoiseModel { detection_sigma: 0.3, ..NoiseModel::ideal() },
        n_blocks: 60,
        block: BlockSpec::default(),
        ..RunConfig::default()
    };
    let run = |engine| {
        let cfg = RunConfig { engine, ..base.clone() };
        let ds = run_experiment(&cfg, 17).unwrap();
        analyze(&ds.records, &AnalysisOptions::default()).unwrap()
    };
    let (exact, gauss) = (run(Engine::Exact), run(Engine::Gaussian));
    let (ve, vg) = (exact.values(), gauss.values());
    let (ee, eg) = (exact.errors.unwrap().average, gauss.errors.unwrap().average);
    for (name, a, b, sa, sb) in [
        ("epr_a_to_b", ve.epr_a_to_b, vg.epr_a_to_b, ee.epr_a_to_b, eg.epr_a_to_b),
        ("epr_b_to_a", ve.epr_b_to_a, vg.epr_b_to_a, ee.epr_b_to_a, eg.epr_b_to_a),
        ("ent", ve.ent, vg.ent, ee.ent, eg.ent),
        ("hei_a", ve.hei_a, vg.hei_a, ee.hei_a, eg.hei_a),
        ("hei_b", ve.hei_b, vg.hei_b, ee.hei_b, eg.hei_b),
    ] {
        let z = (a - b).abs() / (sa * sa + sb * sb).sqrt();
        assert!(z < 3.0, "{name}: exact {a} gaussian {b} ({z:.2} sigma)");
    }
}
