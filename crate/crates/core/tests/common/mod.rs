#![allow(dead_code)]

use eprsim_core::spin::{DickeState, Vec3};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use proptest::prelude::*;

pub type CMat = DMatrix<Complex64>;

/// Dense `(S_x, S_y, S_z)` in the Dicke basis ordered by `k = n_1`, `m = k - N/2`.
pub fn spin_matrices(n: usize) -> [CMat; 3] {
    let j = n as f64 / 2.0;
    let dim = n + 1;
    let mut sp = CMat::zeros(dim, dim);
    for k in 0..n {
        let m = k as f64 - j;
        sp[(k + 1, k)] = Complex64::new((j * (j + 1.0) - m * (m + 1.0)).sqrt(), 0.0);
    }
    let sm = sp.adjoint();
    let sx = (&sp + &sm) * Complex64::new(0.5, 0.0);
    let sy = (&sp - &sm) * Complex64::new(0.0, -0.5);
    let sz = CMat::from_diagonal(&DVector::from_fn(dim, |k, _| Complex64::new(k as f64 - j, 0.0)));
    [sx, sy, sz]
}

/// `exp(-i t H)` for Hermitian `H`.
pub fn expm_herm(h: &CMat, t: f64) -> CMat {
    let eig = nalgebra::SymmetricEigen::new(h.clone());
    let d = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|e| Complex64::from_polar(1.0, -t * e)));
    &eig.eigenvectors * CMat::from_diagonal(&d) * eig.eigenvectors.adjoint()
}

pub fn generator(n: usize, axis: Vec3) -> CMat {
    let [sx, sy, sz] = spin_matrices(n);
    sx * Complex64::from(axis[0]) + sy * Complex64::from(axis[1]) + sz * Complex64::from(axis[2])
}

pub fn as_vector(s: &DickeState) -> DVector<Complex64> {
    DVector::from_column_slice(s.amplitudes())
}

pub fn expect(op: &CMat, v: &DVector<Complex64>) -> f64 {
    v.dotc(&(op * v)).re
}

pub fn max_diff(a: &DVector<Complex64>, b: &DVector<Complex64>) -> f64 {
    (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn unit_axis() -> impl Strategy<Value = Vec3> {
    (0.0..std::f64::consts::PI, 0.0..std::f64::consts::TAU).prop_map(|(t, p)| [t.sin() * p.cos(), t.sin() * p.sin(), t.cos()])
}

pub fn random_state(max_n: usize) -> impl Strategy<Value = DickeState> {
    (1..=max_n).prop_flat_map(|n| {
        prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), n + 1).prop_filter_map("zero vector", move |v| {
            let amps: Vec<Complex64> = v.into_iter().map(|(r, i)| Complex64::new(r, i)).collect();
            if amps.iter().map(|a| a.norm_sqr()).sum::<f64>() < 1e-3 {
                return None;
            }
            DickeState::normalized(n, amps).ok()
        })
    })
}

/// A small randomized run configuration for invariant checks.
pub fn random_run_config(seed: u64) -> eprsim_core::config::RunConfig {
    use eprsim_core::config::{Engine, RunConfig, Squeezing};
    use eprsim_core::criteria::BlockSpec;
    use eprsim_core::sampler::NoiseModel;
    use rand::{Rng, SeedableRng};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let exact = rng.random_bool(0.25);
    let n_atoms = if exact { rng.random_range(4..=16) } else { rng.random_range(50..=3000) };
    let squeezing = match rng.random_range(0..3) {
        0 => Squeezing::None,
        1 if !exact => Squeezing::TargetDb(-rng.random_range(0.5..8.0)),
        _ => Squeezing::ChiT(rng.random_range(0.0..0.5) / n_atoms as f64),
    };
    let noise = NoiseModel {
        detection_sigma: rng.random_range(0.0..5.0),
        jitter_sigma_dt: rng.random_range(0.0..8e-9),
        omega_rf: 2.0 * std::f64::consts::PI * 1.79e6,
        contrast: if exact { 1.0 } else { rng.random_range(0.7..=1.0) },
        anti_squeeze_excess_db: if rng.random_bool(0.5) { rng.random_range(0.0..8.0) } else { 0.0 },
        detectivity_sx_drop: rng.random_range(0.0..0.05),
        b_phase_drift_per_shot: if rng.random_bool(0.2) { rng.random_range(0.0..1e-4) } else { 0.0 },
    };
    RunConfig {
        n_atoms,
        squeezing,
        transmission: rng.random_range(0.3..0.7),
        noise,
        block: BlockSpec { z: rng.random_range(10..60), y: rng.random_range(10..60), x: 2 * rng.random_range(1..6) },
        n_blocks: rng.random_range(2..6),
        theta_b: if rng.random_bool(0.3) { rng.random_range(0.0..std::f64::consts::TAU) } else { 0.0 },
        engine: if exact { Engine::Exact } else { Engine::Gaussian },
        seed: rng.random(),
        bootstrap_resamples: 100,
        ..RunConfig::default()
    }
}
