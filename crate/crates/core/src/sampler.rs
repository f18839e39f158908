//! Shot-record generation.
//!
//! Every shot draws from its own ChaCha stream `(seed, shot_id)`, so the
//! records do not depend on evaluation order and shots run in parallel.
//!
//! Readout conventions. A subsystem measured along basis `b` is rotated so
//! that `b` maps onto `S_z`, then `(N1 - N2)/2` is recorded:
//!
//! | basis | pulse                | measured |
//! |-------|----------------------|----------|
//! | z     | none                 | `S_z`    |
//! | y     | `exp(-i pi/2 S_x)`   | `S_y`    |
//! | x     | `exp(+i pi/2 S_y)`   | `S_x`    |
//! | -x    | `exp(-i pi/2 S_y)`   | `-S_x`   |
//!
//! Before its readout pulse, B is additionally rotated by `exp(+i theta S_x)`,
//! which turns the measured `S_z` into `cos(theta) S_z - sin(theta) S_y` and
//! `S_y` into `cos(theta) S_y + sin(theta) S_z`. Whenever B needs any pulse,
//! the local-oscillator phase error `omega_rf * delta_t` (plus any configured
//! drift) enters as a rotation about z applied before the pulses.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, TAU};

use nalgebra::{SMatrix, SVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::spin::{apply_z_phase, AxisAngle, SpinRotation, Vec3, X_AXIS, Y_AXIS, Z_AXIS};
use crate::splitter::{moments_from_bipartite, BipartiteFockState, JointMoments, DEFAULT_EXACT_LIMIT};

/// Measurement basis of one subsystem. `MinusX` reads out along the
/// negative x direction (most atoms end in state 2 for a +x polarized spin).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Basis {
    #[serde(rename = "x")]
    X,
    #[serde(rename = "-x")]
    MinusX,
    #[serde(rename = "y")]
    Y,
    #[serde(rename = "z")]
    Z,
}

impl Basis {
    pub fn as_str(self) -> &'static str {
        match self {
            Basis::X => "x",
            Basis::MinusX => "-x",
            Basis::Y => "y",
            Basis::Z => "z",
        }
    }

    /// +1 for every basis except `MinusX`.
    pub fn sign(self) -> f64 {
        if self == Basis::MinusX {
            -1.0
        } else {
            1.0
        }
    }

    pub fn is_x(self) -> bool {
        matches!(self, Basis::X | Basis::MinusX)
    }

    /// Pulse mapping this basis onto z, as `exp(-i angle axis.S)`.
    pub fn readout_pulse(self) -> Option<AxisAngle> {
        match self {
            Basis::Z => None,
            Basis::Y => Some(AxisAngle { axis: X_AXIS, angle: FRAC_PI_2 }),
            Basis::X => Some(AxisAngle { axis: Y_AXIS, angle: -FRAC_PI_2 }),
            Basis::MinusX => Some(AxisAngle { axis: Y_AXIS, angle: FRAC_PI_2 }),
        }
    }
}

impl std::str::FromStr for Basis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" | "+x" => Ok(Basis::X),
            "-x" => Ok(Basis::MinusX),
            "y" => Ok(Basis::Y),
            "z" => Ok(Basis::Z),
            other => Err(invalid(format!("unknown basis {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSetting {
    pub basis_a: Basis,
    pub basis_b: Basis,
    /// Extra rotation of B about x relative to A, in `[0, 2 pi)`.
    pub theta_b: f64,
}

impl MeasurementSetting {
    pub fn new(basis_a: Basis, basis_b: Basis, theta_b: f64) -> Result<Self> {
        if !theta_b.is_finite() {
            return Err(invalid("theta_b must be finite"));
        }
        let mut theta = theta_b.rem_euclid(TAU);
        if theta >= TAU {
            theta = 0.0;
        }
        Ok(Self { basis_a, basis_b, theta_b: theta })
    }

    pub fn both(basis: Basis, theta_b: f64) -> Result<Self> {
        Self::new(basis, basis, theta_b)
    }

    /// Whether B needs a pulse before imaging (and so picks up jitter).
    pub fn b_has_pulse(&self) -> bool {
        self.basis_b != Basis::Z || self.theta_b != 0.0
    }

    /// Rotations applied to B, in order, excluding the phase error.
    fn b_pulses(&self) -> Vec<AxisAngle> {
        let mut pulses = Vec::new();
        if self.theta_b != 0.0 {
            pulses.push(AxisAngle { axis: X_AXIS, angle: -self.theta_b });
        }
        pulses.extend(self.basis_b.readout_pulse());
        pulses
    }

    fn a_pulses(&self) -> Vec<AxisAngle> {
        self.basis_a.readout_pulse().into_iter().collect()
    }
}

/// Knobs of the non-ideal pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Additive Gaussian counting noise per state, in atoms.
    pub detection_sigma: f64,
    /// Standard deviation of the trigger delay, seconds.
    pub jitter_sigma_dt: f64,
    /// Angular frequency converting delay into B phase, rad/s.
    pub omega_rf: f64,
    /// Length of the pre-split mean spin relative to the pure state.
    pub contrast: f64,
    /// Extra variance along the anti-squeezed (y) axis, dB.
    pub anti_squeeze_excess_db: f64,
    /// Fractional loss of detected atoms in x-basis readouts.
    pub detectivity_sx_drop: f64,
    /// Slow drift of B's phase, radians per shot index.
    pub b_phase_drift_per_shot: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::ideal()
    }
}

impl NoiseModel {
    pub fn ideal() -> Self {
        Self {
            detection_sigma: 0.0,
            jitter_sigma_dt: 0.0,
            omega_rf: 0.0,
            contrast: 1.0,
            anti_squeeze_excess_db: 0.0,
            detectivity_sx_drop: 0.0,
            b_phase_drift_per_shot: 0.0,
        }
    }

    /// Detection noise 3 atoms, 4 ns jitter at 2 pi x 1.79 MHz, 96 % contrast,
    /// 3 % x-readout detectivity drop. The anti-squeezing excess is left at
    /// zero; it has no reported value and is set per scenario.
    pub fn experimental() -> Self {
        Self {
            detection_sigma: 3.0,
            jitter_sigma_dt: 4e-9,
            omega_rf: TAU * 1.79e6,
            contrast: 0.96,
            anti_squeeze_excess_db: 0.0,
            detectivity_sx_drop: 0.03,
            b_phase_drift_per_shot: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.detection_sigma,
            self.jitter_sigma_dt,
            self.omega_rf,
            self.contrast,
            self.anti_squeeze_excess_db,
            self.detectivity_sx_drop,
            self.b_phase_drift_per_shot,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(invalid("noise model fields must be finite"));
        }
        if self.detection_sigma < 0.0 || self.jitter_sigma_dt < 0.0 {
            return Err(invalid("noise widths must be non-negative"));
        }
        if !(self.contrast > 0.0 && self.contrast <= 1.0) {
            return Err(invalid("contrast must lie in (0, 1]"));
        }
        if self.anti_squeeze_excess_db < 0.0 {
            return Err(invalid("anti_squeeze_excess_db must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.detectivity_sx_drop) {
            return Err(invalid("detectivity_sx_drop must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Standard deviation of B's phase error, radians.
    pub fn jitter_phase_sigma(&self) -> f64 {
        self.omega_rf * self.jitter_sigma_dt
    }
}

/// One simulated repetition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub shot_id: u64,
    #[serde(rename = "n1A")]
    pub n1a: f64,
    #[serde(rename = "n2A")]
    pub n2a: f64,
    #[serde(rename = "n1B")]
    pub n1b: f64,
    #[serde(rename = "n2B")]
    pub n2b: f64,
    #[serde(rename = "basis_A")]
    pub basis_a: Basis,
    #[serde(rename = "basis_B")]
    pub basis_b: Basis,
    #[serde(rename = "theta_B")]
    pub theta_b: f64,
    pub delta_t_s: f64,
    /// Run seed; with `shot_id` it identifies the random stream of the shot.
    pub seed: u64,
}

impl ShotRecord {
    pub fn setting(&self) -> MeasurementSetting {
        MeasurementSetting { basis_a: self.basis_a, basis_b: self.basis_b, theta_b: self.theta_b }
    }

    /// `(N1 - N2)/2` of A.
    pub fn spin_a(&self) -> f64 {
        0.5 * (self.n1a - self.n2a)
    }

    pub fn spin_b(&self) -> f64 {
        0.5 * (self.n1b - self.n2b)
    }

    pub fn total_a(&self) -> f64 {
        self.n1a + self.n2a
    }

    pub fn total_b(&self) -> f64 {
        self.n1b + self.n2b
    }
}

/// Random stream of one shot.
pub fn shot_rng(seed: u64, shot_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(shot_id);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Classical phase draws of one shot, taken before the outcome.
#[derive(Clone, Copy, Debug)]
struct ShotPhases {
    delta_t: f64,
    /// Common phase of both subsystems (anti-squeezing excess).
    common: f64,
    /// Additional phase of B (jitter and drift), zero without a B pulse.
    b_extra: f64,
}

fn draw_phases(
    rng: &mut ChaCha8Rng,
    noise: &NoiseModel,
    setting: &MeasurementSetting,
    common_sigma: f64,
    shot_id: u64,
) -> ShotPhases {
    let delta_t = noise.jitter_sigma_dt * normal(rng);
    let common = common_sigma * normal(rng);
    let b_extra = if setting.b_has_pulse() {
        noise.omega_rf * delta_t + noise.b_phase_drift_per_shot * shot_id as f64
    } else {
        0.0
    };
    ShotPhases { delta_t, common, b_extra }
}

/// Width of the common phase noise that adds `anti_squeeze_excess_db`
/// to the pre-split `S_y` variance of an x-polarized state.
fn common_phase_sigma(jm: &JointMoments, noise: &NoiseModel) -> Result<f64> {
    if noise.anti_squeeze_excess_db == 0.0 {
        return Ok(0.0);
    }
    let var_y = jm.covariance[1][1] + jm.covariance[4][4] + 2.0 * jm.covariance[1][4];
    let sx = jm.mean[0] + jm.mean[3];
    if sx.abs() < 1e-12 {
        return Err(Error::Model("anti-squeezing excess needs a nonzero mean S_x".into()));
    }
    let excess = var_y * (10f64.powf(noise.anti_squeeze_excess_db / 10.0) - 1.0);
    Ok(excess.max(0.0).sqrt() / sx.abs())
}

fn finish_counts(
    rng: &mut ChaCha8Rng,
    noise: &NoiseModel,
    setting: &MeasurementSetting,
    raw: [f64; 4],
) -> [f64; 4] {
    let mut counts = raw;
    let drop = 1.0 - noise.detectivity_sx_drop;
    if setting.basis_a.is_x() {
        counts[0] *= drop;
        counts[1] *= drop;
    }
    if setting.basis_b.is_x() {
        counts[2] *= drop;
        counts[3] *= drop;
    }
    for c in counts.iter_mut() {
        *c += noise.detection_sigma * normal(rng);
    }
    counts
}

fn make_record(
    shot_id: u64,
    seed: u64,
    setting: &MeasurementSetting,
    counts: [f64; 4],
    delta_t: f64,
) -> ShotRecord {
    ShotRecord {
        shot_id,
        n1a: counts[0],
        n2a: counts[1],
        n1b: counts[2],
        n2b: counts[3],
        basis_a: setting.basis_a,
        basis_b: setting.basis_b,
        theta_b: setting.theta_b,
        delta_t_s: delta_t,
        seed,
    }
}

/// Precomputed propagators for the exact engine, per setting.
struct ExactSetting {
    a: Vec<Vec<SpinRotation>>,
    b: Vec<Vec<SpinRotation>>,
    /// Outcome distribution when no per-shot phase is present.
    static_probs: Option<Vec<(f64, [usize; 4])>>,
}

/// Exact-engine sampler bound to one split state.
pub struct ExactSampler<'a> {
    state: &'a BipartiteFockState,
    noise: NoiseModel,
    common_sigma: f64,
    settings: HashMap<(Basis, Basis, u64), ExactSetting>,
}

fn rotations_for(n_total: usize, pulses: &[AxisAngle]) -> Result<Vec<Vec<SpinRotation>>> {
    pulses
        .iter()
        .map(|p| (0..=n_total).map(|n| SpinRotation::new(n, p.axis, p.angle)).collect())
        .collect()
}

fn cumulative(state: &BipartiteFockState) -> Vec<(f64, [usize; 4])> {
    let mut acc = 0.0;
    state
        .iter()
        .filter_map(|((a, b, c, d), amp)| {
            let p = amp.norm_sqr();
            if p == 0.0 {
                return None;
            }
            acc += p;
            Some((acc, [a, b, c, d]))
        })
        .collect()
}

fn draw_outcome(table: &[(f64, [usize; 4])], u: f64) -> [usize; 4] {
    let total = table.last().map_or(1.0, |t| t.0);
    let target = u * total;
    let idx = table.partition_point(|(c, _)| *c <= target).min(table.len() - 1);
    table[idx].1
}

impl<'a> ExactSampler<'a> {
    pub fn new(state: &'a BipartiteFockState, noise: NoiseModel) -> Result<Self> {
        Self::with_limit(state, noise, DEFAULT_EXACT_LIMIT)
    }

    pub fn with_limit(state: &'a BipartiteFockState, noise: NoiseModel, limit: usize) -> Result<Self> {
        noise.validate()?;
        let n = state.n_atoms_total();
        if n > limit {
            return Err(Error::SizeLimit { n_atoms: n, limit });
        }
        if noise.contrast < 1.0 {
            return Err(Error::Model(
                "contrast below 1 is a preparation imperfection of the moment engine; \
                 the exact engine samples pure states"
                    .into(),
            ));
        }
        let common_sigma = common_phase_sigma(&moments_from_bipartite(state), &noise)?;
        Ok(Self { state, noise, common_sigma, settings: HashMap::new() })
    }

    fn prepare(&mut self, setting: &MeasurementSetting) -> Result<(Basis, Basis, u64)> {
        let key = (setting.basis_a, setting.basis_b, setting.theta_b.to_bits());
        if !self.settings.contains_key(&key) {
            let n = self.state.n_atoms_total();
            let a = rotations_for(n, &setting.a_pulses())?;
            let b = rotations_for(n, &setting.b_pulses())?;
            let per_shot_phase = self.common_sigma > 0.0
                || (setting.b_has_pulse()
                    && (self.noise.jitter_phase_sigma() > 0.0 || self.noise.b_phase_drift_per_shot != 0.0));
            let static_probs = if per_shot_phase {
                None
            } else {
                let mut rotated = self.state.clone();
                apply_pulses(&mut rotated, &a, &b, 0.0, 0.0);
                Some(cumulative(&rotated))
            };
            self.settings.insert(key, ExactSetting { a, b, static_probs });
        }
        Ok(key)
    }

    /// Samples shots with the given ids.
    pub fn sample_ids(
        &mut self,
        setting: &MeasurementSetting,
        ids: &[u64],
        seed: u64,
    ) -> Result<Vec<ShotRecord>> {
        let key = self.prepare(setting)?;
        let prepared = &self.settings[&key];
        let noise = self.noise;
        let common_sigma = self.common_sigma;
        let state = self.state;
        Ok(ids
            .par_iter()
            .map(|&shot_id| {
                let mut rng = shot_rng(seed, shot_id);
                let phases = draw_phases(&mut rng, &noise, setting, common_sigma, shot_id);
                let u: f64 = rng.random();
                let outcome = match &prepared.static_probs {
                    Some(table) => draw_outcome(table, u),
                    None => {
                        let mut rotated = state.clone();
                        apply_pulses(
                            &mut rotated,
                            &prepared.a,
                            &prepared.b,
                            phases.common,
                            phases.common + phases.b_extra,
                        );
                        draw_outcome(&cumulative(&rotated), u)
                    }
                };
                let raw = outcome.map(|n| n as f64);
                let counts = finish_counts(&mut rng, &noise, setting, raw);
                make_record(shot_id, seed, setting, counts, phases.delta_t)
            })
            .collect())
    }
}

fn apply_pulses(
    state: &mut BipartiteFockState,
    a: &[Vec<SpinRotation>],
    b: &[Vec<SpinRotation>],
    phase_a: f64,
    phase_b: f64,
) {
    state.apply_local(
        |n, v: &mut [Complex64]| {
            if phase_a != 0.0 {
                apply_z_phase(v, phase_a);
            }
            for step in a {
                step[n].apply_in_place(v);
            }
        },
        |n, v: &mut [Complex64]| {
            if phase_b != 0.0 {
                apply_z_phase(v, phase_b);
            }
            for step in b {
                step[n].apply_in_place(v);
            }
        },
    );
}

/// Projective sampling from the exact four-mode state. Shot ids run `0..n_shots`.
pub fn sample_exact(
    state: &BipartiteFockState,
    setting: MeasurementSetting,
    noise: NoiseModel,
    n_shots: usize,
    seed: u64,
) -> Result<Vec<ShotRecord>> {
    let ids: Vec<u64> = (0..n_shots as u64).collect();
    ExactSampler::new(state, noise)?.sample_ids(&setting, &ids, seed)
}

type Mat3 = SMatrix<f64, 3, 3>;

/// Active rotation matrix matching `exp(-i angle axis.S)`:
/// `<S> -> R <S>`.
fn rotation_matrix(axis: Vec3, angle: f64) -> Mat3 {
    let unit = nalgebra::Unit::new_normalize(nalgebra::Vector3::from(axis));
    nalgebra::Rotation3::from_axis_angle(&unit, angle).into_inner()
}

fn z_rotation(angle: f64) -> Mat3 {
    rotation_matrix(Z_AXIS, angle)
}

fn compose(pulses: &[AxisAngle]) -> Mat3 {
    pulses
        .iter()
        .fold(Mat3::identity(), |acc, p| rotation_matrix(p.axis, p.angle) * acc)
}

/// Gaussian-engine sampler bound to one set of joint moments.
///
/// The seven variables `(S^A, S^B, N_A)` are drawn jointly normal; each
/// sampled spin vector is rotated exactly (phase noise, theta, readout) and
/// its z component becomes the imbalance `(n1 - n2)/2` around `N_sub/2`.
pub struct GaussianSampler {
    mean: SVector<f64, 7>,
    factor: SMatrix<f64, 7, 7>,
    n_total: f64,
    noise: NoiseModel,
    common_sigma: f64,
}

impl GaussianSampler {
    pub fn new(moments: &JointMoments, noise: NoiseModel) -> Result<Self> {
        noise.validate()?;
        let mut cov = SMatrix::<f64, 7, 7>::zeros();
        let mut mean = SVector::<f64, 7>::zeros();
        for i in 0..6 {
            mean[i] = moments.mean[i];
            for j in 0..6 {
                cov[(i, j)] = moments.covariance[i][j];
            }
            cov[(i, 6)] = moments.number_covariance[i];
            cov[(6, i)] = moments.number_covariance[i];
        }
        mean[6] = moments.n_mean_a;
        cov[(6, 6)] = moments.n_var_a;
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model("non-finite covariance".into()));
        }
        let eig = nalgebra::SymmetricEigen::new(cov);
        let scale = eig.eigenvalues.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let min = eig.eigenvalues.min();
        if min < -1e-9 * scale {
            return Err(Error::Model(format!(
                "covariance is not positive semidefinite (eigenvalue {min:e})"
            )));
        }
        let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        let factor = eig.eigenvectors * SMatrix::<f64, 7, 7>::from_diagonal(&sqrt_vals);
        let common_sigma = common_phase_sigma(moments, &noise)?;
        Ok(Self {
            mean,
            factor,
            n_total: moments.n_atoms_total as f64,
            noise,
            common_sigma,
        })
    }

    pub fn sample_ids(&self, setting: &MeasurementSetting, ids: &[u64], seed: u64) -> Vec<ShotRecord> {
        let rot_a = compose(&setting.a_pulses());
        let rot_b = compose(&setting.b_pulses());
        ids.par_iter()
            .map(|&shot_id| {
                let mut rng = shot_rng(seed, shot_id);
                let phases = draw_phases(&mut rng, &self.noise, setting, self.common_sigma, shot_id);
                let z = SVector::<f64, 7>::from_fn(|_, _| normal(&mut rng));
                let x = self.mean + self.factor * z;
                let n_a = x[6].round().clamp(0.0, self.n_total);
                let n_b = self.n_total - n_a;
                let s_a = nalgebra::Vector3::new(x[0], x[1], x[2]);
                let s_b = nalgebra::Vector3::new(x[3], x[4], x[5]);
                let measured_a = (rot_a * z_rotation(phases.common) * s_a)[2];
                let measured_b = (rot_b * z_rotation(phases.common + phases.b_extra) * s_b)[2];
                let raw = [
                    0.5 * n_a + measured_a,
                    0.5 * n_a - measured_a,
                    0.5 * n_b + measured_b,
                    0.5 * n_b - measured_b,
                ];
                let counts = finish_counts(&mut rng, &self.noise, setting, raw);
                make_record(shot_id, seed, setting, counts, phases.delta_t)
            })
            .collect()
    }
}

/// Gaussian sampling from joint moments. Shot ids run `0..n_shots`.
pub fn sample_gaussian(
    moments: &JointMoments,
    setting: MeasurementSetting,
    noise: NoiseModel,
    n_shots: usize,
    seed: u64,
) -> Result<Vec<ShotRecord>> {
    let ids: Vec<u64> = (0..n_shots as u64).collect();
    Ok(GaussianSampler::new(moments, noise)?.sample_ids(&setting, &ids, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::{make_coherent_state, moments_from_state};
    use crate::splitter::{split_exact, split_moments};

    fn var(v: &[f64]) -> f64 {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    }

    #[test]
    fn basis_parsing_and_setting_normalization() {
        assert_eq!("-x".parse::<Basis>().unwrap(), Basis::MinusX);
        assert!("w".parse::<Basis>().is_err());
        let s = MeasurementSetting::both(Basis::Z, -FRAC_PI_2).unwrap();
        assert!((s.theta_b - 1.5 * std::f64::consts::PI).abs() < 1e-12);
        assert!(MeasurementSetting::both(Basis::Z, f64::NAN).is_err());
    }

    #[test]
    fn vacuum_b_reads_zero_plus_noise() {
        let a = make_coherent_state(5, FRAC_PI_2, 0.0).unwrap();
        let state = BipartiteFockState::embed_in_a(&a);
        let noise = NoiseModel { detection_sigma: 0.5, ..NoiseModel::ideal() };
        let shots = sample_exact(&state, MeasurementSetting::both(Basis::Z, 0.0).unwrap(), noise, 2000, 1).unwrap();
        let b: Vec<f64> = shots.iter().map(|s| s.n1b).collect();
        assert!(b.iter().all(|v| v.abs() < 5.0 * 0.5));
        assert!((var(&b) - 0.25).abs() < 0.05);
    }

    #[test]
    fn exact_noise_free_conserves_atoms() {
        let s = make_coherent_state(8, 1.0, 0.2).unwrap();
        let split = split_exact(&s, 0.5).unwrap();
        for basis in [Basis::X, Basis::MinusX, Basis::Y, Basis::Z] {
            let setting = MeasurementSetting::both(basis, 0.3).unwrap();
            let shots = sample_exact(&split, setting, NoiseModel::ideal(), 300, 9).unwrap();
            for r in shots {
                assert_eq!(r.n1a + r.n2a + r.n1b + r.n2b, 8.0);
            }
        }
    }

    #[test]
    fn exact_sampler_is_deterministic_and_refuses_contrast() {
        let s = make_coherent_state(6, FRAC_PI_2, 0.0).unwrap();
        let split = split_exact(&s, 0.5).unwrap();
        let setting = MeasurementSetting::both(Basis::Y, 0.0).unwrap();
        let noise = NoiseModel { detection_sigma: 1.0, jitter_sigma_dt: 1e-9, omega_rf: 1e8, ..NoiseModel::ideal() };
        let a = sample_exact(&split, setting, noise, 100, 5).unwrap();
        let b = sample_exact(&split, setting, noise, 100, 5).unwrap();
        assert_eq!(a, b);
        let c = sample_exact(&split, setting, noise, 100, 6).unwrap();
        assert_ne!(a, c);
        let lossy = NoiseModel { contrast: 0.9, ..NoiseModel::ideal() };
        assert!(matches!(sample_exact(&split, setting, lossy, 10, 1), Err(Error::Model(_))));
    }

    #[test]
    fn exact_split_css_variance_matches_partition_formula() {
        let n = 12;
        let s = make_coherent_state(n, FRAC_PI_2, 0.0).unwrap();
        let split = split_exact(&s, 0.5).unwrap();
        let setting = MeasurementSetting::both(Basis::Z, 0.0).unwrap();
        let shots = sample_exact(&split, setting, NoiseModel::ideal(), 10_000, 3).unwrap();
        let sz: Vec<f64> = shots.iter().map(|r| r.spin_a()).collect();
        // expected N/8 = 1.5; sampling sd of the variance ~ sqrt(2/n) * 1.5
        let expected = n as f64 / 8.0;
        let tol = 5.0 * expected * (2.0f64 / 10_000.0).sqrt();
        assert!((var(&sz) - expected).abs() < tol, "{}", var(&sz));
    }

    #[test]
    fn gaussian_uncorrelated_gives_zero_cross_covariance() {
        let css = moments_from_state(&make_coherent_state(1000, FRAC_PI_2, 0.0).unwrap());
        let jm = split_moments(&css, 0.5).unwrap();
        let shots = sample_gaussian(&jm, MeasurementSetting::both(Basis::Z, 0.0).unwrap(), NoiseModel::ideal(), 20_000, 2).unwrap();
        let a: Vec<f64> = shots.iter().map(|r| r.spin_a()).collect();
        let b: Vec<f64> = shots.iter().map(|r| r.spin_b()).collect();
        let ma = a.iter().sum::<f64>() / a.len() as f64;
        let mb = b.iter().sum::<f64>() / b.len() as f64;
        let cov = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() - 1) as f64;
        // sd of sample covariance ~ 125 / sqrt(n)
        assert!(cov.abs() < 4.0 * 125.0 / (20_000f64).sqrt(), "{cov}");
        assert!((var(&a) - 125.0).abs() < 5.0 * 125.0 * (2.0f64 / 20_000.0).sqrt());
    }

    #[test]
    fn gaussian_rejects_non_psd() {
        let css = moments_from_state(&make_coherent_state(10, FRAC_PI_2, 0.0).unwrap());
        let mut jm = split_moments(&css, 0.5).unwrap();
        jm.covariance[2][2] = -5.0;
        assert!(matches!(
            sample_gaussian(&jm, MeasurementSetting::both(Basis::Z, 0.0).unwrap(), NoiseModel::ideal(), 1, 0),
            Err(Error::Model(_))
        ));
    }

    #[test]
    fn theta_rotation_convention_agrees_between_engines() {
        // moments of a measured quantity must agree between the exact
        // rotated state and the linear map used by the gaussian engine
        let s = make_coherent_state(6, 1.1, 0.4).unwrap();
        let split = split_exact(&s, 0.5).unwrap();
        let jm = moments_from_bipartite(&split);
        let theta = 0.9;
        for basis in [Basis::Y, Basis::Z, Basis::X, Basis::MinusX] {
            let setting = MeasurementSetting::both(basis, theta).unwrap();
            let a = rotations_for(6, &setting.a_pulses()).unwrap();
            let b = rotations_for(6, &setting.b_pulses()).unwrap();
            let mut rotated = split.clone();
            apply_pulses(&mut rotated, &a, &b, 0.0, 0.0);
            let after = moments_from_bipartite(&rotated);
            let rb = compose(&setting.b_pulses());
            let ra = compose(&setting.a_pulses());
            let sb = rb * nalgebra::Vector3::new(jm.mean[3], jm.mean[4], jm.mean[5]);
            let sa = ra * nalgebra::Vector3::new(jm.mean[0], jm.mean[1], jm.mean[2]);
            assert!((after.mean[5] - sb[2]).abs() < 1e-10, "{basis:?}");
            assert!((after.mean[2] - sa[2]).abs() < 1e-10, "{basis:?}");
        }
    }
}
