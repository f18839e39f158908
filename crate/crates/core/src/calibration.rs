//! Atom-number calibration at the count level.
//!
//! States are ordered `[1A, 2A, 1B, 2B]`. A raw signal is
//! `conversion * detectivity[i] * count[i]` plus Gaussian readout noise.
//! Detectivities are relative to state 1A; the absolute scale comes from the
//! projection noise of an equal superposition of 1A and 2A.
//!
//! There is no region-of-interest step here: counts are integrated signals,
//! so the variance is never taken over a partial-signal subset.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::sampler::shot_rng;

pub type Signals = [f64; 4];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    /// Signal units per atom.
    pub conversion: f64,
    pub detectivity: [f64; 4],
    /// Readout noise per state, signal units.
    pub readout_sigma: f64,
}

impl DetectorModel {
    pub fn identity() -> Self {
        Self { conversion: 1.0, detectivity: [1.0; 4], readout_sigma: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.conversion.is_finite() && self.conversion > 0.0) {
            return Err(invalid("conversion must be positive"));
        }
        if self.detectivity.iter().any(|d| !(*d > 0.0 && *d <= 1.2)) {
            return Err(invalid("detectivities must lie in (0, 1.2]"));
        }
        if !(self.readout_sigma.is_finite() && self.readout_sigma >= 0.0) {
            return Err(invalid("readout_sigma must be >= 0"));
        }
        Ok(())
    }
}

/// Forward model; shot `i` uses random stream `i` of `seed`.
pub fn simulate_raw_signals(true_counts: &[Signals], detector: &DetectorModel, seed: u64) -> Result<Vec<Signals>> {
    detector.validate()?;
    Ok(true_counts
        .iter()
        .enumerate()
        .map(|(i, counts)| {
            let mut rng = shot_rng(seed, i as u64);
            let mut s = [0.0; 4];
            for k in 0..4 {
                let noise: f64 = StandardNormal.sample(&mut rng);
                s[k] = detector.conversion * detector.detectivity[k] * counts[k] + detector.readout_sigma * noise;
            }
            s
        })
        .collect())
}

/// Atom counts of an equal superposition of 1A and 2A (projection noise only).
pub fn css_counts(n_atoms: u64, n_shots: usize, seed: u64) -> Result<Vec<Signals>> {
    let binom = Binomial::new(n_atoms, 0.5).map_err(|e| invalid(e.to_string()))?;
    Ok((0..n_shots)
        .map(|i| {
            let mut rng = shot_rng(seed, i as u64);
            let n1 = binom.sample(&mut rng) as f64;
            [n1, n_atoms as f64 - n1, 0.0, 0.0]
        })
        .collect())
}

/// Counts along a Rabi scan at fixed total atom number: a transfer between
/// A and B followed by independent Rabi rotations within A and within B,
/// each point with binomial projection noise. The three pulse areas advance
/// at incommensurate rates so the scan covers full population transfer.
pub fn rabi_scan_counts(n_atoms: u64, n_points: usize, seed: u64) -> Result<Vec<Signals>> {
    let golden = (5f64.sqrt() - 1.0) / 2.0;
    (0..n_points)
        .map(|i| {
            let t = i as f64 / n_points.max(1) as f64;
            let split = PI * (3.0 * t).fract() * 2.0;
            let rot_a = PI * (7.0 * t + golden).fract() * 2.0;
            let rot_b = PI * (11.0 * golden * t + 0.25).fract() * 2.0;
            let p_a = (split / 2.0).cos().powi(2);
            let p1a = (rot_a / 2.0).cos().powi(2);
            let p1b = (rot_b / 2.0).cos().powi(2);
            let mut rng = shot_rng(seed, i as u64);
            let draw = |n: u64, p: f64, rng: &mut _| -> Result<u64> {
                Ok(Binomial::new(n, p.clamp(0.0, 1.0)).map_err(|e| invalid(e.to_string()))?.sample(rng))
            };
            let n_a = draw(n_atoms, p_a, &mut rng)?;
            let n_b = n_atoms - n_a;
            let n1a = draw(n_a, p1a, &mut rng)?;
            let n1b = draw(n_b, p1b, &mut rng)?;
            Ok([n1a as f64, (n_a - n1a) as f64, n1b as f64, (n_b - n1b) as f64])
        })
        .collect()
}

/// Relative detectivities `(1, d2, d3, d4)` that make the weighted total
/// `sum s_i / d_i` as flat as possible along a scan at fixed atom number.
///
/// Least squares of `s_1` on `(1, s_2, s_3, s_4)` gives `s_1 = c - sum w_i s_i`
/// and `d_i = 1 / w_i`.
pub fn calibrate_detectivity(scan: &[Signals]) -> Result<[f64; 4]> {
    let n = scan.len();
    if n < 8 {
        return Err(Error::Calibration("scan needs at least 8 points".into()));
    }
    let x = DMatrix::from_fn(n, 4, |r, c| if c == 0 { 1.0 } else { scan[r][c] });
    let y = DVector::from_fn(n, |r, _| scan[r][0]);
    let coef = x
        .clone()
        .svd(true, true)
        .solve(&y, 1e-12)
        .map_err(|e| Error::Calibration(e.to_string()))?;
    let residual = &y - &x * &coef;
    let resid_var = residual.norm_squared() / (n - 4) as f64;

    // identifiability: every direction of the regressors must vary well
    // above the noise left after the fit
    let mean: Vec<f64> = (1..4).map(|c| scan.iter().map(|s| s[c]).sum::<f64>() / n as f64).collect();
    let cov = Matrix3::from_fn(|i, j| {
        scan.iter().map(|s| (s[i + 1] - mean[i]) * (s[j + 1] - mean[j])).sum::<f64>() / (n - 1) as f64
    });
    let min_eig = SymmetricEigen::new(cov).eigenvalues.min();
    if !(min_eig > 100.0 * resid_var.max(f64::MIN_POSITIVE)) {
        return Err(Error::Calibration(
            "detectivities are unidentifiable: the scan does not vary the state populations".into(),
        ));
    }
    let mut d = [1.0; 4];
    for k in 1..4 {
        let w = -coef[k];
        if !(w > 0.0) {
            return Err(Error::Calibration(format!("non-positive weight for state {k}")));
        }
        d[k] = 1.0 / w;
    }
    Ok(d)
}

/// Divides each state's signal by its detectivity.
pub fn apply_detectivity(signals: &[Signals], detectivity: &[f64; 4]) -> Vec<Signals> {
    signals.iter().map(|s| [0, 1, 2, 3].map(|k| s[k] / detectivity[k])).collect()
}

const MAX_ITERATIONS: usize = 100;
const REL_TOLERANCE: f64 = 1e-6;

/// Conversion factor from the projection noise of an equal superposition
/// of 1A and 2A (states 0 and 1 of the signals, detectivity-corrected).
///
/// Solves `Var(S_z) = N/4 + sigma^2/2` in atoms with `N` the inferred mean
/// total, by the fixed point `k <- sqrt(V / (M/(4k) + sigma^2/2))`, where `V`
/// and `M` are the signal variance of `(s1 - s2)/2` and the mean of `s1 + s2`.
/// `n_nominal` only sets the starting point.
pub fn calibrate_conversion(css_signals: &[Signals], n_nominal: f64, readout_sigma_atoms: f64) -> Result<f64> {
    let n = css_signals.len();
    if n < 2 {
        return Err(Error::Calibration("need at least two shots".into()));
    }
    if !(n_nominal > 0.0) || !(readout_sigma_atoms >= 0.0) {
        return Err(invalid("n_nominal must be positive and the readout sigma non-negative"));
    }
    let half_diff: Vec<f64> = css_signals.iter().map(|s| 0.5 * (s[0] - s[1])).collect();
    let m = css_signals.iter().map(|s| s[0] + s[1]).sum::<f64>() / n as f64;
    let mu = half_diff.iter().sum::<f64>() / n as f64;
    let v = half_diff.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1) as f64;
    if !(m > 0.0 && v > 0.0) {
        return Err(Error::Calibration("signals carry no projection noise".into()));
    }
    let floor = readout_sigma_atoms * readout_sigma_atoms / 2.0;
    let mut k = m / n_nominal;
    for _ in 0..MAX_ITERATIONS {
        let next = (v / (m / (4.0 * k) + floor)).sqrt();
        if !next.is_finite() {
            break;
        }
        if (next - k).abs() <= REL_TOLERANCE * next {
            return Ok(next);
        }
        k = next;
    }
    Err(Error::Calibration(format!("conversion did not converge in {MAX_ITERATIONS} iterations")))
}

/// Result of a full calibration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub conversion: f64,
    pub detectivity: [f64; 4],
}

impl Calibration {
    pub fn invert(&self, signals: &[Signals]) -> Vec<Signals> {
        signals
            .iter()
            .map(|s| [0, 1, 2, 3].map(|k| s[k] / (self.conversion * self.detectivity[k])))
            .collect()
    }
}

/// Detectivities from the scan, then the conversion from the
/// detectivity-corrected superposition shots.
pub fn calibrate(scan: &[Signals], css_signals: &[Signals], n_nominal: f64, readout_sigma_atoms: f64) -> Result<Calibration> {
    let detectivity = calibrate_detectivity(scan)?;
    let corrected = apply_detectivity(css_signals, &detectivity);
    let conversion = calibrate_conversion(&corrected, n_nominal, readout_sigma_atoms)?;
    Ok(Calibration { conversion, detectivity })
}

/// Both calibrations fitted together: alternate between the scan fit,
/// rescaled by the current conversion, and the conversion fit on signals
/// corrected by the current detectivities, until both settle.
pub fn calibrate_joint(
    scan: &[Signals],
    css_signals: &[Signals],
    n_nominal: f64,
    readout_sigma_atoms: f64,
) -> Result<Calibration> {
    let mut conversion = 1.0;
    let mut detectivity = [1.0; 4];
    for _ in 0..MAX_ITERATIONS {
        let scaled: Vec<Signals> = scan.iter().map(|s| s.map(|v| v / conversion)).collect();
        let next_d = calibrate_detectivity(&scaled)?;
        let next_k = calibrate_conversion(&apply_detectivity(css_signals, &next_d), n_nominal, readout_sigma_atoms)?;
        let settled = (next_k - conversion).abs() <= REL_TOLERANCE * next_k
            && next_d.iter().zip(&detectivity).all(|(a, b)| (a - b).abs() <= REL_TOLERANCE);
        conversion = next_k;
        detectivity = next_d;
        if settled {
            return Ok(Calibration { conversion, detectivity });
        }
    }
    Err(Error::Calibration("joint calibration did not settle".into()))
}
