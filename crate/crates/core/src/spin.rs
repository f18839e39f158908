//! Collective spin of N two-level atoms in the symmetric (Dicke) subspace.
//!
//! Basis index `k = 0..=N` counts the atoms in state 1, so the `S_z`
//! eigenvalue is `m = k - N/2` and the vector is ordered by ascending `m`.
//! Rotations follow `U = exp(-i angle axis.S)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::TridiagonalEigen;

const NORM_TOL: f64 = 1e-12;
const AXIS_TOL: f64 = 1e-12;

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

pub const X_AXIS: Vec3 = [1.0, 0.0, 0.0];
pub const Y_AXIS: Vec3 = [0.0, 1.0, 0.0];
pub const Z_AXIS: Vec3 = [0.0, 0.0, 1.0];

/// Pure symmetric state of `n_atoms` pseudo-spins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDickeState")]
pub struct DickeState {
    n_atoms: usize,
    amplitudes: Vec<Complex64>,
}

#[derive(Deserialize)]
struct RawDickeState {
    n_atoms: usize,
    amplitudes: Vec<Complex64>,
}

impl TryFrom<RawDickeState> for DickeState {
    type Error = Error;

    fn try_from(raw: RawDickeState) -> Result<Self> {
        DickeState::new(raw.n_atoms, raw.amplitudes)
    }
}

impl DickeState {
    /// Validates length and normalization.
    pub fn new(n_atoms: usize, amplitudes: Vec<Complex64>) -> Result<Self> {
        if n_atoms < 1 {
            return Err(invalid("n_atoms must be at least 1"));
        }
        if amplitudes.len() != n_atoms + 1 {
            return Err(invalid(format!(
                "expected {} amplitudes for {} atoms, got {}",
                n_atoms + 1,
                n_atoms,
                amplitudes.len()
            )));
        }
        let norm = norm_sqr(&amplitudes);
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(invalid(format!("state norm {norm} differs from 1")));
        }
        Ok(Self { n_atoms, amplitudes })
    }

    /// Normalizes the supplied amplitudes first.
    pub fn normalized(n_atoms: usize, mut amplitudes: Vec<Complex64>) -> Result<Self> {
        let norm = norm_sqr(&amplitudes).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(invalid("cannot normalize a zero or non-finite vector"));
        }
        amplitudes.iter_mut().for_each(|a| *a /= norm);
        Self::new(n_atoms, amplitudes)
    }

    /// The Dicke state with `k` atoms in state 1.
    pub fn basis(n_atoms: usize, k: usize) -> Result<Self> {
        if k > n_atoms {
            return Err(invalid(format!("basis index {k} exceeds {n_atoms}")));
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); n_atoms + 1];
        amps[k] = Complex64::new(1.0, 0.0);
        Self::new(n_atoms, amps)
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amplitudes
    }

    pub fn spin_length(&self) -> f64 {
        self.n_atoms as f64 / 2.0
    }

    pub fn norm_sqr(&self) -> f64 {
        norm_sqr(&self.amplitudes)
    }

    /// |<self|other>|^2
    pub fn fidelity(&self, other: &DickeState) -> f64 {
        assert_eq!(self.n_atoms, other.n_atoms);
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum::<Complex64>()
            .norm_sqr()
    }
}

fn norm_sqr(v: &[Complex64]) -> f64 {
    v.iter().map(|a| a.norm_sqr()).sum()
}

/// `ln k!` for `k = 0..=n`.
pub(crate) fn ln_factorials(n: usize) -> Vec<f64> {
    let mut table = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    table.push(0.0);
    for k in 1..=n {
        acc += (k as f64).ln();
        table.push(acc);
    }
    table
}

/// `sqrt((N - k)(k + 1))`, the `S_+` matrix element from index `k` to `k + 1`.
#[inline]
pub(crate) fn raising_element(n_atoms: usize, k: usize) -> f64 {
    (((n_atoms - k) * (k + 1)) as f64).sqrt()
}

/// Product state of N spins pointing along (polar, azimuth).
///
/// Amplitudes are `sqrt(C(N, k)) cos^k(polar/2) sin^(N-k)(polar/2) e^{-i azimuth m}`,
/// which equals `R_z(azimuth) R_y(polar)` applied to the fully z-polarized state.
pub fn make_coherent_state(n_atoms: usize, polar: f64, azimuth: f64) -> Result<DickeState> {
    if n_atoms < 1 {
        return Err(invalid("n_atoms must be at least 1"));
    }
    if !polar.is_finite() || !azimuth.is_finite() {
        return Err(invalid("angles must be finite"));
    }
    let lnf = ln_factorials(n_atoms);
    let (c, s) = ((polar / 2.0).cos(), (polar / 2.0).sin());
    let j = n_atoms as f64 / 2.0;
    let mut amps = Vec::with_capacity(n_atoms + 1);
    for k in 0..=n_atoms {
        let up = k;
        let down = n_atoms - k;
        // sign of cos^up sin^down handled separately so that logs stay real
        let mut sign = 1.0;
        let mut log_mag = 0.5 * (lnf[n_atoms] - lnf[k] - lnf[n_atoms - k]);
        let mut zero = false;
        for (base, power) in [(c, up), (s, down)] {
            if power == 0 {
                continue;
            }
            if base == 0.0 {
                zero = true;
                break;
            }
            log_mag += power as f64 * base.abs().ln();
            if base < 0.0 && power % 2 == 1 {
                sign = -sign;
            }
        }
        if zero {
            amps.push(Complex64::new(0.0, 0.0));
            continue;
        }
        let m = k as f64 - j;
        amps.push(Complex64::from_polar(sign * log_mag.exp(), -azimuth * m));
    }
    DickeState::normalized(n_atoms, amps)
}

/// Precomputed propagator `exp(-i angle axis.S)` for one atom number.
///
/// The generator is tridiagonal in the Dicke basis; a diagonal phase gauge
/// makes it real symmetric, and its eigendecomposition gives the exponential
/// without any series truncation.
#[derive(Clone, Debug)]
pub struct SpinRotation {
    n_atoms: usize,
    kind: RotationKind,
}

#[derive(Clone, Debug)]
enum RotationKind {
    Diagonal(Vec<Complex64>),
    Tridiagonal {
        gauge: Vec<Complex64>,
        eigen: TridiagonalEigen,
        phases: Vec<Complex64>,
    },
}

pub(crate) fn check_axis(axis: Vec3) -> Result<()> {
    let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    if !norm.is_finite() || (norm - 1.0).abs() > AXIS_TOL {
        return Err(invalid(format!("rotation axis {axis:?} is not a unit vector")));
    }
    Ok(())
}

impl SpinRotation {
    pub fn new(n_atoms: usize, axis: Vec3, angle: f64) -> Result<Self> {
        check_axis(axis)?;
        if !angle.is_finite() {
            return Err(invalid("rotation angle must be finite"));
        }
        let j = n_atoms as f64 / 2.0;
        let dim = n_atoms + 1;
        let transverse = axis[0].hypot(axis[1]);
        if transverse == 0.0 || angle == 0.0 {
            let phases = (0..dim)
                .map(|k| Complex64::from_polar(1.0, -angle * axis[2] * (k as f64 - j)))
                .collect();
            return Ok(Self { n_atoms, kind: RotationKind::Diagonal(phases) });
        }
        let phi = axis[1].atan2(axis[0]);
        let diag: Vec<f64> = (0..dim).map(|k| axis[2] * (k as f64 - j)).collect();
        let off: Vec<f64> = (0..n_atoms)
            .map(|k| transverse * raising_element(n_atoms, k) / 2.0)
            .collect();
        let eigen = TridiagonalEigen::new(&diag, &off)?;
        let phases = eigen
            .eigenvalues()
            .iter()
            .map(|&lambda| Complex64::from_polar(1.0, -angle * lambda))
            .collect();
        let gauge = (0..dim).map(|k| Complex64::from_polar(1.0, -phi * k as f64)).collect();
        Ok(Self { n_atoms, kind: RotationKind::Tridiagonal { gauge, eigen, phases } })
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    /// Applies the rotation to a raw amplitude vector of length `N + 1`.
    pub fn apply_in_place(&self, v: &mut [Complex64]) {
        assert_eq!(v.len(), self.n_atoms + 1, "amplitude vector length mismatch");
        match &self.kind {
            RotationKind::Diagonal(phases) => {
                v.iter_mut().zip(phases).for_each(|(a, p)| *a *= p);
            }
            RotationKind::Tridiagonal { gauge, eigen, phases } => {
                v.iter_mut().zip(gauge).for_each(|(a, g)| *a *= g.conj());
                eigen.project(v);
                v.iter_mut().zip(phases).for_each(|(a, p)| *a *= p);
                eigen.reconstruct(v);
                v.iter_mut().zip(gauge).for_each(|(a, g)| *a *= g);
            }
        }
    }

    pub fn apply(&self, state: &DickeState) -> DickeState {
        assert_eq!(state.n_atoms, self.n_atoms);
        let mut amps = state.amplitudes.clone();
        self.apply_in_place(&mut amps);
        DickeState { n_atoms: state.n_atoms, amplitudes: amps }
    }
}

pub fn apply_rotation(state: &DickeState, axis: Vec3, angle: f64) -> Result<DickeState> {
    Ok(SpinRotation::new(state.n_atoms, axis, angle)?.apply(state))
}

/// `exp(-i phase S_z)` applied in place; cheaper than building a `SpinRotation`.
pub(crate) fn apply_z_phase(v: &mut [Complex64], phase: f64) {
    let j = (v.len() - 1) as f64 / 2.0;
    for (k, a) in v.iter_mut().enumerate() {
        *a *= Complex64::from_polar(1.0, -phase * (k as f64 - j));
    }
}

/// Axis and angle of a rotation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisAngle {
    pub axis: Vec3,
    pub angle: f64,
}

impl AxisAngle {
    pub fn identity() -> Self {
        Self { axis: Z_AXIS, angle: 0.0 }
    }
}

/// One-axis twisting `exp(-i chi_t S_z^2)` followed by a rotation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OatSpec {
    pub chi_t: f64,
    pub post_rotation: AxisAngle,
}

impl OatSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.chi_t.is_finite() {
            return Err(invalid("chi_t must be finite"));
        }
        check_axis(self.post_rotation.axis)
    }
}

pub fn apply_oat(state: &DickeState, spec: &OatSpec) -> Result<DickeState> {
    spec.validate()?;
    let j = state.spin_length();
    let mut amps = state.amplitudes.clone();
    for (k, a) in amps.iter_mut().enumerate() {
        let m = k as f64 - j;
        *a *= Complex64::from_polar(1.0, -spec.chi_t * m * m);
    }
    let twisted = DickeState { n_atoms: state.n_atoms, amplitudes: amps };
    let AxisAngle { axis, angle } = spec.post_rotation;
    apply_rotation(&twisted, axis, angle)
}

/// First and symmetrized second moments of the collective spin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinMoments {
    pub mean: Vec3,
    /// `1/2 <S_i S_j + S_j S_i>`
    pub second_moments: Mat3,
    pub n_atoms: usize,
}

impl SpinMoments {
    pub fn covariance(&self) -> Mat3 {
        let mut c = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                c[i][j] = self.second_moments[i][j] - self.mean[i] * self.mean[j];
            }
        }
        c
    }

    pub fn variance(&self, i: usize) -> f64 {
        self.second_moments[i][i] - self.mean[i] * self.mean[i]
    }

    /// `Var(n.S)` for a unit vector `n`.
    pub fn variance_along(&self, n: Vec3) -> f64 {
        let c = self.covariance();
        let mut v = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                v += n[i] * c[i][j] * n[j];
            }
        }
        v
    }

    pub fn mean_length(&self) -> f64 {
        dot(self.mean, self.mean).sqrt()
    }

    /// Moments with every covariance entry scaled by `factor` (mean unchanged).
    pub fn with_scaled_covariance(&self, factor: f64) -> Self {
        let c = self.covariance();
        let mut out = *self;
        for i in 0..3 {
            for j in 0..3 {
                out.second_moments[i][j] = factor * c[i][j] + self.mean[i] * self.mean[j];
            }
        }
        out
    }
}

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Exact expectation values from the amplitudes.
pub fn moments_from_state(state: &DickeState) -> SpinMoments {
    let n = state.n_atoms;
    let c = &state.amplitudes;
    let j = state.spin_length();

    let mut sz = 0.0;
    let mut sz2 = 0.0;
    for (k, a) in c.iter().enumerate() {
        let m = k as f64 - j;
        let p = a.norm_sqr();
        sz += m * p;
        sz2 += m * m * p;
    }

    // <S+>, <S+ Sz + Sz S+>, <S+^2>
    let mut s_plus = Complex64::new(0.0, 0.0);
    let mut s_plus_z = Complex64::new(0.0, 0.0);
    let mut s_plus2 = Complex64::new(0.0, 0.0);
    for k in 0..n {
        let m = k as f64 - j;
        let term = c[k + 1].conj() * c[k] * raising_element(n, k);
        s_plus += term;
        s_plus_z += term * (2.0 * m + 1.0);
        if k + 2 <= n {
            s_plus2 +=
                c[k + 2].conj() * c[k] * raising_element(n, k) * raising_element(n, k + 1);
        }
    }

    let casimir = j * (j + 1.0);
    let sxx = 0.5 * (casimir - sz2 + s_plus2.re);
    let syy = 0.5 * (casimir - sz2 - s_plus2.re);
    let sxy = 0.5 * s_plus2.im;
    let sxz = 0.5 * s_plus_z.re;
    let syz = 0.5 * s_plus_z.im;

    SpinMoments {
        mean: [s_plus.re, s_plus.im, sz],
        second_moments: [[sxx, sxy, sxz], [sxy, syy, syz], [sxz, syz, sz2]],
        n_atoms: n,
    }
}

/// `10 log10(N Var(n.S) / |<S>|^2)`.
pub fn wineland_parameter(moments: &SpinMoments, squeezed_axis: Vec3) -> Result<f64> {
    check_axis(squeezed_axis)?;
    let len2 = dot(moments.mean, moments.mean);
    if len2 <= 0.0 {
        return Err(Error::UndefinedValue("mean spin vanishes; squeezing parameter undefined".into()));
    }
    let xi2 = moments.n_atoms as f64 * moments.variance_along(squeezed_axis) / len2;
    Ok(10.0 * xi2.log10())
}

/// Smallest variance in the y-z plane and the angle `alpha` of the
/// rotation about x (`exp(-i alpha S_x)`) that brings that direction onto z.
///
/// After the rotation `S_z -> cos(alpha) S_z + sin(alpha) S_y`, so the measured
/// variance along z is the variance along `(0, sin alpha, cos alpha)`.
pub fn min_yz_variance(moments: &SpinMoments) -> (f64, f64) {
    let c = moments.covariance();
    let (vyy, vzz, vyz) = (c[1][1], c[2][2], c[1][2]);
    // direction (sin a, cos a) in (y, z): V(a) = vyy s^2 + vzz c^2 + 2 vyz s c
    //      = (vyy + vzz)/2 + (vzz - vyy)/2 cos 2a + vyz sin 2a
    let half_trace = 0.5 * (vyy + vzz);
    let radius = (0.25 * (vzz - vyy).powi(2) + vyz * vyz).sqrt();
    let min_var = half_trace - radius;
    let alpha = 0.5 * (-2.0 * vyz).atan2(vyy - vzz);
    (min_var, alpha)
}

/// Wineland parameter (dB) along the best transverse direction of an
/// x-polarized state.
pub fn best_yz_squeezing_db(moments: &SpinMoments) -> Result<f64> {
    let len2 = dot(moments.mean, moments.mean);
    if len2 <= 0.0 {
        return Err(Error::UndefinedValue("mean spin vanishes; squeezing parameter undefined".into()));
    }
    let (min_var, _) = min_yz_variance(moments);
    Ok(10.0 * (moments.n_atoms as f64 * min_var / len2).log10())
}

fn twisted_css_moments(n_atoms: usize, chi_t: f64) -> Result<SpinMoments> {
    let css = make_coherent_state(n_atoms, std::f64::consts::FRAC_PI_2, 0.0)?;
    let twisted = apply_oat(&css, &OatSpec { chi_t, post_rotation: AxisAngle::identity() })?;
    Ok(moments_from_state(&twisted))
}

/// Twisting strength that squeezes an x-polarized coherent state of
/// `n_atoms` to `target_db` (negative) along its best transverse axis.
///
/// A logarithmic scan brackets the first crossing of the target; a
/// golden-section search then minimizes the squared dB residual inside the
/// bracket, where the squeezing is monotone in `chi_t`.
pub fn chi_t_for_squeezing(n_atoms: usize, target_db: f64) -> Result<f64> {
    if !(target_db < 0.0) {
        return Err(invalid("squeezing target must be negative dB"));
    }
    if n_atoms < 2 {
        return Err(invalid("squeezing needs at least two atoms"));
    }
    let db_at = |chi: f64| -> Result<f64> { best_yz_squeezing_db(&twisted_css_moments(n_atoms, chi)?) };

    let mut lo = 0.0;
    let mut hi = 1e-6 / n_atoms as f64;
    let mut previous_db = 0.0;
    loop {
        let db = db_at(hi)?;
        if db <= target_db {
            break;
        }
        if db > previous_db + 1e-9 || hi > std::f64::consts::PI {
            return Err(Error::UndefinedValue(format!(
                "{target_db} dB squeezing is not reachable with {n_atoms} atoms"
            )));
        }
        previous_db = db;
        lo = hi;
        hi *= 1.25;
    }

    let residual = |chi: f64| -> Result<f64> { Ok((db_at(chi)? - target_db).powi(2)) };
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = residual(x1)?;
    let mut f2 = residual(x2)?;
    while (b - a) > 1e-13 * b.max(1e-300) {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = residual(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = residual(x2)?;
        }
    }
    Ok(0.5 * (a + b))
}

/// Coherent state along x, twisted by `chi_t` and rotated about x so that
/// the squeezed quadrature lies along z (the anti-squeezed one along y).
pub fn squeezed_state(n_atoms: usize, chi_t: f64) -> Result<(DickeState, OatSpec)> {
    let moments = twisted_css_moments(n_atoms, chi_t)?;
    let (_, alpha) = min_yz_variance(&moments);
    let spec = OatSpec { chi_t, post_rotation: AxisAngle { axis: X_AXIS, angle: alpha } };
    let css = make_coherent_state(n_atoms, std::f64::consts::FRAC_PI_2, 0.0)?;
    Ok((apply_oat(&css, &spec)?, spec))
}
