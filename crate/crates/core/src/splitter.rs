//! Coherent splitting of one collective spin into subsystems A and B.
//!
//! Two engines: an exact four-mode Fock-state calculation for small atom
//! numbers and closed-form moment propagation (binomial partition) for any
//! atom number. The beam splitter maps each internal state independently as
//! `a -> t a_A + r a_B` with `t = sqrt(p)` and `r = i sqrt(1 - p)`.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::spin::{raising_element, DickeState, SpinMoments, SpinRotation};

pub const DEFAULT_EXACT_LIMIT: usize = 16;

/// Occupations `(n1A, n2A, n1B, n2B)`.
pub type FockKey = (usize, usize, usize, usize);

/// Pure state of N atoms distributed over `|1A>, |2A>, |1B>, |2B>`.
///
/// Stored as number sectors: for each `n_A` (and `n_B = N - n_A`) a dense
/// `(n_A + 1) x (n_B + 1)` block indexed by `(n1A, n1B)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BipartiteFockState {
    n_atoms_total: usize,
    amps: Vec<Complex64>,
}

/// Offset of sector `n_a` in the flat amplitude vector.
fn sector_offset(n_total: usize, n_a: usize) -> usize {
    // sum_{a < n_a} (a + 1)(N - a + 1)
    (0..n_a).map(|a| (a + 1) * (n_total - a + 1)).sum()
}

fn total_len(n_total: usize) -> usize {
    sector_offset(n_total, n_total + 1)
}

impl BipartiteFockState {
    fn zeros(n_atoms_total: usize) -> Self {
        Self { n_atoms_total, amps: vec![Complex64::new(0.0, 0.0); total_len(n_atoms_total)] }
    }

    fn index(&self, key: FockKey) -> Option<usize> {
        let (n1a, n2a, n1b, n2b) = key;
        let n_a = n1a + n2a;
        if n_a + n1b + n2b != self.n_atoms_total {
            return None;
        }
        let n_b = n1b + n2b;
        Some(sector_offset(self.n_atoms_total, n_a) + n1a * (n_b + 1) + n1b)
    }

    /// Builds a state from explicit amplitudes; every key must satisfy the
    /// total-number constraint and the result must be normalized.
    pub fn from_map(n_atoms_total: usize, map: &BTreeMap<FockKey, Complex64>) -> Result<Self> {
        let mut state = Self::zeros(n_atoms_total);
        for (&key, &amp) in map {
            let idx = state
                .index(key)
                .ok_or_else(|| invalid(format!("key {key:?} does not hold {n_atoms_total} atoms")))?;
            state.amps[idx] = amp;
        }
        let norm = state.norm_sqr();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("bipartite state norm {norm} differs from 1")));
        }
        Ok(state)
    }

    /// Product of a Dicke state in A and an independent one in B.
    pub fn product(a: &DickeState, b: &DickeState) -> Self {
        let n_a = a.n_atoms();
        let n_b = b.n_atoms();
        let mut state = Self::zeros(n_a + n_b);
        let off = sector_offset(n_a + n_b, n_a);
        for (ka, ca) in a.amplitudes().iter().enumerate() {
            for (kb, cb) in b.amplitudes().iter().enumerate() {
                state.amps[off + ka * (n_b + 1) + kb] = ca * cb;
            }
        }
        state
    }

    /// A Dicke state living entirely in subsystem A (B empty).
    pub fn embed_in_a(a: &DickeState) -> Self {
        let n = a.n_atoms();
        let mut state = Self::zeros(n);
        let off = sector_offset(n, n);
        for (ka, ca) in a.amplitudes().iter().enumerate() {
            state.amps[off + ka] = *ca;
        }
        state
    }

    pub fn n_atoms_total(&self) -> usize {
        self.n_atoms_total
    }

    pub fn amplitude(&self, key: FockKey) -> Complex64 {
        self.index(key).map_or(Complex64::new(0.0, 0.0), |i| self.amps[i])
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// All basis keys with their amplitudes, in a fixed order.
    pub fn iter(&self) -> impl Iterator<Item = (FockKey, Complex64)> + '_ {
        let n = self.n_atoms_total;
        (0..=n).flat_map(move |n_a| {
            let n_b = n - n_a;
            let off = sector_offset(n, n_a);
            (0..=n_a).flat_map(move |ka| {
                (0..=n_b).map(move |kb| {
                    ((ka, n_a - ka, kb, n_b - kb), self.amps[off + ka * (n_b + 1) + kb])
                })
            })
        })
    }

    /// Nonzero amplitudes keyed by occupation.
    pub fn to_map(&self) -> BTreeMap<FockKey, Complex64> {
        self.iter().filter(|(_, a)| a.norm_sqr() > 0.0).collect()
    }

    pub(crate) fn sector_mut(&mut self, n_a: usize) -> &mut [Complex64] {
        let n = self.n_atoms_total;
        let off = sector_offset(n, n_a);
        let len = (n_a + 1) * (n - n_a + 1);
        &mut self.amps[off..off + len]
    }

    /// Applies independent local unitaries on A and B. `rot_a(n_a)` and
    /// `rot_b(n_b)` return the rotation for the given subsystem atom number.
    pub(crate) fn apply_local<FA, FB>(&mut self, mut rot_a: FA, mut rot_b: FB)
    where
        FA: FnMut(usize, &mut [Complex64]),
        FB: FnMut(usize, &mut [Complex64]),
    {
        let n = self.n_atoms_total;
        for n_a in 0..=n {
            let n_b = n - n_a;
            let block = self.sector_mut(n_a);
            // rows: k_a, columns: k_b
            let mut column = vec![Complex64::new(0.0, 0.0); n_a + 1];
            for kb in 0..=n_b {
                for ka in 0..=n_a {
                    column[ka] = block[ka * (n_b + 1) + kb];
                }
                rot_a(n_a, &mut column);
                for ka in 0..=n_a {
                    block[ka * (n_b + 1) + kb] = column[ka];
                }
            }
            for ka in 0..=n_a {
                rot_b(n_b, &mut block[ka * (n_b + 1)..(ka + 1) * (n_b + 1)]);
            }
        }
    }

    /// Local rotations given as precomputed propagators per subsystem size.
    pub fn rotate_local(&mut self, rot_a: &[SpinRotation], rot_b: &[SpinRotation]) {
        self.apply_local(|n, v| rot_a[n].apply_in_place(v), |n, v| rot_b[n].apply_in_place(v));
    }
}

/// Split by independent beam splitters on both internal states.
pub fn split_exact(state: &DickeState, transmission: f64) -> Result<BipartiteFockState> {
    split_exact_with_limit(state, transmission, DEFAULT_EXACT_LIMIT)
}

pub fn split_exact_with_limit(
    state: &DickeState,
    transmission: f64,
    limit: usize,
) -> Result<BipartiteFockState> {
    let n = state.n_atoms();
    if n > limit {
        return Err(Error::SizeLimit { n_atoms: n, limit });
    }
    if !(0.0..=1.0).contains(&transmission) {
        return Err(invalid(format!("transmission {transmission} outside [0, 1]")));
    }
    let t = transmission.sqrt();
    let r = Complex64::new(0.0, (1.0 - transmission).sqrt());
    let binom = binomial_table(n);
    // t^a r^b for a, b up to n
    let t_pow: Vec<f64> = (0..=n).map(|a| t.powi(a as i32)).collect();
    let r_pow: Vec<Complex64> = (0..=n).map(|b| r.powi(b as i32)).collect();

    let mut out = BipartiteFockState::zeros(n);
    for (n1, c) in state.amplitudes().iter().enumerate() {
        if c.norm_sqr() == 0.0 {
            continue;
        }
        let n2 = n - n1;
        for k1 in 0..=n1 {
            for k2 in 0..=n2 {
                let weight = (binom[n1][k1] * binom[n2][k2]).sqrt();
                let amp = c * weight * t_pow[n1 + n2 - k1 - k2] * r_pow[k1 + k2];
                let idx = out.index((n1 - k1, n2 - k2, k1, k2)).expect("key within N");
                out.amps[idx] += amp;
            }
        }
    }
    // only rounding separates this from 1; renormalize
    let norm = out.norm_sqr().sqrt();
    out.amps.iter_mut().for_each(|a| *a /= norm);
    Ok(out)
}

fn binomial_table(n: usize) -> Vec<Vec<f64>> {
    let mut table = vec![vec![0.0; n + 1]; n + 1];
    for i in 0..=n {
        table[i][0] = 1.0;
        for k in 1..=i {
            table[i][k] = table[i - 1][k - 1] + if k < i { table[i - 1][k] } else { 0.0 };
        }
    }
    table
}

/// Moments of the two collective spins after splitting.
///
/// Components are ordered `(Sx^A, Sy^A, Sz^A, Sx^B, Sy^B, Sz^B)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointMoments {
    pub mean: [f64; 6],
    pub covariance: [[f64; 6]; 6],
    pub n_mean_a: f64,
    pub n_mean_b: f64,
    pub n_var_a: f64,
    pub n_var_b: f64,
    /// `Cov(S_k, N_A)` for the six spin components.
    pub number_covariance: [f64; 6],
    pub n_atoms_total: usize,
}

impl JointMoments {
    pub fn variance(&self, k: usize) -> f64 {
        self.covariance[k][k]
    }

    /// Moments of subsystem A (`system == 0`) or B (`system == 1`).
    pub fn subsystem_mean(&self, system: usize) -> [f64; 3] {
        let o = 3 * system;
        [self.mean[o], self.mean[o + 1], self.mean[o + 2]]
    }

    /// Largest elementwise difference to another set of moments.
    pub fn max_abs_diff(&self, other: &JointMoments) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..6 {
            d = d.max((self.mean[i] - other.mean[i]).abs());
            d = d.max((self.number_covariance[i] - other.number_covariance[i]).abs());
            for j in 0..6 {
                d = d.max((self.covariance[i][j] - other.covariance[i][j]).abs());
            }
        }
        for (a, b) in [
            (self.n_mean_a, other.n_mean_a),
            (self.n_mean_b, other.n_mean_b),
            (self.n_var_a, other.n_var_a),
            (self.n_var_b, other.n_var_b),
        ] {
            d = d.max((a - b).abs());
        }
        d
    }

    /// Smallest eigenvalue of the 6x6 covariance.
    pub fn min_covariance_eigenvalue(&self) -> f64 {
        let m = nalgebra::Matrix6::from_fn(|i, j| self.covariance[i][j]);
        m.symmetric_eigenvalues().min()
    }
}

/// Closed-form partition of pre-split moments with transmission `p`.
///
/// With `q = 1 - p` and spin-1/2 atoms assigned independently to A or B:
/// `Cov(A_i, A_j) = p^2 C_ij + p q N/4 d_ij`,
/// `Cov(B_i, B_j) = q^2 C_ij + p q N/4 d_ij`,
/// `Cov(A_i, B_j) = p q (C_ij - N/4 d_ij)`,
/// `Cov(A_i, N_A) = p q <S_i>`, `Var(N_A) = p q N`.
pub fn split_moments(moments: &SpinMoments, p: f64) -> Result<JointMoments> {
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid(format!("transmission {p} outside (0, 1)")));
    }
    let q = 1.0 - p;
    let n = moments.n_atoms as f64;
    let c = moments.covariance();
    let mut mean = [0.0; 6];
    let mut cov = [[0.0; 6]; 6];
    let mut number_covariance = [0.0; 6];
    for i in 0..3 {
        mean[i] = p * moments.mean[i];
        mean[i + 3] = q * moments.mean[i];
        number_covariance[i] = p * q * moments.mean[i];
        number_covariance[i + 3] = -p * q * moments.mean[i];
        for j in 0..3 {
            let partition = if i == j { n / 4.0 } else { 0.0 };
            cov[i][j] = p * p * c[i][j] + p * q * partition;
            cov[i + 3][j + 3] = q * q * c[i][j] + p * q * partition;
            let cross = p * q * (c[i][j] - partition);
            cov[i][j + 3] = cross;
            cov[j + 3][i] = cross;
        }
    }
    Ok(JointMoments {
        mean,
        covariance: cov,
        n_mean_a: p * n,
        n_mean_b: q * n,
        n_var_a: p * q * n,
        n_var_b: p * q * n,
        number_covariance,
        n_atoms_total: moments.n_atoms,
    })
}

/// Which component an operator acts on.
#[derive(Clone, Copy)]
enum Component {
    X,
    Y,
    Z,
}

/// `S_c` of subsystem A (`on_b == false`) or B applied to the state.
fn apply_spin(state: &BipartiteFockState, on_b: bool, comp: Component) -> Vec<Complex64> {
    let n = state.n_atoms_total;
    let mut out = vec![Complex64::new(0.0, 0.0); state.amps.len()];
    let i_unit = Complex64::new(0.0, 1.0);
    for n_a in 0..=n {
        let n_b = n - n_a;
        let off = sector_offset(n, n_a);
        let cols = n_b + 1;
        for ka in 0..=n_a {
            for kb in 0..=n_b {
                let amp = state.amps[off + ka * cols + kb];
                if amp.norm_sqr() == 0.0 {
                    continue;
                }
                let (k, n_sub) = if on_b { (kb, n_b) } else { (ka, n_a) };
                let target = |k_new: usize| {
                    if on_b {
                        off + ka * cols + k_new
                    } else {
                        off + k_new * cols + kb
                    }
                };
                match comp {
                    Component::Z => {
                        out[target(k)] += amp * (k as f64 - n_sub as f64 / 2.0);
                    }
                    Component::X | Component::Y => {
                        // S+ |k> = a_k |k+1>, S- |k> = a_{k-1} |k-1>
                        let (up, down) = match comp {
                            Component::X => (Complex64::new(0.5, 0.0), Complex64::new(0.5, 0.0)),
                            _ => (-0.5 * i_unit, 0.5 * i_unit),
                        };
                        if k < n_sub {
                            out[target(k + 1)] += amp * up * raising_element(n_sub, k);
                        }
                        if k > 0 {
                            out[target(k - 1)] += amp * down * raising_element(n_sub, k - 1);
                        }
                    }
                }
            }
        }
    }
    out
}

fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Exact moments of the two spins by operator application.
pub fn moments_from_bipartite(state: &BipartiteFockState) -> JointMoments {
    let comps = [Component::X, Component::Y, Component::Z];
    let applied: Vec<Vec<Complex64>> = [false, true]
        .iter()
        .flat_map(|&on_b| comps.iter().map(move |&c| (on_b, c)))
        .map(|(on_b, c)| apply_spin(state, on_b, c))
        .collect();

    // N_A applied
    let n = state.n_atoms_total;
    let mut number_a = vec![Complex64::new(0.0, 0.0); state.amps.len()];
    for n_a in 0..=n {
        let off = sector_offset(n, n_a);
        let len = (n_a + 1) * (n - n_a + 1);
        for i in off..off + len {
            number_a[i] = state.amps[i] * n_a as f64;
        }
    }

    let psi = &state.amps;
    let mut mean = [0.0; 6];
    for k in 0..6 {
        mean[k] = inner(psi, &applied[k]).re;
    }
    let mut cov = [[0.0; 6]; 6];
    for i in 0..6 {
        for j in i..6 {
            let sym = inner(&applied[i], &applied[j]).re;
            cov[i][j] = sym - mean[i] * mean[j];
            cov[j][i] = cov[i][j];
        }
    }
    let n_mean_a = inner(psi, &number_a).re;
    let n_sq_a = inner(&number_a, &number_a).re;
    let n_var_a = n_sq_a - n_mean_a * n_mean_a;
    let mut number_covariance = [0.0; 6];
    for k in 0..6 {
        number_covariance[k] = inner(&applied[k], &number_a).re - mean[k] * n_mean_a;
    }
    JointMoments {
        mean,
        covariance: cov,
        n_mean_a,
        n_mean_b: n as f64 - n_mean_a,
        n_var_a,
        n_var_b: n_var_a,
        number_covariance,
        n_atoms_total: n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::{make_coherent_state, moments_from_state, X_AXIS};
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn one_atom_beam_splitter() {
        let up = DickeState::basis(1, 1).unwrap();
        let out = split_exact(&up, 0.5).unwrap();
        let h = 0.5f64.sqrt();
        assert!((out.amplitude((1, 0, 0, 0)) - Complex64::new(h, 0.0)).norm() < 1e-15);
        assert!((out.amplitude((0, 0, 1, 0)) - Complex64::new(0.0, h)).norm() < 1e-15);
        assert_eq!(out.to_map().len(), 2);
    }

    #[test]
    fn full_transmission_is_embedding() {
        let s = make_coherent_state(5, 0.7, 0.3).unwrap();
        let out = split_exact(&s, 1.0).unwrap();
        assert_eq!(out, BipartiteFockState::embed_in_a(&s));
    }

    #[test]
    fn size_limit_enforced() {
        let s = make_coherent_state(17, FRAC_PI_2, 0.0).unwrap();
        assert!(matches!(split_exact(&s, 0.5), Err(Error::SizeLimit { n_atoms: 17, limit: 16 })));
        assert!(split_exact_with_limit(&s, 0.5, 20).is_ok());
    }

    #[test]
    fn keys_respect_total_number() {
        let s = make_coherent_state(6, 1.0, 0.0).unwrap();
        let out = split_exact(&s, 0.3).unwrap();
        assert!(out.iter().all(|((a, b, c, d), _)| a + b + c + d == 6));
        assert!((out.norm_sqr() - 1.0).abs() < 1e-12);
        let back = BipartiteFockState::from_map(6, &out.to_map()).unwrap();
        assert_eq!(back, out);
        let mut bad = BTreeMap::new();
        bad.insert((1, 1, 1, 1), Complex64::new(1.0, 0.0));
        assert!(BipartiteFockState::from_map(6, &bad).is_err());
    }

    #[test]
    fn split_css_moments_closed_form() {
        let css = moments_from_state(&make_coherent_state(1000, FRAC_PI_2, 0.0).unwrap());
        let jm = split_moments(&css, 0.5).unwrap();
        assert!((jm.mean[0] - 250.0).abs() < 1e-9);
        assert!((jm.variance(2) - 125.0).abs() < 1e-9);
        assert!(jm.covariance[2][5].abs() < 1e-9);
        assert_eq!(jm.subsystem_mean(0), jm.subsystem_mean(1));
    }

    #[test]
    fn split_moments_rejects_edges() {
        let css = moments_from_state(&make_coherent_state(4, FRAC_PI_2, 0.0).unwrap());
        for p in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(split_moments(&css, p).is_err());
        }
    }

    #[test]
    fn vacuum_b_has_zero_moments() {
        let a = make_coherent_state(4, 1.2, 0.4).unwrap();
        let jm = moments_from_bipartite(&BipartiteFockState::embed_in_a(&a));
        for k in 3..6 {
            assert_eq!(jm.mean[k], 0.0);
            for j in 0..6 {
                assert_eq!(jm.covariance[k][j], 0.0);
            }
        }
        assert!((jm.n_mean_a - 4.0).abs() < 1e-12);
    }

    #[test]
    fn split_css_four_atoms_mean_sx() {
        let s = make_coherent_state(4, FRAC_PI_2, 0.0).unwrap();
        let jm = moments_from_bipartite(&split_exact(&s, 0.5).unwrap());
        assert!((jm.mean[0] - 1.0).abs() < 1e-12);
        assert!((jm.mean[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn local_rotation_moves_sx_to_z() {
        let s = make_coherent_state(6, FRAC_PI_2, 0.0).unwrap();
        let mut split = split_exact(&s, 0.5).unwrap();
        let rots: Vec<SpinRotation> = (0..=6)
            .map(|n| SpinRotation::new(n, [0.0, 1.0, 0.0], -FRAC_PI_2).unwrap())
            .collect();
        let before = moments_from_bipartite(&split);
        split.rotate_local(&rots, &rots);
        let after = moments_from_bipartite(&split);
        // exp(+i pi/2 Sy) maps Sx onto Sz
        assert!((after.mean[2] - before.mean[0]).abs() < 1e-10);
        assert!((after.mean[5] - before.mean[3]).abs() < 1e-10);
        let _ = X_AXIS;
    }
}
