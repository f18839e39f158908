//! Heisenberg, EPR-steering and entanglement criteria from shot records.
//!
//! All criteria depend on the data only through second moments of the
//! `(S^A, S^B)` pairs per setting, the `S_y` pairs' covariance with the
//! recorded trigger delay and the `<S_x>` estimates. Those statistics are
//! collected per block in mergeable form, so pooled (single-block) values and
//! bootstrap resamples never touch the raw records again.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::sampler::{Basis, ShotRecord};
use crate::splitter::JointMoments;

/// Result of a linear prediction `y ~ -g x + c`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    pub g: f64,
    pub c: f64,
    pub var_inf: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample variance and covariance with `n - 1` normalization.
fn var_cov(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let (mx, my) = (mean(x), mean(y));
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let d = (x.len() - 1) as f64;
    (sxx / d, syy / d, sxy / d)
}

fn inference_from(vx: f64, vy: f64, cxy: f64, mx: f64, my: f64) -> Inference {
    if vx <= 0.0 {
        return Inference { g: 0.0, c: my, var_inf: vy.max(0.0) };
    }
    let g = -cxy / vx;
    let var_inf = (vy - cxy * cxy / vx).clamp(0.0, vy.max(0.0));
    Inference { g, c: my + g * mx, var_inf }
}

/// Best linear prediction of `y` from `x`.
pub fn optimal_inference(x: &[f64], y: &[f64]) -> Result<Inference> {
    if x.len() != y.len() {
        return Err(invalid("x and y must have equal length"));
    }
    if x.len() < 2 {
        return Err(Error::IncompleteDataset("need at least two samples".into()));
    }
    let (vx, vy, cxy) = var_cov(x, y);
    Ok(inference_from(vx, vy, cxy, mean(x), mean(y)))
}

/// Removes the part of `S_y^B` linear in the trigger delay:
/// returns `y + g_dt dt` with `g_dt` from least squares.
pub fn jitter_correct(sy_b: &[f64], delta_t: &[f64]) -> Result<(Vec<f64>, f64)> {
    if sy_b.len() != delta_t.len() {
        return Err(invalid("sy_b and delta_t must have equal length"));
    }
    if sy_b.len() < 2 {
        return Ok((sy_b.to_vec(), 0.0));
    }
    let (vt, _, cty) = var_cov(delta_t, sy_b);
    let g = if vt > 0.0 { -cty / vt } else { 0.0 };
    Ok((sy_b.iter().zip(delta_t).map(|(y, t)| y + g * t).collect(), g))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum System {
    A,
    B,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "A->B")]
    AToB,
    #[serde(rename = "B->A")]
    BToA,
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A->B" | "A2B" | "AB" => Ok(Direction::AToB),
            "B->A" | "B2A" | "BA" => Ok(Direction::BToA),
            _ => Err(invalid(format!("unknown direction {s:?} (use A->B or B->A)"))),
        }
    }
}

/// `<S_x>` of one system: sign-folded mean relative imbalance of the x
/// shots times half the mean total atom number of the y/z shots.
pub fn sx_estimator(x_records: &[ShotRecord], yz_records: &[ShotRecord], system: System) -> Result<f64> {
    let mut acc = SxAccumulator::default();
    for r in x_records {
        acc.add_x(r);
    }
    for r in yz_records {
        acc.add_total(r);
    }
    acc.estimate()[system as usize]
        .ok_or_else(|| Error::UndefinedValue("<S_x> needs x shots with nonzero totals and y/z shots".into()))
}

#[derive(Clone, Copy, Debug, Default)]
struct SxAccumulator {
    imbalance_sum: [f64; 2],
    imbalance_n: [f64; 2],
    total_sum: [f64; 2],
    total_n: f64,
}

impl SxAccumulator {
    fn add_x(&mut self, r: &ShotRecord) {
        for (k, (basis, n1, n2)) in [(r.basis_a, r.n1a, r.n2a), (r.basis_b, r.n1b, r.n2b)].into_iter().enumerate() {
            let total = n1 + n2;
            if basis.is_x() && total != 0.0 {
                self.imbalance_sum[k] += basis.sign() * (n1 - n2) / total;
                self.imbalance_n[k] += 1.0;
            }
        }
    }

    fn add_total(&mut self, r: &ShotRecord) {
        self.total_sum[0] += r.total_a();
        self.total_sum[1] += r.total_b();
        self.total_n += 1.0;
    }

    fn merge(&mut self, o: &Self) {
        for k in 0..2 {
            self.imbalance_sum[k] += o.imbalance_sum[k];
            self.imbalance_n[k] += o.imbalance_n[k];
            self.total_sum[k] += o.total_sum[k];
        }
        self.total_n += o.total_n;
    }

    fn estimate(&self) -> [Option<f64>; 2] {
        [0, 1].map(|k| {
            if self.imbalance_n[k] == 0.0 || self.total_n == 0.0 {
                return None;
            }
            let imbalance = self.imbalance_sum[k] / self.imbalance_n[k];
            let total = self.total_sum[k] / self.total_n;
            Some(imbalance * total / 2.0)
        })
    }
}

/// Running mean and co-moment matrix, mergeable (Chan et al. update).
#[derive(Clone, Copy, Debug)]
struct Comoments<const D: usize> {
    n: f64,
    mean: [f64; D],
    m2: [[f64; D]; D],
}

impl<const D: usize> Comoments<D> {
    fn new() -> Self {
        Self { n: 0.0, mean: [0.0; D], m2: [[0.0; D]; D] }
    }

    fn push(&mut self, x: [f64; D]) {
        self.n += 1.0;
        let mut delta = [0.0; D];
        for i in 0..D {
            delta[i] = x[i] - self.mean[i];
            self.mean[i] += delta[i] / self.n;
        }
        for i in 0..D {
            for j in 0..D {
                self.m2[i][j] += delta[i] * (x[j] - self.mean[j]);
            }
        }
    }

    fn merge(&mut self, o: &Self) {
        if o.n == 0.0 {
            return;
        }
        if self.n == 0.0 {
            *self = *o;
            return;
        }
        let n = self.n + o.n;
        let mut delta = [0.0; D];
        for i in 0..D {
            delta[i] = o.mean[i] - self.mean[i];
        }
        for i in 0..D {
            for j in 0..D {
                self.m2[i][j] += o.m2[i][j] + delta[i] * delta[j] * self.n * o.n / n;
            }
        }
        for i in 0..D {
            self.mean[i] += delta[i] * o.n / n;
        }
        self.n = n;
    }

    fn cov(&self, i: usize, j: usize) -> f64 {
        self.m2[i][j] / (self.n - 1.0)
    }
}

/// Sufficient statistics of a set of shots.
#[derive(Clone, Copy, Debug)]
pub struct ShotStats {
    /// `(S_z^A, S_z^B)` of z shots.
    z: Comoments<2>,
    /// `(S_y^A, S_y^B, delta_t)` of y shots.
    y: Comoments<3>,
    sx: SxAccumulator,
    /// Number of x shots.
    n_x: usize,
}

impl Default for ShotStats {
    fn default() -> Self {
        Self { z: Comoments::new(), y: Comoments::new(), sx: SxAccumulator::default(), n_x: 0 }
    }
}

impl ShotStats {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a ShotRecord>) -> Self {
        let mut s = Self::default();
        for r in records {
            s.push(r);
        }
        s
    }

    pub fn push(&mut self, r: &ShotRecord) {
        match kind(r) {
            Some(Kind::Z) => {
                self.z.push([r.spin_a(), r.spin_b()]);
                self.sx.add_total(r);
            }
            Some(Kind::Y) => {
                self.y.push([r.spin_a(), r.spin_b(), r.delta_t_s]);
                self.sx.add_total(r);
            }
            Some(Kind::X) => {
                self.sx.add_x(r);
                self.n_x += 1;
            }
            None => {}
        }
    }

    pub fn merge(&mut self, o: &Self) {
        self.z.merge(&o.z);
        self.y.merge(&o.y);
        self.sx.merge(&o.sx);
        self.n_x += o.n_x;
    }

    pub fn counts(&self) -> SettingCounts {
        SettingCounts { z: self.z.n as usize, y: self.y.n as usize, x: self.n_x }
    }

    /// Second-moment summary; fails if a setting is missing.
    pub fn summary(&self, jitter_correction: bool) -> Result<Summary> {
        let counts = self.counts();
        if counts.z < 2 || counts.y < 2 || counts.x == 0 {
            return Err(Error::IncompleteDataset(format!(
                "need z, y and x shots (have z={}, y={}, x={})",
                counts.z, counts.y, counts.x
            )));
        }
        let [sx_a, sx_b] = self.sx.estimate();
        let undefined = || Error::UndefinedValue("<S_x> undefined: zero detected atoms".into());
        let z = Pair {
            var_a: self.z.cov(0, 0),
            var_b: self.z.cov(1, 1),
            cov: self.z.cov(0, 1),
            mean_a: self.z.mean[0],
            mean_b: self.z.mean[1],
        };
        let y_raw = Pair {
            var_a: self.y.cov(0, 0),
            var_b: self.y.cov(1, 1),
            cov: self.y.cov(0, 1),
            mean_a: self.y.mean[0],
            mean_b: self.y.mean[1],
        };
        let var_t = self.y.cov(2, 2);
        let g_dt = if jitter_correction && var_t > 0.0 { -self.y.cov(1, 2) / var_t } else { 0.0 };
        // covariances of (a, b + g t)
        let y_corrected = Pair {
            var_a: y_raw.var_a,
            var_b: (y_raw.var_b + 2.0 * g_dt * self.y.cov(1, 2) + g_dt * g_dt * var_t).max(0.0),
            cov: y_raw.cov + g_dt * self.y.cov(0, 2),
            mean_a: y_raw.mean_a,
            mean_b: y_raw.mean_b + g_dt * self.y.mean[2],
        };
        Ok(Summary {
            z,
            y_raw,
            y_corrected,
            g_dt,
            sx_a: sx_a.ok_or_else(undefined)?,
            sx_b: sx_b.ok_or_else(undefined)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Z,
    Y,
    X,
}

/// Setting kind of a record; mixed z/y settings between A and B are not
/// part of the criteria and are ignored.
fn kind(r: &ShotRecord) -> Option<Kind> {
    match (r.basis_a, r.basis_b) {
        (Basis::Z, Basis::Z) => Some(Kind::Z),
        (Basis::Y, Basis::Y) => Some(Kind::Y),
        (a, b) if a.is_x() && b.is_x() => Some(Kind::X),
        _ => None,
    }
}

/// Variances and covariance of a `(S^A, S^B)` pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub var_a: f64,
    pub var_b: f64,
    pub cov: f64,
    pub mean_a: f64,
    pub mean_b: f64,
}

impl Pair {
    fn infer_b(&self) -> Inference {
        inference_from(self.var_a, self.var_b, self.cov, self.mean_a, self.mean_b)
    }

    fn infer_a(&self) -> Inference {
        inference_from(self.var_b, self.var_a, self.cov, self.mean_b, self.mean_a)
    }

    /// `Var(g S^A + S^B)`.
    fn combined_var(&self, g: f64) -> f64 {
        (g * g * self.var_a + 2.0 * g * self.cov + self.var_b).max(0.0)
    }

    fn correlation(&self) -> f64 {
        let d = (self.var_a * self.var_b).sqrt();
        if d > 0.0 {
            self.cov / d
        } else {
            0.0
        }
    }
}

/// Everything the criteria need.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub z: Pair,
    /// Uncorrected y pair.
    pub y_raw: Pair,
    /// y pair after jitter correction of `S_y^B` (equal to `y_raw` when off).
    pub y_corrected: Pair,
    pub g_dt: f64,
    pub sx_a: f64,
    pub sx_b: f64,
}

impl Summary {
    /// Moment-level summary straight from joint moments (no jitter).
    pub fn from_moments(m: &JointMoments) -> Self {
        let z = Pair {
            var_a: m.covariance[2][2],
            var_b: m.covariance[5][5],
            cov: m.covariance[2][5],
            mean_a: m.mean[2],
            mean_b: m.mean[5],
        };
        let y = Pair {
            var_a: m.covariance[1][1],
            var_b: m.covariance[4][4],
            cov: m.covariance[1][4],
            mean_a: m.mean[1],
            mean_b: m.mean[4],
        };
        Self { z, y_raw: y, y_corrected: y, g_dt: 0.0, sx_a: m.mean[0], sx_b: m.mean[3] }
    }
}

/// Gains of one inference direction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GainSet {
    pub g_z: f64,
    pub g_y: f64,
    pub c_z: f64,
    pub c_y: f64,
    /// Jitter-correction gain, atoms per second.
    pub g_dt: f64,
}

/// Criterion values; also used for their errors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CriteriaValues {
    pub epr_a_to_b: f64,
    pub epr_b_to_a: f64,
    pub ent: f64,
    /// Entanglement criterion evaluated at the A->B EPR gains.
    pub ent_reused_gains: f64,
    pub hei_a: f64,
    pub hei_b: f64,
    pub sx_a: f64,
    pub sx_b: f64,
    /// Shot correlation coefficients of `S_z` and `S_y` between A and B.
    pub corr_z: f64,
    pub corr_y: f64,
}

impl CriteriaValues {
    const FIELDS: usize = 10;

    fn to_array(self) -> [f64; Self::FIELDS] {
        [
            self.epr_a_to_b,
            self.epr_b_to_a,
            self.ent,
            self.ent_reused_gains,
            self.hei_a,
            self.hei_b,
            self.sx_a,
            self.sx_b,
            self.corr_z,
            self.corr_y,
        ]
    }

    fn from_array(a: [f64; Self::FIELDS]) -> Self {
        Self {
            epr_a_to_b: a[0],
            epr_b_to_a: a[1],
            ent: a[2],
            ent_reused_gains: a[3],
            hei_a: a[4],
            hei_b: a[5],
            sx_a: a[6],
            sx_b: a[7],
            corr_z: a[8],
            corr_y: a[9],
        }
    }

    /// Elementwise mean.
    pub fn mean_of(items: &[CriteriaValues]) -> Self {
        let mut acc = [0.0; Self::FIELDS];
        for it in items {
            for (a, v) in acc.iter_mut().zip(it.to_array()) {
                *a += v;
            }
        }
        Self::from_array(acc.map(|a| a / items.len() as f64))
    }

    /// Elementwise standard deviation (`n - 1`).
    pub fn std_of(items: &[CriteriaValues]) -> Self {
        let m = Self::mean_of(items).to_array();
        let mut acc = [0.0; Self::FIELDS];
        for it in items {
            for ((a, v), mu) in acc.iter_mut().zip(it.to_array()).zip(m) {
                *a += (v - mu) * (v - mu);
            }
        }
        let d = (items.len().max(2) - 1) as f64;
        Self::from_array(acc.map(|a| (a / d).sqrt()))
    }
}

/// Criteria and gains from one summary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub values: CriteriaValues,
    pub gains_a_to_b: GainSet,
    pub gains_b_to_a: GainSet,
    /// Minimizing `(g_z, g_y)` of the entanglement criterion.
    pub ent_gains: (f64, f64),
}

fn heisenberg(var_z: f64, var_y: f64, sx: f64) -> f64 {
    4.0 * var_z * var_y / (sx * sx)
}

/// Entanglement criterion at fixed gains.
pub fn ent_value(s: &Summary, g_z: f64, g_y: f64) -> f64 {
    let num = 4.0 * s.z.combined_var(g_z) * s.y_raw.combined_var(g_y);
    let den = (g_z * g_y).abs() * s.sx_a.abs() + s.sx_b.abs();
    num / (den * den)
}

const GRID_HALF_WIDTH: f64 = 3.0;
const GRID_POINTS: usize = 61;

/// Minimizes the entanglement criterion: coarse grid, candidate gains, then
/// compass search down to a step far below the 1e-6 tolerance on the value.
fn minimize_ent(s: &Summary, candidates: &[(f64, f64)]) -> (f64, (f64, f64)) {
    let mut best = (ent_value(s, 0.0, 0.0), (0.0, 0.0));
    let consider = |gz: f64, gy: f64, best: &mut (f64, (f64, f64))| {
        if !(gz.is_finite() && gy.is_finite()) {
            return;
        }
        let v = ent_value(s, gz, gy);
        if v < best.0 {
            *best = (v, (gz, gy));
        }
    };
    let step0 = 2.0 * GRID_HALF_WIDTH / (GRID_POINTS - 1) as f64;
    for i in 0..GRID_POINTS {
        for j in 0..GRID_POINTS {
            let gz = -GRID_HALF_WIDTH + step0 * i as f64;
            let gy = -GRID_HALF_WIDTH + step0 * j as f64;
            consider(gz, gy, &mut best);
        }
    }
    for &(gz, gy) in candidates {
        consider(gz, gy, &mut best);
    }

    let (mut value, (mut gz, mut gy)) = best;
    let mut step = step0;
    let scale = gz.abs().max(gy.abs()).max(1.0);
    while step > 1e-12 * scale {
        let mut moved = false;
        for (dz, dy) in [(step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step)] {
            let v = ent_value(s, gz + dz, gy + dy);
            if v < value {
                value = v;
                gz += dz;
                gy += dy;
                moved = true;
                break;
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    (value, (gz, gy))
}

/// Evaluates all criteria from a summary. EPR values use the jitter-corrected
/// y pair; the entanglement and Heisenberg values always use raw data.
pub fn evaluate(s: &Summary) -> Result<Evaluation> {
    if s.sx_a == 0.0 || s.sx_b == 0.0 {
        return Err(Error::UndefinedValue("<S_x> is zero".into()));
    }
    let zb = s.z.infer_b();
    let yb = s.y_corrected.infer_b();
    let za = s.z.infer_a();
    let ya = s.y_corrected.infer_a();
    let epr_a_to_b = heisenberg(zb.var_inf, yb.var_inf, s.sx_b);
    let epr_b_to_a = heisenberg(za.var_inf, ya.var_inf, s.sx_a);

    let raw_zb = s.z.infer_b();
    let raw_yb = s.y_raw.infer_b();
    let raw_za = s.z.infer_a();
    let raw_ya = s.y_raw.infer_a();
    let mut candidates = vec![(raw_zb.g, raw_yb.g)];
    if raw_za.g != 0.0 && raw_ya.g != 0.0 {
        candidates.push((1.0 / raw_za.g, 1.0 / raw_ya.g));
    }
    let (ent, ent_gains) = minimize_ent(s, &candidates);
    let values = CriteriaValues {
        epr_a_to_b,
        epr_b_to_a,
        ent,
        ent_reused_gains: ent_value(s, zb.g, yb.g),
        hei_a: heisenberg(s.z.var_a, s.y_raw.var_a, s.sx_a),
        hei_b: heisenberg(s.z.var_b, s.y_raw.var_b, s.sx_b),
        sx_a: s.sx_a,
        sx_b: s.sx_b,
        corr_z: s.z.correlation(),
        corr_y: s.y_raw.correlation(),
    };
    Ok(Evaluation {
        values,
        gains_a_to_b: GainSet { g_z: zb.g, g_y: yb.g, c_z: zb.c, c_y: yb.c, g_dt: s.g_dt },
        gains_b_to_a: GainSet { g_z: za.g, g_y: ya.g, c_z: za.c, c_y: ya.c, g_dt: s.g_dt },
        ent_gains,
    })
}

/// Moment-level criteria of a joint state.
pub fn criteria_from_moments(m: &JointMoments) -> Result<Evaluation> {
    evaluate(&Summary::from_moments(m))
}

/// Correction policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    /// Apply the trigger-delay correction to `S_y^B` in the EPR criteria.
    pub jitter_correction: bool,
}

impl Default for Policy {
    fn default() -> Self {
        Self { jitter_correction: true }
    }
}

/// EPR criterion over the whole record set (single block).
pub fn epr_criterion(records: &[ShotRecord], direction: Direction, policy: Policy) -> Result<f64> {
    let e = evaluate(&ShotStats::from_records(records).summary(policy.jitter_correction)?)?;
    Ok(match direction {
        Direction::AToB => e.values.epr_a_to_b,
        Direction::BToA => e.values.epr_b_to_a,
    })
}

/// Entanglement criterion over the whole record set.
pub fn ent_criterion(records: &[ShotRecord]) -> Result<f64> {
    Ok(evaluate(&ShotStats::from_records(records).summary(false)?)?.values.ent)
}

/// Raw Heisenberg product of one system over the whole record set.
pub fn heisenberg_product(records: &[ShotRecord], system: System) -> Result<f64> {
    let s = ShotStats::from_records(records).summary(false)?;
    Ok(match system {
        System::A => heisenberg(s.z.var_a, s.y_raw.var_a, s.sx_a),
        System::B => heisenberg(s.z.var_b, s.y_raw.var_b, s.sx_b),
    })
}

/// Shots per setting kind in one block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub z: usize,
    pub y: usize,
    pub x: usize,
}

impl Default for BlockSpec {
    fn default() -> Self {
        Self { z: 100, y: 100, x: 20 }
    }
}

impl BlockSpec {
    pub fn shots(&self) -> usize {
        self.z + self.y + self.x
    }

    pub fn validate(&self) -> Result<()> {
        if self.z < 2 || self.y < 2 || self.x == 0 {
            return Err(invalid("blocks need at least 2 z, 2 y and 1 x shot"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettingCounts {
    pub z: usize,
    pub y: usize,
    pub x: usize,
}

/// Splits records chronologically (by shot id) into blocks of the given
/// composition, filling each setting kind independently. Returns the block
/// statistics and the statistics of the leftover shots.
pub fn partition_blocks(records: &[ShotRecord], spec: &BlockSpec) -> Result<(Vec<ShotStats>, ShotStats)> {
    spec.validate()?;
    let mut sorted: Vec<&ShotRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.shot_id);
    let mut by_kind: [Vec<&ShotRecord>; 3] = Default::default();
    for r in sorted {
        match kind(r) {
            Some(Kind::Z) => by_kind[0].push(r),
            Some(Kind::Y) => by_kind[1].push(r),
            Some(Kind::X) => by_kind[2].push(r),
            None => {}
        }
    }
    let sizes = [spec.z, spec.y, spec.x];
    let n_blocks = (0..3).map(|k| by_kind[k].len() / sizes[k]).min().unwrap_or(0);
    let blocks = (0..n_blocks)
        .map(|b| {
            let mut s = ShotStats::default();
            for k in 0..3 {
                for r in &by_kind[k][b * sizes[k]..(b + 1) * sizes[k]] {
                    s.push(r);
                }
            }
            s
        })
        .collect();
    let mut rest = ShotStats::default();
    for k in 0..3 {
        for r in &by_kind[k][n_blocks * sizes[k]..] {
            rest.push(r);
        }
    }
    Ok((blocks, rest))
}

/// Per-block criteria, their average and the whole-dataset value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockAnalysis {
    pub n_blocks: usize,
    pub block_spec: BlockSpec,
    pub per_block: Vec<Evaluation>,
    /// Mean of the per-block values; absent without a complete block.
    pub average: Option<CriteriaValues>,
    /// All shots analyzed as one block, including shots outside full blocks.
    pub single_block: Evaluation,
    pub n_shots_used: SettingCounts,
    pub n_shots_discarded: SettingCounts,
}

pub fn block_analysis(records: &[ShotRecord], spec: &BlockSpec, policy: Policy) -> Result<BlockAnalysis> {
    let (blocks, rest) = partition_blocks(records, spec)?;
    let mut all = rest;
    for b in &blocks {
        all.merge(b);
    }
    let single_block = evaluate(&all.summary(policy.jitter_correction)?)?;
    let per_block: Vec<Evaluation> = blocks
        .par_iter()
        .map(|b| evaluate(&b.summary(policy.jitter_correction)?))
        .collect::<Result<_>>()?;
    let average = if per_block.is_empty() {
        None
    } else {
        let values: Vec<CriteriaValues> = per_block.iter().map(|e| e.values).collect();
        Some(CriteriaValues::mean_of(&values))
    };
    let n = blocks.len();
    Ok(BlockAnalysis {
        n_blocks: n,
        block_spec: *spec,
        per_block,
        average,
        single_block,
        n_shots_used: SettingCounts { z: n * spec.z, y: n * spec.y, x: n * spec.x },
        n_shots_discarded: rest.counts(),
    })
}

/// Bootstrap standard errors of the block average and of the pooled value
/// of the complete blocks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapErrors {
    pub n_resamples: usize,
    pub seed: u64,
    pub average: CriteriaValues,
    pub single_block: CriteriaValues,
}

/// Nonparametric bootstrap over blocks. Needs at least two complete blocks
/// to be informative; with one block all errors are zero.
pub fn bootstrap_errors(
    records: &[ShotRecord],
    spec: &BlockSpec,
    policy: Policy,
    n_resamples: usize,
    seed: u64,
) -> Result<BootstrapErrors> {
    let (blocks, _) = partition_blocks(records, spec)?;
    bootstrap_blocks(&blocks, policy, n_resamples, seed)
}

fn bootstrap_blocks(blocks: &[ShotStats], policy: Policy, n_resamples: usize, seed: u64) -> Result<BootstrapErrors> {
    if n_resamples < 100 {
        return Err(invalid("bootstrap needs at least 100 resamples"));
    }
    if blocks.is_empty() {
        return Err(Error::IncompleteDataset("no complete block to resample".into()));
    }
    let per_block: Vec<CriteriaValues> = blocks
        .par_iter()
        .map(|b| Ok(evaluate(&b.summary(policy.jitter_correction)?)?.values))
        .collect::<Result<_>>()?;
    let resamples: Vec<(CriteriaValues, CriteriaValues)> = (0..n_resamples as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r);
            let mut picked = Vec::with_capacity(blocks.len());
            let mut pooled = ShotStats::default();
            for _ in 0..blocks.len() {
                let i = rng.random_range(0..blocks.len());
                picked.push(per_block[i]);
                pooled.merge(&blocks[i]);
            }
            let pooled_values = evaluate(&pooled.summary(policy.jitter_correction)?)?.values;
            Ok((CriteriaValues::mean_of(&picked), pooled_values))
        })
        .collect::<Result<_>>()?;
    let (avg, single): (Vec<_>, Vec<_>) = resamples.into_iter().unzip();
    Ok(BootstrapErrors {
        n_resamples,
        seed,
        average: CriteriaValues::std_of(&avg),
        single_block: CriteriaValues::std_of(&single),
    })
}

/// Analysis options.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub policy: Policy,
    pub block_spec: BlockSpec,
    pub bootstrap_resamples: usize,
    pub bootstrap_seed: u64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self { policy: Policy::default(), block_spec: BlockSpec::default(), bootstrap_resamples: 400, bootstrap_seed: 1 }
    }
}

/// Complete analysis of a record set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriteriaReport {
    pub options: AnalysisOptions,
    pub blocks: BlockAnalysis,
    /// Absent without a complete block.
    pub errors: Option<BootstrapErrors>,
    pub error_method: String,
}

impl CriteriaReport {
    /// Headline values: block average when available, else the single-block value.
    pub fn values(&self) -> CriteriaValues {
        self.blocks.average.unwrap_or(self.blocks.single_block.values)
    }
}

pub fn analyze(records: &[ShotRecord], options: &AnalysisOptions) -> Result<CriteriaReport> {
    let blocks = block_analysis(records, &options.block_spec, options.policy)?;
    let errors = if blocks.n_blocks > 0 {
        let (stats, _) = partition_blocks(records, &options.block_spec)?;
        Some(bootstrap_blocks(&stats, options.policy, options.bootstrap_resamples, options.bootstrap_seed)?)
    } else {
        None
    };
    Ok(CriteriaReport {
        options: *options,
        blocks,
        errors,
        error_method: "nonparametric bootstrap over blocks".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: u64, basis: Basis, sa: f64, sb: f64, dt: f64) -> ShotRecord {
        ShotRecord {
            shot_id: id,
            n1a: 50.0 + sa,
            n2a: 50.0 - sa,
            n1b: 50.0 + sb,
            n2b: 50.0 - sb,
            basis_a: basis,
            basis_b: basis,
            theta_b: 0.0,
            delta_t_s: dt,
            seed: 0,
        }
    }

    #[test]
    fn inference_perfect_and_degenerate() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let inf = optimal_inference(&x, &x).unwrap();
        assert!((inf.g + 1.0).abs() < 1e-12 && inf.var_inf.abs() < 1e-12);
        // unbiased: <y> = -g <x> + c
        assert!((2.5 - (-inf.g * 2.5 + inf.c)).abs() < 1e-12);
        let flat = optimal_inference(&[1.0; 4], &x).unwrap();
        assert_eq!(flat.g, 0.0);
        assert!((flat.var_inf - 5.0 / 3.0).abs() < 1e-12);
        assert!(optimal_inference(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn jitter_identity_and_recovery() {
        let y = [1.0, -2.0, 0.5, 3.0];
        let (c, g) = jitter_correct(&y, &[0.0; 4]).unwrap();
        assert_eq!(g, 0.0);
        assert_eq!(c, y.to_vec());
        let dt = [1.0, 2.0, 3.0, 4.0];
        let injected: Vec<f64> = dt.iter().map(|t| 5.0 + 2.0 * t).collect();
        let (c, g) = jitter_correct(&injected, &dt).unwrap();
        assert!((g + 2.0).abs() < 1e-12);
        assert!(c.iter().all(|v| (v - 5.0).abs() < 1e-12));
    }

    #[test]
    fn comoments_merge_matches_direct() {
        let pts: Vec<[f64; 2]> = (0..37).map(|i| [(i as f64 * 0.7).sin() * 3.0, (i as f64).cos() + 1e3]).collect();
        let mut all = Comoments::<2>::new();
        pts.iter().for_each(|p| all.push(*p));
        let mut a = Comoments::<2>::new();
        let mut b = Comoments::<2>::new();
        pts[..10].iter().for_each(|p| a.push(*p));
        pts[10..].iter().for_each(|p| b.push(*p));
        a.merge(&b);
        for i in 0..2 {
            for j in 0..2 {
                assert!((a.cov(i, j) - all.cov(i, j)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sx_estimator_folds_sign_and_uses_totals() {
        let mut x = rec(0, Basis::X, 20.0, 10.0, 0.0);
        x.n1a *= 0.5;
        x.n2a *= 0.5; // detectivity loss does not change the relative imbalance
        let mx = ShotRecord { basis_a: Basis::MinusX, basis_b: Basis::MinusX, ..rec(1, Basis::X, -20.0, -10.0, 0.0) };
        let yz = [rec(2, Basis::Z, 0.0, 0.0, 0.0), rec(3, Basis::Y, 1.0, 1.0, 0.0)];
        let sa = sx_estimator(&[x.clone(), mx.clone()], &yz, System::A).unwrap();
        let sb = sx_estimator(&[x, mx], &yz, System::B).unwrap();
        assert!((sa - 20.0).abs() < 1e-12);
        assert!((sb - 10.0).abs() < 1e-12);
        assert!(sx_estimator(&[], &yz, System::A).is_err());
    }

    fn synthetic(n_blocks: usize) -> Vec<ShotRecord> {
        let mut out = Vec::new();
        let mut id = 0;
        for b in 0..n_blocks {
            for i in 0..100 {
                let v = ((i * 7 + b * 3) % 11) as f64 - 5.0;
                out.push(rec(id, Basis::Z, v, -0.8 * v + (i % 3) as f64, 0.0));
                id += 1;
            }
            for i in 0..100 {
                let v = ((i * 5 + b) % 13) as f64 - 6.0;
                out.push(rec(id, Basis::Y, v, 0.9 * v + (i % 2) as f64, 0.0));
                id += 1;
            }
            for i in 0..20 {
                let basis = if i % 2 == 0 { Basis::X } else { Basis::MinusX };
                let s = 20.0 * basis.sign();
                out.push(rec(id, basis, s, s, 0.0));
                id += 1;
            }
        }
        out
    }

    #[test]
    fn gain_zero_equals_heisenberg_and_hierarchy() {
        let data = synthetic(1);
        let s = ShotStats::from_records(&data).summary(false).unwrap();
        let e = evaluate(&s).unwrap();
        assert_eq!(ent_value(&s, 0.0, 0.0), e.values.hei_b);
        assert!(e.values.epr_a_to_b >= e.values.ent - 1e-9);
        assert!(e.values.epr_b_to_a >= e.values.ent - 1e-9);
        assert!(e.values.ent <= e.values.ent_reused_gains + 1e-12);
    }

    #[test]
    fn one_block_average_equals_single_block() {
        let data = synthetic(1);
        let ba = block_analysis(&data, &BlockSpec::default(), Policy::default()).unwrap();
        assert_eq!(ba.n_blocks, 1);
        assert_eq!(ba.average.unwrap(), ba.single_block.values);
    }

    #[test]
    fn partition_discards_trailing_shots() {
        let mut data = synthetic(3);
        data.truncate(3 * 220 - 5);
        let (blocks, rest) = partition_blocks(&data, &BlockSpec::default()).unwrap();
        assert_eq!(blocks.len(), 2);
        assert_eq!(rest.counts(), SettingCounts { z: 100, y: 100, x: 15 });
    }

    #[test]
    fn bootstrap_of_identical_blocks_is_zero() {
        let one = synthetic(1);
        let mut data = Vec::new();
        for b in 0..5u64 {
            data.extend(one.iter().map(|r| ShotRecord { shot_id: r.shot_id + 220 * b, ..r.clone() }));
        }
        let e = bootstrap_errors(&data, &BlockSpec::default(), Policy::default(), 100, 3).unwrap();
        assert!(e.average.epr_a_to_b.abs() < 1e-9);
        assert!(e.single_block.ent.abs() < 1e-9);
        assert!(bootstrap_errors(&data, &BlockSpec::default(), Policy::default(), 10, 3).is_err());
    }

    #[test]
    fn missing_setting_is_incomplete() {
        let data: Vec<ShotRecord> = synthetic(1).into_iter().filter(|r| r.basis_a != Basis::Y).collect();
        assert!(matches!(epr_criterion(&data, Direction::AToB, Policy::default()), Err(Error::IncompleteDataset(_))));
    }
}
