//! End-to-end pipeline: coherent state, twisting, splitting, block schedule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Squeezing};
use crate::criteria::BlockSpec;
use crate::error::Result;
use crate::sampler::{Basis, ExactSampler, GaussianSampler, MeasurementSetting, ShotRecord};
use crate::spin::{chi_t_for_squeezing, moments_from_state, squeezed_state, DickeState, OatSpec, SpinMoments};
use crate::splitter::{moments_from_bipartite, split_exact_with_limit, split_moments, BipartiteFockState, JointMoments};

/// Identifies the producing run of a record file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub config_hash: String,
    pub seed: u64,
    pub n_atoms: usize,
    pub chi_t: f64,
    pub engine: String,
}

pub const RECORD_FORMAT: &str = "eprsim-shots/1";

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<ShotRecord>,
}

enum Source {
    Exact(BipartiteFockState),
    Gaussian(JointMoments),
}

/// A prepared split state ready for sampling.
pub struct Experiment {
    config: RunConfig,
    chi_t: f64,
    pre_split: SpinMoments,
    joint: JointMoments,
    source: Source,
}

/// Pre-split state of a configuration: x-polarized, twisted, and rotated
/// so that z is the squeezed axis.
pub fn prepare_state(config: &RunConfig) -> Result<(DickeState, OatSpec)> {
    let chi_t = match config.squeezing {
        Squeezing::None => 0.0,
        Squeezing::ChiT(x) => x,
        Squeezing::TargetDb(db) if db == 0.0 => 0.0,
        Squeezing::TargetDb(db) => chi_t_for_squeezing(config.n_atoms, db)?,
    };
    squeezed_state(config.n_atoms, chi_t)
}

/// Scales the mean spin by `contrast`, keeping the covariance.
pub fn apply_contrast(m: &SpinMoments, contrast: f64) -> SpinMoments {
    let cov = m.covariance();
    let mean = m.mean.map(|v| v * contrast);
    let mut second = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            second[i][j] = cov[i][j] + mean[i] * mean[j];
        }
    }
    SpinMoments { mean, second_moments: second, n_atoms: m.n_atoms }
}

impl Experiment {
    pub fn prepare(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let (state, spec) = prepare_state(config)?;
        let chi_t = spec.chi_t;
        let pure = moments_from_state(&state);
        let pre_split = apply_contrast(&pure, config.noise.contrast);
        let (joint, source) = if config.uses_exact() {
            let split = split_exact_with_limit(&state, config.transmission, config.exact_limit)?;
            (moments_from_bipartite(&split), Source::Exact(split))
        } else {
            let jm = split_moments(&pre_split, config.transmission)?;
            (jm.clone(), Source::Gaussian(jm))
        };
        Ok(Self { config: config.clone(), chi_t, pre_split, joint, source })
    }

    pub fn chi_t(&self) -> f64 {
        self.chi_t
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn engine_name(&self) -> &'static str {
        match self.source {
            Source::Exact(_) => "exact",
            Source::Gaussian(_) => "gaussian",
        }
    }

    /// Pre-split moments after the contrast reduction.
    pub fn pre_split_moments(&self) -> &SpinMoments {
        &self.pre_split
    }

    /// Joint moments of the split state, before any measurement noise.
    pub fn joint_moments(&self) -> &JointMoments {
        &self.joint
    }

    pub fn header(&self, seed: u64) -> DatasetHeader {
        let cfg = RunConfig { seed, ..self.config.clone() };
        DatasetHeader {
            format: RECORD_FORMAT.into(),
            config_hash: cfg.hash(),
            seed,
            n_atoms: self.config.n_atoms,
            chi_t: self.chi_t,
            engine: self.engine_name().into(),
        }
    }

    /// Samples the configured schedule with B rotated by `theta_b`.
    pub fn sample(&self, theta_b: f64, seed: u64) -> Result<Vec<ShotRecord>> {
        let settings = schedule(&self.config.block, self.config.total_shots(), theta_b)?;
        let mut groups: BTreeMap<(Basis, Basis), Vec<u64>> = BTreeMap::new();
        for (id, s) in settings.iter().enumerate() {
            groups.entry((s.basis_a, s.basis_b)).or_default().push(id as u64);
        }
        let mut records = Vec::with_capacity(settings.len());
        match &self.source {
            Source::Exact(state) => {
                let mut sampler = ExactSampler::with_limit(state, self.config.noise, self.config.exact_limit)?;
                for (&(a, b), ids) in &groups {
                    let setting = MeasurementSetting::new(a, b, theta_b)?;
                    records.extend(sampler.sample_ids(&setting, ids, seed)?);
                }
            }
            Source::Gaussian(jm) => {
                let sampler = GaussianSampler::new(jm, self.config.noise)?;
                for (&(a, b), ids) in &groups {
                    let setting = MeasurementSetting::new(a, b, theta_b)?;
                    records.extend(sampler.sample_ids(&setting, ids, seed));
                }
            }
        }
        records.sort_by_key(|r| r.shot_id);
        Ok(records)
    }

    pub fn run(&self, theta_b: f64, seed: u64) -> Result<Dataset> {
        Ok(Dataset { header: self.header(seed), records: self.sample(theta_b, seed)? })
    }
}

/// Settings of the first `n_shots` shots: per block the z shots, the y
/// shots, then half the x shots along +x and the rest along -x.
pub fn schedule(block: &BlockSpec, n_shots: usize, theta_b: f64) -> Result<Vec<MeasurementSetting>> {
    let plus_x = block.x / 2 + block.x % 2;
    let mut one_block = Vec::with_capacity(block.shots());
    one_block.extend(std::iter::repeat_n(Basis::Z, block.z));
    one_block.extend(std::iter::repeat_n(Basis::Y, block.y));
    one_block.extend(std::iter::repeat_n(Basis::X, plus_x));
    one_block.extend(std::iter::repeat_n(Basis::MinusX, block.x - plus_x));
    one_block
        .iter()
        .cycle()
        .take(n_shots)
        .map(|&b| MeasurementSetting::both(b, theta_b))
        .collect()
}

/// Prepares, splits and samples the configured run.
pub fn run_experiment(config: &RunConfig, seed: u64) -> Result<Dataset> {
    Experiment::prepare(config)?.run(config.theta_b, seed)
}
