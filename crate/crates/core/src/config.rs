//! Run configuration.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::criteria::BlockSpec;
use crate::error::{Error, Result};
use crate::sampler::NoiseModel;
use crate::splitter::DEFAULT_EXACT_LIMIT;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "EPRSIM_CONFIG";

/// Excess anti-squeezing that puts the default N = 1400 run at a
/// Heisenberg product of B near 10.
pub const DEFAULT_ANTI_SQUEEZE_EXCESS_DB: f64 = 7.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Squeezing {
    /// Coherent spin state, no twisting.
    None,
    /// Twisting strength chosen for this best transverse squeezing, dB.
    TargetDb(f64),
    /// Explicit twisting strength.
    ChiT(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Exact,
    Gaussian,
    Auto,
}

impl std::str::FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Engine::Exact),
            "gaussian" => Ok(Engine::Gaussian),
            "auto" => Ok(Engine::Auto),
            _ => Err(Error::Config(format!("unknown engine {s:?}"))),
        }
    }
}

/// Output locations used by the command-line tool. Not part of the hash.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    pub records: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub svg: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub n_atoms: usize,
    pub squeezing: Squeezing,
    /// Fraction of atoms sent to A.
    pub transmission: f64,
    pub noise: NoiseModel,
    pub block: BlockSpec,
    pub n_blocks: usize,
    /// Truncates the schedule to this many shots when set.
    pub n_shots: Option<usize>,
    /// Rotation of B about x for `simulate`.
    pub theta_b: f64,
    /// Angles for `sweep-theta`.
    pub thetas: Vec<f64>,
    pub engine: Engine,
    pub exact_limit: usize,
    pub seed: u64,
    pub bootstrap_resamples: usize,
    pub output: OutputPaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_atoms: 1400,
            squeezing: Squeezing::TargetDb(-7.0),
            transmission: 0.5,
            noise: NoiseModel { anti_squeeze_excess_db: DEFAULT_ANTI_SQUEEZE_EXCESS_DB, ..NoiseModel::experimental() },
            block: BlockSpec::default(),
            n_blocks: 20,
            n_shots: None,
            theta_b: 0.0,
            thetas: vec![0.0, PI / 4.0, PI / 2.0, 3.0 * PI / 4.0, PI],
            engine: Engine::Auto,
            exact_limit: DEFAULT_EXACT_LIMIT,
            seed: 1,
            bootstrap_resamples: 400,
            output: OutputPaths::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_atoms == 0 {
            return fail("n_atoms must be positive".into());
        }
        match self.squeezing {
            Squeezing::TargetDb(db) if !(db.is_finite() && db <= 0.0) => {
                return fail("squeezing target must be a finite number of dB <= 0".into())
            }
            Squeezing::ChiT(x) if !x.is_finite() => return fail("chi_t must be finite".into()),
            _ => {}
        }
        if !(self.transmission > 0.0 && self.transmission < 1.0) {
            return fail("transmission must lie in (0, 1)".into());
        }
        self.noise.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.block.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !self.theta_b.is_finite() || self.thetas.iter().any(|t| !t.is_finite()) {
            return fail("angles must be finite".into());
        }
        if self.engine == Engine::Exact && self.n_atoms > self.exact_limit {
            return fail(format!(
                "engine \"exact\" supports at most {} atoms but n_atoms is {}; \
                 set \"engine\": \"gaussian\" or \"auto\"",
                self.exact_limit, self.n_atoms
            ));
        }
        if self.engine == Engine::Exact && self.noise.contrast < 1.0 {
            return fail("engine \"exact\" samples pure states; set noise.contrast to 1 or use the gaussian engine".into());
        }
        if self.bootstrap_resamples < 100 {
            return fail("bootstrap_resamples must be at least 100".into());
        }
        Ok(())
    }

    /// Whether the exact engine is used.
    pub fn uses_exact(&self) -> bool {
        match self.engine {
            Engine::Exact => true,
            Engine::Gaussian => false,
            Engine::Auto => self.n_atoms <= self.exact_limit && self.noise.contrast == 1.0,
        }
    }

    pub fn total_shots(&self) -> usize {
        let scheduled = self.n_blocks * self.block.shots();
        self.n_shots.unwrap_or(scheduled)
    }

    /// SHA-256 of the canonical JSON of everything but the output paths.
    pub fn hash(&self) -> String {
        let canonical = RunConfig { output: OutputPaths::default(), ..self.clone() };
        let json = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
