//! Experiment configuration (TOML) and its digest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::SolverSettings;
use crate::formulations::{Epsilon, Mode};
use crate::io::{self, CaseData, InputError};
use crate::uncertainty::DistributionKind;

/// Environment variable overriding the output directory.
pub const OUT_DIR_ENV: &str = "PUMPFLEX_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseSection {
    /// Paths are relative to the configuration file.
    pub pdn: PathBuf,
    pub wdn: PathBuf,
    pub multipliers: PathBuf,
    pub prices: PathBuf,
    pub periods: usize,
    pub dt_hours: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FormulationSection {
    pub mode: Mode,
    pub eps_p: Epsilon,
    pub eps_w: Epsilon,
    pub final_tank: bool,
    /// Scale applied to the sampled robust box.
    pub box_scale: f64,
}

impl Default for FormulationSection {
    fn default() -> Self {
        FormulationSection {
            mode: Mode::Probabilistic,
            eps_p: Epsilon::Uniform(0.05),
            eps_w: Epsilon::Uniform(0.05),
            final_tank: true,
            box_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Samples {
    pub fit: usize,
    pub robust: usize,
    pub evaluation: usize,
}

impl Default for Samples {
    fn default() -> Self {
        Samples { fit: 500, robust: 2000, evaluation: 50_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub fit: u64,
    pub robust: u64,
    pub evaluation: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds { fit: 1, robust: 2, evaluation: 3 }
    }
}

impl Seeds {
    pub fn from_base(seed: u64) -> Self {
        Seeds { fit: seed, robust: seed.wrapping_add(1), evaluation: seed.wrapping_add(2) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub include_final_tank: bool,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection { include_final_tank: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// `(ε_p, ε_w)` pairs, one table row each.
    pub eps: Vec<(f64, f64)>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection { eps: vec![(0.1, 0.1), (0.05, 0.05), (0.01, 0.01), (0.001, 0.001), (1e-4, 1e-4)] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub case: CaseSection,
    #[serde(default)]
    pub formulation: FormulationSection,
    pub distribution: DistributionKind,
    #[serde(default)]
    pub samples: Samples,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// A configuration with its directory and the raw bytes of every input it references.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub dir: PathBuf,
    pub case: CaseData,
    inputs: Vec<(String, Vec<u8>)>,
}

impl ExperimentConfig {
    pub fn parse(path: &Path, text: &str) -> Result<Self, InputError> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| InputError::Parse { path: path.to_path_buf(), msg: e.to_string() })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), InputError> {
        let bad = |m: &str| Err(InputError::Invalid(format!("configuration: {m}")));
        if self.case.periods == 0 {
            return bad("case.periods must be positive");
        }
        if !(self.case.dt_hours > 0.0 && self.case.dt_hours.is_finite()) {
            return bad("case.dt_hours must be positive");
        }
        if !(self.formulation.box_scale > 0.0 && self.formulation.box_scale.is_finite()) {
            return bad("formulation.box_scale must be positive");
        }
        if self.samples.fit < 2 || self.samples.robust < 1 || self.samples.evaluation < 1 {
            return bad("samples.fit must be at least 2 and other sample counts at least 1");
        }
        Ok(())
    }

    pub fn resolve(&self, dir: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            dir.join(p)
        }
    }
}

pub fn load(path: &Path) -> Result<LoadedConfig, InputError> {
    let bytes = io::read_bytes(path)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| InputError::Parse { path: path.to_path_buf(), msg: "not valid UTF-8".into() })?;
    let config = ExperimentConfig::parse(path, &text)?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let read = |p: &Path| -> Result<(PathBuf, Vec<u8>), InputError> {
        let full = config.resolve(&dir, p);
        let b = io::read_bytes(&full)?;
        Ok((full, b))
    };
    let (pdn_path, pdn_bytes) = read(&config.case.pdn)?;
    let (wdn_path, wdn_bytes) = read(&config.case.wdn)?;
    let (mul_path, mul_bytes) = read(&config.case.multipliers)?;
    let (pri_path, pri_bytes) = read(&config.case.prices)?;
    let t = config.case.periods;
    let case = CaseData {
        pdn: io::parse_pdn(&pdn_path, &pdn_bytes)?,
        wdn: io::parse_wdn(&wdn_path, &wdn_bytes)?,
        multipliers: io::parse_multipliers(&mul_path, &mul_bytes, t)?,
        prices: io::parse_prices(&pri_path, &pri_bytes, t)?,
    };
    let inputs = vec![
        ("pdn".to_string(), pdn_bytes),
        ("wdn".to_string(), wdn_bytes),
        ("multipliers".to_string(), mul_bytes),
        ("prices".to_string(), pri_bytes),
    ];
    Ok(LoadedConfig { config, dir, case, inputs })
}

impl LoadedConfig {
    /// SHA-256 over the resolved configuration (after overrides, output
    /// directory excluded) and the contents of every referenced input file.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        let mut c = self.config.clone();
        c.output_dir = PathBuf::new();
        h.update(serde_json::to_vec(&c).expect("config serializes"));
        for (name, bytes) in &self.inputs {
            h.update(name.as_bytes());
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(bytes);
        }
        format!("{:x}", h.finalize())
    }

    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_DIR_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.config.resolve(&self.dir, &self.config.output_dir),
        }
    }
}
