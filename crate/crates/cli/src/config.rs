//! Experiment configuration: one JSON document per run.

use std::path::{Path, PathBuf};

use driftbound::model::{check_data_assumption, synthesize, DataSet, LargeSetSpec, ModelConfig};
use driftbound::numerics::RngStream;
use driftbound::report::resolve_large_set;
use driftbound::simulation::{domain, KernelMode};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

/// Resamples tried before synthesis gives up on the data assumption.
pub const SYNTH_ATTEMPTS: u64 = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n: usize,
    pub center: f64,
    /// Rescale so that `Delta/(n-1) = center + V` exactly.
    #[serde(default = "yes")]
    pub exact_center: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// One observation per line, or a JSON array.
    File(PathBuf),
    Synth(SynthSpec),
}

/// Ensemble, reference chain and TV settings for `simulate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_chains: usize,
    pub n_steps: u64,
    pub burn_in: u64,
    pub record_stride: u64,
    pub tv_replicas: usize,
    pub reference_burn_in: u64,
    pub reference_steps: u64,
    pub reference_thin: u64,
    pub bins_theta: usize,
    pub bins_a: usize,
    pub kernel: KernelMode,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_chains: 1000,
            n_steps: 200,
            burn_in: 0,
            record_stride: 1,
            tv_replicas: 10_000,
            reference_burn_in: 100_000,
            reference_steps: 1_000_000,
            reference_thin: 10,
            bins_theta: 64,
            bins_a: 64,
            kernel: KernelMode::Sufficient,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationScale {
    /// Sample sizes as stated by the acceptance criteria.
    #[default]
    Full,
    /// Roughly 1/100 of the work, for smoke tests.
    Quick,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default = "default_data")]
    pub data: DataSource,
    /// Lower edge of the large set; default `min(delta, A_hat/2)`.
    #[serde(default)]
    pub large_set_t: Option<f64>,
    /// Small-set level; default `2.5 b/(1 - lambda_T)`.
    #[serde(default)]
    pub small_set_d: Option<f64>,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_k_max")]
    pub k_max: u64,
    #[serde(default = "default_n_list")]
    pub n_list: Vec<usize>,
    #[serde(default = "default_mixing_c")]
    pub mixing_c: f64,
    #[serde(default)]
    pub validation_scale: ValidationScale,
}

fn default_data() -> DataSource {
    DataSource::Synth(SynthSpec {
        n: 100,
        center: 2.0,
        exact_center: true,
    })
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_seed() -> u64 {
    1
}

fn default_k_max() -> u64 {
    200
}

fn default_n_list() -> Vec<usize> {
    vec![100, 400, 1600, 6400]
}

fn default_mixing_c() -> f64 {
    0.25
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            data: default_data(),
            large_set_t: None,
            small_set_d: None,
            simulation: SimulationConfig::default(),
            output_dir: default_out(),
            seed: default_seed(),
            k_max: default_k_max(),
            n_list: default_n_list(),
            mixing_c: default_mixing_c(),
            validation_scale: ValidationScale::default(),
        }
    }
}

/// Configuration plus loaded data and the resolved large set.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: ExperimentConfig,
    pub data: DataSet,
    pub large_set: LargeSetSpec,
}

impl ExperimentConfig {
    /// Reads a config, or the `config` section of a run manifest.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        match serde_json::from_str::<Self>(&text) {
            Ok(c) => Ok(c),
            Err(first) => match serde_json::from_str::<RunManifest>(&text) {
                Ok(m) => Ok(m.config),
                Err(_) => Err(CliError::Config(format!("{}: {first}", path.display()))),
            },
        }
    }

    /// Field-level checks that need no data.
    pub fn validate(&self) -> CliResult<()> {
        self.model.validate().map_err(CliError::config("model"))?;
        let s = &self.simulation;
        if s.n_chains == 0 || s.n_steps == 0 || s.record_stride == 0 {
            return Err(CliError::Config("simulation: n_chains, n_steps and record_stride must be positive".into()));
        }
        if s.burn_in >= s.n_steps {
            return Err(CliError::Config(format!(
                "simulation: burn_in = {} must be below n_steps = {}",
                s.burn_in, s.n_steps
            )));
        }
        if s.tv_replicas == 0 || s.reference_thin == 0 || s.reference_steps < s.reference_thin {
            return Err(CliError::Config(
                "simulation: tv_replicas must be positive and reference_steps >= reference_thin > 0".into(),
            ));
        }
        if s.bins_theta == 0 || s.bins_a == 0 {
            return Err(CliError::Config("simulation: bin counts must be positive".into()));
        }
        if self.k_max == 0 {
            return Err(CliError::Config("k_max must be >= 1".into()));
        }
        if !(self.mixing_c > 0.0 && self.mixing_c < 1.0) {
            return Err(CliError::Config(format!("mixing_c = {} must lie in (0, 1)", self.mixing_c)));
        }
        if self.n_list.is_empty() || self.n_list.iter().any(|&n| n < 2) {
            return Err(CliError::Config("n_list must be non-empty with every n >= 2".into()));
        }
        if let DataSource::Synth(s) = &self.data {
            if s.n < 2 {
                return Err(CliError::Config(format!("data.synth.n = {} must be >= 2", s.n)));
            }
            if !(s.center > 0.0 && s.center.is_finite()) {
                return Err(CliError::Config(format!("data.synth.center = {} must be positive", s.center)));
            }
        }
        if let Some(t) = self.large_set_t {
            if !(t > 0.0) {
                return Err(CliError::Config(format!("large_set_t = {t} must be positive")));
            }
        }
        if let Some(d) = self.small_set_d {
            if !(d > 0.0 && d.is_finite()) {
                return Err(CliError::Config(format!("small_set_d = {d} must be positive")));
            }
        }
        Ok(())
    }

    /// Loads or synthesizes the data and resolves `T`.
    pub fn resolve(&self) -> CliResult<Resolved> {
        self.validate()?;
        let data = match &self.data {
            DataSource::File(p) => read_data_file(p)?,
            DataSource::Synth(s) => synthesize_checked(s, &self.model, self.seed)?.0,
        };
        let large_set = resolve_large_set(&data, &self.model, self.large_set_t).map_err(CliError::config("large set"))?;
        Ok(Resolved {
            config: self.clone(),
            data,
            large_set,
        })
    }
}

/// Stream index for synthesis: the sample size in the high bits, the attempt in the low 7.
pub fn synth_stream_index(n: usize, attempt: u64) -> u64 {
    ((n as u64) << 7) | attempt
}

/// Synthetic data meeting the data assumption, and the number of draws it took.
pub fn synthesize_checked(s: &SynthSpec, model: &ModelConfig, seed: u64) -> CliResult<(DataSet, u64)> {
    if s.n < 2 {
        return Err(CliError::Config(format!("synthesis needs n >= 2, got {}", s.n)));
    }
    for attempt in 0..SYNTH_ATTEMPTS {
        let mut rng = RngStream::derived(seed, domain::SYNTH, synth_stream_index(s.n, attempt));
        let ds = synthesize(s.n, s.center, model.v, s.exact_center, &mut rng).map_err(CliError::config("synthesis"))?;
        if check_data_assumption(&ds, model) {
            return Ok((ds, attempt + 1));
        }
    }
    Err(CliError::Config(format!(
        "synthesis: Delta/(n-1) >= V + delta failed on all {SYNTH_ATTEMPTS} resamples (n = {}, center = {}, V = {}, delta = {})",
        s.n, s.center, model.v, model.delta_margin
    )))
}

/// Parses one-per-line text (blank lines and `#` comments skipped) or a JSON array.
pub fn parse_data(text: &str) -> CliResult<DataSet> {
    let y: Vec<f64> = if text.trim_start().starts_with('[') {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("data: {e}")))?
    } else {
        text.lines()
            .enumerate()
            .map(|(i, l)| (i, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .map(|(i, l)| {
                l.parse::<f64>()
                    .map_err(|e| CliError::Config(format!("data line {}: {e}: {l:?}", i + 1)))
            })
            .collect::<CliResult<_>>()?
    };
    DataSet::new(y).map_err(CliError::config("data"))
}

pub fn read_data_file(path: &Path) -> CliResult<DataSet> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_data(&text)
}
