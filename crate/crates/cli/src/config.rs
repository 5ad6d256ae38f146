//! Experiment configuration: a TOML file with every seed explicit, plus a
//! handful of command-line overrides.

use std::path::{Path, PathBuf};

use landscape::certify::{default_radii, RegionConfig, Seeds, SourcePolicy};
use landscape::{ActivationKind, InputSampler, TrainOptions};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedConfig {
    pub data: u64,
    pub init: u64,
    pub probe: u64,
    pub perturb: u64,
}

impl Default for SeedConfig {
    fn default() -> Self {
        let s = Seeds::default();
        SeedConfig { data: s.data, init: s.init, probe: s.probe, perturb: s.perturb }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathConfig {
    /// `"random"` (target dims, init seed), `"teacher"`, or a network /
    /// region-evidence JSON file.
    pub start: String,
    pub steps: usize,
    pub max_steps: usize,
    pub eps: f64,
    /// Every `snapshot_stride`-th grid point is written as a network.
    pub snapshot_stride: usize,
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig { start: "random".into(), steps: 256, max_steps: 4096, eps: 1e-4, snapshot_stride: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InfinityConfig {
    /// Sanity mode: verify the sign-flipped family, which must FAIL.
    pub flipped: bool,
    /// Seed of the base network whose lower layers the family keeps.
    pub base_seed: u64,
    pub ball_radius: f64,
    pub ball_samples: usize,
}

impl Default for InfinityConfig {
    fn default() -> Self {
        InfinityConfig { flipped: false, base_seed: 7, ball_radius: 1e-3, ball_samples: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    pub layer: usize,
    pub source: usize,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig { layer: 1, source: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub teacher_dims: Vec<usize>,
    pub student_dims: Vec<usize>,
    pub target_dims: Vec<usize>,
    pub n_samples: usize,
    pub activation: ActivationKind,
    pub teacher_scale: f64,
    pub student_scale: f64,
    pub input_low: f64,
    pub input_high: f64,
    pub lambda: f64,
    pub lambda_saddle: f64,
    pub walk_steps: usize,
    pub include_bias: bool,
    pub source_policy: SourcePolicy,
    pub max_attempts: usize,
    pub train_max_iters: usize,
    pub probe_k: usize,
    pub radii: Vec<f64>,
    /// Network (or region-evidence) JSON used by `probe` and `embed`
    /// instead of a freshly trained student.
    pub network: Option<PathBuf>,
    pub seeds: SeedConfig,
    pub path: PathConfig,
    pub infinity: InfinityConfig,
    pub embed: EmbedConfig,
    /// Not part of the config hash.
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let r = RegionConfig::default();
        ExperimentConfig {
            teacher_dims: r.teacher_dims,
            student_dims: r.student_dims,
            target_dims: r.target_dims,
            n_samples: r.n_samples,
            activation: r.activation,
            teacher_scale: r.teacher_scale,
            student_scale: r.student_scale,
            input_low: r.sampler.low,
            input_high: r.sampler.high,
            lambda: r.lambda,
            lambda_saddle: r.lambda_saddle,
            walk_steps: r.walk_steps,
            include_bias: r.include_bias,
            source_policy: r.source_policy,
            max_attempts: r.max_attempts,
            train_max_iters: r.train.max_iters,
            probe_k: r.probe_k,
            radii: default_radii(),
            network: None,
            seeds: SeedConfig::default(),
            path: PathConfig::default(),
            infinity: InfinityConfig::default(),
            embed: EmbedConfig::default(),
            out: PathBuf::from("out"),
        }
    }
}

/// Command-line overrides, applied after the file is read.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed_data: Option<u64>,
    pub lambda: Option<f64>,
}

impl ExperimentConfig {
    /// Defaults when `path` is `None`; a missing or malformed file is a
    /// config error.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match path {
            None => ExperimentConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
        };
        if let Some(out) = &overrides.out {
            cfg.out = out.clone();
        }
        if let Some(seed) = overrides.seed_data {
            cfg.seeds.data = seed;
        }
        if let Some(lambda) = overrides.lambda {
            cfg.lambda = lambda;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: &str| Err(CliError::Config(msg.into()));
        for (name, dims) in [("teacher_dims", &self.teacher_dims), ("student_dims", &self.student_dims), ("target_dims", &self.target_dims)] {
            if dims.len() < 2 || dims.contains(&0) {
                return bad(&format!("{name} needs at least two positive widths"));
            }
            if dims[dims.len() - 1] != 1 {
                return bad(&format!("{name} must end in a single output"));
            }
        }
        if self.student_dims[0] != self.teacher_dims[0] || self.target_dims[0] != self.teacher_dims[0] {
            return bad("input widths of teacher, student and target differ");
        }
        if self.n_samples == 0 {
            return bad("n_samples must be positive");
        }
        if !(self.input_low < self.input_high) {
            return bad("input_low must be below input_high");
        }
        if self.path.steps == 0 || self.path.snapshot_stride == 0 {
            return bad("path.steps and path.snapshot_stride must be positive");
        }
        if !self.lambda.is_finite() || !self.lambda_saddle.is_finite() {
            return bad("lambda values must be finite");
        }
        Ok(())
    }

    /// SHA-256 of the resolved config (output directory excluded).
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out = PathBuf::new();
        let text = toml::to_string(&canonical).expect("config serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn sampler(&self) -> InputSampler {
        InputSampler { low: self.input_low, high: self.input_high }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions { max_iters: self.train_max_iters, ..TrainOptions::default() }
    }

    pub fn region(&self) -> RegionConfig {
        let s = self.seeds;
        RegionConfig {
            teacher_dims: self.teacher_dims.clone(),
            student_dims: self.student_dims.clone(),
            target_dims: self.target_dims.clone(),
            n_samples: self.n_samples,
            activation: self.activation,
            teacher_scale: self.teacher_scale,
            student_scale: self.student_scale,
            sampler: self.sampler(),
            seeds: Seeds { data: s.data, init: s.init, probe: s.probe, perturb: s.perturb },
            lambda: self.lambda,
            lambda_saddle: self.lambda_saddle,
            walk_steps: self.walk_steps,
            probe_k: self.probe_k,
            radii: self.radii.clone(),
            include_bias: self.include_bias,
            source_policy: self.source_policy,
            max_attempts: self.max_attempts,
            train: self.train_options(),
            ..RegionConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg: ExperimentConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.region(), RegionConfig::default());
    }

    #[test]
    fn partial_tables_keep_other_defaults() {
        let cfg: ExperimentConfig = toml::from_str("lambda = 0.25\n[seeds]\ndata = 3\n[path]\nsteps = 8\n").unwrap();
        assert_eq!(cfg.lambda, 0.25);
        assert_eq!(cfg.seeds.data, 3);
        assert_eq!(cfg.seeds.init, SeedConfig::default().init);
        assert_eq!(cfg.path.steps, 8);
        assert_eq!(cfg.path.max_steps, 4096);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(toml::from_str::<ExperimentConfig>("lamda = 0.3").is_err());
    }

    #[test]
    fn overrides_apply_and_hash_ignores_out() {
        let ov = Overrides { out: Some("elsewhere".into()), seed_data: Some(9), lambda: Some(0.4) };
        let cfg = ExperimentConfig::load(None, &ov).unwrap();
        assert_eq!((cfg.seeds.data, cfg.lambda), (9, 0.4));
        let mut moved = cfg.clone();
        moved.out = "other".into();
        assert_eq!(cfg.hash(), moved.hash());
        assert_eq!(cfg.hash().len(), 64);
        let mut changed = cfg.clone();
        changed.seeds.probe += 1;
        assert_ne!(cfg.hash(), changed.hash());
    }

    #[test]
    fn missing_file_is_a_config_error() {
        let err = ExperimentConfig::load(Some(Path::new("/nonexistent/landscape.toml")), &Overrides::default());
        assert!(matches!(err, Err(CliError::Config(_))));
    }

    #[test]
    fn invalid_dims_are_rejected() {
        let mut cfg = ExperimentConfig { target_dims: vec![3, 21, 21, 1], ..ExperimentConfig::default() };
        assert!(cfg.validate().is_err());
        cfg.target_dims = vec![2, 21, 21, 2];
        assert!(cfg.validate().is_err());
    }
}
