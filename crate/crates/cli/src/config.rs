//! Experiment configuration: a plain-text key=value file with
//! command-line overrides. Precedence is flags > file > defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use antispoof_core::features::{BlockSpec, Dynamics, FeatureConfig, FeatureFamily};
use antispoof_core::gmm::TrainingOptions;

/// Which training audio feeds the warp estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarpSource {
    /// The whole training split, genuine and spoofed.
    All,
    /// Genuine training audio only.
    GenuineOnly,
}

impl WarpSource {
    fn parse(s: &str) -> Result<WarpSource> {
        match s {
            "all" => Ok(WarpSource::All),
            "genuine" => Ok(WarpSource::GenuineOnly),
            other => bail!("warp_source must be `all` or `genuine`, got {other:?}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub corpus_root: PathBuf,
    pub train_protocol: PathBuf,
    pub dev_protocol: PathBuf,
    pub work_dir: PathBuf,
    pub families: Vec<FeatureFamily>,
    pub dynamics: Vec<Dynamics>,
    pub n_filters: usize,
    pub n_ceps: usize,
    pub blocks: BlockSpec,
    pub components: usize,
    pub em_iterations: usize,
    pub seed: u64,
    pub variance_floor: f64,
    pub workers: usize,
    pub frame_ms: f64,
    pub overlap: f64,
    /// 0 selects the smallest power of two that fits a frame.
    pub fft_size: usize,
    pub sample_rate: u32,
    pub pre_emphasis: f64,
    pub warp_source: WarpSource,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            corpus_root: PathBuf::from("."),
            train_protocol: PathBuf::from("train_protocol.tsv"),
            dev_protocol: PathBuf::from("dev_protocol.tsv"),
            work_dir: PathBuf::from("work"),
            families: FeatureFamily::ALL.to_vec(),
            dynamics: Dynamics::ALL.to_vec(),
            n_filters: 20,
            n_ceps: 20,
            blocks: BlockSpec::default_two_block(),
            components: 512,
            em_iterations: 10,
            seed: 1,
            variance_floor: 0.01,
            workers: 0,
            frame_ms: 20.0,
            overlap: 0.5,
            fft_size: 0,
            sample_rate: 16000,
            pre_emphasis: 0.0,
            warp_source: WarpSource::All,
        }
    }
}

/// Flag-level overrides collected by the CLI.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub corpus_root: Option<PathBuf>,
    pub train_protocol: Option<PathBuf>,
    pub dev_protocol: Option<PathBuf>,
    pub work_dir: Option<PathBuf>,
    pub families: Option<Vec<String>>,
    pub dynamics: Option<Vec<String>>,
    pub components: Option<usize>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

fn parse_families(raw: &str) -> Result<Vec<FeatureFamily>> {
    if raw.trim() == "all" {
        return Ok(FeatureFamily::ALL.to_vec());
    }
    raw.split(',')
        .map(|s| FeatureFamily::parse(s.trim()).map_err(Into::into))
        .collect()
}

fn parse_dynamics(raw: &str) -> Result<Vec<Dynamics>> {
    if raw.trim() == "all" {
        return Ok(Dynamics::ALL.to_vec());
    }
    raw.split(',')
        .map(|s| Dynamics::parse(s.trim()).map_err(Into::into))
        .collect()
}

fn parse_blocks(raw: &str) -> Result<BlockSpec> {
    let mut blocks = Vec::new();
    for part in raw.split(',') {
        let (a, b) = part
            .trim()
            .split_once('-')
            .with_context(|| format!("block {part:?} is not of the form start-end"))?;
        blocks.push((
            a.trim().parse().with_context(|| format!("bad block start {a:?}"))?,
            b.trim().parse().with_context(|| format!("bad block end {b:?}"))?,
        ));
    }
    Ok(BlockSpec { blocks })
}

impl ExperimentConfig {
    /// Read a key=value config file. Lines starting with `#` and blank
    /// lines are skipped; unknown keys are errors.
    pub fn from_file(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg = ExperimentConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("{}:{}: expected key = value", path.display(), i + 1))?;
            let key = key.trim();
            let value = value.trim();
            let ctx = || format!("{}:{}: bad value for {key}", path.display(), i + 1);
            match key {
                "corpus_root" => cfg.corpus_root = PathBuf::from(value),
                "train_protocol" => cfg.train_protocol = PathBuf::from(value),
                "dev_protocol" => cfg.dev_protocol = PathBuf::from(value),
                "work_dir" => cfg.work_dir = PathBuf::from(value),
                "families" => cfg.families = parse_families(value)?,
                "dynamics" => cfg.dynamics = parse_dynamics(value)?,
                "n_filters" => cfg.n_filters = value.parse().with_context(ctx)?,
                "n_ceps" => cfg.n_ceps = value.parse().with_context(ctx)?,
                "blocks" => cfg.blocks = parse_blocks(value)?,
                "components" => cfg.components = value.parse().with_context(ctx)?,
                "em_iterations" => cfg.em_iterations = value.parse().with_context(ctx)?,
                "seed" => cfg.seed = value.parse().with_context(ctx)?,
                "variance_floor" => cfg.variance_floor = value.parse().with_context(ctx)?,
                "workers" => cfg.workers = value.parse().with_context(ctx)?,
                "frame_ms" => cfg.frame_ms = value.parse().with_context(ctx)?,
                "overlap" => cfg.overlap = value.parse().with_context(ctx)?,
                "fft_size" => cfg.fft_size = value.parse().with_context(ctx)?,
                "sample_rate" => cfg.sample_rate = value.parse().with_context(ctx)?,
                "pre_emphasis" => cfg.pre_emphasis = value.parse().with_context(ctx)?,
                "warp_source" => cfg.warp_source = WarpSource::parse(value)?,
                other => bail!("{}:{}: unknown config key {other:?}", path.display(), i + 1),
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, overrides: &Overrides) -> Result<()> {
        if let Some(v) = &overrides.corpus_root {
            self.corpus_root = v.clone();
        }
        if let Some(v) = &overrides.train_protocol {
            self.train_protocol = v.clone();
        }
        if let Some(v) = &overrides.dev_protocol {
            self.dev_protocol = v.clone();
        }
        if let Some(v) = &overrides.work_dir {
            self.work_dir = v.clone();
        }
        if let Some(v) = &overrides.families {
            self.families = parse_families(&v.join(","))?;
        }
        if let Some(v) = &overrides.dynamics {
            self.dynamics = parse_dynamics(&v.join(","))?;
        }
        if let Some(v) = overrides.components {
            self.components = v;
        }
        if let Some(v) = overrides.seed {
            self.seed = v;
        }
        if let Some(v) = overrides.workers {
            self.workers = v;
        }
        Ok(())
    }

    /// Frame length in samples at the configured rate.
    pub fn frame_len(&self) -> usize {
        (self.frame_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    /// Configured FFT size, or the power-of-two default.
    pub fn resolved_fft_size(&self) -> usize {
        if self.fft_size == 0 {
            antispoof_core::signal::default_fft_size(self.frame_len())
        } else {
            self.fft_size
        }
    }

    pub fn feature_config(&self, family: FeatureFamily, dynamics: Dynamics) -> FeatureConfig {
        FeatureConfig {
            family,
            dynamics,
            n_filters: self.n_filters,
            n_ceps: self.n_ceps,
            block_spec: if family.is_block() {
                Some(self.blocks.clone())
            } else {
                None
            },
        }
    }

    pub fn training_options(&self) -> TrainingOptions {
        TrainingOptions {
            n_components: self.components,
            n_em_iterations: self.em_iterations,
            seed: self.seed,
            variance_floor_factor: self.variance_floor,
        }
    }

    pub fn warp_path(&self) -> PathBuf {
        self.work_dir.join("sfcc.warp")
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.work_dir.join("cache")
    }

    pub fn model_dir(&self) -> PathBuf {
        self.work_dir.join("models")
    }

    pub fn score_dir(&self) -> PathBuf {
        self.work_dir.join("scores")
    }

    pub fn config_tag(family: FeatureFamily, dynamics: Dynamics) -> String {
        let dyn_tag = match dynamics {
            Dynamics::Static => "static",
            Dynamics::StaticDeltas => "staticdd",
            Dynamics::DeltasOnly => "dd",
        };
        format!("{}.{dyn_tag}", family.name())
    }
}
