//! TOML experiment configuration. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use metasharp::meta::{AdaptMode, Algorithm, OuterOptimizer};
use metasharp::nn::{Activation, Head, MlpSpec};
use metasharp::sharpness::SharpnessConfig;
use metasharp::tasks::{BlobFamily, EpisodeSpec, QuadraticFamily, SinusoidFamily};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    pub iterations: usize,
    #[serde(default = "default_tasks")]
    pub tasks_per_iteration: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: AdaptMode,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_threads")]
    pub threads: usize,
    #[serde(default)]
    pub record_timing: bool,
    #[serde(default = "default_eval")]
    pub eval_episodes: usize,
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub max_tasks: Option<usize>,
    #[serde(default)]
    pub optimizer: OuterOptimizer,
    #[serde(default)]
    pub sharpness: SharpnessSection,
    pub task: TaskConfig,
    #[serde(default)]
    pub model: Option<ModelSection>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub compare: Option<CompareSection>,
    #[serde(default)]
    pub bounds: BoundsSection,
}

fn default_algorithm() -> Algorithm {
    Algorithm::Dgs
}
fn default_tasks() -> usize {
    4
}
fn default_threads() -> usize {
    1
}
fn default_eval() -> usize {
    50
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SharpnessSection {
    /// Radius used for both levels unless `alpha_l` / `alpha_u` are given.
    pub alpha: f64,
    pub alpha_l: Option<f64>,
    pub alpha_u: Option<f64>,
    pub delta: f64,
    pub gamma: f64,
    /// Inner rate; defaults to `gamma`.
    pub beta: Option<f64>,
    pub inner_steps: usize,
    pub clip_c: Option<f64>,
}

impl Default for SharpnessSection {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            alpha_l: None,
            alpha_u: None,
            delta: 0.01,
            gamma: 0.01,
            beta: None,
            inner_steps: 5,
            clip_c: None,
        }
    }
}

impl SharpnessSection {
    pub fn resolve(&self) -> SharpnessConfig<f64> {
        SharpnessConfig {
            alpha_l: self.alpha_l.unwrap_or(self.alpha),
            alpha_u: self.alpha_u.unwrap_or(self.alpha),
            delta: self.delta,
            gamma: self.gamma,
            beta: self.beta.unwrap_or(self.gamma),
            inner_steps: self.inner_steps,
            clip_c: self.clip_c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobTaskConfig {
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query: usize,
    pub dim: usize,
    pub separation: f64,
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    #[serde(default)]
    pub half_width: Option<f64>,
}

fn default_noise() -> f64 {
    1.0
}

impl BlobTaskConfig {
    pub fn family(&self) -> BlobFamily {
        BlobFamily {
            noise_std: self.noise_std,
            half_width: self.half_width,
            ..BlobFamily::new(self.dim, self.separation)
        }
    }

    pub fn episode_spec(&self, seed: u64) -> EpisodeSpec {
        EpisodeSpec {
            n_way: self.n_way,
            k_shot: self.k_shot,
            q_query: self.q_query,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetTaskConfig {
    /// IDX image file (`[n, h, w]` or `[n, features]`).
    pub images: PathBuf,
    /// IDX label file (`[n]`).
    pub labels: PathBuf,
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskConfig {
    Sinusoid(SinusoidFamily),
    Blobs(BlobTaskConfig),
    Dataset(DatasetTaskConfig),
    Quadratic(QuadraticFamily),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_activation() -> Activation {
    Activation::Relu
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub deltas: Vec<f64>,
    #[serde(default)]
    pub alphas: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    pub algorithms: Vec<Algorithm>,
    /// Consecutive seeds starting at the run seed.
    #[serde(default = "default_seeds")]
    pub seeds: usize,
}

fn default_seeds() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsSection {
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
    /// Prior variance; defaults to `max(1, e (alpha^2 + delta^2))`.
    pub sigma_p_sq: Option<f64>,
    pub psi: f64,
    /// Uniform-stability constant.
    pub u: f64,
    /// Best loss; defaults to the smallest outer loss in the trace.
    pub l_star: Option<f64>,
}

impl Default for BoundsSection {
    fn default() -> Self {
        Self {
            sigma1_sq: 0.0,
            sigma2_sq: 0.0,
            sigma_p_sq: None,
            psi: 0.05,
            u: 0.0,
            l_star: None,
        }
    }
}

/// Fully resolved settings; serialized verbatim into every run manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub algorithm: Algorithm,
    pub iterations: usize,
    pub tasks_per_iteration: usize,
    pub seed: u64,
    pub mode: AdaptMode,
    pub threads: usize,
    pub record_timing: bool,
    pub eval_episodes: usize,
    pub checkpoint_every: usize,
    pub max_tasks: Option<usize>,
    pub optimizer: OuterOptimizer,
    pub sharpness: SharpnessConfig<f64>,
    pub task: TaskConfig,
    /// `None` for quadratic tasks, which optimize the parameters directly.
    pub model: Option<MlpSpec>,
    pub sweep: Option<SweepSection>,
    pub compare: Option<CompareSection>,
    pub bounds: BoundsSection,
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub mode: Option<AdaptMode>,
    pub threads: Option<usize>,
}

fn cfg_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

pub fn load(path: &Path, ov: &Overrides) -> Result<Resolved, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse(&text, base, ov)
}

/// Parses and validates config text; relative dataset paths resolve against `base`.
pub fn parse(text: &str, base: &Path, ov: &Overrides) -> Result<Resolved, CliError> {
    let raw: ExperimentConfig = toml::from_str(text).map_err(|e| cfg_err(e.to_string()))?;
    resolve(raw, base, ov)
}

fn resolve(raw: ExperimentConfig, base: &Path, ov: &Overrides) -> Result<Resolved, CliError> {
    let mut task = raw.task;
    if let TaskConfig::Dataset(d) = &mut task {
        for p in [&mut d.images, &mut d.labels] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
    let model = resolve_model(&task, raw.model.as_ref())?;
    let r = Resolved {
        algorithm: raw.algorithm,
        iterations: raw.iterations,
        tasks_per_iteration: raw.tasks_per_iteration,
        seed: ov.seed.unwrap_or(raw.seed),
        mode: ov.mode.unwrap_or(raw.mode),
        threads: ov.threads.unwrap_or(raw.threads),
        record_timing: raw.record_timing,
        eval_episodes: raw.eval_episodes,
        checkpoint_every: raw.checkpoint_every,
        max_tasks: raw.max_tasks,
        optimizer: raw.optimizer,
        sharpness: raw.sharpness.resolve(),
        task,
        model,
        sweep: raw.sweep,
        compare: raw.compare,
        bounds: raw.bounds,
        out: ov.out.clone().or(raw.out),
    };
    r.validate()?;
    Ok(r)
}

fn resolve_model(task: &TaskConfig, model: Option<&ModelSection>) -> Result<Option<MlpSpec>, CliError> {
    let (input, head, hidden) = match task {
        TaskConfig::Quadratic(_) => {
            if model.is_some() {
                return Err(cfg_err("model: quadratic tasks take no model section"));
            }
            return Ok(None);
        }
        TaskConfig::Sinusoid(_) => (1, Head::Regression, vec![40, 40]),
        TaskConfig::Blobs(b) => (b.dim, Head::Classification { classes: b.n_way }, vec![32]),
        TaskConfig::Dataset(d) => (0, Head::Classification { classes: d.n_way }, vec![64]),
    };
    let (hidden, activation) = match model {
        Some(m) => (m.hidden.clone(), m.activation),
        None => (hidden, Activation::Relu),
    };
    let output = match head {
        Head::Regression => 1,
        Head::Classification { classes } => classes,
    };
    let mut sizes = vec![input];
    sizes.extend(hidden);
    sizes.push(output);
    // The dataset input width is only known after loading; it is patched in
    // by the runner.
    Ok(Some(MlpSpec {
        layer_sizes: sizes,
        activation,
        head,
    }))
}

impl Resolved {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.iterations == 0 {
            return Err(cfg_err("iterations: must be at least 1"));
        }
        if self.tasks_per_iteration == 0 {
            return Err(cfg_err("tasks_per_iteration: must be at least 1"));
        }
        if self.threads == 0 {
            return Err(cfg_err("threads: must be at least 1"));
        }
        if self.eval_episodes == 0 {
            return Err(cfg_err("eval_episodes: must be at least 1"));
        }
        self.sharpness
            .validate()
            .map_err(|e| cfg_err(format!("sharpness: {e}")))?;
        if let OuterOptimizer::Adam(p) = self.optimizer {
            if !(0.0..1.0).contains(&p.beta1) || !(0.0..1.0).contains(&p.beta2) || p.eps <= 0.0 {
                return Err(cfg_err("optimizer: adam needs beta1, beta2 in [0, 1) and eps > 0"));
            }
        }
        match &self.task {
            TaskConfig::Sinusoid(s) => s.validate().map_err(|e| cfg_err(format!("task: {e}")))?,
            TaskConfig::Blobs(b) => {
                b.episode_spec(0)
                    .validate()
                    .map_err(|e| cfg_err(format!("task: {e}")))?;
                b.family().validate().map_err(|e| cfg_err(format!("task: {e}")))?;
            }
            TaskConfig::Dataset(d) => EpisodeSpec {
                n_way: d.n_way,
                k_shot: d.k_shot,
                q_query: d.q_query,
                seed: 0,
            }
            .validate()
            .map_err(|e| cfg_err(format!("task: {e}")))?,
            TaskConfig::Quadratic(q) => q.validate().map_err(|e| cfg_err(format!("task: {e}")))?,
        }
        if let Some(m) = &self.model {
            if m.layer_sizes[1..m.layer_sizes.len() - 1].contains(&0) {
                return Err(cfg_err("model.hidden: layer widths must be positive"));
            }
        }
        if let Some(s) = &self.sweep {
            if s.deltas.is_empty() {
                return Err(cfg_err("sweep.deltas: grid must be nonempty"));
            }
            if s.alphas.as_ref().is_some_and(|a| a.is_empty()) {
                return Err(cfg_err("sweep.alphas: grid must be nonempty when given"));
            }
            if let Some(v) = s
                .deltas
                .iter()
                .chain(s.alphas.iter().flatten())
                .find(|v| !(**v >= 0.0) || !v.is_finite())
            {
                return Err(cfg_err(format!("sweep: grid value {v} must be finite and nonnegative")));
            }
        }
        if let Some(c) = &self.compare {
            if c.seeds == 0 {
                return Err(cfg_err("compare.seeds: must be at least 1"));
            }
        }
        let b = &self.bounds;
        if !(b.psi > 0.0 && b.psi < 1.0) {
            return Err(cfg_err("bounds.psi: must lie in (0, 1)"));
        }
        if !(b.u >= 0.0) || !(b.sigma1_sq >= 0.0) || !(b.sigma2_sq >= 0.0) {
            return Err(cfg_err("bounds: u and variances must be nonnegative"));
        }
        if b.sigma_p_sq.is_some_and(|v| !(v > 0.0)) {
            return Err(cfg_err("bounds.sigma_p_sq: must be positive"));
        }
        Ok(())
    }

    pub fn with_algorithm(&self, algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            ..self.clone()
        }
    }
}
