//! One training run: task streams, training, evaluation and artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use metasharp::meta::{
    evaluate, train_with, write_trace_csv, EvalMetrics, MetaStepReport, RunTrace, Split, Task, TrainOptions,
};
use metasharp::nn::MlpSpec;
use metasharp::nn::{init_params, save_params_tagged, INIT_SCHEME};
use metasharp::tasks::{
    derive_seed, episodes_from_dataset, Dataset, EpisodeSpec, EpisodeStream, MlpTask, QuadraticTask, StreamDigest,
};
use metasharp::vector::{GradVector, ParamVector};
use rand::Rng;
use serde::Serialize;

use crate::config::{Resolved, TaskConfig};
use crate::CliError;

/// Seed-derivation stream ids.
const INIT_STREAM: u64 = u64::MAX;
const EVAL_STREAM: u64 = u64::MAX - 1;

pub const PARAMS_FILE: &str = "params.bin";
pub const TRACE_FILE: &str = "trace.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// A task of any configured family.
#[derive(Debug, Clone)]
pub enum AnyTask {
    Mlp(MlpTask<f64>),
    Quadratic(QuadraticTask<f64>),
}

impl Task<f64> for AnyTask {
    fn loss_grad(&self, split: Split, theta: &[f64]) -> metasharp::Result<(f64, GradVector<f64>)> {
        match self {
            Self::Mlp(t) => t.loss_grad(split, theta),
            Self::Quadratic(t) => t.loss_grad(split, theta),
        }
    }

    fn loss(&self, split: Split, theta: &[f64]) -> metasharp::Result<f64> {
        match self {
            Self::Mlp(t) => t.loss(split, theta),
            Self::Quadratic(t) => t.loss(split, theta),
        }
    }

    fn query_accuracy(&self, theta: &[f64]) -> Option<metasharp::Result<f64>> {
        match self {
            Self::Mlp(t) => t.query_accuracy(theta),
            Self::Quadratic(_) => None,
        }
    }
}

impl AnyTask {
    fn digest(&self, d: &mut StreamDigest) {
        match self {
            Self::Mlp(t) => d.update(&t.batch),
            Self::Quadratic(q) => {
                let mut buf = Vec::new();
                for part in [
                    q.support.matrix(),
                    q.support.center(),
                    q.query.matrix(),
                    q.query.center(),
                ] {
                    for v in part {
                        buf.extend_from_slice(&v.to_le_bytes());
                    }
                }
                d.update_raw(&buf);
            }
        }
    }
}

/// Builds tasks of the configured family from per-task seeds.
pub struct TaskFactory {
    task: TaskConfig,
    spec: Option<Arc<MlpSpec>>,
    train_episodes: Option<EpisodeStream<f64>>,
    eval_episodes: Option<EpisodeStream<f64>>,
}

impl TaskFactory {
    pub fn new(cfg: &Resolved) -> Result<Self, CliError> {
        let mut spec = cfg.model.clone();
        let (mut train_episodes, mut eval_episodes) = (None, None);
        if let TaskConfig::Dataset(d) = &cfg.task {
            let data = Arc::new(Dataset::from_idx(&d.images, &d.labels)?);
            if let Some(s) = spec.as_mut() {
                s.layer_sizes[0] = data.feature_dim();
            }
            let es = EpisodeSpec {
                n_way: d.n_way,
                k_shot: d.k_shot,
                q_query: d.q_query,
                seed: cfg.seed,
            };
            train_episodes = Some(episodes_from_dataset(data.clone(), es)?);
            eval_episodes = Some(episodes_from_dataset(
                data,
                es.with_seed(derive_seed(cfg.seed, EVAL_STREAM)),
            )?);
        }
        if let Some(s) = &spec {
            s.validate().map_err(|e| CliError::Config(format!("model: {e}")))?;
        }
        Ok(Self {
            task: cfg.task.clone(),
            spec: spec.map(Arc::new),
            train_episodes,
            eval_episodes,
        })
    }

    pub fn spec(&self) -> Option<&MlpSpec> {
        self.spec.as_deref()
    }

    pub fn param_count(&self) -> usize {
        match (&self.spec, &self.task) {
            (Some(s), _) => s.param_count(),
            (None, TaskConfig::Quadratic(q)) => q.dim,
            (None, _) => unreachable!("non-quadratic tasks always have a model"),
        }
    }

    pub fn fingerprint(&self) -> u64 {
        self.spec.as_ref().map_or(0, |s| s.fingerprint())
    }

    pub fn init(&self, seed: u64) -> ParamVector<f64> {
        let s = derive_seed(seed, INIT_STREAM);
        match &self.spec {
            Some(spec) => init_params(spec, s),
            None => {
                let mut rng = metasharp::tasks::stream_rng(s, 0);
                ParamVector::new((0..self.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect())
            }
        }
    }

    fn make(&self, seed: u64, index: u64, eval: bool) -> Result<AnyTask, CliError> {
        let batch = match &self.task {
            TaskConfig::Quadratic(q) => return Ok(AnyTask::Quadratic(q.task(seed))),
            TaskConfig::Sinusoid(s) => s.task(seed),
            TaskConfig::Blobs(b) => b.family().episode(&b.episode_spec(seed))?,
            TaskConfig::Dataset(_) => {
                let stream = if eval {
                    &self.eval_episodes
                } else {
                    &self.train_episodes
                };
                stream.as_ref().expect("dataset stream").episode(index)
            }
        };
        Ok(AnyTask::Mlp(MlpTask {
            spec: self.spec.clone().expect("model"),
            batch,
        }))
    }

    /// Task `index` of the training stream of run seed `seed`.
    pub fn train_task(&self, seed: u64, index: u64) -> Result<AnyTask, CliError> {
        self.make(derive_seed(seed, index), index, false)
    }

    /// Held-out task `index`, from a stream disjoint from training.
    pub fn eval_task(&self, seed: u64, index: u64) -> Result<AnyTask, CliError> {
        self.make(derive_seed(derive_seed(seed, EVAL_STREAM), index), index, true)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FinalMetrics {
    pub query_loss: f64,
    pub query_accuracy: Option<f64>,
    pub episodes: usize,
}

impl From<(EvalMetrics, usize)> for FinalMetrics {
    fn from((m, episodes): (EvalMetrics, usize)) -> Self {
        Self {
            query_loss: m.query_loss,
            query_accuracy: m.query_accuracy,
            episodes,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub config: &'a Resolved,
    pub param_count: usize,
    pub init_scheme: &'static str,
    pub iterations_completed: usize,
    pub truncated: bool,
    pub train_episode_hash: String,
    pub eval_episode_hash: String,
    pub final_metrics: FinalMetrics,
    pub total_step_ns: u64,
    pub files: Vec<String>,
}

/// Everything a finished run reports back.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub params: ParamVector<f64>,
    pub trace: RunTrace<f64>,
    pub metrics: FinalMetrics,
    pub train_episode_hash: String,
}

impl RunOutcome {
    pub fn median_step_ns(&self) -> u64 {
        crate::stats::median_u64(self.trace.reports.iter().map(|r| r.step_ns).collect())
    }

    pub fn mean_gap(&self) -> f64 {
        mean(self.trace.reports.iter().map(|r| r.surrogate_gap))
    }

    pub fn mean_align(&self) -> f64 {
        mean(self.trace.reports.iter().map(|r| r.align_cos))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn with_pool<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R, CliError> {
    if threads <= 1 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("cannot create output directory {}: {e}", dir.display())))
}

/// Trains with `cfg`, writing params, trace, checkpoints and manifest to `dir`.
pub fn run_training(cfg: &Resolved, dir: &Path) -> Result<RunOutcome, CliError> {
    create_dir(dir)?;
    let factory = TaskFactory::new(cfg)?;
    let theta0 = factory.init(cfg.seed);
    let m = cfg.tasks_per_iteration;
    let digest = Mutex::new(StreamDigest::new());
    let failure: Mutex<Option<CliError>> = Mutex::new(None);
    let mut issued = 0usize;
    let mut source = |want: usize| -> Option<Vec<AnyTask>> {
        if cfg.max_tasks.is_some_and(|cap| issued + want > cap) {
            return None;
        }
        let mut out = Vec::with_capacity(want);
        for _ in 0..want {
            match factory.train_task(cfg.seed, issued as u64) {
                Ok(t) => {
                    t.digest(&mut digest.lock().expect("digest lock"));
                    out.push(t);
                }
                Err(e) => {
                    *failure.lock().expect("failure lock") = Some(e);
                    return None;
                }
            }
            issued += 1;
        }
        Some(out)
    };

    let mut files = vec![PARAMS_FILE.to_string(), TRACE_FILE.to_string()];
    let ckpt_dir = dir.join(CHECKPOINT_DIR);
    let fp = factory.fingerprint();
    if cfg.checkpoint_every > 0 {
        create_dir(&ckpt_dir)?;
        let name = checkpoint_name(0);
        save_params_tagged(&ckpt_dir.join(&name), fp, &theta0)?;
        files.push(format!("{CHECKPOINT_DIR}/{name}"));
    }
    let mut observe = |t: usize, theta: &ParamVector<f64>, _: &MetaStepReport<f64>| -> metasharp::Result<()> {
        if cfg.checkpoint_every > 0 && (t + 1).is_multiple_of(cfg.checkpoint_every) {
            let name = checkpoint_name(t + 1);
            save_params_tagged(&ckpt_dir.join(&name), fp, theta)?;
            files.push(format!("{CHECKPOINT_DIR}/{name}"));
        }
        Ok(())
    };

    let opts = TrainOptions {
        algorithm: cfg.algorithm,
        mode: cfg.mode,
        optimizer: cfg.optimizer,
        iterations: cfg.iterations,
        tasks_per_iteration: m,
        parallel: cfg.threads > 1,
        record_timing: cfg.record_timing,
    };
    let result = with_pool(cfg.threads, || {
        train_with(&theta0, &mut source, &cfg.sharpness, &opts, &mut observe)
    })?;
    if let Some(e) = failure.into_inner().expect("failure lock") {
        return Err(e);
    }
    let (params, trace) = result?;

    save_params_tagged(&dir.join(PARAMS_FILE), fp, &params)?;
    let mut csv = Vec::new();
    write_trace_csv(&trace.reports, &mut csv)?;
    fs::write(dir.join(TRACE_FILE), csv)?;

    let mut eval_digest = StreamDigest::new();
    let eval_tasks: Vec<AnyTask> = (0..cfg.eval_episodes as u64)
        .map(|i| factory.eval_task(cfg.seed, i))
        .collect::<Result<_, _>>()?;
    for t in &eval_tasks {
        t.digest(&mut eval_digest);
    }
    let metrics: FinalMetrics = (
        evaluate(cfg.algorithm, &params, &eval_tasks, &cfg.sharpness)?,
        eval_tasks.len(),
    )
        .into();

    let train_episode_hash = digest.into_inner().expect("digest lock").hex();
    files.push(MANIFEST_FILE.to_string());
    let manifest = Manifest {
        tool: "metasharp",
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        param_count: params.dim(),
        init_scheme: if factory.spec().is_some() {
            INIT_SCHEME
        } else {
            "uniform(-1, 1) per coordinate"
        },
        iterations_completed: trace.reports.len(),
        truncated: trace.truncated,
        train_episode_hash: train_episode_hash.clone(),
        eval_episode_hash: eval_digest.hex(),
        final_metrics: metrics.clone(),
        total_step_ns: trace.total_step_ns,
        files,
    };
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    fs::write(dir.join(MANIFEST_FILE), text)?;

    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        params,
        trace,
        metrics,
        train_episode_hash,
    })
}

pub fn checkpoint_name(t: usize) -> String {
    format!("theta_{t:06}.bin")
}
