//! Bi-level meta-learners: first-order MAML, SharpMAML and DGS-MAML.
//!
//! All meta-gradients are first-order: gradients taken at adapted
//! parameters are applied directly to the meta-parameters, with no
//! differentiation through the inner updates or through any perturbation.
//! Summation over tasks always runs in task-index order, so parallel and
//! sequential execution produce identical bits.

use std::io::{BufRead, Write};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{Clipped, Objective};
use crate::scalar::Real;
use crate::sharpness::{
    adam_step, alignment_cosine, sam_perturbation, shifted_probe, AdamParams, OptState, SharpnessConfig,
};
use crate::vector::{GradVector, ParamVector, Perturbation};

/// Which half of a task's data an evaluation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    /// `D_train`, used by inner adaptation.
    Support,
    /// `D_val`, used by the outer update.
    Query,
}

/// One few-shot task as seen by the meta-learners.
pub trait Task<S: Real = f64>: Sync {
    fn loss_grad(&self, split: Split, theta: &[S]) -> Result<(S, GradVector<S>)>;

    fn loss(&self, split: Split, theta: &[S]) -> Result<S> {
        Ok(self.loss_grad(split, theta)?.0)
    }

    /// Query-set accuracy, for classification tasks.
    fn query_accuracy(&self, _theta: &[S]) -> Option<Result<f64>> {
        None
    }
}

/// A [`Task`] split viewed as an [`Objective`].
#[derive(Debug, Clone, Copy)]
pub struct TaskView<'a, T: ?Sized> {
    pub task: &'a T,
    pub split: Split,
}

impl<S: Real, T: Task<S> + ?Sized> Objective<S> for TaskView<'_, T> {
    fn loss_grad(&self, theta: &[S]) -> Result<(S, GradVector<S>)> {
        self.task.loss_grad(self.split, theta)
    }

    fn loss(&self, theta: &[S]) -> Result<S> {
        self.task.loss(self.split, theta)
    }
}

fn eval<S: Real, T: Task<S> + ?Sized>(
    task: &T,
    split: Split,
    theta: &[S],
    clip: Option<S>,
) -> Result<(S, GradVector<S>)> {
    let view = TaskView { task, split };
    match clip {
        Some(bound) => Clipped { inner: view, bound }.loss_grad(theta),
        None => view.loss_grad(theta),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Maml,
    Sharpmaml,
    Dgs,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Self::Maml => "maml",
            Self::Sharpmaml => "sharpmaml",
            Self::Dgs => "dgs",
        }
    }
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maml" => Ok(Self::Maml),
            "sharpmaml" => Ok(Self::Sharpmaml),
            "dgs" | "dgs_maml" | "dgs-maml" => Ok(Self::Dgs),
            other => Err(Error::InvalidArgument(format!("unknown algorithm `{other}`"))),
        }
    }
}

/// How inner adaptation treats the meta-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptMode {
    /// Every task adapts its own clone of `theta`.
    #[default]
    PerTaskClone,
    /// One shared parameter vector is updated task after task, so later
    /// tasks adapt from where earlier ones left it.
    SequentialLiteral,
}

impl FromStr for AdaptMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_task_clone" | "clone" => Ok(Self::PerTaskClone),
            "sequential_literal" | "sequential" => Ok(Self::SequentialLiteral),
            other => Err(Error::InvalidArgument(format!("unknown adapt mode `{other}`"))),
        }
    }
}

/// Per-iteration diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaStepReport<S = f64> {
    pub t: usize,
    /// Support loss at the start of each task's last inner step (NaN with no
    /// inner steps).
    pub inner_losses: Vec<S>,
    /// `sum_m L(theta'_m; D_val)`.
    pub outer_loss: S,
    /// `||sum_m grad L(theta'_m; D_val)||`.
    pub grad_norm: S,
    /// Norm of the summed gradient at the outer probe points.
    pub perturbed_grad_norm: S,
    /// Summed `L_p - L` over tasks.
    pub surrogate_gap: S,
    pub align_cos: S,
    /// Wall time of the meta-step; zero when timing is disabled.
    pub step_ns: u64,
    /// `||eps_m||` from each task's last inner step.
    pub inner_eps_norms: Vec<S>,
    /// `||eps||` of the outer perturbation, when the algorithm has one.
    pub outer_eps_norm: Option<S>,
}

/// Outer-level quantities common to every algorithm's report.
#[derive(Debug, Clone)]
pub struct OuterDiagnostics<S = f64> {
    pub outer_loss: S,
    pub grad: GradVector<S>,
    pub perturbed_loss: S,
    pub perturbed_grad: GradVector<S>,
}

/// Result of one meta-iteration before the optimizer is applied.
#[derive(Debug, Clone)]
pub struct MetaDirection<S = f64> {
    /// Descent direction for the meta-parameters.
    pub direction: GradVector<S>,
    /// Parameters each task's outer gradients were evaluated at.
    pub adapted: Vec<ParamVector<S>>,
    pub inner_losses: Vec<S>,
    pub inner_eps_norms: Vec<S>,
    pub outer_eps_norm: Option<S>,
    /// Filled by algorithms whose update already evaluates them.
    pub diagnostics: Option<OuterDiagnostics<S>>,
}

/// Trace left by one task's inner adaptation.
#[derive(Debug, Clone)]
pub struct InnerTrace<S = f64> {
    /// Support loss at the start of every inner step.
    pub losses: Vec<S>,
    /// Perturbation of the last inner step (zero when there were none).
    pub last_eps: Perturbation<S>,
}

fn map_tasks<S, T, R, F>(tasks: &[T], parallel: bool, f: F) -> Result<Vec<R>>
where
    S: Real,
    T: Task<S>,
    R: Send,
    F: Fn(usize, &T) -> Result<R> + Sync + Send,
{
    if parallel {
        tasks.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
    } else {
        tasks.iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }
}

fn sum_in_order<S: Real>(dim: usize, parts: impl IntoIterator<Item = GradVector<S>>) -> Result<GradVector<S>> {
    let mut acc = GradVector::zeros(dim);
    for p in parts {
        acc.accumulate(&p)?;
    }
    Ok(acc)
}

fn check_common<S: Real, T>(tasks: &[T], cfg: &SharpnessConfig<S>) -> Result<()> {
    if tasks.is_empty() {
        return Err(Error::EmptyTaskList);
    }
    cfg.validate()
}

/// `inner_steps` plain SGD steps on the support loss.
pub fn maml_inner_adapt<S: Real, T: Task<S> + ?Sized>(
    theta: &ParamVector<S>,
    task: &T,
    cfg: &SharpnessConfig<S>,
) -> Result<(ParamVector<S>, InnerTrace<S>)> {
    let mut p = theta.clone();
    let mut losses = Vec::with_capacity(cfg.inner_steps);
    for _ in 0..cfg.inner_steps {
        let (l, g) = eval(task, Split::Support, &p, cfg.clip_c)?;
        losses.push(l);
        p.descend(&g, cfg.beta)?;
    }
    Ok((
        p,
        InnerTrace {
            losses,
            last_eps: Perturbation::zeros(theta.dim()),
        },
    ))
}

/// SAM inner steps: `theta <- theta - beta grad L(theta + eps_m)`.
pub fn sharpmaml_inner_adapt<S: Real, T: Task<S> + ?Sized>(
    theta: &ParamVector<S>,
    task: &T,
    cfg: &SharpnessConfig<S>,
) -> Result<(ParamVector<S>, InnerTrace<S>)> {
    let mut p = theta.clone();
    let mut losses = Vec::with_capacity(cfg.inner_steps);
    let mut last_eps = Perturbation::zeros(theta.dim());
    for _ in 0..cfg.inner_steps {
        let (l, g) = eval(task, Split::Support, &p, cfg.clip_c)?;
        losses.push(l);
        let eps = sam_perturbation(&g, cfg.alpha_l);
        let (_, gp) = eval(task, Split::Support, &p.perturbed(&eps)?, cfg.clip_c)?;
        p.descend(&gp, cfg.beta)?;
        last_eps = eps;
    }
    Ok((p, InnerTrace { losses, last_eps }))
}

/// Gradient-matching inner steps: each step descends
/// `grad L(theta) + grad L(theta + eps_m - delta grad L(theta))` on the
/// support set with rate `beta`.
pub fn dgs_inner_adapt<S: Real, T: Task<S> + ?Sized>(
    theta: &ParamVector<S>,
    task: &T,
    cfg: &SharpnessConfig<S>,
) -> Result<(ParamVector<S>, InnerTrace<S>)> {
    let mut p = theta.clone();
    let mut losses = Vec::with_capacity(cfg.inner_steps);
    let mut last_eps = Perturbation::zeros(theta.dim());
    for _ in 0..cfg.inner_steps {
        let (l, g) = eval(task, Split::Support, &p, cfg.clip_c)?;
        losses.push(l);
        let eps = sam_perturbation(&g, cfg.alpha_l);
        let probe = shifted_probe(&p, &eps, &g, cfg.delta)?;
        let (_, mut gm) = eval(task, Split::Support, &probe, cfg.clip_c)?;
        gm.accumulate(&g)?;
        p.descend(&gm, cfg.beta)?;
        last_eps = eps;
    }
    Ok((p, InnerTrace { losses, last_eps }))
}

type InnerFn<S, T> = fn(&ParamVector<S>, &T, &SharpnessConfig<S>) -> Result<(ParamVector<S>, InnerTrace<S>)>;

fn inner_fn<S: Real, T: Task<S>>(algorithm: Algorithm) -> InnerFn<S, T> {
    match algorithm {
        Algorithm::Maml => maml_inner_adapt::<S, T>,
        Algorithm::Sharpmaml => sharpmaml_inner_adapt::<S, T>,
        Algorithm::Dgs => dgs_inner_adapt::<S, T>,
    }
}

struct Adapted<S> {
    params: Vec<ParamVector<S>>,
    traces: Vec<InnerTrace<S>>,
}

fn adapt_all<S: Real, T: Task<S>>(
    algorithm: Algorithm,
    theta: &ParamVector<S>,
    tasks: &[T],
    cfg: &SharpnessConfig<S>,
    mode: AdaptMode,
    parallel: bool,
) -> Result<Adapted<S>> {
    let inner = inner_fn::<S, T>(algorithm);
    match mode {
        AdaptMode::PerTaskClone => {
            let out = map_tasks(tasks, parallel, |_, t| inner(theta, t, cfg))?;
            let (params, traces) = out.into_iter().unzip();
            Ok(Adapted { params, traces })
        }
        AdaptMode::SequentialLiteral => {
            let mut shared = theta.clone();
            let mut traces = Vec::with_capacity(tasks.len());
            for t in tasks {
                let (next, tr) = inner(&shared, t, cfg)?;
                shared = next;
                traces.push(tr);
            }
            Ok(Adapted {
                params: vec![shared; tasks.len()],
                traces,
            })
        }
    }
}

fn inner_summary<S: Real>(traces: &[InnerTrace<S>]) -> (Vec<S>, Vec<S>) {
    let losses = traces
        .iter()
        .map(|t| t.losses.last().copied().unwrap_or_else(S::nan))
        .collect();
    let eps = traces.iter().map(|t| t.last_eps.norm2()).collect();
    (losses, eps)
}

/// Computes one meta-iteration's descent direction.
pub fn meta_direction<S: Real, T: Task<S>>(
    algorithm: Algorithm,
    theta: &ParamVector<S>,
    tasks: &[T],
    cfg: &SharpnessConfig<S>,
    mode: AdaptMode,
    parallel: bool,
) -> Result<MetaDirection<S>> {
    check_common(tasks, cfg)?;
    let dim = theta.dim();
    let adapted = adapt_all(algorithm, theta, tasks, cfg, mode, parallel)?;
    let (inner_losses, inner_eps_norms) = inner_summary(&adapted.traces);
    let clip = cfg.clip_c;

    match algorithm {
        Algorithm::Maml => {
            let parts = map_tasks(tasks, parallel, |i, t| eval(t, Split::Query, &adapted.params[i], clip))?;
            let direction = sum_in_order(dim, parts.into_iter().map(|(_, g)| g))?;
            Ok(MetaDirection {
                direction,
                adapted: adapted.params,
                inner_losses,
                inner_eps_norms,
                outer_eps_norm: None,
                diagnostics: None,
            })
        }
        Algorithm::Sharpmaml => {
            let eps_probe = map_tasks(tasks, parallel, |i, t| {
                let p = adapted.params[i].perturbed(&adapted.traces[i].last_eps)?;
                Ok(eval(t, Split::Query, &p, clip)?.1)
            })?;
            let big_g = sum_in_order(dim, eps_probe)?;
            let eps = sam_perturbation(&big_g, cfg.alpha_u);
            let parts = map_tasks(tasks, parallel, |i, t| {
                Ok(eval(t, Split::Query, &adapted.params[i].perturbed(&eps)?, clip)?.1)
            })?;
            let direction = sum_in_order(dim, parts)?;
            Ok(MetaDirection {
                direction,
                adapted: adapted.params,
                inner_losses,
                inner_eps_norms,
                outer_eps_norm: Some(eps.norm2()),
                diagnostics: None,
            })
        }
        Algorithm::Dgs => {
            let eps_probe = map_tasks(tasks, parallel, |i, t| {
                let p = adapted.params[i].perturbed(&adapted.traces[i].last_eps)?;
                Ok(eval(t, Split::Query, &p, clip)?.1)
            })?;
            let big_g = sum_in_order(dim, eps_probe)?;
            let eps = sam_perturbation(&big_g, cfg.alpha_u);
            let parts = map_tasks(tasks, parallel, |i, t| {
                let base = &adapted.params[i];
                let (l, g) = eval(t, Split::Query, base, clip)?;
                let point = shifted_probe(base, &eps, &g, cfg.delta)?;
                let (lp, gp) = eval(t, Split::Query, &point, clip)?;
                Ok((l, g, lp, gp))
            })?;
            let mut outer_loss = S::zero();
            let mut perturbed_loss = S::zero();
            let mut grad = GradVector::zeros(dim);
            let mut perturbed_grad = GradVector::zeros(dim);
            for (l, g, lp, gp) in parts {
                outer_loss += l;
                perturbed_loss += lp;
                grad.accumulate(&g)?;
                perturbed_grad.accumulate(&gp)?;
            }
            let direction = grad.sum(&perturbed_grad)?;
            Ok(MetaDirection {
                direction,
                adapted: adapted.params,
                inner_losses,
                inner_eps_norms,
                outer_eps_norm: Some(eps.norm2()),
                diagnostics: Some(OuterDiagnostics {
                    outer_loss,
                    grad,
                    perturbed_loss,
                    perturbed_grad,
                }),
            })
        }
    }
}

/// Outer-level `L`, `grad L`, `L_p`, `grad L_p` at the adapted parameters,
/// using the probe `theta'_m + eps - delta grad L(theta'_m)` with
/// `eps = alpha_u * g / ||g||` and `g = sum_m grad L(theta'_m; D_val)`.
pub fn outer_diagnostics<S: Real, T: Task<S>>(
    adapted: &[ParamVector<S>],
    tasks: &[T],
    cfg: &SharpnessConfig<S>,
    parallel: bool,
) -> Result<OuterDiagnostics<S>> {
    let dim = adapted.first().map_or(0, |p| p.dim());
    let base = map_tasks(tasks, parallel, |i, t| eval(t, Split::Query, &adapted[i], cfg.clip_c))?;
    let outer_loss = base.iter().map(|(l, _)| *l).sum();
    let grad = sum_in_order(dim, base.iter().map(|(_, g)| g.clone()))?;
    let eps = sam_perturbation(&grad, cfg.alpha_u);
    let probed = map_tasks(tasks, parallel, |i, t| {
        let g = &base[i].1;
        eval(
            t,
            Split::Query,
            &shifted_probe(&adapted[i], &eps, g, cfg.delta)?,
            cfg.clip_c,
        )
    })?;
    let perturbed_loss = probed.iter().map(|(l, _)| *l).sum();
    let perturbed_grad = sum_in_order(dim, probed.into_iter().map(|(_, g)| g))?;
    Ok(OuterDiagnostics {
        outer_loss,
        grad,
        perturbed_loss,
        perturbed_grad,
    })
}

fn report_from<S: Real>(
    t: usize,
    dir: &MetaDirection<S>,
    diag: &OuterDiagnostics<S>,
    step_ns: u64,
) -> MetaStepReport<S> {
    MetaStepReport {
        t,
        inner_losses: dir.inner_losses.clone(),
        outer_loss: diag.outer_loss,
        grad_norm: diag.grad.norm2(),
        perturbed_grad_norm: diag.perturbed_grad.norm2(),
        surrogate_gap: diag.perturbed_loss - diag.outer_loss,
        align_cos: alignment_cosine(&diag.grad, &diag.perturbed_grad),
        step_ns,
        inner_eps_norms: dir.inner_eps_norms.clone(),
        outer_eps_norm: dir.outer_eps_norm,
    }
}

fn step_with_sgd<S: Real, T: Task<S>>(
    algorithm: Algorithm,
    theta: &ParamVector<S>,
    tasks: &[T],
    cfg: &SharpnessConfig<S>,
    mode: AdaptMode,
) -> Result<(ParamVector<S>, MetaStepReport<S>)> {
    let dir = meta_direction(algorithm, theta, tasks, cfg, mode, false)?;
    let mut next = theta.clone();
    next.descend(&dir.direction, cfg.gamma)?;
    let diag = match &dir.diagnostics {
        Some(d) => d.clone(),
        None => outer_diagnostics(&dir.adapted, tasks, cfg, false)?,
    };
    let report = report_from(0, &dir, &diag, 0);
    Ok((next, report))
}

/// First-order MAML: `theta - gamma sum_m grad L(theta'_m; D_val)` with
/// `theta'_m` from `inner_steps` SGD steps of rate `beta`.
pub fn maml_step<S: Real, T: Task<S>>(
    theta: &ParamVector<S>,
    tasks: &[T],
    cfg: &SharpnessConfig<S>,
) -> Result<(ParamVector<S>, MetaStepReport<S>)> {
    step_with_sgd(Algorithm::Maml, theta, tasks, cfg, AdaptMode::PerTaskClone)
}

/// SharpMAML with SAM at both levels.
pub fn sharpmaml_step<S: Real, T: Task<S>>(
    theta: &ParamVector<S>,
    tasks: &[T],
    cfg: &SharpnessConfig<S>,
) -> Result<(ParamVector<S>, MetaStepReport<S>)> {
    step_with_sgd(Algorithm::Sharpmaml, theta, tasks, cfg, AdaptMode::PerTaskClone)
}

/// DGS-MAML: gradient matching at both levels.
pub fn dgs_maml_step<S: Real, T: Task<S>>(
    theta: &ParamVector<S>,
    tasks: &[T],
    cfg: &SharpnessConfig<S>,
    mode: AdaptMode,
) -> Result<(ParamVector<S>, MetaStepReport<S>)> {
    step_with_sgd(Algorithm::Dgs, theta, tasks, cfg, mode)
}

/// Outer optimizer applied to the meta-direction.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OuterOptimizer {
    #[default]
    Sgd,
    Adam(AdamParams),
}

/// Supplies `m` tasks per meta-iteration.
pub trait TaskSource<T> {
    /// `None` once the source is exhausted.
    fn next_tasks(&mut self, m: usize) -> Option<Vec<T>>;
}

impl<T, F: FnMut(usize) -> Option<Vec<T>>> TaskSource<T> for F {
    fn next_tasks(&mut self, m: usize) -> Option<Vec<T>> {
        self(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub algorithm: Algorithm,
    pub mode: AdaptMode,
    pub optimizer: OuterOptimizer,
    pub iterations: usize,
    pub tasks_per_iteration: usize,
    /// Parallel per-task evaluation (per-task-clone mode only).
    pub parallel: bool,
    pub record_timing: bool,
}

impl TrainOptions {
    pub fn new(algorithm: Algorithm, iterations: usize, tasks_per_iteration: usize) -> Self {
        Self {
            algorithm,
            mode: AdaptMode::PerTaskClone,
            optimizer: OuterOptimizer::Sgd,
            iterations,
            tasks_per_iteration,
            parallel: false,
            record_timing: false,
        }
    }
}

/// Per-iteration reports of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace<S = f64> {
    pub reports: Vec<MetaStepReport<S>>,
    /// Set when the task source ran dry before `iterations` steps.
    pub truncated: bool,
    pub total_step_ns: u64,
}

/// Runs `iterations` meta-steps from `theta0`.
pub fn train<S, T, Src>(
    theta0: &ParamVector<S>,
    source: &mut Src,
    cfg: &SharpnessConfig<S>,
    opts: &TrainOptions,
) -> Result<(ParamVector<S>, RunTrace<S>)>
where
    S: Real,
    T: Task<S>,
    Src: TaskSource<T> + ?Sized,
{
    train_with(theta0, source, cfg, opts, |_, _, _| Ok(()))
}

/// As [`train`], calling `observe(t, theta_{t+1}, report_t)` after every
/// meta-step (outside the timed region).
pub fn train_with<S, T, Src, F>(
    theta0: &ParamVector<S>,
    source: &mut Src,
    cfg: &SharpnessConfig<S>,
    opts: &TrainOptions,
    mut observe: F,
) -> Result<(ParamVector<S>, RunTrace<S>)>
where
    S: Real,
    T: Task<S>,
    Src: TaskSource<T> + ?Sized,
    F: FnMut(usize, &ParamVector<S>, &MetaStepReport<S>) -> Result<()>,
{
    if opts.iterations == 0 {
        return Err(Error::InvalidArgument("iterations must be at least 1".into()));
    }
    if opts.tasks_per_iteration == 0 {
        return Err(Error::EmptyTaskList);
    }
    cfg.validate()?;
    let parallel = opts.parallel && opts.mode == AdaptMode::PerTaskClone;
    let mut theta = theta0.clone();
    let mut state = OptState::default();
    let mut reports = Vec::with_capacity(opts.iterations);
    let mut truncated = false;
    let mut total = 0u64;

    for t in 0..opts.iterations {
        let Some(tasks) = source.next_tasks(opts.tasks_per_iteration) else {
            truncated = true;
            break;
        };
        let start = opts.record_timing.then(Instant::now);
        let dir = meta_direction(opts.algorithm, &theta, &tasks, cfg, opts.mode, parallel)?;
        let next = match opts.optimizer {
            OuterOptimizer::Sgd => {
                let mut n = theta.clone();
                n.descend(&dir.direction, cfg.gamma)?;
                n
            }
            OuterOptimizer::Adam(p) => {
                let (n, s) = adam_step(&theta, &dir.direction, cfg.gamma, &p, &state)?;
                state = s;
                n
            }
        };
        let step_ns = start.map_or(0, |s| s.elapsed().as_nanos() as u64);
        total += step_ns;

        let diag = match &dir.diagnostics {
            Some(d) => d.clone(),
            None => outer_diagnostics(&dir.adapted, &tasks, cfg, parallel)?,
        };
        let report = report_from(t, &dir, &diag, step_ns);
        observe(t, &next, &report)?;
        reports.push(report);
        theta = next;
    }
    Ok((
        theta,
        RunTrace {
            reports,
            truncated,
            total_step_ns: total,
        },
    ))
}

/// Post-adaptation query metrics averaged over tasks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub query_loss: f64,
    pub query_accuracy: Option<f64>,
}

/// Adapts `theta` to each task with `algorithm`'s own inner procedure and
/// averages the query loss (and accuracy, when the tasks report one).
pub fn evaluate<S: Real, T: Task<S>>(
    algorithm: Algorithm,
    theta: &ParamVector<S>,
    tasks: &[T],
    cfg: &SharpnessConfig<S>,
) -> Result<EvalMetrics> {
    if tasks.is_empty() {
        return Err(Error::EmptyTaskList);
    }
    let inner = inner_fn::<S, T>(algorithm);
    let mut loss = 0.0;
    let mut acc = 0.0;
    let mut has_acc = true;
    for t in tasks {
        let (p, _) = inner(theta, t, cfg)?;
        loss += t.loss(Split::Query, &p)?.as_f64();
        match t.query_accuracy(&p) {
            Some(a) => acc += a?,
            None => has_acc = false,
        }
    }
    let n = tasks.len() as f64;
    Ok(EvalMetrics {
        query_loss: loss / n,
        query_accuracy: has_acc.then_some(acc / n),
    })
}

/// Column order of the trace CSV.
pub const TRACE_COLUMNS: [&str; 7] = [
    "t",
    "outer_loss",
    "grad_norm_sq",
    "perturbed_grad_norm",
    "surrogate_gap",
    "align_cos",
    "step_ns",
];

/// Writes one CSV row per iteration.
pub fn write_trace_csv<S: Real, W: Write>(reports: &[MetaStepReport<S>], mut out: W) -> Result<()> {
    writeln!(out, "{}", TRACE_COLUMNS.join(","))?;
    for r in reports {
        let gn = r.grad_norm.as_f64();
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.t,
            r.outer_loss.as_f64(),
            gn * gn,
            r.perturbed_grad_norm.as_f64(),
            r.surrogate_gap.as_f64(),
            r.align_cos.as_f64(),
            r.step_ns
        )?;
    }
    Ok(())
}

/// One parsed row of a trace CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub outer_loss: f64,
    pub grad_norm_sq: f64,
    pub perturbed_grad_norm: f64,
    pub surrogate_gap: f64,
    pub align_cos: f64,
    pub step_ns: u64,
}

impl<S: Real> From<&MetaStepReport<S>> for TraceRow {
    fn from(r: &MetaStepReport<S>) -> Self {
        let gn = r.grad_norm.as_f64();
        Self {
            t: r.t,
            outer_loss: r.outer_loss.as_f64(),
            grad_norm_sq: gn * gn,
            perturbed_grad_norm: r.perturbed_grad_norm.as_f64(),
            surrogate_gap: r.surrogate_gap.as_f64(),
            align_cos: r.align_cos.as_f64(),
            step_ns: r.step_ns,
        }
    }
}

/// Parses a trace CSV; columns may appear in any order but all of
/// [`TRACE_COLUMNS`] are required.
pub fn read_trace_csv<R: BufRead>(input: R) -> Result<Vec<TraceRow>> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::MissingField("header".into()))?;
    let names: Vec<&str> = header.trim().split(',').map(str::trim).collect();
    let mut idx = [0usize; 7];
    for (slot, col) in idx.iter_mut().zip(TRACE_COLUMNS) {
        *slot = names
            .iter()
            .position(|n| *n == col)
            .ok_or_else(|| Error::MissingField(col.to_string()))?;
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let get = |k: usize| -> Result<&str> {
            cells
                .get(idx[k])
                .copied()
                .ok_or_else(|| Error::MissingField(format!("{} (row {})", TRACE_COLUMNS[k], lineno + 1)))
        };
        let num = |k: usize| -> Result<f64> {
            get(k)?
                .parse::<f64>()
                .map_err(|e| Error::InvalidArgument(format!("row {} column {}: {e}", lineno + 1, TRACE_COLUMNS[k])))
        };
        let int = |k: usize| -> Result<u64> {
            get(k)?
                .parse::<u64>()
                .map_err(|e| Error::InvalidArgument(format!("row {} column {}: {e}", lineno + 1, TRACE_COLUMNS[k])))
        };
        rows.push(TraceRow {
            t: int(0)? as usize,
            outer_loss: num(1)?,
            grad_norm_sq: num(2)?,
            perturbed_grad_norm: num(3)?,
            surrogate_gap: num(4)?,
            align_cos: num(5)?,
            step_ns: int(6)?,
        });
    }
    Ok(rows)
}
