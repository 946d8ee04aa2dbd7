//! The four subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use metasharp::meta::{read_trace_csv, Split, Task};
use metasharp::nn::load_params_tagged;
use metasharp::objective::Objective;
use metasharp::theory::{
    estimate_constants, lemma_bound_report, lemma_records, min_prior_variance, pac_record, theorem_records,
    BoundInputs, BoundRecord, Constants, PacInputs,
};
use metasharp::vector::{GradVector, ParamVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Resolved;
use crate::run::{run_training, RunOutcome, TaskFactory, CHECKPOINT_DIR, PARAMS_FILE};
use crate::stats::{median, median_u64, sign_test, SignTest};
use crate::CliError;

fn out_dir(cfg: &Resolved) -> Result<PathBuf, CliError> {
    cfg.out
        .clone()
        .ok_or_else(|| CliError::Config("out: no output directory given (set `out` or pass --out)".into()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn cmd_train(cfg: &Resolved) -> Result<RunOutcome, CliError> {
    run_training(cfg, &out_dir(cfg)?)
}

/// One row of the sweep table.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub delta: f64,
    pub alpha: f64,
    pub dir: String,
    pub result: Result<SweepCell, String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepCell {
    pub query_loss: f64,
    pub query_accuracy: Option<f64>,
    pub mean_h: f64,
    pub mean_align_cos: f64,
}

pub const SWEEP_FILE: &str = "sweep.csv";

/// Runs one training per `(delta, alpha)` grid point; failed cells are
/// recorded and the sweep continues.
pub fn cmd_sweep(cfg: &Resolved) -> Result<Vec<SweepRow>, CliError> {
    let out = out_dir(cfg)?;
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("sweep: section missing (needs `deltas`)".into()))?;
    let alphas: Vec<Option<f64>> = match &sweep.alphas {
        Some(a) => a.iter().copied().map(Some).collect(),
        None => vec![None],
    };
    let mut cells = Vec::new();
    for &delta in &sweep.deltas {
        for &alpha in &alphas {
            cells.push((delta, alpha));
        }
    }
    fs::create_dir_all(&out).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out.display())))?;

    let run_cell = |i: usize, (delta, alpha): (f64, Option<f64>)| -> SweepRow {
        let mut c = cfg.clone();
        c.sharpness.delta = delta;
        if let Some(a) = alpha {
            c.sharpness.alpha_l = a;
            c.sharpness.alpha_u = a;
        }
        if cfg.threads > 1 {
            c.threads = 1;
        }
        let dir = format!("cell_{i:03}");
        let result = c
            .validate()
            .and_then(|_| run_training(&c, &out.join(&dir)))
            .map(|o| SweepCell {
                query_loss: o.metrics.query_loss,
                query_accuracy: o.metrics.query_accuracy,
                mean_h: o.mean_gap(),
                mean_align_cos: o.mean_align(),
            })
            .map_err(|e| e.to_string());
        SweepRow {
            delta,
            alpha: c.sharpness.alpha_u,
            dir,
            result,
        }
    };
    let rows: Vec<SweepRow> = if cfg.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        pool.install(|| cells.par_iter().enumerate().map(|(i, &c)| run_cell(i, c)).collect())
    } else {
        cells.iter().enumerate().map(|(i, &c)| run_cell(i, c)).collect()
    };

    let mut csv =
        String::from("delta,alpha,status,final_query_loss,final_query_accuracy,mean_h,mean_align_cos,dir,error\n");
    for r in &rows {
        match &r.result {
            Ok(c) => csv.push_str(&format!(
                "{},{},ok,{},{},{},{},{},\n",
                r.delta,
                r.alpha,
                c.query_loss,
                fmt_opt(c.query_accuracy),
                c.mean_h,
                c.mean_align_cos,
                r.dir
            )),
            Err(e) => csv.push_str(&format!(
                "{},{},failed,,,,,{},\"{}\"\n",
                r.delta,
                r.alpha,
                r.dir,
                e.replace('"', "'")
            )),
        }
    }
    fs::write(out.join(SWEEP_FILE), csv)?;
    Ok(rows)
}

/// Index of the sweep cell with the lowest query loss.
pub fn sweep_argmin(rows: &[SweepRow]) -> Option<usize> {
    rows.iter()
        .enumerate()
        .filter_map(|(i, r)| r.result.as_ref().ok().map(|c| (i, c.query_loss)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
}

#[derive(Debug, Clone, Serialize)]
pub struct AlgorithmSummary {
    pub name: String,
    pub median_query_loss: f64,
    pub median_query_accuracy: Option<f64>,
    pub median_step_ns: u64,
    pub query_losses: Vec<f64>,
    pub step_ns_medians: Vec<u64>,
    pub traces: Vec<String>,
    pub episode_hashes: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StepRatio {
    pub numerator: String,
    pub denominator: String,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairedTest {
    /// Wins count pairs where `candidate` has the lower query loss.
    pub candidate: String,
    pub baseline: String,
    #[serde(flatten)]
    pub test: SignTest,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub seeds: Vec<u64>,
    pub iterations: usize,
    pub algorithms: Vec<AlgorithmSummary>,
    pub step_time_ratios: Vec<StepRatio>,
    pub sign_tests: Vec<PairedTest>,
    pub identical_episode_streams: bool,
}

pub const COMPARE_FILE: &str = "compare.json";
pub const COMPARE_CSV: &str = "compare.csv";

/// Equal-budget runs of every listed algorithm on the same episode streams.
pub fn cmd_compare(cfg: &Resolved) -> Result<CompareReport, CliError> {
    let out = out_dir(cfg)?;
    let cmp = cfg
        .compare
        .as_ref()
        .ok_or_else(|| CliError::Config("compare: section missing (needs `algorithms`)".into()))?;
    if cmp.algorithms.len() < 2 {
        return Err(CliError::Config(
            "compare.algorithms: list at least 2 algorithms".into(),
        ));
    }
    let seeds: Vec<u64> = (0..cmp.seeds as u64).map(|i| cfg.seed.wrapping_add(i)).collect();
    // seed-major order spreads machine-load drift evenly across algorithms
    let mut runs: Vec<Vec<(String, RunOutcome)>> = cmp.algorithms.iter().map(|_| Vec::new()).collect();
    for &seed in &seeds {
        for (i, &alg) in cmp.algorithms.iter().enumerate() {
            let mut c = cfg.with_algorithm(alg);
            c.seed = seed;
            c.record_timing = true;
            let rel = format!("{i}_{}/seed_{seed}", alg.name());
            let o = run_training(&c, &out.join(&rel))?;
            runs[i].push((rel, o));
        }
    }
    let mut summaries = Vec::new();
    for (&alg, runs) in cmp.algorithms.iter().zip(&runs) {
        let losses: Vec<f64> = runs.iter().map(|(_, o)| o.metrics.query_loss).collect();
        let accs: Vec<f64> = runs.iter().filter_map(|(_, o)| o.metrics.query_accuracy).collect();
        let steps: Vec<u64> = runs.iter().map(|(_, o)| o.median_step_ns()).collect();
        summaries.push(AlgorithmSummary {
            name: alg.name().to_string(),
            median_query_loss: median(losses.clone()),
            median_query_accuracy: (!accs.is_empty()).then(|| median(accs)),
            median_step_ns: median_u64(steps.clone()),
            query_losses: losses,
            step_ns_medians: steps,
            traces: runs
                .iter()
                .map(|(rel, _)| format!("{rel}/{}", crate::run::TRACE_FILE))
                .collect(),
            episode_hashes: runs.iter().map(|(_, o)| o.train_episode_hash.clone()).collect(),
        });
    }

    let mut ratios = Vec::new();
    let mut tests = Vec::new();
    for (i, a) in summaries.iter().enumerate() {
        for (j, b) in summaries.iter().enumerate() {
            if i != j {
                ratios.push(StepRatio {
                    numerator: a.name.clone(),
                    denominator: b.name.clone(),
                    ratio: a.median_step_ns as f64 / b.median_step_ns.max(1) as f64,
                });
            }
            if j < i {
                tests.push(PairedTest {
                    candidate: a.name.clone(),
                    baseline: b.name.clone(),
                    test: sign_test(&a.query_losses, &b.query_losses),
                });
            }
        }
    }
    let identical = summaries.windows(2).all(|w| w[0].episode_hashes == w[1].episode_hashes);
    let report = CompareReport {
        seeds,
        iterations: cfg.iterations,
        algorithms: summaries,
        step_time_ratios: ratios,
        sign_tests: tests,
        identical_episode_streams: identical,
    };
    write_json(&out.join(COMPARE_FILE), &report)?;
    let first = report.algorithms[0].median_step_ns.max(1) as f64;
    let mut csv =
        String::from("algorithm,median_query_loss,median_query_accuracy,median_step_ns,step_ratio_vs_first\n");
    for a in &report.algorithms {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            a.name,
            a.median_query_loss,
            fmt_opt(a.median_query_accuracy),
            a.median_step_ns,
            a.median_step_ns as f64 / first
        ));
    }
    fs::write(out.join(COMPARE_CSV), csv)?;
    Ok(report)
}

/// Schema identifier of `bounds.json`.
pub const BOUNDS_SCHEMA: &str = "metasharp.bounds.v1";
pub const BOUNDS_FILE: &str = "bounds.json";
pub const REQUIRED_RECORDS: [&str; 5] = ["theorem1", "theorem2", "lemma3", "lemma4", "lemma5"];

#[derive(Debug, Clone, Serialize)]
pub struct BoundsReport {
    pub schema: &'static str,
    pub required_records: Vec<&'static str>,
    pub trace_rows: usize,
    pub parameter_samples: usize,
    pub constants: Constants,
    pub k: f64,
    pub records: Vec<BoundRecord>,
    pub notes: Vec<String>,
}

/// Sum of the clipped query losses of a fixed task set.
struct QuerySum<'a> {
    tasks: &'a [crate::run::AnyTask],
    clip: Option<f64>,
}

impl Objective<f64> for QuerySum<'_> {
    fn loss_grad(&self, theta: &[f64]) -> metasharp::Result<(f64, GradVector<f64>)> {
        let mut loss = 0.0;
        let mut grad = GradVector::zeros(theta.len());
        for t in self.tasks {
            let (l, g) = t.loss_grad(Split::Query, theta)?;
            loss += l;
            let g = match self.clip {
                Some(c) => metasharp::nn::clip_grad_inf(&g, c),
                None => g,
            };
            grad.accumulate(&g)?;
        }
        Ok((loss, grad))
    }
}

fn parameter_samples(cfg: &Resolved, factory: &TaskFactory, dir: &Path) -> Result<Vec<ParamVector<f64>>, CliError> {
    let mut samples = vec![factory.init(cfg.seed)];
    let ckpt = dir.join(CHECKPOINT_DIR);
    if ckpt.is_dir() {
        let mut names: Vec<PathBuf> = fs::read_dir(&ckpt)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "bin"))
            .collect();
        names.sort();
        for p in names {
            samples.push(load_params_tagged(&p)?.0);
        }
    }
    let final_params = dir.join(PARAMS_FILE);
    if final_params.is_file() {
        samples.push(load_params_tagged(&final_params)?.0);
    }
    if let Some(s) = samples.iter().find(|s| s.dim() != factory.param_count()) {
        return Err(CliError::Runtime(format!(
            "parameter sample has dimension {} but the configured model has {}",
            s.dim(),
            factory.param_count()
        )));
    }
    Ok(samples)
}

/// Evaluates every bound against a recorded trace and writes `bounds.json`.
pub fn cmd_bounds(cfg: &Resolved, trace: &Path, u_override: Option<f64>) -> Result<BoundsReport, CliError> {
    let file = fs::File::open(trace).map_err(|e| CliError::Runtime(format!("{}: {e}", trace.display())))?;
    let rows = read_trace_csv(std::io::BufReader::new(file))
        .map_err(|e| CliError::Runtime(format!("{}: {e}", trace.display())))?;
    if rows.is_empty() {
        return Err(CliError::Runtime(format!("{}: trace has no rows", trace.display())));
    }
    let dir = trace.parent().unwrap_or(Path::new(".")).to_path_buf();
    let out = cfg.out.clone().unwrap_or_else(|| dir.clone());
    fs::create_dir_all(&out)?;

    let factory = TaskFactory::new(cfg)?;
    let m = cfg.tasks_per_iteration;
    let first: Vec<_> = (0..m as u64)
        .map(|i| factory.train_task(cfg.seed, i))
        .collect::<Result<_, _>>()?;
    let samples = parameter_samples(cfg, &factory, &dir)?;
    let objective = QuerySum {
        tasks: &first,
        clip: cfg.sharpness.clip_c,
    };
    let constants = estimate_constants(&[objective], &samples)?;

    let sh = &cfg.sharpness;
    let d = factory.param_count();
    let b = &cfg.bounds;
    let lhs = rows.iter().map(|r| r.grad_norm_sq).sum::<f64>() / rows.len() as f64;
    let l_star = b
        .l_star
        .unwrap_or_else(|| rows.iter().map(|r| r.outer_loss).fold(f64::INFINITY, f64::min));
    let inputs = BoundInputs {
        c: constants.c_hat,
        d,
        l_lip: constants.l_hat,
        alpha: sh.alpha_u,
        delta: sh.delta,
        gamma: sh.gamma,
        t: rows.len(),
        l0: rows[0].outer_loss,
        l_star,
        sigma1_sq: b.sigma1_sq,
        sigma2_sq: b.sigma2_sq,
    };
    inputs.validate()?;
    let mut records = theorem_records(&inputs, Some(lhs));
    let lemmas = lemma_bound_report(
        &rows,
        constants.c_hat,
        d,
        sh.alpha_u,
        sh.delta,
        b.sigma1_sq,
        b.sigma2_sq,
    )?;
    records.extend(lemma_records(&lemmas, constants.c_hat, d, sh.alpha_u, sh.delta));

    let mut notes = vec![
        "C and L are estimated from the summed query gradients of the first meta-batch at the stored parameter samples"
            .to_string(),
    ];
    let q = sh.alpha_u * sh.alpha_u + sh.delta * sh.delta;
    if q > 0.0 {
        let params = samples.last().expect("at least the initial sample").clone();
        let last = rows.len().saturating_sub(1) as u64 * m as u64;
        let tasks: Vec<_> = (0..m as u64)
            .map(|i| factory.train_task(cfg.seed, last + i))
            .collect::<Result<_, _>>()?;
        let mut losses = Vec::with_capacity(m);
        let mut clipped = 0;
        for t in &tasks {
            let e = metasharp::meta::evaluate(cfg.algorithm, &params, std::slice::from_ref(t), sh)?;
            let l = match e.query_accuracy {
                Some(acc) => 1.0 - acc,
                None => {
                    if e.query_loss > 1.0 {
                        clipped += 1;
                    }
                    e.query_loss.clamp(0.0, 1.0)
                }
            };
            losses.push(l);
        }
        if clipped > 0 {
            notes.push(format!(
                "{clipped} task losses exceeded 1 and were clipped to 1 for the PAC-Bayes bound"
            ));
        }
        let pac = PacInputs {
            theta_hat: params.iter().copied().collect(),
            alpha: sh.alpha_u,
            delta: sh.delta,
            sigma_p_sq: b
                .sigma_p_sq
                .unwrap_or_else(|| min_prior_variance(sh.alpha_u, sh.delta).max(1.0)),
            k: rows.len() * m,
            psi: b.psi,
            u: u_override.unwrap_or(b.u),
            losses,
        };
        records.push(pac_record(&pac)?);
    } else {
        notes.push("pac_bayes skipped: alpha and delta are both zero, so the posterior variance vanishes".into());
    }

    let report = BoundsReport {
        schema: BOUNDS_SCHEMA,
        required_records: REQUIRED_RECORDS.to_vec(),
        trace_rows: rows.len(),
        parameter_samples: samples.len(),
        constants,
        k: lemmas.k,
        records,
        notes,
    };
    write_json(&out.join(BOUNDS_FILE), &report)?;
    Ok(report)
}

/// Checks a parsed `bounds.json` against the schema it declares.
pub fn validate_bounds_report(v: &serde_json::Value) -> Result<(), String> {
    let obj = v.as_object().ok_or("report must be an object")?;
    if obj.get("schema").and_then(|s| s.as_str()) != Some(BOUNDS_SCHEMA) {
        return Err(format!("schema must be `{BOUNDS_SCHEMA}`"));
    }
    let required: Vec<&str> = obj
        .get("required_records")
        .and_then(|r| r.as_array())
        .ok_or("required_records must be an array")?
        .iter()
        .map(|s| s.as_str().ok_or("required_records entries must be strings"))
        .collect::<Result<_, _>>()?;
    let records = obj
        .get("records")
        .and_then(|r| r.as_array())
        .ok_or("records must be an array")?;
    let num_or_null = |r: &serde_json::Map<String, serde_json::Value>, k: &str| match r.get(k) {
        Some(x) if x.is_number() || x.is_null() => Ok(()),
        _ => Err(format!("record field `{k}` must be a number or null")),
    };
    let mut names = Vec::new();
    for rec in records {
        let r = rec.as_object().ok_or("each record must be an object")?;
        let name = r
            .get("name")
            .and_then(|n| n.as_str())
            .ok_or("record.name must be a string")?;
        if !r.get("rhs").is_some_and(|x| x.is_number()) {
            return Err(format!("record `{name}`: rhs must be a number"));
        }
        num_or_null(r, "lhs")?;
        num_or_null(r, "margin")?;
        let inputs = r
            .get("inputs")
            .and_then(|i| i.as_object())
            .ok_or_else(|| format!("record `{name}`: inputs must be an object"))?;
        if let Some((k, _)) = inputs.iter().find(|(_, x)| !x.is_number()) {
            return Err(format!("record `{name}`: input `{k}` must be a number"));
        }
        names.push(name);
    }
    if let Some(missing) = required.iter().find(|n| !names.contains(n)) {
        return Err(format!("required record `{missing}` is absent"));
    }
    Ok(())
}
