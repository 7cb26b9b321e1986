//! Running configured experiments and writing their result files.
//!
//! Every independent run (sampler setting x stepsize x seed) gets its own
//! random stream, `chain_rng(seed, stream)`, with the stream fixed by the
//! run's position in the config. Runs execute on a worker pool and results
//! are collected in config order, so metric CSVs do not depend on thread
//! count or scheduling. Wall times go to `manifest.json` only.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use discrete_langevin::diagnostics::{ess, flip_stats, mean_rmse, mmd_hamming, mmd_permutation_test, FlipStats};
use discrete_langevin::dlp::stochastic_proposal_bias_probe;
use discrete_langevin::models::AdditiveNoiseModel;
use discrete_langevin::oracle::{
    exact_kernel_with_cap, exact_target_with_cap, gradient_blind_check, l1_distance, stationary_with,
    theorem1_bound, theorem2_probe, tv_distance, ExactDistribution, StationaryMethod, KERNEL_STATE_CAP,
};
use discrete_langevin::rng::chain_rng;
use discrete_langevin::samplers::{run_chain, Recorder, SamplerKind, StepEvent};
use discrete_langevin::dlp::DlpConfig;
use discrete_langevin::{Domain, DomainKind, EnergyModel, Error, MinibatchSpec, Result, State};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::build::{alpha_field, build_model, random_state, sampler_runs, BuiltModel, SamplerRun};
use crate::config::{check, ExperimentConfig, ExperimentKind, ModelSpec};
use crate::output::{ensure_dir, num, opt_num, plot_table, Table};

/// Default limit on enumerated states for exact ground truth.
pub const DEFAULT_TRUTH_CAP: u128 = 1 << 20;
/// Batches used for the Monte-Carlo error of a reference-chain mean.
const REFERENCE_BATCHES: usize = 50;
const REFERENCE_SEED: u64 = 0x7265_6665_7265_6e63;
const REFERENCE_STREAM: u64 = u64::MAX;
const PERMUTATION_SALT: u64 = 1 << 63;

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Overrides the config's `output_dir`.
    pub out_dir: Option<PathBuf>,
    /// Worker threads; `None` uses all cores.
    pub threads: Option<usize>,
    /// Largest state space enumerated for exact results.
    pub state_cap: u128,
    /// Directory relative paths in the config resolve against.
    pub base_dir: Option<PathBuf>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            out_dir: None,
            threads: None,
            state_cap: DEFAULT_TRUTH_CAP,
            base_dir: None,
        }
    }
}

/// Manifest entry for one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub sampler: String,
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
    pub ok: bool,
    pub wall_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ess_energy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ess_per_sec: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub runs: Vec<RunRecord>,
    pub summary: Map<String, Value>,
}

impl RunReport {
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| !r.ok).count()
    }
}

#[derive(Default)]
struct Outcome {
    tables: Vec<Table>,
    runs: Vec<RunRecord>,
    summary: Map<String, Value>,
}

#[derive(Debug, Clone)]
struct Job {
    run: SamplerRun,
    seed: u64,
    stream: u64,
}

fn jobs(cfg: &ExperimentConfig) -> Vec<Job> {
    let mut out = Vec::new();
    for (i, spec) in cfg.samplers.iter().enumerate() {
        for (k, run) in sampler_runs(spec).into_iter().enumerate() {
            for &seed in &cfg.seeds {
                out.push(Job {
                    run: run.clone(),
                    seed,
                    stream: ((i as u64) << 20) | k as u64,
                });
            }
        }
    }
    out
}

/// Series name used in plot files.
fn series(label: &str, alpha: Option<f64>, seed: Option<u64>) -> String {
    let mut s = label.to_string();
    if let Some(a) = alpha {
        s.push_str(&format!(" alpha={a}"));
    }
    if let Some(seed) = seed {
        s.push_str(&format!(" seed={seed}"));
    }
    s
}

fn record(job: &Job, seed: Option<u64>, wall: f64, result: &std::result::Result<Option<f64>, String>, ess_per_sec: Option<f64>) -> RunRecord {
    RunRecord {
        sampler: job.run.label.clone(),
        alpha: job.run.alpha,
        seed,
        ok: result.is_ok(),
        wall_seconds: wall,
        ess_energy: result.as_ref().ok().copied().flatten(),
        ess_per_sec,
        error: result.as_ref().err().cloned(),
    }
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Output directory: the override, the config's, or `results/<id>`.
pub fn output_dir(cfg: &ExperimentConfig, opts: &RunOptions) -> PathBuf {
    if let Some(d) = &opts.out_dir {
        return d.clone();
    }
    match &cfg.output_dir {
        Some(d) => {
            let p = PathBuf::from(d);
            match &opts.base_dir {
                Some(base) if p.is_relative() => base.join(p),
                _ => p,
            }
        }
        None => PathBuf::from("results").join(cfg.id()),
    }
}

/// Run the experiment and write its CSVs, canonical config and manifest.
///
/// Setup problems are errors. A failing run is recorded in the manifest and
/// the report while the remaining runs complete.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunReport> {
    let issues = check(cfg);
    if !issues.is_empty() {
        let text: Vec<String> = issues.iter().map(|i| i.to_string()).collect();
        return Err(Error::InvalidConfig(text.join("; ")));
    }
    let out_dir = output_dir(cfg, opts);
    ensure_dir(&out_dir)?;
    let started = unix_now();
    let clock = Instant::now();
    let model = build_model(&cfg.model, opts.base_dir.as_deref())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let outcome = pool.install(|| match cfg.kind {
        ExperimentKind::Theorem1Sweep => theorem1(cfg, &model, opts),
        ExperimentKind::Theorem2Sweep => theorem2(cfg),
        ExperimentKind::IsingSample => sampling(cfg, &model, opts, "ising", true),
        ExperimentKind::PreconditionerDemo => sampling(cfg, &model, opts, "preconditioner", true),
        ExperimentKind::StepsizeAblation => sampling(cfg, &model, opts, "ablation", false),
        ExperimentKind::RbmSample => rbm(cfg, &model, opts),
        ExperimentKind::StochasticProbe => stochastic(cfg, &model),
    })?;
    let mut files = Vec::new();
    for t in &outcome.tables {
        files.push(t.write(&out_dir)?);
    }
    let config_path = out_dir.join("config.toml");
    fs::write(&config_path, cfg.to_canonical())?;
    files.push(config_path);
    let manifest_path = out_dir.join("manifest.json");
    let names: Vec<String> = files
        .iter()
        .chain(std::iter::once(&manifest_path))
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    let failures = outcome.runs.iter().filter(|r| !r.ok).count();
    let manifest = json!({
        "experiment": cfg.id(),
        "kind": cfg.kind.name(),
        "config_hash": cfg.hash(),
        "library_version": discrete_langevin::VERSION,
        "cli_version": crate::VERSION,
        "seeds": cfg.seeds,
        "started_unix": started,
        "finished_unix": unix_now(),
        "wall_seconds": clock.elapsed().as_secs_f64(),
        "threads": pool.current_num_threads(),
        "files": names,
        "runs": outcome.runs,
        "failures": failures,
        "summary": outcome.summary,
    });
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))? + "\n")?;
    files.push(manifest_path);
    Ok(RunReport {
        out_dir,
        files,
        runs: outcome.runs,
        summary: outcome.summary,
    })
}

fn theorem1(cfg: &ExperimentConfig, model: &BuiltModel, opts: &RunOptions) -> Result<Outcome> {
    let lq = model
        .as_log_quadratic()
        .ok_or_else(|| Error::Unsupported("theorem1_sweep needs a log-quadratic model".into()))?;
    let cap = opts.state_cap.min(KERNEL_STATE_CAP as u128) as usize;
    let target = exact_target_with_cap(model, cap as u128)?;
    let runs: Vec<SamplerRun> = cfg.samplers.iter().flat_map(sampler_runs).collect();
    let results: Vec<(f64, std::result::Result<(f64, f64), String>)> = runs
        .par_iter()
        .map(|run| {
            let t = Instant::now();
            let r = (|| {
                let alpha = run.alpha.ok_or_else(|| Error::InvalidConfig("missing stepsize".into()))?;
                let k = exact_kernel_with_cap(model, &run.kind, cap)?;
                let pi_alpha = stationary_with(&k, StationaryMethod::Auto)?;
                Ok::<_, Error>((l1_distance(&pi_alpha, target.probs())?, theorem1_bound(lq, alpha)?))
            })();
            (t.elapsed().as_secs_f64(), r.map_err(|e| e.to_string()))
        })
        .collect();
    let mut table = Table::new(
        "theorem1_distance.csv",
        &["experiment", "sampler", "seed", "alpha", "l1_distance", "bound", "within_bound"],
    );
    let mut plot = plot_table("theorem1_plot.csv");
    let mut out = Outcome::default();
    let mut curves: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut all_within = true;
    for (run, (wall, r)) in runs.iter().zip(&results) {
        out.runs.push(RunRecord {
            sampler: run.label.clone(),
            alpha: run.alpha,
            seed: None,
            ok: r.is_ok(),
            wall_seconds: *wall,
            ess_energy: None,
            ess_per_sec: None,
            error: r.as_ref().err().cloned(),
        });
        let Ok((dist, bound)) = r else { continue };
        let alpha = run.alpha.unwrap_or(f64::NAN);
        all_within &= dist <= bound;
        table.push(vec![
            cfg.id(),
            run.label.clone(),
            String::new(),
            num(alpha),
            num(*dist),
            num(*bound),
            (dist <= bound).to_string(),
        ]);
        plot.push(vec![num(alpha), num(*dist), format!("{} distance", run.label)]);
        plot.push(vec![num(alpha), num(*bound), format!("{} bound", run.label)]);
        curves.entry(run.label.clone()).or_default().push((alpha, *dist));
    }
    let monotone = curves.values_mut().all(|c| {
        c.sort_by(|a, b| a.0.total_cmp(&b.0));
        c.windows(2).all(|w| w[1].1 >= w[0].1)
    });
    out.summary.insert("lambda_min".into(), json!(lq.lambda_min()));
    out.summary.insert("all_within_bound".into(), json!(all_within));
    out.summary.insert("monotone_in_alpha".into(), json!(monotone));
    out.tables = vec![table, plot];
    Ok(out)
}

fn theorem2(cfg: &ExperimentConfig) -> Result<Outcome> {
    let ModelSpec::Perturbed1d { a, b, .. } = cfg.model else {
        return Err(Error::Unsupported("theorem2_sweep needs perturbed_1d".into()));
    };
    let eps = cfg.sweep().epsilons.unwrap_or_default();
    let runs: Vec<SamplerRun> = cfg.samplers.iter().flat_map(sampler_runs).collect();
    let mut table = Table::new(
        "theorem2_distance.csv",
        &["experiment", "sampler", "seed", "alpha", "epsilon", "l1_distance"],
    );
    let mut blind = Table::new(
        "gradient_blind.csv",
        &["alpha", "epsilon", "grad_minus", "grad_plus", "p_plus", "proposal_invariant", "target_varies"],
    );
    let mut plot = plot_table("theorem2_plot.csv");
    let mut out = Outcome::default();
    let mut monotone = true;
    let mut invariant = true;
    let mut varies = true;
    for run in &runs {
        let t = Instant::now();
        let alpha = run.alpha.unwrap_or(f64::NAN);
        let r = theorem2_probe(&eps, a, b, alpha).and_then(|p| Ok((p, gradient_blind_check(&eps, alpha)?)));
        out.runs.push(RunRecord {
            sampler: run.label.clone(),
            alpha: run.alpha,
            seed: None,
            ok: r.is_ok(),
            wall_seconds: t.elapsed().as_secs_f64(),
            ess_energy: None,
            ess_per_sec: None,
            error: r.as_ref().err().map(|e| e.to_string()),
        });
        let Ok((probe, check)) = r else { continue };
        monotone &= probe.monotone;
        invariant &= check.proposal_invariant;
        varies &= check.target_varies;
        for (e, d) in &probe.rows {
            table.push(vec![cfg.id(), run.label.clone(), String::new(), num(alpha), num(*e), num(*d)]);
            plot.push(vec![num(*e), num(*d), series(&run.label, run.alpha, None)]);
        }
        for (k, e) in eps.iter().enumerate() {
            blind.push(vec![
                num(alpha),
                num(*e),
                num(check.gradients[k][0]),
                num(check.gradients[k][1]),
                num(check.p_plus[k]),
                check.proposal_invariant.to_string(),
                check.target_varies.to_string(),
            ]);
        }
    }
    out.summary.insert("monotone_in_epsilon".into(), json!(monotone));
    out.summary.insert("gradient_blind_proposal_invariant".into(), json!(invariant));
    out.summary.insert("gradient_blind_target_varies".into(), json!(varies));
    out.tables = vec![table, blind, plot];
    Ok(out)
}

/// Ground-truth mean for RMSE, and the exact distribution when enumerable.
struct Truth {
    mean: Vec<f64>,
    std_error: Option<Vec<f64>>,
    source: &'static str,
    exact: Option<ExactDistribution>,
}

fn enumerable(domain: &Domain, cap: u128) -> bool {
    domain.num_states().is_some_and(|n| n <= cap)
}

fn truth(cfg: &ExperimentConfig, model: &BuiltModel, cap: u128) -> Result<Truth> {
    if enumerable(model.domain(), cap) {
        let exact = exact_target_with_cap(model, cap)?;
        return Ok(Truth {
            mean: exact.mean(),
            std_error: None,
            source: "exact",
            exact: Some(exact),
        });
    }
    let kind = SamplerKind::Dmala(DlpConfig::new(cfg.run.reference_alpha));
    let steps = cfg.run.reference_steps;
    let mut rng = chain_rng(REFERENCE_SEED, REFERENCE_STREAM);
    let init = random_state(model.domain(), &mut rng);
    let mut batches = BatchMeans::new(model.domain(), steps - steps / 10);
    run_chain(model, &kind, init, steps, steps / 10, 1, &mut rng, &mut [&mut batches])?;
    let (mean, std_error) = batches.finish_stats()?;
    Ok(Truth {
        mean,
        std_error: Some(std_error),
        source: "reference_chain",
        exact: None,
    })
}

/// Overall mean and batch-means standard error of the embedded coordinates.
struct BatchMeans {
    domain: Domain,
    batch_len: usize,
    buf: Vec<f64>,
    current: Vec<f64>,
    in_batch: usize,
    means: Vec<Vec<f64>>,
}

impl BatchMeans {
    fn new(domain: &Domain, n: usize) -> Self {
        let e = domain.embed_dim();
        Self {
            domain: domain.clone(),
            batch_len: (n / REFERENCE_BATCHES).max(1),
            buf: vec![0.0; e],
            current: vec![0.0; e],
            in_batch: 0,
            means: Vec::new(),
        }
    }

    fn finish_stats(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let b = self.means.len();
        if b < 2 {
            return Err(Error::Empty("reference chain batches"));
        }
        let e = self.buf.len();
        let mean: Vec<f64> = (0..e).map(|j| self.means.iter().map(|m| m[j]).sum::<f64>() / b as f64).collect();
        let se = (0..e)
            .map(|j| {
                let var = self.means.iter().map(|m| (m[j] - mean[j]).powi(2)).sum::<f64>() / (b - 1) as f64;
                (var / b as f64).sqrt()
            })
            .collect();
        Ok((mean, se))
    }
}

impl Recorder for BatchMeans {
    fn record(&mut self, _step: usize, state: &State, _event: &StepEvent) -> Result<()> {
        self.domain.embed_into(state, &mut self.buf);
        self.current.iter_mut().zip(&self.buf).for_each(|(c, x)| *c += x);
        self.in_batch += 1;
        if self.in_batch == self.batch_len {
            let n = self.batch_len as f64;
            self.means.push(self.current.iter().map(|c| c / n).collect());
            self.current.iter_mut().for_each(|c| *c = 0.0);
            self.in_batch = 0;
        }
        Ok(())
    }
}

/// Per-chain recorder: running mean with RMSE checkpoints, evenly spaced
/// samples and an optional state histogram.
struct ChainRecorder<'a> {
    domain: &'a Domain,
    truth: Option<&'a [f64]>,
    buf: Vec<f64>,
    sum: Vec<f64>,
    count: usize,
    checkpoints: Vec<usize>,
    next_checkpoint: usize,
    curve: Vec<Checkpoint>,
    sample_stride: usize,
    sample_limit: usize,
    samples: Vec<State>,
    histogram: Option<Vec<u64>>,
}

#[derive(Debug, Clone, Copy)]
struct Checkpoint {
    step: usize,
    rmse: Option<f64>,
    n_samples: usize,
}

impl<'a> ChainRecorder<'a> {
    fn new(
        domain: &'a Domain,
        truth: Option<&'a [f64]>,
        expected: usize,
        n_checkpoints: usize,
        sample_limit: usize,
        histogram: bool,
    ) -> Self {
        let mut checkpoints: Vec<usize> = (1..=n_checkpoints)
            .map(|k| (k * expected / n_checkpoints).max(1))
            .collect();
        checkpoints.dedup();
        let e = domain.embed_dim();
        Self {
            domain,
            truth,
            buf: vec![0.0; e],
            sum: vec![0.0; e],
            count: 0,
            checkpoints,
            next_checkpoint: 0,
            curve: Vec::new(),
            sample_stride: (expected / sample_limit.max(1)).max(1),
            sample_limit,
            samples: Vec::new(),
            histogram: histogram.then(|| vec![0; domain.num_states().unwrap_or(0) as usize]),
        }
    }

    fn mean(&self) -> Vec<f64> {
        self.sum.iter().map(|s| s / self.count as f64).collect()
    }

    fn rmse(&self) -> Option<f64> {
        let t = self.truth?;
        if self.count == 0 {
            return None;
        }
        mean_rmse(&self.mean(), t).ok()
    }
}

impl Recorder for ChainRecorder<'_> {
    fn record(&mut self, step: usize, state: &State, _event: &StepEvent) -> Result<()> {
        self.domain.embed_into(state, &mut self.buf);
        self.sum.iter_mut().zip(&self.buf).for_each(|(s, x)| *s += x);
        if self.count % self.sample_stride == 0 && self.samples.len() < self.sample_limit {
            self.samples.push(state.clone());
        }
        self.count += 1;
        if let Some(h) = &mut self.histogram {
            h[self.domain.index_of(state)] += 1;
        }
        if self.checkpoints.get(self.next_checkpoint) == Some(&self.count) {
            self.next_checkpoint += 1;
            let rmse = self.rmse();
            self.curve.push(Checkpoint {
                step: step + 1,
                rmse,
                n_samples: self.samples.len(),
            });
        }
        Ok(())
    }
}

struct ChainResult {
    stats: FlipStats,
    ess_energy: Option<f64>,
    chain_seconds: f64,
    rmse: Option<f64>,
    curve: Vec<Checkpoint>,
    samples: Vec<State>,
    tv: Option<f64>,
}

fn run_job(
    cfg: &ExperimentConfig,
    model: &BuiltModel,
    job: &Job,
    truth: Option<&Truth>,
    sample_limit: usize,
    histogram: bool,
) -> Result<ChainResult> {
    let run = &cfg.run;
    let domain = model.domain();
    let mut rng = chain_rng(job.seed, job.stream);
    let init = random_state(domain, &mut rng);
    let burn = run.burn_in();
    let expected = (run.steps - burn).div_ceil(run.thin);
    let exact = truth.and_then(|t| t.exact.as_ref());
    let mut rec = ChainRecorder::new(
        domain,
        truth.map(|t| t.mean.as_slice()),
        expected,
        run.checkpoints,
        sample_limit,
        histogram && exact.is_some(),
    );
    let trace = run_chain(model, &job.run.kind, init, run.steps, burn, run.thin, &mut rng, &mut [&mut rec])?;
    let stats = flip_stats(&trace)?;
    let ess_energy = ess(&trace.energies).ok();
    let tv = match (exact, &rec.histogram) {
        (Some(d), Some(h)) => {
            let n = rec.count as f64;
            let emp: Vec<f64> = h.iter().map(|c| *c as f64 / n).collect();
            Some(tv_distance(&emp, d.probs())?)
        }
        _ => None,
    };
    Ok(ChainResult {
        stats,
        ess_energy,
        chain_seconds: trace.elapsed.as_secs_f64(),
        rmse: rec.rmse(),
        curve: rec.curve,
        samples: rec.samples,
        tv,
    })
}

fn run_all<T: Send>(
    jobs: &[Job],
    f: impl Fn(&Job) -> Result<T> + Sync,
) -> Vec<(f64, std::result::Result<T, String>)> {
    jobs.par_iter()
        .map(|job| {
            let t = Instant::now();
            let r = f(job).map_err(|e| e.to_string());
            (t.elapsed().as_secs_f64(), r)
        })
        .collect()
}

fn ess_per_sec(r: &ChainResult) -> Option<f64> {
    r.ess_energy.filter(|_| r.chain_seconds > 0.0).map(|e| e / r.chain_seconds)
}

fn log_or_empty(v: Option<f64>) -> String {
    opt_num(v.map(f64::ln))
}

fn sampling(
    cfg: &ExperimentConfig,
    model: &BuiltModel,
    opts: &RunOptions,
    prefix: &str,
    with_truth: bool,
) -> Result<Outcome> {
    let truth = if with_truth {
        Some(truth(cfg, model, opts.state_cap)?)
    } else {
        None
    };
    let jobs = jobs(cfg);
    let results = run_all(&jobs, |job| run_job(cfg, model, job, truth.as_ref(), 0, false));
    let mut metrics = Table::new(
        format!("{prefix}_metrics.csv"),
        &[
            "experiment",
            "sampler",
            "seed",
            "alpha",
            "acceptance",
            "coords_per_accepted",
            "coords_per_step",
            "coords_proposed",
            "ess_energy",
            "rmse",
            "log_rmse",
        ],
    );
    let mut plot = plot_table(format!("{prefix}_rmse_plot.csv"));
    let mut out = Outcome::default();
    let mut best: BTreeMap<String, Vec<(Option<f64>, f64)>> = BTreeMap::new();
    for (job, (wall, r)) in jobs.iter().zip(&results) {
        let ess_ok = r.as_ref().map(|c| c.ess_energy).map_err(Clone::clone);
        out.runs.push(record(job, Some(job.seed), *wall, &ess_ok, r.as_ref().ok().and_then(ess_per_sec)));
        let Ok(c) = r else { continue };
        metrics.push(vec![
            cfg.id(),
            job.run.label.clone(),
            job.seed.to_string(),
            alpha_field(job.run.alpha),
            num(c.stats.acceptance_rate),
            num(c.stats.coords_per_accepted),
            num(c.stats.coords_per_step),
            num(c.stats.coords_proposed),
            opt_num(c.ess_energy),
            opt_num(c.rmse),
            log_or_empty(c.rmse),
        ]);
        for p in &c.curve {
            if let Some(r) = p.rmse {
                plot.push(vec![p.step.to_string(), num(r.ln()), series(&job.run.label, job.run.alpha, Some(job.seed))]);
            }
        }
        if let Some(r) = c.rmse {
            best.entry(job.run.label.clone()).or_default().push((job.run.alpha, r.ln()));
        }
    }
    out.tables.push(metrics);
    if let Some(t) = &truth {
        out.tables.push(plot);
        let mut reference = Table::new("reference.csv", &["coordinate", "mean", "std_error", "source"]);
        for (j, m) in t.mean.iter().enumerate() {
            let se = t.std_error.as_ref().map(|s| s[j]);
            reference.push(vec![j.to_string(), num(*m), opt_num(se), t.source.to_string()]);
        }
        out.tables.push(reference);
        out.summary.insert("truth".into(), json!(t.source));
    }
    if cfg.kind == ExperimentKind::PreconditionerDemo {
        out.tables.push(preconditioner_summary(cfg, &best));
    }
    Ok(out)
}

/// Best stepsize per sampler entry by log RMSE averaged over seeds.
fn preconditioner_summary(cfg: &ExperimentConfig, results: &BTreeMap<String, Vec<(Option<f64>, f64)>>) -> Table {
    let mut t = Table::new(
        "preconditioner_summary.csv",
        &["experiment", "sampler", "preconditioned", "best_alpha", "log_rmse"],
    );
    for spec in &cfg.samplers {
        let label = spec.display_label();
        let Some(rows) = results.get(&label) else { continue };
        let mut by_alpha: Vec<(Option<f64>, f64, usize)> = Vec::new();
        for (a, v) in rows {
            match by_alpha.iter_mut().find(|(b, _, _)| b == a) {
                Some(e) => {
                    e.1 += v;
                    e.2 += 1;
                }
                None => by_alpha.push((*a, *v, 1)),
            }
        }
        let best = by_alpha
            .iter()
            .map(|(a, s, n)| (*a, s / *n as f64))
            .min_by(|x, y| x.1.total_cmp(&y.1));
        if let Some((a, v)) = best {
            t.push(vec![
                cfg.id(),
                label,
                spec.preconditioner.is_some().to_string(),
                alpha_field(a),
                num(v),
            ]);
        }
    }
    t
}

fn rbm(cfg: &ExperimentConfig, model: &BuiltModel, opts: &RunOptions) -> Result<Outcome> {
    if model.as_rbm().is_none() {
        return Err(Error::Unsupported("rbm_sample needs an rbm model".into()));
    }
    let run = &cfg.run;
    let exact = if enumerable(model.domain(), opts.state_cap) {
        let d = exact_target_with_cap(model, opts.state_cap)?;
        Some(Truth {
            mean: d.mean(),
            std_error: None,
            source: "exact",
            exact: Some(d),
        })
    } else {
        None
    };
    let references: Vec<std::result::Result<Vec<State>, String>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let job = Job {
                run: SamplerRun {
                    label: "reference".into(),
                    alpha: None,
                    kind: SamplerKind::RbmBlockGibbs,
                },
                seed,
                stream: REFERENCE_STREAM,
            };
            run_job(cfg, model, &job, None, run.mmd_samples, false)
                .map(|r| r.samples)
                .map_err(|e| e.to_string())
        })
        .collect();
    let jobs = jobs(cfg);
    let results = run_all(&jobs, |job| {
        let k = cfg.seeds.iter().position(|s| *s == job.seed).unwrap_or(0);
        let reference = references[k].as_ref().map_err(|e| Error::InvalidConfig(format!("reference chain: {e}")))?;
        let c = run_job(cfg, model, job, exact.as_ref(), run.mmd_samples, true)?;
        let mut rng = chain_rng(job.seed, job.stream ^ PERMUTATION_SALT);
        let test = mmd_permutation_test(&c.samples, reference, run.permutations, &mut rng)?;
        let curve: Vec<(usize, f64)> = c
            .curve
            .iter()
            .filter(|p| p.n_samples >= 2)
            .map(|p| Ok((p.step, mmd_hamming(&c.samples[..p.n_samples], reference)?.log_mmd2)))
            .collect::<Result<_>>()?;
        Ok((c, test, curve))
    });
    let mut metrics = Table::new(
        "rbm_metrics.csv",
        &[
            "experiment",
            "sampler",
            "seed",
            "alpha",
            "acceptance",
            "coords_per_step",
            "ess_energy",
            "tv",
            "mmd2",
            "threshold_95",
            "p_value",
            "below_threshold",
        ],
    );
    let mut plot = plot_table("rbm_mmd_plot.csv");
    let mut out = Outcome::default();
    for (job, (wall, r)) in jobs.iter().zip(&results) {
        let ess_ok = r.as_ref().map(|(c, _, _)| c.ess_energy).map_err(Clone::clone);
        out.runs.push(record(job, Some(job.seed), *wall, &ess_ok, r.as_ref().ok().and_then(|(c, _, _)| ess_per_sec(c))));
        let Ok((c, test, curve)) = r else { continue };
        metrics.push(vec![
            cfg.id(),
            job.run.label.clone(),
            job.seed.to_string(),
            alpha_field(job.run.alpha),
            num(c.stats.acceptance_rate),
            num(c.stats.coords_per_step),
            opt_num(c.ess_energy),
            opt_num(c.tv),
            num(test.statistic),
            num(test.threshold_95),
            num(test.p_value),
            (!test.rejects_at_5_percent()).to_string(),
        ]);
        for (step, v) in curve {
            plot.push(vec![step.to_string(), num(*v), series(&job.run.label, job.run.alpha, Some(job.seed))]);
        }
    }
    out.summary.insert("truth".into(), json!(if exact.is_some() { "exact" } else { "none" }));
    out.tables = vec![metrics, plot];
    Ok(out)
}

fn stochastic(cfg: &ExperimentConfig, model: &BuiltModel) -> Result<Outcome> {
    if model.domain().kind() != DomainKind::Binary01 {
        return Err(Error::Unsupported("stochastic_probe needs a binary domain".into()));
    }
    let sweep = cfg.sweep();
    let noise = sweep.noise.unwrap_or_default();
    let draws = sweep.draws.unwrap_or(1000);
    let jobs = jobs(cfg);
    let batch_sizes: Vec<usize> = cfg.samplers.iter().map(|s| s.batch_size.unwrap_or(1)).collect();
    let results = run_all(&jobs, |job| {
        let batch = MinibatchSpec {
            batch_size: batch_sizes[(job.stream >> 20) as usize],
        };
        let alpha = job.run.alpha.ok_or_else(|| Error::InvalidConfig("missing stepsize".into()))?;
        let mut rng = chain_rng(job.seed, job.stream);
        let state = random_state(model.domain(), &mut rng);
        noise
            .iter()
            .map(|&sigma| {
                let noisy = AdditiveNoiseModel::new(model.clone(), sigma)?;
                stochastic_proposal_bias_probe(&noisy, &state, alpha, draws, batch, &mut rng)
            })
            .collect::<Result<Vec<_>>>()
    });
    let mut table = Table::new(
        "stochastic_probe.csv",
        &[
            "experiment",
            "sampler",
            "seed",
            "alpha",
            "noise",
            "coordinate",
            "distance",
            "bound",
            "sigma_hat",
            "lipschitz",
            "within_bound",
        ],
    );
    let mut plot = plot_table("stochastic_plot.csv");
    let mut out = Outcome::default();
    let mut all_within = true;
    let mut zero_exact = true;
    for (job, (wall, r)) in jobs.iter().zip(&results) {
        out.runs.push(record(job, Some(job.seed), *wall, &r.as_ref().map(|_| None).map_err(Clone::clone), None));
        let Ok(probes) = r else { continue };
        for (sigma, p) in noise.iter().zip(probes) {
            all_within &= p.within_bound();
            if *sigma == 0.0 {
                zero_exact &= p.distance.iter().all(|d| *d == 0.0);
            }
            for i in 0..p.distance.len() {
                table.push(vec![
                    cfg.id(),
                    job.run.label.clone(),
                    job.seed.to_string(),
                    alpha_field(job.run.alpha),
                    num(*sigma),
                    i.to_string(),
                    num(p.distance[i]),
                    num(p.bound[i]),
                    num(p.sigma[i]),
                    num(p.lipschitz[i]),
                    (p.distance[i] <= p.bound[i]).to_string(),
                ]);
            }
            let worst = p.distance.iter().copied().fold(0.0, f64::max);
            plot.push(vec![num(*sigma), num(worst), series(&job.run.label, job.run.alpha, Some(job.seed))]);
        }
    }
    out.summary.insert("all_within_bound".into(), json!(all_within));
    out.summary.insert("zero_noise_exact".into(), json!(zero_exact));
    out.tables = vec![table, plot];
    Ok(out)
}

/// Experiment kinds with their descriptions and default config files.
pub fn list_experiments() -> Vec<(ExperimentKind, &'static str, &'static str)> {
    ExperimentKind::ALL
        .iter()
        .map(|k| (*k, k.description(), k.default_config()))
        .collect()
}

/// Directory of the bundled default configs.
pub fn bundled_config_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/configs"))
}
