//! End-to-end experiment runs, result persistence and reporting.
//!
//! Results layout under the output directory:
//!
//! ```text
//! <out>/<method>/<seed>/result.json   one repeat, including wall-clock time
//! <out>/<method>/<seed>/trace.jsonl   one line per oracle query
//! <out>/summary.csv                   every result under <out>, one row per repeat × M
//! ```
//!
//! Everything except the wall-clock field is a pure function of the config.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archspace::ArchitectureId;
use crate::benchmark::{generate_synthetic, BenchmarkTable, PredictionMatrix, SyntheticGenConfig};
use crate::ensemble::{beam_search, optimize_stacking, select_rs, select_ws, StackingConfig, WeightedEnsemble};
use crate::error::{Error, Result};
use crate::kernels::{Kernel, KernelHyperparams, KernelKind};
use crate::metrics::{evaluate, mixture, EvalReport, DEFAULT_ECE_BINS};
use crate::quadrature::{posterior_measure, EvidenceEstimate};
use crate::recombination::posterior_recombination;
use crate::rng::{mix, seeded, stream};
use crate::search::{
    candidate_evidence, select_candidates_bq, select_candidates_ei, select_candidates_random, select_candidates_re,
    BqConfig, CandidateSet, ReConfig, SearchBudget, TraceRecord,
};
use crate::surrogate::{evaluate_on, fit_scaled_gp, fit_wsabi_optimized, protocol_test_set, Domain, HyperSearch, Surrogate};

/// A candidate-selection strategy paired with an ensemble-selection rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// Uncertainty sampling, then posterior recombination.
    #[serde(rename = "bq-r")]
    BqR,
    /// Uncertainty sampling, then re-weighted stacking.
    #[serde(rename = "bq-s")]
    BqS,
    /// Regularised evolution, then equal-weight beam search.
    #[serde(rename = "nes-re")]
    NesRe,
    /// M prior samples, equally weighted.
    #[serde(rename = "random")]
    Random,
    #[serde(rename = "ei-rs")]
    EiRs,
    #[serde(rename = "us-ws")]
    UsWs,
    #[serde(rename = "us-bs")]
    UsBs,
    #[serde(rename = "re-rs")]
    ReRs,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::BqR,
        Method::BqS,
        Method::NesRe,
        Method::Random,
        Method::EiRs,
        Method::UsWs,
        Method::UsBs,
        Method::ReRs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::BqR => "bq-r",
            Method::BqS => "bq-s",
            Method::NesRe => "nes-re",
            Method::Random => "random",
            Method::EiRs => "ei-rs",
            Method::UsWs => "us-ws",
            Method::UsBs => "us-bs",
            Method::ReRs => "re-rs",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::Config(format!("unknown method {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkSource {
    Path(PathBuf),
    Synthetic(SyntheticGenConfig),
}

impl BenchmarkSource {
    pub fn load(&self) -> Result<BenchmarkTable> {
        match self {
            BenchmarkSource::Path(p) => BenchmarkTable::load(p),
            BenchmarkSource::Synthetic(cfg) => generate_synthetic(cfg),
        }
    }
}

fn default_sizes() -> Vec<usize> {
    vec![3, 5, 10]
}

fn default_repeats() -> usize {
    10
}

fn default_bins() -> usize {
    DEFAULT_ECE_BINS
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub benchmark: BenchmarkSource,
    pub method: Method,
    #[serde(default)]
    pub budget: SearchBudget,
    #[serde(default = "default_sizes")]
    pub ensemble_sizes: Vec<usize>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub bq: BqConfig,
    #[serde(default)]
    pub re: ReConfig,
    #[serde(default)]
    pub stacking: StackingConfig,
    #[serde(default = "default_bins")]
    pub ece_bins: usize,
}

impl ExperimentConfig {
    pub fn new(benchmark: BenchmarkSource, method: Method) -> Self {
        ExperimentConfig {
            benchmark,
            method,
            budget: SearchBudget::default(),
            ensemble_sizes: default_sizes(),
            repeats: default_repeats(),
            base_seed: 0,
            output_dir: default_out(),
            bq: BqConfig::default(),
            re: ReConfig::default(),
            stacking: StackingConfig::default(),
            ece_bins: DEFAULT_ECE_BINS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be ≥ 1".into()));
        }
        if self.ensemble_sizes.is_empty() || self.ensemble_sizes.contains(&0) {
            return Err(Error::Config("ensemble sizes must be a non-empty list of positive counts".into()));
        }
        if let Some(&m) = self.ensemble_sizes.iter().find(|&&m| m > self.budget.n_total) {
            return Err(Error::Config(format!(
                "ensemble size {m} exceeds the candidate budget {}",
                self.budget.n_total
            )));
        }
        if self.ece_bins == 0 {
            return Err(Error::Config("ece_bins must be ≥ 1".into()));
        }
        if self.method == Method::NesRe {
            self.re.validate(self.budget.n_total)?;
        }
        self.budget.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub m: usize,
    pub ensemble: WeightedEnsemble,
    pub validation: EvalReport,
    pub test: EvalReport,
}

/// One repeat of one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub method: Method,
    pub seed: u64,
    pub benchmark_fingerprint: String,
    pub candidates: CandidateSet,
    pub evidence: Option<EvidenceEstimate>,
    pub kernel: Option<Kernel>,
    pub ensembles: Vec<EnsembleResult>,
    pub notes: Vec<String>,
    pub wall_clock_seconds: f64,
}

/// Outcome of [`run`].
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub results: Vec<RunResult>,
    pub failures: Vec<(u64, String)>,
    pub summary_csv: PathBuf,
}

impl RunSummary {
    pub fn all_failed(&self) -> bool {
        self.results.is_empty()
    }
}

fn member_preds<'a>(table: &'a BenchmarkTable, ids: &[ArchitectureId], test: bool) -> Result<Vec<&'a PredictionMatrix>> {
    ids.iter()
        .map(|id| {
            let r = table.peek(id)?;
            Ok(if test { &r.test_predictions } else { &r.val_predictions })
        })
        .collect()
}

fn score(table: &BenchmarkTable, ens: &WeightedEnsemble, bins: usize) -> Result<(EvalReport, EvalReport)> {
    let val = mixture(&ens.weights, &member_preds(table, &ens.members, false)?)?;
    let test = mixture(&ens.weights, &member_preds(table, &ens.members, true)?)?;
    Ok((
        evaluate(&val, table.labels_val(), bins)?,
        evaluate(&test, table.labels_test(), bins)?,
    ))
}

/// Runs one repeat with the given seed. Pure apart from the wall-clock field.
pub fn run_repeat(table: &BenchmarkTable, config: &ExperimentConfig, seed: u64) -> Result<(RunResult, Vec<TraceRecord>)> {
    let start = Instant::now();
    let budget = SearchBudget {
        seed,
        ..config.budget.clone()
    };
    let bq = BqConfig {
        kernel_mean: crate::quadrature::KernelMeanConfig {
            seed,
            ..config.bq.kernel_mean.clone()
        },
        hypers: HyperSearch {
            seed,
            ..config.bq.hypers.clone()
        },
        ..config.bq.clone()
    };
    let method = config.method;
    let outcome = match method {
        Method::BqR | Method::BqS | Method::UsWs | Method::UsBs => select_candidates_bq(table, &budget, &bq)?,
        Method::NesRe | Method::ReRs => select_candidates_re(table, &budget, &config.re)?,
        Method::EiRs => select_candidates_ei(table, &budget, &bq)?,
        Method::Random => select_candidates_random(table, &budget)?,
    };
    let cands = outcome.candidates;
    let mut notes = Vec::new();

    let needs_surrogate = !matches!(method, Method::NesRe | Method::Random | Method::UsBs);
    let fitted = if needs_surrogate || matches!(method, Method::UsBs) {
        Some(candidate_evidence(table, &cands, &bq, mix(seed, 1))?)
    } else {
        None
    };
    let gram = fitted.as_ref().map(|(state, _)| {
        let e = state.domain().embed(state.kernel(), &cands.archs).expect("candidates embed");
        state.kernel().gram_sym(&e)
    });

    let stacking = if matches!(method, Method::BqS | Method::EiRs | Method::ReRs | Method::UsWs) {
        let preds = member_preds(table, &cands.archs, false)?;
        Some(optimize_stacking(&preds, table.labels_val(), &config.stacking)?)
    } else {
        None
    };

    let mut ensembles = Vec::with_capacity(config.ensemble_sizes.len());
    for &m in &config.ensemble_sizes {
        let ens = match method {
            Method::BqR => {
                let prior = vec![table.space().prior_mass(); cands.len()];
                let measure = posterior_measure(&cands.archs, &cands.log_likelihoods, &prior)?;
                posterior_recombination(&measure, gram.as_ref().expect("surrogate fitted"), m)?.0
            }
            Method::BqS | Method::EiRs | Method::ReRs => select_rs(
                stacking.as_ref().expect("stacking weights"),
                &cands.archs,
                m,
                gram.as_ref().expect("surrogate fitted"),
            )?,
            Method::UsWs => select_ws(stacking.as_ref().expect("stacking weights"), &cands.archs, m)?,
            Method::UsBs | Method::NesRe => {
                let preds = member_preds(table, &cands.archs, false)?;
                beam_search(&preds, table.labels_val(), &cands.archs, m)?
            }
            Method::Random => WeightedEnsemble::equal(cands.archs[..m].to_vec())?,
        };
        let (validation, test) = score(table, &ens, config.ece_bins)?;
        ensembles.push(EnsembleResult {
            m,
            ensemble: ens,
            validation,
            test,
        });
    }
    if method == Method::Random {
        notes.push(format!(
            "ensemble uses the first M of {} prior draws; the full budget is charged for parity",
            cands.len()
        ));
    }
    if let Some((_, ev)) = &fitted {
        if ev.conditioning_warning {
            notes.push(format!("evidence variance was {:e} before clipping", ev.raw_sigma_z));
        }
    }
    let (evidence, kernel) = match fitted {
        Some((state, ev)) => (Some(ev), Some(state.kernel().clone())),
        None => (None, None),
    };
    Ok((
        RunResult {
            method,
            seed,
            benchmark_fingerprint: table.fingerprint(),
            candidates: cands,
            evidence,
            kernel,
            ensembles,
            notes,
            wall_clock_seconds: start.elapsed().as_secs_f64(),
        },
        outcome.trace,
    ))
}

fn write_repeat(dir: &Path, result: &RunResult, trace: &[TraceRecord]) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("result.json"), serde_json::to_vec_pretty(result)?)?;
    let mut f = std::io::BufWriter::new(fs::File::create(dir.join("trace.jsonl"))?);
    for rec in trace {
        serde_json::to_writer(&mut f, rec)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// Runs every repeat (seed = base_seed + r), persists results, and rewrites
/// the summary CSV. A failing repeat is recorded and the others continue.
pub fn run(config: &ExperimentConfig) -> Result<RunSummary> {
    config.validate()?;
    let table = config.benchmark.load()?;
    run_with_table(&table, config)
}

/// As [`run`], with an already-loaded benchmark.
pub fn run_with_table(table: &BenchmarkTable, config: &ExperimentConfig) -> Result<RunSummary> {
    config.validate()?;
    if config.budget.n_total as u128 > table.space().size() {
        return Err(Error::Config(format!(
            "budget of {} queries exceeds the {} architectures in the benchmark",
            config.budget.n_total,
            table.space().size()
        )));
    }
    let seeds: Vec<u64> = (0..config.repeats as u64).map(|r| config.base_seed + r).collect();
    let outcomes: Vec<(u64, Result<(RunResult, Vec<TraceRecord>)>)> = seeds
        .par_iter()
        .map(|&seed| (seed, run_repeat(table, config, seed)))
        .collect();
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (seed, outcome) in outcomes {
        match outcome {
            Ok((result, trace)) => {
                let dir = config.output_dir.join(config.method.name()).join(seed.to_string());
                write_repeat(&dir, &result, &trace)?;
                results.push(result);
            }
            Err(e) => failures.push((seed, e.to_string())),
        }
    }
    fs::create_dir_all(&config.output_dir)?;
    let summary_csv = config.output_dir.join("summary.csv");
    write_summary(&config.output_dir, &summary_csv)?;
    Ok(RunSummary {
        results,
        failures,
        summary_csv,
    })
}

/// All `result.json` files below `root`, sorted by path.
pub fn find_results(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    if root.is_file() {
        out.push(root.to_path_buf());
        return Ok(out);
    }
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n == "result.json") {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn load_result(path: &Path) -> Result<RunResult> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

const SUMMARY_HEADER: &str = "method,seed,m,accuracy,log_likelihood,ece,members,queries,log_evidence";

fn write_summary(root: &Path, path: &Path) -> Result<()> {
    let mut results = Vec::new();
    for p in find_results(root)? {
        results.push(load_result(&p)?);
    }
    results.sort_by_key(|a| (a.method, a.seed));
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in &results {
        let log_ev = r
            .evidence
            .as_ref()
            .and_then(|e| e.log_evidence())
            .map(|v| v.to_string())
            .unwrap_or_default();
        for e in &r.ensembles {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.method,
                r.seed,
                e.m,
                e.test.accuracy,
                e.test.log_likelihood,
                e.test.ece,
                e.ensemble.len(),
                r.candidates.queries,
                log_ev
            ));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Sample mean and standard error of the mean (`sd / √n`, zero for n = 1).
pub fn mean_sem(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    pub m: usize,
    pub repeats: usize,
    pub accuracy: (f64, f64),
    pub ece: (f64, f64),
    pub log_likelihood: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub benchmark_fingerprint: String,
    pub rows: Vec<ReportRow>,
}

/// Aggregates results into mean ± sem per method × M.
pub fn report(results: &[RunResult]) -> Result<Report> {
    let first = results
        .first()
        .ok_or_else(|| Error::Input("no results to report".into()))?;
    if let Some(bad) = results
        .iter()
        .find(|r| r.benchmark_fingerprint != first.benchmark_fingerprint)
    {
        return Err(Error::Incompatible(format!(
            "results come from different benchmarks ({} vs {})",
            first.benchmark_fingerprint, bad.benchmark_fingerprint
        )));
    }
    let mut groups: BTreeMap<(Method, usize), Vec<&EvalReport>> = BTreeMap::new();
    for r in results {
        for e in &r.ensembles {
            groups.entry((r.method, e.m)).or_default().push(&e.test);
        }
    }
    let rows = groups
        .into_iter()
        .map(|((method, m), reps)| {
            let col = |f: fn(&EvalReport) -> f64| mean_sem(&reps.iter().map(|r| f(r)).collect::<Vec<_>>());
            ReportRow {
                method,
                m,
                repeats: reps.len(),
                accuracy: col(|r| r.accuracy),
                ece: col(|r| r.ece),
                log_likelihood: col(|r| r.log_likelihood),
            }
        })
        .collect();
    Ok(Report {
        benchmark_fingerprint: first.benchmark_fingerprint.clone(),
        rows,
    })
}

impl Report {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "method,m,repeats,accuracy_mean,accuracy_sem,ece_mean,ece_sem,log_likelihood_mean,log_likelihood_sem\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.method,
                r.m,
                r.repeats,
                r.accuracy.0,
                r.accuracy.1,
                r.ece.0,
                r.ece.1,
                r.log_likelihood.0,
                r.log_likelihood.1
            ));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let header = ["method", "M", "n", "accuracy", "ECE", "log-likelihood"];
        let mut cells: Vec<[String; 6]> = vec![header.map(String::from)];
        for r in &self.rows {
            cells.push([
                r.method.to_string(),
                r.m.to_string(),
                r.repeats.to_string(),
                format!("{:.4} ± {:.4}", r.accuracy.0, r.accuracy.1),
                format!("{:.4} ± {:.4}", r.ece.0, r.ece.1),
                format!("{:.2} ± {:.2}", r.log_likelihood.0, r.log_likelihood.1),
            ]);
        }
        let widths: Vec<usize> = (0..6)
            .map(|c| cells.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &cells {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (s, w))| {
                    let pad = w - s.chars().count();
                    if c < 3 {
                        format!("{s}{}", " ".repeat(pad))
                    } else {
                        format!("{}{s}", " ".repeat(pad))
                    }
                })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

/// Held-out comparison of WSABI-L against a plain GP on scaled likelihoods.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateComparison {
    pub n_train: usize,
    pub n_test: usize,
    pub stride: usize,
    pub wsabi_rmse: f64,
    pub wsabi_nlpd: f64,
    pub gp_rmse: f64,
    pub gp_nlpd: f64,
    pub wsabi_kernel: Kernel,
    pub gp_kernel: Kernel,
}

/// Where the surrogate comparison gets its training architectures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainSet {
    /// The candidate set a BQ search with the same budget would query.
    Acquired,
    /// Uniform draws without replacement.
    Random,
}

impl FromStr for TrainSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "acquired" => Ok(TrainSet::Acquired),
            "random" => Ok(TrainSet::Random),
            _ => Err(Error::Config(format!("unknown training set {s:?}; expected acquired or random"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateEvalConfig {
    pub train_set: TrainSet,
    pub n_train: usize,
    pub stride: usize,
    pub seed: u64,
    pub kernel: Option<KernelKind>,
    pub initial: KernelHyperparams,
    pub hypers: HyperSearch,
}

impl Default for SurrogateEvalConfig {
    fn default() -> Self {
        SurrogateEvalConfig {
            train_set: TrainSet::Acquired,
            n_train: 150,
            stride: 25,
            seed: 0,
            kernel: None,
            initial: KernelHyperparams::default(),
            hypers: HyperSearch::default(),
        }
    }
}

/// Trains both surrogates on `n_train` architectures and scores them on
/// every `stride`-th architecture by validation rank.
pub fn compare_surrogates(table: &BenchmarkTable, config: &SurrogateEvalConfig) -> Result<SurrogateComparison> {
    let space = table.space();
    if config.n_train < 2 || (config.n_train as u128) > space.size() {
        return Err(Error::Config(format!(
            "n_train must lie in [2, {}], got {}",
            space.size(),
            config.n_train
        )));
    }
    let train: Vec<ArchitectureId> = match config.train_set {
        TrainSet::Random => {
            let mut rng = seeded(config.seed, stream::RANDOM_SEARCH);
            let all = space.enumerate()?;
            rand::seq::index::sample(&mut rng, all.len(), config.n_train)
                .into_iter()
                .map(|i| all[i].clone())
                .collect()
        }
        TrainSet::Acquired => {
            let budget = SearchBudget {
                n_init: config.n_train.min(SearchBudget::default().n_init),
                n_total: config.n_train,
                seed: config.seed,
                ..SearchBudget::default()
            };
            let bq = BqConfig {
                kernel: config.kernel,
                initial: config.initial.clone(),
                trace_evidence_every: 0,
                ..BqConfig::default()
            };
            select_candidates_bq(table, &budget, &bq)?.candidates.archs
        }
    };
    let ll: Vec<f64> = train
        .iter()
        .map(|id| Ok(table.peek(id)?.log_evidence_proxy))
        .collect::<Result<_>>()?;
    let domain = Domain::new(space.clone());
    let kind = config.kernel.unwrap_or_else(|| KernelKind::for_space(space.kind()));
    let hypers = HyperSearch {
        seed: config.seed,
        ..config.hypers.clone()
    };
    let wsabi = Surrogate::Wsabi(fit_wsabi_optimized(&domain, &train, &ll, kind, &config.initial, &hypers)?);
    let gp = fit_scaled_gp(&domain, &train, &ll, kind, &config.initial, &hypers)?;
    let test = protocol_test_set(table, config.stride, &train)?;
    let (wsabi_rmse, wsabi_nlpd) = evaluate_on(&wsabi, table, &test)?;
    let (gp_rmse, gp_nlpd) = evaluate_on(&gp, table, &test)?;
    let kernel_of = |s: &Surrogate| match s {
        Surrogate::Gp { state, .. } => state.kernel().clone(),
        Surrogate::Wsabi(w) => w.kernel().clone(),
    };
    Ok(SurrogateComparison {
        n_train: train.len(),
        n_test: test.len(),
        stride: config.stride,
        wsabi_rmse,
        wsabi_nlpd,
        gp_rmse,
        gp_nlpd,
        wsabi_kernel: kernel_of(&wsabi),
        gp_kernel: kernel_of(&gp),
    })
}
