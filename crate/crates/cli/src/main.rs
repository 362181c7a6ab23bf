//! `bqnes` — run ensemble-search experiments on tabulated benchmarks.
//!
//! Exit codes: 0 success, 1 runtime or partial failure, 2 configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bqnes::experiment::{
    compare_surrogates, find_results, load_result, report, run_with_table, BenchmarkSource, ExperimentConfig, Method,
    SurrogateEvalConfig,
};
use bqnes::{BenchmarkTable, Error, SpaceConfig, SyntheticGenConfig};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "bqnes", version, about = "Bayesian-quadrature neural ensemble search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic benchmark table to disk.
    GenerateBenchmark {
        #[command(flatten)]
        gen: GenArgs,
        /// Destination file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one or more methods with seeded repeats.
    Run(RunArgs),
    /// Summarise result files (or directories containing them).
    Report {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// Also write the table as CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Held-out RMSE/NLPD of WSABI-L versus a GP on scaled likelihoods.
    EvaluateSurrogate {
        #[arg(long, conflicts_with = "generate")]
        benchmark: Option<PathBuf>,
        #[arg(long)]
        generate: bool,
        #[command(flatten)]
        gen: GenArgs,
        /// Training architectures: `acquired` (a BQ search's candidates) or `random`.
        #[arg(long, default_value = "acquired")]
        train_set: String,
        #[arg(long, default_value_t = 150)]
        n_train: usize,
        #[arg(long, default_value_t = 25)]
        stride: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Clone)]
struct GenArgs {
    /// Space preset: nats, slimmable, or cell:<nodes>:<ops>.
    #[arg(long, default_value = "cell:4:4")]
    gen_space: String,
    #[arg(long, default_value_t = 100)]
    gen_val: usize,
    #[arg(long, default_value_t = 100)]
    gen_test: usize,
    #[arg(long, default_value_t = 10)]
    gen_classes: usize,
    #[arg(long, default_value_t = 3)]
    gen_modes: usize,
    #[arg(long, default_value_t = 0.5)]
    gen_sharpness: f64,
    #[arg(long, default_value_t = 0.2)]
    gen_label_noise: f64,
    #[arg(long, default_value_t = 0)]
    gen_seed: u64,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated method list.
    #[arg(long, value_delimiter = ',')]
    method: Vec<String>,
    /// Base seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, conflicts_with = "generate")]
    benchmark: Option<PathBuf>,
    /// Use a synthetic benchmark built from the --gen-* flags.
    #[arg(long)]
    generate: bool,
    #[command(flatten)]
    gen: GenArgs,
    /// Comma-separated ensemble sizes.
    #[arg(long, value_delimiter = ',')]
    m_sizes: Vec<usize>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::KernelKind(_) | Error::InvalidArchitecture(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn space_preset(s: &str) -> Result<SpaceConfig, Failure> {
    const OPS: [&str; 8] = ["op0", "op1", "op2", "op3", "op4", "op5", "op6", "op7"];
    match s {
        "nats" => Ok(SpaceConfig::nats()),
        "slimmable" => Ok(SpaceConfig::slimmable()),
        _ => {
            let parts: Vec<&str> = s.split(':').collect();
            let parsed = match parts.as_slice() {
                ["cell", n, k] => n.parse::<usize>().ok().zip(k.parse::<usize>().ok()),
                _ => None,
            };
            match parsed {
                Some((n, k)) if n >= 2 && (1..=OPS.len()).contains(&k) => Ok(SpaceConfig::cell_with_ops(n, &OPS[..k])),
                _ => Err(Failure::Config(format!(
                    "bad --gen-space {s:?}; expected nats, slimmable or cell:<nodes>:<1-8 ops>"
                ))),
            }
        }
    }
}

fn gen_config(g: &GenArgs) -> Result<SyntheticGenConfig, Failure> {
    Ok(SyntheticGenConfig {
        space: space_preset(&g.gen_space)?,
        n_val: g.gen_val,
        n_test: g.gen_test,
        n_classes: g.gen_classes,
        n_modes: g.gen_modes,
        peak_sharpness: g.gen_sharpness,
        label_noise: g.gen_label_noise,
        seed: g.gen_seed,
    })
}

fn read_json(path: &Path) -> Result<Value, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

/// Merges flags into the config document and returns one config per method.
fn build_configs(args: &RunArgs) -> Result<Vec<ExperimentConfig>, Failure> {
    let mut doc = match &args.config {
        Some(p) => read_json(p)?,
        None => json!({}),
    };
    let obj = doc
        .as_object_mut()
        .ok_or_else(|| Failure::Config("config must be a JSON object".into()))?;
    if let Some(p) = &args.benchmark {
        obj.insert("benchmark".into(), json!(BenchmarkSource::Path(p.clone())));
    } else if args.generate {
        obj.insert("benchmark".into(), json!(BenchmarkSource::Synthetic(gen_config(&args.gen)?)));
    }
    if let Some(s) = args.seed {
        obj.insert("base_seed".into(), json!(s));
    }
    if let Some(r) = args.repeats {
        obj.insert("repeats".into(), json!(r));
    }
    if let Some(o) = &args.out {
        obj.insert("output_dir".into(), json!(o));
    }
    if !args.m_sizes.is_empty() {
        obj.insert("ensemble_sizes".into(), json!(args.m_sizes));
    }
    if !obj.contains_key("benchmark") {
        return Err(Failure::Config("no benchmark: pass --benchmark, --generate or a config file".into()));
    }
    let methods: Vec<String> = if args.method.is_empty() {
        match obj.get("method") {
            Some(Value::String(m)) => vec![m.clone()],
            _ => return Err(Failure::Config("no method: pass --method or set it in the config".into())),
        }
    } else {
        args.method.clone()
    };
    methods
        .iter()
        .map(|m| {
            let method: Method = m.trim().parse()?;
            let mut d = doc.clone();
            d["method"] = json!(method);
            let cfg: ExperimentConfig =
                serde_json::from_value(d).map_err(|e| Failure::Config(format!("invalid config: {e}")))?;
            cfg.validate()?;
            Ok(cfg)
        })
        .collect()
}

fn load_table(benchmark: &Option<PathBuf>, generate: bool, gen: &GenArgs) -> Result<BenchmarkTable, Failure> {
    let source = match benchmark {
        Some(p) => BenchmarkSource::Path(p.clone()),
        None if generate => BenchmarkSource::Synthetic(gen_config(gen)?),
        None => return Err(Failure::Config("pass --benchmark or --generate".into())),
    };
    Ok(source.load()?)
}

fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    let configs = build_configs(args)?;
    // every config comes from the same document, so they share one benchmark
    let table = configs[0].benchmark.load()?;
    let mut failed = 0usize;
    let mut succeeded = 0usize;
    for cfg in &configs {
        let summary = run_with_table(&table, cfg)?;
        for (seed, msg) in &summary.failures {
            eprintln!("{} seed {seed}: {msg}", cfg.method);
        }
        failed += summary.failures.len();
        succeeded += summary.results.len();
        println!(
            "{}: {} repeat(s) ok, {} failed -> {}",
            cfg.method,
            summary.results.len(),
            summary.failures.len(),
            cfg.output_dir.join(cfg.method.name()).display()
        );
    }
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} of {} repeats failed", failed + succeeded)));
    }
    Ok(())
}

fn cmd_report(paths: &[PathBuf], csv: Option<&Path>) -> Result<(), Failure> {
    let mut results = Vec::new();
    for p in paths {
        if !p.exists() {
            return Err(Failure::Config(format!("{} does not exist", p.display())));
        }
        for f in find_results(p)? {
            results.push(load_result(&f)?);
        }
    }
    let rep = report(&results)?;
    print!("{}", rep.to_text());
    if let Some(path) = csv {
        std::fs::write(path, rep.to_csv()).map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenerateBenchmark { gen, out } => {
            let table = bqnes::benchmark::generate_synthetic(&gen_config(&gen)?)?;
            table.save(&out)?;
            println!("{} architectures, fingerprint {}", table.len(), table.fingerprint());
            Ok(())
        }
        Command::Run(args) => cmd_run(&args),
        Command::Report { paths, csv } => cmd_report(&paths, csv.as_deref()),
        Command::EvaluateSurrogate {
            benchmark,
            generate,
            gen,
            train_set,
            n_train,
            stride,
            seed,
        } => {
            let table = load_table(&benchmark, generate, &gen)?;
            let cfg = SurrogateEvalConfig {
                train_set: train_set.parse()?,
                n_train,
                stride,
                seed,
                ..Default::default()
            };
            let cmp = compare_surrogates(&table, &cfg)?;
            println!("{}", serde_json::to_string_pretty(&cmp).expect("serialisable"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
