//! `meixnernet` command-line driver.
//!
//! Every stdout line starts with a fixed prefix word followed by
//! space-separated `key=value` fields (see `docs/cli.md`). Logs go to stderr.
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use meixnernet_core::checkpoint::save_checkpoint;
use meixnernet_core::data::{load_bundle, save_bundle, synthetic_two_cluster, GraphBundle, SyntheticSpec};
use meixnernet_core::error::Error as CoreError;
use meixnernet_core::model::ModelKind;
use meixnernet_core::optim::AdamConfig;
use meixnernet_core::poly::meixner_coeffs_f64;
use meixnernet_core::spectral::{spectrum_summary, SpectrumMethod};
use meixnernet_core::train::{
    ablate_hidden, ablate_k, train_model, write_finals_csv, write_series_csv, TrainConfig, TrainReport,
};
use meixnernet_core::verify::{run_suite, Suite, VerifyOptions};
use rayon::prelude::*;
use serde_json::json;

#[derive(Debug, Parser)]
#[command(
    name = "meixnernet",
    version,
    about = "Spectral GNNs with learnable Meixner polynomial filters"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one model (or one per seed) and write CSVs and checkpoints.
    Train(TrainArgs),
    /// Sweep K or the hidden width for both models.
    Ablate(AblateArgs),
    /// Run the built-in oracle suites.
    Verify(VerifyArgs),
    /// Print bundle statistics, spectrum extremes and coefficient tables.
    Inspect(InspectArgs),
    /// Write a synthetic two-cluster bundle.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Model {
    Meixner,
    Cheby,
}

impl From<Model> for ModelKind {
    fn from(m: Model) -> Self {
        match m {
            Model::Meixner => ModelKind::Meixner,
            Model::Cheby => ModelKind::Cheby,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

/// Options shared by `train` and `ablate`.
#[derive(Debug, Args)]
struct RunArgs {
    /// Bundle directory.
    #[arg(long)]
    dataset: PathBuf,
    /// Number of polynomial terms.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
    hidden: u64,
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    epochs: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also write finals.json.
    #[arg(long)]
    json: bool,
    /// Drop the learnable gain/bias of the per-basis normalization.
    #[arg(long)]
    no_layernorm_affine: bool,
    /// Apply weight decay to the raw (β, c) parameters too.
    #[arg(long)]
    decay_meixner_params: bool,
    /// Per-basis normalization of the Meixner recurrence.
    #[arg(long, value_enum, default_value_t = Toggle::On)]
    normalize: Toggle,
}

impl RunArgs {
    fn config(&self, model: ModelKind, seed: u64) -> TrainConfig {
        TrainConfig {
            model,
            k: self.k as usize,
            hidden: self.hidden as usize,
            epochs: self.epochs as usize,
            seed,
            adam: AdamConfig {
                decay_meixner_params: self.decay_meixner_params,
                ..AdamConfig::default()
            },
            normalize: self.normalize == Toggle::On,
            layer_norm_affine: !self.no_layernorm_affine,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_enum, default_value_t = Model::Meixner)]
    model: Model,
    /// Comma-separated seeds, run in parallel; overrides --seed.
    #[arg(long, value_delimiter = ',', num_args = 1.., conflicts_with = "seed")]
    seeds: Vec<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Sweep {
    K,
    Hidden,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_enum)]
    sweep: Sweep,
    /// Comma-separated values of the swept quantity.
    #[arg(long)]
    values: String,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Run only these suites (repeatable); default is all.
    #[arg(long, value_parser = |s: &str| s.parse::<Suite>())]
    suite: Vec<Suite>,
    /// Test hook: offset added to every b_k of the recurrence under test.
    #[arg(long, hide = true, default_value_t = 0.0)]
    perturb_coeffs: f64,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Shape parameter β for the coefficient table.
    #[arg(long, requires = "c")]
    beta: Option<f64>,
    /// Shape parameter c for the coefficient table.
    #[arg(long, requires = "beta")]
    c: Option<f64>,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    n_per_class: usize,
    #[arg(long, default_value_t = 16)]
    features: usize,
    #[arg(long, default_value_t = 0.1)]
    p_in: f64,
    #[arg(long, default_value_t = 0.01)]
    p_out: f64,
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    #[arg(long, default_value_t = 1.0)]
    signal: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

/// A bad flag combination found after clap's own parsing.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Ablate(a) => cmd_ablate(&a),
        Command::Verify(a) => cmd_verify(&a),
        Command::Inspect(a) => cmd_inspect(&a),
        Command::Synth(a) => cmd_synth(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let is_usage = e.downcast_ref::<Usage>().is_some()
                || matches!(e.downcast_ref::<CoreError>(), Some(CoreError::InvalidArgument(_)));
            ExitCode::from(if is_usage { 2 } else { 1 })
        }
    }
}

fn load(path: &Path) -> Result<GraphBundle> {
    load_bundle(path).with_context(|| format!("loading bundle {}", path.display()))
}

/// Shortest round-trip form, switching to exponent notation for tiny or huge
/// magnitudes.
fn num(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && !(1e-4..1e16).contains(&a) {
        format!("{x:e}")
    } else {
        x.to_string()
    }
}

fn fmt_list(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|&x| num(x)).collect();
    format!("[{}]", items.join(","))
}

fn print_result(r: &TrainReport) {
    let c = &r.config;
    println!(
        "result model={} dataset={} K={} hidden={} seed={} test_acc={} val_acc={} train_acc={} wall_ms={}",
        c.model, r.dataset, c.k, c.hidden, c.seed, r.test_acc, r.final_val_acc, r.train_acc, r.wall_ms
    );
    for (i, (beta, cc)) in r.learned.iter().enumerate() {
        println!(
            "learned model={} seed={} layer={} beta={beta} c={cc}",
            c.model,
            c.seed,
            i + 1
        );
    }
    for w in &r.warnings {
        log::warn!("{} seed {}: {w}", c.model, c.seed);
    }
}

fn finals_json(reports: &[TrainReport]) -> serde_json::Value {
    let rows: Vec<serde_json::Value> = reports
        .iter()
        .map(|r| {
            let c = &r.config;
            let p = |layer: usize, i: usize| r.learned.get(layer).map(|pair| if i == 0 { pair.0 } else { pair.1 });
            json!({
                "model": c.model.name(),
                "dataset": r.dataset,
                "K": c.k,
                "hidden": c.hidden,
                "seed": c.seed,
                "test_acc": r.test_acc,
                "beta_l1": p(0, 0),
                "c_l1": p(0, 1),
                "beta_l2": p(1, 0),
                "c_l2": p(1, 1),
                "wall_ms": r.wall_ms as u64,
            })
        })
        .collect();
    serde_json::Value::Array(rows)
}

fn write_outputs(out: &Path, reports: &[TrainReport], json: bool) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let series = out.join("series.csv");
    write_series_csv(BufWriter::new(File::create(&series)?), reports)?;
    println!("wrote path={}", series.display());
    let finals = out.join("finals.csv");
    write_finals_csv(BufWriter::new(File::create(&finals)?), reports)?;
    println!("wrote path={}", finals.display());
    if json {
        let path = out.join("finals.json");
        fs::write(&path, serde_json::to_string_pretty(&finals_json(reports))? + "\n")?;
        println!("wrote path={}", path.display());
    }
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<ExitCode> {
    let seeds = if a.seeds.is_empty() {
        vec![a.run.seed]
    } else {
        a.seeds.clone()
    };
    let bundle = load(&a.run.dataset)?;
    let configs: Vec<TrainConfig> = seeds.iter().map(|&s| a.run.config(a.model.into(), s)).collect();
    log::info!(
        "training {} run(s) on {} ({} nodes)",
        configs.len(),
        bundle.meta.name,
        bundle.meta.num_nodes
    );
    let outcomes = configs
        .par_iter()
        .map(|c| train_model(c, &bundle))
        .collect::<std::result::Result<Vec<_>, _>>()?;

    fs::create_dir_all(&a.run.out).with_context(|| format!("creating {}", a.run.out.display()))?;
    for o in &outcomes {
        let path = a.run.out.join(format!("checkpoint-seed{}.json", o.report.config.seed));
        save_checkpoint(&o.net, Some(&o.rng), &path)?;
        println!("wrote path={}", path.display());
    }
    let reports: Vec<TrainReport> = outcomes.into_iter().map(|o| o.report).collect();
    write_outputs(&a.run.out, &reports, a.run.json)?;
    reports.iter().for_each(print_result);
    Ok(ExitCode::SUCCESS)
}

fn cmd_ablate(a: &AblateArgs) -> Result<ExitCode> {
    let values: Vec<usize> = a
        .values
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| usage(format!("bad value `{s}` in --values")))
        })
        .collect::<Result<_>>()?;
    if values.is_empty() {
        return Err(usage("--values is empty"));
    }
    if values.contains(&0) {
        return Err(usage("--values entries must be at least 1"));
    }
    let bundle = load(&a.run.dataset)?;
    let base = a.run.config(ModelKind::Meixner, a.run.seed);
    let reports = match a.sweep {
        Sweep::K => ablate_k(&base, &bundle, &values)?,
        Sweep::Hidden => ablate_hidden(&base, &bundle, &values)?,
    };
    write_outputs(&a.run.out, &reports, a.run.json)?;
    reports.iter().for_each(print_result);
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(a: &VerifyArgs) -> Result<ExitCode> {
    let suites: Vec<Suite> = if a.suite.is_empty() {
        Suite::ALL.to_vec()
    } else {
        a.suite.clone()
    };
    let opts = VerifyOptions {
        coeff_perturbation: a.perturb_coeffs,
    };
    let mut all = true;
    for s in suites {
        let r = run_suite(s, &opts)?;
        all &= r.passed;
        println!(
            "suite name={} status={} worst={:e}",
            s.name(),
            if r.passed { "pass" } else { "fail" },
            r.worst
        );
        log::info!("{}: {}", s.name(), r.detail);
    }
    Ok(if all { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_inspect(a: &InspectArgs) -> Result<ExitCode> {
    if a.dataset.is_none() && a.beta.is_none() {
        return Err(usage("inspect needs --dataset and/or --beta/--c"));
    }
    if let (Some(beta), Some(c)) = (a.beta, a.c) {
        if !(beta > 0.0 && c > 0.0 && c < 1.0) {
            return Err(usage(format!("need beta > 0 and 0 < c < 1, got beta={beta} c={c}")));
        }
    }
    if let Some(dir) = &a.dataset {
        let b = load(dir)?;
        let deg = b.graph.degrees();
        let isolated = deg.iter().filter(|&&d| d == 0).count();
        let mean_deg = deg.iter().sum::<usize>() as f64 / deg.len().max(1) as f64;
        println!(
            "stats name={} nodes={} edges={} features={} classes={} isolated={} mean_degree={} train={} val={} test={}",
            b.meta.name,
            b.meta.num_nodes,
            b.graph.edges().len(),
            b.meta.num_features,
            b.meta.num_classes,
            isolated,
            mean_deg,
            b.masks.train.len(),
            b.masks.val.len(),
            b.masks.test.len()
        );
        for kind in [ModelKind::Meixner, ModelKind::Cheby] {
            let s = spectrum_summary(&kind.operator(&b.graph)?)?;
            let (method, min) = match s.method {
                SpectrumMethod::Dense => ("dense", s.min.map_or("na".into(), num)),
                SpectrumMethod::PowerIteration => ("power", "na".to_string()),
            };
            println!("spectrum operator={kind} method={method} min={min} max={}", num(s.max));
        }
    }
    if let (Some(beta), Some(c)) = (a.beta, a.c) {
        let t = meixner_coeffs_f64(beta, c, a.k as usize)?;
        println!(
            "coeffs beta={beta} shape_c={c} K={} b={} c={}",
            a.k,
            fmt_list(&t.b),
            fmt_list(&t.cc)
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_synth(a: &SynthArgs) -> Result<ExitCode> {
    let spec = SyntheticSpec {
        n_per_class: a.n_per_class,
        num_features: a.features,
        p_in: a.p_in,
        p_out: a.p_out,
        noise: a.noise,
        signal: a.signal,
        seed: a.seed,
    };
    let bundle = synthetic_two_cluster(&spec)?;
    save_bundle(&bundle, &a.out)?;
    println!(
        "wrote path={} nodes={} edges={}",
        a.out.display(),
        bundle.meta.num_nodes,
        bundle.graph.edges().len()
    );
    Ok(ExitCode::SUCCESS)
}
