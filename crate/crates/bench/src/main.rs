use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use bmdal_bench::data::{load_csv, synthetic_friedman, Dataset};
use bmdal_bench::fetch::{default_cache_dir, fetch_dataset};
use bmdal_bench::report::emit_report;
use bmdal_bench::run::{run_bmal, BmalRunConfig};
use bmdal_core::model::Activation;
use bmdal_core::selection::{Method, Mode};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bmal", about = "Batch active learning benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the active learning loop on one dataset and write a JSON result.
    Run(RunArgs),
    /// Aggregate JSON results into CSV learning curves and tables.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Download a CSV into the cache and print its path.
    Fetch {
        #[arg(long)]
        url: String,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    /// CSV path or `synthetic:friedman:n=<int>,noise=<float>`.
    #[arg(long)]
    data: String,
    #[arg(long, default_value = "y")]
    target: String,
    #[arg(long, default_value = "lcmd")]
    method: Method,
    #[arg(long, default_value = "tp")]
    mode: Mode,
    #[arg(long, default_value = "grad->rp(512)")]
    kernel: String,
    #[arg(long, default_value_t = 1e-6)]
    sigma2: f64,
    #[arg(long = "init-train", default_value_t = 256)]
    init_train: usize,
    #[arg(long, default_value_t = 1024)]
    valid: usize,
    /// `<count>x<size>`, e.g. `16x256`.
    #[arg(long, default_value = "16x256")]
    batches: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "relu")]
    activation: Activation,
    /// Hidden layer widths, comma separated.
    #[arg(long, default_value = "512,512", value_delimiter = ',')]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 256)]
    epochs: usize,
    #[arg(long)]
    out: PathBuf,
}

fn parse_batches(s: &str) -> Result<Vec<usize>> {
    let (count, size) = s.split_once('x').context("batches must look like <count>x<size>")?;
    Ok(vec![size.trim().parse()?; count.trim().parse()?])
}

fn load_data(spec: &str, target: &str, seed: u64) -> Result<Dataset> {
    if let Some(params) = spec.strip_prefix("synthetic:friedman:") {
        let (mut n, mut noise) = (None, None);
        for kv in params.split(',') {
            match kv.split_once('=') {
                Some(("n", v)) => n = Some(v.parse::<usize>()?),
                Some(("noise", v)) => noise = Some(v.parse::<f64>()?),
                _ => bail!("unknown synthetic parameter '{kv}'"),
            }
        }
        let n = n.context("synthetic data needs n=<int>")?;
        return Ok(synthetic_friedman(n, noise.unwrap_or(0.0), seed)?);
    }
    if spec.starts_with("synthetic:") {
        bail!("unknown synthetic dataset '{spec}'");
    }
    Ok(load_csv(&PathBuf::from(spec), target)?)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(a) => {
            let data = load_data(&a.data, &a.target, a.seed)?;
            let cfg = BmalRunConfig {
                kernel: a.kernel,
                method: a.method,
                mode: a.mode,
                sigma2: a.sigma2,
                batch_sizes: parse_batches(&a.batches)?,
                n_train_init: a.init_train,
                n_valid: a.valid,
                hidden: a.hidden,
                activation: a.activation,
                epochs: a.epochs,
                seed: a.seed,
            };
            let result = run_bmal(&data, &cfg)?;
            if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(&a.out, serde_json::to_string_pretty(&result)?)?;
            let last = result.steps.last().expect("at least one step");
            println!("final n_train {} rmse {:.5} mae {:.5}", last.n_train, last.metrics.rmse, last.metrics.mae);
        }
        Command::Report { input, out } => {
            for p in emit_report(&input, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Fetch { url, cache } => {
            let dir = cache.unwrap_or_else(default_cache_dir);
            println!("{}", fetch_dataset(&url, &dir)?.display());
        }
    }
    Ok(())
}
