use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ctvbench_core::config::{PipelineConfig, ProtocolChoice};
use ctvbench_core::{par, pipeline};

/// Cross-team dataset curation and evaluation benchmark.
#[derive(Parser, Debug)]
#[command(name = "ctvbench", version)]
struct Cli {
    /// Pipeline config (JSON). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the split, training and synthesis seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Caps the worker count. Output does not depend on it.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    threads: Option<u64>,

    /// Protocols to run; overrides the config.
    #[arg(long, global = true, value_parser = parse_protocol)]
    protocol: Option<ProtocolChoice>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic dataset into the dataset root.
    Synth,
    /// Scan the dataset root into catalog.jsonl.
    Catalog,
    /// Remove exact perceptual-hash duplicates.
    Dedup,
    /// Resize, crop and re-encode the curated images.
    Normalize,
    /// Write TOTO/LOTO split manifests.
    Split,
    /// Train the reference classifier on every fold.
    Train,
    /// Score prediction CSVs against the manifests.
    Eval {
        /// Directory of external prediction CSVs to score instead of train output.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Emit tables, heatmaps and curves from evaluated runs.
    Report,
    /// Run every stage in order.
    Pipeline,
}

fn parse_protocol(s: &str) -> Result<ProtocolChoice, String> {
    s.parse().map_err(|e: ctvbench_core::Error| e.to_string())
}

fn load_config(cli: &Cli) -> ctvbench_core::Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config = config.with_seed(seed);
    }
    if let Some(p) = cli.protocol {
        config.protocol = p;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli, config: &PipelineConfig) -> ctvbench_core::Result<()> {
    let protocols = config.protocol.protocols();
    match &cli.command {
        Command::Synth => {
            let s = pipeline::run_synth(config)?;
            println!("synth: {} images, {} planted duplicate groups (seed {})", s.images, s.planted_groups, s.seed);
        }
        Command::Catalog => {
            let c = pipeline::run_catalog(config)?;
            println!("catalog: {} records", c.len());
        }
        Command::Dedup => {
            let d = pipeline::run_dedup(config)?;
            println!("dedup: {} groups, {} involved, {} removed", d.groups, d.involved_records, d.removed);
        }
        Command::Normalize => {
            let n = pipeline::run_normalize(config)?;
            println!("normalize: {} images, {} failures", n.images_processed, n.failures.len());
        }
        Command::Split => {
            let m = pipeline::run_split(config, &protocols)?;
            println!("split: {} manifests", m.len());
        }
        Command::Train => {
            let n = pipeline::run_train(config, &protocols)?;
            println!("train: {n} folds");
        }
        Command::Eval { predictions } => {
            pipeline::run_eval(config, &protocols, predictions.as_deref())?;
            println!("eval: done");
        }
        Command::Report => print_summary(&pipeline::run_report(config, &protocols)?),
        Command::Pipeline => print_summary(&pipeline::run_pipeline(config, &protocols)?),
    }
    Ok(())
}

fn print_summary(s: &pipeline::ReportSummary) {
    for p in &s.protocols {
        println!(
            "{}: val {:.2}  test {:.2} (std {:.2})  vtg {:.2}  over {} folds",
            p.protocol, p.mean_val_pct, p.mean_test_pct, p.std_test_pct, p.mean_vtg_pct, p.folds
        );
    }
    if let (Some(gain), Some(red)) = (s.loto_test_gain_pct, s.vtg_reduction_pct) {
        println!("LOTO test gain {gain:.2} pp, VTG reduction {red:.2} pp");
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CTVBENCH_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let config = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let threads = cli.threads.map(|n| n as usize);
    match par::with_threads(threads, || run(&cli, &config)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
