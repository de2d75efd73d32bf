//! `mvembed`: stage-by-stage driver for the multi-view embedding experiments.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use mvembed_core::config::{EvalScope, Preset, RunConfig};
use mvembed_core::metrics::format_table;
use mvembed_core::models::ModelKind;
use mvembed_core::pipeline::Run;

#[derive(Parser)]
#[command(
    name = "mvembed",
    version,
    about = "Multi-view 3D shape embeddings: render, select, train, embed, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus, or import the configured manifest.
    Synth(Common),
    /// Render the turntable views of every model to PGM files.
    Render(Common),
    /// Cluster each model's views into k-channel stacks.
    Select(Common),
    /// Train one network per configured (kind, k) pair.
    Train(Common),
    /// Embed the whole corpus with every trained network.
    Embed(Common),
    /// Rank, score and tabulate every embedding corpus.
    Evaluate(Common),
    /// Run every stage in order and print the results table.
    Pipeline(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// Run directory holding every stage's inputs and outputs.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// `key = value` configuration file applied over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Views per stack; repeat or comma-separate for several.
    #[arg(long, value_delimiter = ',')]
    k: Vec<usize>,
    /// Model kinds (ae, cls, combined); repeat or comma-separate.
    #[arg(long, value_delimiter = ',')]
    kind: Vec<ModelKind>,
    /// Randomly rotate every model before rendering.
    #[arg(long)]
    perturbed: bool,
    /// Score the whole corpus instead of the test split.
    #[arg(long, value_parser = parse_scope)]
    scope: Option<EvalScope>,
    /// Small widths and short schedules for a single core (default).
    #[arg(long, conflicts_with = "paper_faithful")]
    desk: bool,
    /// Full-width network, batch 100 and the long training schedule.
    #[arg(long)]
    paper_faithful: bool,
}

fn parse_scope(s: &str) -> std::result::Result<EvalScope, String> {
    match s {
        "test" => Ok(EvalScope::Test),
        "all" => Ok(EvalScope::All),
        _ => Err(format!("unknown scope `{s}` (expected test or all)")),
    }
}

impl Common {
    /// Existing run config, else the chosen preset; then the config file, then flags.
    fn resolve(&self) -> Result<RunConfig> {
        let echo = self.out.join("config.txt");
        let preset = match (self.desk, self.paper_faithful) {
            (_, true) => Some(Preset::PaperFaithful),
            (true, _) => Some(Preset::Desk),
            _ => None,
        };
        let mut cfg = match (preset, echo.exists()) {
            (Some(p), _) => RunConfig::preset(p),
            (None, true) => Run::open(&self.out)?.config,
            (None, false) => RunConfig::desk(),
        };
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            cfg = RunConfig::parse(&text, cfg).with_context(|| format!("in {}", path.display()))?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if !self.k.is_empty() {
            cfg.ks = self.k.clone();
        }
        if !self.kind.is_empty() {
            cfg.kinds = self.kind.clone();
        }
        if self.perturbed {
            cfg.perturbed = true;
        }
        if let Some(scope) = self.scope {
            cfg.eval_scope = scope;
        }
        Ok(cfg)
    }

    fn run(&self) -> Result<Run> {
        Ok(Run::create(&self.out, self.resolve()?)?)
    }
}

fn print_table(dir: &Path, table: &str) {
    print!("{table}");
    println!("\nreports written to {}", dir.join("reports").display());
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth(c) => {
            let entries = c.run()?.synth()?;
            println!("{} models in {}", entries.len(), c.out.join("manifest.csv").display());
        }
        Command::Render(c) => c.run()?.render()?,
        Command::Select(c) => c.run()?.select()?,
        Command::Train(c) => c.run()?.train()?,
        Command::Embed(c) => c.run()?.embed()?,
        Command::Evaluate(c) => {
            let rows = c.run()?.evaluate()?;
            print_table(&c.out, &format_table(&rows));
        }
        Command::Pipeline(c) => {
            let rows = c.run()?.pipeline()?;
            print_table(&c.out, &format_table(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
