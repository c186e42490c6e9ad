use std::io::{self, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sentread_core::backend::serve::{serve_http, serve_lines};
use sentread_core::backend::{connect, MockBackend};
use sentread_core::pipeline::{cmd_correlate, cmd_evaluate, cmd_ingest, cmd_score, PipelineConfig, INGEST_REPORT};
use sentread_core::{SurprisalMethod, SynthCorpus, SynthSpec};

#[derive(Parser)]
#[command(name = "sentread", version, about = "Sentence surprisal and relevance as predictors of reading speed")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Command-line settings that take precedence over the config file.
#[derive(Args)]
struct Overrides {
    /// Pipeline config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// `mock`, `mock:<vocab>:<dim>[:<seed>]`, `stdio:<cmd>` or `http:<url>`.
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Comma-separated metrics out of cr, nll, nsp, relevance.
    #[arg(long, global = true, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Repeat the evaluation within each language.
    #[arg(long, global = true)]
    per_language: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and normalize discourses, frequency lists and reading data.
    Ingest,
    /// Compute sentence metrics into metrics.csv.
    Score,
    /// Fit base and full models and write evaluation.json.
    Evaluate,
    /// Correlate each surprisal method with relevance into correlation.json.
    Correlate,
    /// Ingest, score, evaluate and correlate in sequence.
    Run,
    /// Write a seeded synthetic corpus and a config for it.
    Simulate {
        /// Directory to write texts/, freq/, reading.tsv and config.toml into.
        dir: PathBuf,
        /// Generate reading speeds without metric effects.
        #[arg(long)]
        null: bool,
    },
    /// Serve the mock backend over the wire protocol.
    ServeMock {
        /// Listen for HTTP on this address instead of using stdin/stdout.
        #[arg(long)]
        http: Option<String>,
        #[arg(long, default_value_t = 4)]
        vocab: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        /// Stop after this many HTTP requests.
        #[arg(long)]
        max_requests: Option<usize>,
    },
}

impl Overrides {
    fn load(&self) -> Result<PipelineConfig> {
        let Some(path) = &self.config else {
            bail!("this command needs --config <path>");
        };
        let mut cfg = PipelineConfig::load(path)?;
        if let Some(backend) = &self.backend {
            cfg.backend = backend.clone();
        }
        if let Some(methods) = &self.methods {
            cfg.relevance = false;
            cfg.methods.clear();
            for m in methods {
                if m.trim().eq_ignore_ascii_case("relevance") {
                    cfg.relevance = true;
                } else {
                    cfg.methods.push(m.parse::<SurprisalMethod>().map_err(anyhow::Error::msg)?);
                }
            }
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if self.per_language {
            cfg.evaluate.per_language = true;
        }
        cfg.validate_settings()?;
        Ok(cfg)
    }
}

fn ingest(cfg: &PipelineConfig) -> Result<()> {
    let report = cmd_ingest(cfg)?;
    println!(
        "ingested {} discourses ({} sentences) in {} languages, {} reading records from {} participants",
        report.discourses,
        report.sentences,
        report.languages.len(),
        report.reading_records,
        report.participants
    );
    if report.warnings {
        eprintln!(
            "warning: {} reading rows skipped, see {}",
            report.row_errors.len(),
            cfg.out_dir.join(INGEST_REPORT).display()
        );
    }
    Ok(())
}

fn score(cfg: &PipelineConfig) -> Result<()> {
    let spec = cfg.backend_spec();
    let backend = connect(&spec, cfg.timeout()).with_context(|| format!("connecting to backend {spec}"))?;
    let rows = cmd_score(cfg, backend.as_ref())?;
    println!("scored {} sentences into {}", rows.len(), cfg.metrics_path().display());
    Ok(())
}

fn evaluate(cfg: &PipelineConfig) -> Result<()> {
    let report = cmd_evaluate(cfg)?;
    println!(
        "joined {} rows ({} reading records unmatched)",
        report.join.joined_rows, report.join.unmatched_records
    );
    let overall = &report.overall;
    for (metric, c) in &overall.delta_aic {
        println!("  {metric:<20} dAIC {:>12.3}  endpoint effect {:>9.4}", c.delta_aic, c.endpoint_effect);
    }
    for (pair, c) in &overall.combined {
        println!("  {pair:<20} dAIC {:>12.3}", c.delta_aic);
    }
    for (metric, reason) in &overall.skipped_metrics {
        println!("  {metric:<20} skipped: {reason}");
    }
    if let Some(perm) = &overall.permutation {
        for (metric, d) in &perm.delta_aic {
            println!("  permuted {metric:<11} dAIC {d:>12.3}");
        }
    }
    Ok(())
}

fn correlate(cfg: &PipelineConfig) -> Result<()> {
    let report = cmd_correlate(cfg)?;
    for c in &report.overall {
        match c.r {
            Some(r) => println!("  r({}, {}) = {r:.4} (n = {})", c.x, c.y, c.n),
            None => println!(
                "  r({}, {}) undefined: {}",
                c.x,
                c.y,
                c.undefined.as_deref().unwrap_or("")
            ),
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest => ingest(&cli.overrides.load()?),
        Command::Score => score(&cli.overrides.load()?),
        Command::Evaluate => evaluate(&cli.overrides.load()?),
        Command::Correlate => correlate(&cli.overrides.load()?),
        Command::Run => {
            let cfg = cli.overrides.load()?;
            ingest(&cfg)?;
            score(&cfg)?;
            evaluate(&cfg)?;
            correlate(&cfg)
        }
        Command::Simulate { dir, null } => {
            let seed = cli.overrides.seed.unwrap_or(0);
            let spec = if *null { SynthSpec::null(seed) } else { SynthSpec::with_seed(seed) };
            let corpus = SynthCorpus::generate(&spec)?;
            corpus.write(dir)?;
            println!("wrote synthetic corpus and {}", dir.join("config.toml").display());
            Ok(())
        }
        Command::ServeMock {
            http,
            vocab,
            dim,
            max_requests,
        } => {
            let backend = MockBackend::new(*vocab, *dim, cli.overrides.seed.unwrap_or(0))?;
            match http {
                Some(addr) => {
                    let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
                    eprintln!("listening on http://{}", listener.local_addr()?);
                    serve_http(&backend, listener, *max_requests)?;
                }
                None => serve_lines(&backend, io::stdin().lock(), io::stdout().lock())?,
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(io::stderr(), "error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
