use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use drp_core::config::{BackendKind, PipelineConfig};
use drp_core::mock::{load_checker_table, MockFixtures, FIXTURES_ENV};
use drp_core::pipeline::{Pipeline, Problem, Soundness};
use drp_core::prover::{serve_mock_checker, LemmaContext, ServeEnd, VerificationOutcome};
use drp_core::reasoner::{lean_prefix, Deduper, ReasonerResponse};
use drp_core::statement::{extract_declarations, ExtractionMode};
use drp_core::store::LemmaStore;

#[derive(Debug, Parser)]
#[command(name = "drp", version, about = "Lemma-driven proof pipeline")]
struct Cli {
    #[command(flatten)]
    opts: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalOpts {
    /// TOML config file. `DRP_<SECTION>__<KEY>` variables override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Lemma extraction: regex | balanced
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Stage-2 attempt budget per lemma.
    #[arg(long, global = true)]
    k: Option<u32>,
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    #[arg(long, global = true)]
    rounds: Option<u32>,
    /// Checker backend: external | mock
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Stub unproved lemmas with `sorry` in the final context. Marks the run NON-SOUND.
    #[arg(long, global = true)]
    oracle_sorry: bool,
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// Overrides the id taken from the file stem.
    #[arg(long, global = true)]
    problem_id: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Stage 1: propose lemmas for a problem file.
    Decompose { problem: PathBuf },
    /// Stage 2: verify the lemmas of a lemma file, or the stored candidates of a problem id.
    Verify { input: String },
    /// All stages.
    Solve { problem: PathBuf },
    /// Write the lemma dataset as JSONL plus a manifest.
    Export {
        #[arg(long)]
        out: PathBuf,
    },
    /// Load a dataset written by `export`.
    Import { path: PathBuf },
    /// Print the effective configuration.
    Config,
    /// Serve the checker protocol on stdin/stdout from a rules file.
    MockChecker {
        #[arg(long)]
        rules: PathBuf,
    },
}

/// Config and usage problems exit 2; everything else that fails exits 1.
enum Failure {
    Config(anyhow::Error),
    Run(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Run(e.into())
    }
}

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("drp: configuration error: {}", chain(&e));
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("drp: {}", chain(&e));
            ExitCode::from(1)
        }
    }
}

/// The error chain, skipping causes the previous message already quotes.
fn chain(e: &anyhow::Error) -> String {
    let mut text = String::new();
    let mut last = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !last.contains(&msg) {
            if !text.is_empty() {
                text.push_str(": ");
            }
            text.push_str(&msg);
        }
        last = msg;
    }
    text
}

fn load_config(opts: &GlobalOpts) -> Result<PipelineConfig, Failure> {
    let mut config =
        PipelineConfig::load(opts.config.as_deref(), std::env::vars()).map_err(config_err)?;
    if let Some(mode) = &opts.mode {
        config.run.mode = mode
            .parse::<ExtractionMode>()
            .map_err(|e| config_err(anyhow!("--mode: {e}")))?;
    }
    if let Some(k) = opts.k {
        config.stage2.k = k;
    }
    if let Some(p) = opts.parallelism {
        config.run.parallelism = p;
    }
    if let Some(r) = opts.rounds {
        config.run.rounds = r;
    }
    if let Some(b) = &opts.backend {
        config.backend.kind = b
            .parse::<BackendKind>()
            .map_err(|e| config_err(anyhow!("--backend: {e}")))?;
    }
    if opts.oracle_sorry {
        config.run.oracle_sorry = true;
    }
    if let Some(s) = &opts.store {
        config.run.store = s.clone();
    }
    config.validate().map_err(config_err)?;
    Ok(config)
}

fn fixtures(config: &PipelineConfig) -> MockFixtures {
    match std::env::var_os(FIXTURES_ENV) {
        Some(root) => MockFixtures::from_dir(root),
        None => match &config.run.mock_fixtures {
            Some(root) => MockFixtures::from_dir(root),
            None => MockFixtures::in_memory(),
        },
    }
}

fn open_pipeline(config: PipelineConfig) -> Result<Pipeline, Failure> {
    let store = LemmaStore::open(&config.run.store)
        .with_context(|| format!("opening store {}", config.run.store.display()))?;
    let fixtures = Arc::new(fixtures(&config));
    Pipeline::new(config, fixtures, Arc::new(store)).map_err(config_err)
}

fn load_problem(path: &Path, id: Option<&str>) -> Result<Problem, Failure> {
    Ok(Problem::load(path, id).with_context(|| format!("loading problem {}", path.display()))?)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let opts = &cli.opts;
    let out = io::stdout();
    let mut out = out.lock();
    match &cli.command {
        Command::Config => {
            let config = load_config(opts)?;
            write!(out, "{}", config.to_toml())?;
        }
        Command::MockChecker { rules } => {
            let table = load_checker_table(rules).map_err(config_err)?;
            let stdin = io::stdin();
            if serve_mock_checker(&table, stdin.lock(), out)? == ServeEnd::Crash {
                return Err(anyhow!("scripted crash").into());
            }
        }
        Command::Decompose { problem } => {
            let config = load_config(opts)?;
            let problem = load_problem(problem, opts.problem_id.as_deref())?;
            let mode = config.run.mode;
            let pipeline = open_pipeline(config)?;
            let stage1 = pipeline.stage1_decompose(&problem, mode)?;
            for e in &stage1.errors {
                eprintln!("drp: sample {} failed: {}", e.index, e.error);
            }
            let mut listing = lean_prefix(&problem.preamble, &[]);
            for c in &stage1.candidates {
                listing.push_str(&c.canonical.text);
                listing.push_str(" := by sorry\n\n");
            }
            let rel = format!("candidates/{}.lean", problem.id);
            pipeline.store().write_artifact(&rel, listing.as_bytes())?;
            writeln!(
                out,
                "{} candidates for {} ({} extracted, {} duplicates)",
                stage1.candidates.len(),
                problem.id,
                stage1.extracted,
                stage1.duplicates
            )?;
            for c in &stage1.candidates {
                writeln!(out, "{}  {}", c.digest().short(), c.canonical.text)?;
            }
        }
        Command::Verify { input } => {
            let config = load_config(opts)?;
            let (mode, model) = (config.run.mode, config.prover_model.model.clone());
            let pipeline = open_pipeline(config)?;
            let path = Path::new(input);
            let (problem_id, text) = if path.is_file() {
                let id = match &opts.problem_id {
                    Some(id) => id.clone(),
                    None => path
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_default(),
                };
                let text =
                    std::fs::read_to_string(path).with_context(|| format!("reading {input}"))?;
                (id, text)
            } else {
                let rel = format!("candidates/{input}.lean");
                let bytes = pipeline.store().read_artifact(&rel).ok_or_else(|| {
                    anyhow!("{input} is neither a file nor a problem with stored candidates")
                })?;
                (
                    input.clone(),
                    String::from_utf8(bytes).context("candidate listing")?,
                )
            };
            let preamble = extract_declarations(&text)
                .first()
                .map_or(text.as_str(), |d| &text[..d.statement.span().start])
                .trim_end()
                .to_string();
            let response = ReasonerResponse {
                index: 0,
                text,
                usage: None,
                latency_ms: 0,
            };
            let candidates = Deduper::new().push_response(&response, mode, &model, 1);
            let ctx = LemmaContext {
                problem_id: problem_id.clone(),
                preamble,
            };
            let backend = pipeline.backend_for(&problem_id)?;
            let budget = pipeline.config().stage2;
            let (_, outcomes) = pipeline.filter_candidates(&ctx, &candidates, &budget, &backend)?;
            let rows: Vec<_> = candidates.iter().map(|c| &outcomes[&c.digest()]).collect();
            print_table(&mut out, &rows)?;
        }
        Command::Solve { problem } => {
            let config = load_config(opts)?;
            let problem = load_problem(problem, opts.problem_id.as_deref())?;
            let pipeline = open_pipeline(config)?;
            let report = pipeline.solve(&problem);
            if report.soundness == Soundness::NonSound {
                writeln!(
                    out,
                    "*** NON-SOUND: oracle sorry stubs were placed in the final context ***"
                )?;
            }
            writeln!(out, "{}", report.summary_line())?;
            if let Some(root) = pipeline.store().root() {
                writeln!(
                    out,
                    "report: {}",
                    root.join("runs")
                        .join(&problem.id)
                        .join("report.json")
                        .display()
                )?;
            }
            if let Some(e) = report.error {
                return Err(anyhow!("run stopped early: {e}").into());
            }
        }
        Command::Export { out: path } => {
            let config = load_config(opts)?;
            let store = LemmaStore::open(&config.run.store)?;
            let manifest = store.export_dataset(path)?;
            writeln!(
                out,
                "exported {} records for {} problems to {}",
                manifest.record_count,
                manifest.problem_count,
                path.display()
            )?;
            for (status, n) in &manifest.status_counts {
                writeln!(out, "  {status}: {n}")?;
            }
            writeln!(out, "sha256 {}", manifest.sha256)?;
        }
        Command::Import { path } => {
            let config = load_config(opts)?;
            let store = LemmaStore::open(&config.run.store)?;
            let n = store.import_dataset(path)?;
            writeln!(
                out,
                "imported {n} records into {}",
                config.run.store.display()
            )?;
        }
    }
    Ok(())
}

fn print_table(out: &mut impl Write, rows: &[&VerificationOutcome]) -> io::Result<()> {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(4);
    writeln!(
        out,
        "{:<width$}  {:<12}  {:<18}  attempts",
        "name", "digest", "status"
    )?;
    for r in rows {
        writeln!(
            out,
            "{:<width$}  {:<12}  {:<18}  {}/{}",
            r.name,
            r.digest.short(),
            r.status.as_str(),
            r.attempts_used,
            r.k
        )?;
    }
    Ok(())
}
