use std::fs::File;
use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hgen_core::eval::{concepts_from_csv, evaluate, EvalError, GroundTruth};
use hgen_core::model::{load_tree, save_tree, write_atomic, ArtifactTree, TreeError};
use hgen_core::pipeline::{export, load_config, Engine, ExportFormat, PipelineConfig, PipelineError};
use hgen_core::provider::ProviderKind;
use tracing::{error, info};

#[derive(Parser)]
#[command(name = "hgen", version, about = "Generate layered documentation with trace links from source code")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Summarize, cluster and generate every configured layer, then write the tree.
    Generate(RunArgs),
    /// Flat generation without clustering or refinement, for comparison.
    Baseline(RunArgs),
    /// Only summarize source files into a code-layer tree.
    Summarize(RunArgs),
    /// Render a tree as markdown, dot or csv-links.
    Export {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: String,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a tree against expert link verdicts and concept annotations.
    Eval {
        #[arg(long)]
        tree: PathBuf,
        /// CSV with parent_id,child_id,verdict.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// CSV with concept,artifact_ids (ids joined by ';').
        #[arg(long)]
        concepts: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderChoice {
    Mock,
    Http,
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; defaults apply to anything it leaves out.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Source root; overrides the config.
    #[arg(long)]
    src: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    provider: Option<ProviderChoice>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Also write per-layer clustering and refinement reports as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Provider(String),
    Run(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Run(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Provider(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Provider(m) | Failure::Run(m) => m,
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(_) => Failure::Usage(e.to_string()),
            PipelineError::Provider { .. } => Failure::Provider(e.to_string()),
            _ => Failure::Run(e.to_string()),
        }
    }
}

impl From<TreeError> for Failure {
    fn from(e: TreeError) -> Self {
        Failure::Run(e.to_string())
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        Failure::Run(e.to_string())
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_target(false)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            error!("{}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Generate(args) => {
            let engine = engine(&args)?;
            let (tree, reports) = engine.run_pipeline()?;
            if let Some(path) = &args.report {
                let bytes = serde_json::to_vec_pretty(&reports).map_err(|e| Failure::Run(e.to_string()))?;
                write_atomic(path, &bytes)?;
            }
            write_tree(&args.out, &tree)
        }
        Command::Baseline(args) => {
            let engine = engine(&args)?;
            let tree = engine.run_baseline()?;
            write_tree(&args.out, &tree)
        }
        Command::Summarize(args) => {
            let engine = engine(&args)?;
            let mut tree = ArtifactTree::new(engine.config.project.clone());
            tree.provenance.insert("mode".into(), "summarize".into());
            tree.provenance.insert("completion_provider".into(), engine.gateway.completion_id());
            tree.provenance.insert("prompts".into(), engine.prompts.fingerprint());
            tree.layers.push(engine.summarize()?);
            write_tree(&args.out, &tree)
        }
        Command::Export { tree, format, out } => {
            let format: ExportFormat = format.parse()?;
            let tree = read_tree(&tree)?;
            let bytes = export(&tree, format);
            match out {
                Some(path) => write_atomic(&path, &bytes)?,
                None => print!("{}", String::from_utf8_lossy(&bytes)),
            }
            Ok(())
        }
        Command::Eval { tree, truth, concepts } => {
            let tree = read_tree(&tree)?;
            let truth = match truth {
                Some(p) => Some(GroundTruth::from_csv(open(&p)?, &p.display().to_string())?),
                None => None,
            };
            let concepts = match concepts {
                Some(p) => Some(concepts_from_csv(open(&p)?, &p.display().to_string())?),
                None => None,
            };
            let report = evaluate(&tree, truth.as_ref(), concepts.as_deref())?;
            let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::Run(e.to_string()))?;
            println!("{json}");
            Ok(())
        }
    }
}

fn open(path: &Path) -> Result<File, Failure> {
    File::open(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn read_tree(path: &Path) -> Result<ArtifactTree, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    load_tree(&bytes).map_err(|e| Failure::Run(format!("{}: {e}", path.display())))
}

fn write_tree(path: &Path, tree: &ArtifactTree) -> Result<(), Failure> {
    write_atomic(path, &save_tree(tree)?)?;
    info!(path = %path.display(), artifacts = tree.artifact_count(), links = tree.links.len(), "wrote tree");
    Ok(())
}

/// Config file, then command-line overrides.
fn resolve_config(args: &RunArgs) -> Result<PipelineConfig, Failure> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(src) = &args.src {
        config.source.root = Some(src.clone());
    }
    if config.source.root.is_none() {
        return Err(Failure::Usage("no source root: pass --src or set source.root in the config".into()));
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(dir) = &args.cache_dir {
        config.cache_dir = Some(dir.clone());
    }
    match args.provider {
        Some(ProviderChoice::Mock) => {
            config.completion.kind = ProviderKind::Mock;
            config.embedding.kind = ProviderKind::Mock;
        }
        Some(ProviderChoice::Http) => {
            config.completion.kind = ProviderKind::HttpCompletion;
            config.embedding.kind = ProviderKind::HttpEmbedding;
        }
        None => {}
    }
    Ok(config)
}

fn engine(args: &RunArgs) -> Result<Engine, Failure> {
    Ok(Engine::from_config(resolve_config(args)?)?)
}
