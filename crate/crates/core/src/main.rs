use clap::{Args, Parser, Subcommand};
use ontoforge::ontology::load_ontology;
use ontoforge::pipeline::{BackendKind, EvalTask, Pipeline, PipelineConfig, PipelineError, RunManifest, Stage, StageStatus};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "ontoforge", version, about = "Ontology-guided self-training data pipeline")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags that take precedence over the environment and the config file.
#[derive(Args)]
struct Overrides {
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// mock | scripted | http
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Script for the scripted mock backend (JSON).
    #[arg(long, global = true)]
    script: Option<PathBuf>,
    #[arg(long, global = true)]
    base_url: Option<String>,
    #[arg(long, global = true)]
    model: Option<String>,
    #[arg(long, global = true)]
    embed_model: Option<String>,
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    bin_width: Option<f64>,
    #[arg(long, global = true)]
    max_retries: Option<u32>,
    #[arg(long, global = true)]
    concepts: Option<PathBuf>,
    #[arg(long, global = true)]
    relations: Option<PathBuf>,
    #[arg(long, global = true)]
    descriptions: Option<PathBuf>,
    #[arg(long, global = true)]
    templates: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline, skipping stages whose outputs are up to date.
    Run {
        /// Stop after this stage.
        #[arg(long)]
        until: Option<String>,
    },
    /// Run exactly one stage.
    Stage { name: String },
    /// Evaluate a model.
    Eval {
        #[command(subcommand)]
        task: EvalCommand,
        /// Report path (default: <output_dir>/eval_report.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Load the ontology and report structural problems.
    ValidateOntology,
    /// Rebuild score_report.json from scores.jsonl.
    Report,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Hypernym discovery, scored by mean reciprocal rank.
    Hypernym {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Generate a definition per term and include it in the query.
        #[arg(long)]
        definitions: bool,
    },
    /// Multiple-choice QA accuracy.
    Qa {
        /// JSONL dataset, `name=path` or a path whose stem is the name. Repeatable.
        #[arg(long = "dataset", required = true)]
        datasets: Vec<String>,
    },
    /// Mean embedding cosine between model responses and references.
    Shift {
        #[arg(long)]
        instructions: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    cfg.apply_env();
    let o = &cli.overrides;
    if let Some(v) = &o.output_dir {
        cfg.output_dir = v.clone();
    }
    if let Some(v) = &o.cache_dir {
        cfg.cache_dir = Some(v.clone());
    }
    if let Some(v) = &o.backend {
        cfg.backend.kind = match v.as_str() {
            "mock" => BackendKind::Mock,
            "scripted" => BackendKind::Scripted,
            "http" => BackendKind::Http,
            other => return Err(PipelineError::Usage(format!("unknown backend {other:?}"))),
        };
    }
    if let Some(v) = &o.script {
        cfg.backend.script = Some(v.clone());
        if o.backend.is_none() {
            cfg.backend.kind = BackendKind::Scripted;
        }
    }
    if let Some(v) = &o.base_url {
        cfg.backend.http.base_url = v.clone();
    }
    if let Some(v) = &o.model {
        cfg.backend.http.model = v.clone();
    }
    if let Some(v) = &o.embed_model {
        cfg.backend.http.embed_model = v.clone();
    }
    if let Some(v) = o.parallelism {
        cfg.parallelism = v;
    }
    if let Some(v) = o.k {
        cfg.k = v;
    }
    if let Some(v) = o.bin_width {
        cfg.bin_width = v;
    }
    if let Some(v) = o.max_retries {
        cfg.backend.retry.max_retries = v;
    }
    if let Some(v) = &o.concepts {
        cfg.ontology.concepts = Some(v.clone());
    }
    if let Some(v) = &o.relations {
        cfg.ontology.relations = Some(v.clone());
    }
    if let Some(v) = &o.descriptions {
        cfg.ontology.descriptions = Some(v.clone());
    }
    if let Some(v) = &o.templates {
        cfg.templates = Some(v.clone());
    }
    Ok(cfg)
}

fn print_manifest(m: &RunManifest) {
    for rec in &m.stages {
        let status = match (rec.status, rec.skipped) {
            (StageStatus::Done, true) => "up to date",
            (StageStatus::Done, false) => "done",
            (StageStatus::Pending, _) => "pending",
            (StageStatus::Failed, _) => "failed",
        };
        let counts: Vec<String> = rec.counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
        println!("{:<14} {:<10} {}", rec.name, status, counts.join(" "));
    }
}

fn dataset_arg(arg: &str) -> Result<(String, PathBuf), PipelineError> {
    if let Some((name, path)) = arg.split_once('=') {
        return Ok((name.to_owned(), PathBuf::from(path)));
    }
    let path = PathBuf::from(arg);
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| PipelineError::Usage(format!("cannot name dataset {arg:?}; use name=path")))?
        .to_owned();
    Ok((name, path))
}

fn validate_ontology(cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let store = load_ontology(cfg.concepts_path()?, cfg.relations_path()?, cfg.ontology.descriptions.as_deref())?;
    let stats = store.stats();
    let report = store.validate();
    println!(
        "{} concepts, {} definitions, {} is-a edges",
        stats.concepts, stats.definitions, stats.isa_edges
    );
    println!("{} roots, {report}", report.roots.len());
    for cycle in &report.cycles {
        let ids: Vec<&str> = cycle.iter().map(|c| c.as_str()).collect();
        println!("cycle: {}", ids.join(" -> "));
    }
    for orphan in &report.orphans {
        println!("orphan: {orphan}");
    }
    if report.is_clean() {
        Ok(())
    } else {
        Err(PipelineError::Data(format!("ontology is not a clean hierarchy: {report}")))
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Run { until } => {
            let until = until.as_deref().map(str::parse::<Stage>).transpose()?;
            let pipeline = Pipeline::from_config(cfg)?;
            let manifest = pipeline.run(until)?;
            print_manifest(&manifest);
        }
        Command::Stage { name } => {
            let stage: Stage = name.parse()?;
            let manifest = Pipeline::from_config(cfg)?.run_stage(stage)?;
            print_manifest(&manifest);
        }
        Command::Report => {
            let pipeline = Pipeline::from_config(cfg)?;
            pipeline.run_stage(Stage::Report)?;
            println!("{}", pipeline.output_dir().join(ontoforge::pipeline::REPORT_FILE).display());
        }
        Command::ValidateOntology => validate_ontology(&cfg)?,
        Command::Eval { task, out } => {
            let task = match task {
                EvalCommand::Hypernym {
                    data,
                    gold,
                    definitions,
                } => EvalTask::Hypernym {
                    data,
                    gold,
                    with_definitions: definitions,
                },
                EvalCommand::Qa { datasets } => EvalTask::Qa {
                    datasets: datasets.iter().map(|d| dataset_arg(d)).collect::<Result<_, _>>()?,
                },
                EvalCommand::Shift { instructions } => EvalTask::Shift { instructions },
            };
            let pipeline = Pipeline::for_eval(cfg)?;
            let (report, path) = pipeline.run_eval(&task, out.as_deref())?;
            for e in &report.errors {
                eprintln!("warning: {}: {}", e.item, e.error);
            }
            println!("{}", report.display);
            eprintln!("report written to {}", display(&path));
        }
    }
    Ok(())
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("ONTOFORGE_LOG").unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
