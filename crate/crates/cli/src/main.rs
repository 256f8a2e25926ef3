use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use pbridge_core::extraction::load_relations;
use pbridge_core::fsutil::{to_json_pretty, write_atomic};
use pbridge_core::graph::{build_graph, SemanticGraph};
use pbridge_core::providers::HashingEmbedder;
use pbridge_core::runner::{
    build_embedder, evaluate_run_dir, run_experiment, run_pipeline, ExperimentConfig, PipelineError, PipelineOptions,
    RunConfig, RunManifest, Stage,
};
use pbridge_core::schema::{default_schema, render_hidden_prompt, sample_persona, PersonaSchema};

#[derive(Parser)]
#[command(name = "pbridge", version, about = "Persona discovery through bridging-inference graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a ground-truth persona and print it as JSON.
    Sample {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Also print the hidden system prompt.
        #[arg(long)]
        hidden_prompt: bool,
    },
    /// Run the pipeline through the interview stage.
    Interview(StageArgs),
    /// Run the pipeline through relation extraction.
    Extract(StageArgs),
    /// Run the pipeline through graph construction.
    Graph(StageArgs),
    /// Run the pipeline through persona inference.
    Infer(StageArgs),
    /// Re-score the predictions stored in a run directory.
    Eval {
        run_dir: PathBuf,
        /// Hashing embedder dimension; defaults to the run's configured embedder.
        #[arg(long)]
        dimension: Option<usize>,
        /// Write report.json to this path instead of printing markdown.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every pipeline stage.
    Run {
        #[command(flatten)]
        args: StageArgs,
        #[arg(long, value_parser = parse_stage)]
        stop_after: Option<Stage>,
    },
    /// Run a backbone × target × strategy experiment matrix.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        concurrency: Option<usize>,
    },
    /// Render a graph as Graphviz DOT.
    ExportDot {
        /// graph.json or relations.json
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct StageArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run directory; overrides the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Ignore an existing manifest and rerun every stage.
    #[arg(long)]
    fresh: bool,
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    s.parse()
}

fn pipeline(args: &StageArgs, stop_after: Option<Stage>) -> Result<(), PipelineError> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    let outcome = run_pipeline(&cfg, PipelineOptions { stop_after, resume: !args.fresh })?;
    let ran: Vec<&str> = outcome.executed.iter().map(|s| s.as_str()).collect();
    eprintln!("{}: ran [{}]", outcome.dir.display(), ran.join(", "));
    if let Some(report) = outcome.report {
        print!("{}", report.to_markdown());
    }
    Ok(())
}

fn load_graph(input: &Path) -> anyhow::Result<SemanticGraph> {
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    if let Ok(g) = SemanticGraph::from_canonical_json(&text) {
        return Ok(g);
    }
    let relations = load_relations(input).with_context(|| format!("{} is neither a graph nor a relation list", input.display()))?;
    Ok(build_graph(&relations))
}

fn eval(run_dir: &Path, dimension: Option<usize>, out: Option<&Path>) -> Result<(), PipelineError> {
    let report = match dimension {
        Some(d) => evaluate_run_dir(run_dir, &HashingEmbedder::new(d))?,
        None => {
            let manifest = RunManifest::load(run_dir)?;
            let cfg: RunConfig = serde_json::from_value(manifest.config)
                .map_err(|e| PipelineError::validation(format!("manifest config: {e}")))?;
            evaluate_run_dir(run_dir, build_embedder(&cfg.settings.embedder).as_ref())?
        }
    };
    match out {
        Some(path) => write_atomic(path, to_json_pretty(&report).as_bytes()).map_err(|e| PipelineError::io(path, e))?,
        None => print!("{}", report.to_markdown()),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Sample { seed, schema, hidden_prompt } => {
            let schema = match schema {
                Some(p) => PersonaSchema::load(&p)?,
                None => default_schema(),
            };
            let profile = sample_persona(&schema, seed)?;
            print!("{}", profile.to_canonical_json());
            if hidden_prompt {
                println!("\n{}", render_hidden_prompt(&profile));
            }
            Ok(())
        }
        Command::Interview(a) => pipeline(&a, Some(Stage::Interview)),
        Command::Extract(a) => pipeline(&a, Some(Stage::Extract)),
        Command::Graph(a) => pipeline(&a, Some(Stage::Graph)),
        Command::Infer(a) => pipeline(&a, Some(Stage::Infer)),
        Command::Run { args, stop_after } => pipeline(&args, stop_after),
        Command::Eval { run_dir, dimension, out } => eval(&run_dir, dimension, out.as_deref()),
        Command::Experiment { config, out, concurrency } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if let Some(c) = concurrency {
                cfg.concurrency = c;
            }
            let report = run_experiment(&cfg)?;
            print!("{}", report.to_markdown());
            Ok(())
        }
        Command::ExportDot { input, out } => {
            let g = load_graph(&input).map_err(|e| PipelineError::validation(format!("{e:#}")))?;
            let dot = g.to_dot();
            match out {
                Some(p) => write_atomic(&p, dot.as_bytes()).map_err(|e| PipelineError::io(&p, e))?,
                None => print!("{dot}"),
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
