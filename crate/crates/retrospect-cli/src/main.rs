//! Command-line driver for the reflection-synthesis pipeline.
//!
//! Every command reads one JSON run configuration; each config field can be
//! overridden by a flag of the same name, and flags win. Errors map to
//! stable exit codes: 2 configuration, 3 stage failure, 4 backend failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use retrospect_core::config::{BackendConfig, ReductionFormula, ReferencePolicy, RunConfig};
use retrospect_core::error::{Error, Result};
use retrospect_core::pipeline::{
    emit_corpus, evaluate, run_interactive_pipeline, run_pipeline_through, Stage,
};

#[derive(Parser)]
#[command(
    name = "retrospect",
    about = "Synthesize multi-level reflections from agent task trajectories",
    version
)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

/// Config file plus per-field overrides (flags win over the file).
#[derive(Args)]
struct Overrides {
    /// Run configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Maximum retry trials per task.
    #[arg(long, global = true)]
    k: Option<u32>,

    /// Maximum steps per trial (or turns per interactive episode).
    #[arg(long, global = true)]
    max_steps: Option<u32>,

    /// Which prompts carry the reference plan: none, single_only, or
    /// single_and_intra.
    #[arg(long, global = true)]
    reference_policy: Option<String>,

    /// Run all trials even after a pass (true/false).
    #[arg(long, global = true)]
    exhaust_trials: Option<bool>,

    /// Classify each task right after its taxonomy extension (true/false).
    #[arg(long, global = true)]
    interleaved: Option<bool>,

    /// Accumulate mid-course reflections instead of replacing (true/false).
    #[arg(long, global = true)]
    accumulate: Option<bool>,

    /// Worker threads for classification.
    #[arg(long, global = true)]
    task_parallelism: Option<usize>,

    /// Maximum concurrent backend requests.
    #[arg(long, global = true)]
    in_flight_cap: Option<usize>,

    /// Run directory for artifacts.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,

    /// Task fixture file or directory.
    #[arg(long, global = true)]
    tasks: Option<PathBuf>,

    /// Train share of the corpus split, in [0, 1].
    #[arg(long, global = true)]
    split_ratio: Option<f64>,

    /// Seed for the corpus split.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Error-reduction formula: label-count or per-type.
    #[arg(long, global = true)]
    reduction: Option<String>,

    /// Transport retries for the HTTP backend.
    #[arg(long, global = true)]
    retries: Option<u32>,

    /// Base backoff delay in milliseconds, doubled per retry.
    #[arg(long, global = true)]
    backoff_ms: Option<u64>,

    /// Rendered-prompt size limit in characters.
    #[arg(long, global = true)]
    prompt_char_limit: Option<usize>,

    /// Completion length limit passed to the backend.
    #[arg(long, global = true)]
    max_output_tokens: Option<u32>,

    /// Use the scripted mock backend with this rule file.
    #[arg(long, global = true, conflicts_with_all = ["http_endpoint", "http_model"])]
    mock_script: Option<PathBuf>,

    /// Use the HTTP backend against this chat-completion endpoint
    /// (credential read from the LLM_API_KEY environment variable).
    #[arg(long, global = true, requires = "http_model")]
    http_endpoint: Option<String>,

    /// Model name for the HTTP backend.
    #[arg(long, global = true, requires = "http_endpoint")]
    http_model: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run or resume stage 1: retry loops with per-trial reflections.
    Synthesize,
    /// Run or resume through stage 2: taxonomy induction and per-step
    /// error classification.
    Classify,
    /// Run or resume through stage 3: per-error-type reflections.
    Cluster,
    /// Run or resume through stage 4: final merged reflections.
    Merge,
    /// Write the fine-tuning corpus from a completed run.
    EmitDataset,
    /// Score a completed run: pass rate, exact match, trial curve, and the
    /// injected-reflection error-reduction protocol.
    Evaluate,
    /// All four stages, then the corpus, then the evaluation.
    Pipeline,
    /// Run the foresight loop over every task.
    Interactive,
    /// Regenerate the toy fixtures and run configurations.
    GenFixtures {
        /// Directory that receives fixtures/ and configs/.
        #[arg(long, default_value = ".")]
        root: PathBuf,
    },
}

impl Overrides {
    fn into_config(self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(k) = self.k {
            config.k = k;
        }
        if let Some(max_steps) = self.max_steps {
            config.max_steps = max_steps;
        }
        if let Some(policy) = &self.reference_policy {
            config.reference_policy = ReferencePolicy::parse(policy)?;
        }
        if let Some(exhaust) = self.exhaust_trials {
            config.exhaust_trials = exhaust;
        }
        if let Some(interleaved) = self.interleaved {
            config.interleaved = interleaved;
        }
        if let Some(accumulate) = self.accumulate {
            config.accumulate = accumulate;
        }
        if let Some(parallelism) = self.task_parallelism {
            config.task_parallelism = parallelism;
        }
        if let Some(cap) = self.in_flight_cap {
            config.in_flight_cap = cap;
        }
        if let Some(run_dir) = self.run_dir {
            config.run_dir = run_dir;
        }
        if let Some(tasks) = self.tasks {
            config.tasks = tasks;
        }
        if let Some(ratio) = self.split_ratio {
            config.split_ratio = ratio;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(reduction) = &self.reduction {
            config.reduction = ReductionFormula::parse(reduction)?;
        }
        if let Some(retries) = self.retries {
            config.retries = retries;
        }
        if let Some(backoff) = self.backoff_ms {
            config.backoff_ms = backoff;
        }
        if let Some(limit) = self.prompt_char_limit {
            config.prompt_char_limit = Some(limit);
        }
        if let Some(tokens) = self.max_output_tokens {
            config.max_output_tokens = tokens;
        }
        if let Some(script) = self.mock_script {
            config.backend = BackendConfig::Mock { script };
        } else if let (Some(endpoint), Some(model)) = (self.http_endpoint, self.http_model) {
            config.backend = BackendConfig::Http { endpoint, model };
        }
        config.validate()?;
        Ok(config)
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::invalid("serialization", e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synthesize => print_json(&run_pipeline_through(
            cli.overrides.into_config()?,
            Stage::Micro,
        )?),
        Command::Classify => print_json(&run_pipeline_through(
            cli.overrides.into_config()?,
            Stage::Meso,
        )?),
        Command::Cluster => print_json(&run_pipeline_through(
            cli.overrides.into_config()?,
            Stage::Macro,
        )?),
        Command::Merge => print_json(&run_pipeline_through(
            cli.overrides.into_config()?,
            Stage::MacroMerge,
        )?),
        Command::EmitDataset => {
            let config = cli.overrides.into_config()?;
            print_json(&emit_corpus(&config)?)
        }
        Command::Evaluate => {
            let config = cli.overrides.into_config()?;
            print_json(&evaluate(&config)?)
        }
        Command::Pipeline => {
            let config = cli.overrides.into_config()?;
            let stages = run_pipeline_through(config.clone(), Stage::MacroMerge)?;
            let corpus = emit_corpus(&config)?;
            let metrics = evaluate(&config)?;
            print_json(&serde_json::json!({
                "stages": stages,
                "corpus": corpus,
                "metrics": metrics,
            }))
        }
        Command::Interactive => {
            print_json(&run_interactive_pipeline(cli.overrides.into_config()?)?)
        }
        Command::GenFixtures { root } => {
            retrospect_core::fixtures::write_all(&root)?;
            print_json(&serde_json::json!({
                "root": root,
                "written": ["fixtures/miniplan", "fixtures/mock", "configs"],
            }))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
