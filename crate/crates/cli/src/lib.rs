//! Command-line harness: named experiment recipes that write CSV tables and
//! a JSON manifest per run.

pub mod config;
pub mod error;
pub mod output;
pub mod recipes;

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

pub use config::{load_config, ExperimentRecipe, RecipeName, RecipeParams};
pub use error::CliError;
pub use output::{RecipeOutput, Table, SCHEMA_VERSION};

#[derive(Debug, Parser)]
#[command(
    name = "raylab",
    version,
    about = "Seeded learning-dynamics experiments on contextual bandits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Grid of the 2x2 flow field, null clines, inflection curves and fixed points.
    FlowField(RecipeArgs),
    /// Deterministic flows and stochastic runs from shared sampled starts.
    Trajectories(RecipeArgs),
    /// Quantiles of the slowest progress per run across training settings.
    Cdf(RecipeArgs),
    /// Learning curves and plateau counts for growing K = n.
    Scaling(RecipeArgs),
    /// Fraction of deterministic flows reaching a plateau of given flatness.
    Basin(RecipeArgs),
    /// Scalar coupling profiles f(u) and f'(u).
    Coupling(RecipeArgs),
    /// Plateau flatness against steps to converge, with the balanced baseline.
    Badness(RecipeArgs),
    /// Two-layer linear network trained on a diagonal target.
    DeepLinear(RecipeArgs),
    /// Run a recipe described by a TOML config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Output directory (default: out/<recipe>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for ensembles (0 = all cores).
    #[arg(long, env = "RAYLAB_JOBS")]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct RecipeArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    params: RecipeParams,
}

fn recipe_from(command: Command) -> Result<(ExperimentRecipe, Option<usize>), CliError> {
    let (name, args) = match command {
        Command::Run { config, common } => {
            let mut recipe = load_config(&config)?;
            if let Some(out) = common.out {
                recipe.output_dir = out;
            }
            return Ok((recipe, common.jobs));
        }
        Command::FlowField(a) => (RecipeName::FlowField, a),
        Command::Trajectories(a) => (RecipeName::Trajectories, a),
        Command::Cdf(a) => (RecipeName::Cdf, a),
        Command::Scaling(a) => (RecipeName::Scaling, a),
        Command::Basin(a) => (RecipeName::Basin, a),
        Command::Coupling(a) => (RecipeName::Coupling, a),
        Command::Badness(a) => (RecipeName::Badness, a),
        Command::DeepLinear(a) => (RecipeName::DeepLinear, a),
    };
    let out = args
        .common
        .out
        .unwrap_or_else(|| config::default_output_dir(name));
    Ok((
        ExperimentRecipe::new(name, args.params, out)?,
        args.common.jobs,
    ))
}

/// Runs a recipe on a pool of `jobs` threads and writes its outputs.
pub fn execute(recipe: &ExperimentRecipe, jobs: Option<usize>) -> Result<Vec<PathBuf>, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))?;
    let start = Instant::now();
    let out = pool.install(|| recipes::run_recipe(recipe))?;
    output::write_outputs(recipe, &out, start.elapsed())
}

/// Parses `argv` (program name first), runs the recipe and returns the exit code:
/// 0 on success, 2 for usage or configuration errors, 1 when a recipe fails.
pub fn cli_run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let (recipe, jobs) = match recipe_from(cli.command) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    match execute(&recipe, jobs) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            0
        }
        Err(e) => {
            let code = if matches!(e, CliError::Config(_)) {
                2
            } else {
                1
            };
            let log = serde_json::json!({
                "error": e.kind(),
                "recipe": recipe.name.as_str(),
                "message": e.to_string(),
            });
            eprintln!("{log}");
            code
        }
    }
}
