use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use shapecorr_cli::benchmark::cmd_benchmark;
use shapecorr_cli::pipeline::{
    cmd_analyze, cmd_corrupt, cmd_evaluate, cmd_infer, cmd_preprocess, cmd_train, export_synthetic,
};
use shapecorr_cli::{load_config, CliError, CliResult, ExperimentConfig};

/// Learned correspondence models for statistical shape analysis.
#[derive(Parser)]
#[command(name = "shapecorr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(short, long)]
    config: PathBuf,
    /// Override a config value, e.g. `--set train.LR=0.001`. Repeatable.
    #[arg(long = "set", value_name = "KEY.PATH=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn load(&self) -> CliResult<ExperimentConfig> {
        load_config(&self.config, &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Align, normalize and split the cohort.
    Preprocess(Common),
    /// Write corrupted input clouds.
    Corrupt(Common),
    /// Write the synthetic cohort (meshes and latents.csv).
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes model.ckpt and history.csv.
    Train(Common),
    /// Predict correspondences for new shapes.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Shape files or directories.
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        /// Also export each correspondence map as CSV.
        #[arg(long)]
        maps: bool,
    },
    /// Surface metrics on the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<output_dir>/model.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compactness, generalization, specificity, mean shape and modes.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<output_dir>/evaluate/correspondences`.
        #[arg(long)]
        correspondences: Option<PathBuf>,
    },
    /// Run the configured experiment grid.
    Benchmark(Common),
}

fn print<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Preprocess(c) => print(&cmd_preprocess(&c.load()?)?),
        Command::Corrupt(c) => {
            let n = cmd_corrupt(&c.load()?)?;
            print(&serde_json::json!({ "shapes_written": n }));
        }
        Command::Generate { common, out } => {
            if !export_synthetic(&common.load()?, &out)? {
                return Err(CliError::Config("dataset.synthetic: not set".into()));
            }
        }
        Command::Train(c) => {
            let cfg = c.load()?;
            let trained = cmd_train(&cfg, &mut |r| {
                eprintln!("epoch {:>5}  train_loss {:.6e}  val_cd {:.6e}", r.epoch, r.train_loss, r.val_cd)
            })?;
            print(&trained.summary);
        }
        Command::Infer {
            common,
            checkpoint,
            input,
            maps,
        } => print(&cmd_infer(&common.load()?, &checkpoint, &input, maps)?),
        Command::Evaluate { common, checkpoint } => {
            let cfg = common.load()?;
            let ckpt = checkpoint.unwrap_or_else(|| cfg.resolved_output_dir().join("model.ckpt"));
            print(&cmd_evaluate(&cfg, &ckpt)?);
        }
        Command::Analyze {
            common,
            correspondences,
        } => {
            let cfg = common.load()?;
            let dir = correspondences
                .unwrap_or_else(|| cfg.resolved_output_dir().join("evaluate").join("correspondences"));
            print(&cmd_analyze(&cfg, &dir)?);
        }
        Command::Benchmark(c) => {
            let rows = cmd_benchmark(&c.load()?, &|r| {
                eprintln!("{}: test CD {:.4} mm^2", r.cell.name(), r.test_cd_mm2)
            })?;
            print(&rows);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
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
