use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use isf::ablation::AblationSpec;
use isf::cli::{self, CodeRef, PathEnd, TargetSpec};
use isf::config::ExperimentConfig;
use isf::{Error, Result};

#[derive(Parser)]
#[command(name = "isf", version, about = "Attribute editing in the latent space of a frozen generator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON, validated against the bundled schema).
    #[arg(long, short)]
    config: PathBuf,
}

#[derive(Args)]
struct Target {
    /// Full target bit list, e.g. `1,0,1,0`.
    #[arg(long, conflicts_with = "flip")]
    targets: Option<String>,
    /// Attributes to flip relative to the source labels, e.g. `0,2`.
    #[arg(long, value_delimiter = ',')]
    flip: Vec<usize>,
}

impl Target {
    fn spec(&self) -> Result<Option<TargetSpec>> {
        match (&self.targets, self.flip.is_empty()) {
            (Some(t), _) => TargetSpec::parse_bits(t).map(Some),
            (None, false) => Ok(Some(TargetSpec::Flip(self.flip.clone()))),
            (None, true) => Ok(None),
        }
    }
}

#[derive(Args)]
struct Source {
    /// Dataset row of the source code.
    #[arg(long, conflicts_with = "code_file")]
    code_index: Option<usize>,
    /// JSON array holding the source code.
    #[arg(long)]
    code_file: Option<PathBuf>,
}

impl Source {
    fn code(&self) -> Result<CodeRef> {
        match (&self.code_index, &self.code_file) {
            (Some(i), _) => Ok(CodeRef::Index(*i)),
            (None, Some(p)) => Ok(CodeRef::File(p.clone())),
            (None, None) => Err(Error::InvalidArgument("give --code-index or --code-file".into())),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample and label latent codes.
    BuildDataset(Common),
    /// Train the style function.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from this checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Edit one code toward target attributes, sampling several modes.
    Edit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        target: Target,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render a linear path between two codes, or between a code and its edit.
    Interpolate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        source: Source,
        /// Dataset row of the destination code.
        #[arg(long)]
        to_index: Option<usize>,
        #[command(flatten)]
        target: Target,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score a checkpoint with the evaluation protocol.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Retrain and score ablation variants.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Ablation spec (JSON).
        #[arg(long)]
        spec: PathBuf,
    },
}

fn dispatch(cmd: Command) -> Result<serde_json::Value> {
    let load = |c: &Common| ExperimentConfig::load(&c.config);
    match cmd {
        Command::BuildDataset(c) => cli::cmd_build_dataset(&load(&c)?),
        Command::Train { common, resume } => cli::cmd_train(&load(&common)?, resume.as_deref()),
        Command::Edit {
            common,
            checkpoint,
            source,
            target,
            count,
            seed,
        } => {
            let cfg = load(&common)?;
            let t = target
                .spec()?
                .ok_or_else(|| Error::InvalidArgument("give --targets or --flip".into()))?;
            cli::cmd_edit(&cfg, checkpoint.as_deref(), &source.code()?, &t, count, seed)
        }
        Command::Interpolate {
            common,
            checkpoint,
            source,
            to_index,
            target,
            steps,
            seed,
        } => {
            let cfg = load(&common)?;
            let end = match (to_index, target.spec()?) {
                (Some(j), None) => PathEnd::Code(CodeRef::Index(j)),
                (None, Some(t)) => PathEnd::Edit(t),
                _ => {
                    return Err(Error::InvalidArgument(
                        "give exactly one of --to-index or --targets/--flip".into(),
                    ))
                }
            };
            cli::cmd_interpolate(&cfg, checkpoint.as_deref(), &source.code()?, &end, steps, seed)
        }
        Command::Evaluate { common, checkpoint } => cli::cmd_evaluate(&load(&common)?, checkpoint.as_deref()),
        Command::Ablate { common, spec } => {
            let cfg = load(&common)?;
            let text = std::fs::read_to_string(&spec)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", spec.display())))?;
            cli::cmd_ablate(&cfg, &AblationSpec::from_json_str(&text)?)
        }
    }
}

fn main() -> ExitCode {
    let args = Cli::parse();
    match dispatch(args.command) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", cli::error_document(&e));
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
