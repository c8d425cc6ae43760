//! `mdl` command-line driver.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mdl_core::config::{self, ExperimentConfig};
use mdl_core::error::{exit_code, Error};
use mdl_core::pipeline::{self, ExportFormat, RunOptions, Stage};

#[derive(Parser)]
#[command(name = "mdl", version, about = "Manifold distance learning pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the class manifolds.
    Gen(Common),
    /// Build the augmented training and test sets.
    Augment(Common),
    /// Train the configured models.
    Train(Common),
    /// Run the PGD robustness sweep.
    Attack(Common),
    /// Compute metrics and decision slices.
    Eval(Common),
    /// Run several stages in order (all by default).
    Run {
        #[command(flatten)]
        common: Common,
        /// Comma-separated subset of gen,augment,train,attack,eval.
        #[arg(long, value_delimiter = ',')]
        stages: Option<Vec<String>>,
    },
    /// List built-in presets, or print one.
    Presets { name: Option<String> },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Bin,
    Csv,
}

#[derive(Args)]
struct Common {
    /// Config file, or `preset:NAME`.
    #[arg(long, short)]
    config: String,
    /// Re-run stages even when their outputs are up to date.
    #[arg(long)]
    force: bool,
    #[arg(long)]
    workdir: Option<PathBuf>,
    /// Override every stage seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write PPM images of the decision slices.
    #[arg(long)]
    emit_ppm: bool,
    /// `csv` additionally exports datasets as CSV.
    #[arg(long, value_enum, default_value = "bin")]
    format: Format,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = config::load(&self.config)?;
        if let Some(dir) = &self.workdir {
            cfg.workdir = dir.clone();
        }
        if let Some(seed) = self.seed {
            cfg.override_seed(seed);
        }
        cfg.eval.emit_ppm |= self.emit_ppm;
        Ok(cfg)
    }

    fn options(&self) -> RunOptions {
        RunOptions {
            force: self.force,
            format: match self.format {
                Format::Bin => ExportFormat::Bin,
                Format::Csv => ExportFormat::Csv,
            },
        }
    }
}

fn run(common: &Common, stages: &[Stage]) -> Result<(), Error> {
    let cfg = common.load()?;
    let reports = pipeline::run_pipeline(&cfg, stages, &common.options())?;
    for r in reports {
        let state = if r.skipped { "up to date" } else { "done" };
        println!("{}: {state}", r.stage.name());
        for p in r.outputs {
            println!("  {}", p.display());
        }
    }
    Ok(())
}

fn parse_stages(names: &[String]) -> Result<Vec<Stage>, Error> {
    names
        .iter()
        .map(|s| {
            Stage::parse(s.trim()).ok_or_else(|| {
                Error::Config(config::ConfigError::Inconsistent(format!("unknown stage '{s}'")))
            })
        })
        .collect()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    pipeline::init_threads_from_env();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen(c) => run(c, &[Stage::Gen]),
        Command::Augment(c) => run(c, &[Stage::Augment]),
        Command::Train(c) => run(c, &[Stage::Train]),
        Command::Attack(c) => run(c, &[Stage::Attack]),
        Command::Eval(c) => run(c, &[Stage::Eval]),
        Command::Run { common, stages } => match stages {
            Some(names) => parse_stages(names).and_then(|s| run(common, &s)),
            None => run(common, &Stage::ALL),
        },
        Command::Presets { name: None } => {
            for (name, _) in config::PRESETS {
                println!("{name}");
            }
            Ok(())
        }
        Command::Presets { name: Some(name) } => config::preset_text(name).map(|t| print!("{t}")).map_err(Error::from),
    };
    match result {
        Ok(()) => ExitCode::from(exit_code::SUCCESS as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
