mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use aidnet_core::Error;
use config::{Config, SEED_ENV};

/// Coronary calcium detection from scan/rescan CT pairs.
#[derive(Parser, Debug)]
#[command(name = "aidnet", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config file and AIDNET_SEED.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scan/rescan cohort.
    PhantomGen {
        #[command(flatten)]
        common: Common,
        /// Control, mild and severe counts, e.g. `100,77,34`.
        #[arg(long)]
        counts: Option<String>,
        /// Volume shape `DxHxW`.
        #[arg(long)]
        shape: Option<String>,
        #[arg(long)]
        cohort_dir: Option<PathBuf>,
    },
    /// Preprocess a cohort into network inputs and assign the split.
    Preprocess {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cohort_dir: Option<PathBuf>,
        #[arg(long)]
        prep_dir: Option<PathBuf>,
        /// Target shape `DxHxW`.
        #[arg(long)]
        shape: Option<String>,
    },
    /// Train on the prepared train/val partitions.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        prep_dir: Option<PathBuf>,
        /// `aid`, `id` or `single-path`.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        margin: Option<f64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Confusion matrices, metrics and ROC for one partition.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        prep_dir: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// `train`, `val`, `test` or `all`.
        #[arg(long)]
        partition: Option<String>,
    },
    /// Grad-CAM heatmap and slice overlays for one subject.
    Gradcam {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        prep_dir: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        subject: Option<String>,
        /// Target class; defaults to the predicted one.
        #[arg(long = "class")]
        class: Option<usize>,
    },
}

enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numeric() {
            Failure::Numeric(e.to_string())
        } else if matches!(e, Error::InvalidArgument(_)) {
            Failure::Usage(e.to_string())
        } else {
            Failure::Data(e.to_string())
        }
    }
}

struct Flags(Vec<(&'static str, String)>);

impl Flags {
    fn new(common: &Common) -> Flags {
        let mut f = Flags(Vec::new());
        f.add("seed", common.seed.as_ref());
        f.add("out_dir", common.out_dir.as_ref().map(|p| p.display()));
        f
    }

    fn add(&mut self, key: &'static str, v: Option<impl ToString>) -> &mut Self {
        if let Some(v) = v {
            self.0.push((key, v.to_string()));
        }
        self
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let resolve = |common: &Common, flags: &Flags| {
        let env = std::env::var(SEED_ENV).ok();
        Config::resolve(common.config.as_deref(), env.as_deref(), &flags.0).map_err(Failure::Usage)
    };
    let disp = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    match &cli.command {
        Command::PhantomGen {
            common,
            counts,
            shape,
            cohort_dir,
        } => {
            let mut f = Flags::new(common);
            f.add("counts", counts.as_ref())
                .add("shape", shape.as_ref())
                .add("cohort_dir", disp(cohort_dir));
            commands::phantom_gen(&resolve(common, &f)?)?;
        }
        Command::Preprocess {
            common,
            cohort_dir,
            prep_dir,
            shape,
        } => {
            let mut f = Flags::new(common);
            f.add("cohort_dir", disp(cohort_dir))
                .add("prep_dir", disp(prep_dir))
                .add("shape", shape.as_ref());
            commands::preprocess(&resolve(common, &f)?)?;
        }
        Command::Train {
            common,
            prep_dir,
            mode,
            lambda,
            margin,
            lr,
            epochs,
            batch_size,
        } => {
            let mut f = Flags::new(common);
            f.add("prep_dir", disp(prep_dir))
                .add("mode", mode.as_ref())
                .add("lambda", lambda.map(|v| format!("{v:?}")))
                .add("margin", margin.map(|v| format!("{v:?}")))
                .add("lr", lr.map(|v| format!("{v:?}")))
                .add("epochs", epochs.as_ref())
                .add("batch_size", batch_size.as_ref());
            commands::train_cmd(&resolve(common, &f)?)?;
        }
        Command::Eval {
            common,
            prep_dir,
            checkpoint,
            partition,
        } => {
            let mut f = Flags::new(common);
            f.add("prep_dir", disp(prep_dir))
                .add("checkpoint", disp(checkpoint))
                .add("partition", partition.as_ref());
            print!("{}", commands::eval_cmd(&resolve(common, &f)?)?);
        }
        Command::Gradcam {
            common,
            prep_dir,
            checkpoint,
            subject,
            class,
        } => {
            let mut f = Flags::new(common);
            f.add("prep_dir", disp(prep_dir))
                .add("checkpoint", disp(checkpoint))
                .add("subject", subject.as_ref())
                .add("class", class.as_ref());
            print!("{}", commands::gradcam_cmd(&resolve(common, &f)?)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
