use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dpntk_cli::artifacts::verify_manifest;
use dpntk_cli::commands::{
    cmd_embed, cmd_eval, cmd_generate, cmd_pipeline, cmd_train, CHECKPOINT_FILE, EMBEDDING_FILE,
    SCHEMA_FILE, SYNTHETIC_FILE, TEST_FILE,
};
use dpntk_cli::config::{Epsilon, NtkWidth, Overrides, RunConfig};
use dpntk_cli::{presets, CliError};

/// Differentially private synthetic data from privatized e-NTK mean embeddings.
#[derive(Parser)]
#[command(name = "dpntk", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Embed the training split, privatize it, and write the release.
    Embed(RunArgs),
    /// Train a generator from a released embedding (never reads the dataset).
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Defaults to `<out-dir>/embedding.bin`.
        #[arg(long)]
        embedding: Option<PathBuf>,
    },
    /// Sample a synthetic dataset from a checkpoint.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(short = 'n', long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Defaults to the checkpoint's directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Train classifiers on synthetic data and score them on real test data.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Defaults to `<out-dir>/synthetic.csv`.
        #[arg(long)]
        synthetic: Option<PathBuf>,
        /// Defaults to `<out-dir>/test.csv`.
        #[arg(long)]
        real_test: Option<PathBuf>,
        /// Defaults to `<out-dir>/schema.json`.
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Embed, train, generate and evaluate, then write a manifest.
    Pipeline {
        #[command(flatten)]
        run: RunArgs,
        /// Independent runs at seeds `seed, seed+1, …`, averaged.
        #[arg(long, default_value_t = 1)]
        seeds: usize,
    },
    /// Print a preset config as TOML, or list presets.
    Preset { name: Option<String> },
    /// Check every hash in `<dir>/manifest.json`.
    Verify { dir: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// A number, or `none` for a non-private run.
    #[arg(long)]
    eps: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iter: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    d_code: Option<usize>,
    /// `w` or `w1_w2`.
    #[arg(long)]
    ntk_width: Option<String>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(&self.config)?;
        cfg.apply(&Overrides {
            dataset: self.dataset.clone(),
            eps: self.eps.as_deref().map(str::parse::<Epsilon>).transpose()?,
            seed: self.seed,
            iter: self.iter,
            batch: self.batch,
            lr: self.lr,
            d_code: self.d_code,
            ntk_width: self.ntk_width.as_deref().map(str::parse::<NtkWidth>).transpose()?,
            out_dir: self.out_dir.clone(),
        });
        cfg.validate()?;
        Ok(cfg)
    }
}

fn or_default(p: &Option<PathBuf>, dir: &Path, name: &str) -> PathBuf {
    p.clone().unwrap_or_else(|| dir.join(name))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Embed(args) => {
            let cfg = args.load()?;
            let s = cmd_embed(&cfg)?;
            println!("{}", s.line());
            println!("wrote {}", cfg.out_dir.join(EMBEDDING_FILE).display());
        }
        Command::Train { run, embedding } => {
            let cfg = run.load()?;
            let emb = or_default(&embedding, &cfg.out_dir, EMBEDDING_FILE);
            let s = cmd_train(&cfg, &emb)?;
            println!(
                "trained {} iterations: loss {:.6e} -> {:.6e}",
                s.iterations, s.first_loss, s.final_loss
            );
            println!("wrote {}", cfg.out_dir.join(CHECKPOINT_FILE).display());
        }
        Command::Generate {
            checkpoint,
            n,
            seed,
            out_dir,
        } => {
            let dir = out_dir.unwrap_or_else(|| {
                checkpoint
                    .parent()
                    .map(Path::to_path_buf)
                    .unwrap_or_else(|| PathBuf::from("."))
            });
            let path = cmd_generate(&checkpoint, n, seed, &dir)?;
            println!("wrote {}", path.display());
        }
        Command::Eval {
            run,
            synthetic,
            real_test,
            schema,
        } => {
            let cfg = run.load()?;
            let dir = &cfg.out_dir;
            let report = cmd_eval(
                &or_default(&synthetic, dir, SYNTHETIC_FILE),
                &or_default(&real_test, dir, TEST_FILE),
                &or_default(&schema, dir, SCHEMA_FILE),
                &cfg.eval,
                vec![cfg.seed],
                dir,
            )?;
            print!("{}", report.to_json().map_err(|e| CliError::Core {
                context: "report".into(),
                source: e,
            })?);
        }
        Command::Pipeline { run, seeds } => {
            let cfg = run.load()?;
            let report = cmd_pipeline(&cfg, seeds)?;
            println!("{}", report.csv_header());
            println!("{}", report.csv_row());
        }
        Command::Preset { name: None } => {
            for r in presets::ROWS {
                println!("{:<20} {} ({})", r.name, r.summary(), r.architecture);
            }
        }
        Command::Preset { name: Some(name) } => {
            let row = presets::find(&name)
                .ok_or_else(|| CliError::Validation(format!("no preset named {name:?}")))?;
            print!("{}", row.config().to_toml());
        }
        Command::Verify { dir } => {
            let bad = verify_manifest(&dir)?;
            if !bad.is_empty() {
                return Err(CliError::Validation(format!("hash mismatch: {}", bad.join(", "))));
            }
            println!("all artifacts verified");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
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
