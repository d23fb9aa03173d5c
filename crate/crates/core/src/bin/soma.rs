use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use soma::cli::{self, read_config};

#[derive(Parser)]
#[command(name = "soma", version, about = "Label raw motion-capture point clouds")]
struct Cli {
    /// JSON config for the command; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a labeled corpus into OUT_DIR.
    Synth { out_dir: PathBuf },
    /// Train on TRAIN, validating on VAL; checkpoints and history go to OUT_DIR.
    Train {
        train: PathBuf,
        val: PathBuf,
        out_dir: PathBuf,
        /// Continue from a `last.ckpt`.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Label INPUT with CHECKPOINT, writing OUTPUT and a confidence CSV.
    Label {
        checkpoint: PathBuf,
        input: PathBuf,
        output: PathBuf,
        /// Overwrite points with their tracklet's majority label.
        #[arg(long)]
        tracklets: bool,
        /// argmax, greedy or exact.
        #[arg(long)]
        mode: Option<soma::labeler::DecodeMode>,
    },
    /// Accuracy and F1 of PRED against GT.
    Eval { pred: PathBuf, gt: PathBuf },
    /// Run experiment protocols, writing tables into OUT_DIR.
    Experiment { out_dir: PathBuf },
    /// Per-layer attention span of CHECKPOINT over CORPUS.
    AttentionReport {
        checkpoint: PathBuf,
        corpus: PathBuf,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> soma::Result<()> {
    cli::configure_threads()?;
    let config = cli.config.as_deref();
    match cli.command {
        Command::Synth { out_dir } => {
            let mut cfg: cli::SynthConfig = read_config(config)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let m = cli::cmd_synth(&cfg, &out_dir)?;
            println!("{} frames, seed {}, config {}", m.frames, m.seed, m.config_hash);
        }
        Command::Train {
            train,
            val,
            out_dir,
            resume,
        } => {
            let mut cfg: cli::TrainCommandConfig = read_config(config)?;
            if let Some(s) = cli.seed {
                cfg = cfg.with_seed(s);
            }
            let state = cli::cmd_train(&cfg, &train, &val, &out_dir, resume.as_deref())?;
            println!(
                "{} epochs, best val accuracy {:.4} at epoch {}",
                state.epoch, state.best_val_acc, state.best_epoch
            );
        }
        Command::Label {
            checkpoint,
            input,
            output,
            tracklets,
            mode,
        } => {
            let mut cfg: cli::LabelConfig = read_config(config)?;
            cfg.tracklets |= tracklets;
            if let Some(m) = mode {
                cfg.mode = m;
            }
            let r = cli::cmd_label(&cfg, &checkpoint, &input, &output)?;
            println!(
                "{} frames in {:.2} s ({:.1} Hz), {} inconsistent",
                r.frames,
                r.seconds,
                r.frames as f64 / r.seconds.max(1e-9),
                r.inconsistent_frames.len()
            );
        }
        Command::Eval { pred, gt } => {
            print!("{}", cli::eval_report(&cli::cmd_eval(&pred, &gt)?));
        }
        Command::Experiment { out_dir } => {
            let mut cfg: cli::ExperimentCommandConfig = read_config(config)?;
            if let Some(s) = cli.seed {
                cfg.setup.seed = s;
            }
            for (_, table) in cli::cmd_experiment(&cfg, &out_dir)? {
                println!("{}", table.render());
            }
        }
        Command::AttentionReport { checkpoint, corpus, out } => {
            let cfg: cli::AttentionConfig = read_config(config)?;
            let (_, csv) = cli::cmd_attention_report(&cfg, &checkpoint, &corpus)?;
            match out {
                Some(p) => soma::io::write_text(p, &csv)?,
                None => print!("{csv}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
