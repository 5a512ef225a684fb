//! `bearing`: dataset generation, training, evaluation and single-signal diagnosis.
//!
//! Exit codes: 0 ok, 2 config, 3 I/O, 4 training data, 5 missing reference.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use bearing_core::Error;
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "bearing", version, about = "Bearing fault diagnosis from vibration signals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a dataset, its manifest and the fault-free reference store.
    GenData {
        /// Rig description file, one `key=value ...` line per rig.
        #[arg(long)]
        rigs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// One-second segments per (rig, class).
        #[arg(long, default_value_t = 60)]
        segments: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Frequency components of the stored references.
        #[arg(long, default_value_t = 6000)]
        nf: usize,
    },
    /// Train a classifier on the dataset's train split.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// `key=value` run configuration.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Input channels: full, no_ref_no_res, no_res, no_ref, time_domain.
        #[arg(long, default_value = "full")]
        variant: String,
    },
    /// Score a checkpoint on the test split. With --holdout or --ablation a fresh
    /// model of the checkpoint's architecture is trained first.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Comma-separated source tags kept out of training.
        #[arg(long, value_delimiter = ',')]
        holdout: Vec<String>,
        #[arg(long)]
        ablation: Option<String>,
        #[arg(long)]
        dump_features: Option<PathBuf>,
        /// Run configuration for retraining (defaults to the desk settings).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Confusion matrix output (defaults to `<data>/confusion.tsv`).
        #[arg(long)]
        confusion: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Classify one recording and answer a task prompt about it.
    Diagnose {
        /// VSEG recording; its first second is used.
        #[arg(long)]
        signal: PathBuf,
        #[arg(long)]
        condition: usize,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// A anomaly detection, B diagnosis, C maintenance, D risk.
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build the alignment layer from a checkpoint and fault descriptions.
    AlignInit {
        #[arg(long)]
        ckpt: PathBuf,
        /// One description per class, in class order (bundled set if omitted).
        #[arg(long)]
        descriptions: Option<PathBuf>,
        #[arg(long, default_value_t = bearing_core::alignment::DEFAULT_TAU)]
        tau: usize,
        #[arg(long, default_value_t = 64)]
        hidden: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Energy retained and model size for a sweep of component counts.
    Inspect {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "6000,12000,24000,48000")]
        nf_sweep: Vec<usize>,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Label { .. } | Error::Shape(_) | Error::FrequencyRange { .. } => 2,
        Error::Io(_) | Error::Persistence(_) | Error::Format(_) => 3,
        Error::Data(_)
        | Error::DegenerateSegment
        | Error::TooShort { .. }
        | Error::SegmentBounds { .. }
        | Error::RejectedReference(_) => 4,
        Error::MissingReference { .. } => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData {
            rigs,
            out,
            segments,
            seed,
            nf,
        } => commands::gen_data(&rigs, &out, segments, seed, nf),
        Command::Train {
            data,
            config,
            out,
            seed,
            variant,
        } => commands::train(&data, &config, &out, seed, &variant),
        Command::Eval {
            data,
            ckpt,
            holdout,
            ablation,
            dump_features,
            config,
            confusion,
            seed,
        } => commands::eval(commands::EvalArgs {
            data,
            ckpt,
            holdout,
            ablation,
            dump_features,
            config,
            confusion,
            seed,
        }),
        Command::Diagnose {
            signal,
            condition,
            store,
            ckpt,
            task,
            seed,
        } => commands::diagnose(&signal, condition, &store, &ckpt, &task, seed),
        Command::AlignInit {
            ckpt,
            descriptions,
            tau,
            hidden,
            seed,
            out,
        } => commands::align_init(&ckpt, descriptions.as_deref(), tau, hidden, seed, &out),
        Command::Inspect { data, nf_sweep } => commands::inspect(&data, &nf_sweep),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
