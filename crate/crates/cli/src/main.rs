//! `segaw`: batch pipeline for unsupervised word segmentation, segment
//! embedding and query-by-example search.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use segaw_core::Error;

#[derive(Parser)]
#[command(name = "segaw", version, about = "Joint word segmentation and segment embedding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// Seed for every random choice the command makes.
    #[arg(long)]
    pub seed: u64,
    /// `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

/// Which utterances to process: the ids listed in a manifest, or every
/// feature file in the directory.
#[derive(Args, Clone)]
pub struct Inputs {
    /// Directory of `<id>.sgaw` feature files.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Clone)]
pub struct Model {
    /// Trained segmental autoencoder checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// GAS checkpoint; needed when the model was trained with GAS input.
    #[arg(long)]
    pub gas: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with known word boundaries.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Output directory; receives `features/`, `train.manifest` and `test.manifest`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute MFCC features from 16 kHz mono PCM-16 WAV files.
    Featurize {
        #[command(flatten)]
        common: Common,
        #[arg(required = true)]
        wavs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Skip per-utterance mean and variance normalization.
        #[arg(long)]
        no_cmvn: bool,
    },
    /// Train the GAS autoencoder.
    TrainGas {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch metrics log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Train the segmental autoencoder by alternating reconstruction and
    /// policy-gradient phases.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        gas: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Per-iteration metrics log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Greedy word boundaries per utterance.
    Segment {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment and embed documents into an index.
    Embed {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank indexed documents against a spoken query.
    Search {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        index: PathBuf,
        /// Query feature file.
        #[arg(long)]
        query: PathBuf,
        /// Results file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Boundary precision, recall and F1 against a reference manifest.
    EvalSeg {
        #[command(flatten)]
        common: Common,
        /// Hypothesis: `segment` output or a manifest.
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean average precision of query-by-example search.
    EvalStd {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        index: PathBuf,
        /// Feature directory holding both splits.
        #[arg(long)]
        features: PathBuf,
        /// Split the queries are cut from.
        #[arg(long)]
        train_manifest: PathBuf,
        /// Split the index was built from.
        #[arg(long)]
        test_manifest: PathBuf,
        /// Also score the frame-level DTW baseline.
        #[arg(long)]
        dtw: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare every analytic gradient with finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { common, out } => commands::synth(&common, &out),
        Command::Featurize {
            common,
            wavs,
            out,
            no_cmvn,
        } => commands::featurize(&common, &wavs, &out, !no_cmvn),
        Command::TrainGas { common, inputs, out, log } => commands::train_gas(&common, &inputs, &out, log.as_deref()),
        Command::Train {
            common,
            inputs,
            gas,
            out,
            log,
        } => commands::train(&common, &inputs, gas.as_deref(), &out, log.as_deref()),
        Command::Segment {
            common,
            inputs,
            model,
            out,
        } => commands::segment(&common, &inputs, &model, &out),
        Command::Embed {
            common,
            inputs,
            model,
            out,
        } => commands::embed(&common, &inputs, &model, &out),
        Command::Search {
            common,
            model,
            index,
            query,
            out,
        } => commands::search(&common, &model, &index, &query, out.as_deref()),
        Command::EvalSeg {
            common,
            hyp,
            reference,
            out,
        } => commands::eval_seg(&common, &hyp, &reference, out.as_deref()),
        Command::EvalStd {
            common,
            model,
            index,
            features,
            train_manifest,
            test_manifest,
            dtw,
            out,
        } => commands::eval_std(
            &common,
            &model,
            &index,
            &features,
            &train_manifest,
            &test_manifest,
            dtw,
            out.as_deref(),
        ),
        Command::Gradcheck { common, out } => commands::gradcheck(&common, out.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
