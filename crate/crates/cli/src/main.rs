//! `hwt`: build models, compute signatures and run verification experiments.
//!
//! Exit codes: 0 success, 2 usage error, 3 data or I/O error, 4 model mismatch.

mod commands;
mod tables;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hwtemporal::hwcore::PoolingDescriptor;

use commands::*;

/// Misuse of the command line discovered after parsing.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Parser)]
#[command(name = "hwt", version, about = "Hierarchical template models with temporal pooling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic video and pair dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value = "pooling")]
        preset: Preset,
        /// Full generator configuration as JSON (overrides the preset).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        train_ids: Option<usize>,
        #[arg(long)]
        test_ids: Option<usize>,
        /// Pairs per split.
        #[arg(long)]
        pairs: Option<usize>,
        #[arg(long)]
        seconds: Option<f64>,
    },
    /// Build a layer-2 model bundle from images or video frames.
    BuildL2 {
        #[arg(long, conflicts_with = "videos")]
        images: Option<PathBuf>,
        #[arg(long)]
        videos: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, required_unless_present = "dump_default_config")]
        seed: Option<u64>,
        #[arg(long, required_unless_present = "dump_default_config")]
        out: Option<PathBuf>,
        /// Print the default build configuration and exit.
        #[arg(long)]
        dump_default_config: bool,
    },
    /// Add temporally pooled layer 3 to a bundle.
    BuildL3 {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        videos: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Complex-cell window in seconds.
        #[arg(long)]
        window: f64,
        #[arg(long, value_enum, default_value = "even")]
        placement: PlacementArg,
        /// Windows per video for fixed placement.
        #[arg(long)]
        m: Option<usize>,
        /// Use only the first S seconds of each video.
        #[arg(long)]
        truncate: Option<f64>,
        #[arg(long, default_value = "mean")]
        pooling: PoolingDescriptor,
        /// Scramble frame-to-cell assignment (control condition).
        #[arg(long, value_enum)]
        scramble: Option<ScopeArg>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Encode images listed in a CSV into signatures.
    Signature {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Output layer; defaults to the deepest layer in the bundle.
        #[arg(long)]
        layer: Option<u8>,
    },
    /// Fit a threshold on training pairs and score test pairs.
    Verify {
        #[arg(long)]
        signatures: PathBuf,
        #[arg(long)]
        train_pairs: PathBuf,
        #[arg(long)]
        test_pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Split test pairs into K folds and report mean and deviation.
        #[arg(long)]
        folds: Option<usize>,
        /// Also write the test ROC curve.
        #[arg(long)]
        roc: Option<PathBuf>,
    },
    /// Learn fusion weights over several signature tables and verify.
    Fuse {
        #[arg(long, required = true)]
        signatures: Vec<PathBuf>,
        #[arg(long)]
        train_pairs: PathBuf,
        #[arg(long)]
        test_pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Verification accuracy as a function of pooling window.
    SweepPooling {
        #[command(flatten)]
        inputs: InputArgs,
        /// Window lengths in seconds; `none` means no pooling.
        #[arg(long, default_value = "none,2,10,60")]
        windows: String,
        #[arg(long)]
        truncate: Option<f64>,
        #[arg(long, default_value = "mean")]
        pooling: PoolingDescriptor,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pooling versus no pooling versus scrambled pooling.
    ScrambleControl {
        #[command(flatten)]
        inputs: InputArgs,
        #[arg(long, default_value_t = 10.0)]
        window: f64,
        #[arg(long)]
        truncate: Option<f64>,
        #[arg(long, default_value = "mean")]
        pooling: PoolingDescriptor,
        #[arg(long, value_enum, default_value = "global")]
        scope: ScopeArg,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score images with the L-p gate and report AUC per exponent.
    Gate {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        positives: PathBuf,
        #[arg(long)]
        negatives: PathBuf,
        #[arg(long, default_value = "1,2,4,8,16")]
        ps: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        auc_out: PathBuf,
    },
    /// Linear SVM on signatures.
    #[command(subcommand)]
    Classify(ClassifyCommand),
}

#[derive(Args)]
struct InputArgs {
    /// Synthetic dataset directory supplying any missing input below.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    videos: Option<PathBuf>,
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    train_pairs: Option<PathBuf>,
    #[arg(long)]
    test_pairs: Option<PathBuf>,
    #[arg(long)]
    bundle: Option<PathBuf>,
    /// Use raw pixels in place of layer 2.
    #[arg(long)]
    pixel: bool,
}

impl InputArgs {
    fn split(self) -> anyhow::Result<(TrialInputs, Encoder)> {
        let enc = Encoder::open(self.bundle.as_deref(), self.pixel)?;
        Ok((
            TrialInputs {
                dataset: self.dataset,
                videos: self.videos,
                images: self.images,
                train_pairs: self.train_pairs,
                test_pairs: self.test_pairs,
            },
            enc,
        ))
    }
}

#[derive(Subcommand)]
enum ClassifyCommand {
    Train {
        #[arg(long)]
        signatures: PathBuf,
        /// `name,label` rows with exactly two classes.
        #[arg(long, conflicts_with = "pairs")]
        labels: Option<PathBuf>,
        /// Pair file; trains same/different on |a - b|.
        #[arg(long)]
        pairs: Option<PathBuf>,
        /// Seeded subset of N examples per class.
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(long, default_value_t = 1e-4)]
        lambda: f64,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        signatures: PathBuf,
        #[arg(long, conflicts_with = "pairs")]
        labels: Option<PathBuf>,
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Synth {
            out,
            seed,
            preset,
            config,
            train_ids,
            test_ids,
            pairs,
            seconds,
        } => synth(SynthArgs {
            out,
            seed,
            preset,
            config,
            train_ids,
            test_ids,
            pairs,
            seconds,
        }),
        Command::BuildL2 {
            dump_default_config: true,
            ..
        } => default_l2_config(),
        Command::BuildL2 {
            images,
            videos,
            config,
            seed,
            out,
            ..
        } => build_l2(BuildL2Args {
            images,
            videos,
            config,
            seed: seed.expect("required by clap"),
            out: out.expect("required by clap"),
        }),
        Command::BuildL3 {
            bundle,
            videos,
            out,
            window,
            placement,
            m,
            truncate,
            pooling,
            scramble,
            seed,
        } => build_l3(BuildL3Args {
            bundle,
            videos,
            out,
            window,
            placement,
            m,
            truncate,
            pooling,
            scramble,
            seed,
        }),
        Command::Signature {
            bundle,
            images,
            out,
            layer,
        } => signature(SignatureArgs {
            bundle,
            images,
            out,
            layer,
        }),
        Command::Verify {
            signatures,
            train_pairs,
            test_pairs,
            out,
            folds,
            roc,
        } => verify(VerifyArgs {
            signatures,
            train_pairs,
            test_pairs,
            out,
            folds,
            roc,
        }),
        Command::Fuse {
            signatures,
            train_pairs,
            test_pairs,
            out,
            folds,
        } => fuse_cmd(FuseArgs {
            signatures,
            train_pairs,
            test_pairs,
            out,
            folds,
        }),
        Command::SweepPooling {
            inputs,
            windows,
            truncate,
            pooling,
            out,
        } => {
            let (inputs, encoder) = inputs.split()?;
            sweep_pooling(SweepArgs {
                inputs,
                encoder,
                windows,
                truncate,
                pooling,
                out,
            })
        }
        Command::ScrambleControl {
            inputs,
            window,
            truncate,
            pooling,
            scope,
            seed,
            out,
        } => {
            let (inputs, encoder) = inputs.split()?;
            scramble(ScrambleArgs {
                inputs,
                encoder,
                window,
                truncate,
                pooling,
                scope,
                seed,
                out,
            })
        }
        Command::Gate {
            bundle,
            positives,
            negatives,
            ps,
            out,
            auc_out,
        } => gate(GateArgs {
            bundle,
            positives,
            negatives,
            ps,
            out,
            auc_out,
        }),
        Command::Classify(ClassifyCommand::Train {
            signatures,
            labels,
            pairs,
            per_class,
            lambda,
            epochs,
            seed,
            out,
        }) => classify_train(ClassifyTrainArgs {
            signatures,
            labels,
            pairs,
            per_class,
            lambda,
            epochs,
            seed,
            out,
        }),
        Command::Classify(ClassifyCommand::Predict {
            model,
            signatures,
            labels,
            pairs,
            out,
        }) => classify_predict(ClassifyPredictArgs {
            model,
            signatures,
            labels,
            pairs,
            out,
        }),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if let Some(hwtemporal::Error::ModelMismatch(_)) = cause.downcast_ref::<hwtemporal::Error>() {
            return 4;
        }
    }
    3
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
