//! `moc`: synthetic scenes, target encoding, gradient checks, decoding,
//! linking, streaming, evaluation and overlays from one binary.
//!
//! Exit codes: 0 success, 1 other failure, 2 usage error, 3 malformed input
//! file, 4 validation or dimension error, 5 a numerical check failed.

mod commands;
mod config;
mod overlay;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{DecodeArgs, EncodeArgs, EvalArgs, GradcheckArgs, LinkArgs, PipelineArgs, StreamArgs, SynthArgs};
use config::ConfigArgs;
use overlay::OverlayArgs;

#[derive(Parser)]
#[command(name = "moc", version, about = "Anchor-free action tubelet pipeline")]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    /// Worker threads for per-video parallelism (0 = one per core).
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic annotated videos and their perfect-detector maps.
    Synth(SynthArgs),
    /// Encode ground-truth targets for every clip window of an annotation.
    Encode(EncodeArgs),
    /// Finite-difference check of the loss gradients.
    Gradcheck(GradcheckArgs),
    /// Decode tubelets from window map tensors.
    Decode(DecodeArgs),
    /// Link decoded tubelets into tubes.
    Link(LinkArgs),
    /// Replay a video frame by frame through the online linker.
    Stream(StreamArgs),
    /// Frame- and video-mAP, optionally with error analysis.
    Eval(EvalArgs),
    /// Synthesize, decode, link and evaluate in one run.
    Pipeline(PipelineArgs),
    /// Draw ground-truth and detected boxes into per-frame PNGs.
    Overlay(OverlayArgs),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<commands::CheckFailed>() {
            return 5;
        }
        if let Some(e) = cause.downcast_ref::<moc::Error>() {
            return match e {
                moc::Error::Json(_) | moc::Error::Format(_) => 3,
                moc::Error::Io { .. } => 1,
                _ => 4,
            };
        }
        if cause.is::<serde_json::Error>() {
            return 3;
        }
    }
    1
}

/// Parses `args` (program name first) and runs the command; returns the
/// process exit code.
fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code() as u8;
        }
    };
    let result = (|| {
        let cfg = cli.config.resolve()?;
        eprintln!("config: {}", serde_json::to_string(&cfg)?);
        if let Some(w) = config::even_k_warning(&cfg) {
            eprintln!("warning: {w}");
        }
        let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build()?;
        pool.install(|| match &cli.command {
            Command::Synth(a) => commands::synth(&cfg, a),
            Command::Encode(a) => commands::encode(&cfg, a),
            Command::Gradcheck(a) => commands::gradcheck(&cfg, a),
            Command::Decode(a) => commands::decode(&cfg, a),
            Command::Link(a) => commands::link(&cfg, a),
            Command::Stream(a) => commands::stream(&cfg, a),
            Command::Eval(a) => commands::eval(&cfg, a),
            Command::Pipeline(a) => commands::pipeline(&cfg, a),
            Command::Overlay(a) => overlay::overlay(&cfg, a),
        })
    })();
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    ExitCode::from(run(std::env::args_os()))
}
