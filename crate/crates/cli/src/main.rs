//! `hysense`: renders phantom frames, runs the device simulator, streams
//! sessions, and trains and evaluates the analysis models.

mod commands;
mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};

use commands::CliError;

#[derive(Debug, Parser)]
#[command(name = "hysense", version, about = "Synthetic tactile polyp sensing pipeline")]
pub struct Cli {
    /// Master seed; every random stream is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Progress output on stderr.
    #[arg(long, global = true)]
    pub verbose: bool,
    /// key=value file supplying defaults for any long flag of the command.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Phantom catalog rendering.
    #[command(subcommand)]
    Phantom(PhantomCmd),
    /// Edge-device session simulation.
    #[command(subcommand)]
    Device(DeviceCmd),
    /// Datagram streaming of recorded sessions.
    #[command(subcommand)]
    Stream(StreamCmd),
    /// Crop, resize and augment rendered frames into a training dataset.
    Augment(AugmentArgs),
    /// Stratified k-fold training of the polyp-type classifier.
    Train(TrainArgs),
    /// Pooled evaluation of trained fold models on the held-out split.
    Eval(EvalArgs),
    /// t-SNE stiffness embedding per (type, variation) batch.
    Embed(EmbedArgs),
    /// End-to-end runs.
    #[command(subcommand)]
    Pipeline(PipelineCmd),
}

#[derive(Debug, Subcommand)]
pub enum PhantomCmd {
    /// Render every catalog phantom at each force.
    Gen(GenArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FrameFormat {
    Png,
    Raw,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated forces in newtons.
    #[arg(long, value_delimiter = ',', default_value = "0.8")]
    pub forces: Vec<f64>,
    #[arg(long, value_enum, default_value = "png")]
    pub format: FrameFormat,
}

#[derive(Debug, Subcommand)]
pub enum DeviceCmd {
    /// Replay a switch script and record a session directory.
    Run(DeviceRunArgs),
}

#[derive(Debug, Args)]
pub struct DeviceRunArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Event script: one `<timestamp_us> <RISING|FALLING>` per line.
    #[arg(long)]
    pub script: PathBuf,
    /// Phantom pressed by the simulated source, e.g. IIc-2-M1.
    #[arg(long, default_value = "Ip-1-M1")]
    pub phantom: String,
    /// Contact intervals `start_s:end_s:force_n`, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "1.0:2.0:0.8")]
    pub contact: Vec<String>,
    /// Replay frames from an existing session directory instead of rendering.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub fps: u32,
    #[arg(long, default_value_t = 1)]
    pub session_id: u32,
    /// Mean absolute difference from the baseline that counts as contact.
    #[arg(long, default_value_t = 5.0)]
    pub threshold: f64,
    #[arg(long, default_value_t = 3)]
    pub consecutive: usize,
    #[arg(long, default_value_t = 3)]
    pub baseline: usize,
    #[arg(long, default_value_t = 10_000)]
    pub max_frames: usize,
}

#[derive(Debug, Subcommand)]
pub enum StreamCmd {
    /// Send a session directory to a receiver over UDP.
    Send(SendArgs),
    /// Receive one session over UDP and write it as a session directory.
    Recv(RecvArgs),
}

#[derive(Debug, Args)]
pub struct SendArgs {
    #[arg(long)]
    pub session: PathBuf,
    /// Receiver address, host:port.
    #[arg(long)]
    pub dest: String,
    /// Drop probability of the in-process lossy channel placed before the socket.
    #[arg(long, default_value_t = 0.0)]
    pub sim_loss: f64,
    /// Maximum reordering distance (packets) of the lossy channel.
    #[arg(long, default_value_t = 0)]
    pub reorder: usize,
    /// Pause after every 8 packets, in microseconds.
    #[arg(long, default_value_t = 200)]
    pub pace_us: u64,
}

#[derive(Debug, Args)]
pub struct RecvArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// UDP port; 0 picks a free port (reported on stderr).
    #[arg(long)]
    pub listen: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: String,
    /// Give up after this long without a datagram.
    #[arg(long, default_value_t = 5000)]
    pub idle_timeout_ms: u64,
    /// Drop probability applied to arriving datagrams.
    #[arg(long, default_value_t = 0.0)]
    pub sim_loss: f64,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Manifest written by `phantom gen`.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub factor: usize,
    /// Source frames are the rows rendered at this force.
    #[arg(long, default_value_t = 0.8)]
    pub force: f64,
    /// Fraction of the smallest class held out per class for evaluation.
    #[arg(long, default_value_t = 0.25)]
    pub eval_fraction: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Augmented manifest; rows with split=train are used.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub folds: usize,
    #[arg(long, default_value_t = 15)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    /// Network input side in pixels (64 for the fast desk-scale mode).
    #[arg(long, default_value_t = 224)]
    pub input_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.01)]
    pub final_lr: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Augmented manifest; rows with split=eval are used.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory holding the fold*.tpnw files written by `train`.
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Manifest with every material at 0.2, 0.4, 0.6 and 0.8 N.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5.0)]
    pub perplexity: f64,
    #[arg(long, default_value_t = 5000)]
    pub iters: usize,
    #[arg(long, default_value_t = 200.0)]
    pub lr: f64,
}

#[derive(Debug, Subcommand)]
pub enum PipelineCmd {
    /// Generate, stream, augment, train, evaluate and embed in one run.
    All(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Packet loss of the in-process channel the frames travel through.
    #[arg(long, default_value_t = 0.0)]
    pub sim_loss: f64,
    #[arg(long, default_value_t = 0)]
    pub reorder: usize,
    #[arg(long, default_value_t = 64)]
    pub input_size: usize,
    #[arg(long, default_value_t = 60)]
    pub epochs: usize,
    #[arg(long, default_value_t = 4)]
    pub folds: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 5.0)]
    pub perplexity: f64,
    #[arg(long, default_value_t = 5000)]
    pub iters: usize,
    #[arg(long, default_value_t = 200.0)]
    pub tsne_lr: f64,
}

fn run(argv: Vec<String>) -> Result<(), CliError> {
    let argv = config::apply_config_file(argv, &Cli::command())?;
    let cli = Cli::try_parse_from(argv).map_err(|e| {
        let kind = e.kind();
        if matches!(kind, clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) {
            CliError::Info(e.to_string())
        } else {
            CliError::Usage(e.render().to_string())
        }
    })?;
    let ctx = commands::Ctx { seed: cli.seed, verbose: cli.verbose };
    match cli.command {
        Command::Phantom(PhantomCmd::Gen(a)) => commands::phantom_gen(&ctx, &a).map(drop),
        Command::Device(DeviceCmd::Run(a)) => commands::device_run(&ctx, &a),
        Command::Stream(StreamCmd::Send(a)) => commands::stream_send(&ctx, &a),
        Command::Stream(StreamCmd::Recv(a)) => commands::stream_recv(&ctx, &a),
        Command::Augment(a) => commands::augment(&ctx, &a).map(drop),
        Command::Train(a) => commands::train(&ctx, &a).map(drop),
        Command::Eval(a) => commands::eval(&ctx, &a).map(drop),
        Command::Embed(a) => commands::embed(&ctx, &a).map(drop),
        Command::Pipeline(PipelineCmd::All(a)) => pipeline::pipeline_all(&ctx, &a).map(drop),
    }
}

fn main() -> ExitCode {
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            match &e {
                CliError::Info(msg) => print!("{msg}"),
                CliError::Usage(msg) => eprint!("{}", if msg.ends_with('\n') { msg.clone() } else { format!("{msg}\n") }),
                other => eprintln!("hysense: {other}"),
            }
            ExitCode::from(code)
        }
    }
}
