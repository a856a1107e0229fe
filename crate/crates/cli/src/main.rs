//! `tlp`: data generation, prompt generation, training, evaluation,
//! single-case synthesis and the HTTP service.
//!
//! Exit codes: 0 success, 1 invalid arguments or configuration, 2 runtime
//! failure. Errors go to stderr prefixed with `error:`.

mod config;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use tlp_core::dataset::{generate_dataset, Dataset, Split};
use tlp_core::fpg::{generate_prompt_traced, PromptConfig};
use tlp_core::inference::{copy_baseline, evaluate_split, split_name, synthesize_case, PromptMode};
use tlp_core::metrics::{case_metrics, MetricReport};
use tlp_core::model::{Checkpoint, GeneratorConfig};
use tlp_core::phantom::PhantomSpec;
use tlp_core::trainer::{train, TrainConfig};
use tlp_core::{fsutil, pgm, Error};

#[derive(Parser, Debug)]
#[command(name = "tlp", version, about = "Prompt-conditioned multi-contrast synthesis on phantom data")]
#[command(after_help = "Any subcommand accepts --config FILE with `key = value` lines; explicit flags win.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a phantom dataset with train/val/test splits.
    GenData(GenData),
    /// Draw one prompt from a binary mask.
    Fpg(Fpg),
    /// Train the generator and discriminator.
    Train(Box<Train>),
    /// Score a checkpoint on a dataset split.
    Eval(Eval),
    /// Synthesize a single case.
    Synth(Synth),
    /// Serve the HTTP API.
    Serve(Serve),
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct GenData {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    cases: usize,
    #[arg(long, default_value_t = 64)]
    resolution: usize,
    /// Phantom seed; also the split seed unless --split-seed is given.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    split_seed: Option<u64>,
    /// Train, val and test fractions.
    #[arg(long, value_delimiter = ',', num_args = 3, default_value = "0.85,0.02,0.13")]
    fractions: Vec<f64>,
    #[arg(long, default_value_t = 0.02)]
    noise_std: f64,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct Fpg {
    /// Binary PGM mask.
    #[arg(long)]
    mask: PathBuf,
    /// Probability that a round dilates.
    #[arg(long, default_value_t = 0.9)]
    p: f64,
    /// Probability that the prompt is dropped.
    #[arg(long, default_value_t = 0.5)]
    q: f64,
    /// Scaling rounds.
    #[arg(long, default_value_t = 5)]
    t: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct Train {
    #[arg(long, default_value = "data")]
    data: PathBuf,
    /// Run directory for checkpoints and logs.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Initial Adam learning rate.
    #[arg(long, default_value = "1e-4")]
    lr: f64,
    #[arg(long, default_value_t = 0.5)]
    beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    beta2: f64,
    /// Weight of the L1 term.
    #[arg(long, default_value_t = 100.0)]
    lambda: f64,
    /// Epochs at the initial learning rate.
    #[arg(long, default_value_t = 8)]
    epochs_fixed: usize,
    /// Epochs of linear decay to zero.
    #[arg(long, default_value_t = 8)]
    epochs_decay: usize,
    #[arg(long, default_value_t = 1)]
    batch_size: usize,
    /// Prompt dilation probability.
    #[arg(long, default_value_t = 0.9)]
    p: f64,
    /// Prompt drop probability.
    #[arg(long, default_value_t = 0.5)]
    q: f64,
    /// Prompt scaling rounds.
    #[arg(long, default_value_t = 5)]
    t: usize,
    /// Encoder depth (downsampling steps).
    #[arg(long, default_value_t = 2)]
    levels: usize,
    #[arg(long, default_value_t = 16)]
    base_channels: usize,
    /// Use only x1 (no second branch and no fusion).
    #[arg(long)]
    single_input: bool,
    /// Draw separate prompts for the two branches.
    #[arg(long)]
    independent_prompts: bool,
    /// Periodic checkpoint interval in epochs (0: final only).
    #[arg(long, default_value_t = 4)]
    checkpoint_every: usize,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct Eval {
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset directory; defaults to the one recorded next to the checkpoint.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Split,
    /// none, lesion, or a PGM file or directory of <id>.pgm.
    #[arg(long, default_value = "none")]
    prompt: String,
    /// Also report the copy-x1 baseline.
    #[arg(long)]
    baseline: bool,
    /// Write the reports as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct Synth {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long = "case")]
    case_id: String,
    /// none, lesion, or a PGM file.
    #[arg(long, default_value = "none")]
    prompt: String,
    /// Output TLPT tensor.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct Serve {
    #[arg(long, default_value = "data")]
    data: PathBuf,
    /// Checkpoint to serve; synthesis answers 409 without one.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
}

enum Failure {
    Invalid(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_)
            | Error::BadFractions(_)
            | Error::OutOfRange(..)
            | Error::NonDivisibleExtent { .. }
            | Error::UnknownCase(_)
            | Error::ShapeMismatch(_) => Failure::Invalid(e.to_string()),
            e => Failure::Runtime(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let argv = match config::expand(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{}", e.render());
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Fpg(a) => fpg(a),
        Command::Train(a) => run_train(*a),
        Command::Eval(a) => eval(a),
        Command::Synth(a) => synth(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn announce_seed(seed: Option<u64>) {
    match seed {
        Some(s) => eprintln!("seed: {s}"),
        None => eprintln!("seed: unknown"),
    }
}

fn gen_data(a: GenData) -> Outcome {
    announce_seed(Some(a.seed));
    let spec = PhantomSpec { resolution: a.resolution, noise_std: a.noise_std, seed: a.seed, ..Default::default() };
    let fractions = [a.fractions[0], a.fractions[1], a.fractions[2]];
    let m = generate_dataset(&a.out, &spec, a.cases, fractions, a.split_seed.unwrap_or(a.seed))?;
    println!(
        "{} cases at {}x{} in {}: train {}, val {}, test {}",
        m.n_cases,
        spec.resolution,
        spec.resolution,
        a.out.display(),
        m.splits.train.len(),
        m.splits.val.len(),
        m.splits.test.len()
    );
    Ok(())
}

fn fpg(a: Fpg) -> Outcome {
    announce_seed(Some(a.seed));
    let mask = pgm::load(&a.mask)?;
    let trace = generate_prompt_traced(&mask, &PromptConfig { p: a.p, q: a.q, t: a.t, seed: a.seed })?;
    pgm::save(&a.out, &trace.prompt)?;
    let rounds: Vec<String> = trace.rounds.iter().map(|r| format!("{:?}:{}", r.mode, r.kernel).to_lowercase()).collect();
    println!(
        "{} -> {} pixels, dropped: {}, rounds: [{}]",
        mask.count(),
        trace.prompt.count(),
        trace.dropped,
        rounds.join(", ")
    );
    Ok(())
}

fn run_train(a: Train) -> Outcome {
    announce_seed(Some(a.seed));
    let generator = GeneratorConfig { base_channels: a.base_channels, single_input: a.single_input, ..GeneratorConfig::with_levels(a.levels) };
    let cfg = TrainConfig {
        lr0: a.lr,
        beta1: a.beta1,
        beta2: a.beta2,
        lambda: a.lambda,
        epochs_fixed: a.epochs_fixed,
        epochs_decay: a.epochs_decay,
        batch_size: a.batch_size,
        fpg: PromptConfig { p: a.p, q: a.q, t: a.t, seed: 0 },
        shared_prompt: !a.independent_prompts,
        seed: a.seed,
        checkpoint_every: a.checkpoint_every,
        generator,
        ..Default::default()
    };
    cfg.validate()?;
    let ds = Dataset::open(&a.data)?;
    let outcome = train(&cfg, &ds, &a.out, |log| {
        if let Ok(line) = serde_json::to_string(log) {
            eprintln!("{line}");
        }
    })?;
    println!("{}", outcome.final_checkpoint.display());
    Ok(())
}

/// The dataset recorded in the run directory's `config.json`, if any.
fn recorded_data(ckpt: &Path) -> Option<PathBuf> {
    let cfg: serde_json::Value = fsutil::read_json(&ckpt.parent()?.join("config.json")).ok()?;
    cfg.get("data")?.as_str().map(PathBuf::from)
}

fn resolve_data(data: Option<PathBuf>, ckpt: &Path) -> PathBuf {
    data.or_else(|| recorded_data(ckpt)).unwrap_or_else(|| PathBuf::from("data"))
}

fn checkpoint_seed(ck: &Checkpoint) -> Option<u64> {
    ck.meta.pointer("/train/seed").and_then(serde_json::Value::as_u64)
}

fn eval(a: Eval) -> Outcome {
    let mode: PromptMode = a.prompt.parse()?;
    let ck = Checkpoint::load(&a.ckpt)?;
    announce_seed(checkpoint_seed(&ck));
    let ds = Dataset::open(&resolve_data(a.data, &a.ckpt))?;
    let mut reports = Vec::new();
    if a.baseline {
        reports.push(copy_baseline(&ds.load_split(a.split)?, split_name(a.split))?);
    }
    reports.push(evaluate_split(&ck.generator, &ds, a.split, &mode, "tlp")?);
    println!("{}", MetricReport::table(&reports.iter().collect::<Vec<_>>()));
    if let Some(out) = a.out {
        fsutil::write_json(&out, &reports)?;
    }
    Ok(())
}

fn synth(a: Synth) -> Outcome {
    let mode: PromptMode = a.prompt.parse()?;
    let ck = Checkpoint::load(&a.ckpt)?;
    announce_seed(checkpoint_seed(&ck));
    let ds = Dataset::open(&resolve_data(a.data, &a.ckpt))?;
    let case = ds.case(&a.case_id)?;
    let prompt = mode.mask_for(&case)?;
    let y_hat = synthesize_case(&ck.generator, &case, prompt.as_ref())?;
    tlp_core::tensor::io::save(&a.out, &y_hat)?;
    let row = case_metrics(&case.id, &y_hat, &case.y, Some(&case.lesion))?;
    println!("{}", serde_json::to_string(&row).map_err(|e| Failure::Runtime(e.to_string()))?);
    Ok(())
}

fn serve(a: Serve) -> Outcome {
    let model = match &a.ckpt {
        Some(p) => Some(tlp_service::LoadedModel::load(p)?),
        None => None,
    };
    announce_seed(model.as_ref().and_then(|m| m.provenance.seed));
    Dataset::open(&a.data)?;
    let state = Arc::new(tlp_service::AppState::new(a.data, model));
    let addr = SocketAddr::new(a.host, a.port);
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Runtime(e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        tlp_service::serve(listener, state).await
    })
    .map_err(|e| Failure::Runtime(e.to_string()))
}
