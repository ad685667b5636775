//! `ddcm`: codebook-driven diffusion sampling, compression and evaluation.
//!
//! Binary files use the containers in [`ddcm::io`] and [`ddcm::codec`]. A
//! `--config FILE` of `key = value` lines supplies defaults for any flag of
//! the chosen subcommand; flags given on the command line win.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ddcm::analytic::{mmse_restorer, GmmLikelihood, GmmModel, GmmParams, LinearObservation};
use ddcm::codebook::KSchedule;
use ddcm::codec::{bpp, edit_decode, BitStream, Codec, CodecConfig, EditRequest};
use ddcm::harness::{run_experiment, ExperimentKind, ExperimentSpec, GridPoint, Guidance};
use ddcm::linear::LinearOp;
use ddcm::model::ScoreModel;
use ddcm::remote::{serve, RemoteDenoiser};
use ddcm::sampler::{Conditioning, Pursuit, SelectionRule};
use ddcm::schedule::ScheduleDescriptor;
use ddcm::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_MISMATCH: u8 = 4;
const EXIT_IO: u8 = 5;
const EXIT_PROTOCOL: u8 = 6;
const EXIT_RUNTIME: u8 = 1;

#[derive(Parser)]
#[command(name = "ddcm", version, about = "Denoising diffusion codebook models")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate signals with a selection rule.
    Sample(SampleArgs),
    /// Encode one signal into a bit-stream.
    Compress(CompressArgs),
    /// Decode a bit-stream.
    Decompress(DecompressArgs),
    /// Restore a degraded observation (restoration, posterior or inverse rule).
    Restore(SampleArgs),
    /// Decode a bit-stream while switching the condition at `--t-edit`.
    Edit(EditArgs),
    /// Run an experiment sweep and write a CSV report.
    Eval(EvalArgs),
    /// Serve a model file over the denoiser wire protocol.
    #[command(hide = true)]
    Serve(ServeArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// Model file, `tcp:HOST:PORT`, or `exec:COMMAND ARGS...`.
    #[arg(long)]
    model: Option<String>,
    /// Signal dimension announced to a remote model (inferred when possible).
    #[arg(long)]
    dim: Option<usize>,
    /// Seconds to wait for a remote response.
    #[arg(long, default_value_t = 30.0)]
    timeout: f64,
}

#[derive(Args)]
struct CodecArgs {
    #[arg(long = "T", default_value_t = 100)]
    steps: u32,
    #[arg(long = "K", default_value_t = 256)]
    k: u32,
    /// File of per-step codebook sizes for steps 2..=T.
    #[arg(long = "k-schedule")]
    k_schedule: Option<PathBuf>,
    #[arg(long = "M", default_value_t = 1)]
    depth: u32,
    #[arg(long = "C", default_value_t = 0)]
    coeffs: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Rule {
    Random,
    Compression,
    Posterior,
    Inverse,
    Restoration,
    Ccg,
    Ccfg,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct SampleArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    codec: CodecArgs,
    #[arg(long, value_enum)]
    rule: Option<Rule>,
    /// Input signals: observations `y`, or clean targets for `compression`.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the bit-stream (single output only).
    #[arg(long)]
    stream: Option<PathBuf>,
    /// Number of signals for rules without an input.
    #[arg(long, default_value_t = 1)]
    n: usize,
    #[arg(long)]
    condition: Option<String>,
    #[arg(long)]
    ktilde: Option<u32>,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    /// Observed coordinates, e.g. `0,1,5`; all coordinates when absent.
    #[arg(long)]
    mask: Option<String>,
    #[arg(long = "noise-std", default_value_t = 0.5)]
    noise_std: f64,
    /// Pixel count for the reported bits per pixel.
    #[arg(long)]
    pixels: Option<u64>,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct CompressArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    codec: CodecArgs,
    /// Accepted for symmetry with `sample`; only `compression` is valid.
    #[arg(long, value_enum)]
    rule: Option<Rule>,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Write the decoder's reconstruction to this signal file.
    #[arg(long = "emit-recon")]
    emit_recon: Option<PathBuf>,
    #[arg(long)]
    condition: Option<String>,
    #[arg(long)]
    pixels: Option<u64>,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct DecompressArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    condition: Option<String>,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct EditArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Condition the stream was produced under; unconditional when absent.
    #[arg(long = "src-condition")]
    src_condition: Option<String>,
    /// Condition applied from `--t-edit` down.
    #[arg(long)]
    condition: Option<String>,
    #[arg(long = "t-edit")]
    t_edit: usize,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    experiment: String,
    /// Model file (analytic models only).
    #[arg(long)]
    model: Option<String>,
    #[arg(long = "T", value_delimiter = ',', default_values_t = [100u32])]
    steps: Vec<u32>,
    #[arg(long = "K", value_delimiter = ',', default_values_t = [16u32])]
    k: Vec<u32>,
    #[arg(long = "M", value_delimiter = ',', default_values_t = [1u32])]
    depth: Vec<u32>,
    #[arg(long = "C", value_delimiter = ',', default_values_t = [0u32])]
    coeffs: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_values_t = [0u32])]
    ktilde: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0f64])]
    lambda: Vec<f64>,
    #[arg(long = "t-edit", value_delimiter = ',', default_values_t = [0u32])]
    t_edit: Vec<u32>,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Peak-to-peak range for PSNR; derived from the prior when absent.
    #[arg(long)]
    range: Option<f64>,
    #[arg(long = "noise-std", default_value_t = 0.5)]
    noise_std: f64,
    /// Guidance rule for the guidance experiment.
    #[arg(long, value_enum)]
    rule: Option<Rule>,
    /// Target class for guidance and editing.
    #[arg(long, default_value_t = 1)]
    condition: u32,
    /// Source class for editing.
    #[arg(long = "src-condition", default_value_t = 0)]
    src_condition: u32,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct ServeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "T", default_value_t = 100)]
    steps: u32,
    /// Listen on this TCP port instead of standard input/output. Port 0
    /// picks a free port; the bound address is printed.
    #[arg(long)]
    tcp: Option<u16>,
}

enum CliError {
    Config(String),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Lib(Error::Io(e))
    }
}

type CliResult<T> = Result<T, CliError>;

impl CliError {
    fn report(&self) -> (u8, String) {
        match self {
            CliError::Config(msg) => (EXIT_CONFIG, format!("bad config: {msg}")),
            CliError::Lib(e) => {
                let (code, class) = match e {
                    Error::InvalidSchedule(_)
                    | Error::InvalidConfig(_)
                    | Error::StepOutOfRange { .. }
                    | Error::EntryOutOfBounds { .. }
                    | Error::DegenerateLikelihood(_) => (EXIT_CONFIG, "bad config"),
                    Error::ModelMismatch { .. } | Error::DimensionMismatch { .. } => {
                        (EXIT_MISMATCH, "model mismatch")
                    }
                    Error::Io(_)
                    | Error::BadMagic
                    | Error::UnsupportedVersion(_)
                    | Error::Truncated(_)
                    | Error::CorruptHeader(_)
                    | Error::CorruptPayload(_) => (EXIT_IO, "I/O"),
                    Error::Timeout | Error::Protocol(_) | Error::Remote(_) => (EXIT_PROTOCOL, "protocol"),
                    Error::NonFinite(_) | Error::DegenerateNoise | Error::Model(_) => (EXIT_RUNTIME, "runtime"),
                };
                (code, format!("{class}: {e}"))
            }
        }
    }
}

fn main() -> ExitCode {
    let argv = match with_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => return fail(&e),
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { EXIT_USAGE } else { 0 });
        }
    };
    let result = match cli.cmd {
        Cmd::Sample(a) => run_sample(a, Rule::Random),
        Cmd::Restore(a) => run_sample(a, Rule::Restoration),
        Cmd::Compress(a) => run_compress(a),
        Cmd::Decompress(a) => run_decompress(a),
        Cmd::Edit(a) => run_edit(a),
        Cmd::Eval(a) => run_eval(a),
        Cmd::Serve(a) => run_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn fail(e: &CliError) -> ExitCode {
    let (code, msg) = e.report();
    eprintln!("ddcm: {msg}");
    ExitCode::from(code)
}

/// Splices `--config` file entries in right after the subcommand so that
/// later command-line flags override them.
fn with_config(argv: Vec<String>) -> CliResult<Vec<String>> {
    let Some(pos) = argv.iter().position(|a| a == "--config" || a.starts_with("--config=")) else {
        return Ok(argv);
    };
    let path = match argv[pos].strip_prefix("--config=") {
        Some(p) => p.to_string(),
        None => match argv.get(pos + 1) {
            Some(p) => p.clone(),
            None => return Ok(argv),
        },
    };
    let Some(sub_name) = argv.get(1) else {
        return Ok(argv);
    };
    let cmd = Cli::command();
    let Some(sub) = cmd.find_subcommand(sub_name) else {
        return Ok(argv);
    };
    let text = fs::read_to_string(&path).map_err(|e| CliError::Config(format!("{path}: {e}")))?;
    let mut injected = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("{path}:{}: expected key = value", lineno + 1)))?;
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        let value = value.trim();
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()) && key != "config")
            .ok_or_else(|| CliError::Config(format!("{path}:{}: unknown key '{key}'", lineno + 1)))?;
        if arg.get_action().takes_values() {
            injected.push(format!("--{key}"));
            injected.push(value.to_string());
        } else if value.parse::<bool>().unwrap_or(false) {
            injected.push(format!("--{key}"));
        }
    }
    let mut out = argv[..2].to_vec();
    out.extend(injected);
    out.extend_from_slice(&argv[2..]);
    Ok(out)
}

enum Loaded {
    Gmm(GmmModel),
    Remote(RemoteDenoiser),
}

impl Loaded {
    fn score(&self) -> &dyn ScoreModel {
        match self {
            Loaded::Gmm(m) => m,
            Loaded::Remote(m) => m,
        }
    }

    fn gmm(&self, what: &str) -> CliResult<&GmmModel> {
        match self {
            Loaded::Gmm(m) => Ok(m),
            Loaded::Remote(_) => Err(CliError::Config(format!("{what} needs an analytic model file"))),
        }
    }
}

fn load_params(path: &str) -> CliResult<GmmParams> {
    Ok(ddcm::io::read_model(File::open(path)?)?)
}

fn load_model(args: &ModelArgs, dim_hint: Option<usize>, steps: u32) -> CliResult<Loaded> {
    let spec = args
        .model
        .as_deref()
        .ok_or_else(|| CliError::Config("--model is required".into()))?;
    let remote_dim = || {
        args.dim
            .or(dim_hint)
            .ok_or_else(|| CliError::Config("--dim is required for a remote model".into()))
    };
    let timeout = Duration::from_secs_f64(args.timeout);
    if let Some(addr) = spec.strip_prefix("tcp:") {
        return Ok(Loaded::Remote(RemoteDenoiser::connect_tcp(addr, remote_dim()?, steps, timeout)?));
    }
    if let Some(cmdline) = spec.strip_prefix("exec:") {
        let mut words = cmdline.split_whitespace().map(String::from);
        let program = words
            .next()
            .ok_or_else(|| CliError::Config("empty exec command".into()))?;
        let rest: Vec<String> = words.collect();
        return Ok(Loaded::Remote(RemoteDenoiser::spawn(&program, &rest, remote_dim()?, steps, timeout)?));
    }
    let model = GmmModel::new(load_params(spec)?)?;
    if let Some(d) = dim_hint.filter(|&d| d != model.dim()) {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: d,
        }
        .into());
    }
    Ok(Loaded::Gmm(model))
}

fn read_k_schedule(path: &Path) -> CliResult<KSchedule> {
    let text = fs::read_to_string(path)?;
    let sizes = text
        .lines()
        .map(|l| l.split('#').next().unwrap())
        .flat_map(|l| l.split(|c: char| c == ',' || c.is_whitespace()))
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<u32>()
                .map_err(|_| CliError::Config(format!("{}: bad codebook size '{s}'", path.display())))
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(KSchedule::PerStep(sizes))
}

fn codec_config(c: &CodecArgs) -> CliResult<CodecConfig> {
    let sizes = match &c.k_schedule {
        Some(p) => read_k_schedule(p)?,
        None => KSchedule::Uniform(c.k),
    };
    let config = CodecConfig {
        schedule: ScheduleDescriptor::scaled_linear(c.steps),
        sizes,
        pursuit: Pursuit {
            depth: c.depth,
            coeffs: c.coeffs,
        },
        seed: c.seed,
    };
    config.validate()?;
    Ok(config)
}

fn read_signals(path: &Path) -> CliResult<(usize, Vec<Vec<f64>>)> {
    Ok(ddcm::io::read_signals(File::open(path)?)?)
}

fn write_signals(path: &Path, dim: usize, signals: &[Vec<f64>]) -> CliResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    ddcm::io::write_signals(&mut w, dim, signals)?;
    w.flush()?;
    Ok(())
}

fn read_stream(path: &Path) -> CliResult<BitStream> {
    Ok(BitStream::from_bytes(&fs::read(path)?)?)
}

fn report_rate(bits: u64, pixels: Option<u64>) -> CliResult<()> {
    match pixels {
        Some(0) => Err(CliError::Config("--pixels must be positive".into())),
        Some(p) => {
            println!("payload_bits={bits} bpp={}", bpp(bits, p));
            Ok(())
        }
        None => {
            println!("payload_bits={bits}");
            Ok(())
        }
    }
}

fn observation(a: &SampleArgs, dim: usize, y: &[f64]) -> CliResult<LinearObservation> {
    let op = match &a.mask {
        Some(m) => LinearOp::parse_mask(dim, m)?,
        None => LinearOp::identity(dim),
    };
    Ok(LinearObservation::new(op, y.to_vec(), a.noise_std)?)
}

fn build_rule(a: &SampleArgs, rule: Rule, model: &Loaded, dim: usize, input: Option<&[f64]>) -> CliResult<SelectionRule> {
    let need_input = || input.ok_or_else(|| CliError::Config("this rule needs --in".into()));
    let condition = || {
        a.condition
            .clone()
            .ok_or_else(|| CliError::Config("this rule needs --condition".into()))
    };
    let ktilde = a.ktilde.unwrap_or(a.codec.k);
    Ok(match rule {
        Rule::Random => SelectionRule::Random,
        Rule::Compression => SelectionRule::Compression {
            target: need_input()?.to_vec(),
            pursuit: Pursuit {
                depth: a.codec.depth,
                coeffs: a.codec.coeffs,
            },
        },
        Rule::Posterior => SelectionRule::PosteriorLoss {
            provider: Arc::new(GmmLikelihood {
                params: model.gmm("posterior sampling")?.params().clone(),
                obs: observation(a, dim, need_input()?)?,
            }),
            subset: a.ktilde,
        },
        Rule::Inverse => {
            let obs = observation(a, dim, need_input()?)?;
            SelectionRule::LinearInverse { op: obs.op, y: obs.y }
        }
        Rule::Restoration => {
            let params = model.gmm("restoration")?.params().clone();
            let reference = mmse_restorer(&observation(a, dim, need_input()?)?, &params)?;
            let quality = move |x: &[f64]| -params.log_density(x, 1.0).unwrap_or(f64::NEG_INFINITY);
            SelectionRule::Restoration {
                reference,
                lambda: a.lambda,
                quality: Arc::new(quality),
            }
        }
        Rule::Ccg => SelectionRule::Ccg {
            classifier: Arc::new(model.gmm("classifier guidance")?.clone()),
            condition: condition()?,
            ktilde,
        },
        Rule::Ccfg => SelectionRule::Ccfg {
            condition: condition()?,
            ktilde,
        },
    })
}

fn run_sample(a: SampleArgs, default_rule: Rule) -> CliResult<()> {
    let rule = a.rule.unwrap_or(default_rule);
    let config = codec_config(&a.codec)?;
    let inputs = match &a.input {
        Some(p) => Some(read_signals(p)?),
        None => None,
    };
    let needs_input = !matches!(rule, Rule::Random | Rule::Ccg | Rule::Ccfg);
    if needs_input && inputs.is_none() {
        return Err(CliError::Config("this rule needs --in".into()));
    }
    // Observations may be shorter than the signal under a mask.
    let dim_hint = match (&inputs, rule) {
        (Some((d, _)), Rule::Compression) => Some(*d),
        (Some((d, _)), _) if a.mask.is_none() => Some(*d),
        _ => None,
    };
    let model = load_model(&a.model, dim_hint, a.codec.steps)?;
    let dim = model.score().dim();
    let codec = Codec::new(config.clone(), dim)?;
    let cond = match (&a.condition, rule) {
        (Some(c), Rule::Random | Rule::Compression | Rule::Posterior | Rule::Inverse | Rule::Restoration) => {
            Conditioning::fixed(c.clone())
        }
        _ => Conditioning::none(),
    };
    let jobs: Vec<Option<&[f64]>> = match (&inputs, needs_input) {
        (Some((_, v)), true) => v.iter().map(|x| Some(x.as_slice())).collect(),
        _ => vec![None; a.n],
    };
    if a.stream.is_some() && jobs.len() != 1 {
        return Err(CliError::Config("--stream needs exactly one output".into()));
    }
    let mut outputs = Vec::with_capacity(jobs.len());
    let mut last = None;
    for (i, input) in jobs.into_iter().enumerate() {
        let sel = build_rule(&a, rule, &model, dim, input)?;
        let mut rng = ChaCha8Rng::seed_from_u64(a.codec.seed);
        rng.set_stream(i as u64);
        let c = codec.encode(&sel, model.score(), &cond, &mut rng)?;
        outputs.push(c.reconstruction.clone());
        last = Some(c);
    }
    write_signals(&a.out, dim, &outputs)?;
    if let (Some(path), Some(c)) = (&a.stream, &last) {
        fs::write(path, c.stream.to_bytes())?;
        report_rate(c.stream.header.payload_bits, a.pixels)?;
    } else if a.pixels.is_some() {
        report_rate(config.payload_bits(), a.pixels)?;
    }
    Ok(())
}

fn run_compress(a: CompressArgs) -> CliResult<()> {
    if a.rule.is_some_and(|r| r != Rule::Compression) {
        return Err(CliError::Config("compress only supports --rule compression".into()));
    }
    let config = codec_config(&a.codec)?;
    let (dim, signals) = read_signals(&a.input)?;
    let [x0] = signals.as_slice() else {
        return Err(CliError::Config(format!(
            "compress expects exactly one signal, found {}",
            signals.len()
        )));
    };
    let model = load_model(&a.model, Some(dim), a.codec.steps)?;
    let cond = a.condition.clone().map(Conditioning::fixed).unwrap_or_default();
    let c = Codec::new(config, dim)?.compress(x0, model.score(), &cond)?;
    fs::write(&a.out, c.stream.to_bytes())?;
    if let Some(p) = &a.emit_recon {
        write_signals(p, dim, &[c.reconstruction])?;
    }
    report_rate(c.stream.header.payload_bits, a.pixels)
}

fn run_decompress(a: DecompressArgs) -> CliResult<()> {
    let stream = read_stream(&a.input)?;
    let dim = stream.header.dim as usize;
    let model = load_model(&a.model, Some(dim), stream.header.schedule.steps)?;
    let cond = a.condition.clone().map(Conditioning::fixed).unwrap_or_default();
    let x = ddcm::codec::decompress_conditioned(&stream, model.score(), &cond)?;
    write_signals(&a.out, dim, &[x])
}

fn run_edit(a: EditArgs) -> CliResult<()> {
    let stream = read_stream(&a.input)?;
    let dim = stream.header.dim as usize;
    let model = load_model(&a.model, Some(dim), stream.header.schedule.steps)?;
    let req = EditRequest {
        stream,
        src: a.src_condition.clone(),
        dst: a.condition.clone(),
        t_edit: a.t_edit,
    };
    let x = edit_decode(&req, model.score())?;
    write_signals(&a.out, dim, &[x])
}

fn run_eval(a: EvalArgs) -> CliResult<()> {
    let kind: ExperimentKind = a.experiment.parse()?;
    let path = a
        .model
        .as_deref()
        .ok_or_else(|| CliError::Config("--model is required".into()))?;
    let params = load_params(path)?;
    let mut grid = Vec::new();
    for &steps in &a.steps {
        for &k in &a.k {
            for &depth in &a.depth {
                for &coeffs in &a.coeffs {
                    for &ktilde in &a.ktilde {
                        for &lambda in &a.lambda {
                            for &t_edit in &a.t_edit {
                                grid.push(GridPoint {
                                    steps,
                                    k,
                                    depth,
                                    coeffs,
                                    ktilde,
                                    lambda,
                                    t_edit,
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    let mut spec = ExperimentSpec::new(kind, params, grid, a.samples, a.seed);
    spec.range = a.range;
    spec.noise_std = a.noise_std;
    spec.target = a.condition;
    spec.src = a.src_condition;
    spec.guidance = match a.rule {
        None | Some(Rule::Ccg) => Guidance::Ccg,
        Some(Rule::Ccfg) => Guidance::Ccfg,
        Some(_) => return Err(CliError::Config("eval --rule accepts ccg or ccfg".into())),
    };
    let report = run_experiment(&spec)?;
    match &a.out {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            report.write_csv(&mut w)?;
            w.flush()?;
        }
        None => report.write_csv(io::stdout().lock())?,
    }
    Ok(())
}

fn run_serve(a: ServeArgs) -> CliResult<()> {
    let model = GmmModel::new(load_params(&a.model.to_string_lossy())?)?;
    let sched = ScheduleDescriptor::scaled_linear(a.steps).build()?;
    match a.tcp {
        None => {
            let stdin = io::stdin().lock();
            let stdout = io::stdout().lock();
            serve(&model, &sched, stdin, stdout)?;
        }
        Some(port) => {
            let listener = TcpListener::bind(("127.0.0.1", port))?;
            println!("listening on {}", listener.local_addr()?);
            io::stdout().flush()?;
            for conn in listener.incoming() {
                let conn = conn?;
                let reader = conn.try_clone()?;
                if let Err(e) = serve(&model, &sched, reader, conn) {
                    eprintln!("ddcm serve: {e}");
                }
            }
        }
    }
    Ok(())
}
