use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use deftan::audio::AudioClip;
use deftan::complexity::{measure_cost, BlockKind, CostModel};
use deftan::config::ModelConfig;
use deftan::loss::si_sdr;
use deftan::network::Network;
use deftan::selftest;
use deftan::train::{self, Echo, Problem, StepLog, TrainOptions};
use deftan::wav::{self, WavFormat};
use deftan::Error;

#[derive(Parser)]
#[command(name = "deftan", version, about = "Multichannel speech enhancement toolkit")]
struct Cli {
    #[command(flatten)]
    run: RunArgs,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` model config; defaults to the base model.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one config key, applied after --config.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Write a freshly initialized model file.
    Init {
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
    },
    /// Enhance a multichannel WAV into a mono WAV.
    Enhance {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        /// Clean reference; prints the SI-SDR of the output against it.
        #[arg(long, value_name = "PATH")]
        reference: Option<PathBuf>,
    },
    /// Reconcile analytic and counted MACs for a config.
    Analyze {
        #[arg(long, default_value_t = 1.0)]
        seconds: f64,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        #[arg(long, hide = true, value_name = "KIND")]
        corrupt_formula: Option<String>,
    },
    /// Write a synthetic speech-like clip and white noise, both mono.
    Synth {
        clip: PathBuf,
        noise: PathBuf,
        #[arg(long, default_value_t = 4.0)]
        seconds: f64,
    },
    /// Mix mono speech and noise into a multichannel recording.
    Mix {
        clip: PathBuf,
        noise: PathBuf,
        output: PathBuf,
        /// Where to write the direct-path reference channel.
        #[arg(long, value_name = "PATH")]
        reference: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        snr: f64,
    },
    /// Overfit the model to one mixture with plain gradient descent.
    TrainToy {
        clip: PathBuf,
        noise: PathBuf,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 0.0)]
        snr: f64,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Save the trained model here.
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
    },
    /// Run the invariant suite.
    Selftest {
        /// Only cases whose name contains this.
        #[arg(long)]
        filter: Option<String>,
        #[arg(long, hide = true, value_name = "KIND")]
        corrupt_formula: Option<String>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Text,
}

/// Exit 1: an invariant or reconciliation failed. Exit 2: bad usage or input.
enum Failure {
    Invariant(String),
    Input(String),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Invariant(m) | Failure::Input(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite { .. } | Error::Autodiff(_) | Error::CounterDisabled => Failure::Invariant(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

type CliResult = Result<(), Failure>;

fn input_err(context: &Path, e: Error) -> Failure {
    Failure::Input(format!("{}: {e}", context.display()))
}

fn model_config(run: &RunArgs) -> Result<ModelConfig, Failure> {
    let mut cfg = ModelConfig::base();
    if let Some(path) = &run.config {
        let text = fs::read_to_string(path).map_err(|e| input_err(path, e.into()))?;
        cfg.merge_text(&text).map_err(|e| input_err(path, e))?;
    }
    for kv in &run.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Input(format!("--set {kv:?}: expected KEY=VALUE")))?;
        cfg.set(k.trim(), v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_wav(path: &Path) -> Result<AudioClip, Failure> {
    wav::read(path).map_err(|e| input_err(path, e))
}

fn write_wav(path: &Path, clip: &AudioClip) -> CliResult {
    wav::write(path, clip, WavFormat::Float32).map_err(|e| input_err(path, e))
}

fn mono(samples: &[f64], sample_rate: u32) -> Result<AudioClip, Failure> {
    Ok(AudioClip::from_channels(&[samples.to_vec()], sample_rate)?)
}

fn corrupt_kind(name: &Option<String>) -> Result<Option<BlockKind>, Failure> {
    name.as_deref().map(str::parse).transpose().map_err(Failure::from)
}

fn init(run: &RunArgs, model: &Path) -> CliResult {
    let cfg = model_config(run)?;
    let net = Network::<f32>::build(&cfg, run.seed)?;
    net.save(model).map_err(|e| input_err(model, e))?;
    let n = net.count_params();
    println!("wrote {} ({} parameters)", model.display(), n.total);
    Ok(())
}

fn enhance(run: &RunArgs, input: &Path, output: &Path, model: &Path, reference: Option<&Path>) -> CliResult {
    let net = match &run.config {
        Some(_) => Network::<f32>::load_expecting(model, &model_config(run)?),
        None => Network::<f32>::load(model),
    }
    .map_err(|e| input_err(model, e))?;
    let clip = read_wav(input)?;
    let mics = net.config().mics;
    if clip.channels() != mics {
        return Err(Failure::Input(format!(
            "channel mismatch: {} has {} channels, model expects {mics}",
            input.display(),
            clip.channels()
        )));
    }
    let enhanced = net.enhance(&clip)?;
    write_wav(output, &enhanced)?;
    println!("wrote {} ({} samples, {:.3} s)", output.display(), enhanced.len(), enhanced.seconds());
    if let Some(path) = reference {
        let clean = read_wav(path)?;
        if clean.len() != enhanced.len() {
            return Err(Failure::Input(format!(
                "{}: reference has {} samples, output {}",
                path.display(),
                clean.len(),
                enhanced.len()
            )));
        }
        let db = si_sdr(enhanced.channel(0), clean.channel(0))?;
        println!("si-sdr {db:.2} dB");
    }
    Ok(())
}

fn analyze(run: &RunArgs, seconds: f64, format: Format, corrupt: &Option<String>) -> CliResult {
    let cfg = model_config(run)?;
    let net = Network::<f32>::build(&cfg, run.seed)?;
    let report = measure_cost(&net, seconds, CostModel { corrupt: corrupt_kind(corrupt)? })?;
    match format {
        Format::Text => print!("{}", report.to_text()),
        Format::Csv => print!("{}", report.to_csv()),
    }
    if report.passes() {
        Ok(())
    } else {
        Err(Failure::Invariant("cost reconciliation failed".into()))
    }
}

fn synth(run: &RunArgs, clip: &Path, noise: &Path, seconds: f64) -> CliResult {
    let cfg = model_config(run)?;
    if seconds.is_nan() || seconds <= 0.0 {
        return Err(Failure::Input(format!("--seconds must be positive, got {seconds}")));
    }
    let n = (seconds * cfg.sample_rate as f64).round() as usize;
    write_wav(clip, &mono(&train::synth_speech(n, cfg.sample_rate, run.seed), cfg.sample_rate)?)?;
    write_wav(noise, &mono(&train::white_noise(n, run.seed.wrapping_add(1)), cfg.sample_rate)?)?;
    println!("wrote {} and {} ({n} samples)", clip.display(), noise.display());
    Ok(())
}

/// Channel 0 of the speech clip and of the noise, trimmed to the speech.
fn sources(clip: &Path, noise: &Path, cfg: &ModelConfig) -> Result<(Vec<f64>, Vec<f64>), Failure> {
    let (s, v) = (read_wav(clip)?, read_wav(noise)?);
    for (path, c) in [(clip, &s), (noise, &v)] {
        if c.sample_rate != cfg.sample_rate {
            return Err(Failure::Input(format!(
                "{}: sample rate {} Hz, config expects {}",
                path.display(),
                c.sample_rate,
                cfg.sample_rate
            )));
        }
    }
    if v.len() < s.len() {
        return Err(Failure::Input(format!(
            "{}: noise has {} samples, speech {}",
            noise.display(),
            v.len(),
            s.len()
        )));
    }
    Ok((s.channel(0).to_vec(), v.channel(0)[..s.len()].to_vec()))
}

fn mix(run: &RunArgs, clip: &Path, noise: &Path, output: &Path, reference: Option<&Path>, snr: f64) -> CliResult {
    let cfg = model_config(run)?;
    let (s, v) = sources(clip, noise, &cfg)?;
    let m = train::toy_mixture(cfg.mics, cfg.sample_rate, &s, &v, Echo::default(), snr)?;
    write_wav(output, &m.noisy)?;
    if let Some(path) = reference {
        write_wav(path, &mono(m.clean.channel(0), cfg.sample_rate)?)?;
    }
    println!("wrote {} ({} channels, {snr} dB SNR)", output.display(), m.noisy.channels());
    Ok(())
}

struct ToyRun<'a> {
    clip: &'a Path,
    noise: &'a Path,
    steps: usize,
    lr: f64,
    snr: f64,
    format: Format,
    model: Option<&'a Path>,
}

fn train_toy(run: &RunArgs, t: ToyRun<'_>) -> CliResult {
    let cfg = model_config(run)?;
    let (s, v) = sources(t.clip, t.noise, &cfg)?;
    let problem = Problem::<f32>::from_sources(&cfg, &s, &v, Echo::default(), t.snr)?;
    let mut net = Network::<f32>::build(&cfg, run.seed)?;
    let opts = TrainOptions {
        steps: t.steps,
        lr: t.lr,
        seed: run.seed,
    };
    if t.format == Format::Csv {
        println!("step,loss,speech_term,noise_term");
    }
    let print = |e: &StepLog| match t.format {
        Format::Csv => println!("{},{:e},{:e},{:e}", e.step, e.loss, e.speech_term, e.noise_term),
        Format::Text => println!(
            "step {:>4}  loss {:.6e}  speech {:.6e}  noise {:.6e}",
            e.step, e.loss, e.speech_term, e.noise_term
        ),
    };
    if t.steps == 0 {
        print(&train::loss(&net, &problem)?);
        return Ok(());
    }
    let summary = train::train(&mut net, &problem, opts, print)?;
    let (est, mixture) = train::si_sdr_gain(&net, &problem)?;
    if t.format == Format::Text {
        println!(
            "loss {:.4e} -> {:.4e} ({:.1}% of initial)",
            summary.initial_loss,
            summary.final_loss,
            100.0 * summary.final_loss / summary.initial_loss
        );
        println!("si-sdr mixture {mixture:.2} dB, estimate {est:.2} dB ({:+.2} dB)", est - mixture);
    }
    if let Some(path) = t.model {
        net.save(path).map_err(|e| input_err(path, e))?;
    }
    Ok(())
}

fn run_selftest(run: &RunArgs, filter: Option<&str>, corrupt: &Option<String>) -> CliResult {
    let opts = selftest::Options {
        seed: run.seed,
        corrupt: corrupt_kind(corrupt)?,
    };
    let outcomes = selftest::run(opts, filter);
    if outcomes.is_empty() {
        return Err(Failure::Input(format!("no selftest case matches {:?}", filter.unwrap_or(""))));
    }
    print!("{}", selftest::table(&outcomes));
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed == 0 {
        Ok(())
    } else {
        Err(Failure::Invariant(format!("{failed} selftest case(s) failed")))
    }
}

fn dispatch(cli: Cli) -> CliResult {
    let run = &cli.run;
    match cli.cmd {
        Command::Init { model } => init(run, &model),
        Command::Enhance {
            input,
            output,
            model,
            reference,
        } => enhance(run, &input, &output, &model, reference.as_deref()),
        Command::Analyze {
            seconds,
            format,
            corrupt_formula,
        } => analyze(run, seconds, format, &corrupt_formula),
        Command::Synth { clip, noise, seconds } => synth(run, &clip, &noise, seconds),
        Command::Mix {
            clip,
            noise,
            output,
            reference,
            snr,
        } => mix(run, &clip, &noise, &output, reference.as_deref(), snr),
        Command::TrainToy {
            clip,
            noise,
            steps,
            lr,
            snr,
            format,
            model,
        } => train_toy(
            run,
            ToyRun {
                clip: &clip,
                noise: &noise,
                steps,
                lr,
                snr,
                format,
                model: model.as_deref(),
            },
        ),
        Command::Selftest { filter, corrupt_formula } => run_selftest(run, filter.as_deref(), &corrupt_formula),
    }
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors on its own
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(match f {
                Failure::Invariant(_) => 1,
                Failure::Input(_) => 2,
            })
        }
    }
}
