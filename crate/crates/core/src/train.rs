//! Toy overfitting: synthetic mixtures and plain gradient descent on the
//! PCM loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{self, normalize_variance, stft, AudioClip, Mixture};
use crate::autodiff::{Gradients, Tape};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::loss::{pcm_loss, si_sdr, MagnitudeMode};
use crate::network::Network;
use crate::params::Bound;
use crate::tensor::{Scalar, Tensor};

/// Voiced, speech-like test signal: a gliding harmonic source under a
/// syllable-rate envelope.
pub fn synth_speech(n: usize, sample_rate: u32, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = sample_rate as f64;
    let f0 = rng.gen_range(110.0..180.0);
    let glide = rng.gen_range(-40.0..40.0);
    let syllable = rng.gen_range(3.0..5.0);
    let amps: Vec<f64> = (1..=12).map(|h| rng.gen_range(0.3..1.0) / h as f64).collect();
    let mut phase = 0.0;
    (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let f = f0 + glide * t + 6.0 * (2.0 * std::f64::consts::PI * 5.0 * t).sin();
            phase += 2.0 * std::f64::consts::PI * f / sr;
            let env = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * syllable * t).cos();
            let mut v = 0.0;
            for (h, a) in amps.iter().enumerate() {
                let hf = f * (h + 1) as f64;
                if hf < sr / 2.0 {
                    v += a * (phase * (h + 1) as f64).sin();
                }
            }
            0.3 * env * v
        })
        .collect()
}

pub fn white_noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // sum of uniforms is close enough to Gaussian for a test signal
    (0..n)
        .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).sum::<f64>() * 0.5)
        .collect()
}

/// Echo placement for the toy mixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Echo {
    pub delay: usize,
    pub gain: f64,
}

impl Default for Echo {
    fn default() -> Self {
        Self { delay: 40, gain: 0.5 }
    }
}

/// Everything a training loop needs, already in the network's precision.
pub struct Problem<S: Scalar> {
    pub mixture: Mixture,
    pub scale: f64,
    /// `[2M, T, F]` normalized mixture spectrogram.
    pub input: Tensor<S>,
    /// `[2, T, F]` target: clean reference channel, same normalization.
    pub target: Tensor<S>,
    /// `[2, T, F]` reference channel of the mixture.
    pub mixture_ref: Tensor<S>,
    pub mode: MagnitudeMode,
}

/// Spreads mono speech and noise over `mics` channels (mic `m` hears
/// everything `m` samples late; noise is circularly shifted per mic) and
/// mixes them with a direct path plus one echo.
pub fn toy_mixture(
    mics: usize,
    sample_rate: u32,
    speech: &[f64],
    noise: &[f64],
    echo: Echo,
    snr_db: f64,
) -> Result<Mixture> {
    let n = speech.len();
    if noise.len() < n {
        return Err(Error::InvalidArgument(format!(
            "noise has {} samples, speech {n}",
            noise.len()
        )));
    }
    let sp: Vec<Vec<f64>> = (0..mics).map(|_| speech.to_vec()).collect();
    let nz: Vec<Vec<f64>> = (0..mics)
        .map(|c| (0..n).map(|i| noise[(i + c * 997) % n]).collect())
        .collect();
    let direct: Vec<Vec<f64>> = (0..mics).map(|c| audio::single_echo(c, 1.0)).collect();
    let tail: Vec<Vec<f64>> = (0..mics).map(|c| audio::single_echo(echo.delay + c, echo.gain)).collect();
    let speech = AudioClip::from_channels(&sp, sample_rate)?;
    let noise = AudioClip::from_channels(&nz, sample_rate)?;
    audio::mix(&speech, &noise, &direct, &tail, snr_db)
}

impl<S: Scalar> Problem<S> {
    pub fn from_sources(cfg: &ModelConfig, speech: &[f64], noise: &[f64], echo: Echo, snr_db: f64) -> Result<Self> {
        let mixture = toy_mixture(cfg.mics, cfg.sample_rate, speech, noise, echo, snr_db)?;
        Self::from_mixture(cfg, mixture)
    }

    pub fn from_mixture(cfg: &ModelConfig, mixture: Mixture) -> Result<Self> {
        let (normed, scale) = normalize_variance(&mixture.noisy)?;
        let spec = stft(&normed, cfg.stft())?;
        let clean = AudioClip::from_channels(&[mixture.clean.channel(0).to_vec()], cfg.sample_rate)?.scaled(scale);
        let target = stft(&clean, cfg.stft())?.ri;
        Ok(Self {
            input: spec.ri.cast(),
            target: target.cast(),
            mixture_ref: spec.channel(0).cast(),
            scale,
            mixture,
            mode: cfg.loss_mode,
        })
    }

    /// The synthetic toy task: speech-like source, white noise, 0 dB.
    pub fn toy(cfg: &ModelConfig, seconds: f64, seed: u64) -> Result<Self> {
        let n = (seconds * cfg.sample_rate as f64).round() as usize;
        let speech = synth_speech(n, cfg.sample_rate, seed);
        let noise = white_noise(n, seed.wrapping_add(1));
        Self::from_sources(cfg, &speech, &noise, Echo::default(), 0.0)
    }

    pub fn clean_ref(&self) -> &[f64] {
        self.mixture.clean.channel(0)
    }

    pub fn noisy_ref(&self) -> &[f64] {
        self.mixture.noisy.channel(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub speech_term: f64,
    pub noise_term: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            steps: 200,
            lr: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub log: Vec<StepLog>,
    pub initial_loss: f64,
    pub final_loss: f64,
}

fn loss_step<'t, S: Scalar>(
    net: &Network<S>,
    problem: &Problem<S>,
    tape: &'t Tape<S>,
) -> Result<(StepLog, Option<Gradients<S>>, Bound<'t, S>)> {
    let p = net.params().bind(tape);
    let est = net.forward(&p, &tape.constant(problem.input.clone()))?;
    let l = pcm_loss(
        &tape.constant(problem.target.clone()),
        &est,
        &tape.constant(problem.mixture_ref.clone()),
        problem.mode,
    )?;
    let (loss, speech_term, noise_term) = l.values();
    if !loss.is_finite() {
        return Err(Error::NonFinite { op: "pcm_loss" });
    }
    let grads = if tape.is_recording() { Some(tape.backward(&l.total)?) } else { None };
    Ok((
        StepLog {
            step: 0,
            loss,
            speech_term,
            noise_term,
        },
        grads,
        p,
    ))
}

pub fn loss<S: Scalar>(net: &Network<S>, problem: &Problem<S>) -> Result<StepLog> {
    let tape = Tape::inference();
    Ok(loss_step(net, problem, &tape)?.0)
}

/// Plain gradient descent. `on_step` sees the loss at each step before the
/// update; the summary's final loss is measured after the last update.
pub fn train<S: Scalar>(
    net: &mut Network<S>,
    problem: &Problem<S>,
    opts: TrainOptions,
    mut on_step: impl FnMut(&StepLog),
) -> Result<TrainSummary> {
    let mut log = Vec::with_capacity(opts.steps + 1);
    let dropout = net.config().dropout;
    for step in 0..opts.steps {
        let tape = Tape::new();
        let tape = if dropout > 0.0 { tape.with_dropout(opts.seed.wrapping_add(step as u64)) } else { tape };
        let (mut entry, grads, bound) = loss_step(net, problem, &tape)?;
        entry.step = step;
        on_step(&entry);
        log.push(entry);
        let grads = grads.expect("recording tape yields gradients");
        net.params_mut().descend(&bound, &grads, opts.lr)?;
    }
    let mut last = loss(net, problem)?;
    last.step = opts.steps;
    on_step(&last);
    log.push(last);
    Ok(TrainSummary {
        initial_loss: log[0].loss,
        final_loss: last.loss,
        log,
    })
}

/// SI-SDR (dB) of the enhanced estimate and of the raw reference-channel
/// mixture, both against the clean reference.
pub fn si_sdr_gain<S: Scalar>(net: &Network<S>, problem: &Problem<S>) -> Result<(f64, f64)> {
    let clean = problem.clean_ref();
    let est = net.enhance(&problem.mixture.noisy)?;
    Ok((si_sdr(est.channel(0), clean)?, si_sdr(problem.noisy_ref(), clean)?))
}
