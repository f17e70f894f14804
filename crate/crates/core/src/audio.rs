//! Waveforms, STFT / iSTFT, variance normalization and mixture synthesis.

use std::f64::consts::PI;

use rustfft::{num_complex::Complex64, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Multichannel waveform, `[M, N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Tensor<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Tensor<f64>, sample_rate: u32) -> Result<Self> {
        if samples.rank() != 2 {
            return Err(Error::Shape {
                op: "audio_clip",
                detail: format!("expected [M, N], got {:?}", samples.shape()),
            });
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn from_channels(channels: &[Vec<f64>], sample_rate: u32) -> Result<Self> {
        let n = channels.first().map_or(0, Vec::len);
        if channels.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidArgument("channels differ in length".into()));
        }
        let data = channels.concat();
        Self::new(Tensor::new(&[channels.len(), n], data)?, sample_rate)
    }

    pub fn channels(&self) -> usize {
        self.samples.dim(0)
    }

    pub fn len(&self) -> usize {
        self.samples.dim(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, m: usize) -> &[f64] {
        let n = self.len();
        &self.samples.data()[m * n..][..n]
    }

    pub fn seconds(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            samples: self.samples.map(|v| v * k),
            sample_rate: self.sample_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub win: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self { win: 512, hop: 256 }
    }
}

impl StftConfig {
    pub fn new(win: usize, hop: usize) -> Result<Self> {
        if hop == 0 || win < 2 || !win.is_multiple_of(2 * hop) {
            return Err(Error::Config(format!("window {win} must be a multiple of 2 × hop {hop}")));
        }
        Ok(Self { win, hop })
    }

    pub fn bins(&self) -> usize {
        self.win / 2 + 1
    }

    pub fn frames(&self, n: usize) -> Result<usize> {
        if n < self.win {
            return Err(Error::InvalidArgument(format!(
                "signal of {n} samples is shorter than one {}-sample window",
                self.win
            )));
        }
        Ok((n - self.win) / self.hop + 1)
    }

    /// Symmetric Hamming window.
    pub fn window(&self) -> Vec<f64> {
        let denom = (self.win - 1) as f64;
        (0..self.win)
            .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / denom).cos())
            .collect()
    }
}

/// RI-stacked spectrogram `[2M, T, F]`: all real planes, then all imaginary.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectro {
    pub ri: Tensor<f64>,
    pub cfg: StftConfig,
    /// Length of the analyzed waveform.
    pub samples: usize,
}

impl Spectro {
    pub fn channels(&self) -> usize {
        self.ri.dim(0) / 2
    }

    pub fn frames(&self) -> usize {
        self.ri.dim(1)
    }

    pub fn bins(&self) -> usize {
        self.ri.dim(2)
    }

    /// Real and imaginary planes of channel `m`, as a `[2, T, F]` tensor.
    pub fn channel(&self, m: usize) -> Tensor<f64> {
        let (mm, t, f) = (self.channels(), self.frames(), self.bins());
        let plane = t * f;
        let d = self.ri.data();
        let mut out = Vec::with_capacity(2 * plane);
        out.extend_from_slice(&d[m * plane..][..plane]);
        out.extend_from_slice(&d[(mm + m) * plane..][..plane]);
        Tensor::new(&[2, t, f], out).expect("plane sizes match")
    }
}

pub fn stft(clip: &AudioClip, cfg: StftConfig) -> Result<Spectro> {
    let (m, n) = (clip.channels(), clip.len());
    let t = cfg.frames(n)?;
    let f = cfg.bins();
    let window = cfg.window();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.win);
    let plane = t * f;
    let mut ri = vec![0.0; 2 * m * plane];
    let mut buf = vec![Complex64::default(); cfg.win];
    for ch in 0..m {
        let x = clip.channel(ch);
        for frame in 0..t {
            let start = frame * cfg.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(x[start + i] * window[i], 0.0);
            }
            fft.process(&mut buf);
            for (k, c) in buf[..f].iter().enumerate() {
                ri[ch * plane + frame * f + k] = c.re;
                ri[(m + ch) * plane + frame * f + k] = c.im;
            }
        }
    }
    let ri = Tensor::new(&[2 * m, t, f], ri)?;
    ri.check_finite("stft")?;
    Ok(Spectro { ri, cfg, samples: n })
}

/// Weighted overlap-add inverse of a single-channel `[2, T, F]` spectrogram,
/// trimmed or zero-padded to `len` samples.
///
/// Samples whose window-square overlap sum is below `1e-8` are set to zero.
pub fn istft(ri: &Tensor<f64>, cfg: StftConfig, len: usize) -> Result<Vec<f64>> {
    let [two, t, f] = *ri.shape() else {
        return Err(Error::Shape {
            op: "istft",
            detail: format!("expected [2, T, F], got {:?}", ri.shape()),
        });
    };
    if two != 2 || f != cfg.bins() {
        return Err(Error::Shape {
            op: "istft",
            detail: format!("expected [2, T, {}], got {:?}", cfg.bins(), ri.shape()),
        });
    }
    let window = cfg.window();
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(cfg.win);
    let total = (t - 1) * cfg.hop + cfg.win;
    let mut out = vec![0.0; total];
    let mut norm = vec![0.0; total];
    let mut buf = vec![Complex64::default(); cfg.win];
    let (re, im) = ri.data().split_at(t * f);
    let scale = 1.0 / cfg.win as f64;
    for frame in 0..t {
        for k in 0..f {
            buf[k] = Complex64::new(re[frame * f + k], im[frame * f + k]);
        }
        // Hermitian completion of the single-sided spectrum
        for k in f..cfg.win {
            buf[k] = buf[cfg.win - k].conj();
        }
        buf[0].im = 0.0;
        if cfg.win.is_multiple_of(2) {
            buf[cfg.win / 2].im = 0.0;
        }
        ifft.process(&mut buf);
        let start = frame * cfg.hop;
        for i in 0..cfg.win {
            out[start + i] += buf[i].re * scale * window[i];
            norm[start + i] += window[i] * window[i];
        }
    }
    if norm.iter().all(|&w| w < 1e-8) {
        return Err(Error::InvalidArgument("degenerate window overlap sum".into()));
    }
    for (o, &w) in out.iter_mut().zip(&norm) {
        *o = if w < 1e-8 { 0.0 } else { *o / w };
    }
    out.resize(len, 0.0);
    Ok(out)
}

/// Relative L2 error between two signals over the interior samples, those
/// at least one window away from either end (the edges lack full overlap).
pub fn interior_rel_error(reference: &[f64], estimate: &[f64], cfg: StftConfig) -> f64 {
    let n = reference.len().min(estimate.len());
    if n <= 2 * cfg.win {
        return f64::NAN;
    }
    let range = cfg.win..n - cfg.win;
    let err: f64 = range.clone().map(|i| (reference[i] - estimate[i]).powi(2)).sum();
    let norm: f64 = range.map(|i| reference[i].powi(2)).sum();
    (err / norm).sqrt()
}

/// Rescales all channels jointly to unit sample variance. Returns the scaled
/// clip and the factor applied.
pub fn normalize_variance(clip: &AudioClip) -> Result<(AudioClip, f64)> {
    let d = clip.samples.data();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var <= 0.0 || !var.is_finite() {
        return Err(Error::InvalidArgument("cannot normalize a constant or silent clip".into()));
    }
    let scale = 1.0 / var.sqrt();
    Ok((clip.scaled(scale), scale))
}

/// Full linear convolution, truncated to `x.len()`.
pub fn convolve_same_len(x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for (i, &hv) in h.iter().enumerate() {
        if hv == 0.0 {
            continue;
        }
        for (yo, &xv) in y[i..].iter_mut().zip(x) {
            *yo += hv * xv;
        }
    }
    y
}

pub fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Components of a synthesized mixture.
#[derive(Debug, Clone)]
pub struct Mixture {
    /// `y = x + v`
    pub noisy: AudioClip,
    /// Reverberant speech image `x = s ∗ (direct + tail)`.
    pub reverberant: AudioClip,
    /// Noise after SNR scaling.
    pub noise: AudioClip,
    /// Direct-path image `s ∗ direct`, the enhancement target.
    pub clean: AudioClip,
}

/// Signal-model mixture. `speech` and `noise` have the same shape; each
/// channel `m` is convolved with `rir_direct[m]` and `rir_tail[m]`. Noise is
/// scaled so the speech-to-noise power ratio of the dry speech at the
/// reference channel 0 equals `snr_db`.
pub fn mix(
    speech: &AudioClip,
    noise: &AudioClip,
    rir_direct: &[Vec<f64>],
    rir_tail: &[Vec<f64>],
    snr_db: f64,
) -> Result<Mixture> {
    let (m, n) = (speech.channels(), speech.len());
    if noise.channels() != m || noise.len() != n {
        return Err(Error::Shape {
            op: "mix",
            detail: format!("speech {:?} vs noise {:?}", speech.samples.shape(), noise.samples.shape()),
        });
    }
    if rir_direct.len() != m || rir_tail.len() != m {
        return Err(Error::InvalidArgument(format!("need {m} impulse responses per part")));
    }
    let ps = power(speech.channel(0));
    if ps <= 0.0 {
        return Err(Error::InvalidArgument("silent speech at the reference channel".into()));
    }
    let pv = power(noise.channel(0));
    let gain = if pv > 0.0 {
        (ps / pv / 10f64.powf(snr_db / 10.0)).sqrt()
    } else {
        0.0
    };
    let mut clean = Vec::with_capacity(m);
    let mut reverb = Vec::with_capacity(m);
    let mut scaled = Vec::with_capacity(m);
    let mut noisy = Vec::with_capacity(m);
    for ch in 0..m {
        let s = speech.channel(ch);
        let direct = convolve_same_len(s, &rir_direct[ch]);
        let tail = convolve_same_len(s, &rir_tail[ch]);
        let x: Vec<f64> = direct.iter().zip(&tail).map(|(a, b)| a + b).collect();
        let v: Vec<f64> = noise.channel(ch).iter().map(|v| v * gain).collect();
        noisy.push(x.iter().zip(&v).map(|(a, b)| a + b).collect());
        clean.push(direct);
        reverb.push(x);
        scaled.push(v);
    }
    let sr = speech.sample_rate;
    Ok(Mixture {
        noisy: AudioClip::from_channels(&noisy, sr)?,
        reverberant: AudioClip::from_channels(&reverb, sr)?,
        noise: AudioClip::from_channels(&scaled, sr)?,
        clean: AudioClip::from_channels(&clean, sr)?,
    })
}

/// Unit impulse, usable as a direct-path response.
pub fn impulse() -> Vec<f64> {
    vec![1.0]
}

/// `gain · δ[n − delay]`.
pub fn single_echo(delay: usize, gain: f64) -> Vec<f64> {
    let mut h = vec![0.0; delay + 1];
    h[delay] = gain;
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_count() {
        let cfg = StftConfig::default();
        assert_eq!(cfg.frames(64_000).unwrap(), 249);
        assert_eq!(cfg.frames(16_000).unwrap(), 61);
        assert!(cfg.frames(511).is_err());
    }

    #[test]
    fn window_endpoints() {
        let w = StftConfig::default().window();
        assert!((w[0] - 0.08).abs() < 1e-12);
        assert!((w[511] - 0.08).abs() < 1e-12);
    }
}
