//! RIFF/WAV input and output for 16-bit PCM and 32-bit float, 1 to 8 channels.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::audio::AudioClip;
use crate::error::{Error, Result};

pub const MAX_CHANNELS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

pub fn read(path: impl AsRef<Path>) -> Result<AudioClip> {
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    let m = spec.channels as usize;
    if m == 0 || m > MAX_CHANNELS {
        return Err(Error::Format(format!("{m} channels; supported are 1 to {MAX_CHANNELS}")));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::Format(format!(
                "unsupported sample format {fmt:?} with {bits} bits"
            )))
        }
    };
    let n = interleaved.len() / m;
    let mut channels = vec![Vec::with_capacity(n); m];
    for frame in interleaved.chunks_exact(m) {
        for (c, &v) in channels.iter_mut().zip(frame) {
            c.push(v);
        }
    }
    if n == 0 {
        return Err(Error::Format("no samples".into()));
    }
    AudioClip::from_channels(&channels, spec.sample_rate)
}

pub fn write(path: impl AsRef<Path>, clip: &AudioClip, format: WavFormat) -> Result<()> {
    let m = clip.channels();
    if m > MAX_CHANNELS {
        return Err(Error::Format(format!("{m} channels; at most {MAX_CHANNELS} supported")));
    }
    let spec = WavSpec {
        channels: m as u16,
        sample_rate: clip.sample_rate,
        bits_per_sample: match format {
            WavFormat::Pcm16 => 16,
            WavFormat::Float32 => 32,
        },
        sample_format: match format {
            WavFormat::Pcm16 => SampleFormat::Int,
            WavFormat::Float32 => SampleFormat::Float,
        },
    };
    let mut w = WavWriter::create(path, spec)?;
    for i in 0..clip.len() {
        for ch in 0..m {
            let v = clip.channel(ch)[i];
            match format {
                WavFormat::Pcm16 => w.write_sample((v * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?,
                WavFormat::Float32 => w.write_sample(v as f32)?,
            }
        }
    }
    w.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcm16_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let clip = AudioClip::from_channels(&[vec![0.0, 0.5, -1.0], vec![0.25, -0.5, 32767.0 / 32768.0]], 16_000).unwrap();
        write(&path, &clip, WavFormat::Pcm16).unwrap();
        assert_eq!(read(&path).unwrap(), clip);
        write(&path, &clip, WavFormat::Float32).unwrap();
        let back = read(&path).unwrap();
        assert!(back.samples.max_abs_diff(&clip.samples) < 1e-7);
    }
}
