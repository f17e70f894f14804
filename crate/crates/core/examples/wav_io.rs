//! Writes a 4-channel float WAV and a 16-bit one, then reads both back.

use deftan::audio::AudioClip;
use deftan::wav::{self, WavFormat};

fn main() -> deftan::Result<()> {
    let dir = std::env::temp_dir().join("deftan-wav-io");
    std::fs::create_dir_all(&dir)?;
    let channels: Vec<Vec<f64>> = (0..4)
        .map(|m| (0..1600).map(|i| 0.5 * ((i + 10 * m) as f64 * 0.05).sin()).collect())
        .collect();
    let clip = AudioClip::from_channels(&channels, 16_000)?;

    for (name, format) in [("float.wav", WavFormat::Float32), ("pcm16.wav", WavFormat::Pcm16)] {
        let path = dir.join(name);
        wav::write(&path, &clip, format)?;
        let back = wav::read(&path)?;
        let err = (0..4)
            .flat_map(|m| clip.channel(m).iter().zip(back.channel(m)).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        println!(
            "{}: {} ch, {} samples @ {} Hz, max error {err:.2e}",
            path.display(),
            back.channels(),
            back.len(),
            back.sample_rate
        );
    }
    Ok(())
}
