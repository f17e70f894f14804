//! SI-SDR and the phase-constrained magnitude loss on small signals.

use deftan::autodiff::Tape;
use deftan::loss::{pcm_loss, si_sdr, MagnitudeMode};
use deftan::Tensor;

fn main() -> deftan::Result<()> {
    let clean: Vec<f64> = (0..800).map(|i| (i as f64 * 0.07).sin()).collect();
    let noise: Vec<f64> = (0..800).map(|i| (i as f64 * 1.3).cos() * 0.3).collect();
    let scaled: Vec<f64> = clean.iter().map(|v| 3.0 * v).collect();
    let noisy: Vec<f64> = clean.iter().zip(&noise).map(|(s, v)| s + v).collect();
    println!("scaled copy  {:.1} dB", si_sdr(&scaled, &clean)?);
    println!("noisy        {:.2} dB", si_sdr(&noisy, &clean)?);

    let tape = Tape::<f64>::inference();
    let spec = |f: fn(usize) -> f64| tape.constant(Tensor::from_fn(&[2, 4, 5], f));
    let target = spec(|i| (i as f64 * 0.4).sin());
    let estimate = spec(|i| (i as f64 * 0.4).sin() * 0.9);
    let mixture = spec(|i| (i as f64 * 0.4).sin() + 0.2 * (i as f64).cos());
    let l = pcm_loss(&target, &estimate, &mixture, MagnitudeMode::default())?;
    let (total, speech, noise) = l.values();
    println!("pcm loss {total:.5} (speech {speech:.5}, noise {noise:.5})");
    Ok(())
}
