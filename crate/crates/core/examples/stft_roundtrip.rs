//! STFT analysis and overlap-add resynthesis of a random 4 s clip.

use deftan::audio::{interior_rel_error, istft, stft, AudioClip, StftConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> deftan::Result<()> {
    let cfg = StftConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x: Vec<f64> = (0..64_000).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let clip = AudioClip::from_channels(std::slice::from_ref(&x), 16_000)?;

    let spec = stft(&clip, cfg)?;
    println!(
        "win {} hop {}: {} channels x {} frames x {} bins",
        cfg.win,
        cfg.hop,
        spec.channels(),
        spec.frames(),
        spec.bins()
    );

    let y = istft(&spec.channel(0), cfg, x.len())?;
    println!("interior relative L2 error {:.3e}", interior_rel_error(&x, &y, cfg));
    Ok(())
}
