//! Builds a model, saves and reloads it, and enhances a synthetic mixture.

use deftan::loss::si_sdr;
use deftan::train::Problem;
use deftan::{ModelConfig, Network};

fn main() -> deftan::Result<()> {
    let cfg = ModelConfig::tiny();
    let net = Network::<f32>::build(&cfg, 3)?;
    let path = std::env::temp_dir().join("deftan-tiny.model");
    net.save(&path)?;
    let net = Network::<f32>::load_expecting(&path, &cfg)?;
    println!("loaded {} parameters from {}", net.count_params().total, path.display());

    let problem = Problem::<f32>::toy(&cfg, 2.0, 1)?;
    let noisy = &problem.mixture.noisy;
    let out = net.enhance(noisy)?;
    println!("{} ch x {} samples -> {} ch x {} samples", noisy.channels(), noisy.len(), out.channels(), out.len());
    println!("si-sdr of untrained output {:.2} dB", si_sdr(out.channel(0), problem.clean_ref())?);
    Ok(())
}
