//! Overfits the tiny model to one synthetic 0 dB mixture with gradient
//! descent and reports loss and SI-SDR before and after.

use deftan::train::{self, Problem, TrainOptions};
use deftan::{ModelConfig, Network};

fn main() -> deftan::Result<()> {
    let cfg = ModelConfig::tiny();
    let problem = Problem::<f32>::toy(&cfg, 0.25, 0)?;
    let mut net = Network::<f32>::build(&cfg, 0)?;
    let (before, mixture) = train::si_sdr_gain(&net, &problem)?;

    let summary = train::train(&mut net, &problem, TrainOptions::default(), |s| {
        if s.step % 20 == 0 {
            println!("step {:>3} loss {:.5}", s.step, s.loss);
        }
    })?;
    let (after, _) = train::si_sdr_gain(&net, &problem)?;
    println!(
        "loss {:.5} -> {:.5} ({:.1}%)",
        summary.initial_loss,
        summary.final_loss,
        100.0 * summary.final_loss / summary.initial_loss
    );
    println!("si-sdr: mixture {mixture:.2} dB, untrained {before:.2} dB, trained {after:.2} dB");
    Ok(())
}
