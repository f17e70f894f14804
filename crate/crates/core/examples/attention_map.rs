//! Key-value attention map of one head in the first F- and T-transformer.

use deftan::train::Problem;
use deftan::transformer::SeqAxis;
use deftan::{ModelConfig, Network};

fn main() -> deftan::Result<()> {
    let cfg = ModelConfig::tiny();
    let net = Network::<f64>::build(&cfg, 0)?;
    let problem = Problem::<f64>::toy(&cfg, 0.5, 0)?;
    for axis in [SeqAxis::Freq, SeqAxis::Time] {
        let map = net.attention_map(&problem.mixture.noisy, 0, axis, 0, 2)?;
        let d = map.shape()[0];
        println!("{} map, {d}x{d}:", axis.label());
        for row in map.data().chunks(d) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:+.4}")).collect();
            println!("  {}", cells.join(" "));
        }
    }
    Ok(())
}
