//! Counts parameters and MACs of the base and large models on a 1 s,
//! 4-channel input, with analytic and measured cost per scope.

use deftan::complexity::{measure_cost, CostModel};
use deftan::{ModelConfig, Network};

fn main() -> deftan::Result<()> {
    for (name, cfg) in [("base", ModelConfig::base()), ("large", ModelConfig::large())] {
        let net = Network::<f32>::build(&cfg, 0)?;
        let report = measure_cost(&net, 1.0, CostModel::default())?;
        println!("== {name}");
        print!("{}", report.to_text());
    }
    Ok(())
}
