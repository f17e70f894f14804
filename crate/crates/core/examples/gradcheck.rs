//! Finite-difference check of every differentiable kernel and of sampled
//! weights of the tiny end-to-end model.

use deftan::gradcheck::{kernel_cases, model_weights};
use deftan::train::Problem;
use deftan::{ModelConfig, Network};

fn main() -> deftan::Result<()> {
    for case in kernel_cases(0) {
        let r = case.check()?;
        println!("{:<22} max rel err {:.2e}", case.name, r.max_rel_err());
    }
    let cfg = ModelConfig::tiny();
    let net = Network::<f64>::build(&cfg, 0)?;
    let problem = Problem::<f64>::toy(&cfg, 0.25, 0)?;
    let check = model_weights(&net, &problem, 10, 0)?;
    for p in &check.report.probes {
        println!("model weight {:>5}: analytic {:+.6e} numeric {:+.6e}", p.index, p.analytic, p.numeric);
    }
    Ok(())
}
