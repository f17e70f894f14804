//! Analytic cost of every block kind at one size, checked against a dry-run
//! count of the block built in isolation.

use deftan::complexity::{audit_block, table_cost, BlockDims, BlockKind, CostModel};

fn main() -> deftan::Result<()> {
    println!("{:<8} {:>12} {:>12} {:>10} {:>10} {:>6}", "kind", "macs", "table_macs", "weights", "memory", "exact");
    for kind in BlockKind::ALL {
        // 2D kinds take k² taps, 1D kinds k
        let taps = match kind {
            BlockKind::Dense | BlockKind::Grouped | BlockKind::Sdb2d => 9,
            _ => 3,
        };
        let dims = BlockDims::new(16, 4, taps, 1, 100);
        let audit = audit_block(kind, &dims, CostModel::default())?;
        println!(
            "{:<8} {:>12} {:>12} {:>10} {:>10} {:>6}",
            kind.name(),
            audit.analytic.macs,
            table_cost(kind, &dims)?.macs,
            audit.analytic.weights,
            audit.analytic.memory(),
            audit.exact()
        );
    }
    Ok(())
}
