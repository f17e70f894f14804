//! Weight memory of the split dense block against dense and grouped blocks.

use deftan::complexity::{table_cost, BlockDims, BlockKind};

fn main() -> deftan::Result<()> {
    let dims = BlockDims::new(64, 4, 9, 1, 64);
    let sdb = table_cost(BlockKind::Sdb2d, &dims)?.weights;
    for kind in [BlockKind::Dense, BlockKind::Grouped] {
        let w = table_cost(kind, &dims)?.weights;
        println!("sdb / {:<7} = {sdb} / {w} = {}", kind.name(), sdb as f64 / w as f64);
    }
    Ok(())
}
