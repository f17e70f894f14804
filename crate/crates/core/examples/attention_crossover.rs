//! Sequence length at which vanilla attention becomes costlier than
//! convolutional efficient attention.

use deftan::complexity::{table_cost, BlockDims, BlockKind};

fn main() -> deftan::Result<()> {
    for (d, k) in [(16, 3), (64, 3), (64, 5)] {
        let mut cross = None;
        for l in 1..=4 * (1 + k * k) * d {
            let dims = BlockDims::new(d, 1, k * k, 1, l);
            let vanilla = table_cost(BlockKind::VanillaAttention, &dims)?.macs;
            let cea = table_cost(BlockKind::ConvEfficientAttention, &dims)?.macs;
            if vanilla >= cea {
                cross = Some(l);
                break;
            }
        }
        println!("D={d:<3} k={k}: first L with vanilla >= cea is {:?}, (1+k²)D = {}", cross, (1 + k * k) * d);
    }
    Ok(())
}
