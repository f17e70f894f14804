use deftan::autodiff::Tape;
use deftan::complexity::{audit_block, block_cost, count_macs, BlockDims, BlockKind, CostModel};
use deftan::kernels::pointwise::LN_EPS;
use deftan::layers::Dims;
use deftan::params::{ParamBuilder, ParamRole, ParamStore};
use deftan::sdb::{DenseBlock, Sdb, Sdb1d, SdbConfig};
use deftan::Tensor;
use proptest::prelude::*;

fn set(store: &mut ParamStore<f64>, name: &str, data: &[f64]) {
    let id = store.find(name).unwrap_or_else(|| panic!("no parameter {name}"));
    let shape = store.get(id).shape().to_vec();
    store.set(id, Tensor::from_f64(&shape, data).unwrap()).unwrap();
}

/// Global layer norm with unit gain, then PReLU at the initial slope.
fn norm_act(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.iter()
        .map(|v| (v - mean) / (var + LN_EPS).sqrt())
        .map(|v| if v > 0.0 { v } else { 0.25 * v })
        .collect()
}

#[test]
fn hand_unrolled_two_group_block() {
    let mut b = ParamBuilder::new(0);
    let block = Sdb::new(&mut b, "sdb", SdbConfig::new(2, 2, 1, Dims::Two), false).unwrap();
    let mut store = b.finish();
    set(&mut store, "sdb.layer0.conv.weight", &[1.5]);
    set(&mut store, "sdb.layer1.conv.weight", &[-0.7, 2.0]);

    let x1 = [0.3, -1.2, 0.8, 2.0, -0.1, 0.0];
    let x2 = [1.0, 0.4, -0.6, 0.2, 0.9, -1.5];
    let y1 = norm_act(&x1.map(|v| 1.5 * v));
    let pre2: Vec<f64> = y1.iter().zip(&x2).map(|(a, b)| -0.7 * a + 2.0 * b).collect();
    let want = norm_act(&pre2);

    let tape = Tape::inference();
    let p = store.bind(&tape);
    let x = tape.constant(Tensor::from_f64(&[2, 2, 3], &[x1, x2].concat()).unwrap());
    let y = block.forward(&p, &x).unwrap();
    assert_eq!(y.shape(), &[1, 2, 3]);
    for (got, want) in y.value().data().iter().zip(&want) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn one_group_is_a_single_conv_layer() {
    let mut b = ParamBuilder::new(0);
    let block = Sdb::new(&mut b, "sdb", SdbConfig::new(1, 8, 3, Dims::Two), false).unwrap();
    let store = b.finish();
    assert_eq!(store.count_role(ParamRole::Kernel), 8 * 8 * 9);
    assert_eq!(store.layers().len(), 1);
    let tape = Tape::inference();
    let (y, c) = count_macs(|| block.forward(&store.bind(&tape), &tape.constant(Tensor::zeros(&[8, 5, 6])))).unwrap();
    assert_eq!(y.shape(), &[8, 5, 6]);
    assert_eq!(c.total(), 8 * 8 * 9 * 30);
}

#[test]
fn weight_count_for_c256_g4_k3() {
    let mut b = ParamBuilder::new(0);
    Sdb::new(&mut b, "sdb", SdbConfig::new(4, 256, 3, Dims::Two), false).unwrap();
    assert_eq!(b.finish().count_role(ParamRole::Kernel), 258_048);
}

#[test]
fn sdb1d_shapes_and_macs() {
    let tape = Tape::inference();
    let mut b = ParamBuilder::new(0);
    let block = Sdb1d::new(&mut b, "sdb", 4, 64, 3).unwrap();
    let store = b.finish();
    let p = store.bind(&tape);
    let x = tape.constant(Tensor::zeros(&[1, 64, 257]));
    let (y, c) = count_macs(|| block.forward(&p, &x)).unwrap();
    assert_eq!(y.shape(), &[1, 64, 254]);
    // channel budget C = G·D = 256 over L = 254 output positions; a 1D conv has k taps
    assert_eq!(c.total(), 7 * 256 * 256 * 3 * 254 / 16);
    let dims = |taps| BlockDims::new(256, 4, taps, 1, 254);
    assert_eq!(block_cost(BlockKind::Sdb1d, &dims(3)).unwrap().macs, c.total());
    assert_eq!(block_cost(BlockKind::Sdb1d, &dims(9)).unwrap().macs, 65_544_192);

    let mut b = ParamBuilder::new(0);
    let single = Sdb1d::new(&mut b, "sdb", 1, 5, 3).unwrap();
    let store = b.finish();
    let y = single.forward(&store.bind(&tape), &tape.constant(Tensor::zeros(&[2, 5, 11]))).unwrap();
    assert_eq!(y.shape(), &[2, 5, 11]);
    assert!(Sdb1d::new(&mut ParamBuilder::new(0), "s", 4, 2, 3).unwrap()
        .forward(&store.bind(&tape), &tape.constant(Tensor::zeros(&[1, 2, 3])))
        .is_err());
}

fn dense_macs(grouped: bool, g: usize, c: usize) -> u64 {
    let tape = Tape::inference();
    let mut b = ParamBuilder::new(0);
    let block = DenseBlock::new(&mut b, "dense", SdbConfig::new(g, c, 3, Dims::Two), grouped, false).unwrap();
    let store = b.finish();
    let x = tape.constant(Tensor::zeros(&[c, 8, 8]));
    count_macs(|| block.forward(&store.bind(&tape), &x)).unwrap().1.total()
}

#[test]
fn dense_and_grouped_examples() {
    assert_eq!(dense_macs(false, 4, 64), 23_592_960);
    assert_eq!(dense_macs(true, 4, 64), 5_898_240);
    let single = 64 * 64 * 9 * 64;
    assert_eq!(dense_macs(false, 1, 64), single);
    assert_eq!(dense_macs(true, 1, 64), single);
}

#[test]
fn memory_ratios_follow_the_formulas() {
    let d = BlockDims::new(256, 4, 9, 1, 2570);
    let w = |k| block_cost(k, &d).unwrap().weights as f64;
    assert_eq!(w(BlockKind::Sdb2d) / w(BlockKind::Grouped), 0.175);
    assert_eq!(w(BlockKind::Sdb2d) / w(BlockKind::Dense), 0.04375);
}

#[test]
fn rejects_indivisible_channels() {
    let mut b = ParamBuilder::new(0);
    assert!(Sdb::new(&mut b, "sdb", SdbConfig::new(3, 8, 3, Dims::Two), false).is_err());
    assert!(Sdb::new(&mut b, "sdb2", SdbConfig::new(2, 8, 2, Dims::Two), false).is_err());
    let ok = Sdb::new(&mut b, "sdb3", SdbConfig::new(2, 8, 3, Dims::Two), false).unwrap();
    let store = b.finish();
    let tape = Tape::inference();
    assert!(ok.forward(&store.bind(&tape), &tape.constant(Tensor::zeros(&[6, 2, 2]))).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn counted_cost_matches_closed_form(
        kind in prop::sample::select(vec![BlockKind::Dense, BlockKind::Grouped, BlockKind::Sdb2d, BlockKind::Sdb1d]),
        g in 1usize..5, m in 1usize..4, half in 0usize..3, len in 1usize..20,
    ) {
        let k = 2 * half + 1;
        let taps = if kind == BlockKind::Sdb1d { k } else { k * k };
        let a = audit_block(kind, &BlockDims::new(g * m, g, taps, 1, len), CostModel::default()).unwrap();
        prop_assert!(a.exact(), "{:?}", a);
    }

    #[test]
    fn output_channels_are_always_d(g in 1usize..5, d in 1usize..4, t in 1usize..4, f in 1usize..4) {
        let mut b = ParamBuilder::new(1);
        let block = Sdb::new(&mut b, "sdb", SdbConfig::new(g, g * d, 3, Dims::Two), false).unwrap();
        let store = b.finish();
        let tape = Tape::inference();
        let x = tape.constant(Tensor::from_fn(&[g * d, t, f], |i| (i as f64).sin()));
        let y = block.forward(&store.bind(&tape), &x).unwrap();
        prop_assert_eq!(y.shape(), &[d, t, f][..]);
    }
}
