use deftan::audio::AudioClip;
use deftan::complexity::{count_macs, measure_cost, CostModel};
use deftan::config::ModelConfig;
use deftan::network::Network;
use deftan::params::ParamRole;
use deftan::transformer::SeqAxis;
use deftan::{Error, Tensor};

fn clip(mics: usize, n: usize, seed: f64) -> AudioClip {
    let chans: Vec<Vec<f64>> = (0..mics)
        .map(|m| {
            (0..n)
                .map(|i| {
                    let t = i as f64 / 16_000.0;
                    (2.0 * std::f64::consts::PI * (220.0 + 40.0 * m as f64) * t + seed).sin()
                        + 0.3 * ((i * 7919 + m * 31) % 101) as f64 / 101.0
                })
                .collect()
        })
        .collect();
    AudioClip::from_channels(&chans, 16_000).unwrap()
}

fn tiny(mics: usize) -> ModelConfig {
    ModelConfig {
        mics,
        ..ModelConfig::tiny()
    }
}

#[test]
fn base_and_large_parameter_counts() {
    let base = Network::<f32>::build(&ModelConfig::base(), 0).unwrap().count_params();
    let large = Network::<f32>::build(&ModelConfig::large(), 0).unwrap().count_params();
    assert!((base.total as f64 / 4.0e6 - 1.0).abs() < 0.10, "base {}", base.total);
    assert!((large.total as f64 / 7.7e6 - 1.0).abs() < 0.10, "large {}", large.total);
    assert_eq!(base.total, base.kernels + base.biases + base.norms + base.slopes);
}

#[test]
fn same_seed_same_weights() {
    let cfg = ModelConfig::tiny();
    let a = Network::<f64>::build(&cfg, 5).unwrap();
    let b = Network::<f64>::build(&cfg, 5).unwrap();
    let c = Network::<f64>::build(&cfg, 6).unwrap();
    assert_eq!(a.params().tensors(), b.params().tensors());
    assert_ne!(a.params().tensors(), c.params().tensors());

    let x = clip(2, 4000, 0.0);
    let ya = a.enhance(&x).unwrap();
    let yb = b.enhance(&x).unwrap();
    assert_eq!(ya.samples.data(), yb.samples.data());
}

#[test]
fn mono_output_for_every_mic_count_and_length() {
    for mics in [1, 2, 4, 8] {
        let net = Network::<f32>::build(&tiny(mics), 1).unwrap();
        for n in [16_000, 37_123, 64_000] {
            let y = net.enhance(&clip(mics, n, 0.5)).unwrap();
            assert_eq!((y.channels(), y.len()), (1, n), "M={mics} N={n}");
            assert!(y.samples.data().iter().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn shorter_than_a_window_is_rejected() {
    let net = Network::<f32>::build(&ModelConfig::tiny(), 0).unwrap();
    assert!(net.enhance(&clip(2, 63, 0.0)).is_err());
    assert!(net.enhance(&clip(3, 4000, 0.0)).is_err());
}

#[test]
fn zero_input_maps_to_zero_without_biases() {
    let mut net = Network::<f64>::build(&ModelConfig::tiny(), 2).unwrap();
    let biases: Vec<String> = net
        .params()
        .params()
        .iter()
        .filter(|p| p.role == ParamRole::Bias)
        .map(|p| p.name.clone())
        .collect();
    for name in biases {
        net.params_mut().zero_under(&name);
    }
    let x = AudioClip::from_channels(&[vec![0.0; 4000], vec![0.0; 4000]], 16_000).unwrap();
    let y = net.enhance(&x).unwrap();
    assert!(y.samples.data().iter().all(|&v| v == 0.0));

    // with biases the estimate of silence stays finite
    let net = Network::<f64>::build(&ModelConfig::tiny(), 2).unwrap();
    assert!(net.enhance(&x).unwrap().samples.data().iter().all(|v| v.is_finite()));
}

#[test]
fn save_load_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tiny.model");
    let net = Network::<f32>::build(&ModelConfig::tiny(), 9).unwrap();
    net.save(&path).unwrap();
    let back = Network::<f32>::load(&path).unwrap();
    assert_eq!(back.config(), net.config());
    assert_eq!(back.count_params(), net.count_params());
    let x = clip(2, 6000, 1.0);
    assert_eq!(back.enhance(&x).unwrap().samples.data(), net.enhance(&x).unwrap().samples.data());

    let wdir = dir.path().join("weights");
    net.export_weights(&wdir).unwrap();
    let mut fresh = Network::<f32>::build(&ModelConfig::tiny(), 0).unwrap();
    fresh.import_weights(&wdir).unwrap();
    assert_eq!(fresh.params().tensors(), net.params().tensors());
}

#[test]
fn damaged_or_foreign_files_are_structured_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m");
    Network::<f32>::build(&ModelConfig::tiny(), 0).unwrap().save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(Network::<f32>::load(&path), Err(Error::Format(_))));

    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(Network::<f32>::load(&path).is_err());

    std::fs::write(&path, &bytes).unwrap();
    let wider = ModelConfig {
        channels: 32,
        sub_channels: 8,
        ..ModelConfig::tiny()
    };
    match Network::<f32>::load_expecting(&path, &wider) {
        Err(Error::Config(msg)) => assert!(msg.contains("channels"), "{msg}"),
        other => panic!("expected a config error, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn scope_totals_decompose() {
    let cfg = ModelConfig::tiny();
    let net = Network::<f32>::build(&cfg, 0).unwrap();
    let x = Tensor::<f32>::zeros(&[4, 30, 33]);
    let (_, c) = count_macs(|| net.infer(&x)).unwrap();
    let blocks: u64 = (0..cfg.blocks).map(|i| c.scope_total(&format!("block{i}"))).sum();
    assert!(blocks > 0);
    assert_eq!(c.scope_total("encoder") + blocks + c.scope_total("decoder"), c.total());
}

#[test]
fn halving_blocks_halves_the_block_stack() {
    let stack = |blocks| {
        let cfg = ModelConfig {
            blocks,
            ..ModelConfig::base()
        };
        let r = measure_cost(&Network::<f32>::build(&cfg, 0).unwrap(), 1.0, CostModel::default()).unwrap();
        let fixed: u64 = r
            .rows
            .iter()
            .filter(|row| row.scope == "encoder" || row.scope == "decoder")
            .map(|row| row.measured_macs)
            .sum();
        (r.total.measured_macs - fixed, fixed)
    };
    let (six, fixed6) = stack(6);
    let (three, fixed3) = stack(3);
    assert_eq!(fixed6, fixed3);
    assert_eq!(six, 2 * three);
}

#[test]
fn attention_map_per_head() {
    let cfg = ModelConfig::tiny();
    let net = Network::<f64>::build(&cfg, 4).unwrap();
    let x = clip(2, 4000, 0.2);
    for axis in [SeqAxis::Freq, SeqAxis::Time] {
        let m = net.attention_map(&x, 1, axis, 3, 2).unwrap();
        assert_eq!(m.shape(), &[cfg.sub_channels, cfg.sub_channels]);
        assert!(m.data().iter().all(|v| v.is_finite()));
    }
    assert!(net.attention_map(&x, 2, SeqAxis::Freq, 0, 0).is_err());
    assert!(net.attention_map(&x, 0, SeqAxis::Freq, 4, 0).is_err());
    assert!(net.attention_map(&x, 0, SeqAxis::Time, 0, 10_000).is_err());
}
