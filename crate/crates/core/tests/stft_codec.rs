use std::f64::consts::PI;

use deftan::audio::{
    interior_rel_error, istft, mix, normalize_variance, power, single_echo, stft, AudioClip, StftConfig,
};
use deftan::train::{synth_speech, white_noise};
use deftan::wav::{self, WavFormat};
use deftan::{Error, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SR: u32 = 16_000;

fn mono(x: &[f64]) -> AudioClip {
    AudioClip::from_channels(&[x.to_vec()], SR).unwrap()
}

fn uniform(n: usize, seed: u64) -> Vec<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()
}

/// Direct O(N²) single-sided DFT of one Hamming-windowed frame.
fn naive_frame(x: &[f64], window: &[f64]) -> Vec<(f64, f64)> {
    let n = window.len();
    (0..n / 2 + 1)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, (&v, &w)) in x.iter().zip(window).enumerate() {
                let a = -2.0 * PI * (k * i) as f64 / n as f64;
                re += v * w * a.cos();
                im += v * w * a.sin();
            }
            (re, im)
        })
        .collect()
}

/// `(re, im)` of bin `f` in frame `t` of channel `m`.
fn bin(spec: &deftan::Spectro, m: usize, t: usize, f: usize) -> (f64, f64) {
    let ch = spec.channel(m);
    let plane = spec.frames() * spec.bins();
    let i = t * spec.bins() + f;
    (ch.data()[i], ch.data()[plane + i])
}

#[test]
fn base_shapes_at_four_seconds() {
    let channels: Vec<Vec<f64>> = (0..4).map(|m| uniform(64_000, m)).collect();
    let clip = AudioClip::from_channels(&channels, SR).unwrap();
    let spec = stft(&clip, StftConfig::default()).unwrap();
    assert_eq!(spec.ri.shape(), &[8, 249, 257]);
}

#[test]
fn short_clip_is_rejected() {
    assert!(stft(&mono(&[0.1; 511]), StftConfig::default()).is_err());
}

#[test]
fn matches_naive_dft() {
    let cfg = StftConfig::default();
    let x = uniform(2048, 3);
    let spec = stft(&mono(&x), cfg).unwrap();
    let window = cfg.window();
    for t in [0, 3, spec.frames() - 1] {
        let want = naive_frame(&x[t * cfg.hop..][..cfg.win], &window);
        let scale = want.iter().map(|(r, i)| r.hypot(*i)).fold(0.0, f64::max);
        for (f, &(re, im)) in want.iter().enumerate() {
            let (gr, gi) = bin(&spec, 0, t, f);
            assert!((gr - re).abs() < 1e-6 * scale && (gi - im).abs() < 1e-6 * scale, "t={t} f={f}");
        }
    }
}

#[test]
fn cosine_energy_concentrates_at_its_bin() {
    let cfg = StftConfig::default();
    let k = 37;
    let x: Vec<f64> = (0..2048).map(|n| (2.0 * PI * k as f64 * n as f64 / cfg.win as f64).cos()).collect();
    let spec = stft(&mono(&x), cfg).unwrap();
    let energy: Vec<f64> = (0..spec.bins())
        .map(|f| {
            let (r, i) = bin(&spec, 0, 2, f);
            r * r + i * i
        })
        .collect();
    let peak = (0..energy.len()).max_by(|&a, &b| energy[a].total_cmp(&energy[b])).unwrap();
    assert_eq!(peak, k);
    let near: f64 = energy[k - 1..=k + 1].iter().sum();
    assert!(near / energy.iter().sum::<f64>() > 0.99);
}

#[test]
fn zero_in_zero_out() {
    let cfg = StftConfig::default();
    let spec = stft(&mono(&[0.0; 4096]), cfg).unwrap();
    assert!(spec.ri.data().iter().all(|&v| v == 0.0));
    let y = istft(&Tensor::zeros(&[2, spec.frames(), spec.bins()]), cfg, 4096).unwrap();
    assert!(y.iter().all(|&v| v == 0.0));
}

#[test]
fn round_trip_noise_and_speech_like_chirp() {
    let cfg = StftConfig::default();
    let chirp: Vec<f64> = (0..64_000)
        .map(|n| {
            let t = n as f64 / SR as f64;
            (2.0 * PI * (200.0 * t + 400.0 * t * t)).sin() * (0.6 + 0.4 * (2.0 * PI * 3.0 * t).sin())
        })
        .collect();
    for x in [uniform(64_000, 9), chirp, synth_speech(64_000, SR, 2)] {
        let y = istft(&stft(&mono(&x), cfg).unwrap().channel(0), cfg, x.len()).unwrap();
        assert_eq!(y.len(), x.len());
        assert!(interior_rel_error(&x, &y, cfg) < 1e-6);
    }
}

#[test]
fn normalize_variance_examples() {
    // [0, 2]: mean 1, variance 1
    let (_, scale) = normalize_variance(&mono(&[0.0, 2.0])).unwrap();
    assert_eq!(scale, 1.0);

    let raw = white_noise(16_000, 4);
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    let sd = (raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / raw.len() as f64).sqrt();
    let unit: Vec<f64> = raw.iter().map(|v| (v - mean) / sd).collect();
    let (_, scale) = normalize_variance(&mono(&unit)).unwrap();
    assert!((scale - 1.0).abs() < 1e-6);

    let clip = AudioClip::from_channels(&[raw.clone(), raw.iter().map(|v| 0.5 * v).collect()], SR).unwrap();
    let (normed, s1) = normalize_variance(&clip).unwrap();
    let (_, s2) = normalize_variance(&clip.scaled(2.0)).unwrap();
    assert!((s2 - s1 / 2.0).abs() < 1e-12 * s1);
    // joint: the inter-channel level ratio survives
    assert!((power(normed.channel(1)) / power(normed.channel(0)) - 0.25).abs() < 1e-12);

    assert!(matches!(normalize_variance(&mono(&[0.0; 100])), Err(Error::InvalidArgument(_))));
}

fn stereo(a: &[f64], b: &[f64]) -> AudioClip {
    AudioClip::from_channels(&[a.to_vec(), b.to_vec()], SR).unwrap()
}

#[test]
fn mix_identity_without_echo_or_noise() {
    let s = synth_speech(4000, SR, 1);
    let speech = stereo(&s, &s);
    let silence = stereo(&[0.0; 4000], &[0.0; 4000]);
    let direct = vec![vec![1.0], vec![1.0]];
    let none = vec![vec![0.0], vec![0.0]];
    let m = mix(&speech, &silence, &direct, &none, 0.0).unwrap();
    assert_eq!(m.noisy, speech);
}

#[test]
fn mix_zero_db_balances_powers() {
    let s = synth_speech(8000, SR, 5);
    let v = white_noise(8000, 6);
    let direct = vec![vec![1.0]];
    let m = mix(&mono(&s), &mono(&v), &direct, &[vec![0.0]], 0.0).unwrap();
    let (ps, pv) = (power(&s), power(m.noise.channel(0)));
    assert!((ps - pv).abs() < 1e-6 * ps);
    let m = mix(&mono(&s), &mono(&v), &direct, &[vec![0.0]], 10.0).unwrap();
    assert!((ps / power(m.noise.channel(0)) - 10.0).abs() < 1e-9);
}

#[test]
fn single_echo_adds_a_delayed_copy() {
    let s = synth_speech(3000, SR, 7);
    let m = mix(&mono(&s), &mono(&[0.0; 3000]), &[vec![1.0]], &[single_echo(25, 0.4)], 0.0).unwrap();
    let y = m.noisy.channel(0);
    for n in 0..3000 {
        let echo = if n >= 25 { 0.4 * s[n - 25] } else { 0.0 };
        assert!((y[n] - s[n] - echo).abs() < 1e-15);
    }
    assert_eq!(m.clean.channel(0), &s[..]);
    assert!(mix(&mono(&[0.0; 10]), &mono(&[1.0; 10]), &[vec![1.0]], &[vec![0.0]], 0.0).is_err());
}

#[test]
fn wav_round_trips_for_1_to_8_channels() {
    let dir = tempfile::tempdir().unwrap();
    for m in [1, 2, 4, 8] {
        let channels: Vec<Vec<f64>> = (0..m).map(|c| uniform(500, c as u64).iter().map(|v| 0.9 * v).collect()).collect();
        let clip = AudioClip::from_channels(&channels, SR).unwrap();
        let path = dir.path().join(format!("{m}.wav"));
        wav::write(&path, &clip, WavFormat::Float32).unwrap();
        let back = wav::read(&path).unwrap();
        assert_eq!(back.channels(), m);
        assert!(back.samples.max_abs_diff(&clip.samples) < 1e-7);

        wav::write(&path, &clip, WavFormat::Pcm16).unwrap();
        let back = wav::read(&path).unwrap();
        assert_eq!(back.sample_rate, SR);
        assert!(back.samples.max_abs_diff(&clip.samples) <= 0.5 / 32768.0 + 1e-12);
    }
}

#[test]
fn pcm16_maps_by_32768() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.wav");
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SR,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(&path, spec).unwrap();
    for v in [-32768i16, 0, 16384, 32767] {
        w.write_sample(v).unwrap();
    }
    w.finalize().unwrap();
    assert_eq!(wav::read(&path).unwrap().channel(0), &[-1.0, 0.0, 0.5, 32767.0 / 32768.0]);
}

#[test]
fn unreadable_wav_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("junk.wav");
    std::fs::write(&path, b"not a riff file").unwrap();
    assert!(wav::read(&path).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stft_is_linear(seed in 0u64..10_000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let cfg = StftConfig::new(64, 32).unwrap();
        let (x, y) = (uniform(600, seed), uniform(600, seed + 1));
        let z: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let (sx, sy, sz) = (stft(&mono(&x), cfg).unwrap(), stft(&mono(&y), cfg).unwrap(), stft(&mono(&z), cfg).unwrap());
        for ((gx, gy), gz) in sx.ri.data().iter().zip(sy.ri.data()).zip(sz.ri.data()) {
            prop_assert!((a * gx + b * gy - gz).abs() < 1e-9);
        }
    }

    #[test]
    fn parseval_per_frame(seed in 0u64..10_000) {
        let cfg = StftConfig::new(64, 32).unwrap();
        let x = uniform(400, seed);
        let spec = stft(&mono(&x), cfg).unwrap();
        let w = cfg.window();
        let f = spec.bins();
        for t in 0..spec.frames() {
            let time: f64 = x[t * cfg.hop..][..cfg.win].iter().zip(&w).map(|(v, w)| (v * w).powi(2)).sum();
            let mut freq = 0.0;
            for k in 0..f {
                let (r, i) = bin(&spec, 0, t, k);
                let weight = if k == 0 || k == f - 1 { 1.0 } else { 2.0 };
                freq += weight * (r * r + i * i);
            }
            prop_assert!((freq / cfg.win as f64 - time).abs() < 1e-6 * time);
        }
    }

    #[test]
    fn round_trip_on_random_lengths(seed in 0u64..10_000, extra in 0usize..300) {
        let cfg = StftConfig::new(64, 32).unwrap();
        let x = uniform(64 * 4 + extra, seed);
        let y = istft(&stft(&mono(&x), cfg).unwrap().channel(0), cfg, x.len()).unwrap();
        prop_assert!(interior_rel_error(&x, &y, cfg) < 1e-6);
    }
}
