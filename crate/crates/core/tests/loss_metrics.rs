use deftan::autodiff::Tape;
use deftan::gradcheck::{check_all, DEFAULT_EPS};
use deftan::loss::{pcm_loss, si_sdr, stft_mag_loss, MagnitudeMode, SI_SDR_CAP_DB};
use deftan::Tensor;
use proptest::prelude::*;

const MODES: [MagnitudeMode; 2] = [MagnitudeMode::SummedAbs, MagnitudeMode::SplitAbs];

fn ri(t: usize, f: usize, data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(&[2, t, f], data).unwrap()
}

fn mag_loss(a: &Tensor<f64>, b: &Tensor<f64>, mode: MagnitudeMode) -> f64 {
    let tape = Tape::inference();
    let l = stft_mag_loss(&tape.constant(a.clone()), &tape.constant(b.clone()), mode).unwrap();
    l.value().item()
}

/// Bin-by-bin evaluation of the magnitude loss.
fn naive_mag_loss(a: &Tensor<f64>, b: &Tensor<f64>, mode: MagnitudeMode) -> f64 {
    let bins = a.len() / 2;
    let (a, b) = (a.data(), b.data());
    let total: f64 = (0..bins)
        .map(|i| {
            let re = a[i].abs() - b[i].abs();
            let im = a[bins + i].abs() - b[bins + i].abs();
            match mode {
                MagnitudeMode::SummedAbs => (re + im).abs(),
                MagnitudeMode::SplitAbs => re.abs() + im.abs(),
            }
        })
        .sum();
    total / bins as f64
}

fn pcm(s: &Tensor<f64>, est: &Tensor<f64>, y: &Tensor<f64>, mode: MagnitudeMode) -> (f64, f64, f64) {
    let tape = Tape::inference();
    let c = |t: &Tensor<f64>| tape.constant(t.clone());
    pcm_loss(&c(s), &c(est), &c(y), mode).unwrap().values()
}

fn spectrogram(t: usize, f: usize, seed: u64) -> Tensor<f64> {
    Tensor::from_fn(&[2, t, f], |i| (((i as u64 * 2654435761 + seed * 97) % 1000) as f64 / 250.0) - 2.0)
}

#[test]
fn identical_spectrograms_cost_nothing() {
    let s = spectrogram(3, 5, 1);
    for mode in MODES {
        assert_eq!(mag_loss(&s, &s, mode), 0.0);
        assert_eq!(pcm(&s, &s, &spectrogram(3, 5, 2), mode).0, 0.0);
    }
}

#[test]
fn printed_form_cancels_swapped_planes() {
    let s = ri(1, 2, vec![1.0, 1.0, 0.0, 0.0]);
    let est = ri(1, 2, vec![0.0, 0.0, 1.0, 1.0]);
    assert_eq!(mag_loss(&s, &est, MagnitudeMode::SummedAbs), 0.0);
    assert_eq!(mag_loss(&s, &est, MagnitudeMode::SplitAbs), 2.0);
}

#[test]
fn silent_target_costs_twice_the_offset() {
    let c = 0.75;
    let zero = Tensor::zeros(&[2, 4, 3]);
    let est = Tensor::full(&[2, 4, 3], c);
    for mode in MODES {
        assert!((mag_loss(&zero, &est, mode) - 2.0 * c).abs() < 1e-15);
    }
}

#[test]
fn copying_the_mixture_zeroes_the_noise_estimate() {
    // the noise estimate vanishes, the true noise does not
    let s = spectrogram(4, 6, 3);
    let y = spectrogram(4, 6, 4);
    let noise_ref = Tensor::from_fn(&[2, 4, 6], |i| y.data()[i] - s.data()[i]);
    let silence = Tensor::zeros(&[2, 4, 6]);
    for mode in MODES {
        let (total, speech, noise) = pcm(&s, &y, &y, mode);
        assert!((speech - naive_mag_loss(&s, &y, mode)).abs() < 1e-15);
        assert!((noise - naive_mag_loss(&noise_ref, &silence, mode)).abs() < 1e-15);
        assert!(noise > 0.0);
        assert!((total - 0.5 * (speech + noise)).abs() < 1e-15);
    }
}

#[test]
fn breakdown_averages_the_terms() {
    let (s, est, y) = (spectrogram(5, 7, 5), spectrogram(5, 7, 6), spectrogram(5, 7, 7));
    for mode in MODES {
        let (total, speech, noise) = pcm(&s, &est, &y, mode);
        assert!((total - 0.5 * (speech + noise)).abs() < 1e-14);
        let noise_ref = Tensor::from_fn(&[2, 5, 7], |i| y.data()[i] - s.data()[i]);
        let noise_est = Tensor::from_fn(&[2, 5, 7], |i| y.data()[i] - est.data()[i]);
        assert!((noise - naive_mag_loss(&noise_ref, &noise_est, mode)).abs() < 1e-12);
    }
}

#[test]
fn mismatched_shapes_are_rejected() {
    let tape = Tape::<f64>::inference();
    let a = tape.constant(Tensor::zeros(&[2, 3, 4]));
    let b = tape.constant(Tensor::zeros(&[2, 4, 3]));
    let c = tape.constant(Tensor::zeros(&[4, 3, 4]));
    assert!(stft_mag_loss(&a, &b, MagnitudeMode::default()).is_err());
    assert!(stft_mag_loss(&c, &c, MagnitudeMode::default()).is_err());
    assert!(pcm_loss(&a, &a, &b, MagnitudeMode::default()).is_err());
}

fn tone(n: usize) -> Vec<f64> {
    (0..n).map(|i| (0.05 * i as f64).sin() + 0.3 * (0.013 * i as f64).cos()).collect()
}

#[test]
fn si_sdr_of_a_perfect_estimate_is_capped() {
    let r = tone(1000);
    assert_eq!(si_sdr(&r, &r).unwrap(), SI_SDR_CAP_DB);
    let doubled: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
    assert_eq!(si_sdr(&doubled, &r).unwrap(), SI_SDR_CAP_DB);
}

#[test]
fn orthogonal_noise_of_equal_power_is_zero_db() {
    // period-4 and period-2 square waves: zero-mean, equal power, orthogonal
    let n = 1000;
    let r: Vec<f64> = (0..n).map(|i| if (i / 2) % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let e: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    assert_eq!(r.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>(), 0.0);
    let est: Vec<f64> = r.iter().zip(&e).map(|(a, b)| a + b).collect();
    assert!(si_sdr(&est, &r).unwrap().abs() < 1e-12);
}

#[test]
fn si_sdr_rejects_degenerate_input() {
    assert!(si_sdr(&[1.0, 2.0], &[0.0, 0.0]).is_err());
    assert!(si_sdr(&[1.0, 2.0], &[3.0, 3.0]).is_err(), "constant reference is zero after centring");
    assert!(si_sdr(&[1.0], &[1.0, 2.0]).is_err());
    assert!(si_sdr(&[], &[]).is_err());
}

fn kink_distance(s: &[f64], est: &[f64], y: &[f64]) -> f64 {
    let half = s.len() / 2;
    let noise: Vec<f64> = y.iter().zip(s).map(|(a, b)| a - b).collect();
    let noise_hat: Vec<f64> = y.iter().zip(est).map(|(a, b)| a - b).collect();
    let mut d = f64::INFINITY;
    for (a, b) in [(s, est), (&noise[..], &noise_hat[..])] {
        for i in 0..half {
            let re = a[i].abs() - b[i].abs();
            let im = a[half + i].abs() - b[half + i].abs();
            d = d.min(a[i].abs()).min(a[half + i].abs()).min(b[i].abs()).min(b[half + i].abs());
            d = d.min((re + im).abs());
            d = d.min(re.abs()).min(im.abs());
        }
    }
    d
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn magnitude_loss_matches_bins_and_is_symmetric(
        data in prop::collection::vec(-3.0f64..3.0, 24), other in prop::collection::vec(-3.0f64..3.0, 24),
    ) {
        let (a, b) = (ri(3, 4, data), ri(3, 4, other));
        for mode in MODES {
            let l = mag_loss(&a, &b, mode);
            prop_assert!(l >= 0.0);
            prop_assert!((l - naive_mag_loss(&a, &b, mode)).abs() < 1e-12);
            prop_assert!((l - mag_loss(&b, &a, mode)).abs() < 1e-12);
            prop_assert_eq!(mag_loss(&a, &a, mode), 0.0);
        }
    }

    #[test]
    fn si_sdr_is_scale_invariant(
        noise in prop::collection::vec(-1.0f64..1.0, 200), alpha in prop::sample::select(vec![-7.5, -0.3, 0.01, 2.0, 1e3]),
    ) {
        let r = tone(200);
        let est: Vec<f64> = r.iter().zip(&noise).map(|(a, b)| a + 0.5 * b).collect();
        let scaled: Vec<f64> = est.iter().map(|v| alpha * v).collect();
        let base = si_sdr(&est, &r).unwrap();
        prop_assert!((si_sdr(&scaled, &r).unwrap() - base).abs() < 1e-9);
    }

    #[test]
    fn pcm_gradient_matches_finite_differences(
        s in prop::collection::vec(-2.0f64..2.0, 12),
        est in prop::collection::vec(-2.0f64..2.0, 12),
        y in prop::collection::vec(-2.0f64..2.0, 12),
    ) {
        prop_assume!(kink_distance(&s, &est, &y) > 1e-3);
        let inputs = vec![ri(2, 3, s), ri(2, 3, est), ri(2, 3, y)];
        for mode in MODES {
            let r = check_all(&inputs, DEFAULT_EPS, move |_tape, v| Ok(pcm_loss(&v[0], &v[1], &v[2], mode)?.total)).unwrap();
            prop_assert!(r.passes(1e-4), "{:?}: {}", mode, r.max_rel_err());
        }
    }
}
