//! Transform correctness against independent oracles: a naive O(n^2) DFT
//! per frame, analytic coverage geometry, Parseval's identity and the
//! Griffin-Lim convergence contract.

mod common;

use alimnet::dsp::{
    griffin_lim, istft, stft, StftConfig, WindowKind, CLIP_SAMPLES,
};
use common::{naive_windowed_dft, note_signal, oracle_frame, rel_err, test_signal};
use proptest::prelude::*;

fn assert_frames_match(samples: &[f64], cfg: &StftConfig, tol: f64) {
    let spec = stft(samples, cfg).expect("stft");
    let frames = spec.cols();
    let bins = spec.rows();
    let data = spec.complex_data().unwrap();
    for frame in 0..frames {
        let expected = naive_windowed_dft(&oracle_frame(samples, cfg, frame), cfg);
        for k in 0..bins {
            let got = data[k * frames + frame];
            let err = (got - expected[k]).norm() / 1.0f64.max(expected[k].norm());
            assert!(
                err < tol,
                "frame {frame} bin {k}: {got} vs {:?} (err {err})",
                expected[k]
            );
        }
    }
}

#[test]
fn stft_agrees_with_naive_dft_on_small_inputs() {
    let signal = test_signal(1500, 2);
    assert_frames_match(&signal, &StftConfig::default(), 1e-6);

    let signal = test_signal(4096, 3);
    let cfg = StftConfig {
        fft_size: 128,
        hop: 32,
        window: WindowKind::Hann,
        center_pad: true,
    };
    assert_frames_match(&signal, &cfg, 1e-6);

    let cfg = StftConfig {
        fft_size: 64,
        hop: 64,
        window: WindowKind::Rectangular,
        center_pad: false,
    };
    assert_frames_match(&signal, &cfg, 1e-6);
}

#[test]
fn integer_bin_sinusoid_peaks_at_its_bin() {
    // frequency k*fs/510 with k=32: every un-padded frame sees an exact
    // integer-bin sinusoid, so each column peaks at bin 32
    let cfg = StftConfig {
        fft_size: 510,
        hop: 514,
        window: WindowKind::Rectangular,
        center_pad: false,
    };
    let k = 32usize;
    let signal: Vec<f64> = (0..8192)
        .map(|t| (2.0 * std::f64::consts::PI * k as f64 * t as f64 / 510.0).sin())
        .collect();
    let spec = stft(&signal, &cfg).unwrap();
    let frames = spec.cols();
    let data = spec.complex_data().unwrap();
    for frame in 0..frames {
        let mags: Vec<f64> = (0..spec.rows())
            .map(|b| data[b * frames + frame].norm())
            .collect();
        let argmax = mags
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, k, "frame {frame} peaks at {argmax}");
    }
    assert_frames_match(&signal, &cfg, 1e-6);
}

#[test]
fn stft_is_linear() {
    let x = test_signal(2048, 5);
    let y = test_signal(2048, 6);
    let (a, b) = (0.7, -1.3);
    let cfg = StftConfig::new(512, 128);
    let combined: Vec<f64> = x.iter().zip(&y).map(|(xv, yv)| a * xv + b * yv).collect();
    let s_comb = stft(&combined, &cfg).unwrap();
    let s_x = stft(&x, &cfg).unwrap();
    let s_y = stft(&y, &cfg).unwrap();
    let (dc, dx, dy) = (
        s_comb.complex_data().unwrap(),
        s_x.complex_data().unwrap(),
        s_y.complex_data().unwrap(),
    );
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..dc.len() {
        let lin = dx[i] * a + dy[i] * b;
        num += (dc[i] - lin).norm_sqr();
        den += lin.norm_sqr();
    }
    let rel = (num / den.max(1e-300)).sqrt();
    assert!(rel < 1e-9, "linearity violation {rel}");
}

#[test]
fn parseval_for_rectangular_non_overlapping_frames() {
    let signal = test_signal(2048, 9);
    let cfg = StftConfig {
        fft_size: 256,
        hop: 256,
        window: WindowKind::Rectangular,
        center_pad: false,
    };
    let spec = stft(&signal, &cfg).unwrap();
    let frames = spec.cols();
    let n = cfg.fft_size;
    let data = spec.complex_data().unwrap();

    // full-spectrum energy from the stored half spectrum
    let mut spectral = 0.0;
    for frame in 0..frames {
        for k in 0..spec.rows() {
            let e = data[k * frames + frame].norm_sqr();
            let mirrored = k != 0 && k != n / 2;
            spectral += if mirrored { 2.0 * e } else { e };
        }
    }
    let covered: f64 = signal[..frames * n].iter().map(|v| v * v).sum();
    let expected = n as f64 * covered;
    assert!(
        rel_err(spectral, expected) < 1e-6,
        "parseval: {spectral} vs {expected}"
    );
}

#[test]
fn griffin_lim_converges_on_consistent_magnitudes() {
    let signal = note_signal(16384, 5);
    let cfg = StftConfig::new(512, 128);
    let mag = stft(&signal, &cfg).unwrap().to_magnitude().unwrap();
    let gl = griffin_lim(&mag, &cfg, 64, 31, signal.len()).unwrap();
    assert_eq!(gl.errors.len(), 64);
    let last = *gl.errors.last().unwrap();
    assert!(last < 0.1, "spectral convergence stalled at {last}");
    for pair in gl.errors.windows(2) {
        assert!(
            pair[1] <= pair[0] + 1e-9,
            "error increased: {} -> {}",
            pair[0],
            pair[1]
        );
    }
    assert!(gl.errors[gl.errors.len() - 1] <= gl.errors[0]);
}

#[test]
fn griffin_lim_error_trace_is_monotone_on_random_magnitudes() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(44);
    let cfg = StftConfig::new(128, 32);
    let len = 1024;
    let frames = cfg.frame_count(len).unwrap();
    let data: Vec<f64> = (0..cfg.frequency_bins() * frames)
        .map(|_| rng.gen_range(0.0..1.0))
        .collect();
    let mag = alimnet::dsp::Spectrogram::magnitude(cfg.frequency_bins(), frames, cfg, data).unwrap();
    let gl = griffin_lim(&mag, &cfg, 33, 7, len).unwrap();
    for pair in gl.errors.windows(2) {
        assert!(pair[1] <= pair[0] + 1e-9, "{} -> {}", pair[0], pair[1]);
    }
    // iteration 32 no worse than iteration 1
    assert!(gl.errors[32] <= gl.errors[0] + 1e-12);
}

#[test]
fn default_config_shape_law_on_a_real_clip() {
    let signal = test_signal(CLIP_SAMPLES, 1);
    let spec = stft(&signal, &StftConfig::default()).unwrap();
    assert_eq!((spec.rows(), spec.cols()), (256, 256));
    let rec = istft(&spec, &StftConfig::default(), CLIP_SAMPLES).unwrap();
    assert_eq!(rec.samples.len(), CLIP_SAMPLES);
    // per-hop gap of hop - fft_size samples
    assert_eq!(
        rec.coverage.iter().filter(|&&c| !c).count() % (514 - 510),
        0
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn cola_round_trip_reconstructs_for_random_signals(seed in 0u64..500) {
        let signal = test_signal(2048, seed);
        let cfg = StftConfig::new(256, 64);
        let spec = stft(&signal, &cfg).unwrap();
        let rec = istft(&spec, &cfg, signal.len()).unwrap();
        prop_assert!(rec.coverage.iter().all(|&c| c));
        for (a, b) in signal.iter().zip(&rec.samples) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }
}
