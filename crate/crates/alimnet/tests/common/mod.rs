//! Shared oracles for the integration suites. Everything here is written
//! independently of the library's transform internals: its own padding,
//! its own O(n^2) DFT.

use alimnet::dsp::{window_values, StftConfig};
use rustfft::num_complex::Complex64;

/// Mirror-reflect indexing without edge duplication (the padding scheme
/// the centered transform documents).
fn reflect(pos: isize, len: isize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len - 1);
    let mut p = pos.rem_euclid(period);
    if p >= len {
        p = period - p;
    }
    p as usize
}

/// Extract the samples of analysis frame `frame` exactly as the transform
/// configuration describes them, reimplemented from the config contract.
pub fn oracle_frame(samples: &[f64], cfg: &StftConfig, frame: usize) -> Vec<f64> {
    let n = cfg.fft_size;
    let pad = if cfg.center_pad { n as isize / 2 } else { 0 };
    let len = samples.len() as isize;
    (0..n)
        .map(|r| {
            let pos = (frame * cfg.hop + r) as isize - pad;
            if pos >= 0 && pos < len {
                samples[pos as usize]
            } else if cfg.center_pad {
                samples[reflect(pos, len)]
            } else {
                0.0
            }
        })
        .collect()
}

/// Naive O(n^2) windowed DFT of one frame, lower half-spectrum.
pub fn naive_windowed_dft(frame: &[f64], cfg: &StftConfig) -> Vec<Complex64> {
    let n = frame.len();
    let window = window_values(cfg.window, n);
    let bins = n / 2 + 1;
    (0..bins)
        .map(|k| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (t, (&x, &w)) in frame.iter().zip(&window).enumerate() {
                let angle = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                acc += Complex64::new(angle.cos(), angle.sin()) * (x * w);
            }
            acc
        })
        .collect()
}

/// Relative error with a unit floor: |a - b| / max(1, |b|).
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0f64.max(b.abs())
}

/// Deterministic test signal: a few enveloped sinusoids plus low noise.
pub fn test_signal(len: usize, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let freqs = [0.013, 0.037, 0.081];
    let amps = [0.4, 0.25, 0.15];
    (0..len)
        .map(|t| {
            let mut v = 0.0;
            for (f, a) in freqs.iter().zip(&amps) {
                v += a * (2.0 * std::f64::consts::PI * f * t as f64).sin();
            }
            v + rng.gen_range(-0.01..0.01)
        })
        .collect()
}

/// Music-like test signal: a run of enveloped notes at random pitches.
pub fn note_signal(len: usize, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; len];
    let mut t = 0usize;
    while t < len {
        let dur = rng.gen_range(400..900).min(len - t);
        let f = rng.gen_range(0.01..0.09);
        for i in 0..dur {
            let env = (i.min(dur - i) as f64 / 100.0).min(1.0);
            out[t + i] = 0.6 * env * (2.0 * std::f64::consts::PI * f * i as f64).sin();
        }
        t += dur;
    }
    out
}
