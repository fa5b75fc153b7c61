//! Short-time spectral analysis and resynthesis.
//!
//! The default configuration (fft_size 510, hop 514) turns a
//! 131072-sample clip into a 256x256 matrix. Because the hop exceeds the
//! window, 4 samples per hop are never analyzed; the inverse transform
//! reports them through a coverage mask instead of interpolating.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::labels::{Dastgah, Instrument};
use crate::{Error, Result};

/// Sample rate every clip in the pipeline uses.
pub const SAMPLE_RATE: u32 = 8192;
/// Preprocessed clip length: 16 seconds at 8192 Hz.
pub const CLIP_SAMPLES: usize = 131072;
/// Default dB floor for spectrogram normalization.
pub const DEFAULT_FLOOR_DB: f64 = -80.0;

/// Analysis window shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Hann,
    Rectangular,
}

/// Window values of length `n`. The Hann variant excludes the zero
/// endpoints (w[k] = 0.5*(1 - cos(2*pi*(k+1)/(n+1)))), so every sample
/// inside a frame carries positive weight and coverage gaps are purely
/// geometric.
pub fn window_values(kind: WindowKind, n: usize) -> Vec<f64> {
    match kind {
        WindowKind::Rectangular => vec![1.0; n],
        WindowKind::Hann => (0..n)
            .map(|k| {
                let phase = 2.0 * std::f64::consts::PI * (k + 1) as f64 / (n + 1) as f64;
                0.5 * (1.0 - phase.cos())
            })
            .collect(),
    }
}

/// Transform parameterization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub window: WindowKind,
    pub center_pad: bool,
}

impl Default for StftConfig {
    fn default() -> StftConfig {
        StftConfig {
            fft_size: 510,
            hop: 514,
            window: WindowKind::Hann,
            center_pad: true,
        }
    }
}

impl StftConfig {
    pub fn new(fft_size: usize, hop: usize) -> StftConfig {
        StftConfig {
            fft_size,
            hop,
            ..StftConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fft_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "fft_size must be at least 2, got {}",
                self.fft_size
            )));
        }
        if self.hop < 1 {
            return Err(Error::InvalidConfig("hop must be at least 1".to_string()));
        }
        Ok(())
    }

    pub fn frequency_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Number of analysis frames for a signal of length `len`.
    pub fn frame_count(&self, len: usize) -> Result<usize> {
        if len == 0 {
            return Err(Error::InvalidInput("empty signal".to_string()));
        }
        if self.center_pad {
            Ok(len / self.hop + 1)
        } else {
            if self.fft_size > len {
                return Err(Error::InvalidConfig(format!(
                    "fft_size {} exceeds signal length {} without center padding",
                    self.fft_size, len
                )));
            }
            Ok((len - self.fft_size) / self.hop + 1)
        }
    }
}

/// What the matrix entries mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrogramKind {
    Complex,
    Magnitude,
    DbNormalized,
}

#[derive(Debug, Clone, PartialEq)]
enum SpecData {
    Complex(Vec<Complex64>),
    Real(Vec<f64>),
}

/// Time-frequency matrix (rows = frequency bins, cols = frames) plus the
/// transform configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    rows: usize,
    cols: usize,
    kind: SpectrogramKind,
    config: StftConfig,
    data: SpecData,
}

impl Spectrogram {
    pub fn complex(
        rows: usize,
        cols: usize,
        config: StftConfig,
        data: Vec<Complex64>,
    ) -> Result<Spectrogram> {
        if data.len() != rows * cols {
            return Err(Error::shape("spectrogram", &[rows, cols], &[data.len()]));
        }
        Ok(Spectrogram {
            rows,
            cols,
            kind: SpectrogramKind::Complex,
            config,
            data: SpecData::Complex(data),
        })
    }

    pub fn magnitude(
        rows: usize,
        cols: usize,
        config: StftConfig,
        data: Vec<f64>,
    ) -> Result<Spectrogram> {
        if data.len() != rows * cols {
            return Err(Error::shape("spectrogram", &[rows, cols], &[data.len()]));
        }
        if data.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidInput(
                "magnitude spectrogram entries must be finite and non-negative".to_string(),
            ));
        }
        Ok(Spectrogram {
            rows,
            cols,
            kind: SpectrogramKind::Magnitude,
            config,
            data: SpecData::Real(data),
        })
    }

    pub fn db_normalized(
        rows: usize,
        cols: usize,
        config: StftConfig,
        data: Vec<f64>,
    ) -> Result<Spectrogram> {
        if data.len() != rows * cols {
            return Err(Error::shape("spectrogram", &[rows, cols], &[data.len()]));
        }
        if data.iter().any(|&v| !(-1.0..=1.0).contains(&v)) {
            return Err(Error::InvalidInput(
                "db-normalized spectrogram entries must lie in [-1, 1]".to_string(),
            ));
        }
        Ok(Spectrogram {
            rows,
            cols,
            kind: SpectrogramKind::DbNormalized,
            config,
            data: SpecData::Real(data),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn kind(&self) -> SpectrogramKind {
        self.kind
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn complex_data(&self) -> Result<&[Complex64]> {
        match &self.data {
            SpecData::Complex(d) => Ok(d),
            SpecData::Real(_) => Err(Error::InvalidInput(format!(
                "expected a complex spectrogram, got {:?}",
                self.kind
            ))),
        }
    }

    pub fn real_data(&self) -> Result<&[f64]> {
        match &self.data {
            SpecData::Real(d) => Ok(d),
            SpecData::Complex(_) => Err(Error::InvalidInput(
                "expected a real-valued spectrogram".to_string(),
            )),
        }
    }

    /// Entrywise magnitudes of a complex spectrogram.
    pub fn to_magnitude(&self) -> Result<Spectrogram> {
        let data = self.complex_data()?;
        Spectrogram::magnitude(
            self.rows,
            self.cols,
            self.config,
            data.iter().map(|c| c.norm()).collect(),
        )
    }

    /// Largest entry of a magnitude spectrogram.
    pub fn max_magnitude(&self) -> Result<f64> {
        if self.kind != SpectrogramKind::Magnitude {
            return Err(Error::InvalidInput(format!(
                "max_magnitude needs a magnitude spectrogram, got {:?}",
                self.kind
            )));
        }
        Ok(self.real_data()?.iter().cloned().fold(0.0, f64::max))
    }
}

/// Fixed-length mono waveform plus optional provenance labels.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub dastgah: Option<Dastgah>,
    pub instrument: Option<Instrument>,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> AudioClip {
        AudioClip {
            samples,
            sample_rate,
            dastgah: None,
            instrument: None,
        }
    }

    pub fn with_labels(mut self, dastgah: Dastgah, instrument: Instrument) -> AudioClip {
        self.dastgah = Some(dastgah);
        self.instrument = Some(instrument);
        self
    }
}

fn reflect_index(pos: isize, len: isize) -> usize {
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

/// Forward transform. Output shape is frequency_bins x frame_count.
pub fn stft(samples: &[f64], cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidInput("empty signal".to_string()));
    }
    let frames = cfg.frame_count(samples.len())?;
    let n = cfg.fft_size;
    let bins = cfg.frequency_bins();
    let window = window_values(cfg.window, n);
    let pad = if cfg.center_pad { n / 2 } else { 0 };

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let mut data = vec![Complex64::new(0.0, 0.0); bins * frames];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let len = samples.len() as isize;
    for frame in 0..frames {
        let start = frame * cfg.hop;
        for (r, slot) in buf.iter_mut().enumerate() {
            let pos = (start + r) as isize - pad as isize;
            let v = if pos >= 0 && pos < len {
                samples[pos as usize]
            } else if cfg.center_pad {
                samples[reflect_index(pos, len)]
            } else {
                0.0
            };
            *slot = Complex64::new(v * window[r], 0.0);
        }
        fft.process(&mut buf);
        for k in 0..bins {
            data[k * frames + frame] = buf[k];
        }
    }
    Spectrogram::complex(bins, frames, *cfg, data)
}

/// Inverse transform output: reconstructed samples plus a per-sample flag
/// telling whether any analysis window covered that sample. Uncovered
/// samples are zero.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub samples: Vec<f64>,
    pub coverage: Vec<bool>,
}

impl Reconstruction {
    pub fn covered_count(&self) -> usize {
        self.coverage.iter().filter(|&&c| c).count()
    }
}

const COVERAGE_EPS: f64 = 1e-12;

/// Windowed overlap-add inverse, normalized by the accumulated squared
/// window. For an unmodified forward transform this reconstructs every
/// covered sample exactly, for any window.
pub fn istft(spec: &Spectrogram, cfg: &StftConfig, target_len: usize) -> Result<Reconstruction> {
    cfg.validate()?;
    if spec.kind() != SpectrogramKind::Complex {
        return Err(Error::InvalidInput(format!(
            "istft needs a complex spectrogram, got {:?}",
            spec.kind()
        )));
    }
    if spec.config() != cfg {
        return Err(Error::InvalidConfig(
            "spectrogram was produced with a different transform configuration".to_string(),
        ));
    }
    let n = cfg.fft_size;
    let bins = cfg.frequency_bins();
    if spec.rows() != bins {
        return Err(Error::shape(
            "istft",
            &[bins, spec.cols()],
            &[spec.rows(), spec.cols()],
        ));
    }
    let frames = spec.cols();
    let window = window_values(cfg.window, n);
    let data = spec.complex_data()?;

    let full_len = (frames - 1) * cfg.hop + n;
    let mut acc = vec![0.0; full_len];
    let mut wsum = vec![0.0; full_len];
    let mut planner = FftPlanner::new();
    let ifft = planner.plan_fft_inverse(n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for frame in 0..frames {
        for k in 0..bins {
            buf[k] = data[k * frames + frame];
        }
        // Hermitian completion; a real signal's upper bins mirror the lower
        for k in 1..(n + 1) / 2 {
            buf[n - k] = data[k * frames + frame].conj();
        }
        ifft.process(&mut buf);
        let base = frame * cfg.hop;
        for r in 0..n {
            let v = buf[r].re / n as f64;
            acc[base + r] += window[r] * v;
            wsum[base + r] += window[r] * window[r];
        }
    }
    if wsum.iter().all(|&w| w <= COVERAGE_EPS) {
        return Err(Error::DegenerateConfig(
            "window coverage is zero everywhere".to_string(),
        ));
    }

    let offset = if cfg.center_pad { n / 2 } else { 0 };
    let mut samples = vec![0.0; target_len];
    let mut coverage = vec![false; target_len];
    for t in 0..target_len {
        let p = t + offset;
        if p < full_len && wsum[p] > COVERAGE_EPS {
            samples[t] = acc[p] / wsum[p];
            coverage[t] = true;
        }
    }
    Ok(Reconstruction { samples, coverage })
}

/// Map magnitudes to [-1, 1]: x -> clamp(20*log10(x / max), floor_db, 0)
/// scaled affinely so the floor becomes -1 and the peak +1. An all-zero
/// spectrogram maps to all -1.
pub fn to_db_normalized(spec: &Spectrogram, floor_db: f64) -> Result<Spectrogram> {
    if spec.kind() != SpectrogramKind::Magnitude {
        return Err(Error::InvalidInput(format!(
            "db normalization needs a magnitude spectrogram, got {:?}",
            spec.kind()
        )));
    }
    if floor_db >= 0.0 {
        return Err(Error::InvalidInput(format!(
            "floor_db must be negative, got {floor_db}"
        )));
    }
    let max = spec.max_magnitude()?;
    let data = spec.real_data()?;
    let out: Vec<f64> = if max <= 0.0 {
        vec![-1.0; data.len()]
    } else {
        data.iter()
            .map(|&x| {
                let db = (20.0 * (x / max).log10()).clamp(floor_db, 0.0);
                2.0 * (db - floor_db) / (-floor_db) - 1.0
            })
            .collect()
    };
    Spectrogram::db_normalized(spec.rows(), spec.cols(), *spec.config(), out)
}

/// Inverse of [`to_db_normalized`] up to the clamping floor, scaled so +1
/// maps to `reference_magnitude`.
pub fn from_db_normalized(
    spec: &Spectrogram,
    reference_magnitude: f64,
    floor_db: f64,
) -> Result<Spectrogram> {
    if spec.kind() != SpectrogramKind::DbNormalized {
        return Err(Error::InvalidInput(format!(
            "denormalization needs a db-normalized spectrogram, got {:?}",
            spec.kind()
        )));
    }
    if reference_magnitude <= 0.0 || !reference_magnitude.is_finite() {
        return Err(Error::InvalidInput(format!(
            "reference magnitude must be positive, got {reference_magnitude}"
        )));
    }
    if floor_db >= 0.0 {
        return Err(Error::InvalidInput(format!(
            "floor_db must be negative, got {floor_db}"
        )));
    }
    let data = spec.real_data()?;
    let out: Vec<f64> = data
        .iter()
        .map(|&v| {
            let db = floor_db * (1.0 - v) / 2.0;
            reference_magnitude * 10f64.powf(db / 20.0)
        })
        .collect();
    Spectrogram::magnitude(spec.rows(), spec.cols(), *spec.config(), out)
}

/// Result of Griffin-Lim phase estimation. `errors[k]` is the spectral
/// convergence of the waveform after k refinement rounds, measured just
/// before round k+1, so `errors` has one entry per iteration.
#[derive(Debug, Clone)]
pub struct GriffinLimResult {
    pub samples: Vec<f64>,
    pub coverage: Vec<bool>,
    pub errors: Vec<f64>,
}

fn frobenius(data: &[f64]) -> f64 {
    data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Iterative magnitude-constrained phase estimation, starting from seeded
/// random phase. With zero iterations this is a plain inverse transform
/// under that random phase.
pub fn griffin_lim(
    spec: &Spectrogram,
    cfg: &StftConfig,
    iterations: usize,
    seed: u64,
    target_len: usize,
) -> Result<GriffinLimResult> {
    if spec.kind() != SpectrogramKind::Magnitude {
        return Err(Error::InvalidInput(format!(
            "griffin_lim needs a magnitude spectrogram, got {:?}",
            spec.kind()
        )));
    }
    let expected_frames = cfg.frame_count(target_len)?;
    if expected_frames != spec.cols() || spec.rows() != cfg.frequency_bins() {
        return Err(Error::shape(
            "griffin_lim target length",
            &[cfg.frequency_bins(), expected_frames],
            &[spec.rows(), spec.cols()],
        ));
    }
    let magnitudes = spec.real_data()?;
    let norm = frobenius(magnitudes).max(1e-300);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phases: Vec<f64> = (0..magnitudes.len())
        .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
        .collect();

    let with_phases = |phases: &[f64]| -> Result<Spectrogram> {
        Spectrogram::complex(
            spec.rows(),
            spec.cols(),
            *cfg,
            magnitudes
                .iter()
                .zip(phases)
                .map(|(&m, &p)| Complex64::from_polar(m, p))
                .collect(),
        )
    };

    let mut recon = istft(&with_phases(&phases)?, cfg, target_len)?;
    let mut errors = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let estimate = stft(&recon.samples, cfg)?;
        let est = estimate.complex_data()?;
        let mut diff_sq = 0.0;
        for (c, &m) in est.iter().zip(magnitudes) {
            let d = c.norm() - m;
            diff_sq += d * d;
        }
        errors.push(diff_sq.sqrt() / norm);
        for (p, c) in phases.iter_mut().zip(est) {
            *p = c.arg();
        }
        recon = istft(&with_phases(&phases)?, cfg, target_len)?;
    }
    Ok(GriffinLimResult {
        samples: recon.samples,
        coverage: recon.coverage,
        errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_law_at_default_config() {
        let cfg = StftConfig::default();
        assert_eq!(cfg.frequency_bins(), 256);
        assert_eq!(cfg.frame_count(CLIP_SAMPLES).unwrap(), 256);
        let spec = stft(&vec![0.0; CLIP_SAMPLES], &cfg).unwrap();
        assert_eq!((spec.rows(), spec.cols()), (256, 256));
    }

    #[test]
    fn zero_clip_gives_zero_spectrogram() {
        let cfg = StftConfig::default();
        let spec = stft(&vec![0.0; CLIP_SAMPLES], &cfg).unwrap();
        assert!(spec.complex_data().unwrap().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn empty_signal_and_short_uncentered_signal_error() {
        let cfg = StftConfig::default();
        assert!(matches!(stft(&[], &cfg), Err(Error::InvalidInput(_))));
        let cfg = StftConfig {
            center_pad: false,
            ..StftConfig::default()
        };
        assert!(matches!(
            stft(&[0.0; 100], &cfg),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn istft_of_zero_spectrogram_is_zero() {
        let cfg = StftConfig::new(512, 128);
        let spec = stft(&vec![0.0; 4096], &cfg).unwrap();
        let rec = istft(&spec, &cfg, 4096).unwrap();
        assert!(rec.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cola_config_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let signal: Vec<f64> = (0..4096).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cfg = StftConfig::new(512, 128);
        let spec = stft(&signal, &cfg).unwrap();
        let rec = istft(&spec, &cfg, signal.len()).unwrap();
        assert!(rec.coverage.iter().all(|&c| c));
        let max_err = signal
            .iter()
            .zip(&rec.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-6, "round-trip error {max_err}");
    }

    #[test]
    fn paper_config_gap_is_exactly_four_per_hop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let signal: Vec<f64> = (0..CLIP_SAMPLES)
            .map(|_| rng.gen_range(-0.5..0.5))
            .collect();
        let cfg = StftConfig::default();
        let spec = stft(&signal, &cfg).unwrap();
        let rec = istft(&spec, &cfg, signal.len()).unwrap();

        // analytic mask: in padded coordinates, frame k covers
        // [k*hop, k*hop + fft); the gap is [k*hop + fft, (k+1)*hop)
        let (n, hop) = (cfg.fft_size, cfg.hop);
        for (t, &covered) in rec.coverage.iter().enumerate() {
            let p = t + n / 2;
            let in_gap = p % hop >= n;
            assert_eq!(covered, !in_gap, "coverage mismatch at sample {t}");
        }
        let uncovered = rec.coverage.iter().filter(|&&c| !c).count();
        assert!(uncovered > 0);
        assert_eq!(uncovered % (hop - n), 0, "gaps come in groups of hop-fft");

        // covered samples reconstruct exactly
        let max_err = signal
            .iter()
            .zip(&rec.samples)
            .zip(&rec.coverage)
            .filter(|(_, &c)| c)
            .map(|((a, b), _)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-6, "covered-sample error {max_err}");
    }

    #[test]
    fn db_normalization_anchor_points() {
        let cfg = StftConfig::default();
        let mag =
            Spectrogram::magnitude(1, 3, cfg, vec![10.0, 10.0 * 1e-4, 10.0 * 1e-2]).unwrap();
        let db = to_db_normalized(&mag, DEFAULT_FLOOR_DB).unwrap();
        let d = db.real_data().unwrap();
        assert!((d[0] - 1.0).abs() < 1e-12); // max -> 0 dB -> +1
        assert!((d[1] + 1.0).abs() < 1e-12); // 1e-4 of max -> -80 dB -> -1
        assert!(d[2].abs() < 1e-12); // 1e-2 of max -> -40 dB -> midpoint
    }

    #[test]
    fn all_zero_magnitudes_map_to_floor() {
        let cfg = StftConfig::default();
        let mag = Spectrogram::magnitude(2, 2, cfg, vec![0.0; 4]).unwrap();
        let db = to_db_normalized(&mag, DEFAULT_FLOOR_DB).unwrap();
        assert!(db.real_data().unwrap().iter().all(|&v| v == -1.0));
    }

    #[test]
    fn denormalization_anchor_points_and_round_trip() {
        let cfg = StftConfig::default();
        let db = Spectrogram::db_normalized(1, 2, cfg, vec![1.0, -1.0]).unwrap();
        let mag = from_db_normalized(&db, 7.5, DEFAULT_FLOOR_DB).unwrap();
        let m = mag.real_data().unwrap();
        assert!((m[0] - 7.5).abs() < 1e-12);
        assert!((m[1] - 7.5e-4).abs() < 1e-15);

        // round trip above the floor
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let values: Vec<f64> = (0..64).map(|_| rng.gen_range(1e-3..1.0) * 42.0).collect();
        let max = values.iter().cloned().fold(0.0, f64::max);
        let mag = Spectrogram::magnitude(8, 8, cfg, values.clone()).unwrap();
        let db = to_db_normalized(&mag, DEFAULT_FLOOR_DB).unwrap();
        let back = from_db_normalized(&db, max, DEFAULT_FLOOR_DB).unwrap();
        for (a, b) in values.iter().zip(back.real_data().unwrap()) {
            assert!((a - b).abs() / a < 1e-9, "round trip {a} -> {b}");
        }

        assert!(from_db_normalized(&db, 0.0, DEFAULT_FLOOR_DB).is_err());
    }

    #[test]
    fn griffin_lim_zero_iterations_is_istft_with_random_phase() {
        let cfg = StftConfig::new(512, 128);
        let len = 2048;
        let frames = cfg.frame_count(len).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mag_values: Vec<f64> = (0..257 * frames).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mag = Spectrogram::magnitude(257, frames, cfg, mag_values.clone()).unwrap();
        let gl = griffin_lim(&mag, &cfg, 0, 77, len).unwrap();
        assert!(gl.errors.is_empty());

        // rebuild the same random phases and compare with a direct istft
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let phases: Vec<f64> = (0..mag_values.len())
            .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
            .collect();
        let complex = Spectrogram::complex(
            mag.rows(),
            mag.cols(),
            cfg,
            mag_values
                .iter()
                .zip(&phases)
                .map(|(&m, &p)| Complex64::from_polar(m, p))
                .collect(),
        )
        .unwrap();
        let direct = istft(&complex, &cfg, len).unwrap();
        assert_eq!(gl.samples, direct.samples);
    }

    #[test]
    fn reflect_index_folds_correctly() {
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(-2, 5), 2);
        assert_eq!(reflect_index(5, 5), 3);
        assert_eq!(reflect_index(6, 5), 2);
        assert_eq!(reflect_index(0, 1), 0);
        assert_eq!(reflect_index(-3, 1), 0);
    }
}
