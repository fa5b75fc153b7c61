//! Dataset handling: corpus layout scanning, clip preprocessing, the
//! deterministic synthetic corpus and batched example iteration.
//!
//! Corpus layout on disk is `<root>/<dastgah>/<instrument>/*.wav`.
//! Preprocessing caches spectrogram containers in a mirrored layout plus
//! a JSON manifest carrying per-clip peak magnitudes and the dataset
//! reference magnitude (median of peaks) used for resynthesis.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::diffcore::Tensor;
use crate::dsp::{
    stft, to_db_normalized, Spectrogram, StftConfig, CLIP_SAMPLES,
    DEFAULT_FLOOR_DB, SAMPLE_RATE,
};
use crate::labels::{Dastgah, Instrument};
use crate::wav;
use crate::{Error, Result};

/// Published class sizes of the MICM corpus, used by `--expect-micm`.
pub const MICM_CLASS_COUNTS: [(Dastgah, usize); 7] = [
    (Dastgah::Shour, 445),
    (Dastgah::Homayoun, 173),
    (Dastgah::Mahour, 150),
    (Dastgah::Segah, 74),
    (Dastgah::Chahargah, 106),
    (Dastgah::Rastpanjgah, 94),
    (Dastgah::Nava, 95),
];

/// Published instrument totals of the MICM corpus (violin, ney).
pub const MICM_INSTRUMENT_COUNTS: (usize, usize) = (506, 631);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub dastgah: Dastgah,
    pub instrument: Instrument,
}

/// Labeled file listing of one corpus directory.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn class_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for e in &self.entries {
            *counts.entry(e.dastgah.name().to_string()).or_insert(0) += 1;
        }
        counts
    }

    pub fn instrument_counts(&self) -> (usize, usize) {
        let violin = self
            .entries
            .iter()
            .filter(|e| e.instrument == Instrument::Violin)
            .count();
        (violin, self.entries.len() - violin)
    }

    /// Distinct Dastgah indices present, ascending.
    pub fn active_classes(&self) -> Vec<usize> {
        let mut seen = [false; 7];
        for e in &self.entries {
            seen[e.dastgah.index()] = true;
        }
        (0..7).filter(|&i| seen[i]).collect()
    }

    /// Write the manifest as JSON with entry paths relative to the
    /// manifest's own directory.
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        let entries: Vec<ManifestEntry> = self
            .entries
            .iter()
            .map(|e| ManifestEntry {
                path: e
                    .path
                    .strip_prefix(base)
                    .map(|p| p.to_path_buf())
                    .unwrap_or_else(|_| e.path.clone()),
                dastgah: e.dastgah,
                instrument: e.instrument,
            })
            .collect();
        let json = serde_json::to_string_pretty(&ManifestJson {
            class_counts: self.class_counts(),
            total: entries.len(),
            entries,
        })
        .expect("manifest serialization");
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    /// Check the published MICM class sizes and instrument totals.
    pub fn validate_micm(&self) -> Result<()> {
        let counts = self.class_counts();
        let mut problems = Vec::new();
        for (dastgah, expected) in MICM_CLASS_COUNTS {
            let got = counts.get(dastgah.name()).copied().unwrap_or(0);
            if got != expected {
                problems.push(format!("{}: {} clips, expected {}", dastgah.name(), got, expected));
            }
        }
        let (violin, ney) = self.instrument_counts();
        if (violin, ney) != MICM_INSTRUMENT_COUNTS {
            problems.push(format!(
                "instruments: violin {violin} / ney {ney}, expected {} / {}",
                MICM_INSTRUMENT_COUNTS.0, MICM_INSTRUMENT_COUNTS.1
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "corpus does not match the MICM description: {}",
                problems.join("; ")
            )))
        }
    }
}

#[derive(Serialize)]
struct ManifestJson {
    entries: Vec<ManifestEntry>,
    class_counts: BTreeMap<String, usize>,
    total: usize,
}

fn sorted_dir(path: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    out.sort();
    Ok(out)
}

/// Walk `<root>/<dastgah>/<instrument>/*.wav`. Directory names parse
/// case-insensitively; unknown label directories fail the scan and are
/// all reported at once.
pub fn scan_manifest(root: &Path) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::InvalidInput(format!(
            "dataset root {} is not a directory",
            root.display()
        )));
    }
    let mut entries = Vec::new();
    let mut offenders = Vec::new();
    for class_dir in sorted_dir(root)? {
        if !class_dir.is_dir() {
            continue;
        }
        let class_name = class_dir.file_name().unwrap_or_default().to_string_lossy();
        let Ok(dastgah) = Dastgah::parse(&class_name) else {
            offenders.push(class_dir.clone());
            continue;
        };
        for instr_dir in sorted_dir(&class_dir)? {
            if !instr_dir.is_dir() {
                continue;
            }
            let instr_name = instr_dir.file_name().unwrap_or_default().to_string_lossy();
            let Ok(instrument) = Instrument::parse(&instr_name) else {
                offenders.push(instr_dir.clone());
                continue;
            };
            for file in sorted_dir(&instr_dir)? {
                let is_wav = file
                    .extension()
                    .map(|e| e.eq_ignore_ascii_case("wav"))
                    .unwrap_or(false);
                if file.is_file() && is_wav {
                    entries.push(ManifestEntry {
                        path: file,
                        dastgah,
                        instrument,
                    });
                }
            }
        }
    }
    if !offenders.is_empty() {
        return Err(Error::UnknownLabels { offenders });
    }
    Ok(DatasetManifest { entries })
}

/// Where to cut a clip out of a longer recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropPolicy {
    Head,
    Random { seed: u64 },
}

/// Cut (or optionally zero-pad) to exactly [`CLIP_SAMPLES`] samples.
pub fn cut_clip(samples: &[f64], policy: CropPolicy, allow_pad: bool) -> Result<Vec<f64>> {
    if samples.len() < CLIP_SAMPLES {
        if !allow_pad {
            return Err(Error::TooShort {
                len: samples.len(),
                required: CLIP_SAMPLES,
            });
        }
        let mut out = samples.to_vec();
        out.resize(CLIP_SAMPLES, 0.0);
        return Ok(out);
    }
    let start = match policy {
        CropPolicy::Head => 0,
        CropPolicy::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.gen_range(0..=samples.len() - CLIP_SAMPLES)
        }
    };
    Ok(samples[start..start + CLIP_SAMPLES].to_vec())
}

/// Waveform-to-example transform settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformConfig {
    pub stft: StftConfig,
    pub floor_db: f64,
    /// When false, examples carry raw magnitudes instead of the
    /// [-1, 1] dB normalization.
    pub db_normalize: bool,
    pub crop: CropPolicy,
    pub allow_pad: bool,
}

impl TransformConfig {
    /// Full-size path: 256x256 spectrograms.
    pub fn full() -> TransformConfig {
        TransformConfig {
            stft: StftConfig::default(),
            floor_db: DEFAULT_FLOOR_DB,
            db_normalize: true,
            crop: CropPolicy::Head,
            allow_pad: false,
        }
    }

    /// Reduced path: 64x64 spectrograms from the same 131072-sample clips
    /// (fft 126 -> 64 bins, hop 2080 -> 64 frames).
    pub fn reduced() -> TransformConfig {
        TransformConfig {
            stft: StftConfig::new(126, 2080),
            floor_db: DEFAULT_FLOOR_DB,
            db_normalize: true,
            crop: CropPolicy::Head,
            allow_pad: false,
        }
    }

    pub fn spectrogram_side(&self) -> usize {
        self.stft.frequency_bins()
    }
}

/// Quantize spectrogram values through f32 so that container round trips
/// are bit-exact and preprocessing is reproducible.
fn quantize_f32(values: Vec<f64>) -> Vec<f64> {
    values.into_iter().map(|v| (v as f32) as f64).collect()
}

/// One clip turned into a training input: the spectrogram plus the peak
/// magnitude observed before normalization.
pub fn preprocess_clip(samples: &[f64], tf: &TransformConfig) -> Result<(Spectrogram, f64)> {
    let cut = cut_clip(samples, tf.crop, tf.allow_pad)?;
    let complex = stft(&cut, &tf.stft)?;
    let mag = complex.to_magnitude()?;
    let peak = mag.max_magnitude()?;
    let spec = if tf.db_normalize {
        let db = to_db_normalized(&mag, tf.floor_db)?;
        Spectrogram::db_normalized(
            db.rows(),
            db.cols(),
            *db.config(),
            quantize_f32(db.real_data()?.to_vec()),
        )?
    } else {
        Spectrogram::magnitude(
            mag.rows(),
            mag.cols(),
            *mag.config(),
            quantize_f32(mag.real_data()?.to_vec()),
        )?
    };
    Ok((spec, peak))
}

/// One labeled spectrogram ready for training.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub spec: Spectrogram,
    pub class_index: usize,
    pub instrument_index: usize,
}

/// In-memory example store plus the files that could not be read.
#[derive(Debug)]
pub struct ExampleSet {
    pub examples: Vec<TrainingExample>,
    pub skipped: Vec<(PathBuf, String)>,
    /// Median of per-clip peak magnitudes.
    pub reference_magnitude: f64,
}

fn median(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 1.0;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[values.len() / 2]
}

/// Read and transform every manifest entry. Files run in parallel on the
/// caller's rayon pool; each output depends only on its own file bytes,
/// so results are deterministic for any worker count.
pub fn load_examples(manifest: &DatasetManifest, tf: &TransformConfig) -> Result<ExampleSet> {
    let results: Vec<(PathBuf, Result<(TrainingExample, f64)>)> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let out = (|| {
                let (samples, rate) = wav::read_wav(&entry.path)?;
                if rate != SAMPLE_RATE {
                    return Err(Error::format(
                        &entry.path,
                        format!("sample rate {rate}, need {SAMPLE_RATE}"),
                    ));
                }
                let (spec, peak) = preprocess_clip(&samples, tf)?;
                Ok((
                    TrainingExample {
                        spec,
                        class_index: entry.dastgah.index(),
                        instrument_index: entry.instrument.index(),
                    },
                    peak,
                ))
            })();
            (entry.path.clone(), out)
        })
        .collect();

    let mut examples = Vec::new();
    let mut skipped = Vec::new();
    let mut peaks = Vec::new();
    for (path, result) in results {
        match result {
            Ok((ex, peak)) => {
                examples.push(ex);
                peaks.push(peak);
            }
            Err(e) => skipped.push((path, e.to_string())),
        }
    }
    Ok(ExampleSet {
        examples,
        skipped,
        reference_magnitude: median(peaks),
    })
}

/// Deterministic stratified split: per class, a seeded shuffle puts
/// roughly `holdout_fraction` of the indices into the second set (at
/// least one per class when the class has two or more examples).
pub fn split_stratified(
    examples: &[TrainingExample],
    holdout_fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, ex) in examples.iter().enumerate() {
        by_class.entry(ex.class_index).or_default().push(i);
    }
    let mut train = Vec::new();
    let mut held = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, mut idxs) in by_class {
        idxs.shuffle(&mut rng);
        let mut n_held = ((idxs.len() as f64) * holdout_fraction).round() as usize;
        if idxs.len() >= 2 {
            n_held = n_held.clamp(1, idxs.len() - 1);
        } else {
            n_held = 0;
        }
        held.extend_from_slice(&idxs[..n_held]);
        train.extend_from_slice(&idxs[n_held..]);
    }
    train.sort_unstable();
    held.sort_unstable();
    (train, held)
}

/// Spectrogram as a [rows, cols, 1] input tensor.
pub fn example_tensor(spec: &Spectrogram) -> Result<Tensor> {
    let data = spec.real_data()?.to_vec();
    Tensor::new(vec![spec.rows(), spec.cols(), 1], data)
}

/// One batch of stacked spectrograms with their labels.
#[derive(Debug, Clone)]
pub struct Batch {
    /// Shape [B, S, S, 1].
    pub x: Tensor,
    pub dastgah: Vec<usize>,
    pub instrument: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.dastgah.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dastgah.is_empty()
    }
}

fn stack_examples(examples: &[TrainingExample], idxs: &[usize]) -> Result<Batch> {
    let first = &examples[idxs[0]].spec;
    let (rows, cols) = (first.rows(), first.cols());
    let mut data = Vec::with_capacity(idxs.len() * rows * cols);
    let mut dastgah = Vec::with_capacity(idxs.len());
    let mut instrument = Vec::with_capacity(idxs.len());
    for &i in idxs {
        let ex = &examples[i];
        if ex.spec.rows() != rows || ex.spec.cols() != cols {
            return Err(Error::shape(
                "batch assembly",
                &[rows, cols],
                &[ex.spec.rows(), ex.spec.cols()],
            ));
        }
        data.extend_from_slice(ex.spec.real_data()?);
        dastgah.push(ex.class_index);
        instrument.push(ex.instrument_index);
    }
    Ok(Batch {
        x: Tensor::new(vec![idxs.len(), rows, cols, 1], data)?,
        dastgah,
        instrument,
    })
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Endless batch stream with a deterministic per-epoch shuffle. The final
/// partial batch of every epoch is emitted before reshuffling.
pub struct BatchIter<'a> {
    examples: &'a [TrainingExample],
    batch_size: usize,
    shuffle_seed: u64,
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
}

impl<'a> BatchIter<'a> {
    pub fn new(
        examples: &'a [TrainingExample],
        batch_size: usize,
        shuffle_seed: u64,
    ) -> Result<BatchIter<'a>> {
        if batch_size == 0 {
            return Err(Error::InvalidInput("batch_size must be at least 1".to_string()));
        }
        if examples.is_empty() {
            return Err(Error::InvalidInput("no training examples".to_string()));
        }
        let mut iter = BatchIter {
            examples,
            batch_size,
            shuffle_seed,
            order: (0..examples.len()).collect(),
            pos: 0,
            epoch: 0,
        };
        iter.reshuffle();
        Ok(iter)
    }

    fn reshuffle(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.shuffle_seed, self.epoch));
        self.order.shuffle(&mut rng);
        self.pos = 0;
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }
}

impl<'a> Iterator for BatchIter<'a> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            self.epoch += 1;
            self.reshuffle();
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idxs: Vec<usize> = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(stack_examples(self.examples, &idxs))
    }
}

// ---------------------------------------------------------------------------
// synthetic corpus
// ---------------------------------------------------------------------------

/// Seven-note frequency-ratio sets, one per pseudo-class. All distinct.
const RATIO_SETS: [[f64; 7]; 7] = [
    [1.0, 9.0 / 8.0, 5.0 / 4.0, 4.0 / 3.0, 3.0 / 2.0, 5.0 / 3.0, 15.0 / 8.0],
    [1.0, 16.0 / 15.0, 6.0 / 5.0, 4.0 / 3.0, 3.0 / 2.0, 8.0 / 5.0, 9.0 / 5.0],
    [1.0, 10.0 / 9.0, 7.0 / 6.0, 21.0 / 16.0, 3.0 / 2.0, 14.0 / 9.0, 7.0 / 4.0],
    [1.0, 12.0 / 11.0, 9.0 / 8.0, 11.0 / 8.0, 3.0 / 2.0, 18.0 / 11.0, 11.0 / 6.0],
    [1.0, 13.0 / 12.0, 16.0 / 13.0, 4.0 / 3.0, 13.0 / 9.0, 8.0 / 5.0, 16.0 / 9.0],
    [1.0, 15.0 / 14.0, 5.0 / 4.0, 10.0 / 7.0, 3.0 / 2.0, 12.0 / 7.0, 15.0 / 8.0],
    [1.0, 11.0 / 10.0, 6.0 / 5.0, 7.0 / 5.0, 3.0 / 2.0, 17.0 / 10.0, 9.0 / 5.0],
];

/// Base frequencies per pseudo-class, spread so small class counts get
/// well-separated bands.
const BASE_HZ: [f64; 7] = [220.0, 660.0, 330.0, 880.0, 440.0, 550.0, 770.0];

fn render_clip(class: usize, instrument: Instrument, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ratios = &RATIO_SETS[class];
    let base = BASE_HZ[class];
    let fs = SAMPLE_RATE as f64;
    let mut out = vec![0.0; CLIP_SAMPLES];

    // instrument timbres: harmonic weights normalized to a 0.75 peak
    let harmonics: &[(f64, f64)] = match instrument {
        Instrument::Violin => &[(1.0, 1.0), (2.0, 0.45), (3.0, 0.2)],
        Instrument::Ney => &[(1.0, 1.0), (2.0, 0.15)],
    };
    let weight_sum: f64 = harmonics.iter().map(|(_, w)| w).sum();
    let amp = 0.75 / weight_sum;
    let (vibrato_depth, breath) = match instrument {
        Instrument::Violin => (0.004, 0.0),
        Instrument::Ney => (0.0, 0.012),
    };

    let mut note = rng.gen_range(0..7usize);
    let mut t = 0usize;
    while t < CLIP_SAMPLES {
        let dur = (rng.gen_range(0.15..0.45) * fs) as usize;
        let dur = dur.min(CLIP_SAMPLES - t);
        let freq = base * ratios[note];
        let attack = ((0.01 * fs) as usize).min(dur / 2);
        let release = ((0.03 * fs) as usize).min(dur / 2);
        let mut phases = vec![0.0f64; harmonics.len()];
        for i in 0..dur {
            let env = if i < attack {
                i as f64 / attack.max(1) as f64
            } else if i + release > dur {
                (dur - i) as f64 / release.max(1) as f64
            } else {
                1.0
            };
            let vib = 1.0 + vibrato_depth * (2.0 * std::f64::consts::PI * 5.5 * (t + i) as f64 / fs).sin();
            let mut v = 0.0;
            for (h, (mult, w)) in harmonics.iter().enumerate() {
                phases[h] += 2.0 * std::f64::consts::PI * freq * mult * vib / fs;
                v += w * phases[h].sin();
            }
            let mut sample = amp * env * v;
            if breath > 0.0 {
                sample += env * rng.gen_range(-breath..breath);
            }
            out[t + i] = sample;
        }
        t += dur;
        // random walk over the pitch set with occasional jumps
        if rng.gen::<f64>() < 0.1 {
            note = rng.gen_range(0..7);
        } else {
            let step: i64 = rng.gen_range(-1..=1);
            note = (note as i64 + step).clamp(0, 6) as usize;
        }
    }
    // low noise floor, bounded so the construction peak stays under 0.9
    for v in out.iter_mut() {
        *v += rng.gen_range(-0.008..0.008);
    }
    out
}

/// Write a deterministic labeled corpus of enveloped-sinusoid clips:
/// `per_class` clips for each of the first `num_classes` Dastgah names,
/// alternating violin and ney. Returns the manifest of written files.
pub fn make_synthetic_corpus(
    out_dir: &Path,
    num_classes: usize,
    per_class: usize,
    seed: u64,
) -> Result<DatasetManifest> {
    if !(2..=7).contains(&num_classes) {
        return Err(Error::InvalidInput(format!(
            "num_classes must be between 2 and 7, got {num_classes}"
        )));
    }
    if per_class == 0 {
        return Err(Error::InvalidInput("per_class must be at least 1".to_string()));
    }
    let mut jobs = Vec::new();
    for class in 0..num_classes {
        let dastgah = Dastgah::ALL[class];
        for i in 0..per_class {
            let instrument = if i % 2 == 0 {
                Instrument::Violin
            } else {
                Instrument::Ney
            };
            let dir = out_dir.join(dastgah.name()).join(instrument.name());
            let path = dir.join(format!("clip_{i:03}.wav"));
            let clip_seed = mix_seed(seed, (class as u64) << 32 | i as u64);
            jobs.push((path, dastgah, instrument, class, clip_seed));
        }
    }
    for (path, ..) in &jobs {
        let dir = path.parent().unwrap();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    jobs.par_iter()
        .map(|(path, _, instrument, class, clip_seed)| {
            let samples = render_clip(*class, *instrument, *clip_seed);
            wav::write_wav(path, &samples, SAMPLE_RATE)
        })
        .collect::<Result<Vec<()>>>()?;

    let entries = jobs
        .into_iter()
        .map(|(path, dastgah, instrument, ..)| ManifestEntry {
            path,
            dastgah,
            instrument,
        })
        .collect();
    Ok(DatasetManifest { entries })
}

// ---------------------------------------------------------------------------
// preprocessed cache
// ---------------------------------------------------------------------------

/// Manifest of a preprocessed cache directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreprocessedManifest {
    pub entries: Vec<PreprocessedEntry>,
    pub reference_magnitude: f64,
    pub stft: StftConfig,
    pub floor_db: f64,
    pub db_normalized: bool,
    pub class_counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreprocessedEntry {
    /// Container path relative to the cache root.
    pub path: String,
    pub dastgah: Dastgah,
    pub instrument: Instrument,
    pub max_magnitude: f64,
}

pub const CACHE_MANIFEST_NAME: &str = "preprocessed.json";

#[derive(Debug)]
pub struct PreprocessSummary {
    pub processed: usize,
    pub skipped: Vec<(PathBuf, String)>,
    pub reference_magnitude: f64,
}

/// Preprocess a WAV corpus into a cache of spectrogram containers with a
/// JSON manifest. Layout mirrors the input corpus.
pub fn preprocess_corpus(
    manifest: &DatasetManifest,
    out_dir: &Path,
    tf: &TransformConfig,
) -> Result<PreprocessSummary> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let results: Vec<(usize, Result<(String, f64)>)> = manifest
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, entry)| {
            let out = (|| {
                let (samples, rate) = wav::read_wav(&entry.path)?;
                if rate != SAMPLE_RATE {
                    return Err(Error::format(
                        &entry.path,
                        format!("sample rate {rate}, need {SAMPLE_RATE}"),
                    ));
                }
                let (spec, peak) = preprocess_clip(&samples, tf)?;
                let stem = entry
                    .path
                    .file_stem()
                    .unwrap_or_default()
                    .to_string_lossy()
                    .to_string();
                let rel = format!(
                    "{}/{}/{}.alim",
                    entry.dastgah.name(),
                    entry.instrument.name(),
                    stem
                );
                let full = out_dir.join(&rel);
                fs::create_dir_all(full.parent().unwrap())
                    .map_err(|e| Error::io(full.parent().unwrap(), e))?;
                container::write_spectrogram(&full, &spec)?;
                Ok((rel, peak))
            })();
            (i, out)
        })
        .collect();

    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    let mut peaks = Vec::new();
    for (i, result) in results {
        let src = &manifest.entries[i];
        match result {
            Ok((rel, peak)) => {
                entries.push(PreprocessedEntry {
                    path: rel,
                    dastgah: src.dastgah,
                    instrument: src.instrument,
                    max_magnitude: peak,
                });
                peaks.push(peak);
            }
            Err(e) => skipped.push((src.path.clone(), e.to_string())),
        }
    }
    let reference_magnitude = median(peaks);
    let cache = PreprocessedManifest {
        class_counts: {
            let mut counts = BTreeMap::new();
            for e in &entries {
                *counts.entry(e.dastgah.name().to_string()).or_insert(0) += 1;
            }
            counts
        },
        entries,
        reference_magnitude,
        stft: tf.stft,
        floor_db: tf.floor_db,
        db_normalized: tf.db_normalize,
    };
    let json = serde_json::to_string_pretty(&cache).expect("cache manifest serialization");
    let manifest_path = out_dir.join(CACHE_MANIFEST_NAME);
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(PreprocessSummary {
        processed: cache.entries.len(),
        skipped,
        reference_magnitude,
    })
}

/// Load a preprocessed cache directory back into memory.
pub fn load_cache(dir: &Path) -> Result<(ExampleSet, PreprocessedManifest)> {
    let manifest_path = dir.join(CACHE_MANIFEST_NAME);
    let json = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let cache: PreprocessedManifest = serde_json::from_str(&json)
        .map_err(|e| Error::format(&manifest_path, format!("bad cache manifest: {e}")))?;
    let mut examples = Vec::new();
    let mut skipped = Vec::new();
    for entry in &cache.entries {
        let path = dir.join(&entry.path);
        match container::read_spectrogram(&path) {
            Ok(spec) => examples.push(TrainingExample {
                spec,
                class_index: entry.dastgah.index(),
                instrument_index: entry.instrument.index(),
            }),
            Err(e) => skipped.push((path, e.to_string())),
        }
    }
    Ok((
        ExampleSet {
            examples,
            skipped,
            reference_magnitude: cache.reference_magnitude,
        },
        cache,
    ))
}

/// True when `dir` holds a preprocessed cache rather than raw WAV files.
pub fn is_cache_dir(dir: &Path) -> bool {
    dir.join(CACHE_MANIFEST_NAME).is_file()
}
