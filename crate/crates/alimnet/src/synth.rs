//! Class-conditional generation, spectrogram-to-audio resynthesis and
//! quantitative surrogate evaluation (class consistency against an
//! independently trained classifier, and a Frechet distance over
//! hand-crafted spectral features).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::TransformConfig;
use crate::diffcore::{Ctx, Tensor};
use crate::dsp::{
    from_db_normalized, griffin_lim, AudioClip, Spectrogram, SpectrogramKind, StftConfig,
    CLIP_SAMPLES, SAMPLE_RATE,
};
use crate::labels::{Dastgah, Instrument};
use crate::models::{embedding_index, Discriminator, Generator};
use crate::train::{load_checkpoint, LoadedCheckpoint};
use crate::{Error, Result};

/// What to generate from which checkpoint.
#[derive(Debug, Clone)]
pub struct GenerationRequest {
    pub checkpoint: PathBuf,
    pub dastgah: Dastgah,
    pub instrument: Option<Instrument>,
    pub count: usize,
    pub seed: u64,
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Draw `count` spectrograms from the generator for one head label.
/// Sample i uses the sub-seed mix(seed, i), so outputs are independent of
/// batching and safe to parallelize.
pub fn generate_with(
    gen: &mut Generator,
    head_label: usize,
    count: usize,
    seed: u64,
    stft: &StftConfig,
) -> Result<Vec<Spectrogram>> {
    if count == 0 {
        return Err(Error::InvalidInput("count must be at least 1".to_string()));
    }
    let side = gen.arch.input_size;
    let d = gen.arch.noise_dim;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, i as u64));
        let noise = Tensor::from_fn(&[1, d], |_| StandardNormal.sample(&mut rng));
        // batch-statistics normalization, the same mode the generator is
        // trained under; nothing in the generator mutates
        let fake = {
            let mut ctx = Ctx::train_frozen(&mut rng);
            ctx.deterministic = true;
            gen.forward(&noise, &[head_label], &mut ctx)?
        };
        // tanh output lies strictly inside (-1, 1)
        out.push(Spectrogram::db_normalized(
            side,
            side,
            *stft,
            fake.into_data(),
        )?);
    }
    Ok(out)
}

/// Load a checkpoint and generate class-conditioned spectrograms.
pub fn generate(req: &GenerationRequest) -> Result<(Vec<Spectrogram>, LoadedCheckpoint)> {
    let mut ckpt = load_checkpoint(&req.checkpoint)?;
    let instrument_idx = req.instrument.map(|i| i.index());
    let head_label = embedding_index(&ckpt.arch, req.dastgah.index(), instrument_idx)?;
    let specs = generate_with(
        &mut ckpt.gen,
        head_label,
        req.count,
        req.seed,
        &ckpt.transform.stft,
    )?;
    Ok((specs, ckpt))
}

/// Denormalize and phase-estimate without the final peak normalization.
pub fn resynthesize_raw(
    spec: &Spectrogram,
    transform: &TransformConfig,
    reference_magnitude: f64,
    gl_iterations: usize,
    seed: u64,
) -> Result<crate::dsp::GriffinLimResult> {
    let mag = match spec.kind() {
        SpectrogramKind::DbNormalized => {
            from_db_normalized(spec, reference_magnitude, transform.floor_db)?
        }
        SpectrogramKind::Magnitude => spec.clone(),
        SpectrogramKind::Complex => {
            return Err(Error::InvalidInput(
                "resynthesis expects a magnitude or db-normalized spectrogram".to_string(),
            ))
        }
    };
    griffin_lim(&mag, &transform.stft, gl_iterations, seed, CLIP_SAMPLES)
}

/// Full resynthesis: denormalize, Griffin-Lim, peak-normalize to 0.9.
/// Output is exactly one clip length at the pipeline sample rate.
pub fn resynthesize(
    spec: &Spectrogram,
    transform: &TransformConfig,
    reference_magnitude: f64,
    gl_iterations: usize,
    seed: u64,
) -> Result<AudioClip> {
    let gl = resynthesize_raw(spec, transform, reference_magnitude, gl_iterations, seed)?;
    let mut samples = gl.samples;
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let scale = 0.9 / peak;
        samples.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(AudioClip::new(samples, SAMPLE_RATE))
}

/// Fraction of generated spectrograms whose classifier argmax matches the
/// conditioning label. The classifier must be trained on real data only.
pub fn class_consistency(
    generated: &[Spectrogram],
    labels: &[usize],
    classifier: &mut Discriminator,
) -> Result<f64> {
    if generated.is_empty() {
        return Err(Error::InvalidInput("no generated samples to evaluate".to_string()));
    }
    if generated.len() != labels.len() {
        return Err(Error::shape("class_consistency", &[generated.len()], &[labels.len()]));
    }
    let c = classifier.arch.num_classes;
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::InvalidInput(format!(
            "label {bad} out of range for a {c}-class classifier"
        )));
    }
    let mut correct = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (spec, &label) in generated.iter().zip(labels) {
        let x = Tensor::new(
            vec![1, spec.rows(), spec.cols(), 1],
            spec.real_data()?.to_vec(),
        )?;
        let out = {
            let mut ctx = Ctx::infer(&mut rng);
            classifier.forward(&x, &mut ctx)?
        };
        if out.argmax_class(0) == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / generated.len() as f64)
}

const FEATURE_DIM: usize = 12;

/// Hand-crafted per-sample features: spectral centroid, bandwidth,
/// flatness, rolloff (85% energy) over the mean spectrum, plus RMS of
/// eight equal time segments.
fn spectral_features(spec: &Spectrogram) -> Result<[f64; FEATURE_DIM]> {
    let values: Vec<f64> = match spec.kind() {
        SpectrogramKind::Magnitude => spec.real_data()?.to_vec(),
        // monotone map back to magnitudes with a unit reference; both sets
        // of a comparison go through the same transform
        SpectrogramKind::DbNormalized => from_db_normalized(spec, 1.0, -80.0)?
            .real_data()?
            .to_vec(),
        SpectrogramKind::Complex => {
            return Err(Error::InvalidInput(
                "feature extraction expects a real-valued spectrogram".to_string(),
            ))
        }
    };
    let (rows, cols) = (spec.rows(), spec.cols());

    // mean spectrum over frames
    let mut mean_spec = vec![0.0; rows];
    for r in 0..rows {
        let mut s = 0.0;
        for t in 0..cols {
            s += values[r * cols + t];
        }
        mean_spec[r] = s / cols as f64;
    }
    let total: f64 = mean_spec.iter().sum::<f64>().max(1e-12);
    let centroid: f64 = mean_spec
        .iter()
        .enumerate()
        .map(|(r, &m)| (r as f64 / rows as f64) * m)
        .sum::<f64>()
        / total;
    let bandwidth: f64 = (mean_spec
        .iter()
        .enumerate()
        .map(|(r, &m)| {
            let d = r as f64 / rows as f64 - centroid;
            d * d * m
        })
        .sum::<f64>()
        / total)
        .sqrt();
    let log_mean: f64 =
        mean_spec.iter().map(|&m| (m + 1e-12).ln()).sum::<f64>() / rows as f64;
    let flatness = log_mean.exp() / (total / rows as f64 + 1e-12);
    let energy_total: f64 = mean_spec.iter().map(|&m| m * m).sum::<f64>().max(1e-300);
    let mut cum = 0.0;
    let mut rolloff = 1.0;
    for (r, &m) in mean_spec.iter().enumerate() {
        cum += m * m;
        if cum >= 0.85 * energy_total {
            rolloff = r as f64 / rows as f64;
            break;
        }
    }

    let mut features = [0.0; FEATURE_DIM];
    features[0] = centroid;
    features[1] = bandwidth;
    features[2] = flatness;
    features[3] = rolloff;
    for seg in 0..8 {
        let from = seg * cols / 8;
        let to = ((seg + 1) * cols / 8).max(from + 1);
        let mut s = 0.0;
        let mut n = 0usize;
        for t in from..to {
            for r in 0..rows {
                let v = values[r * cols + t];
                s += v * v;
                n += 1;
            }
        }
        features[4 + seg] = (s / n.max(1) as f64).sqrt();
    }
    Ok(features)
}

fn gaussian_fit(features: &[[f64; FEATURE_DIM]]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = features.len();
    let mut mean = DMatrix::zeros(FEATURE_DIM, 1);
    for f in features {
        for (i, &v) in f.iter().enumerate() {
            mean[(i, 0)] += v;
        }
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(FEATURE_DIM, FEATURE_DIM);
    for f in features {
        let mut centered = DMatrix::zeros(FEATURE_DIM, 1);
        for (i, &v) in f.iter().enumerate() {
            centered[(i, 0)] = v - mean[(i, 0)];
        }
        cov += &centered * centered.transpose();
    }
    cov /= n as f64;
    // diagonal loading keeps near-singular fits usable
    for i in 0..FEATURE_DIM {
        cov[(i, i)] += 1e-6;
    }
    (mean, cov)
}

fn sqrtm_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let mut d = DMatrix::zeros(FEATURE_DIM, FEATURE_DIM);
    for i in 0..FEATURE_DIM {
        d[(i, i)] = eig.eigenvalues[i].max(0.0).sqrt();
    }
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Frechet distance between Gaussian fits of the two feature sets:
/// |mu1-mu2|^2 + tr(S1 + S2 - 2 (S1^(1/2) S2 S1^(1/2))^(1/2)).
/// Zero iff the fitted means and covariances coincide.
pub fn feature_distance(real: &[Spectrogram], generated: &[Spectrogram]) -> Result<f64> {
    if real.is_empty() || generated.is_empty() {
        return Err(Error::InvalidInput(
            "feature_distance needs two non-empty sets".to_string(),
        ));
    }
    let f1: Vec<[f64; FEATURE_DIM]> = real
        .iter()
        .map(spectral_features)
        .collect::<Result<_>>()?;
    let f2: Vec<[f64; FEATURE_DIM]> = generated
        .iter()
        .map(spectral_features)
        .collect::<Result<_>>()?;
    let (m1, s1) = gaussian_fit(&f1);
    let (m2, s2) = gaussian_fit(&f2);

    let diff = &m1 - &m2;
    let mean_term = (diff.transpose() * diff)[(0, 0)];
    let s1_sqrt = sqrtm_psd(&s1);
    let inner = &s1_sqrt * &s2 * &s1_sqrt;
    // symmetrize against roundoff before the second square root
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross = sqrtm_psd(&inner);
    let trace_term = s1.trace() + s2.trace() - 2.0 * cross.trace();
    Ok((mean_term + trace_term).max(0.0))
}

/// Surrogate evaluation summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_consistency: f64,
    pub feature_distance: f64,
    pub per_class: BTreeMap<String, f64>,
}

impl EvalReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("report serialization");
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}

/// Compute both surrogate metrics plus a per-label consistency breakdown.
pub fn eval_report(
    generated: &[Spectrogram],
    labels: &[usize],
    classifier: &mut Discriminator,
    real: &[Spectrogram],
) -> Result<EvalReport> {
    let consistency = class_consistency(generated, labels, classifier)?;
    let distance = feature_distance(real, generated)?;
    let mut per_class: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (spec, &label) in generated.iter().zip(labels) {
        let x = Tensor::new(
            vec![1, spec.rows(), spec.cols(), 1],
            spec.real_data()?.to_vec(),
        )?;
        let out = {
            let mut ctx = Ctx::infer(&mut rng);
            classifier.forward(&x, &mut ctx)?
        };
        let entry = per_class.entry(format!("class_{label}")).or_insert((0, 0));
        entry.1 += 1;
        if out.argmax_class(0) == label {
            entry.0 += 1;
        }
    }
    Ok(EvalReport {
        class_consistency: consistency,
        feature_distance: distance,
        per_class: per_class
            .into_iter()
            .map(|(k, (hit, n))| (k, hit as f64 / n as f64))
            .collect(),
    })
}

/// Write a grayscale PNG of a spectrogram (low frequencies at the bottom).
pub fn spectrogram_png(spec: &Spectrogram, path: &Path) -> Result<()> {
    let values: Vec<f64> = match spec.kind() {
        SpectrogramKind::DbNormalized => spec.real_data()?.to_vec(),
        SpectrogramKind::Magnitude => crate::dsp::to_db_normalized(spec, -80.0)?
            .real_data()?
            .to_vec(),
        SpectrogramKind::Complex => crate::dsp::to_db_normalized(&spec.to_magnitude()?, -80.0)?
            .real_data()?
            .to_vec(),
    };
    let (rows, cols) = (spec.rows(), spec.cols());
    let mut img = image::GrayImage::new(cols as u32, rows as u32);
    for r in 0..rows {
        for t in 0..cols {
            let v = values[r * cols + t];
            let byte = (((v + 1.0) / 2.0).clamp(0.0, 1.0) * 255.0).round() as u8;
            // row 0 (lowest bin) goes to the bottom of the image
            img.put_pixel(t as u32, (rows - 1 - r) as u32, image::Luma([byte]));
        }
    }
    img.save(path)
        .map_err(|e| Error::format(path, format!("png encode failed: {e}")))
}
