//! Adversarial training: the discriminator ascends the source and class
//! log-likelihoods, alternating with a generator step. Every run is
//! bit-deterministic given its seed (single-threaded).

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::container::{self, NamedTensor};
use crate::data::{Batch, BatchIter, TrainingExample, TransformConfig};
use crate::diffcore::{Adam, AdamConfig, Ctx, Tensor};
use crate::dsp::{StftConfig, WindowKind};
use crate::models::{
    build_pair, embedding_index, ArchConfig, ClassMode, Discriminator, Generator,
};
use crate::{Error, Result};

/// Probabilities are clamped to [PROB_CLAMP, 1 - PROB_CLAMP] inside the
/// log-likelihoods, bounding each loss term by ln(1e7).
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Normal,
    Uniform,
}

/// Which generator objective to use. The standard form maximizes
/// log P(S=real | fake) + log P(C=c | fake); the literal form minimizes
/// the class term and maximizes log P(S=fake | fake) instead, which
/// trains the generator to be misclassified - kept selectable for
/// comparison runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorSign {
    AcganStandard,
    PaperLiteral,
}

fn default_batch_size() -> usize {
    16
}
fn default_steps() -> usize {
    20000
}
fn default_lr() -> f64 {
    2e-4
}
fn default_d_steps() -> usize {
    1
}
fn default_noise() -> NoiseKind {
    NoiseKind::Normal
}
fn default_class_mode() -> ClassMode {
    ClassMode::Seven
}
fn default_sign() -> GeneratorSign {
    GeneratorSign::AcganStandard
}
fn default_checkpoint_every() -> usize {
    500
}

/// Training hyperparameters; the JSON config file mirrors these fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_lr")]
    pub lr_d: f64,
    #[serde(default = "default_lr")]
    pub lr_g: f64,
    #[serde(default = "default_d_steps")]
    pub d_steps_per_g: usize,
    #[serde(default = "default_noise")]
    pub noise_kind: NoiseKind,
    #[serde(default = "default_class_mode")]
    pub class_mode: ClassMode,
    #[serde(default = "default_sign")]
    pub generator_sign: GeneratorSign,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    /// Corpus directory (raw WAV layout or a preprocessed cache).
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            batch_size: default_batch_size(),
            steps: default_steps(),
            lr_d: default_lr(),
            lr_g: default_lr(),
            d_steps_per_g: default_d_steps(),
            noise_kind: default_noise(),
            class_mode: default_class_mode(),
            generator_sign: default_sign(),
            seed: 0,
            checkpoint_every: default_checkpoint_every(),
            data_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig("batch_size must be at least 2".to_string()));
        }
        if self.steps < 1 {
            return Err(Error::InvalidConfig("steps must be at least 1".to_string()));
        }
        if self.d_steps_per_g < 1 {
            return Err(Error::InvalidConfig("d_steps_per_g must be at least 1".to_string()));
        }
        if self.checkpoint_every < 1 {
            return Err(Error::InvalidConfig("checkpoint_every must be at least 1".to_string()));
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<TrainConfig> {
        let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig = serde_json::from_str(&json)
            .map_err(|e| Error::format(path, format!("bad train config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Source log-likelihood: mean ln p over real plus mean ln (1-p) over
/// fake. Higher is better for the discriminator.
pub fn loss_source(source_probs_real: &[f64], source_probs_fake: &[f64]) -> f64 {
    let real: f64 = source_probs_real.iter().map(|&p| clamp_prob(p).ln()).sum::<f64>()
        / source_probs_real.len().max(1) as f64;
    let fake: f64 = source_probs_fake
        .iter()
        .map(|&p| (1.0 - clamp_prob(p)).ln())
        .sum::<f64>()
        / source_probs_fake.len().max(1) as f64;
    real + fake
}

fn mean_label_loglik(class_probs: &Tensor, labels: &[usize]) -> Result<f64> {
    let c = class_probs.shape()[1];
    let n = class_probs.shape()[0];
    if labels.len() != n {
        return Err(Error::shape("class labels", &[n], &[labels.len()]));
    }
    let mut sum = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        if label >= c {
            return Err(Error::InvalidInput(format!(
                "label {label} out of range 0..{c}"
            )));
        }
        sum += clamp_prob(class_probs.data()[i * c + label]).ln();
    }
    Ok(sum / n.max(1) as f64)
}

/// Class log-likelihood: mean ln p(correct class) over real plus the same
/// over fake; shared by both players.
pub fn loss_class(
    class_probs_real: &Tensor,
    labels_real: &[usize],
    class_probs_fake: &Tensor,
    labels_fake: &[usize],
) -> Result<f64> {
    Ok(mean_label_loglik(class_probs_real, labels_real)?
        + mean_label_loglik(class_probs_fake, labels_fake)?)
}

/// Gradient of the minimized discriminator loss -(LS + LC) at the head
/// outputs, for a combined [real; fake] batch. Returns (grad at source
/// probabilities [N,1], grad at class probabilities [N,C]).
pub fn d_loss_head_grads(
    source_probs: &[f64],
    class_probs: &Tensor,
    labels_real: &[usize],
    labels_fake: &[usize],
) -> Result<(Tensor, Tensor)> {
    let n = labels_real.len();
    let m = labels_fake.len();
    let c = class_probs.shape()[1];
    if source_probs.len() != n + m || class_probs.shape()[0] != n + m {
        return Err(Error::shape(
            "d_loss_head_grads",
            &[n + m],
            &[source_probs.len()],
        ));
    }
    let mut g_source = vec![0.0; n + m];
    let mut g_class = vec![0.0; (n + m) * c];
    for i in 0..n + m {
        let p = source_probs[i];
        if (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
            g_source[i] = if i < n {
                -1.0 / (n as f64 * p)
            } else {
                1.0 / (m as f64 * (1.0 - p))
            };
        }
        let label = if i < n { labels_real[i] } else { labels_fake[i - n] };
        if label >= c {
            return Err(Error::InvalidInput(format!("label {label} out of range 0..{c}")));
        }
        let pc = class_probs.data()[i * c + label];
        if (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&pc) {
            let denom = if i < n { n } else { m } as f64;
            g_class[i * c + label] = -1.0 / (denom * pc);
        }
    }
    Ok((
        Tensor::new(vec![n + m, 1], g_source)?,
        Tensor::new(vec![n + m, c], g_class)?,
    ))
}

/// The generator's minimized objective for a fake batch.
pub fn g_objective_value(
    source_probs: &[f64],
    class_probs: &Tensor,
    labels: &[usize],
    sign: GeneratorSign,
) -> Result<f64> {
    let n = source_probs.len().max(1) as f64;
    let class_ll = mean_label_loglik(class_probs, labels)?;
    match sign {
        GeneratorSign::AcganStandard => {
            let source_real_ll: f64 =
                source_probs.iter().map(|&p| clamp_prob(p).ln()).sum::<f64>() / n;
            Ok(-(source_real_ll + class_ll))
        }
        GeneratorSign::PaperLiteral => {
            let source_fake_ll: f64 = source_probs
                .iter()
                .map(|&p| (1.0 - clamp_prob(p)).ln())
                .sum::<f64>()
                / n;
            Ok(class_ll - source_fake_ll)
        }
    }
}

/// Gradient of the generator's minimized objective at the discriminator
/// head outputs.
pub fn g_loss_head_grads(
    source_probs: &[f64],
    class_probs: &Tensor,
    labels: &[usize],
    sign: GeneratorSign,
) -> Result<(Tensor, Tensor)> {
    let n = source_probs.len();
    let c = class_probs.shape()[1];
    if class_probs.shape()[0] != n || labels.len() != n {
        return Err(Error::shape("g_loss_head_grads", &[n], &[labels.len()]));
    }
    let mut g_source = vec![0.0; n];
    let mut g_class = vec![0.0; n * c];
    for i in 0..n {
        let p = source_probs[i];
        let in_range = (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p);
        let label = labels[i];
        if label >= c {
            return Err(Error::InvalidInput(format!("label {label} out of range 0..{c}")));
        }
        let pc = class_probs.data()[i * c + label];
        let pc_in_range = (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&pc);
        match sign {
            GeneratorSign::AcganStandard => {
                if in_range {
                    g_source[i] = -1.0 / (n as f64 * p);
                }
                if pc_in_range {
                    g_class[i * c + label] = -1.0 / (n as f64 * pc);
                }
            }
            GeneratorSign::PaperLiteral => {
                if in_range {
                    g_source[i] = 1.0 / (n as f64 * (1.0 - p));
                }
                if pc_in_range {
                    g_class[i * c + label] = 1.0 / (n as f64 * pc);
                }
            }
        }
    }
    Ok((
        Tensor::new(vec![n, 1], g_source)?,
        Tensor::new(vec![n, c], g_class)?,
    ))
}

/// Per-step loss record: LS, LC from the last discriminator step of the
/// round plus the generator objective value (the quantity it minimizes).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub ls: f64,
    pub lc: f64,
    pub g_objective: f64,
}

/// Everything a training run owns.
pub struct TrainState {
    pub disc: Discriminator,
    pub gen: Generator,
    pub d_opt: Adam,
    pub g_opt: Adam,
    pub step: u64,
    pub history: Vec<StepRecord>,
    pub reference_magnitude: f64,
    pub transform: TransformConfig,
    rng: ChaCha8Rng,
    seed: u64,
}

impl TrainState {
    pub fn new(
        arch: &ArchConfig,
        cfg: &TrainConfig,
        transform: &TransformConfig,
        reference_magnitude: f64,
    ) -> Result<TrainState> {
        cfg.validate()?;
        arch.validate()?;
        let (disc, gen) = build_pair(arch, cfg.seed)?;
        Ok(TrainState {
            disc,
            gen,
            d_opt: Adam::new(AdamConfig::new(cfg.lr_d)),
            g_opt: Adam::new(AdamConfig::new(cfg.lr_g)),
            step: 0,
            history: Vec::new(),
            reference_magnitude,
            transform: transform.clone(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x74726169), // distinct stream from init
            seed: cfg.seed,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn sample_noise(&mut self, n: usize, kind: NoiseKind) -> Tensor {
        let d = self.gen.arch.noise_dim;
        let data: Vec<f64> = (0..n * d)
            .map(|_| match kind {
                NoiseKind::Normal => StandardNormal.sample(&mut self.rng),
                NoiseKind::Uniform => self.rng.gen_range(-1.0..1.0),
            })
            .collect();
        Tensor::new(vec![n, d], data).expect("noise tensor")
    }

    fn sample_labels(&mut self, n: usize) -> Vec<usize> {
        let c = self.gen.arch.num_classes;
        (0..n).map(|_| self.rng.gen_range(0..c)).collect()
    }

    /// Head label indices for a real batch under the architecture's class
    /// mode.
    pub fn head_labels(&self, batch: &Batch) -> Result<Vec<usize>> {
        batch
            .dastgah
            .iter()
            .zip(&batch.instrument)
            .map(|(&d, &i)| embedding_index(&self.disc.arch, d, Some(i)))
            .collect()
    }

    /// One discriminator update on a real batch plus freshly generated
    /// fakes. Returns (LS, LC). Generator tensors are untouched: the
    /// fakes come from a frozen batch-statistics forward, the same
    /// normalization the generator is optimized under.
    pub fn d_step(&mut self, batch: &Batch, cfg: &TrainConfig) -> Result<(f64, f64)> {
        let n = batch.len();
        let labels_fake = self.sample_labels(n);
        let noise = self.sample_noise(n, cfg.noise_kind);
        let fake = {
            let mut rng = self.rng.clone();
            let mut ctx = Ctx::train_frozen(&mut rng);
            ctx.deterministic = true;
            self.gen.forward(&noise, &labels_fake, &mut ctx)?
        };
        self.d_step_with_fakes(batch, &fake, &labels_fake)
    }

    /// Discriminator update against an explicit fake batch (the fakes are
    /// treated as constants).
    pub fn d_step_with_fakes(
        &mut self,
        batch: &Batch,
        fake_x: &Tensor,
        labels_fake: &[usize],
    ) -> Result<(f64, f64)> {
        let n = batch.len();
        if n < 2 {
            return Err(Error::InvalidInput("discriminator batch must have at least 2 examples".to_string()));
        }
        let labels_real = self.head_labels(batch)?;
        if fake_x.shape()[0] != labels_fake.len() {
            return Err(Error::shape(
                "fake labels",
                &[fake_x.shape()[0]],
                &[labels_fake.len()],
            ));
        }
        let m = labels_fake.len();

        // combined batch [real; fake]
        let mut data = batch.x.data().to_vec();
        data.extend_from_slice(fake_x.data());
        let mut shape = batch.x.shape().to_vec();
        shape[0] = n + m;
        let combined = Tensor::new(shape, data)?;

        self.disc.zero_grads();
        let out = {
            let mut ctx = Ctx::train(&mut self.rng);
            self.disc.forward(&combined, &mut ctx)?
        };
        let probs = out.source_probs();
        let ls = loss_source(&probs[..n], &probs[n..]);
        let real_rows = slice_rows(&out.class_probs, 0, n)?;
        let fake_rows = slice_rows(&out.class_probs, n, n + m)?;
        let lc = loss_class(&real_rows, &labels_real, &fake_rows, labels_fake)?;
        if !ls.is_finite() || !lc.is_finite() {
            return Err(self.numeric_failure(format!("non-finite loss: LS={ls} LC={lc}")));
        }

        let (g_source, g_class) =
            d_loss_head_grads(&probs, &out.class_probs, &labels_real, labels_fake)?;
        self.disc.backward(&g_source, &g_class)?;
        self.d_opt
            .step(self.disc.trainable_tensors_mut().into_iter())
            .map_err(|e| match e {
                Error::Numeric(msg) => self.numeric_failure(msg),
                other => other,
            })?;
        Ok((ls, lc))
    }

    /// One generator update against the frozen discriminator. Returns the
    /// minimized objective value. Discriminator tensors are untouched.
    pub fn g_step(&mut self, cfg: &TrainConfig) -> Result<f64> {
        let n = cfg.batch_size;
        let labels = self.sample_labels(n);
        let noise = self.sample_noise(n, cfg.noise_kind);
        self.gen.zero_grads();
        self.disc.zero_grads();
        let fake = {
            let mut ctx = Ctx::train(&mut self.rng);
            self.gen.forward(&noise, &labels, &mut ctx)?
        };
        // frozen discriminator, dropout disabled: the generator learns
        // against the expectation network, not one dropout mask
        let out = {
            let mut ctx = Ctx::train_frozen(&mut self.rng);
            ctx.deterministic = true;
            self.disc.forward(&fake, &mut ctx)?
        };
        let probs = out.source_probs();
        let objective = g_objective_value(&probs, &out.class_probs, &labels, cfg.generator_sign)?;
        if !objective.is_finite() {
            return Err(self.numeric_failure(format!("non-finite generator objective {objective}")));
        }
        let (g_source, g_class) =
            g_loss_head_grads(&probs, &out.class_probs, &labels, cfg.generator_sign)?;
        let gx = self.disc.backward(&g_source, &g_class)?;
        self.gen.backward(&gx)?;
        self.g_opt
            .step(self.gen.trainable_tensors_mut().into_iter())
            .map_err(|e| match e {
                Error::Numeric(msg) => self.numeric_failure(msg),
                other => other,
            })?;
        Ok(objective)
    }

    fn numeric_failure(&self, msg: String) -> Error {
        Error::Numeric(format!(
            "{msg}\nlayer statistics:\n{}{}",
            tensor_stats("d", self.disc.named_tensors()),
            tensor_stats("g", self.gen.named_tensors()),
        ))
    }

    /// Serialize the whole state (both networks, optimizer moments,
    /// counters, transform, seed) into a checkpoint container.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut tensors = Vec::new();
        for (name, t) in self.disc.named_tensors() {
            tensors.push(NamedTensor::new(name, t.shape().to_vec(), t.data().to_vec()));
        }
        for (name, t) in self.gen.named_tensors() {
            tensors.push(NamedTensor::new(name, t.shape().to_vec(), t.data().to_vec()));
        }
        for (prefix, opt) in [("opt_d", &self.d_opt), ("opt_g", &self.g_opt)] {
            for (name, (m, v)) in opt.moments() {
                tensors.push(NamedTensor::new(
                    format!("{prefix}.{name}.m"),
                    vec![m.len()],
                    m.clone(),
                ));
                tensors.push(NamedTensor::new(
                    format!("{prefix}.{name}.v"),
                    vec![v.len()],
                    v.clone(),
                ));
            }
        }
        tensors.push(encode_arch(&self.disc.arch));
        tensors.push(encode_transform(&self.transform));
        tensors.push(NamedTensor::new(
            "meta.state",
            vec![3],
            vec![
                self.step as f64,
                self.d_opt.step_count() as f64,
                self.g_opt.step_count() as f64,
            ],
        ));
        tensors.push(NamedTensor::new(
            "meta.seed",
            vec![4],
            (0..4).map(|i| ((self.seed >> (16 * i)) & 0xffff) as f64).collect(),
        ));
        tensors.push(NamedTensor::new(
            "meta.opt",
            vec![2],
            vec![self.d_opt.config().lr, self.g_opt.config().lr],
        ));
        tensors.push(NamedTensor::new(
            "meta.reference_magnitude",
            vec![1],
            vec![self.reference_magnitude],
        ));
        container::write_checkpoint(path, &tensors)
    }
}

fn slice_rows(t: &Tensor, from: usize, to: usize) -> Result<Tensor> {
    let c = t.shape()[1];
    Tensor::new(vec![to - from, c], t.data()[from * c..to * c].to_vec())
}

fn tensor_stats(tag: &str, tensors: Vec<(String, &Tensor)>) -> String {
    let mut out = String::new();
    for (name, t) in tensors {
        let (mut min, mut max, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for &v in t.data() {
            min = min.min(v);
            max = max.max(v);
            sum += v;
        }
        out.push_str(&format!(
            "  [{tag}] {name}: min {min:.3e} max {max:.3e} mean {:.3e}\n",
            sum / t.numel() as f64
        ));
    }
    out
}

// meta.arch layout: [input_size, num_classes, joint, noise_dim, gru1,
// gru2, trunk_units, bn_momentum*1e6, n_disc, disc_channels...,
// disc_dropout*1e6..., n_gen, gen_channels...]
fn encode_arch(arch: &ArchConfig) -> NamedTensor {
    let mut v = vec![
        arch.input_size as f64,
        arch.num_classes as f64,
        arch.joint_instrument_classes as u8 as f64,
        arch.noise_dim as f64,
        arch.gru_hidden.0 as f64,
        arch.gru_hidden.1 as f64,
        arch.trunk_units as f64,
        (arch.bn_momentum * 1e6).round(),
        arch.disc_channels.len() as f64,
    ];
    v.extend(arch.disc_channels.iter().map(|&c| c as f64));
    v.extend(arch.disc_dropout.iter().map(|&r| (r * 1e6).round()));
    v.push(arch.gen_channels.len() as f64);
    v.extend(arch.gen_channels.iter().map(|&c| c as f64));
    let len = v.len();
    NamedTensor::new("meta.arch", vec![len], v)
}

fn decode_arch(t: &NamedTensor) -> Result<ArchConfig> {
    let v = &t.values;
    let need = |i: usize| -> Result<f64> {
        v.get(i).copied().ok_or_else(|| {
            Error::InvalidInput("checkpoint meta.arch tensor is truncated".to_string())
        })
    };
    let n_disc = need(8)? as usize;
    let mut pos = 9;
    let disc_channels: Vec<usize> = (0..n_disc)
        .map(|i| need(pos + i).map(|x| x as usize))
        .collect::<Result<_>>()?;
    pos += n_disc;
    let disc_dropout: Vec<f64> = (0..n_disc)
        .map(|i| need(pos + i).map(|x| x / 1e6))
        .collect::<Result<_>>()?;
    pos += n_disc;
    let n_gen = need(pos)? as usize;
    pos += 1;
    let gen_channels: Vec<usize> = (0..n_gen)
        .map(|i| need(pos + i).map(|x| x as usize))
        .collect::<Result<_>>()?;
    let arch = ArchConfig {
        input_size: need(0)? as usize,
        num_classes: need(1)? as usize,
        joint_instrument_classes: need(2)? != 0.0,
        noise_dim: need(3)? as usize,
        gru_hidden: (need(4)? as usize, need(5)? as usize),
        trunk_units: need(6)? as usize,
        bn_momentum: need(7)? / 1e6,
        disc_channels,
        disc_dropout,
        gen_channels,
    };
    arch.validate()?;
    Ok(arch)
}

// meta.transform layout: [fft, hop, window(0=hann,1=rect), center,
// floor_db*1e3, db_normalize]
fn encode_transform(tf: &TransformConfig) -> NamedTensor {
    NamedTensor::new(
        "meta.transform",
        vec![6],
        vec![
            tf.stft.fft_size as f64,
            tf.stft.hop as f64,
            match tf.stft.window {
                WindowKind::Hann => 0.0,
                WindowKind::Rectangular => 1.0,
            },
            tf.stft.center_pad as u8 as f64,
            (tf.floor_db * 1e3).round(),
            tf.db_normalize as u8 as f64,
        ],
    )
}

fn decode_transform(t: &NamedTensor) -> Result<TransformConfig> {
    if t.values.len() != 6 {
        return Err(Error::InvalidInput(
            "checkpoint meta.transform tensor has the wrong size".to_string(),
        ));
    }
    Ok(TransformConfig {
        stft: StftConfig {
            fft_size: t.values[0] as usize,
            hop: t.values[1] as usize,
            window: if t.values[2] == 0.0 {
                WindowKind::Hann
            } else {
                WindowKind::Rectangular
            },
            center_pad: t.values[3] != 0.0,
        },
        floor_db: t.values[4] / 1e3,
        db_normalize: t.values[5] != 0.0,
        crop: crate::data::CropPolicy::Head,
        allow_pad: false,
    })
}

/// A checkpoint loaded back into memory.
pub struct LoadedCheckpoint {
    pub disc: Discriminator,
    pub gen: Generator,
    pub arch: ArchConfig,
    pub transform: TransformConfig,
    pub step: u64,
    pub seed: u64,
    pub reference_magnitude: f64,
    pub d_opt: Adam,
    pub g_opt: Adam,
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let tensors = container::read_checkpoint(path)?;
    let find = |name: &str| -> Result<&NamedTensor> {
        tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::format(path, format!("checkpoint is missing tensor {name}")))
    };
    let arch = decode_arch(find("meta.arch")?)?;
    let transform = decode_transform(find("meta.transform")?)?;
    let state = find("meta.state")?;
    if state.values.len() != 3 {
        return Err(Error::format(path, "bad meta.state tensor"));
    }
    let seed_chunks = find("meta.seed")?;
    let seed = seed_chunks
        .values
        .iter()
        .enumerate()
        .fold(0u64, |acc, (i, &v)| acc | ((v as u64 & 0xffff) << (16 * i)));
    let opt_meta = find("meta.opt")?;
    let reference_magnitude = find("meta.reference_magnitude")?.values[0];

    let (mut disc, mut gen) = build_pair(&arch, seed)?;
    let mut d_opt = Adam::new(AdamConfig::new(opt_meta.values[0]));
    let mut g_opt = Adam::new(AdamConfig::new(opt_meta.values.get(1).copied().unwrap_or(2e-4)));
    for t in &tensors {
        if t.name.starts_with("d.") {
            disc.set_tensor(&t.name, &t.dims, &t.values)?;
        } else if t.name.starts_with("g.") {
            gen.set_tensor(&t.name, &t.dims, &t.values)?;
        } else if let Some(rest) = t.name.strip_prefix("opt_d.") {
            restore_moment(&mut d_opt, rest, &t.values);
        } else if let Some(rest) = t.name.strip_prefix("opt_g.") {
            restore_moment(&mut g_opt, rest, &t.values);
        }
    }
    d_opt.set_step_count(state.values[1] as u64);
    g_opt.set_step_count(state.values[2] as u64);
    Ok(LoadedCheckpoint {
        disc,
        gen,
        arch,
        transform,
        step: state.values[0] as u64,
        seed,
        reference_magnitude,
        d_opt,
        g_opt,
    })
}

fn restore_moment(opt: &mut Adam, rest: &str, values: &[f64]) {
    if let Some(name) = rest.strip_suffix(".m") {
        // paired .v arrives separately; insert_moments is called twice
        let existing_v = vec![0.0; values.len()];
        let (_, v) = opt
            .moments()
            .find(|(n, _)| n.as_str() == name)
            .map(|(n, mv)| (n.clone(), mv.clone()))
            .unwrap_or((name.to_string(), (values.to_vec(), existing_v)));
        opt.insert_moments(name.to_string(), values.to_vec(), v.1);
    } else if let Some(name) = rest.strip_suffix(".v") {
        let existing_m = vec![0.0; values.len()];
        let (_, m) = opt
            .moments()
            .find(|(n, _)| n.as_str() == name)
            .map(|(n, mv)| (n.clone(), mv.clone()))
            .unwrap_or((name.to_string(), (existing_m, values.to_vec())));
        opt.insert_moments(name.to_string(), m.0, values.to_vec());
    }
}

/// Full alternating training loop. When `out_dir` is given, a loss CSV
/// (step, LS, LC, g_objective) and periodic checkpoints are written there.
pub fn train(
    cfg: &TrainConfig,
    arch: &ArchConfig,
    transform: &TransformConfig,
    examples: &[TrainingExample],
    reference_magnitude: f64,
    out_dir: Option<&Path>,
) -> Result<TrainState> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::InvalidInput("training set is empty".to_string()));
    }
    let mut state = TrainState::new(arch, cfg, transform, reference_magnitude)?;
    let mut iter = BatchIter::new(examples, cfg.batch_size, cfg.seed ^ 0x62617463)?;

    let mut csv: Option<fs::File> = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("losses.csv");
            let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            writeln!(f, "step,ls,lc,g_objective").map_err(|e| Error::io(&path, e))?;
            Some(f)
        }
        None => None,
    };

    for step in 1..=cfg.steps as u64 {
        let mut last = (0.0, 0.0);
        for _ in 0..cfg.d_steps_per_g {
            let batch = iter.next().expect("endless batch stream")?;
            last = state.d_step(&batch, cfg)?;
        }
        let g_objective = state.g_step(cfg)?;
        state.step = step;
        let record = StepRecord {
            step,
            ls: last.0,
            lc: last.1,
            g_objective,
        };
        state.history.push(record);
        if let Some(f) = csv.as_mut() {
            writeln!(f, "{},{},{},{}", record.step, record.ls, record.lc, record.g_objective)
                .map_err(|e| Error::Numeric(format!("loss csv write failed: {e}")))?;
        }
        if let Some(dir) = out_dir {
            if step % cfg.checkpoint_every as u64 == 0 {
                state.save_checkpoint(&dir.join(format!("ckpt_{step:06}.almc")))?;
            }
        }
    }
    if let Some(dir) = out_dir {
        state.save_checkpoint(&dir.join("ckpt_final.almc"))?;
    }
    Ok(state)
}

/// Train the discriminator architecture as a plain classifier (class head
/// only) on real data. Used as the independent judge for generated
/// samples.
pub fn train_classifier(
    arch: &ArchConfig,
    examples: &[TrainingExample],
    steps: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
) -> Result<Discriminator> {
    if examples.is_empty() {
        return Err(Error::InvalidInput("classifier training set is empty".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut disc = crate::models::build_discriminator(arch, &mut rng)?;
    let mut opt = Adam::new(AdamConfig::new(lr));
    let mut iter = BatchIter::new(examples, batch_size, seed ^ 0x636c7366)?;
    for _ in 0..steps {
        let batch = iter.next().expect("endless batch stream")?;
        let labels: Vec<usize> = batch
            .dastgah
            .iter()
            .zip(&batch.instrument)
            .map(|(&d, &i)| embedding_index(&disc.arch, d, Some(i)))
            .collect::<Result<_>>()?;
        disc.zero_grads();
        let out = {
            let mut ctx = Ctx::train(&mut rng);
            disc.forward(&batch.x, &mut ctx)?
        };
        let n = batch.len();
        let c = out.class_probs.shape()[1];
        let mut g_class = vec![0.0; n * c];
        for (i, &label) in labels.iter().enumerate() {
            let pc = out.class_probs.data()[i * c + label];
            if pc >= PROB_CLAMP {
                g_class[i * c + label] = -1.0 / (n as f64 * pc.min(1.0 - PROB_CLAMP));
            }
        }
        let g_source = Tensor::zeros(&[n, 1]);
        disc.backward(&g_source, &Tensor::new(vec![n, c], g_class)?)?;
        opt.step(disc.trainable_tensors_mut().into_iter())?;
    }
    Ok(disc)
}

/// Fraction of examples whose classifier argmax matches their label.
pub fn classifier_accuracy(
    disc: &mut Discriminator,
    examples: &[TrainingExample],
    idxs: &[usize],
) -> Result<f64> {
    if idxs.is_empty() {
        return Err(Error::InvalidInput("empty evaluation set".to_string()));
    }
    let mut correct = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for &i in idxs {
        let ex = &examples[i];
        let x = crate::data::example_tensor(&ex.spec)?;
        let x = x.reshaped(&[1, ex.spec.rows(), ex.spec.cols(), 1])?;
        let out = {
            let mut ctx = Ctx::infer(&mut rng);
            disc.forward(&x, &mut ctx)?
        };
        let label = embedding_index(&disc.arch, ex.class_index, Some(ex.instrument_index))?;
        if out.argmax_class(0) == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / idxs.len() as f64)
}
