//! The discriminator and generator architectures.
//!
//! The default discriminator is five conv/dropout/batchnorm/maxpool
//! blocks, a reshape of the 8x8x64 feature map into a 64-step sequence,
//! two stacked GRUs, a 5-unit trunk layer and two heads: a softmax
//! classifier and a 1-unit sigmoid real/fake output. The generator embeds
//! the class label multiplicatively into a 256-dim noise vector, projects
//! it to a 16x16 map and upsamples through four conv stages to 256x256x1
//! with a tanh output.
//!
//! Reduced and miniature variants shrink the spatial size and channel
//! counts for fast experiments; the code path is identical.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{
    Activation, ActivationKind, BatchNorm, Conv2d, Ctx, Dense, Dropout, Gru, Layer, MaxPool2d,
    Reshape, Sequential, Tensor, UpsampleNearest,
};
use crate::{Error, Result};

/// How class labels map to classifier outputs: seven Dastgah classes, or
/// fourteen joint (Dastgah x instrument) classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassMode {
    Seven,
    Fourteen,
}

/// Per-layer parameter counts of the default discriminator, in layer
/// order, counting only parameterized rows (the appended 1-unit source
/// head adds another 6).
pub const DEFAULT_DISC_LAYER_COUNTS: [usize; 14] = [
    160, 64, 4640, 128, 9248, 128, 9248, 128, 18496, 256, 17400, 45600, 505, 42,
];

/// Sum of [`DEFAULT_DISC_LAYER_COUNTS`].
pub const DEFAULT_DISC_TOTAL: usize = 106043;

/// Parameter count of the default generator's fully connected layer.
pub const DEFAULT_GENERATOR_FC_COUNT: usize = 65792;

/// Size parameterization shared by both networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Spectrogram side length (input is input_size x input_size x 1).
    pub input_size: usize,
    /// Output channels of each discriminator conv block.
    pub disc_channels: Vec<usize>,
    /// Dropout rate after each conv block.
    pub disc_dropout: Vec<f64>,
    /// Hidden sizes of the two stacked GRUs.
    pub gru_hidden: (usize, usize),
    /// Units of the shared trunk layer feeding both heads.
    pub trunk_units: usize,
    /// Classifier output count.
    pub num_classes: usize,
    /// When true, class indices are Dastgah x instrument pairs.
    pub joint_instrument_classes: bool,
    /// Output channels of each generator upsample/conv stage.
    pub gen_channels: Vec<usize>,
    /// Generator noise vector length.
    pub noise_dim: usize,
    /// Batch normalization moving-average momentum.
    pub bn_momentum: f64,
}

impl ArchConfig {
    /// The full-size architecture on 256x256 spectrograms.
    pub fn full(mode: ClassMode) -> ArchConfig {
        ArchConfig {
            input_size: 256,
            disc_channels: vec![16, 32, 32, 32, 64],
            disc_dropout: vec![0.1, 0.2, 0.3, 0.3, 0.4],
            gru_hidden: (50, 100),
            trunk_units: 5,
            num_classes: match mode {
                ClassMode::Seven => 7,
                ClassMode::Fourteen => 14,
            },
            joint_instrument_classes: mode == ClassMode::Fourteen,
            gen_channels: vec![256, 128, 64, 32],
            noise_dim: 256,
            bn_momentum: 0.8,
        }
    }

    /// Proportionally shrunk variant on 64x64 spectrograms for fast
    /// experiments and CI.
    pub fn reduced(num_classes: usize) -> ArchConfig {
        ArchConfig {
            input_size: 64,
            disc_channels: vec![6, 8, 8, 8, 12],
            disc_dropout: vec![0.1, 0.2, 0.3, 0.3, 0.4],
            gru_hidden: (12, 24),
            trunk_units: 5,
            num_classes,
            joint_instrument_classes: false,
            gen_channels: vec![16, 12, 8, 6],
            noise_dim: 256,
            bn_momentum: 0.8,
        }
    }

    /// Tiny 8x8 variant used by gradient-verification suites.
    pub fn miniature(num_classes: usize) -> ArchConfig {
        ArchConfig {
            input_size: 8,
            disc_channels: vec![3, 4],
            disc_dropout: vec![0.1, 0.2],
            gru_hidden: (4, 6),
            trunk_units: 5,
            num_classes,
            joint_instrument_classes: false,
            gen_channels: vec![4, 3],
            noise_dim: 16,
            bn_momentum: 0.8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.disc_channels.is_empty() || self.disc_channels.len() != self.disc_dropout.len() {
            return Err(Error::InvalidConfig(
                "disc_channels and disc_dropout must be non-empty and equal length".to_string(),
            ));
        }
        let d_factor = 1usize << self.disc_channels.len();
        if self.input_size == 0 || self.input_size % d_factor != 0 {
            return Err(Error::InvalidConfig(format!(
                "input_size {} must be divisible by 2^{} for the pooling stack",
                self.input_size,
                self.disc_channels.len()
            )));
        }
        let g_factor = 1usize << self.gen_channels.len();
        if self.gen_channels.is_empty() || self.input_size % g_factor != 0 {
            return Err(Error::InvalidConfig(format!(
                "input_size {} must be divisible by 2^{} for the upsampling stack",
                self.input_size,
                self.gen_channels.len()
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig("need at least 2 classes".to_string()));
        }
        if self.noise_dim == 0 || self.trunk_units == 0 {
            return Err(Error::InvalidConfig("zero-sized layer requested".to_string()));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) {
            return Err(Error::InvalidConfig(format!(
                "bn_momentum must be in [0, 1), got {}",
                self.bn_momentum
            )));
        }
        Ok(())
    }

    /// Spatial side of the discriminator feature map after all pools.
    pub fn disc_final_side(&self) -> usize {
        self.input_size >> self.disc_channels.len()
    }

    /// Spatial side the generator starts from.
    pub fn gen_start_side(&self) -> usize {
        self.input_size >> self.gen_channels.len()
    }
}

/// Batched discriminator output: per-sample source probability and a
/// class-probability row on the simplex.
#[derive(Debug, Clone)]
pub struct DiscriminatorOutput {
    /// Shape [N, 1].
    pub source: Tensor,
    /// Shape [N, num_classes].
    pub class_probs: Tensor,
}

impl DiscriminatorOutput {
    pub fn source_probs(&self) -> Vec<f64> {
        self.source.data().to_vec()
    }

    pub fn class_row(&self, i: usize) -> &[f64] {
        let c = self.class_probs.shape()[1];
        &self.class_probs.data()[i * c..(i + 1) * c]
    }

    pub fn argmax_class(&self, i: usize) -> usize {
        let row = self.class_row(i);
        let mut best = 0;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        best
    }
}

/// Conv/GRU discriminator with a classifier head and a source head.
pub struct Discriminator {
    pub arch: ArchConfig,
    trunk: Sequential,
    class_head: Sequential,
    source_head: Sequential,
}

/// Build the discriminator for an architecture; weights come from `rng`.
pub fn build_discriminator(arch: &ArchConfig, rng: &mut ChaCha8Rng) -> Result<Discriminator> {
    arch.validate()?;
    let mut layers: Vec<Box<dyn Layer>> = Vec::new();
    let mut cin = 1usize;
    for (i, (&ch, &rate)) in arch.disc_channels.iter().zip(&arch.disc_dropout).enumerate() {
        let idx = i + 1;
        layers.push(Box::new(Conv2d::new(&format!("conv{idx}"), cin, ch, rng)));
        layers.push(Box::new(Activation::new(
            &format!("act{idx}"),
            ActivationKind::LeakyRelu(0.2),
        )));
        layers.push(Box::new(Dropout::new(&format!("drop{idx}"), rate)?));
        layers.push(Box::new(BatchNorm::new(&format!("bn{idx}"), ch, arch.bn_momentum)));
        layers.push(Box::new(MaxPool2d::new(&format!("pool{idx}"))));
        cin = ch;
    }
    let side = arch.disc_final_side();
    layers.push(Box::new(Reshape::new("reshape", &[side * side, cin])));
    layers.push(Box::new(Gru::new("gru1", cin, arch.gru_hidden.0, true, rng)));
    layers.push(Box::new(Gru::new(
        "gru2",
        arch.gru_hidden.0,
        arch.gru_hidden.1,
        false,
        rng,
    )));
    layers.push(Box::new(Dense::new("fc", arch.gru_hidden.1, arch.trunk_units, rng)));
    layers.push(Box::new(Activation::new("act_fc", ActivationKind::LeakyRelu(0.2))));
    let trunk = Sequential::new(layers);

    let class_head = Sequential::new(vec![
        Box::new(Dense::new("classifier", arch.trunk_units, arch.num_classes, rng)),
        Box::new(Activation::new("softmax", ActivationKind::Softmax)),
    ]);
    let source_head = Sequential::new(vec![
        Box::new(Dense::new("source", arch.trunk_units, 1, rng)),
        Box::new(Activation::new("sigmoid", ActivationKind::Sigmoid)),
    ]);

    Ok(Discriminator {
        arch: arch.clone(),
        trunk,
        class_head,
        source_head,
    })
}

impl Discriminator {
    pub fn forward(&mut self, x: &Tensor, ctx: &mut Ctx) -> Result<DiscriminatorOutput> {
        let expected = [x.shape()[0], self.arch.input_size, self.arch.input_size, 1];
        if x.shape() != expected {
            return Err(Error::shape("discriminator input", &expected, x.shape()));
        }
        let t = self.trunk.forward(x, ctx)?;
        let class_probs = self.class_head.forward(&t, ctx)?;
        let source = self.source_head.forward(&t, ctx)?;
        Ok(DiscriminatorOutput { source, class_probs })
    }

    /// Backward from gradients at both heads; returns the gradient with
    /// respect to the input spectrogram batch.
    pub fn backward(&mut self, grad_source: &Tensor, grad_class: &Tensor) -> Result<Tensor> {
        let g1 = self.class_head.backward(grad_class)?;
        let g2 = self.source_head.backward(grad_source)?;
        let mut summed = g1.data().to_vec();
        summed.iter_mut().zip(g2.data()).for_each(|(a, b)| *a += b);
        let g = Tensor::new(g1.shape().to_vec(), summed)?;
        self.trunk.backward(&g)
    }

    pub fn zero_grads(&mut self) {
        self.trunk.zero_grads();
        self.class_head.zero_grads();
        self.source_head.zero_grads();
    }

    fn all_layers(&self) -> impl Iterator<Item = &Box<dyn Layer>> {
        self.trunk
            .layers()
            .iter()
            .chain(self.class_head.layers())
            .chain(self.source_head.layers())
    }

    fn all_layers_mut(&mut self) -> impl Iterator<Item = &mut Box<dyn Layer>> {
        self.trunk
            .layers_mut()
            .iter_mut()
            .chain(self.class_head.layers_mut())
            .chain(self.source_head.layers_mut())
    }

    /// Every tensor (trainable and statistics) as ("d.layer.role", tensor).
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for layer in self.all_layers() {
            for e in layer.params().iter() {
                out.push((format!("d.{}.{}", layer.name(), e.role), &e.tensor));
            }
        }
        out
    }

    /// Trainable tensors only, for the optimizer.
    pub fn trainable_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for layer in self.all_layers_mut() {
            let name = layer.name().to_string();
            for e in layer.params_mut().iter_mut() {
                if e.tensor.requires_grad() {
                    out.push((format!("d.{}.{}", name, e.role), &mut e.tensor));
                }
            }
        }
        out
    }

    pub fn set_tensor(&mut self, path: &str, dims: &[usize], values: &[f64]) -> Result<()> {
        for layer in self.all_layers_mut() {
            let name = layer.name().to_string();
            for e in layer.params_mut().iter_mut() {
                if format!("d.{}.{}", name, e.role) == path {
                    if e.tensor.shape() != dims || e.tensor.numel() != values.len() {
                        return Err(Error::shape(path, e.tensor.shape(), dims));
                    }
                    e.tensor.data_mut().copy_from_slice(values);
                    return Ok(());
                }
            }
        }
        Err(Error::InvalidInput(format!("no tensor named {path}")))
    }

    /// Byte-level fingerprint of every tensor, for isolation checks.
    pub fn fingerprint(&self) -> Vec<u8> {
        fingerprint_tensors(self.named_tensors())
    }

    pub fn param_report(&self) -> ParamReport {
        let mut rows = Vec::new();
        let mut shape = vec![1usize, self.arch.input_size, self.arch.input_size, 1];
        for layer in self.trunk.layers() {
            shape = layer.out_shape(&shape).expect("trunk shape trace");
            rows.push(ReportRow::from_layer(layer.as_ref(), &shape));
        }
        let trunk_shape = shape.clone();
        for layer in self.class_head.layers() {
            shape = layer.out_shape(&shape).expect("class head shape trace");
            rows.push(ReportRow::from_layer(layer.as_ref(), &shape));
        }
        shape = trunk_shape;
        for layer in self.source_head.layers() {
            shape = layer.out_shape(&shape).expect("source head shape trace");
            rows.push(ReportRow::from_layer(layer.as_ref(), &shape));
        }
        ParamReport { rows }
    }
}

/// Upsampling generator conditioned on a class embedding.
pub struct Generator {
    pub arch: ArchConfig,
    /// [num_classes, noise_dim] multiplicative label embedding.
    embedding: Tensor,
    body: Sequential,
    cache: Option<(Tensor, Vec<usize>)>,
}

/// Build the generator for an architecture; weights come from `rng`.
pub fn build_generator(arch: &ArchConfig, rng: &mut ChaCha8Rng) -> Result<Generator> {
    arch.validate()?;
    let s0 = arch.gen_start_side();
    let mut layers: Vec<Box<dyn Layer>> = Vec::new();
    layers.push(Box::new(Dense::new("fc", arch.noise_dim, s0 * s0, rng)));
    layers.push(Box::new(Reshape::new("reshape", &[s0, s0, 1])));
    layers.push(Box::new(BatchNorm::new("bn0", 1, arch.bn_momentum)));
    layers.push(Box::new(Activation::new("act0", ActivationKind::Relu)));
    let mut cin = 1usize;
    for (i, &ch) in arch.gen_channels.iter().enumerate() {
        let idx = i + 1;
        layers.push(Box::new(UpsampleNearest::new(&format!("up{idx}"))));
        layers.push(Box::new(Conv2d::new(&format!("conv{idx}"), cin, ch, rng)));
        layers.push(Box::new(BatchNorm::new(&format!("bn{idx}"), ch, arch.bn_momentum)));
        layers.push(Box::new(Activation::new(&format!("act{idx}"), ActivationKind::Relu)));
        cin = ch;
    }
    layers.push(Box::new(Conv2d::new("conv_out", cin, 1, rng)));
    layers.push(Box::new(Activation::new("tanh_out", ActivationKind::Tanh)));

    // near-identity multiplicative embedding, distinct per class
    let normal = Normal::new(1.0, 0.2).expect("embedding init");
    let mut embedding = Tensor::from_fn(&[arch.num_classes, arch.noise_dim], |_| {
        normal.sample(rng)
    });
    embedding.enable_grad();

    Ok(Generator {
        arch: arch.clone(),
        embedding,
        body: Sequential::new(layers),
        cache: None,
    })
}

impl Generator {
    /// Multiplicative conditioning: noise row times the label's embedding.
    pub fn condition(&self, noise: &Tensor, labels: &[usize]) -> Result<Tensor> {
        let n = noise.shape()[0];
        let d = self.arch.noise_dim;
        if noise.shape() != [n, d] {
            return Err(Error::shape("generator noise", &[n, d], noise.shape()));
        }
        if labels.len() != n {
            return Err(Error::shape("generator labels", &[n], &[labels.len()]));
        }
        let emb = self.embedding.data();
        let mut out = vec![0.0; n * d];
        for (i, &label) in labels.iter().enumerate() {
            if label >= self.arch.num_classes {
                return Err(Error::InvalidInput(format!(
                    "class label {label} out of range 0..{}",
                    self.arch.num_classes
                )));
            }
            let erow = &emb[label * d..(label + 1) * d];
            let nrow = &noise.data()[i * d..(i + 1) * d];
            out[i * d..(i + 1) * d]
                .iter_mut()
                .zip(nrow.iter().zip(erow))
                .for_each(|(o, (nv, ev))| *o = nv * ev);
        }
        Tensor::new(vec![n, d], out)
    }

    pub fn forward(&mut self, noise: &Tensor, labels: &[usize], ctx: &mut Ctx) -> Result<Tensor> {
        let conditioned = self.condition(noise, labels)?;
        self.cache = Some((noise.clone(), labels.to_vec()));
        self.body.forward(&conditioned, ctx)
    }

    /// Accumulates gradients for the body and the embedding.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<()> {
        let g_cond = self.body.backward(grad_out)?;
        let (noise, labels) = self
            .cache
            .take()
            .ok_or_else(|| Error::InvalidInput("generator backward before forward".to_string()))?;
        let d = self.arch.noise_dim;
        let ge = self
            .embedding
            .grad_mut()
            .expect("embedding gradient buffer");
        for (i, &label) in labels.iter().enumerate() {
            let grow = &g_cond.data()[i * d..(i + 1) * d];
            let nrow = &noise.data()[i * d..(i + 1) * d];
            let erow = &mut ge[label * d..(label + 1) * d];
            erow.iter_mut()
                .zip(grow.iter().zip(nrow))
                .for_each(|(e, (g, nv))| *e += g * nv);
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.embedding.zero_grad();
        self.body.zero_grads();
    }

    pub fn embedding(&self) -> &Tensor {
        &self.embedding
    }

    pub fn embedding_mut(&mut self) -> &mut Tensor {
        &mut self.embedding
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("g.embed.table".to_string(), &self.embedding)];
        for layer in self.body.layers() {
            for e in layer.params().iter() {
                out.push((format!("g.{}.{}", layer.name(), e.role), &e.tensor));
            }
        }
        out
    }

    pub fn trainable_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> =
            vec![("g.embed.table".to_string(), &mut self.embedding)];
        for layer in self.body.layers_mut() {
            let name = layer.name().to_string();
            for e in layer.params_mut().iter_mut() {
                if e.tensor.requires_grad() {
                    out.push((format!("g.{}.{}", name, e.role), &mut e.tensor));
                }
            }
        }
        out
    }

    pub fn set_tensor(&mut self, path: &str, dims: &[usize], values: &[f64]) -> Result<()> {
        if path == "g.embed.table" {
            if self.embedding.shape() != dims {
                return Err(Error::shape(path, self.embedding.shape(), dims));
            }
            self.embedding.data_mut().copy_from_slice(values);
            return Ok(());
        }
        for layer in self.body.layers_mut() {
            let name = layer.name().to_string();
            for e in layer.params_mut().iter_mut() {
                if format!("g.{}.{}", name, e.role) == path {
                    if e.tensor.shape() != dims {
                        return Err(Error::shape(path, e.tensor.shape(), dims));
                    }
                    e.tensor.data_mut().copy_from_slice(values);
                    return Ok(());
                }
            }
        }
        Err(Error::InvalidInput(format!("no tensor named {path}")))
    }

    pub fn fingerprint(&self) -> Vec<u8> {
        fingerprint_tensors(self.named_tensors())
    }

    pub fn param_report(&self) -> ParamReport {
        let mut rows = vec![ReportRow {
            name: "embed".to_string(),
            describe: format!(
                "embedding, {} x {}",
                self.arch.num_classes, self.arch.noise_dim
            ),
            output_shape: vec![self.arch.noise_dim],
            count: self.embedding.numel(),
        }];
        let mut shape = vec![1usize, self.arch.noise_dim];
        for layer in self.body.layers() {
            shape = layer.out_shape(&shape).expect("generator shape trace");
            rows.push(ReportRow::from_layer(layer.as_ref(), &shape));
        }
        ParamReport { rows }
    }
}

fn fingerprint_tensors(tensors: Vec<(String, &Tensor)>) -> Vec<u8> {
    let mut out = Vec::new();
    for (name, t) in tensors {
        out.extend_from_slice(name.as_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// One row of a parameter report: layer name, description, per-sample
/// output shape and parameter count.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub name: String,
    pub describe: String,
    pub output_shape: Vec<usize>,
    pub count: usize,
}

impl ReportRow {
    fn from_layer(layer: &dyn Layer, batched_shape: &[usize]) -> ReportRow {
        ReportRow {
            name: layer.name().to_string(),
            describe: layer.describe(),
            output_shape: batched_shape[1..].to_vec(),
            count: layer.param_count(),
        }
    }

    /// Activation rows are implementation detail; the published layer
    /// tables fold activations into their preceding layer.
    pub fn is_activation(&self) -> bool {
        matches!(
            self.name.as_str(),
            s if s.starts_with("act") || s == "softmax" || s == "sigmoid" || s == "tanh_out"
        )
    }
}

/// Ordered parameter report for one network.
#[derive(Debug, Clone)]
pub struct ParamReport {
    pub rows: Vec<ReportRow>,
}

impl ParamReport {
    pub fn total(&self) -> usize {
        self.rows.iter().map(|r| r.count).sum()
    }

    /// Counts of parameterized rows, in order.
    pub fn nonzero_counts(&self) -> Vec<usize> {
        self.rows.iter().filter(|r| r.count > 0).map(|r| r.count).collect()
    }

    pub fn row(&self, name: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

/// One generation request as it arrives from the CLI.
#[derive(Debug, Clone)]
pub struct GeneratorInput {
    pub noise: Vec<f64>,
    pub class_label: usize,
    pub instrument_label: Option<usize>,
}

impl GeneratorInput {
    pub fn validate(&self, arch: &ArchConfig) -> Result<()> {
        if self.noise.len() != arch.noise_dim {
            return Err(Error::InvalidInput(format!(
                "noise length {} does not match the architecture's {}",
                self.noise.len(),
                arch.noise_dim
            )));
        }
        embedding_index(arch, self.class_label, self.instrument_label).map(|_| ())
    }
}

/// Map a (Dastgah, instrument) pair to an embedding/classifier index for
/// the architecture's class mode.
pub fn embedding_index(
    arch: &ArchConfig,
    class_label: usize,
    instrument_label: Option<usize>,
) -> Result<usize> {
    let index = if arch.joint_instrument_classes {
        let instrument = instrument_label.ok_or_else(|| {
            Error::InvalidInput(
                "this checkpoint conditions on instrument; an instrument label is required"
                    .to_string(),
            )
        })?;
        if instrument > 1 {
            return Err(Error::InvalidInput(format!(
                "instrument index {instrument} out of range 0..2"
            )));
        }
        class_label * 2 + instrument
    } else {
        class_label
    };
    if index >= arch.num_classes {
        return Err(Error::InvalidInput(format!(
            "class index {index} out of range 0..{}",
            arch.num_classes
        )));
    }
    Ok(index)
}

/// Deterministic seeded construction of both networks.
pub fn build_pair(arch: &ArchConfig, seed: u64) -> Result<(Discriminator, Generator)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let disc = build_discriminator(arch, &mut rng)?;
    let gen = build_generator(arch, &mut rng)?;
    Ok((disc, gen))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discriminator_layer_counts_match_reference() {
        let arch = ArchConfig::full(ClassMode::Seven);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let disc = build_discriminator(&arch, &mut rng).unwrap();
        let report = disc.param_report();
        let counts = report.nonzero_counts();
        assert_eq!(&counts[..14], &DEFAULT_DISC_LAYER_COUNTS);
        // appended source head: 5 -> 1 plus bias
        assert_eq!(counts[14], 6);
        assert_eq!(counts.len(), 15);
        assert_eq!(report.total(), DEFAULT_DISC_TOTAL + 6);
        assert_eq!(DEFAULT_DISC_LAYER_COUNTS.iter().sum::<usize>(), DEFAULT_DISC_TOTAL);
    }

    #[test]
    fn fourteen_class_head_changes_only_the_classifier() {
        let arch = ArchConfig::full(ClassMode::Fourteen);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let disc = build_discriminator(&arch, &mut rng).unwrap();
        let report = disc.param_report();
        let counts = report.nonzero_counts();
        assert_eq!(&counts[..13], &DEFAULT_DISC_LAYER_COUNTS[..13]);
        assert_eq!(counts[13], 5 * 14 + 14); // 84
    }

    #[test]
    fn discriminator_shape_trace_matches_reference_column() {
        let arch = ArchConfig::full(ClassMode::Seven);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let disc = build_discriminator(&arch, &mut rng).unwrap();
        let report = disc.param_report();
        let expected: Vec<(&str, Vec<usize>)> = vec![
            ("conv1", vec![256, 256, 16]),
            ("drop1", vec![256, 256, 16]),
            ("bn1", vec![256, 256, 16]),
            ("pool1", vec![128, 128, 16]),
            ("conv2", vec![128, 128, 32]),
            ("drop2", vec![128, 128, 32]),
            ("bn2", vec![128, 128, 32]),
            ("pool2", vec![64, 64, 32]),
            ("conv3", vec![64, 64, 32]),
            ("drop3", vec![64, 64, 32]),
            ("bn3", vec![64, 64, 32]),
            ("pool3", vec![32, 32, 32]),
            ("conv4", vec![32, 32, 32]),
            ("drop4", vec![32, 32, 32]),
            ("bn4", vec![32, 32, 32]),
            ("pool4", vec![16, 16, 32]),
            ("conv5", vec![16, 16, 64]),
            ("drop5", vec![16, 16, 64]),
            ("bn5", vec![16, 16, 64]),
            ("pool5", vec![8, 8, 64]),
            ("reshape", vec![64, 64]),
            ("gru1", vec![64, 50]),
            ("gru2", vec![100]),
            ("fc", vec![5]),
            ("classifier", vec![7]),
            ("source", vec![1]),
        ];
        let actual: Vec<(&str, Vec<usize>)> = report
            .rows
            .iter()
            .filter(|r| !r.is_activation())
            .map(|r| (r.name.as_str(), r.output_shape.clone()))
            .collect();
        assert_eq!(actual.len(), expected.len());
        for ((an, ashape), (en, eshape)) in actual.iter().zip(&expected) {
            assert_eq!(an, en);
            assert_eq!(ashape, eshape, "shape mismatch at {en}");
        }
    }

    #[test]
    fn generator_fc_and_first_conv_counts() {
        let arch = ArchConfig::full(ClassMode::Seven);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gen = build_generator(&arch, &mut rng).unwrap();
        let report = gen.param_report();
        assert_eq!(report.row("fc").unwrap().count, DEFAULT_GENERATOR_FC_COUNT);
        // 1 -> 256 channels: 9*1*256 + 256
        assert_eq!(report.row("conv1").unwrap().count, 2560);
        assert_eq!(report.row("bn0").unwrap().count, 4);
        assert_eq!(report.row("embed").unwrap().count, 7 * 256);
    }

    #[test]
    fn empty_report_total_is_zero() {
        let report = ParamReport { rows: Vec::new() };
        assert_eq!(report.total(), 0);
        assert!(report.nonzero_counts().is_empty());
    }

    #[test]
    fn conditioning_contracts() {
        let arch = ArchConfig::miniature(4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let gen = build_generator(&arch, &mut rng).unwrap();
        let d = arch.noise_dim;

        // zero noise conditions to zero for any label
        let zero = Tensor::zeros(&[2, d]);
        let out = gen.condition(&zero, &[0, 3]).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));

        // same noise, different labels, random embeddings: rows differ
        let noise = Tensor::from_fn(&[2, d], |i| ((i % 7) as f64 + 1.0) / 7.0);
        let out = gen.condition(&noise, &[1, 2]).unwrap();
        let (a, b) = (&out.data()[..d], &out.data()[d..]);
        assert_ne!(a, b);

        // all-ones embedding makes conditioning the identity
        let mut gen2 = gen;
        gen2.embedding_mut().data_mut().iter_mut().for_each(|v| *v = 1.0);
        let out = gen2.condition(&noise, &[0, 1]).unwrap();
        assert_eq!(out.data(), noise.data());

        // out-of-range label
        assert!(gen2.condition(&noise, &[0, 9]).is_err());
    }

    #[test]
    fn miniature_end_to_end_shapes_and_contracts() {
        let arch = ArchConfig::miniature(3);
        let (mut disc, mut gen) = build_pair(&arch, 42).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise = Tensor::from_fn(&[4, arch.noise_dim], |i| ((i * 37 % 11) as f64 / 11.0) - 0.5);
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let mut ctx = Ctx::train(&mut r);
        let fake = gen.forward(&noise, &[0, 1, 2, 0], &mut ctx).unwrap();
        assert_eq!(fake.shape(), &[4, 8, 8, 1]);
        assert!(fake.data().iter().all(|v| v.abs() < 1.0));
        let out = disc.forward(&fake, &mut ctx).unwrap();
        assert_eq!(out.source.shape(), &[4, 1]);
        assert_eq!(out.class_probs.shape(), &[4, 3]);
        for i in 0..4 {
            let p = out.source_probs()[i];
            assert!((0.0..=1.0).contains(&p));
            let row_sum: f64 = out.class_row(i).iter().sum();
            assert!((row_sum - 1.0).abs() < 1e-6);
            assert!(out.class_row(i).iter().all(|&v| v >= 0.0));
        }
        let _ = rng;
    }

    #[test]
    fn embedding_index_modes() {
        let seven = ArchConfig::full(ClassMode::Seven);
        assert_eq!(embedding_index(&seven, 3, None).unwrap(), 3);
        assert_eq!(embedding_index(&seven, 3, Some(1)).unwrap(), 3);
        assert!(embedding_index(&seven, 7, None).is_err());

        let fourteen = ArchConfig::full(ClassMode::Fourteen);
        assert_eq!(embedding_index(&fourteen, 3, Some(1)).unwrap(), 7);
        assert!(embedding_index(&fourteen, 3, None).is_err());
        assert!(embedding_index(&fourteen, 3, Some(2)).is_err());
    }
}
