use alimnet::data::{load_examples, make_synthetic_corpus, split_stratified, TransformConfig};
use alimnet::diffcore::{Ctx, Tensor};
use alimnet::models::{build_pair, ArchConfig, Discriminator, Generator};
use alimnet::synth::class_consistency;
use alimnet::train::{classifier_accuracy, train, train_classifier, TrainConfig};
use alimnet::dsp::Spectrogram;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::time::Instant;

fn gen_specs(gen: &mut Generator, label: usize, count: usize, seed: u64, tf: &TransformConfig, frozen: bool) -> Vec<Spectrogram> {
    let side = gen.arch.input_size;
    (0..count).map(|i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64 * 7919));
        let noise = Tensor::from_fn(&[1, gen.arch.noise_dim], |_| StandardNormal.sample(&mut rng));
        let fake = if frozen {
            let mut ctx = Ctx::train_frozen(&mut rng);
            ctx.deterministic = true;
            gen.forward(&noise, &[label], &mut ctx).unwrap()
        } else {
            let mut ctx = Ctx::infer(&mut rng);
            gen.forward(&noise, &[label], &mut ctx).unwrap()
        };
        Spectrogram::db_normalized(side, side, tf.stft, fake.into_data()).unwrap()
    }).collect()
}

fn consistency_of(gen: &mut Generator, classifier: &mut Discriminator, tf: &TransformConfig, frozen: bool) -> f64 {
    let mut specs = Vec::new();
    let mut labels = Vec::new();
    for label in 0..2usize {
        let s = gen_specs(gen, label, 20, 555, tf, frozen);
        labels.extend(std::iter::repeat(label).take(s.len()));
        specs.extend(s);
    }
    class_consistency(&specs, &labels, classifier).unwrap()
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = make_synthetic_corpus(dir.path(), 2, 30, 77).unwrap();
    let tf = TransformConfig::reduced();
    let set = load_examples(&manifest, &tf).unwrap();
    let (train_idx, held_idx) = split_stratified(&set.examples, 0.1, 4242);
    let train_set: Vec<_> = train_idx.iter().map(|&i| set.examples[i].clone()).collect();
    let mut classifier = train_classifier(&ArchConfig::reduced(2), &train_set, 600, 8, 5e-4, 900).unwrap();
    println!("classifier held acc {:.3}", classifier_accuracy(&mut classifier, &set.examples, &held_idx).unwrap());

    for (name, lr_d, lr_g, batch) in [
        ("V2 lrd1e-4 lrg5e-4 b8", 1e-4, 5e-4, 8usize),
        ("V2b lrd2e-4 lrg1e-3 b8", 2e-4, 1e-3, 8),
    ] {
        let arch = ArchConfig::reduced(2);
        let cfg = TrainConfig { batch_size: batch, steps: 2000, lr_d, lr_g, seed: 1234, ..TrainConfig::default() };
        let t0 = Instant::now();
        let mut state = train(&cfg, &arch, &tf, &train_set, set.reference_magnitude, None).unwrap();
        let d_acc = classifier_accuracy(&mut state.disc, &set.examples, &held_idx).unwrap();
        let c_infer = consistency_of(&mut state.gen, &mut classifier, &tf, false);
        let c_frozen = consistency_of(&mut state.gen, &mut classifier, &tf, true);
        // D's own class head on generated samples (train-frozen outputs)
        let specs = gen_specs(&mut state.gen, 0, 20, 555, &tf, false);
        let mut dhead = 0usize;
        for spec in &specs {
            let x = Tensor::new(vec![1, 64, 64, 1], spec.real_data().unwrap().to_vec()).unwrap();
            let mut r = ChaCha8Rng::seed_from_u64(0);
            let out = state.disc.forward(&x, &mut Ctx::infer(&mut r)).unwrap();
            if out.argmax_class(0) == 0 { dhead += 1; }
        }
        let last = state.history.last().unwrap();
        println!("{name}: {:?} d_acc={d_acc:.2} cons_infer={c_infer:.3} cons_frozen={c_frozen:.3} d_head_label0={dhead}/20 ls={:.3} lc={:.3} g={:.3}",
            t0.elapsed(), last.ls, last.lc, last.g_objective);
    }
}
