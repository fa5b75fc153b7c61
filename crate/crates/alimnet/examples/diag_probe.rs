use alimnet::data::{load_examples, make_synthetic_corpus, split_stratified, TransformConfig};
use alimnet::diffcore::{Ctx, Tensor};
use alimnet::models::{ArchConfig, Generator};
use alimnet::train::{classifier_accuracy, train, train_classifier, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::time::Instant;

fn row_profile(data: &[f64], side: usize) -> Vec<f64> {
    // mean of (v+1)/2 per row: energy location profile
    (0..side).map(|r| {
        data[r*side..(r+1)*side].iter().map(|v| (v + 1.0) / 2.0).sum::<f64>() / side as f64
    }).collect()
}

fn top_rows(profile: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..profile.len()).collect();
    idx.sort_by(|&a, &b| profile[b].partial_cmp(&profile[a]).unwrap());
    idx[..k].to_vec()
}

fn gen_batch(gen: &mut Generator, label: usize, n: usize, seed: u64, frozen: bool) -> Vec<Vec<f64>> {
    (0..n).map(|i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64 * 7919));
        let noise = Tensor::from_fn(&[1, gen.arch.noise_dim], |_| StandardNormal.sample(&mut rng));
        if frozen {
            let mut ctx = Ctx::train_frozen(&mut rng);
            ctx.deterministic = true;
            gen.forward(&noise, &[label], &mut ctx).unwrap().into_data()
        } else {
            let mut ctx = Ctx::infer(&mut rng);
            gen.forward(&noise, &[label], &mut ctx).unwrap().into_data()
        }
    }).collect()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr_d: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(2e-4);
    let lr_g: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(5e-4);
    let batch: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(8);
    let weak_d: bool = args.get(4).map(|s| s == "weak").unwrap_or(false);

    let dir = tempfile::tempdir().unwrap();
    let manifest = make_synthetic_corpus(dir.path(), 2, 40, 77).unwrap();
    let tf = TransformConfig::reduced();
    let set = load_examples(&manifest, &tf).unwrap();
    let (train_idx, held_idx) = split_stratified(&set.examples, 0.15, 4242);
    let train_set: Vec<_> = train_idx.iter().map(|&i| set.examples[i].clone()).collect();
    println!("train {} held {}", train_set.len(), held_idx.len());

    // real class profiles
    for class in 0..2 {
        let mut prof = vec![0.0; 64];
        let mut n = 0;
        for ex in &train_set {
            if ex.class_index == class {
                let p = row_profile(ex.spec.real_data().unwrap(), 64);
                for (a, b) in prof.iter_mut().zip(&p) { *a += b; }
                n += 1;
            }
        }
        prof.iter_mut().for_each(|v| *v /= n as f64);
        println!("real class {class}: top rows {:?}", top_rows(&prof, 5));
    }

    let mut arch = ArchConfig::reduced(2);
    if weak_d {
        arch.disc_channels = vec![4, 6, 6, 6, 8];
        arch.gru_hidden = (8, 16);
    }
    let cfg = TrainConfig { batch_size: batch, steps: 2000, lr_d, lr_g, seed: 1234, ..TrainConfig::default() };
    let t0 = Instant::now();
    let mut state = train(&cfg, &arch, &tf, &train_set, set.reference_magnitude, None).unwrap();
    println!("train: {:?}", t0.elapsed());
    let d_acc = classifier_accuracy(&mut state.disc, &set.examples, &held_idx).unwrap();

    // embedding separation
    let emb = state.gen.embedding().data();
    let d = state.gen.arch.noise_dim;
    let dist: f64 = (0..d).map(|i| (emb[i] - emb[d+i]).powi(2)).sum::<f64>().sqrt();
    println!("embedding row distance: {dist:.4}");

    // generated profiles per label + same-noise output difference
    let g0 = gen_batch(&mut state.gen, 0, 16, 999, true);
    let g1 = gen_batch(&mut state.gen, 1, 16, 999, true);
    let mut diff = 0.0;
    for (a, b) in g0.iter().zip(&g1) {
        diff += a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
    }
    println!("mean |out(label0) - out(label1)| same noise: {:.4}", diff / 16.0);
    for (label, batch_specs) in [(0, &g0), (1, &g1)] {
        let mut prof = vec![0.0; 64];
        for s in batch_specs.iter() {
            let p = row_profile(s, 64);
            for (a, b) in prof.iter_mut().zip(&p) { *a += b; }
        }
        prof.iter_mut().for_each(|v| *v /= 16.0);
        println!("generated label {label}: top rows {:?}", top_rows(&prof, 5));
    }

    // consistency with independent classifier
    let mut classifier = train_classifier(&ArchConfig::reduced(2), &train_set, 600, 8, 5e-4, 900).unwrap();
    let clf_acc = classifier_accuracy(&mut classifier, &set.examples, &held_idx).unwrap();
    let mut specs = Vec::new();
    let mut labels = Vec::new();
    for (label, batch_specs) in [(0usize, &g0), (1, &g1)] {
        for s in batch_specs.iter() {
            specs.push(alimnet::dsp::Spectrogram::db_normalized(64, 64, tf.stft, s.clone()).unwrap());
            labels.push(label);
        }
    }
    let cons = alimnet::synth::class_consistency(&specs, &labels, &mut classifier).unwrap();
    let last = state.history.last().unwrap();
    println!("RESULT lr_d={lr_d} lr_g={lr_g} batch={batch} weak_d={weak_d}: d_acc={d_acc:.3} clf_acc={clf_acc:.3} cons={cons:.3} ls={:.3} lc={:.3} g={:.3}",
        last.ls, last.lc, last.g_objective);
}
