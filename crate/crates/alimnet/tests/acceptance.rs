//! Acceptance suite: one test per release criterion, each printing a
//! PASS line (visible with `--nocapture`). Criteria 6 and 7 share one
//! test because 7 re-runs 6's training to check bit determinism.
//!
//! Run with:
//!   cargo test -p alimnet --test acceptance -- --nocapture --test-threads=1

mod common;

use std::time::Instant;

use alimnet::container::{read_spectrogram, write_spectrogram};
use alimnet::data::{
    load_examples, make_synthetic_corpus, preprocess_clip, split_stratified, TransformConfig,
};
use alimnet::diffcore::{layer_catalog_report, Tensor};
use alimnet::dsp::{istft, stft, StftConfig, CLIP_SAMPLES};
use alimnet::models::{
    build_pair, ArchConfig, ClassMode, DEFAULT_DISC_LAYER_COUNTS, DEFAULT_GENERATOR_FC_COUNT,
};
use alimnet::synth::{class_consistency, generate_with};
use alimnet::train::{
    classifier_accuracy, loss_class, loss_source, train, train_classifier, TrainConfig,
};
use common::{naive_windowed_dft, note_signal, oracle_frame};

#[test]
fn criterion_1_shape_law() {
    let clip = note_signal(CLIP_SAMPLES, 1);
    let started = Instant::now();
    let spec = stft(&clip, &StftConfig::default()).expect("stft");
    let elapsed = started.elapsed();
    assert_eq!((spec.rows(), spec.cols()), (256, 256));
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!(
        "acceptance criterion 1: PASS - 131072-sample clip at 510/514 maps to 256x256 in {elapsed:?}"
    );
}

#[test]
fn criterion_2_parameter_count_oracle() {
    let started = Instant::now();
    let arch = ArchConfig::full(ClassMode::Seven);
    let (disc, gen) = build_pair(&arch, 0).expect("build");
    let counts = disc.param_report().nonzero_counts();
    assert_eq!(&counts[..14], &DEFAULT_DISC_LAYER_COUNTS);
    let fc = gen.param_report().row("fc").expect("generator fc row").count;
    assert_eq!(fc, DEFAULT_GENERATOR_FC_COUNT);
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!(
        "acceptance criterion 2: PASS - all 14 discriminator counts and the generator FC count reproduce exactly"
    );
}

#[test]
fn criterion_3_gradient_suite() {
    let started = Instant::now();

    // every layer kind at eps 1e-3
    let report = layer_catalog_report(1e-3).expect("layer catalog");
    for entry in &report {
        assert!(
            entry.input_error < 1e-4 && entry.param_error < 1e-4,
            "{}: input {} param {}",
            entry.name,
            entry.input_error,
            entry.param_error
        );
    }

    // both full objectives on miniature networks; a finer probe step keeps
    // the check clear of relu kinks inside the composed stacks
    let d_err = mini_d_objective_error();
    assert!(d_err < 1e-3, "discriminator objective gradient error {d_err}");
    let g_err = mini_g_objective_error();
    assert!(g_err < 1e-3, "generator objective gradient error {g_err}");

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "took {elapsed:?}");
    println!(
        "acceptance criterion 3: PASS - {} layer checks < 1e-4; composed objectives {d_err:.2e} / {g_err:.2e} < 1e-3 in {elapsed:?}",
        report.len()
    );
}

fn mini_d_objective_error() -> f64 {
    use alimnet::diffcore::Ctx;
    use alimnet::train::d_loss_head_grads;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let arch = ArchConfig::miniature(3);
    let (mut disc, _) = build_pair(&arch, 7).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(21);
    let combined = Tensor::from_fn(&[4, 8, 8, 1], |_| r.gen_range(-1.0..1.0));
    let labels_real = [0usize, 2];
    let labels_fake = [1usize, 0];

    let eval = |disc: &mut alimnet::models::Discriminator| -> f64 {
        let mut r = ChaCha8Rng::seed_from_u64(17);
        let mut ctx = Ctx::train_frozen(&mut r);
        ctx.deterministic = true;
        let out = disc.forward(&combined, &mut ctx).unwrap();
        let probs = out.source_probs();
        let ls = loss_source(&probs[..2], &probs[2..]);
        let c = out.class_probs.shape()[1];
        let real = Tensor::new(vec![2, c], out.class_probs.data()[..2 * c].to_vec()).unwrap();
        let fake = Tensor::new(vec![2, c], out.class_probs.data()[2 * c..].to_vec()).unwrap();
        let lc = loss_class(&real, &labels_real, &fake, &labels_fake).unwrap();
        -(ls + lc)
    };

    disc.zero_grads();
    {
        let mut r = ChaCha8Rng::seed_from_u64(17);
        let mut ctx = Ctx::train_frozen(&mut r);
        ctx.deterministic = true;
        let out = disc.forward(&combined, &mut ctx).unwrap();
        let probs = out.source_probs();
        let (gs, gc) =
            d_loss_head_grads(&probs, &out.class_probs, &labels_real, &labels_fake).unwrap();
        disc.backward(&gs, &gc).unwrap();
    }
    let analytic: Vec<(String, Vec<f64>)> = disc
        .trainable_tensors_mut()
        .into_iter()
        .map(|(n, t)| (n, t.grad().unwrap().to_vec()))
        .collect();
    let eps = 1e-5;
    let mut max_err = 0.0f64;
    for (idx, (_, grads)) in analytic.iter().enumerate() {
        for i in 0..grads.len() {
            let orig = disc.trainable_tensors_mut()[idx].1.data()[i];
            disc.trainable_tensors_mut()[idx].1.data_mut()[i] = orig + eps;
            let fp = eval(&mut disc);
            disc.trainable_tensors_mut()[idx].1.data_mut()[i] = orig - eps;
            let fm = eval(&mut disc);
            disc.trainable_tensors_mut()[idx].1.data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * eps);
            let a = grads[i];
            max_err = max_err.max((a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs()));
        }
    }
    max_err
}

fn mini_g_objective_error() -> f64 {
    use alimnet::diffcore::Ctx;
    use alimnet::train::{g_loss_head_grads, g_objective_value, GeneratorSign};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let sign = GeneratorSign::AcganStandard;
    let arch = ArchConfig::miniature(3);
    let (mut disc, mut gen) = build_pair(&arch, 11).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let noise = Tensor::from_fn(&[3, arch.noise_dim], |_| r.gen_range(-1.0..1.0));
    let labels = [0usize, 1, 2];

    let eval = |gen: &mut alimnet::models::Generator,
                disc: &mut alimnet::models::Discriminator|
     -> f64 {
        let mut r = ChaCha8Rng::seed_from_u64(31);
        let mut ctx = Ctx::train_frozen(&mut r);
        ctx.deterministic = true;
        let fake = gen.forward(&noise, &labels, &mut ctx).unwrap();
        let out = disc.forward(&fake, &mut ctx).unwrap();
        g_objective_value(&out.source_probs(), &out.class_probs, &labels, sign).unwrap()
    };

    gen.zero_grads();
    disc.zero_grads();
    {
        let mut r = ChaCha8Rng::seed_from_u64(31);
        let mut ctx = Ctx::train_frozen(&mut r);
        ctx.deterministic = true;
        let fake = gen.forward(&noise, &labels, &mut ctx).unwrap();
        let out = disc.forward(&fake, &mut ctx).unwrap();
        let (gs, gc) =
            g_loss_head_grads(&out.source_probs(), &out.class_probs, &labels, sign).unwrap();
        let gx = disc.backward(&gs, &gc).unwrap();
        gen.backward(&gx).unwrap();
    }
    let analytic: Vec<(String, Vec<f64>)> = gen
        .trainable_tensors_mut()
        .into_iter()
        .map(|(n, t)| (n, t.grad().unwrap().to_vec()))
        .collect();
    let eps = 1e-5;
    let mut max_err = 0.0f64;
    for (idx, (_, grads)) in analytic.iter().enumerate() {
        for i in 0..grads.len() {
            let orig = gen.trainable_tensors_mut()[idx].1.data()[i];
            gen.trainable_tensors_mut()[idx].1.data_mut()[i] = orig + eps;
            let fp = eval(&mut gen, &mut disc);
            gen.trainable_tensors_mut()[idx].1.data_mut()[i] = orig - eps;
            let fm = eval(&mut gen, &mut disc);
            gen.trainable_tensors_mut()[idx].1.data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * eps);
            let a = grads[i];
            max_err = max_err.max((a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs()));
        }
    }
    max_err
}

#[test]
fn criterion_4_dsp_oracles() {
    let started = Instant::now();

    // frame-wise naive DFT agreement
    let signal = note_signal(2000, 3);
    let cfg = StftConfig::default();
    let spec = stft(&signal, &cfg).unwrap();
    let frames = spec.cols();
    let data = spec.complex_data().unwrap();
    let mut worst = 0.0f64;
    for frame in 0..frames {
        let expected = naive_windowed_dft(&oracle_frame(&signal, &cfg, frame), &cfg);
        for k in 0..spec.rows() {
            let err = (data[k * frames + frame] - expected[k]).norm()
                / 1.0f64.max(expected[k].norm());
            worst = worst.max(err);
        }
    }
    assert!(worst < 1e-6, "naive DFT disagreement {worst}");

    // COLA round trip
    let signal = note_signal(4096, 8);
    let cola = StftConfig::new(512, 128);
    let rec = istft(&stft(&signal, &cola).unwrap(), &cola, signal.len()).unwrap();
    assert!(rec.coverage.iter().all(|&c| c));
    let max_err = signal
        .iter()
        .zip(&rec.samples)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(max_err < 1e-6, "COLA round-trip error {max_err}");

    // paper-config coverage: every gap is exactly hop - fft = 4 samples
    let clip = note_signal(CLIP_SAMPLES, 4);
    let default_cfg = StftConfig::default();
    let rec = istft(&stft(&clip, &default_cfg).unwrap(), &default_cfg, clip.len()).unwrap();
    let mut runs = Vec::new();
    let mut run = 0usize;
    for &covered in &rec.coverage {
        if covered {
            if run > 0 {
                runs.push(run);
                run = 0;
            }
        } else {
            run += 1;
        }
    }
    if run > 0 {
        runs.push(run);
    }
    assert!(!runs.is_empty());
    assert!(
        runs.iter().all(|&r| r == 4),
        "uncovered runs not all 4 samples: {runs:?}"
    );
    let covered_err = clip
        .iter()
        .zip(&rec.samples)
        .zip(&rec.coverage)
        .filter(|(_, &c)| c)
        .map(|((a, b), _)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(covered_err < 1e-6, "covered-sample error {covered_err}");

    // Griffin-Lim spectral convergence is monotone non-increasing
    let signal = note_signal(16384, 5);
    let mag = stft(&signal, &cola).unwrap().to_magnitude().unwrap();
    let gl = alimnet::dsp::griffin_lim(&mag, &cola, 48, 31, signal.len()).unwrap();
    for pair in gl.errors.windows(2) {
        assert!(
            pair[1] <= pair[0] + 1e-9,
            "spectral convergence increased: {} -> {}",
            pair[0],
            pair[1]
        );
    }

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    println!(
        "acceptance criterion 4: PASS - DFT agreement {worst:.2e}, COLA error {max_err:.2e}, gaps of exactly 4, Griffin-Lim monotone ({elapsed:?})"
    );
}

#[test]
fn criterion_5_analytic_loss_anchors() {
    let started = Instant::now();
    let p = vec![0.5; 16];
    let ls = loss_source(&p, &p);
    assert!((ls - 2.0 * 0.5f64.ln()).abs() < 1e-9, "LS {ls}");

    let probs = Tensor::full(&[16, 7], 1.0 / 7.0);
    let labels = vec![2usize; 16];
    let lc = loss_class(&probs, &labels, &probs, &labels).unwrap();
    assert!((lc - 2.0 * (1.0f64 / 7.0).ln()).abs() < 1e-9, "LC {lc}");
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0);
    println!(
        "acceptance criterion 5: PASS - uniform-output anchors LS = 2 ln(1/2), LC = 2 ln(1/7) to 1e-9"
    );
}

/// Frozen desk-scale regression baseline (first baseline run: classifier
/// held-out accuracy 1.00, discriminator held-out accuracy 1.00, trained
/// consistency comfortably above the untrained generator's).
struct SmokeSettings {
    corpus_seed: u64,
    per_class: usize,
    holdout: f64,
    split_seed: u64,
    train: TrainConfig,
    classifier_steps: usize,
    classifier_lr: f64,
    classifier_seed: u64,
    eval_count: usize,
    eval_seed: u64,
    untrained_seed: u64,
}

fn smoke_settings() -> SmokeSettings {
    SmokeSettings {
        corpus_seed: 77,
        per_class: 40,
        holdout: 0.15,
        split_seed: 4242,
        train: TrainConfig {
            batch_size: 16,
            steps: 2000,
            lr_d: 2e-4,
            lr_g: 1e-3,
            seed: 1234,
            checkpoint_every: 1000,
            ..TrainConfig::default()
        },
        classifier_steps: 600,
        classifier_lr: 5e-4,
        classifier_seed: 900,
        eval_count: 30,
        eval_seed: 555,
        untrained_seed: 999,
    }
}

#[test]
fn criterion_6_and_7_desk_scale_smoke_and_determinism() {
    let s = smoke_settings();
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let manifest = make_synthetic_corpus(&corpus, 2, s.per_class, s.corpus_seed).unwrap();
    let tf = TransformConfig::reduced();
    let set = load_examples(&manifest, &tf).unwrap();
    assert!(set.skipped.is_empty());
    let (train_idx, held_idx) = split_stratified(&set.examples, s.holdout, s.split_seed);
    let train_set: Vec<_> = train_idx.iter().map(|&i| set.examples[i].clone()).collect();

    let arch = ArchConfig::reduced(2);
    let out_a = dir.path().join("run_a");
    let mut state = train(
        &s.train,
        &arch,
        &tf,
        &train_set,
        set.reference_magnitude,
        Some(&out_a),
    )
    .unwrap();
    let run_a_elapsed = started.elapsed();
    assert!(
        run_a_elapsed.as_secs_f64() < 1800.0,
        "smoke run took {run_a_elapsed:?}"
    );

    // held-out discriminator class accuracy
    let d_acc = classifier_accuracy(&mut state.disc, &set.examples, &held_idx).unwrap();
    assert!(d_acc >= 0.90, "held-out class accuracy {d_acc}");

    // independent classifier trained on real data only
    let mut classifier = train_classifier(
        &arch,
        &train_set,
        s.classifier_steps,
        8,
        s.classifier_lr,
        s.classifier_seed,
    )
    .unwrap();
    let clf_acc = classifier_accuracy(&mut classifier, &set.examples, &held_idx).unwrap();
    assert!(clf_acc >= 0.90, "judge classifier accuracy {clf_acc}");

    let consistency = |gen: &mut alimnet::models::Generator,
                       classifier: &mut alimnet::models::Discriminator|
     -> f64 {
        let mut specs = Vec::new();
        let mut labels = Vec::new();
        for label in 0..2usize {
            let batch = generate_with(gen, label, s.eval_count, s.eval_seed, &tf.stft).unwrap();
            labels.extend(std::iter::repeat(label).take(batch.len()));
            specs.extend(batch);
        }
        class_consistency(&specs, &labels, classifier).unwrap()
    };
    let trained_cons = consistency(&mut state.gen, &mut classifier);
    let (_, mut untrained_gen) = build_pair(&arch, s.untrained_seed).unwrap();
    let untrained_cons = consistency(&mut untrained_gen, &mut classifier);
    assert!(
        trained_cons > untrained_cons,
        "class consistency: trained {trained_cons} vs untrained {untrained_cons}"
    );
    println!(
        "acceptance criterion 6: PASS - held-out accuracy {d_acc:.3} >= 0.90; consistency trained {trained_cons:.3} > untrained {untrained_cons:.3} ({run_a_elapsed:?})"
    );

    // criterion 7: a second identical run is bit-identical
    let out_b = dir.path().join("run_b");
    let _state_b = train(
        &s.train,
        &arch,
        &tf,
        &train_set,
        set.reference_magnitude,
        Some(&out_b),
    )
    .unwrap();
    for file in ["ckpt_final.almc", "losses.csv", "ckpt_001000.almc", "ckpt_002000.almc"] {
        let a = std::fs::read(out_a.join(file)).unwrap();
        let b = std::fs::read(out_b.join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
    println!(
        "acceptance criterion 7: PASS - identical runs produce bit-identical checkpoints and loss CSVs"
    );
}

#[test]
fn criterion_8_round_trip_fidelity() {
    let dir = tempfile::tempdir().unwrap();

    // preprocess -> container write -> read -> bit-exact matrices
    let clip = note_signal(CLIP_SAMPLES, 6);
    let tf = TransformConfig::full();
    let (spec, _) = preprocess_clip(&clip, &tf).unwrap();
    let path = dir.path().join("clip.alim");
    write_spectrogram(&path, &spec).unwrap();
    let back = read_spectrogram(&path).unwrap();
    assert_eq!(back.rows(), spec.rows());
    assert_eq!(back.cols(), spec.cols());
    assert_eq!(
        back.real_data().unwrap(),
        spec.real_data().unwrap(),
        "container round trip is not bit-exact"
    );
    let again = dir.path().join("clip2.alim");
    write_spectrogram(&again, &back).unwrap();
    assert_eq!(
        std::fs::read(&path).unwrap(),
        std::fs::read(&again).unwrap()
    );

    // WAV write -> read within one quantization step
    let wav_path = dir.path().join("clip.wav");
    alimnet::wav::write_wav(&wav_path, &clip, 8192).unwrap();
    let (read_back, rate) = alimnet::wav::read_wav(&wav_path).unwrap();
    assert_eq!(rate, 8192);
    for (a, b) in clip.iter().zip(&read_back) {
        assert!((a - b).abs() <= 1.0 / 32768.0);
    }
    println!(
        "acceptance criterion 8: PASS - spectrogram containers round-trip bit-exactly; WAV within 1/32768"
    );
}
