//! End-to-end CLI tests against the built binary: help text, exit codes,
//! the reference-count inspection, a tiny corpus-to-audio pipeline and
//! idempotency of seeded commands.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_alimnet"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

#[test]
fn no_subcommand_prints_usage_and_exits_one() {
    let out = bin().output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let text = format!("{}{}", stdout(&out), String::from_utf8_lossy(&out.stderr));
    assert!(text.contains("Usage"), "missing usage text: {text}");
}

#[test]
fn unknown_flag_exits_one() {
    let out = run(&["inspect", "--bogus-flag"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_documents_every_subcommand_and_flag() {
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    for sub in [
        "synth-data",
        "preprocess",
        "train",
        "generate",
        "reconstruct",
        "inspect",
        "gradcheck",
    ] {
        assert!(text.contains(sub), "top-level help missing {sub}");
    }

    let flags: &[(&str, &[&str])] = &[
        ("synth-data", &["--out", "--classes", "--per-class", "--seed"]),
        (
            "preprocess",
            &[
                "--in",
                "--out",
                "--expect-micm",
                "--crop",
                "--fft",
                "--hop",
                "--raw-magnitude",
                "--allow-pad",
                "--seed",
            ],
        ),
        ("train", &["--config", "--out", "--reduced"]),
        (
            "generate",
            &[
                "--ckpt",
                "--dastgah",
                "--instrument",
                "--count",
                "--seed",
                "--out",
                "--png",
                "--gl-iters",
            ],
        ),
        ("reconstruct", &["--in", "--out", "--fft", "--hop"]),
        ("inspect", &["--ckpt", "--seed"]),
        ("gradcheck", &["--layer"]),
    ];
    for (sub, expected) in flags {
        let out = run(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub} --help failed");
        let text = stdout(&out);
        for flag in *expected {
            assert!(text.contains(flag), "{sub} --help missing {flag}: {text}");
        }
        // the global flags are documented everywhere
        assert!(text.contains("--json"));
        assert!(text.contains("--threads"));
    }
}

#[test]
fn inspect_fresh_model_matches_reference_counts() {
    let out = run(&["inspect"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert_eq!(
        text.matches("MATCH (").count(),
        14,
        "expected 14 matched rows: {text}"
    );
    assert!(!text.contains("MISMATCH"), "unexpected mismatch: {text}");
    assert!(text.contains("65792"), "generator FC row missing");

    let out = run(&["inspect", "--json"]);
    let json: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(json["reference_match"], serde_json::json!(true));
    assert_eq!(json["discriminator_total"], serde_json::json!(106049));
}

#[test]
fn gradcheck_passes_and_rejects_unknown_layer() {
    let out = run(&["gradcheck", "--layer", "gru"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(stdout(&out).contains("PASS"));

    let out = run(&["gradcheck", "--layer", "not-a-layer"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_input_directory_is_a_data_error() {
    let out = run(&[
        "preprocess",
        "--in",
        "/nonexistent-dir-for-test",
        "--out",
        "/tmp/also-unused",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_data_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out_dir in [&a, &b] {
        let out = run(&[
            "synth-data",
            "--out",
            out_dir.to_str().unwrap(),
            "--classes",
            "2",
            "--per-class",
            "2",
            "--seed",
            "9",
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let wav = "Shour/violin/clip_000.wav";
    assert_eq!(
        std::fs::read(a.join(wav)).unwrap(),
        std::fs::read(b.join(wav)).unwrap()
    );
    assert_eq!(
        std::fs::read(a.join("manifest.json")).unwrap(),
        std::fs::read(b.join("manifest.json")).unwrap()
    );
}

#[test]
fn reconstruct_cola_round_trip_reports_tiny_error() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("corpus");
    let out = run(&[
        "synth-data",
        "--out",
        out_dir.to_str().unwrap(),
        "--classes",
        "2",
        "--per-class",
        "1",
        "--seed",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let wav_in = out_dir.join("Shour/violin/clip_000.wav");
    let wav_out = dir.path().join("round.wav");
    let out = run(&[
        "reconstruct",
        "--in",
        wav_in.to_str().unwrap(),
        "--out",
        wav_out.to_str().unwrap(),
        "--fft",
        "512",
        "--hop",
        "128",
        "--json",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(json["uncovered"], serde_json::json!(0));
    let max_err = json["max_error_covered"].as_f64().unwrap();
    assert!(max_err < 1e-6, "round-trip error {max_err}");
    assert!(wav_out.is_file());
}

fn file_sha(path: &Path) -> u64 {
    // cheap structural fingerprint for byte-identity checks
    let bytes = std::fs::read(path).unwrap();
    let mut h = 1469598103934665603u64;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(1099511628211);
    }
    h
}

#[test]
fn tiny_pipeline_synthesize_train_generate() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let out = run(&[
        "synth-data",
        "--out",
        corpus.to_str().unwrap(),
        "--classes",
        "2",
        "--per-class",
        "4",
        "--seed",
        "11",
    ]);
    assert_eq!(out.status.code(), Some(0));

    // preprocess into a reduced-size cache
    let cache = dir.path().join("cache");
    let out = run(&[
        "preprocess",
        "--in",
        corpus.to_str().unwrap(),
        "--out",
        cache.to_str().unwrap(),
        "--fft",
        "126",
        "--hop",
        "2080",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(cache.join("preprocessed.json").is_file());
    assert!(cache.join("Shour/violin/clip_000.alim").is_file());

    // train a few steps from the cache
    let config = dir.path().join("train.json");
    std::fs::write(
        &config,
        serde_json::json!({
            "batch_size": 4,
            "steps": 3,
            "lr_d": 1e-4,
            "lr_g": 1e-4,
            "seed": 7,
            "data_dir": cache,
        })
        .to_string(),
    )
    .unwrap();
    let run_dir = dir.path().join("run");
    let out = run(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
        "--reduced",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = run_dir.join("ckpt_final.almc");
    assert!(ckpt.is_file());
    assert!(run_dir.join("losses.csv").is_file());
    let csv = std::fs::read_to_string(run_dir.join("losses.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4, "header + 3 steps: {csv}");
    assert!(csv.starts_with("step,ls,lc,g_objective"));

    // generate two clips with PNGs
    let gen_dir = dir.path().join("generated");
    let out = run(&[
        "generate",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--dastgah",
        "shour",
        "--count",
        "2",
        "--seed",
        "5",
        "--out",
        gen_dir.to_str().unwrap(),
        "--png",
        "--gl-iters",
        "4",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for stem in ["Shour_0", "Shour_1"] {
        assert!(gen_dir.join(format!("{stem}.wav")).is_file());
        assert!(gen_dir.join(format!("{stem}.png")).is_file());
    }

    // generation is idempotent given the seed
    let gen_dir2 = dir.path().join("generated2");
    let out = run(&[
        "generate",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--dastgah",
        "shour",
        "--count",
        "2",
        "--seed",
        "5",
        "--out",
        gen_dir2.to_str().unwrap(),
        "--gl-iters",
        "4",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        file_sha(&gen_dir.join("Shour_0.wav")),
        file_sha(&gen_dir2.join("Shour_0.wav"))
    );

    // an unknown dastgah name is a usage error
    let out = run(&[
        "generate",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--dastgah",
        "polka",
        "--out",
        gen_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}
