//! Command-line entry point for the pipeline: corpus synthesis,
//! preprocessing, adversarial training, generation, inspection and
//! gradient verification.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use alimnet::data::{
    self, load_cache, load_examples, make_synthetic_corpus, scan_manifest, CropPolicy,
    TransformConfig,
};
use alimnet::dsp::{istft, stft, StftConfig};
use alimnet::labels::{Dastgah, Instrument};
use alimnet::models::{build_pair, ArchConfig, ClassMode, ParamReport, DEFAULT_DISC_LAYER_COUNTS};
use alimnet::synth::{generate, resynthesize, spectrogram_png, GenerationRequest};
use alimnet::train::{train, TrainConfig};
use alimnet::wav;

#[derive(Parser)]
#[command(
    name = "alimnet",
    version,
    about = "Class-conditional adversarial synthesis of Persian classical music spectrograms",
    subcommand_required = true,
    arg_required_else_help = true
)]
struct Cli {
    /// Machine-readable JSON output where supported
    #[arg(long, global = true)]
    json: bool,
    /// Worker threads for the data pipeline (outputs are per-file
    /// deterministic for any value; training itself is single-threaded)
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a deterministic synthetic labeled corpus of WAV clips
    SynthData(SynthDataArgs),
    /// Preprocess a WAV corpus into a cache of spectrogram containers
    Preprocess(PreprocessArgs),
    /// Train the adversarial model from a JSON config
    Train(TrainArgs),
    /// Generate class-conditioned audio from a checkpoint
    Generate(GenerateArgs),
    /// Forward/inverse transform round trip with a coverage report
    Reconstruct(ReconstructArgs),
    /// Report per-layer parameter counts against the reference table
    Inspect(InspectArgs),
    /// Run the central-difference gradient verification suite
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthDataArgs {
    /// Output corpus directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Number of pseudo-classes (2..=7)
    #[arg(long, default_value_t = 2)]
    classes: usize,
    /// Clips per class
    #[arg(long = "per-class", default_value_t = 16)]
    per_class: usize,
    /// Corpus seed (falls back to ALIMNET_SEED, then 0)
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Input corpus directory (<root>/<dastgah>/<instrument>/*.wav)
    #[arg(long = "in", value_name = "DIR")]
    input: PathBuf,
    /// Output cache directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Fail unless the corpus matches the published MICM class counts
    #[arg(long = "expect-micm")]
    expect_micm: bool,
    /// Where to cut long clips
    #[arg(long, value_enum, default_value_t = CropArg::Head)]
    crop: CropArg,
    /// Analysis window size
    #[arg(long, default_value_t = 510)]
    fft: usize,
    /// Analysis hop
    #[arg(long, default_value_t = 514)]
    hop: usize,
    /// Keep raw magnitudes instead of [-1, 1] dB normalization
    #[arg(long = "raw-magnitude")]
    raw_magnitude: bool,
    /// Zero-pad clips shorter than one clip length instead of failing
    #[arg(long = "allow-pad")]
    allow_pad: bool,
    /// Seed for the random crop policy (falls back to ALIMNET_SEED)
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum CropArg {
    Head,
    Random,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON config file mirroring the training parameters
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Output directory for checkpoints and the loss CSV
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// 64x64 reduced-size mode (proportionally shrunk networks)
    #[arg(long)]
    reduced: bool,
}

#[derive(Args)]
struct GenerateArgs {
    /// Checkpoint file
    #[arg(long, value_name = "FILE")]
    ckpt: PathBuf,
    /// Dastgah name (case-insensitive)
    #[arg(long, value_parser = parse_dastgah)]
    dastgah: Dastgah,
    /// Instrument label (required for instrument-conditioned checkpoints)
    #[arg(long, value_parser = parse_instrument)]
    instrument: Option<Instrument>,
    /// Number of samples
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Generation seed (falls back to ALIMNET_SEED, then 0)
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for WAV files
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Also write a grayscale spectrogram PNG per sample
    #[arg(long)]
    png: bool,
    /// Phase-estimation iterations
    #[arg(long = "gl-iters", default_value_t = 32)]
    gl_iters: usize,
}

#[derive(Args)]
struct ReconstructArgs {
    /// Input WAV file
    #[arg(long = "in", value_name = "WAV")]
    input: PathBuf,
    /// Output WAV file
    #[arg(long, value_name = "WAV")]
    out: PathBuf,
    /// Analysis window size
    #[arg(long, default_value_t = 510)]
    fft: usize,
    /// Analysis hop
    #[arg(long, default_value_t = 514)]
    hop: usize,
}

#[derive(Args)]
struct InspectArgs {
    /// Checkpoint to inspect; a fresh default model when omitted
    #[arg(long, value_name = "FILE")]
    ckpt: Option<PathBuf>,
    /// Seed for the fresh model (falls back to ALIMNET_SEED, then 0)
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Check a single layer kind instead of the whole catalog
    #[arg(long)]
    layer: Option<String>,
}

fn parse_dastgah(s: &str) -> Result<Dastgah, String> {
    Dastgah::parse(s).map_err(|e| e.to_string())
}

fn parse_instrument(s: &str) -> Result<Instrument, String> {
    Instrument::parse(s).map_err(|e| e.to_string())
}

fn seed_or_env(flag: Option<u64>) -> u64 {
    flag.or_else(|| {
        std::env::var("ALIMNET_SEED")
            .ok()
            .and_then(|v| v.parse().ok())
    })
    .unwrap_or(0)
}

enum CliError {
    Usage(String),
    Lib(alimnet::Error),
}

impl From<alimnet::Error> for CliError {
    fn from(e: alimnet::Error) -> CliError {
        CliError::Lib(e)
    }
}

fn exit_code_for(err: &CliError) -> u8 {
    match err {
        CliError::Usage(_) => 1,
        CliError::Lib(alimnet::Error::Numeric(_)) => 3,
        CliError::Lib(_) => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let threads = if cli.threads == 0 { num_threads_default() } else { cli.threads };
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();

    let result = match &cli.command {
        Command::SynthData(args) => run_synth_data(args, cli.json),
        Command::Preprocess(args) => run_preprocess(args, cli.json),
        Command::Train(args) => run_train(args, cli.json),
        Command::Generate(args) => run_generate(args, cli.json),
        Command::Reconstruct(args) => run_reconstruct(args, cli.json),
        Command::Inspect(args) => run_inspect(args, cli.json),
        Command::Gradcheck(args) => run_gradcheck(args, cli.json),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Usage(msg) => eprintln!("error: {msg}"),
                CliError::Lib(err) => eprintln!("error: {err}"),
            }
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn num_threads_default() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

fn run_synth_data(args: &SynthDataArgs, json: bool) -> Result<(), CliError> {
    let seed = seed_or_env(args.seed);
    let manifest = make_synthetic_corpus(&args.out, args.classes, args.per_class, seed)?;
    manifest.write_json(&args.out.join("manifest.json"))?;
    if json {
        println!(
            "{}",
            serde_json::json!({
                "files": manifest.entries.len(),
                "classes": args.classes,
                "per_class": args.per_class,
                "seed": seed,
                "out": args.out,
            })
        );
    } else {
        println!(
            "wrote {} clips ({} classes x {} each, seed {seed}) under {}",
            manifest.entries.len(),
            args.classes,
            args.per_class,
            args.out.display()
        );
        for (name, count) in manifest.class_counts() {
            println!("  {name}: {count}");
        }
    }
    Ok(())
}

fn run_preprocess(args: &PreprocessArgs, json: bool) -> Result<(), CliError> {
    let manifest = scan_manifest(&args.input)?;
    if args.expect_micm {
        manifest.validate_micm()?;
    }
    let seed = seed_or_env(args.seed);
    let tf = TransformConfig {
        stft: StftConfig::new(args.fft, args.hop),
        floor_db: alimnet::dsp::DEFAULT_FLOOR_DB,
        db_normalize: !args.raw_magnitude,
        crop: match args.crop {
            CropArg::Head => CropPolicy::Head,
            CropArg::Random => CropPolicy::Random { seed },
        },
        allow_pad: args.allow_pad,
    };
    let summary = data::preprocess_corpus(&manifest, &args.out, &tf)?;
    for (path, reason) in &summary.skipped {
        eprintln!("warning: skipped {}: {reason}", path.display());
    }
    if json {
        println!(
            "{}",
            serde_json::json!({
                "processed": summary.processed,
                "skipped": summary.skipped.len(),
                "reference_magnitude": summary.reference_magnitude,
                "out": args.out,
            })
        );
    } else {
        println!(
            "processed {} clips into {} ({} skipped), reference magnitude {:.4}",
            summary.processed,
            args.out.display(),
            summary.skipped.len(),
            summary.reference_magnitude
        );
    }
    Ok(())
}

fn run_train(args: &TrainArgs, json: bool) -> Result<(), CliError> {
    let cfg = TrainConfig::from_json_file(&args.config)?;
    let data_dir = cfg.data_dir.clone().ok_or_else(|| {
        CliError::Usage("the train config must set data_dir (a corpus or cache directory)".into())
    })?;

    // load examples either from a preprocessed cache or raw WAV files
    let (set, tf) = if data::is_cache_dir(&data_dir) {
        let (set, cache) = load_cache(&data_dir)?;
        let tf = TransformConfig {
            stft: cache.stft,
            floor_db: cache.floor_db,
            db_normalize: cache.db_normalized,
            crop: CropPolicy::Head,
            allow_pad: false,
        };
        (set, tf)
    } else {
        let manifest = scan_manifest(&data_dir)?;
        let tf = if args.reduced {
            TransformConfig::reduced()
        } else {
            TransformConfig::full()
        };
        (load_examples(&manifest, &tf)?, tf)
    };
    for (path, reason) in &set.skipped {
        eprintln!("warning: skipped {}: {reason}", path.display());
    }
    if set.examples.is_empty() {
        return Err(CliError::Lib(alimnet::Error::InvalidInput(
            "no usable training examples".to_string(),
        )));
    }

    let side = set.examples[0].spec.rows();
    let arch = if args.reduced {
        if side != 64 {
            return Err(CliError::Usage(format!(
                "--reduced expects 64x64 spectrograms, the data provides {side}x{side}"
            )));
        }
        let active = active_class_count(&set)?;
        ArchConfig::reduced(active)
    } else {
        if side != 256 {
            return Err(CliError::Usage(format!(
                "full-size training expects 256x256 spectrograms, the data provides {side}x{side}"
            )));
        }
        ArchConfig::full(cfg.class_mode)
    };

    let state = train(&cfg, &arch, &tf, &set.examples, set.reference_magnitude, Some(&args.out))?;
    let last = state.history.last().expect("at least one step");
    if json {
        println!(
            "{}",
            serde_json::json!({
                "steps": state.step,
                "ls": last.ls,
                "lc": last.lc,
                "g_objective": last.g_objective,
                "checkpoint": args.out.join("ckpt_final.almc"),
            })
        );
    } else {
        println!(
            "trained {} steps; final LS {:.4}, LC {:.4}, generator objective {:.4}",
            state.step, last.ls, last.lc, last.g_objective
        );
        println!("final checkpoint: {}", args.out.join("ckpt_final.almc").display());
    }
    Ok(())
}

fn active_class_count(set: &data::ExampleSet) -> Result<usize, CliError> {
    let mut seen = std::collections::BTreeSet::new();
    for ex in &set.examples {
        seen.insert(ex.class_index);
    }
    let max = *seen.iter().max().unwrap();
    if seen.len() != max + 1 {
        return Err(CliError::Usage(format!(
            "reduced mode needs contiguous class indices starting at 0, found {seen:?}"
        )));
    }
    Ok(seen.len().max(2))
}

fn run_generate(args: &GenerateArgs, json: bool) -> Result<(), CliError> {
    let seed = seed_or_env(args.seed);
    if args.count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    let req = GenerationRequest {
        checkpoint: args.ckpt.clone(),
        dastgah: args.dastgah,
        instrument: args.instrument,
        count: args.count,
        seed,
    };
    let (specs, ckpt) = generate(&req)?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Lib(alimnet::Error::io(&args.out, e)))?;
    let mut files = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        let stem = match args.instrument {
            Some(instr) => format!("{}_{}_{i}", args.dastgah.name(), instr.name()),
            None => format!("{}_{i}", args.dastgah.name()),
        };
        let clip = resynthesize(
            spec,
            &ckpt.transform,
            ckpt.reference_magnitude,
            args.gl_iters,
            seed.wrapping_add(1000 + i as u64),
        )?;
        let wav_path = args.out.join(format!("{stem}.wav"));
        wav::write_wav(&wav_path, &clip.samples, clip.sample_rate)?;
        if args.png {
            spectrogram_png(spec, &args.out.join(format!("{stem}.png")))?;
        }
        files.push(wav_path);
    }
    if json {
        println!("{}", serde_json::json!({ "files": files, "seed": seed }));
    } else {
        for f in &files {
            println!("{}", f.display());
        }
    }
    Ok(())
}

fn run_reconstruct(args: &ReconstructArgs, json: bool) -> Result<(), CliError> {
    let (samples, rate) = wav::read_wav(&args.input)?;
    let cfg = StftConfig::new(args.fft, args.hop);
    let spec = stft(&samples, &cfg)?;
    let rec = istft(&spec, &cfg, samples.len())?;
    let covered = rec.covered_count();
    let uncovered = samples.len() - covered;
    let max_err = samples
        .iter()
        .zip(&rec.samples)
        .zip(&rec.coverage)
        .filter(|(_, &c)| c)
        .map(|((a, b), _)| (a - b).abs())
        .fold(0.0f64, f64::max);
    wav::write_wav(&args.out, &rec.samples, rate)?;
    if json {
        println!(
            "{}",
            serde_json::json!({
                "samples": samples.len(),
                "covered": covered,
                "uncovered": uncovered,
                "max_error_covered": max_err,
                "spectrogram": [spec.rows(), spec.cols()],
                "out": args.out,
            })
        );
    } else {
        println!(
            "{} samples -> {}x{} spectrogram -> {}",
            samples.len(),
            spec.rows(),
            spec.cols(),
            args.out.display()
        );
        println!("covered samples: {covered} ({uncovered} uncovered), max reconstruction error {max_err:.3e}");
    }
    Ok(())
}

fn report_rows_json(report: &ParamReport) -> serde_json::Value {
    serde_json::json!(report
        .rows
        .iter()
        .map(|r| serde_json::json!({
            "name": r.name,
            "kind": r.describe,
            "output_shape": r.output_shape,
            "count": r.count,
        }))
        .collect::<Vec<_>>())
}

fn run_inspect(args: &InspectArgs, json: bool) -> Result<(), CliError> {
    let (disc_report, gen_report, arch) = match &args.ckpt {
        Some(path) => {
            let ckpt = alimnet::train::load_checkpoint(path)?;
            (ckpt.disc.param_report(), ckpt.gen.param_report(), ckpt.arch)
        }
        None => {
            let arch = ArchConfig::full(ClassMode::Seven);
            let (disc, gen) = build_pair(&arch, seed_or_env(args.seed))?;
            (disc.param_report(), gen.param_report(), arch)
        }
    };

    let is_default_full = arch == ArchConfig::full(ClassMode::Seven);
    let nonzero = disc_report.nonzero_counts();
    let mut matches = Vec::new();
    if is_default_full {
        for (i, &expected) in DEFAULT_DISC_LAYER_COUNTS.iter().enumerate() {
            let got = nonzero.get(i).copied().unwrap_or(0);
            matches.push((expected, got, expected == got));
        }
    }

    if json {
        println!(
            "{}",
            serde_json::json!({
                "discriminator": report_rows_json(&disc_report),
                "discriminator_total": disc_report.total(),
                "generator": report_rows_json(&gen_report),
                "generator_total": gen_report.total(),
                "reference_match": is_default_full && matches.iter().all(|m| m.2),
            })
        );
        return Ok(());
    }

    println!("discriminator ({} parameters):", disc_report.total());
    let mut param_row = 0usize;
    for row in &disc_report.rows {
        if row.is_activation() {
            continue;
        }
        let status = if row.count > 0 && is_default_full {
            let s = match matches.get(param_row) {
                Some(&(expected, _, ok)) if ok => format!("MATCH ({expected})"),
                Some(&(expected, got, _)) => format!("MISMATCH (expected {expected}, got {got})"),
                None => "appended".to_string(),
            };
            param_row += 1;
            s
        } else if row.count > 0 {
            param_row += 1;
            String::new()
        } else {
            String::new()
        };
        println!(
            "  {:<11} {:<22} {:>16} {:>8}  {status}",
            row.name,
            row.describe,
            format!("{:?}", row.output_shape),
            row.count
        );
    }
    println!("generator ({} parameters):", gen_report.total());
    for row in &gen_report.rows {
        if row.is_activation() {
            continue;
        }
        println!(
            "  {:<11} {:<22} {:>16} {:>8}",
            row.name,
            row.describe,
            format!("{:?}", row.output_shape),
            row.count
        );
    }
    Ok(())
}

fn run_gradcheck(args: &GradcheckArgs, json: bool) -> Result<(), CliError> {
    let report = alimnet::diffcore::layer_catalog_report(1e-3)?;
    let rows: Vec<_> = report
        .into_iter()
        .filter(|e| args.layer.as_deref().map_or(true, |l| e.name == l))
        .collect();
    if rows.is_empty() {
        return Err(CliError::Usage(format!(
            "no layer named {:?} in the verification catalog",
            args.layer.as_deref().unwrap_or("")
        )));
    }
    let tolerance = 1e-4;
    let mut all_ok = true;
    if json {
        println!(
            "{}",
            serde_json::json!(rows
                .iter()
                .map(|e| {
                    let ok = e.input_error < tolerance && e.param_error < tolerance;
                    all_ok &= ok;
                    serde_json::json!({
                        "layer": e.name,
                        "input_error": e.input_error,
                        "param_error": e.param_error,
                        "pass": ok,
                    })
                })
                .collect::<Vec<_>>())
        );
    } else {
        println!("{:<14} {:>14} {:>14}  result", "layer", "input err", "param err");
        for e in &rows {
            let ok = e.input_error < tolerance && e.param_error < tolerance;
            all_ok &= ok;
            println!(
                "{:<14} {:>14.3e} {:>14.3e}  {}",
                e.name,
                e.input_error,
                e.param_error,
                if ok { "PASS" } else { "FAIL" }
            );
        }
    }
    if all_ok {
        Ok(())
    } else {
        Err(CliError::Lib(alimnet::Error::Numeric(
            "gradient verification failed".to_string(),
        )))
    }
}
