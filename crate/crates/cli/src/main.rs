mod error;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use lipauth::authstore::{fingerprint_hex, EnrollmentStore};
use lipauth::config::RunConfig;
use lipauth::dataset::{split_frames, ClipBank};
use lipauth::eval::{self, VerificationReport};
use lipauth::fsutil::write_atomic;
use lipauth::par::Execution;
use lipauth::preprocess::{self, PreprocessConfig};
use lipauth::slowfast::SlowFastModel;
use lipauth::synth::{self, Manifest};
use lipauth::tensor::Tensor;
use lipauth::triplet::Trainer;
use lipauth::ClipId;

use error::{CliError, Code, Result};

#[derive(Parser)]
#[command(name = "lipauth", version, about = "Lip-motion pass-phrase authentication")]
struct Cli {
    /// Run every data-parallel stage on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic corpus with its manifest.
    GenCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides corpus.master_seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Crop and resample a raw video into a model-ready clip.
    Preprocess {
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        landmarks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train an embedder on the corpus' training split.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Run directory for config, history, checkpoints and the final model.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        max_iterations: Option<usize>,
        /// Overrides train.seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        checkpoint_every: Option<usize>,
    },
    /// Score a held-out split and write the verification report and ROC.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Report JSON path.
        #[arg(long)]
        out: PathBuf,
        /// ROC CSV path; defaults to roc.csv next to the report.
        #[arg(long)]
        roc: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        pair_budget: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        sweep_step: Option<f64>,
    },
    /// Store a pass-phrase embedding for a client.
    Enroll {
        #[command(flatten)]
        input: ClipInput,
        /// Seconds since the Unix epoch; defaults to now.
        #[arg(long)]
        enrolled_at: Option<i64>,
    },
    /// Check an utterance against an enrolled pass-phrase.
    Verify {
        #[command(flatten)]
        input: ClipInput,
        #[arg(long, allow_negative_numbers = true)]
        threshold: f64,
    },
}

#[derive(Args)]
struct ClipInput {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    client: String,
    #[arg(long)]
    phrase: String,
    /// Preprocessed clip, or a raw video when --landmarks is given.
    #[arg(long)]
    clip: PathBuf,
    #[arg(long)]
    landmarks: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |e: std::io::Error, p: &Path| CliError::new(Code::Io, format!("{}: {e}", p.display()));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io(e, dir))?;
    }
    write_atomic(path, bytes).map_err(|e| io(e, path))
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json value serializes"));
}

/// Preprocess settings that produce clips of the shape `model` expects.
fn preprocess_for(model: &SlowFastModel, base: &PreprocessConfig) -> Result<PreprocessConfig> {
    let m = model.config();
    let pre = PreprocessConfig {
        clip_length: m.clip_length,
        target_height: m.input.height,
        target_width: m.input.width,
        ..base.clone()
    };
    pre.validate()?;
    Ok(pre)
}

fn gen_corpus(out: &Path, config: Option<&Path>, seed: Option<u64>, exec: Execution) -> Result<()> {
    let mut cfg = load_config(config)?.corpus;
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    let manifest = synth::gen_corpus(&cfg, out, exec)?;
    print_json(&json!({
        "corpus": out.display().to_string(),
        "clips": manifest.entries.len(),
        "splits": manifest.splits,
    }));
    Ok(())
}

fn preprocess_cmd(video: &Path, landmarks: &Path, out: &Path, config: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?.preprocess;
    let clip = preprocess_file(video, landmarks, &cfg)?;
    preprocess::write_clip_file(out, &clip)?;
    Ok(())
}

fn preprocess_file(video: &Path, landmarks: &Path, cfg: &PreprocessConfig) -> Result<Tensor<f32>> {
    let raw = preprocess::read_clip_file(video)?;
    let marks = preprocess::read_landmarks_file(landmarks)?;
    let frames = split_frames(&raw)?;
    Ok(preprocess::preprocess_clip(&frames, &marks, cfg, ClipId::default())?.frames)
}

struct TrainArgs<'a> {
    corpus: &'a Path,
    out: &'a Path,
    config: Option<&'a Path>,
    max_iterations: Option<usize>,
    seed: Option<u64>,
    checkpoint_every: Option<usize>,
}

fn train(a: TrainArgs<'_>, exec: Execution) -> Result<()> {
    let manifest = Manifest::load(a.corpus)?;
    let mut cfg = load_config(a.config)?;
    if a.config.is_some() && cfg.corpus != manifest.config {
        eprintln!("note: using corpus settings from {}", a.corpus.display());
    }
    cfg.corpus = manifest.config.clone();
    if let Some(n) = a.max_iterations {
        cfg.train.max_iterations = n;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(k) = a.checkpoint_every {
        cfg.train.checkpoint_every = k;
    }
    cfg.validate()?;

    let clients = manifest.splits.train.clone();
    let bank = ClipBank::load(a.corpus, &manifest, &clients, &cfg.preprocess, exec)?;
    let mut model = SlowFastModel::build(cfg.model.clone(), cfg.model_seed)?;
    let ckpt_dir = a.out.join("checkpoints");
    let mut trainer = Trainer::new(&mut model, &bank, &clients, cfg.train.clone(), exec)?;
    let history = trainer.run(|r, m| {
        if r.iteration % 10 == 0 {
            eprintln!(
                "iteration {} loss {:.4} smoothed {:.4}",
                r.iteration, r.mean_loss, r.smoothed_loss
            );
        }
        if r.checkpoint {
            std::fs::create_dir_all(&ckpt_dir).map_err(|e| format!("{}: {e}", ckpt_dir.display()))?;
            m.save(&ckpt_dir.join(format!("iter_{:06}.lfa", r.iteration)))
                .map_err(|e| e.to_string())?;
        }
        Ok(())
    })?;

    write_file(&a.out.join("config.json"), cfg.to_json().as_bytes())?;
    write_file(&a.out.join("history.csv"), history.to_csv().as_bytes())?;
    let model_path = a.out.join("model.lfa");
    model.save(&model_path)?;
    print_json(&json!({
        "model": model_path.display().to_string(),
        "iterations": history.iterations(),
        "stopped_at": history.stopped_at,
        "final_smoothed_loss": history.smoothed_loss.last(),
        "fingerprint": fingerprint_hex(&model.fingerprint()),
    }));
    Ok(())
}

struct EvalArgs<'a> {
    model: &'a Path,
    corpus: &'a Path,
    split: &'a str,
    out: &'a Path,
    roc: Option<&'a Path>,
    config: Option<&'a Path>,
    pair_budget: Option<usize>,
    seed: Option<u64>,
    sweep_step: Option<f64>,
}

fn eval_cmd(a: EvalArgs<'_>, exec: Execution) -> Result<()> {
    if a.split == "train" {
        return Err(CliError::new(
            Code::Protocol,
            "refusing to evaluate on the training split; use --split val or --split test",
        ));
    }
    let manifest = Manifest::load(a.corpus)?;
    let eval_clients = manifest
        .splits
        .get(a.split)
        .ok_or_else(|| CliError::new(Code::Config, format!("unknown split {:?}", a.split)))?
        .to_vec();
    let cfg = load_config(a.config)?;
    let mut ev = cfg.eval.clone();
    if let Some(n) = a.pair_budget {
        ev.pair_budget = n;
    }
    if let Some(s) = a.seed {
        ev.seed = s;
    }
    if let Some(s) = a.sweep_step {
        ev.sweep_step = s;
    }
    let model = SlowFastModel::load(a.model)?;
    let pre = preprocess_for(&model, &cfg.preprocess)?;
    eval::check_open_set(&eval_clients, &manifest.splits.train)?;
    let bank = ClipBank::load(a.corpus, &manifest, &eval_clients, &pre, exec)?;
    let scores = eval::score_pairs(
        &model,
        &bank,
        &eval_clients,
        &manifest.splits.train,
        ev.pair_budget,
        ev.seed,
        exec,
    )?;
    let report = VerificationReport::from_scores(&scores, ev.sweep_step)?;
    let roc = a
        .roc
        .map(Path::to_path_buf)
        .unwrap_or_else(|| a.out.with_file_name("roc.csv"));
    write_file(a.out, report.to_json().as_bytes())?;
    write_file(&roc, eval::roc_to_csv(&report).as_bytes())?;
    print_json(&json!({
        "split": a.split,
        "eer": report.eer,
        "eer_threshold": report.eer_threshold,
        "exact_eer": report.exact_eer,
        "n_genuine": report.n_genuine,
        "n_imposter": report.n_imposter,
    }));
    Ok(())
}

fn load_clip(input: &ClipInput, model: &SlowFastModel) -> Result<Tensor<f32>> {
    let base = load_config(input.config.as_deref())?.preprocess;
    match &input.landmarks {
        Some(marks) => preprocess_file(&input.clip, marks, &preprocess_for(model, &base)?),
        None => Ok(preprocess::read_clip_file(&input.clip)?),
    }
}

fn enroll(input: &ClipInput, enrolled_at: Option<i64>) -> Result<()> {
    let mut store = EnrollmentStore::open(&input.store)?;
    let model = SlowFastModel::load(&input.model)?;
    let clip = load_clip(input, &model)?;
    let at = enrolled_at.unwrap_or_else(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs() as i64)
            .unwrap_or(0)
    });
    let record = store.enroll(&input.client, &input.phrase, &clip, &model, at)?;
    let summary = json!({
        "client": record.client_id,
        "phrase": record.phrase_id,
        "enrolled_at": record.enrolled_at,
        "model_fingerprint": fingerprint_hex(&record.model_fingerprint),
    });
    store.save(&input.store)?;
    print_json(&summary);
    Ok(())
}

fn verify(input: &ClipInput, threshold: f64) -> Result<()> {
    let store = EnrollmentStore::load(&input.store)?;
    let model = SlowFastModel::load(&input.model)?;
    let clip = load_clip(input, &model)?;
    let decision = store.authenticate(&input.client, &input.phrase, &clip, &model, threshold)?;
    print_json(&serde_json::to_value(decision).expect("decision serializes"));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    match cli.command {
        Command::GenCorpus { out, config, seed } => gen_corpus(&out, config.as_deref(), seed, exec),
        Command::Preprocess {
            video,
            landmarks,
            out,
            config,
        } => preprocess_cmd(&video, &landmarks, &out, config.as_deref()),
        Command::Train {
            corpus,
            out,
            config,
            max_iterations,
            seed,
            checkpoint_every,
        } => train(
            TrainArgs {
                corpus: &corpus,
                out: &out,
                config: config.as_deref(),
                max_iterations,
                seed,
                checkpoint_every,
            },
            exec,
        ),
        Command::Eval {
            model,
            corpus,
            split,
            out,
            roc,
            config,
            pair_budget,
            seed,
            sweep_step,
        } => eval_cmd(
            EvalArgs {
                model: &model,
                corpus: &corpus,
                split: &split,
                out: &out,
                roc: roc.as_deref(),
                config: config.as_deref(),
                pair_budget,
                seed,
                sweep_step,
            },
            exec,
        ),
        Command::Enroll { input, enrolled_at } => enroll(&input, enrolled_at),
        Command::Verify { input, threshold } => verify(&input, threshold),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
