//! `dims`: train, evaluate, and run the joint summary and cover model.
//!
//! Exit codes: 0 success, 1 gradient check failed, 2 usage or config error,
//! 3 data error, 4 checkpoint/config/data mismatch, 5 training diverged.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dims::checkpoint::{self, Loaded};
use dims::config::{FrameFeaturizer, RunConfig};
use dims::data::{generate, load_dataset, write_dataset, Example, FrameStorage, Sample, SyntheticSpec, Vocabulary};
use dims::evaluate::evaluate;
use dims::gradcheck;
use dims::metrics::EvalReport;
use dims::model::Dims;
use dims::training::{TrainOptions, Trainer};
use dims::Error;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "dims", version, about = "Joint article summarization and video cover selection")]
struct Cli {
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Flat JSON config file; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set hidden_dim=64`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Switch off one interaction path.
    #[arg(long, value_parser = dims::config::ABLATIONS)]
    ablation: Vec<String>,
    /// Overrides the config seed and `DIMS_SEED`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Featurizer {
    Passthrough,
    Conv,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train on a dataset, writing checkpoints and `log.csv` to `--out`.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint; its stored config is used.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Decode and score a dataset.
    Eval {
        /// Checkpoint manifest (required unless `--report avgN`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Beam width; defaults to the checkpoint's `beam_size`.
        #[arg(long)]
        beam: Option<usize>,
        /// `single`, or `avgN` to average the N best checkpoints in `--checkpoints`.
        #[arg(long, default_value = "single")]
        report: String,
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        /// Write per-sample outputs as JSON lines.
        #[arg(long)]
        details: Option<PathBuf>,
    },
    /// Summarize one sample and rank its cover candidates.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSONL dataset holding the sample.
        #[arg(long)]
        data: PathBuf,
        /// Sample id; defaults to the first record.
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        beam: Option<usize>,
        /// Write the article-by-segment attention matrix as JSON.
        #[arg(long)]
        dump_attention: Option<PathBuf>,
    },
    /// Generate a synthetic dataset.
    Synth {
        /// Generator spec as JSON; missing keys take their defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        noise: Option<f32>,
        /// Store frames in a binary sidecar next to the manifest.
        #[arg(long)]
        sidecar: bool,
    },
    /// Finite-difference check of every model gradient at tiny dimensions.
    Gradcheck {
        #[arg(long, value_enum, default_value = "passthrough")]
        featurizer: Featurizer,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = gradcheck::DEFAULT_EPS)]
        eps: f64,
        #[arg(long, default_value_t = gradcheck::DEFAULT_TOL)]
        tol: f64,
        /// Perturb the analytic gradient of this parameter.
        #[arg(long)]
        corrupt: Option<String>,
    },
}

enum Failure {
    Core(Error),
    GradCheck(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::UnknownConfigKey(_) | Error::Config { .. } | Error::Input(_) => 2,
        Error::Data { .. } | Error::Io { .. } | Error::Json(_) => 3,
        Error::Mismatch(_) | Error::Checkpoint(_) | Error::Tensor(_) => 4,
        Error::NonFiniteLoss { .. } => 5,
    }
}

fn emit(json_mode: bool, value: &Value, text: impl FnOnce() -> String) {
    if json_mode {
        println!("{value}");
    } else {
        println!("{}", text());
    }
}

fn build_config(args: &ConfigArgs) -> dims::Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            RunConfig::from_json_str(&text)?
        }
        None => RunConfig::default(),
    };
    if let Ok(s) = std::env::var("DIMS_SEED") {
        cfg.set("seed", &s)?;
    }
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Input(format!("`--set {o}` is not KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    for a in &args.ablation {
        cfg.apply_ablation(a)?;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_nonempty(path: &Path) -> dims::Result<Vec<Sample>> {
    let samples = load_dataset(path)?;
    if samples.is_empty() {
        return Err(Error::Data {
            line: None,
            id: None,
            reason: format!("{} has no samples", path.display()),
        });
    }
    Ok(samples)
}

fn prepare_all(model: &Dims, samples: &[Sample]) -> dims::Result<Vec<Example>> {
    samples.iter().map(|s| model.prepare(s)).collect()
}

/// Keys that may change when resuming without altering the parameter layout.
const RESUMABLE_KEYS: [&str; 4] = ["epochs", "validate_every", "keep_best", "beam_size"];

fn train(
    json_mode: bool,
    cfg: &ConfigArgs,
    data: &Path,
    val: Option<&Path>,
    out: &Path,
    resume: Option<&Path>,
    max_steps: Option<usize>,
) -> Outcome {
    let train_samples = load_nonempty(data)?;
    let val_samples = match val {
        Some(p) => load_dataset(p)?,
        None => Vec::new(),
    };
    let mut trainer = match resume {
        Some(path) => {
            if cfg.config.is_some() || !cfg.ablation.is_empty() || cfg.seed.is_some() {
                return Err(Error::Input("--resume uses the checkpoint's config; only --set of schedule keys is allowed".into()).into());
            }
            let mut loaded: Loaded = checkpoint::load(path)?;
            for o in &cfg.overrides {
                let (k, v) = o
                    .split_once('=')
                    .ok_or_else(|| Error::Input(format!("`--set {o}` is not KEY=VALUE")))?;
                if !RESUMABLE_KEYS.contains(&k.trim()) {
                    return Err(Error::Input(format!("`{k}` cannot change on resume")).into());
                }
                loaded.model.config.set(k.trim(), v.trim())?;
            }
            Trainer::resume(loaded)
        }
        None => {
            let config = build_config(cfg)?;
            let vocab = Vocabulary::build(&train_samples, config.vocab_size)?;
            Trainer::new(Dims::new(config, vocab)?)
        }
    };
    let train_ex = prepare_all(&trainer.model, &train_samples)?;
    let val_ex = prepare_all(&trainer.model, &val_samples)?;
    let opts = TrainOptions {
        out_dir: Some(out.to_path_buf()),
        max_steps,
    };
    let records = trainer.train(&train_ex, &val_ex, &opts, |r| {
        match (r.val_rouge_l, r.val_map) {
            (Some(rl), Some(map)) => log::info!(
                "step {} epoch {} loss {:.4} (seq {:.4}, pic {:.4}) val rougeL {:.4} map {:.4}",
                r.step,
                r.epoch,
                r.l_total,
                r.l_seq,
                r.l_pic,
                rl,
                map
            ),
            _ => log::debug!("step {} epoch {} loss {:.4}", r.step, r.epoch, r.l_total),
        }
    })?;
    let best: Vec<Value> = trainer
        .best
        .iter()
        .map(|(s, step, p)| json!({"rougeL": s, "step": step, "path": p}))
        .collect();
    let last = records.last();
    let value = json!({
        "steps": trainer.progress.step,
        "epochs": trainer.progress.epoch,
        "final_loss": last.map(|r| r.l_total),
        "last_checkpoint": out.join(dims::training::LAST_CHECKPOINT),
        "best": best,
    });
    emit(json_mode, &value, || {
        let mut s = format!(
            "trained {} steps ({} epochs); checkpoints in {}",
            trainer.progress.step,
            trainer.progress.epoch,
            out.display()
        );
        if let Some(r) = last {
            s.push_str(&format!("\nfinal batch loss {:.4} (seq {:.4}, pic {:.4})", r.l_total, r.l_seq, r.l_pic));
        }
        for (score, step, p) in &trainer.best {
            s.push_str(&format!("\nbest step {step}: val rougeL {score:.4} at {}", p.display()));
        }
        s
    });
    Ok(())
}

fn report_text(r: &EvalReport) -> String {
    let mut s = format!(
        "rouge1 {:.4}\nrouge2 {:.4}\nrougeL {:.4}\nmap {:.4}",
        r.rouge1, r.rouge2, r.rouge_l, r.map
    );
    for (k, v) in &r.r_at_k {
        s.push_str(&format!("\n{k} {v:.4}"));
    }
    s
}

fn parse_report(report: &str) -> dims::Result<Option<usize>> {
    if report == "single" {
        return Ok(None);
    }
    report
        .strip_prefix("avg")
        .and_then(|n| n.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .map(Some)
        .ok_or_else(|| Error::Input(format!("--report must be `single` or `avgN`, got `{report}`")))
}

/// The `n` checkpoints in `dir` with the highest stored validation ROUGE-L.
fn best_checkpoints(dir: &Path, n: usize) -> dims::Result<Vec<PathBuf>> {
    let mut scored = Vec::new();
    for p in checkpoint::list(dir)? {
        if let Some(m) = checkpoint::read_manifest(&p)?.metrics {
            scored.push((m.rouge_l, p));
        }
    }
    if scored.is_empty() {
        return Err(Error::Input(format!("no checkpoints with validation metrics in {}", dir.display())));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(n).map(|(_, p)| p).collect())
}

fn eval(
    json_mode: bool,
    checkpoint_path: Option<&Path>,
    data: &Path,
    beam: Option<usize>,
    report: &str,
    checkpoints: Option<&Path>,
    details: Option<&Path>,
) -> Outcome {
    let samples = load_nonempty(data)?;
    let paths = match (parse_report(report)?, checkpoint_path, checkpoints) {
        (None, Some(c), _) => vec![c.to_path_buf()],
        (None, None, _) => return Err(Error::Input("eval needs --checkpoint".into()).into()),
        (Some(n), _, Some(dir)) => best_checkpoints(dir, n)?,
        (Some(_), _, None) => return Err(Error::Input("--report avgN needs --checkpoints DIR".into()).into()),
    };
    let mut reports = Vec::new();
    let mut detail_lines = Vec::new();
    for path in &paths {
        let model = checkpoint::load(path)?.model;
        let ex = prepare_all(&model, &samples)?;
        let (r, outputs) = evaluate(&model, &ex, beam.unwrap_or(model.config.beam_size))?;
        log::info!("{}: rougeL {:.4} map {:.4}", path.display(), r.rouge_l, r.map);
        for o in outputs {
            let mut v = serde_json::to_value(&o).map_err(Error::from)?;
            v["checkpoint"] = json!(path);
            detail_lines.push(v.to_string());
        }
        reports.push(r);
    }
    if let Some(p) = details {
        let mut text = detail_lines.join("\n");
        text.push('\n');
        fs::write(p, text).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        })?;
    }
    let avg = EvalReport::average(&reports)?;
    let value = json!({"checkpoints": paths, "samples": samples.len(), "metrics": avg});
    emit(json_mode, &value, || {
        format!("{} sample(s), {} checkpoint(s)\n{}", samples.len(), paths.len(), report_text(&avg))
    });
    Ok(())
}

fn infer(
    json_mode: bool,
    checkpoint_path: &Path,
    data: &Path,
    id: Option<&str>,
    beam: Option<usize>,
    dump: Option<&Path>,
) -> Outcome {
    let samples = load_nonempty(data)?;
    let sample = match id {
        Some(id) => samples.iter().find(|s| s.id == id).ok_or_else(|| Error::Data {
            line: None,
            id: Some(id.to_string()),
            reason: format!("not found in {}", data.display()),
        })?,
        None => &samples[0],
    };
    let model = checkpoint::load(checkpoint_path)?.model;
    let ex = model.prepare(sample)?;
    let inf = model.infer(&ex, beam.unwrap_or(model.config.beam_size))?;
    if let Some(p) = dump {
        let Some(e) = &inf.attention else {
            return Err(Error::Input("the model has no global attention to dump".into()).into());
        };
        let rows: Vec<&[f64]> = (0..e.rows()).map(|r| e.row_slice(r)).collect();
        let v = json!({"id": sample.id, "shape": [e.rows(), e.cols()], "rows": rows});
        fs::write(p, v.to_string()).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        })?;
    }
    let value = json!({
        "id": sample.id,
        "summary": inf.summary.join(" "),
        "finished": inf.finished,
        "cover": inf.cover,
        "scores": inf.scores,
    });
    emit(json_mode, &value, || {
        let scores: Vec<String> = inf.scores.iter().map(|s| format!("{s:.4}")).collect();
        format!(
            "id {}\nsummary {}\ncover {}\nscores {}",
            sample.id,
            inf.summary.join(" "),
            inf.cover,
            scores.join(" ")
        )
    });
    Ok(())
}

fn synth(
    json_mode: bool,
    spec_path: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    samples: Option<usize>,
    noise: Option<f32>,
    sidecar: bool,
) -> Outcome {
    let mut spec: SyntheticSpec = match spec_path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.to_path_buf(),
                source: e,
            })?;
            serde_json::from_str(&text).map_err(|e| Error::Config {
                key: "spec".into(),
                reason: e.to_string(),
            })?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(n) = samples {
        spec.samples = n;
    }
    if let Some(n) = noise {
        spec.noise = n;
    }
    let data = generate(&spec)?;
    let storage = if sidecar { FrameStorage::Sidecar } else { FrameStorage::Inline };
    write_dataset(out, &data, storage)?;
    let value = json!({"out": out, "samples": data.len(), "spec": spec});
    emit(json_mode, &value, || format!("wrote {} samples to {}", data.len(), out.display()));
    Ok(())
}

fn gradcheck_cmd(json_mode: bool, featurizer: Featurizer, seed: u64, eps: f64, tol: f64, corrupt: Option<&str>) -> Outcome {
    let f = match featurizer {
        Featurizer::Passthrough => FrameFeaturizer::Passthrough,
        Featurizer::Conv => FrameFeaturizer::Conv,
    };
    let r = gradcheck::run(&gradcheck::tiny_config(f), seed, eps, tol, corrupt)?;
    let worst = r.worst.as_ref().map(|(n, i)| format!("{n}[{i}]"));
    let value = json!({
        "passed": r.passed,
        "max_rel_err": r.max_rel_err,
        "tol": r.tol,
        "checked": r.checked,
        "worst": worst,
        "failure": r.failure,
    });
    emit(json_mode, &value, || {
        format!(
            "{} max relative error {:.3e} (tol {:.0e}) over {} coordinates; worst {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.max_rel_err,
            r.tol,
            r.checked,
            worst.as_deref().unwrap_or("-")
        )
    });
    if r.passed {
        Ok(())
    } else {
        let name = r.worst.map(|(n, _)| n).or(r.failure).unwrap_or_default();
        Err(Failure::GradCheck(name))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let j = cli.json;
    let outcome = match &cli.cmd {
        Cmd::Train {
            cfg,
            data,
            val,
            out,
            resume,
            max_steps,
        } => train(j, cfg, data, val.as_deref(), out, resume.as_deref(), *max_steps),
        Cmd::Eval {
            checkpoint,
            data,
            beam,
            report,
            checkpoints,
            details,
        } => eval(
            j,
            checkpoint.as_deref(),
            data,
            *beam,
            report,
            checkpoints.as_deref(),
            details.as_deref(),
        ),
        Cmd::Infer {
            checkpoint,
            data,
            id,
            beam,
            dump_attention,
        } => infer(j, checkpoint, data, id.as_deref(), *beam, dump_attention.as_deref()),
        Cmd::Synth {
            spec,
            out,
            seed,
            samples,
            noise,
            sidecar,
        } => synth(j, spec.as_deref(), out, *seed, *samples, *noise, *sidecar),
        Cmd::Gradcheck {
            featurizer,
            seed,
            eps,
            tol,
            corrupt,
        } => gradcheck_cmd(j, *featurizer, *seed, *eps, *tol, corrupt.as_deref()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::GradCheck(name)) => {
            eprintln!("error: gradient check failed; worst parameter `{name}`");
            ExitCode::from(1)
        }
        Err(Failure::Core(e)) => {
            let code = exit_code(&e);
            if j {
                println!("{}", json!({"error": e.to_string(), "exit_code": code}));
            }
            eprintln!("error: {e}");
            ExitCode::from(code)
        }
    }
}
