use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use karmalevel::analysis;
use karmalevel::checkpoint::Checkpoint;
use karmalevel::dataset::{DatasetBundle, DatasetOptions};
use karmalevel::diagnostics::micro_gradcheck;
use karmalevel::evaluation::{self, BaselineKind, LevelF1Report};
use karmalevel::model::{Model, TextMode, Variant};
use karmalevel::numerics::Precision;
use karmalevel::quantizer::QuantizerSet;
use karmalevel::synthgen::{self, TextSignal};
use karmalevel::thread::{parse_threads, save_threads, validate_thread, Thread};
use karmalevel::training::{self, select_initial_lr, write_log, HeldOut};
use karmalevel::{Error, Result};
use serde::Serialize;
use serde_json::json;

use crate::manifest::{beside, Recorder};
use crate::profile::{self, RunConfig};
use crate::{exit, AnalyzeArgs, BuildDatasetArgs, EvalArgs, Failure, FitQuantizerArgs, GradcheckArgs, ModelFlags, SynthArgs, TrainArgs, ValidateArgs};

type CmdResult = std::result::Result<(), Failure>;

/// The micro gradient check passes below this relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

fn write_file(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_file(path, serde_json::to_string_pretty(value)? + "\n")
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")))
    }
}

pub fn synth(a: SynthArgs) -> CmdResult {
    let mut rec = Recorder::start("synth");
    if let Some(c) = &a.config {
        rec.input(c);
    }
    let mut cfg = profile::gen_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.threads {
        cfg.n_threads = n;
    }
    if let Some(t) = &a.text {
        cfg.text.signal = t.parse::<TextSignal>()?;
    }
    let corpus = synthgen::generate(&cfg)?;
    save_threads(&a.out, &corpus)?;
    rec.finish(&beside(&a.out), serde_json::to_value(&cfg).map_err(Error::from)?, Some(cfg.seed), std::slice::from_ref(&a.out))?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct Problem {
    line: usize,
    thread_id: Option<String>,
    message: String,
}

#[derive(Debug, Serialize)]
struct ValidationReport {
    lines: usize,
    valid_threads: usize,
    problems: Vec<Problem>,
    summary: synthgen::CorpusSummary,
}

pub fn validate(a: ValidateArgs) -> CmdResult {
    let mut rec = Recorder::start("validate");
    rec.input(&a.input);
    let file = File::open(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let mut valid: Vec<Thread> = Vec::new();
    let mut problems = Vec::new();
    let mut lines = 0;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&a.input, e))?;
        if line.trim().is_empty() {
            continue;
        }
        lines += 1;
        match serde_json::from_str::<Thread>(&line) {
            Err(e) => problems.push(Problem {
                line: i + 1,
                thread_id: None,
                message: format!("malformed thread record: {e}"),
            }),
            Ok(t) => match validate_thread(&t) {
                Ok(()) => valid.push(t),
                Err(v) => problems.push(Problem {
                    line: i + 1,
                    thread_id: Some(t.thread_id.clone()),
                    message: v.to_string(),
                }),
            },
        }
    }
    let report = ValidationReport {
        lines,
        valid_threads: valid.len(),
        summary: synthgen::describe(&valid),
        problems,
    };
    match &a.out {
        Some(out) => {
            write_json(out, &report)?;
            rec.finish(&beside(out), json!({}), None, std::slice::from_ref(out))?;
        }
        None => println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?),
    }
    if report.problems.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verdict {
            code: exit::INVALID_DATA,
            kind: "invalid_data",
            message: format!("{} of {} threads failed validation", report.problems.len(), lines),
        })
    }
}

pub fn fit_quantizer(a: FitQuantizerArgs) -> CmdResult {
    let mut rec = Recorder::start("fit-quantizer");
    rec.input(&a.input);
    let threads = parse_threads(&a.input)?;
    let q = QuantizerSet::fit(&threads)?;
    write_json(&a.out, &q)?;
    rec.finish(&beside(&a.out), json!({}), None, std::slice::from_ref(&a.out))?;
    Ok(())
}

pub fn build_dataset(a: BuildDatasetArgs) -> CmdResult {
    let mut rec = Recorder::start("build-dataset");
    rec.input(&a.input);
    let mut options: DatasetOptions = profile::layered(&DatasetOptions::default(), a.config.as_deref())?;
    if let Some(s) = a.seed {
        options.seed = s;
    }
    let threads = parse_threads(&a.input)?;
    let bundle = match &a.quantizer {
        Some(qp) => {
            rec.input(qp);
            let text = std::fs::read_to_string(qp).map_err(|e| Error::io(qp, e))?;
            let q: QuantizerSet = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", qp.display())))?;
            DatasetBundle::build_with(&threads, q, options.clone())?
        }
        None => DatasetBundle::build(&threads, options.clone())?,
    };
    bundle.save(&a.out)?;
    let config = json!({
        "options": options,
        "sizes": {"train": bundle.train.len(), "validation": bundle.validation.len(), "test": bundle.test.len()},
        "vocab": bundle.vocab.sizes(),
    });
    rec.finish(&beside(&a.out), config, Some(options.seed), std::slice::from_ref(&a.out))?;
    Ok(())
}

/// Desk profile, then `--config`, then the remaining flags.
fn resolve(flags: &ModelFlags) -> Result<RunConfig> {
    let mut cfg = profile::run_config(flags.config.as_deref())?;
    if let Some(s) = flags.seed {
        cfg.model.seed = s;
        cfg.train.seed = s;
    }
    let text = match &flags.text {
        Some(t) => t.parse::<TextMode>()?,
        None => cfg.model.text_mode,
    };
    let variant = match &flags.variant {
        Some(v) => Some(v.parse::<Variant>()?),
        None => None,
    };
    cfg.model = match variant {
        Some(v) => cfg.model.with_variant(v, text),
        None => {
            cfg.model.text_mode = text;
            cfg.model
        }
    };
    if let Some(p) = &flags.precision {
        cfg.model.precision = match p.as_str() {
            "f32" => Precision::F32,
            "f64" => Precision::F64,
            other => return Err(Error::Config(format!("unknown precision {other:?}"))),
        };
    }
    cfg.train.validate()?;
    Ok(cfg)
}

pub fn train(a: TrainArgs) -> CmdResult {
    let mut rec = Recorder::start("train");
    rec.input(&a.input);
    if let Some(c) = &a.model.config {
        rec.input(c);
    }
    let mut cfg = resolve(&a.model)?;
    let data = DatasetBundle::load(&a.input)?;
    cfg.model.vocab = data.vocab.sizes();
    cfg.model.validate()?;
    ensure_dir(&a.out)?;

    let factory = || Model::new(cfg.model.clone());
    let lr = select_initial_lr(&cfg.train, factory, &data.train, &data.validation)?;
    let outcome = training::train(&cfg.train, factory()?, lr, &data.train, &mut HeldOut(&data.validation))?;

    let ckpt_path = a.out.join("checkpoint.bin");
    let log_path = a.out.join("train_log.jsonl");
    Checkpoint {
        model: outcome.model,
        vocab: Some(data.vocab.clone()),
        normalizer: Some(data.normalizer.clone()),
        quantizers: Some(data.quantizers.clone()),
    }
    .save(&ckpt_path)?;
    let mut w = BufWriter::new(File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    write_log(&mut w, &outcome.log)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&log_path, e))?;

    let config = json!({"run": cfg, "selected_lr": lr, "state": outcome.state});
    rec.finish(&a.out.join("manifest.json"), config, Some(cfg.train.seed), &[ckpt_path, log_path])?;
    Ok(())
}

fn variant_tag(model: &Model) -> String {
    let v = Variant::of_encoder(model.config.context_encoder).map_or_else(|| "feedforward".to_string(), |v| v.to_string());
    if model.config.uses_text() {
        format!("{v}+{}", model.config.text_mode)
    } else {
        v
    }
}

fn write_report(dir: &Path, report: &LevelF1Report) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let json_path = dir.join("report.json");
    let csv_path = dir.join("report.csv");
    write_file(&json_path, report.to_json() + "\n")?;
    write_file(&csv_path, report.to_csv())?;
    Ok(vec![json_path, csv_path])
}

fn load_checked(path: &Path, data: &DatasetBundle) -> Result<Model> {
    require_file(path)?;
    let ckpt = Checkpoint::load(path)?;
    if let Some(v) = &ckpt.vocab {
        if v.sizes() != data.vocab.sizes() {
            return Err(Error::Config("checkpoint vocabulary does not match the dataset bundle".into()));
        }
    }
    for ex in data.test.iter() {
        ckpt.model.check_example(ex)?;
    }
    Ok(ckpt.model)
}

pub fn eval(a: EvalArgs) -> CmdResult {
    let mut rec = Recorder::start("eval");
    rec.input(&a.input);
    let data = DatasetBundle::load(&a.input)?;
    let (report, config) = match &a.checkpoint {
        Some(path) => {
            rec.input(path);
            let model = load_checked(path, &data)?;
            let tag = a.model.variant.clone().unwrap_or_else(|| variant_tag(&model));
            let config = json!({"model": model.config});
            (evaluation::evaluate(&model, &data.test, &tag), config)
        }
        None => {
            let variant = a.model.variant.as_deref().ok_or_else(|| {
                Error::Config("eval needs --checkpoint or a baseline --variant (prior, subtree, convstruct)".into())
            })?;
            if variant == "prior" {
                (evaluation::prior_baseline(&data.train, &data.test), json!({"variant": "prior"}))
            } else {
                let kind = match variant {
                    "subtree" => BaselineKind::SubtreeSize,
                    "convstruct" => BaselineKind::ConvStruct,
                    other => {
                        return Err(Error::Config(format!(
                            "variant {other:?} has no built-in baseline; train it and pass --checkpoint"
                        ))
                        .into())
                    }
                };
                let cfg = resolve(&ModelFlags {
                    variant: None,
                    text: None,
                    ..a.model
                })?;
                let report = evaluation::run_baseline(kind, &cfg.train, &data, cfg.model.seed)?;
                (report, json!({"variant": variant, "train": cfg.train, "seed": cfg.model.seed}))
            }
        }
    };
    let outputs = write_report(&a.out, &report)?;
    println!("{}: macro F1 {:.2}", report.variant, report.macro_f1);
    rec.finish(&a.out.join("manifest.json"), config, None, &outputs)?;
    Ok(())
}

pub fn analyze(a: AnalyzeArgs) -> CmdResult {
    let mut rec = Recorder::start("analyze");
    rec.input(&a.input);
    rec.input(&a.checkpoint);
    let data = DatasetBundle::load(&a.input)?;
    let model = load_checked(&a.checkpoint, &data)?;
    let out = analysis::analyze(&model, &data.test)?;
    let mut outputs = analysis::export(&out, &data.test, &a.out)?;
    let groups_path = a.out.join("groups.json");
    write_json(&groups_path, &json!({"groups": out.groups, "gate_report": out.gate_report}))?;
    outputs.push(groups_path);
    rec.finish(&a.out.join("manifest.json"), json!({"model": model.config}), None, &outputs)?;
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> CmdResult {
    let rec = Recorder::start("gradcheck");
    let report = micro_gradcheck(a.seed);
    let pass = report.max_rel_error < GRADCHECK_TOLERANCE;
    let body = json!({
        "seed": a.seed,
        "max_rel_error": report.max_rel_error,
        "worst_param": report.worst_param,
        "worst_index": report.worst_index,
        "checked": report.checked,
        "tolerance": GRADCHECK_TOLERANCE,
        "pass": pass,
    });
    println!("{body}");
    if let Some(out) = &a.out {
        write_json(out, &body)?;
        rec.finish(&beside(out), json!({}), Some(a.seed), std::slice::from_ref(out))?;
    }
    if pass {
        Ok(())
    } else {
        Err(Failure::Verdict {
            code: exit::CHECK_FAILED,
            kind: "gradcheck_failed",
            message: format!("max relative error {:.3e} ≥ {GRADCHECK_TOLERANCE:e}", report.max_rel_error),
        })
    }
}
