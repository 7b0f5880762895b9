use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use csi_core::backward::{BackwardModel, DEFAULT_THRESHOLD};
use csi_core::service::Service;
use csi_core::session::{ForwardRequest, Session, SessionError};
use csi_core::textproc::{
    generate_synthetic_corpus, read_corpus, tokenize, write_corpus, Document, TextError, VocabSpec,
};
use csi_core::training::{
    corpus_vocab, evaluate, split_corpus, train_backward, train_forward, EpochMetrics, TrainConfig,
};
use csi_core::{inference, SummarizerModel};

use crate::{Command, SummarizeMode};

pub const FORWARD_CKPT: &str = "forward.ckpt";
pub const BACKWARD_CKPT: &str = "backward.ckpt";
pub const FORWARD_METRICS: &str = "metrics_forward.jsonl";
pub const BACKWARD_METRICS: &str = "metrics_backward.jsonl";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn runtime(e: impl fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn load_forward(dir: &Path) -> Result<SummarizerModel, CliError> {
    let path = dir.join(FORWARD_CKPT);
    SummarizerModel::from_checkpoint(&read_bytes(&path)?)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn load_backward(dir: &Path) -> Result<BackwardModel, CliError> {
    let path = dir.join(BACKWARD_CKPT);
    BackwardModel::from_checkpoint(&read_bytes(&path)?)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn load_corpus(path: &Path) -> Result<Vec<csi_core::textproc::CorpusExample>, CliError> {
    if !path.exists() {
        return Err(CliError::Runtime(format!(
            "cannot read {}: no such file",
            path.display()
        )));
    }
    read_corpus(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn print_json(value: &impl serde::Serialize) {
    println!(
        "{}",
        serde_json::to_string(value).expect("output serializes")
    );
}

fn write_metrics(path: &Path, curves: &[EpochMetrics]) -> Result<(), CliError> {
    let mut out = String::new();
    for m in curves {
        out.push_str(&serde_json::to_string(m).expect("metrics serialize"));
        out.push('\n');
    }
    write_bytes(path, out.as_bytes())
}

fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>, CliError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    read_text(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
        })
        .collect()
}

fn parse_selection(spec: &str, n_sentences: usize) -> Result<Vec<usize>, CliError> {
    if spec.trim() == "all" {
        return Ok((0..n_sentences).collect());
    }
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let idx: usize = part
            .parse()
            .map_err(|_| CliError::Usage(format!("--select: '{part}' is not a sentence index")))?;
        if idx >= n_sentences {
            return Err(CliError::Usage(format!(
                "--select: sentence {idx} out of range, the input has {n_sentences} sentences"
            )));
        }
        out.push(idx);
    }
    Ok(out)
}

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenCorpus {
            out,
            n,
            sentences,
            seed,
        } => {
            let corpus = generate_synthetic_corpus(seed, n, sentences, &VocabSpec::default())
                .map_err(|e| match e {
                    TextError::Invalid(_) | TextError::VocabSpec(_) => {
                        CliError::Usage(e.to_string())
                    }
                    other => runtime(other),
                })?;
            let file = File::create(&out)
                .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", out.display())))?;
            let mut writer = BufWriter::new(file);
            write_corpus(&mut writer, &corpus)
                .and_then(|_| writer.flush())
                .map_err(runtime)?;
            log::info!("wrote {} examples to {}", corpus.len(), out.display());
            print_json(&serde_json::json!({ "out": out, "examples": corpus.len() }));
            Ok(())
        }
        Command::Train {
            corpus,
            out_dir,
            epochs,
            hidden_dim,
            seed,
            backward,
            batch_size,
            learning_rate,
        } => {
            let corpus = load_corpus(&corpus)?;
            let cfg = TrainConfig {
                epochs,
                batch_size,
                learning_rate,
                seed,
                ..TrainConfig::default()
            };
            cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            if hidden_dim == 0 {
                return Err(CliError::Usage("--hidden-dim must be at least 1".into()));
            }
            fs::create_dir_all(&out_dir).map_err(|e| {
                CliError::Runtime(format!("cannot create {}: {e}", out_dir.display()))
            })?;
            let vocab = corpus_vocab(&corpus);
            log::info!(
                "training forward model on {} examples, vocabulary {}",
                corpus.len(),
                vocab.len()
            );
            let (model, curves) =
                train_forward(&corpus, &vocab, hidden_dim, &cfg).map_err(runtime)?;
            write_bytes(
                &out_dir.join(FORWARD_CKPT),
                &model.to_checkpoint().map_err(runtime)?,
            )?;
            write_metrics(&out_dir.join(FORWARD_METRICS), &curves)?;
            let mut backward_curves = Vec::new();
            if backward {
                log::info!("training backward model");
                let (bwd, bcurves) =
                    train_backward(&corpus, &vocab, hidden_dim, &cfg).map_err(runtime)?;
                write_bytes(
                    &out_dir.join(BACKWARD_CKPT),
                    &bwd.to_checkpoint().map_err(runtime)?,
                )?;
                write_metrics(&out_dir.join(BACKWARD_METRICS), &bcurves)?;
                backward_curves = bcurves;
            }
            print_json(&serde_json::json!({
                "out_dir": out_dir,
                "forward": curves.last(),
                "backward": backward_curves.last(),
            }));
            Ok(())
        }
        Command::Eval { corpus, model } => {
            let corpus = load_corpus(&corpus)?;
            let fwd = load_forward(&model)?;
            let bwd = load_backward(&model)?;
            let (_, held_out) = split_corpus(&corpus);
            let mut report = evaluate(&fwd, &bwd, held_out).map_err(runtime)?;
            report.loss_curves = read_metrics(&model.join(FORWARD_METRICS))?;
            report
                .loss_curves
                .extend(read_metrics(&model.join(BACKWARD_METRICS))?);
            print_json(&report);
            Ok(())
        }
        Command::Serve {
            model,
            port,
            host,
            persist,
        } => {
            let forward_bytes = read_bytes(&model.join(FORWARD_CKPT))?;
            let backward_bytes = read_bytes(&model.join(BACKWARD_CKPT))?;
            let mut service =
                Service::from_checkpoints(&forward_bytes, &backward_bytes).map_err(runtime)?;
            if let Some(dir) = persist {
                fs::create_dir_all(&dir).map_err(|e| {
                    CliError::Runtime(format!("cannot create {}: {e}", dir.display()))
                })?;
                service = service.with_persist(dir);
            }
            crate::server::serve(service, &host, port).map_err(runtime)
        }
        Command::Summarize {
            model,
            input,
            select,
            mode,
            n,
        } => {
            let text = read_text(&input)?;
            let fwd = load_forward(&model)?;
            let bwd = load_backward(&model)?;
            let mut session = Session::new("cli", &text).map_err(runtime)?;
            let selection = parse_selection(&select, session.document.n_sentences())?;
            session.set_selection(&selection).map_err(runtime)?;
            let request = match mode {
                SummarizeMode::InitWith => ForwardRequest::init_with(n),
                SummarizeMode::Add => ForwardRequest::add_sentence(),
            };
            session
                .run_forward(&fwd, &bwd, &request)
                .map_err(|e| match e {
                    SessionError::Inference(inference::InferenceError::InvalidRequest(m)) => {
                        CliError::Usage(m)
                    }
                    other => runtime(other),
                })?;
            println!("{}", session.to_json());
            Ok(())
        }
        Command::Attribute {
            model,
            input,
            summary,
            threshold,
        } => {
            let threshold = threshold.unwrap_or(DEFAULT_THRESHOLD);
            if !(0.0..=1.0).contains(&threshold) {
                return Err(CliError::Usage(format!(
                    "--threshold must lie in [0, 1], got {threshold}"
                )));
            }
            let document = Document::from_text(&read_text(&input)?);
            if document.is_empty() {
                return Err(CliError::Runtime(format!(
                    "{} contains no tokens",
                    input.display()
                )));
            }
            let summary_tokens = tokenize(&read_text(&summary)?);
            let bwd = load_backward(&model)?;
            let report = bwd
                .attribute(&document, &summary_tokens, threshold)
                .map_err(runtime)?;
            print_json(&report);
            Ok(())
        }
        Command::LeverDemo => {
            print!("{}", inference::lever_demo());
            Ok(())
        }
    }
}
