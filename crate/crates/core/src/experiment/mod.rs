//! Experiment runner behind the command-line tool.

mod config;
mod pipeline;

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::{ExperimentConfig, PolicyChoice, Stage, SweepConfig, TrainSection};
pub use pipeline::{
    evaluate, label_corpus, run_sentence, train_on_corpus, training_pairs, AnyPolicy, EvalSettings, Evaluation,
    LabeledSentence, SentenceResult, Summary,
};

use crate::decoder::wait_k_policy;
use crate::error::Error;
use crate::policy::{PolicyParams, TrainStatus};
use crate::toy::{gen_corpus, ParallelExample, ToyModel, ToyModelSpec};

/// Failure of a command, split by exit status.
#[derive(Debug, thiserror::Error)]
pub enum CmdError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] Error),
    #[error("{0}")]
    Check(String),
}

impl CmdError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CmdError::Usage(_) | CmdError::Data(Error::Config(_)) => 1,
            CmdError::Data(_) | CmdError::Check(_) => 2,
        }
    }
}

pub type CmdResult<T> = std::result::Result<T, CmdError>;

/// Path of the model file stored next to a corpus file.
pub fn model_path(corpus: &Path) -> PathBuf {
    corpus.with_extension("model.json")
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> crate::error::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut w, &r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> crate::error::Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> crate::error::Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    fs::write(path, body)?;
    Ok(())
}

fn validated(cfg: &ExperimentConfig) -> CmdResult<()> {
    cfg.validate().map_err(|e| CmdError::Usage(e.to_string()))
}

/// Writes the corpus JSONL and its model file. Returns the number of sentences.
pub fn cmd_gen_corpus(cfg: &ExperimentConfig, out: &Path, force: bool) -> CmdResult<usize> {
    validated(cfg)?;
    let model_out = model_path(out);
    if !force {
        for p in [out, model_out.as_path()] {
            if p.exists() {
                return Err(CmdError::Usage(format!("{} exists; pass --force to overwrite", p.display())));
            }
        }
    }
    let (model, corpus) = gen_corpus(&cfg.corpus_config())?;
    if corpus.is_empty() {
        eprintln!("warning: sentence_count is 0, writing an empty corpus");
    }
    write_jsonl(out, &corpus)?;
    write_json(&model_out, model.spec())?;
    Ok(corpus.len())
}

pub fn load_corpus(path: &Path) -> crate::error::Result<(ToyModel, Vec<ParallelExample>)> {
    let spec: ToyModelSpec = serde_json::from_str(&fs::read_to_string(model_path(path))?)?;
    let model = ToyModel::from_spec(spec)?;
    Ok((model, read_jsonl(path)?))
}

/// Corpus from `path`, or generated from the config when no path is given.
fn corpus_for(cfg: &ExperimentConfig, path: Option<&Path>) -> CmdResult<(ToyModel, Vec<ParallelExample>)> {
    match path {
        Some(p) => Ok(load_corpus(p)?),
        None => Ok(gen_corpus(&cfg.corpus_config())?),
    }
}

pub fn cmd_gen_labels(cfg: &ExperimentConfig, corpus: Option<&Path>, out: &Path) -> CmdResult<usize> {
    validated(cfg)?;
    let (model, corpus) = corpus_for(cfg, corpus)?;
    let labeled = label_corpus(&model, &corpus, &cfg.labels)?;
    write_jsonl(out, &labeled)?;
    Ok(labeled.len())
}

fn train(cfg: &ExperimentConfig, model: &ToyModel, corpus: &[ParallelExample]) -> CmdResult<PolicyParams> {
    let out = train_on_corpus(model, corpus, &cfg.labels, &cfg.train_config())?;
    if out.status == TrainStatus::SingleClass {
        eprintln!("warning: training labels contain a single class");
    }
    Ok(out.params)
}

pub fn cmd_train_policy(cfg: &ExperimentConfig, corpus: Option<&Path>, out: &Path) -> CmdResult<PolicyParams> {
    validated(cfg)?;
    let (model, corpus) = corpus_for(cfg, corpus)?;
    if corpus.is_empty() {
        return Err(Error::Empty("corpus").into());
    }
    let params = train(cfg, &model, &corpus)?;
    params.save(out)?;
    Ok(params)
}

/// Inputs shared by the pipeline and the sweep.
#[derive(Debug, Clone, Default)]
pub struct Inputs {
    pub corpus: Option<PathBuf>,
    pub policy: Option<PathBuf>,
}

struct Prepared {
    model: ToyModel,
    corpus: Vec<ParallelExample>,
    params: Option<PolicyParams>,
}

fn prepare(cfg: &ExperimentConfig, inputs: &Inputs) -> CmdResult<Prepared> {
    let (model, corpus) = corpus_for(cfg, inputs.corpus.as_deref())?;
    if corpus.is_empty() {
        return Err(Error::Empty("corpus").into());
    }
    let params = match (cfg.policy, &inputs.policy) {
        (PolicyChoice::WaitK { .. }, _) => None,
        (PolicyChoice::Learned, Some(p)) => Some(PolicyParams::load(p)?),
        (PolicyChoice::Learned, None) => Some(train(cfg, &model, &corpus)?),
    };
    Ok(Prepared { model, corpus, params })
}

fn make_policy(cfg: &ExperimentConfig, params: Option<&PolicyParams>, delta: f64) -> CmdResult<AnyPolicy> {
    Ok(match (cfg.policy, params) {
        (PolicyChoice::WaitK { k }, _) => AnyPolicy::WaitK(wait_k_policy(k)?),
        (PolicyChoice::Learned, Some(p)) => AnyPolicy::learned(p.clone(), delta)?,
        (PolicyChoice::Learned, None) => unreachable!("learned policy is prepared before decoding"),
    })
}

fn settings(cfg: &ExperimentConfig, delta: f64, beam: usize, teacher_forced: bool) -> EvalSettings {
    let mut decoder = cfg.decoder.clone();
    decoder.delta = delta;
    decoder.beam_size = beam;
    EvalSettings {
        decoder,
        asr: cfg.asr.clone(),
        word_duration_sec: cfg.word_duration_sec,
        teacher_forced,
    }
}

/// One line of the per-write trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub sentence: usize,
    pub i: usize,
    pub token: String,
    pub g_i: usize,
    pub t_write: f64,
    pub t_source_consumed: f64,
}

pub fn trace_rows(eval: &Evaluation) -> Vec<TraceRow> {
    eval.sentences
        .iter()
        .flat_map(|s| {
            s.trace.writes.iter().map(move |w| TraceRow {
                sentence: s.id,
                i: w.i,
                token: w.token.clone(),
                g_i: w.g_i,
                t_write: w.t_write,
                t_source_consumed: w.t_source_consumed,
            })
        })
        .collect()
}

pub const SUMMARY_FILE: &str = "summary.json";
pub const TRACE_FILE: &str = "traces.jsonl";

/// Runs the cascade once with the configured decoder and writes
/// `summary.json` and `traces.jsonl` into `out_dir`.
pub fn cmd_pipeline(cfg: &ExperimentConfig, inputs: &Inputs, out_dir: &Path) -> CmdResult<Summary> {
    validated(cfg)?;
    let prep = prepare(cfg, inputs)?;
    let policy = make_policy(cfg, prep.params.as_ref(), cfg.decoder.delta)?;
    let s = settings(cfg, cfg.decoder.delta, cfg.decoder.beam_size, cfg.teacher_forced);
    let eval = evaluate(&prep.model, &prep.corpus, &policy, &s)?;
    fs::create_dir_all(out_dir).map_err(Error::from)?;
    write_json(&out_dir.join(SUMMARY_FILE), &eval.summary)?;
    write_jsonl(&out_dir.join(TRACE_FILE), trace_rows(&eval))?;
    Ok(eval.summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub delta: f64,
    pub beam: usize,
    pub bleu: f64,
    pub al_tokens: f64,
    pub al_seconds: f64,
    pub upl_first: f64,
    pub upl_last: f64,
}

/// Checks that teacher-forced beam-1 decoding never gets earlier as delta
/// grows: per-sentence `g` vectors pointwise and AL per sentence.
/// Returns a description of the first violation.
pub fn teacher_forced_monotonicity(
    cfg: &ExperimentConfig,
    model: &ToyModel,
    corpus: &[ParallelExample],
    params: Option<&PolicyParams>,
    deltas: &[f64],
) -> CmdResult<Option<String>> {
    let mut sorted = deltas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut prev: Option<(f64, Evaluation)> = None;
    for &d in &sorted {
        let policy = make_policy(cfg, params, d)?;
        let eval = evaluate(model, corpus, &policy, &settings(cfg, d, 1, true))?;
        if let Some((pd, p)) = &prev {
            for (a, b) in p.sentences.iter().zip(&eval.sentences) {
                let (ga, gb) = (a.trace.g(), b.trace.g());
                if ga.len() != gb.len() || ga.iter().zip(&gb).any(|(x, y)| y < x) {
                    return Ok(Some(format!("sentence {}: g decreased from delta {pd} to {d}", a.id)));
                }
                if b.al_tokens < a.al_tokens - 1e-12 {
                    return Ok(Some(format!("sentence {}: AL decreased from delta {pd} to {d}", a.id)));
                }
            }
        }
        prev = Some((d, eval));
    }
    Ok(None)
}

/// Evaluates every (delta, beam) cell and writes one CSV row per cell,
/// ordered by delta then beam.
pub fn cmd_sweep(cfg: &ExperimentConfig, inputs: &Inputs, out: &Path) -> CmdResult<Vec<SweepRow>> {
    validated(cfg)?;
    let sweep = &cfg.sweep;
    if sweep.deltas.is_empty() || sweep.beams.is_empty() {
        return Err(CmdError::Usage("sweep needs at least one delta and one beam size".into()));
    }
    let prep = prepare(cfg, inputs)?;
    if sweep.check_monotone {
        if let Some(v) =
            teacher_forced_monotonicity(cfg, &prep.model, &prep.corpus, prep.params.as_ref(), &sweep.deltas)?
        {
            return Err(CmdError::Check(format!("teacher-forced latency is not monotone in delta: {v}")));
        }
    }
    let mut cells: Vec<(f64, usize)> =
        sweep.deltas.iter().flat_map(|&d| sweep.beams.iter().map(move |&b| (d, b))).collect();
    cells.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut rows = Vec::with_capacity(cells.len());
    for (delta, beam) in cells {
        let policy = make_policy(cfg, prep.params.as_ref(), delta)?;
        let eval = evaluate(&prep.model, &prep.corpus, &policy, &settings(cfg, delta, beam, cfg.teacher_forced))?;
        let s = eval.summary;
        rows.push(SweepRow {
            delta,
            beam,
            bleu: s.bleu,
            al_tokens: s.al_tokens,
            al_seconds: s.al,
            upl_first: s.upl_first,
            upl_last: s.upl_last,
        });
    }
    write_sweep_csv(out, &rows)?;
    Ok(rows)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> crate::error::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_csv(path: &Path) -> crate::error::Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize()
        .enumerate()
        .map(|(n, row)| {
            row.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: n + 2,
                msg: e.to_string(),
            })
        })
        .collect()
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("{other:?}")),
    }
}

/// Renders a summary JSON or sweep CSV as a plain-text table.
pub fn cmd_report(input: &Path) -> CmdResult<String> {
    let mut out = String::new();
    if input.extension().is_some_and(|e| e == "csv") {
        let rows = read_sweep_csv(input)?;
        out.push_str("delta  beam    bleu  al_tok  al_sec  upl_first  upl_last\n");
        for r in rows {
            out.push_str(&format!(
                "{:5.2}  {:4}  {:6.2}  {:6.3}  {:6.3}  {:9.3}  {:8.3}\n",
                r.delta, r.beam, r.bleu, r.al_tokens, r.al_seconds, r.upl_first, r.upl_last
            ));
        }
    } else {
        let path = if input.is_dir() { input.join(SUMMARY_FILE) } else { input.to_path_buf() };
        let s: Summary = serde_json::from_str(&fs::read_to_string(&path).map_err(Error::from)?).map_err(Error::from)?;
        out.push_str(&format!(
            "sentences  {}\nbleu       {:.2}\nal (s)     {:.3}\nal (tok)   {:.3}\nupl first  {:.3}\nupl last   {:.3}\n",
            s.n_sentences, s.bleu, s.al, s.al_tokens, s.upl_first, s.upl_last
        ));
    }
    Ok(out)
}
