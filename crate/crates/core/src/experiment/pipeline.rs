//! End-to-end cascade: corpus → labels → policy training → simulated ASR
//! stream → simultaneous decoding → metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asr::{simulate_stream, AsrSimConfig, TimedTranscript};
use crate::decoder::{DecoderConfig, LearnedPolicy, PolicyInput, ReadWritePolicy, Session, WaitK};
use crate::error::{Error, Result};
use crate::labels::{extract_training_cells, generate_label_matrix, Action, LabelGenConfig};
use crate::metrics::{average_lag, corpus_bleu, upl, LagMode};
use crate::model::TranslationModel;
use crate::policy::{train_policy, LabeledPair, PolicyParams, TrainConfig, TrainOutcome};
use crate::toy::{full_sentence_translate, ParallelExample, ToyModel};
use crate::types::{is_sentence_final, AttentionMatrix, EventKind, PolicyLabelMatrix, SessionTrace, WriteRecord};

/// One corpus sentence with its full-sentence attention and policy labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub src: Vec<String>,
    pub tgt: Vec<String>,
    pub attention: AttentionMatrix,
    pub labels: PolicyLabelMatrix,
}

pub fn label_corpus(model: &ToyModel, corpus: &[ParallelExample], cfg: &LabelGenConfig) -> Result<Vec<LabeledSentence>> {
    corpus
        .iter()
        .map(|ex| {
            let (tgt, attention) = full_sentence_translate(model, &ex.src)?;
            let labels = generate_label_matrix(&attention, cfg)?;
            Ok(LabeledSentence {
                src: ex.src.clone(),
                tgt,
                attention,
                labels,
            })
        })
        .collect()
}

/// Pairs each reachable label cell with the decoder state of its target
/// prefix and the encoder state of its source position.
pub fn training_pairs<M: TranslationModel>(model: &M, labeled: &[LabeledSentence]) -> Result<Vec<LabeledPair>> {
    let mut pairs = Vec::new();
    for sent in labeled {
        let h = model.encode(&sent.src)?;
        let s: Vec<_> = (0..sent.tgt.len()).map(|i| model.decoder_state(&sent.tgt[..i])).collect();
        for cell in extract_training_cells(&sent.labels) {
            pairs.push(LabeledPair {
                s: s[cell.target_index].clone(),
                h: h[cell.source_index].clone(),
                label: cell.label,
            });
        }
    }
    Ok(pairs)
}

pub fn train_on_corpus(
    model: &ToyModel,
    corpus: &[ParallelExample],
    labels: &LabelGenConfig,
    train: &TrainConfig,
) -> Result<TrainOutcome> {
    let labeled = label_corpus(model, corpus, labels)?;
    let pairs = training_pairs(model, &labeled)?;
    train_policy(&pairs, train)
}

/// A policy usable by the pipeline.
#[derive(Debug, Clone)]
pub enum AnyPolicy {
    Learned(LearnedPolicy),
    WaitK(WaitK),
}

impl ReadWritePolicy for AnyPolicy {
    fn decide(&mut self, input: &PolicyInput<'_>) -> Result<Action> {
        match self {
            AnyPolicy::Learned(p) => p.decide(input),
            AnyPolicy::WaitK(p) => p.decide(input),
        }
    }
}

impl AnyPolicy {
    pub fn learned(params: PolicyParams, delta: f64) -> Result<Self> {
        Ok(Self::Learned(LearnedPolicy::new(params, delta)?))
    }
}

#[derive(Debug, Clone)]
pub struct EvalSettings {
    pub decoder: DecoderConfig,
    pub asr: AsrSimConfig,
    pub word_duration_sec: f64,
    pub teacher_forced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceResult {
    pub id: usize,
    pub hyp: Vec<String>,
    pub reference: Vec<String>,
    pub trace: SessionTrace,
    pub al_tokens: f64,
    pub al_seconds: f64,
    pub upl_first: f64,
    pub upl_last: f64,
}

/// Corpus-level report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Average Lag in seconds of source audio.
    pub al: f64,
    pub al_tokens: f64,
    pub upl_first: f64,
    pub upl_last: f64,
    pub bleu: f64,
    pub n_sentences: usize,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub sentences: Vec<SentenceResult>,
    pub summary: Summary,
}

/// Streams one sentence through the simulated ASR and the decoder.
pub fn run_sentence<M: TranslationModel + Sync>(
    model: &M,
    policy: &AnyPolicy,
    settings: &EvalSettings,
    id: usize,
    example: &ParallelExample,
) -> Result<SentenceResult> {
    let transcript = TimedTranscript::uniform(&example.src, settings.word_duration_sec);
    let events = simulate_stream(&transcript, &settings.asr)?;
    let mut session = Session::new(model, policy.clone(), settings.decoder.clone())?;
    if settings.teacher_forced {
        session = session.with_teacher_forcing(example.tgt.clone());
    }
    let beam = settings.decoder.beam_size > 1;
    for e in &events {
        if beam {
            session.beam_feed(e)?;
        } else {
            session.feed(e)?;
        }
    }
    debug_assert!(events.last().is_some_and(|e| e.kind == EventKind::EndOfStream));
    let trace = session.into_trace();
    let ends = transcript.ends();
    let start = transcript.words.first().map_or(0.0, |w| w.start);

    let (mut al_tok, mut al_sec, mut n_seg) = (0.0, 0.0, 0usize);
    let mut offset = 0;
    for (writes, x) in sentence_groups(&trace) {
        if !writes.is_empty() && x > 0 {
            al_tok += average_lag(&writes, x, writes.len(), LagMode::Tokens)?;
            al_sec += average_lag(
                &writes,
                x,
                writes.len(),
                LagMode::Seconds {
                    token_ends: &ends[offset..],
                    start,
                },
            )?;
            n_seg += 1;
        }
        offset += x;
    }
    if n_seg == 0 {
        return Err(Error::Empty("sentence produced no output"));
    }
    let last_input = ends.iter().copied().fold(start, f64::max);
    let (upl_first, upl_last) = upl(&trace.writes, start, last_input)?;
    Ok(SentenceResult {
        id,
        hyp: trace.tokens(),
        reference: example.tgt.clone(),
        al_tokens: al_tok / n_seg as f64,
        al_seconds: al_sec / n_seg as f64,
        upl_first,
        upl_last,
        trace,
    })
}

/// Joins decoder segments into source sentences. Emitting sentence-final
/// punctuation flushes the decoder even when the source sentence has not
/// been read to its end; the unread rest belongs to the same sentence for
/// latency purposes. Returns each sentence's writes, with `g_i` counted from
/// the sentence start, and its source length.
pub fn sentence_groups(trace: &SessionTrace) -> Vec<(Vec<WriteRecord>, usize)> {
    let mut out = Vec::new();
    let (mut writes, mut x) = (Vec::new(), 0);
    for seg in trace.segments() {
        writes.extend(seg.writes.iter().map(|w| WriteRecord {
            g_i: w.g_i + x,
            ..w.clone()
        }));
        x += seg.reads.len();
        if seg.reads.last().is_some_and(|r| is_sentence_final(&r.token)) {
            out.push((std::mem::take(&mut writes), std::mem::replace(&mut x, 0)));
        }
    }
    if !writes.is_empty() || x > 0 {
        out.push((writes, x));
    }
    out
}

pub fn evaluate<M: TranslationModel + Sync>(
    model: &M,
    corpus: &[ParallelExample],
    policy: &AnyPolicy,
    settings: &EvalSettings,
) -> Result<Evaluation> {
    if corpus.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let sentences: Vec<SentenceResult> = corpus
        .par_iter()
        .enumerate()
        .map(|(id, ex)| run_sentence(model, policy, settings, id, ex))
        .collect::<Result<_>>()?;
    let n = sentences.len() as f64;
    let mean = |f: fn(&SentenceResult) -> f64| sentences.iter().map(f).sum::<f64>() / n;
    let hyps: Vec<String> = sentences.iter().map(|s| s.hyp.join(" ")).collect();
    let refs: Vec<String> = sentences.iter().map(|s| s.reference.join(" ")).collect();
    let summary = Summary {
        al: mean(|s| s.al_seconds),
        al_tokens: mean(|s| s.al_tokens),
        upl_first: mean(|s| s.upl_first),
        upl_last: mean(|s| s.upl_last),
        bleu: corpus_bleu(&hyps, &refs)?,
        n_sentences: sentences.len(),
    };
    Ok(Evaluation { sentences, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::wait_k_policy;
    use crate::toy::{gen_corpus, CorpusConfig, FertilityProbs};

    fn one_to_one(count: usize) -> CorpusConfig {
        CorpusConfig {
            sentence_count: count,
            swap_prob: 0.0,
            fertility: FertilityProbs {
                one_to_one: 1.0,
                one_to_two: 0.0,
                two_to_one: 0.0,
            },
            ..CorpusConfig::default()
        }
    }

    fn settings(delta: f64) -> EvalSettings {
        EvalSettings {
            decoder: DecoderConfig {
                delta,
                ..DecoderConfig::default()
            },
            asr: AsrSimConfig::default(),
            word_duration_sec: 0.3,
            teacher_forced: false,
        }
    }

    #[test]
    fn wait_4_on_one_to_one_corpus() {
        let (model, corpus) = gen_corpus(&CorpusConfig {
            min_len: 5,
            ..one_to_one(20)
        })
        .unwrap();
        let policy = AnyPolicy::WaitK(wait_k_policy(4).unwrap());
        let eval = evaluate(&model, &corpus, &policy, &settings(0.5)).unwrap();
        for s in &eval.sentences {
            assert!((s.al_tokens - 4.0).abs() < 1e-9, "sentence {}: {}", s.id, s.al_tokens);
        }
        assert_eq!(eval.summary.bleu, 100.0);
    }

    fn write(g_i: usize) -> WriteRecord {
        WriteRecord {
            i: 0,
            token: "t".into(),
            g_i,
            t_write: 0.0,
            t_source_consumed: 0.0,
        }
    }

    fn read(token: &str) -> crate::types::ReadRecord {
        crate::types::ReadRecord {
            j: 0,
            token: token.into(),
            t_read: 0.0,
        }
    }

    #[test]
    fn early_flush_stays_in_its_sentence() {
        // target punctuation written after two of three source tokens
        let trace = SessionTrace {
            writes: vec![write(1), write(2), write(1)],
            reads: vec![read("a"), read("b"), read("."), read("c")],
            flush_points: vec![2, 2],
            read_flush_points: vec![2, 3],
        };
        let groups = sentence_groups(&trace);
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].0.iter().map(|w| w.g_i).collect::<Vec<_>>(), [1, 2]);
        assert_eq!(groups[0].1, 3);
        assert_eq!(groups[1].0.iter().map(|w| w.g_i).collect::<Vec<_>>(), [1]);
        assert_eq!(groups[1].1, 1);
    }

    #[test]
    fn training_pairs_follow_label_cells() {
        let (model, corpus) = gen_corpus(&one_to_one(3)).unwrap();
        let labeled = label_corpus(&model, &corpus, &LabelGenConfig::default()).unwrap();
        let pairs = training_pairs(&model, &labeled).unwrap();
        let cells: usize = labeled.iter().map(|l| extract_training_cells(&l.labels).len()).sum();
        assert_eq!(pairs.len(), cells);
        assert!(pairs.iter().all(|p| p.s.dim() == model.dim()));
    }

    #[test]
    fn trained_policy_streams_with_high_quality() {
        let (model, corpus) = gen_corpus(&CorpusConfig::default()).unwrap();
        let out = train_on_corpus(&model, &corpus, &LabelGenConfig::default(), &TrainConfig::default()).unwrap();
        let learned = |d| AnyPolicy::learned(out.params.clone(), d).unwrap();
        let full = evaluate(&model, &corpus, &learned(1.0), &settings(1.0)).unwrap();
        let half = evaluate(&model, &corpus, &learned(0.5), &settings(0.5)).unwrap();
        assert_eq!(full.summary.bleu, 100.0);
        assert!(half.summary.bleu >= 98.0, "{:?}", half.summary);
        assert!(half.summary.al_tokens < full.summary.al_tokens);
    }
}
