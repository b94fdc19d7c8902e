//! The simultaneous decoding engine.
//!
//! A [`Session`] consumes ASR [`StreamEvent`]s. Committed progress happens on
//! FINAL events only; PARTIAL events are translated on a scratch copy for
//! display. After each consumed source token the read/write policy runs until
//! it asks for more input. A sentence-final source token closes the segment:
//! the rest of the translation is forced out and all state is reset.

pub mod beam;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::Action;
use crate::model::{Candidate, TranslationModel, EOS};
use crate::policy::{decide, policy_probability, sample_decision, validate_delta, PolicyParams, StateVec};
use crate::types::{is_sentence_final, EventKind, ReadRecord, SessionTrace, StreamEvent, WriteRecord};

pub use beam::Hypothesis;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub delta: f64,
    pub beam_size: usize,
    pub force_finalize_token_limit: usize,
    /// Cap on writes between two reads; `None` means `2 · |x| + 5` for the
    /// current segment source length `|x|`.
    pub max_consecutive_writes: Option<usize>,
    pub hold_last_token: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            delta: 0.5,
            beam_size: 1,
            force_finalize_token_limit: 5,
            max_consecutive_writes: None,
            hold_last_token: true,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        validate_delta(self.delta)?;
        if self.beam_size == 0 {
            return Err(Error::Config("beam_size must be >= 1".into()));
        }
        if self.force_finalize_token_limit == 0 {
            return Err(Error::Config("force_finalize_token_limit must be >= 1".into()));
        }
        if self.max_consecutive_writes == Some(0) {
            return Err(Error::Config("max_consecutive_writes must be >= 1".into()));
        }
        Ok(())
    }
}

/// What a policy sees when asked to decide.
#[derive(Debug, Clone, Copy)]
pub struct PolicyInput<'a> {
    /// Decoder state for the next target position.
    pub decoder_state: &'a StateVec,
    /// Encoder state of the newest consumed source token.
    pub encoder_state: &'a StateVec,
    /// Target tokens produced in this segment (committed plus beam suffix).
    pub written: usize,
    /// Source tokens consumed in this segment.
    pub consumed: usize,
}

pub trait ReadWritePolicy {
    fn decide(&mut self, input: &PolicyInput<'_>) -> Result<Action>;
}

/// Trained bilinear head, thresholded at `delta` (or sampled).
#[derive(Debug, Clone)]
pub struct LearnedPolicy {
    params: PolicyParams,
    delta: f64,
    sampler: Option<ChaCha8Rng>,
}

impl LearnedPolicy {
    pub fn new(params: PolicyParams, delta: f64) -> Result<Self> {
        params.validate()?;
        validate_delta(delta)?;
        Ok(Self {
            params,
            delta,
            sampler: None,
        })
    }

    /// Draws each decision from Bernoulli(p) instead of thresholding.
    pub fn sampled(mut self, seed: u64) -> Self {
        self.sampler = Some(ChaCha8Rng::seed_from_u64(seed));
        self
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }
}

impl ReadWritePolicy for LearnedPolicy {
    fn decide(&mut self, input: &PolicyInput<'_>) -> Result<Action> {
        let prob = policy_probability(input.decoder_state, input.encoder_state, &self.params)?;
        match &mut self.sampler {
            Some(rng) => Ok(sample_decision(prob, rng)),
            None => decide(prob, self.delta),
        }
    }
}

/// Reads `k` tokens ahead of the output, then alternates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WaitK {
    pub k: usize,
}

pub fn wait_k_policy(k: usize) -> Result<WaitK> {
    if k == 0 {
        return Err(Error::Config("wait-k needs k >= 1".into()));
    }
    Ok(WaitK { k })
}

impl ReadWritePolicy for WaitK {
    fn decide(&mut self, input: &PolicyInput<'_>) -> Result<Action> {
        Ok((input.consumed >= input.written + self.k).into())
    }
}

/// A committed output token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Emission {
    pub token: String,
    pub time_sec: f64,
    /// Target index within the segment.
    pub i: usize,
    /// Source tokens consumed in the segment at commit time.
    pub g: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Search {
    Greedy,
    Beam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StepOutcome {
    Wrote,
    /// The model had nothing more to write for the available source.
    Exhausted,
    /// A sentence-final token was committed and the segment reset.
    Flushed,
}

pub struct Session<'m, M, P> {
    model: &'m M,
    policy: P,
    cfg: DecoderConfig,

    // current segment
    source: Vec<String>,
    source_times: Vec<f64>,
    states: Vec<StateVec>,
    target: Vec<String>,
    beams: Vec<Hypothesis>,

    // stream bookkeeping
    stream: Vec<String>,
    consumed: usize,
    last_time: f64,
    closed: bool,
    teacher: Option<Vec<String>>,
    teacher_offset: usize,

    trace: SessionTrace,
    display: Vec<String>,
}

// Manual impl: the model is shared by reference and need not be `Clone`.
impl<M, P: Clone> Clone for Session<'_, M, P> {
    fn clone(&self) -> Self {
        Self {
            model: self.model,
            policy: self.policy.clone(),
            cfg: self.cfg.clone(),
            source: self.source.clone(),
            source_times: self.source_times.clone(),
            states: self.states.clone(),
            target: self.target.clone(),
            beams: self.beams.clone(),
            stream: self.stream.clone(),
            consumed: self.consumed,
            last_time: self.last_time,
            closed: self.closed,
            teacher: self.teacher.clone(),
            teacher_offset: self.teacher_offset,
            trace: self.trace.clone(),
            display: self.display.clone(),
        }
    }
}

impl<'m, M: TranslationModel, P: ReadWritePolicy + Clone> Session<'m, M, P> {
    pub fn new(model: &'m M, policy: P, cfg: DecoderConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            model,
            policy,
            cfg,
            source: Vec::new(),
            source_times: Vec::new(),
            states: Vec::new(),
            target: Vec::new(),
            beams: vec![Hypothesis::root()],
            stream: Vec::new(),
            consumed: 0,
            last_time: 0.0,
            closed: false,
            teacher: None,
            teacher_offset: 0,
            trace: SessionTrace::default(),
            display: Vec::new(),
        })
    }

    /// Substitutes `target` (the gold output of the whole stream, in order)
    /// for model predictions, so read schedules depend on the policy alone.
    pub fn with_teacher_forcing(mut self, target: Vec<String>) -> Self {
        self.teacher = Some(target);
        self
    }

    pub fn trace(&self) -> &SessionTrace {
        &self.trace
    }

    pub fn into_trace(self) -> SessionTrace {
        self.trace
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Latest display hypothesis (committed segment output plus whatever the
    /// last PARTIAL event would add).
    pub fn display(&self) -> &[String] {
        &self.display
    }

    /// Stream tokens delivered by FINAL events so far.
    pub fn delivered(&self) -> usize {
        self.stream.len()
    }

    /// Stream tokens consumed (read) so far.
    pub fn consumed(&self) -> usize {
        self.consumed
    }

    /// Greedy decoding step for one event, stamped at the event time.
    pub fn feed(&mut self, event: &StreamEvent) -> Result<Vec<Emission>> {
        self.process(event, event.time_sec, Search::Greedy)
    }

    /// Like [`feed`](Self::feed) with an explicit emission clock (wall-clock
    /// replay).
    pub fn feed_at(&mut self, event: &StreamEvent, now: f64) -> Result<Vec<Emission>> {
        self.process(event, now, Search::Greedy)
    }

    /// Streaming beam search variant of [`feed`](Self::feed).
    pub fn beam_feed(&mut self, event: &StreamEvent) -> Result<Vec<Emission>> {
        self.process(event, event.time_sec, Search::Beam)
    }

    pub fn beam_feed_at(&mut self, event: &StreamEvent, now: f64) -> Result<Vec<Emission>> {
        self.process(event, now, Search::Beam)
    }

    /// Releases any held token, forces the rest of the current segment out
    /// and resets state.
    pub fn finalize_segment(&mut self) -> Result<Vec<Emission>> {
        let now = self.last_time;
        let search = if self.cfg.beam_size > 1 { Search::Beam } else { Search::Greedy };
        let mut out = Vec::new();
        self.release_all(now, search, &mut out)?;
        if !self.source.is_empty() {
            self.finish_segment(now, search, &mut out)?;
        }
        Ok(out)
    }

    fn process(&mut self, event: &StreamEvent, now: f64, search: Search) -> Result<Vec<Emission>> {
        if self.closed {
            return Err(Error::SessionClosed);
        }
        if event.time_sec < self.last_time {
            return Err(Error::OutOfOrder {
                last: self.last_time,
                got: event.time_sec,
            });
        }
        self.last_time = event.time_sec;
        let mut out = Vec::new();
        match event.kind {
            EventKind::Partial => {
                let mut scratch = self.clone();
                scratch.extend_stream(&event.tokens);
                let mut shown = Vec::new();
                scratch.consume_available(now, search, &mut shown)?;
                self.display = self.target.clone();
                self.display.extend(shown.into_iter().map(|e| e.token));
            }
            EventKind::Final => {
                self.extend_stream(&event.tokens);
                self.consume_available(now, search, &mut out)?;
                self.display = self.target.clone();
            }
            EventKind::EndOfStream => {
                self.release_all(now, search, &mut out)?;
                if !self.source.is_empty() {
                    self.finish_segment(now, search, &mut out)?;
                }
                self.closed = true;
                self.display.clear();
            }
        }
        Ok(out)
    }

    fn extend_stream(&mut self, tokens: &[String]) {
        if tokens.len() > self.stream.len() {
            self.stream.extend_from_slice(&tokens[self.stream.len()..]);
        }
    }

    /// Consumes delivered tokens, holding back the newest one mid-segment.
    fn consume_available(&mut self, now: f64, search: Search, out: &mut Vec<Emission>) -> Result<()> {
        let delivered = self.stream.len();
        let hold = self.cfg.hold_last_token
            && delivered > 0
            && !is_sentence_final(&self.stream[delivered - 1]);
        let limit = if hold { delivered - 1 } else { delivered };
        while self.consumed < limit {
            self.consume_next(now, search, out)?;
        }
        Ok(())
    }

    fn release_all(&mut self, now: f64, search: Search, out: &mut Vec<Emission>) -> Result<()> {
        while self.consumed < self.stream.len() {
            self.consume_next(now, search, out)?;
        }
        Ok(())
    }

    fn consume_next(&mut self, now: f64, search: Search, out: &mut Vec<Emission>) -> Result<()> {
        let token = self.stream[self.consumed].clone();
        self.consumed += 1;
        let j = self.source.len();
        self.states.push(self.model.encode_token(&token, j)?);
        self.source.push(token.clone());
        self.source_times.push(now);
        self.trace.reads.push(ReadRecord {
            j,
            token: token.clone(),
            t_read: now,
        });

        let flushed = self.run_policy(now, search, out)?;
        if !flushed && is_sentence_final(&token) {
            self.finish_segment(now, search, out)?;
        }
        Ok(())
    }

    fn write_cap(&self) -> usize {
        self.cfg
            .max_consecutive_writes
            .unwrap_or(2 * self.source.len() + 5)
    }

    fn produced(&self) -> usize {
        self.target.len() + self.beams.first().map_or(0, |h| h.tokens.len())
    }

    fn top_prefix(&self) -> Vec<String> {
        let mut p = self.target.clone();
        if let Some(top) = self.beams.first() {
            p.extend(top.tokens.iter().cloned());
        }
        p
    }

    /// Evaluates the policy until it reads. Returns true if the segment was
    /// flushed.
    fn run_policy(&mut self, now: f64, search: Search, out: &mut Vec<Emission>) -> Result<bool> {
        let cap = self.write_cap();
        let mut writes = 0;
        while writes < cap {
            if self.beams.first().is_some_and(|h| h.finalized) {
                break;
            }
            let s = self.model.decoder_state(&self.top_prefix());
            let h = self.states.last().expect("policy runs after a read");
            let input = PolicyInput {
                decoder_state: &s,
                encoder_state: h,
                written: self.produced(),
                consumed: self.source.len(),
            };
            if self.policy.decide(&input)? == Action::Read {
                break;
            }
            writes += 1;
            match self.write_step(now, search, false, out)? {
                StepOutcome::Wrote => {}
                StepOutcome::Exhausted => break,
                StepOutcome::Flushed => return Ok(true),
            }
        }
        Ok(false)
    }

    /// Forces writes until the translation of the segment is complete, then
    /// commits it and resets.
    fn finish_segment(&mut self, now: f64, search: Search, out: &mut Vec<Emission>) -> Result<()> {
        let cap = 2 * self.source.len() + 5;
        while self.produced() < cap {
            if self.beams.first().is_some_and(|h| h.finalized) {
                break;
            }
            match self.write_step(now, search, true, out)? {
                StepOutcome::Wrote => {}
                StepOutcome::Exhausted => break,
                StepOutcome::Flushed => return Ok(()),
            }
        }
        // commit whatever the best hypothesis still holds
        let rest = std::mem::take(&mut self.beams[0].tokens);
        self.beams.truncate(1);
        for token in rest {
            if self.commit(token, now, out) {
                return Ok(());
            }
        }
        self.flush();
        Ok(())
    }

    fn candidates(&self, prefix: &[String], complete: bool) -> Result<Vec<Candidate>> {
        match &self.teacher {
            Some(gold) => {
                let token = gold
                    .get(self.teacher_offset + prefix.len())
                    .cloned()
                    .unwrap_or_else(|| EOS.to_string());
                Ok(vec![Candidate { token, log_prob: 0.0 }])
            }
            None => self.model.next_candidates(&self.source, prefix, complete),
        }
    }

    fn write_step(&mut self, now: f64, search: Search, complete: bool, out: &mut Vec<Emission>) -> Result<StepOutcome> {
        match search {
            Search::Greedy => {
                let token = self
                    .candidates(&self.target, complete)?
                    .into_iter()
                    .next()
                    .map_or_else(|| EOS.to_string(), |c| c.token);
                if token == EOS {
                    return Ok(StepOutcome::Exhausted);
                }
                Ok(if self.commit(token, now, out) {
                    StepOutcome::Flushed
                } else {
                    StepOutcome::Wrote
                })
            }
            Search::Beam => self.beam_step(now, complete, out),
        }
    }

    fn beam_step(&mut self, now: f64, complete: bool, out: &mut Vec<Emission>) -> Result<StepOutcome> {
        let beams = std::mem::take(&mut self.beams);
        let expanded = beam::expand(&beams, self.cfg.beam_size, |hyp| {
            let mut prefix = self.target.clone();
            prefix.extend(hyp.tokens.iter().cloned());
            self.candidates(&prefix, complete)
        });
        self.beams = match expanded {
            Ok(b) if !b.is_empty() => b,
            Ok(_) => beams,
            Err(e) => {
                self.beams = beams;
                return Err(e);
            }
        };

        let shared = beam::common_prefix_len(&self.beams);
        for token in beam::strip_prefix(&mut self.beams, shared) {
            if self.commit(token, now, out) {
                return Ok(StepOutcome::Flushed);
            }
        }

        let limit = self.cfg.force_finalize_token_limit;
        if self.beams.iter().any(|h| h.tokens.len() >= limit) {
            let keep = beam::force_pick(&self.beams).expect("beams are non-empty");
            let mut kept = self.beams.swap_remove(keep);
            self.beams.clear();
            let tokens = std::mem::take(&mut kept.tokens);
            self.beams.push(kept);
            for token in tokens {
                if self.commit(token, now, out) {
                    return Ok(StepOutcome::Flushed);
                }
            }
        }

        let top = &self.beams[0];
        if top.finalized && top.tokens.is_empty() {
            return Ok(StepOutcome::Exhausted);
        }
        Ok(StepOutcome::Wrote)
    }

    /// Appends a committed token; flushes on sentence-final punctuation.
    /// Returns true if the segment was flushed.
    fn commit(&mut self, token: String, now: f64, out: &mut Vec<Emission>) -> bool {
        let i = self.target.len();
        let g = self.source.len();
        let t_source_consumed = self.source_times.last().copied().unwrap_or(now);
        self.trace.writes.push(WriteRecord {
            i,
            token: token.clone(),
            g_i: g,
            t_write: now,
            t_source_consumed,
        });
        out.push(Emission {
            token: token.clone(),
            time_sec: now,
            i,
            g,
        });
        let end = is_sentence_final(&token);
        self.target.push(token);
        if end {
            self.flush();
        }
        end
    }

    fn flush(&mut self) {
        self.teacher_offset += self.target.len();
        self.source.clear();
        self.source_times.clear();
        self.states.clear();
        self.target.clear();
        self.beams = vec![Hypothesis::root()];
        self.trace.flush_points.push(self.trace.writes.len());
        self.trace.read_flush_points.push(self.trace.reads.len());
    }
}
