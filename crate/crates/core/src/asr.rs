//! Simulated streaming ASR: replays a timed transcript as PARTIAL / FINAL
//! hypotheses.
//!
//! Beam convergence is modelled by a fixed stability lag: a word becomes FINAL
//! once `stability_lag_words` later words are visible. A word that is still
//! not FINAL `final_timeout_sec` after its end is force-finalized at exactly
//! that instant.

use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{is_punct, StreamEvent};

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedWord {
    pub token: String,
    pub start: f64,
    pub end: f64,
    /// Opaque speaker/language annotation, carried through untouched.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimedTranscript {
    pub words: Vec<TimedWord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AsrSimConfig {
    pub partial_interval_sec: f64,
    pub final_timeout_sec: f64,
    pub stability_lag_words: usize,
}

impl Default for AsrSimConfig {
    fn default() -> Self {
        Self {
            partial_interval_sec: 0.3,
            final_timeout_sec: 1.5,
            stability_lag_words: 2,
        }
    }
}

impl AsrSimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.partial_interval_sec > 0.0) || !(self.final_timeout_sec > 0.0) {
            return Err(Error::Config(
                "partial_interval_sec and final_timeout_sec must be > 0".into(),
            ));
        }
        Ok(())
    }
}

impl TimedTranscript {
    /// Content words take `word_sec` each, back to back from t = 0;
    /// punctuation is zero-duration at the end of the preceding word.
    pub fn uniform(tokens: &[String], word_sec: f64) -> Self {
        let mut t = 0.0;
        let words = tokens
            .iter()
            .map(|tok| {
                let start = t;
                if !is_punct(tok) {
                    t += word_sec;
                }
                TimedWord {
                    token: tok.clone(),
                    start: if is_punct(tok) { t } else { start },
                    end: t,
                    tag: None,
                }
            })
            .collect();
        Self { words }
    }

    pub fn tokens(&self) -> Vec<String> {
        self.words.iter().map(|w| w.token.clone()).collect()
    }

    pub fn ends(&self) -> Vec<f64> {
        self.words.iter().map(|w| w.end).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev = 0.0;
        for (k, w) in self.words.iter().enumerate() {
            let bad = |msg: &str| Error::Config(format!("word {k} (`{}`): {msg}", w.token));
            if w.start < 0.0 || w.end < 0.0 {
                return Err(bad("negative time"));
            }
            if w.end < w.start {
                return Err(bad("end before start"));
            }
            if w.start + TIME_EPS < prev {
                return Err(bad("start times must be non-decreasing"));
            }
            prev = w.start;
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct Row {
    w: String,
    s: Option<f64>,
    e: Option<f64>,
    #[serde(default)]
    tag: Option<String>,
}

/// Reads a JSONL transcript of `{"w": .., "s": .., "e": ..}` rows.
/// Punctuation rows become zero-duration tokens at the preceding word's end;
/// their own times may be omitted.
pub fn load_timed_transcript(path: impl AsRef<Path>) -> Result<TimedTranscript> {
    let path = path.as_ref();
    let body = std::fs::read_to_string(path)?;
    parse_timed_transcript(&body, path)
}

pub fn parse_timed_transcript(body: &str, path: &Path) -> Result<TimedTranscript> {
    let mut words: Vec<TimedWord> = Vec::new();
    for (n, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            msg,
        };
        let row: Row = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let word = if is_punct(&row.w) {
            let at = words.last().map_or(row.s.unwrap_or(0.0), |w| w.end);
            TimedWord {
                token: row.w,
                start: at,
                end: at,
                tag: row.tag,
            }
        } else {
            let (Some(s), Some(e)) = (row.s, row.e) else {
                return Err(err(format!("word `{}` needs both s and e", row.w)));
            };
            TimedWord {
                token: row.w,
                start: s,
                end: e,
                tag: row.tag,
            }
        };
        if word.start < 0.0 || word.end < 0.0 {
            return Err(err("negative time".into()));
        }
        if word.end < word.start {
            return Err(err(format!("end {} before start {}", word.end, word.start)));
        }
        if let Some(prev) = words.last() {
            if word.start + TIME_EPS < prev.start {
                return Err(err(format!(
                    "start {} precedes previous start {}",
                    word.start, prev.start
                )));
            }
        }
        words.push(word);
    }
    Ok(TimedTranscript { words })
}

/// Number of leading words satisfying `pred`.
fn prefix_count(words: &[TimedWord], pred: impl Fn(&TimedWord) -> bool) -> usize {
    words.iter().take_while(|w| pred(w)).count()
}

pub fn simulate_stream(t: &TimedTranscript, cfg: &AsrSimConfig) -> Result<Vec<StreamEvent>> {
    cfg.validate()?;
    t.validate()?;
    let words = &t.words;
    if words.is_empty() {
        return Ok(vec![StreamEvent::end_of_stream(0.0)]);
    }
    let tokens: Vec<String> = t.tokens();
    let last_end = words.iter().map(|w| w.end).fold(0.0, f64::max);

    // (time, is_tick)
    let mut instants: Vec<(f64, bool)> = Vec::new();
    let horizon = last_end + cfg.final_timeout_sec + cfg.partial_interval_sec;
    let mut k = 1u64;
    loop {
        let tick = k as f64 * cfg.partial_interval_sec;
        if tick > horizon + TIME_EPS {
            break;
        }
        instants.push((tick, true));
        k += 1;
    }
    instants.extend(words.iter().map(|w| (w.end + cfg.final_timeout_sec, false)));
    instants.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut events = Vec::new();
    let mut finals = 0usize;
    let mut idx = 0;
    while idx < instants.len() && finals < words.len() {
        // merge instants that coincide up to rounding; the latest one wins so
        // a timeout is never reported before its exact deadline
        let first = instants[idx].0;
        let mut now = first;
        let mut tick = false;
        while idx < instants.len() && instants[idx].0 <= first + TIME_EPS {
            tick |= instants[idx].1;
            now = now.max(instants[idx].0);
            idx += 1;
        }
        let visible = prefix_count(words, |w| w.end <= now + TIME_EPS);
        let timed_out = prefix_count(words, |w| w.end + cfg.final_timeout_sec <= now + TIME_EPS);
        // the hypothesis only changes on ticks; in between, only timeouts fire
        let stable = if tick { visible.saturating_sub(cfg.stability_lag_words) } else { 0 };
        let target = stable.max(timed_out);

        if tick && visible > 0 {
            events.push(StreamEvent::partial(now, tokens[..visible].to_vec()));
        }
        if target > finals {
            finals = target;
            events.push(StreamEvent::final_(now, tokens[..finals].to_vec()));
        }
    }
    let end_time = events.last().map_or(last_end, |e| e.time_sec).max(last_end);
    events.push(StreamEvent::end_of_stream(end_time));
    Ok(events)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReplayMode {
    /// Deliver events as fast as possible.
    Logical,
    /// Sleep until each event's time, divided by `speed`.
    RealTime { speed: f64 },
}

/// Hands events to `sink` in order, optionally paced by the wall clock.
/// The sink receives the event and the elapsed replay time in stream seconds.
pub fn replay<F>(events: &[StreamEvent], mode: ReplayMode, mut sink: F) -> Result<()>
where
    F: FnMut(&StreamEvent, f64) -> Result<()>,
{
    let start = Instant::now();
    for e in events {
        let now = match mode {
            ReplayMode::Logical => e.time_sec,
            ReplayMode::RealTime { speed } => {
                let due = Duration::from_secs_f64((e.time_sec / speed).max(0.0));
                if let Some(wait) = due.checked_sub(start.elapsed()) {
                    std::thread::sleep(wait);
                }
                start.elapsed().as_secs_f64() * speed
            }
        };
        sink(e, now)?;
    }
    Ok(())
}
