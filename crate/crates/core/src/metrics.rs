//! Latency and quality metrics: Average Lag, User Perceived Latency, BLEU.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::WriteRecord;

/// How source progress is measured for Average Lag.
#[derive(Debug, Clone, Copy)]
pub enum LagMode<'a> {
    /// `d(g) = g`, `D = |x|`.
    Tokens,
    /// `d(g)` = end time of source token `g` relative to `start`; `D` = end
    /// of the last source token relative to `start`.
    Seconds { token_ends: &'a [f64], start: f64 },
}

/// Average Lag over one segment:
/// `AL = 1/τ Σ_{i≤τ} [d(g_i) − (i−1)·D/|y|]`, `τ = min{i : g_i = |x|}`.
/// If no write saw the full source, `τ` is the number of writes.
pub fn average_lag(writes: &[WriteRecord], source_len: usize, target_len: usize, mode: LagMode<'_>) -> Result<f64> {
    if writes.is_empty() {
        return Err(Error::Empty("trace has no writes"));
    }
    if source_len == 0 || target_len == 0 {
        return Err(Error::Dimension("source and target lengths must be positive".into()));
    }
    let (d, total): (Box<dyn Fn(usize) -> Result<f64>>, f64) = match mode {
        LagMode::Tokens => (Box::new(|g| Ok(g as f64)), source_len as f64),
        LagMode::Seconds { token_ends, start } => {
            if token_ends.len() < source_len {
                return Err(Error::Dimension(format!(
                    "{} source times for {source_len} source tokens",
                    token_ends.len()
                )));
            }
            (
                Box::new(move |g: usize| {
                    g.checked_sub(1)
                        .and_then(|k| token_ends.get(k))
                        .map(|t| t - start)
                        .ok_or_else(|| Error::Dimension(format!("g = {g} has no source time")))
                }),
                token_ends[source_len - 1] - start,
            )
        }
    };
    let tau = writes
        .iter()
        .position(|w| w.g_i >= source_len)
        .map_or(writes.len(), |k| k + 1);
    let rate = total / target_len as f64;
    let mut sum = 0.0;
    for (i, w) in writes[..tau].iter().enumerate() {
        sum += d(w.g_i)? - i as f64 * rate;
    }
    Ok(sum / tau as f64)
}

/// User Perceived Latency: delay of the first output after the first input
/// frame, and of the last output after the last input frame.
pub fn upl(writes: &[WriteRecord], first_input_time: f64, last_input_time: f64) -> Result<(f64, f64)> {
    let first = writes.first().ok_or(Error::Empty("trace has no writes"))?;
    let last = writes.last().expect("non-empty");
    Ok((first.t_write - first_input_time, last.t_write - last_input_time))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub al: f64,
    pub upl_first_sec: f64,
    pub upl_last_sec: f64,
}

pub const MAX_ORDER: usize = 4;

fn ngram_counts(tokens: &[&str], n: usize) -> HashMap<Vec<String>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(|s| s.to_string()).collect()).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and totals for orders 1..=4, plus lengths.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn sentence(hyp: &str, reference: &str) -> Self {
        let h: Vec<&str> = hyp.split_whitespace().collect();
        let r: Vec<&str> = reference.split_whitespace().collect();
        let mut stats = Self {
            hyp_len: h.len(),
            ref_len: r.len(),
            ..Self::default()
        };
        for n in 1..=MAX_ORDER {
            let hc = ngram_counts(&h, n);
            let rc = ngram_counts(&r, n);
            stats.totals[n - 1] = h.len().saturating_sub(n - 1);
            stats.matches[n - 1] = hc
                .iter()
                .map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0)))
                .sum();
        }
        stats
    }

    pub fn add(&mut self, other: &Self) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    fn brevity_penalty(&self) -> f64 {
        if self.hyp_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        }
    }

    /// Unsmoothed BLEU in [0, 100].
    pub fn score(&self) -> f64 {
        if self.hyp_len == 0 || self.matches.contains(&0) {
            return 0.0;
        }
        let log_p: f64 = (0..MAX_ORDER)
            .map(|n| (self.matches[n] as f64 / self.totals[n] as f64).ln())
            .sum::<f64>()
            / MAX_ORDER as f64;
        100.0 * self.brevity_penalty() * log_p.exp()
    }

    /// BLEU with add-one smoothing on orders 2..=4.
    pub fn smoothed_score(&self) -> f64 {
        if self.hyp_len == 0 || self.matches[0] == 0 {
            return 0.0;
        }
        let log_p: f64 = (0..MAX_ORDER)
            .map(|n| {
                let (m, t) = (self.matches[n] as f64, self.totals[n] as f64);
                if n == 0 {
                    (m / t).ln()
                } else {
                    ((m + 1.0) / (t + 1.0)).ln()
                }
            })
            .sum::<f64>()
            / MAX_ORDER as f64;
        100.0 * self.brevity_penalty() * log_p.exp()
    }
}

/// Corpus-level 4-gram BLEU over whitespace-tokenized strings.
pub fn corpus_bleu<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R]) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(Error::Dimension(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    if refs.is_empty() {
        return Err(Error::Empty("references"));
    }
    let mut total = BleuStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        total.add(&BleuStats::sentence(h.as_ref(), r.as_ref()));
    }
    Ok(total.score())
}

/// Sentence-level BLEU for diagnostics (add-one smoothing on orders ≥ 2).
pub fn sentence_bleu(hyp: &str, reference: &str) -> f64 {
    BleuStats::sentence(hyp, reference).smoothed_score()
}
