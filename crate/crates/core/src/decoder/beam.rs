//! Streaming beam bookkeeping. Hypotheses hold only the *uncommitted* suffix
//! of the translation; committed tokens live in the session.

use crate::model::{Candidate, EOS};
use crate::types::is_sentence_final;

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<String>,
    /// Cumulative log-probability, including already committed tokens.
    pub score: f64,
    /// Ended with EOS or sentence-final punctuation; no longer expanded.
    pub finalized: bool,
}

impl Hypothesis {
    pub fn root() -> Self {
        Self {
            tokens: Vec::new(),
            score: 0.0,
            finalized: false,
        }
    }
}

/// Expands every live hypothesis with its candidates and keeps the best
/// `beam_size`. Finalized hypotheses carry over unchanged. Ties keep
/// expansion order.
pub fn expand<F, E>(beams: &[Hypothesis], beam_size: usize, mut candidates: F) -> Result<Vec<Hypothesis>, E>
where
    F: FnMut(&Hypothesis) -> Result<Vec<Candidate>, E>,
{
    let mut pool = Vec::new();
    for hyp in beams {
        if hyp.finalized {
            pool.push(hyp.clone());
            continue;
        }
        for c in candidates(hyp)?.into_iter().take(beam_size) {
            let mut next = hyp.clone();
            next.score += c.log_prob;
            if c.token == EOS {
                next.finalized = true;
            } else {
                next.finalized = is_sentence_final(&c.token);
                next.tokens.push(c.token);
            }
            pool.push(next);
        }
    }
    pool.sort_by(|a, b| b.score.total_cmp(&a.score));
    pool.truncate(beam_size);
    Ok(pool)
}

/// Length of the prefix shared by all hypotheses.
pub fn common_prefix_len(beams: &[Hypothesis]) -> usize {
    let Some(first) = beams.first() else {
        return 0;
    };
    (0..first.tokens.len())
        .take_while(|&k| beams.iter().all(|h| h.tokens.get(k) == Some(&first.tokens[k])))
        .count()
}

/// Removes the first `n` tokens of every hypothesis and returns them.
pub fn strip_prefix(beams: &mut [Hypothesis], n: usize) -> Vec<String> {
    let prefix = beams.first().map(|h| h.tokens[..n].to_vec()).unwrap_or_default();
    for h in beams.iter_mut() {
        h.tokens.drain(..n);
    }
    prefix
}

/// Index of the hypothesis kept by forced finalization: among those with the
/// most tokens, the highest scoring (first on ties).
pub fn force_pick(beams: &[Hypothesis]) -> Option<usize> {
    let longest = beams.iter().map(|h| h.tokens.len()).max()?;
    beams
        .iter()
        .enumerate()
        .filter(|(_, h)| h.tokens.len() == longest)
        .fold(None, |best: Option<(usize, f64)>, (k, h)| match best {
            Some((_, s)) if s >= h.score => best,
            _ => Some((k, h.score)),
        })
        .map(|(k, _)| k)
}
