//! A constructed stand-in for a pretrained full-sentence encoder-decoder.
//!
//! The model translates by dictionary lookup over a greedy left-to-right
//! segmentation of the source into units:
//!
//! * a merge pair `(a, b)` becomes one target token (2 → 1),
//! * a swap pair `(a, b)` is emitted as `t(b) t(a)`,
//! * any other word uses its own entry (1 → 1 or 1 → 2).
//!
//! Pairs are keyed by their first word (the *leader*). While the newest
//! available source word is a leader and more input may follow, its unit is
//! incomplete and targets that depend on it are not yet available; writing
//! one anyway yields [`FILLER`], which the model then skips over.
//!
//! Each attention row puts `attn_sharpness` on the rightmost gold-aligned
//! source position and spreads the rest uniformly over the other available
//! positions. The result is exact on its own corpus, so any quality loss in
//! streaming comes from the read/write schedule alone.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Candidate, TranslationModel, EOS};
use crate::policy::StateVec;
use crate::types::{is_sentence_final, validate_attention, AttentionMatrix, PUNCTUATION, SENTENCE_FINAL};

/// Emitted when the policy writes before the aligned source has arrived.
pub const FILLER: &str = "<fill>";

/// Leading coordinates reserved for position: `[1, POS_SCALE * k]`.
pub const POS_DIMS: usize = 2;
pub const POS_SCALE: f64 = 0.5;

/// Probability mass the top candidate keeps when `alt_candidates > 0`.
const TOP_PROB: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    Swap,
    Merge,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRule {
    pub first: String,
    pub second: String,
    pub kind: PairKind,
    /// Target of a merge pair; unused for swaps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
}

/// Serializable description of a [`ToyModel`]; embeddings are rebuilt from
/// `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModelSpec {
    pub dictionary: BTreeMap<String, Vec<String>>,
    pub pairs: Vec<PairRule>,
    pub embed_dim: usize,
    pub seed: u64,
    pub attn_sharpness: f64,
    /// Extra lower-scoring candidates offered to beam search.
    #[serde(default)]
    pub alt_candidates: usize,
}

#[derive(Debug, Clone)]
pub struct ToyModel {
    spec: ToyModelSpec,
    pairs: HashMap<String, PairRule>,
    src_embed: HashMap<String, Vec<f64>>,
    tgt_embed: HashMap<String, Vec<f64>>,
    tgt_vocab: Vec<String>,
}

/// One target token of a segmentation plan and the source positions it
/// derives from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedToken {
    pub token: String,
    pub aligned: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plan {
    pub targets: Vec<PlannedToken>,
    /// The newest source word opens a pair whose partner has not arrived.
    pub pending: bool,
}

/// Intermediate quantities of one decoder step.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeStep {
    pub token: String,
    pub decoder_state: StateVec,
    /// `ln α`; `-inf` where the weight is zero.
    pub energies: Vec<f64>,
    pub attention: Vec<f64>,
    pub context: StateVec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelExample {
    pub src: Vec<String>,
    pub tgt: Vec<String>,
    pub align: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FertilityProbs {
    pub one_to_one: f64,
    pub one_to_two: f64,
    pub two_to_one: f64,
}

impl Default for FertilityProbs {
    fn default() -> Self {
        Self {
            one_to_one: 0.8,
            one_to_two: 0.1,
            two_to_one: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub vocab_size: usize,
    pub sentence_count: usize,
    /// Content words per sentence (sentence-final punctuation excluded).
    /// A sentence can run one word over `max_len` only when every word
    /// leads a pair.
    pub min_len: usize,
    pub max_len: usize,
    /// Fraction of source words that lead a swap pair.
    pub swap_prob: f64,
    pub fertility: FertilityProbs,
    pub seed: u64,
    pub embed_dim: usize,
    pub attn_sharpness: f64,
    pub alt_candidates: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            vocab_size: 12,
            sentence_count: 200,
            min_len: 3,
            max_len: 10,
            swap_prob: 0.1,
            fertility: FertilityProbs::default(),
            seed: 1,
            embed_dim: 24,
            attn_sharpness: 0.8,
            alt_candidates: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 {
            return Err(Error::Config("vocab_size must be > 0".into()));
        }
        if self.min_len == 0 || self.max_len < self.min_len {
            return Err(Error::Config(format!(
                "invalid length range [{}, {}]",
                self.min_len, self.max_len
            )));
        }
        if !(0.0..=1.0).contains(&self.swap_prob) {
            return Err(Error::Config("swap_prob must be in [0, 1]".into()));
        }
        let f = &self.fertility;
        let probs = [f.one_to_one, f.one_to_two, f.two_to_one];
        if probs.iter().any(|p| !(*p >= 0.0)) || probs.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("fertility probabilities must be >= 0 and not all zero".into()));
        }
        if self.embed_dim <= POS_DIMS {
            return Err(Error::Config(format!("embed_dim must exceed {POS_DIMS}")));
        }
        if !(self.attn_sharpness > 0.5 && self.attn_sharpness <= 1.0) {
            return Err(Error::Config("attn_sharpness must be in (0.5, 1]".into()));
        }
        Ok(())
    }
}

fn source_word(k: usize) -> String {
    format!("s{k}")
}

/// Number of planned targets already emitted; fillers do not take a slot.
fn planned_len(tgt_prefix: &[String]) -> usize {
    tgt_prefix.iter().filter(|t| t.as_str() != FILLER).count()
}

fn target_word(k: usize) -> String {
    format!("t{k}")
}

/// Position term added to both encoder and decoder states.
pub fn position(k: usize, d: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[0] = 1.0;
    v[1] = POS_SCALE * k as f64;
    v
}

fn embedding(seed: u64, salt: u64, index: usize, d: usize) -> Vec<f64> {
    let mix = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(salt.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(mix);
    let scale = 1.0 / ((d - POS_DIMS) as f64).sqrt();
    let mut v = vec![0.0; d];
    for x in &mut v[POS_DIMS..] {
        *x = rng.sample::<f64, _>(StandardNormal) * scale;
    }
    v
}

impl ToyModel {
    pub fn from_spec(spec: ToyModelSpec) -> Result<Self> {
        if spec.embed_dim <= POS_DIMS {
            return Err(Error::Config(format!("embed_dim must exceed {POS_DIMS}")));
        }
        if !(spec.attn_sharpness > 0.5 && spec.attn_sharpness <= 1.0) {
            return Err(Error::Config("attn_sharpness must be in (0.5, 1]".into()));
        }
        let mut pairs = HashMap::new();
        for rule in &spec.pairs {
            for w in [&rule.first, &rule.second] {
                if !spec.dictionary.contains_key(w) {
                    return Err(Error::UnknownToken(w.clone()));
                }
            }
            if rule.kind == PairKind::Merge && rule.target.is_none() {
                return Err(Error::Config(format!("merge pair {} {} lacks a target", rule.first, rule.second)));
            }
            if pairs.insert(rule.first.clone(), rule.clone()).is_some() {
                return Err(Error::Config(format!("`{}` leads more than one pair", rule.first)));
            }
        }

        let d = spec.embed_dim;
        let src_embed = spec
            .dictionary
            .keys()
            .enumerate()
            .map(|(k, w)| (w.clone(), embedding(spec.seed, 1, k, d)))
            .collect();

        let mut tgt: BTreeSet<String> = spec.dictionary.values().flatten().cloned().collect();
        tgt.extend(spec.pairs.iter().filter_map(|r| r.target.clone()));
        tgt.insert(FILLER.to_string());
        tgt.insert(EOS.to_string());
        let tgt_vocab: Vec<String> = tgt.into_iter().collect();
        let tgt_embed = tgt_vocab
            .iter()
            .enumerate()
            .map(|(k, w)| (w.clone(), embedding(spec.seed, 2, k, d)))
            .collect();

        Ok(Self {
            spec,
            pairs,
            src_embed,
            tgt_embed,
            tgt_vocab,
        })
    }

    /// Builds the dictionary and pair rules for a corpus configuration.
    pub fn from_config(cfg: &CorpusConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Self::sample(cfg, &mut rng)
    }

    fn sample(cfg: &CorpusConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut dictionary = BTreeMap::new();
        let mut pairs = Vec::new();
        let f = cfg.fertility;
        let total = f.one_to_one + f.one_to_two + f.two_to_one;
        let partner = |k: usize, rng: &mut ChaCha8Rng| {
            if cfg.vocab_size == 1 {
                k
            } else {
                (k + rng.random_range(1..cfg.vocab_size)) % cfg.vocab_size
            }
        };
        for k in 0..cfg.vocab_size {
            let w = source_word(k);
            let t = target_word(k);
            if rng.random::<f64>() < cfg.swap_prob {
                let p = partner(k, rng);
                pairs.push(PairRule {
                    first: w.clone(),
                    second: source_word(p),
                    kind: PairKind::Swap,
                    target: None,
                });
                dictionary.insert(w, vec![t]);
                continue;
            }
            let u = rng.random::<f64>() * total;
            if u < f.one_to_one {
                dictionary.insert(w, vec![t]);
            } else if u < f.one_to_one + f.one_to_two {
                dictionary.insert(w, vec![t.clone(), format!("{t}b")]);
            } else {
                let p = partner(k, rng);
                pairs.push(PairRule {
                    first: w.clone(),
                    second: source_word(p),
                    kind: PairKind::Merge,
                    target: Some(format!("{t}_{p}")),
                });
                dictionary.insert(w, vec![t]);
            }
        }
        for p in PUNCTUATION {
            dictionary.insert(p.to_string(), vec![p.to_string()]);
        }
        Self::from_spec(ToyModelSpec {
            dictionary,
            pairs,
            embed_dim: cfg.embed_dim,
            seed: cfg.seed,
            attn_sharpness: cfg.attn_sharpness,
            alt_candidates: cfg.alt_candidates,
        })
    }

    pub fn spec(&self) -> &ToyModelSpec {
        &self.spec
    }

    pub fn attn_sharpness(&self) -> f64 {
        self.spec.attn_sharpness
    }

    /// Content words of the source vocabulary (punctuation excluded).
    pub fn content_words(&self) -> Vec<&str> {
        self.spec
            .dictionary
            .keys()
            .map(String::as_str)
            .filter(|w| !PUNCTUATION.contains(w))
            .collect()
    }

    pub fn pair_led_by(&self, word: &str) -> Option<&PairRule> {
        self.pairs.get(word)
    }

    fn entry(&self, word: &str) -> Result<&[String]> {
        self.spec
            .dictionary
            .get(word)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownToken(word.to_string()))
    }

    /// Greedy segmentation of `src`. With `complete == false` a trailing pair
    /// leader is left pending.
    pub fn plan(&self, src: &[String], complete: bool) -> Result<Plan> {
        let mut targets = Vec::new();
        let mut j = 0;
        let mut pending = false;
        let single = |w: &str, j: usize, out: &mut Vec<PlannedToken>| -> Result<()> {
            for t in self.entry(w)? {
                out.push(PlannedToken {
                    token: t.clone(),
                    aligned: vec![j],
                });
            }
            Ok(())
        };
        while j < src.len() {
            let w = &src[j];
            self.entry(w)?;
            match self.pairs.get(w) {
                Some(_) if j + 1 == src.len() && !complete => {
                    pending = true;
                    break;
                }
                Some(rule) if j + 1 < src.len() && src[j + 1] == rule.second => {
                    match rule.kind {
                        PairKind::Merge => targets.push(PlannedToken {
                            token: rule.target.clone().expect("merge target checked at construction"),
                            aligned: vec![j, j + 1],
                        }),
                        PairKind::Swap => {
                            single(&src[j + 1], j + 1, &mut targets)?;
                            single(w, j, &mut targets)?;
                        }
                    }
                    j += 2;
                }
                _ => {
                    single(w, j, &mut targets)?;
                    j += 1;
                }
            }
        }
        Ok(Plan { targets, pending })
    }

    /// Gold translation and alignment of a complete source sentence.
    pub fn reference(&self, src: &[String]) -> Result<ParallelExample> {
        let plan = self.plan(src, true)?;
        Ok(ParallelExample {
            src: src.to_vec(),
            tgt: plan.targets.iter().map(|t| t.token.clone()).collect(),
            align: plan.targets.into_iter().map(|t| t.aligned).collect(),
        })
    }

    fn attention_row(&self, available: usize, aligned: Option<&[usize]>) -> Vec<f64> {
        let primary = aligned.and_then(|a| a.iter().copied().max()).filter(|&j| j < available);
        match primary {
            Some(_) if available == 1 => vec![1.0],
            Some(p) => {
                let rest = (1.0 - self.spec.attn_sharpness) / (available - 1) as f64;
                (0..available)
                    .map(|j| if j == p { self.spec.attn_sharpness } else { rest })
                    .collect()
            }
            None => vec![1.0 / available as f64; available],
        }
    }

    /// Next target token and its alignment row, without the state chain.
    fn next(&self, src: &[String], i: usize, complete: bool) -> Result<(String, Vec<f64>)> {
        let plan = self.plan(src, complete)?;
        let n = src.len();
        if let Some(t) = plan.targets.get(i) {
            return Ok((t.token.clone(), self.attention_row(n, Some(&t.aligned))));
        }
        let finished = complete
            || (!plan.pending && plan.targets.last().is_some_and(|t| is_sentence_final(&t.token)));
        if finished {
            Ok((EOS.to_string(), self.attention_row(n, Some(&[n - 1]))))
        } else {
            Ok((FILLER.to_string(), self.attention_row(n, None)))
        }
    }

    /// One decoder step over the available source states.
    pub fn decode_step(
        &self,
        src: &[String],
        states: &[StateVec],
        tgt_prefix: &[String],
        src_complete: bool,
    ) -> Result<DecodeStep> {
        if states.is_empty() || states.len() != src.len() {
            return Err(Error::Dimension(format!(
                "decode_step needs one state per source token ({} states, {} tokens)",
                states.len(),
                src.len()
            )));
        }
        let (token, attention) = self.next(src, planned_len(tgt_prefix), src_complete)?;
        let energies = attention.iter().map(|a| a.ln()).collect();
        let d = self.spec.embed_dim;
        let mut context = vec![0.0; d];
        for (a, h) in attention.iter().zip(states) {
            for (c, x) in context.iter_mut().zip(h.as_slice()) {
                *c += a * x;
            }
        }
        Ok(DecodeStep {
            token,
            decoder_state: self.decoder_state(tgt_prefix),
            energies,
            attention,
            context: StateVec(context),
        })
    }

    pub fn tgt_embedding(&self, token: &str) -> Option<&[f64]> {
        self.tgt_embed.get(token).map(Vec::as_slice)
    }
}

impl TranslationModel for ToyModel {
    fn dim(&self) -> usize {
        self.spec.embed_dim
    }

    fn encode_token(&self, token: &str, position_idx: usize) -> Result<StateVec> {
        let e = self
            .src_embed
            .get(token)
            .ok_or_else(|| Error::UnknownToken(token.to_string()))?;
        let p = position(position_idx, self.spec.embed_dim);
        Ok(StateVec(e.iter().zip(p).map(|(a, b)| a + b).collect()))
    }

    fn decoder_state(&self, tgt_prefix: &[String]) -> StateVec {
        let d = self.spec.embed_dim;
        let mut s = vec![0.0; d];
        let known: Vec<&Vec<f64>> = tgt_prefix.iter().filter_map(|t| self.tgt_embed.get(t)).collect();
        if !known.is_empty() {
            let n = known.len() as f64;
            for e in known {
                for (acc, x) in s.iter_mut().zip(e) {
                    *acc += x / n;
                }
            }
        }
        for (acc, p) in s.iter_mut().zip(position(tgt_prefix.len(), d)) {
            *acc += p;
        }
        StateVec(s)
    }

    fn next_candidates(&self, src: &[String], tgt_prefix: &[String], src_complete: bool) -> Result<Vec<Candidate>> {
        let (token, _) = self.next(src, planned_len(tgt_prefix), src_complete)?;
        let alt = self.spec.alt_candidates;
        if alt == 0 {
            return Ok(vec![Candidate { token, log_prob: 0.0 }]);
        }
        let others: Vec<&String> = self
            .tgt_vocab
            .iter()
            .filter(|t| **t != token && t.as_str() != EOS && t.as_str() != FILLER)
            .collect();
        let start = tgt_prefix.len() % others.len().max(1);
        let mut out = vec![Candidate {
            token,
            log_prob: TOP_PROB.ln(),
        }];
        let alt_lp = ((1.0 - TOP_PROB) / alt as f64).ln();
        out.extend(others.iter().cycle().skip(start).take(alt.min(others.len())).map(|t| Candidate {
            token: (*t).clone(),
            log_prob: alt_lp,
        }));
        Ok(out)
    }
}

/// Runs the model on a complete source and collects its attention rows.
pub fn full_sentence_translate(model: &ToyModel, src: &[String]) -> Result<(Vec<String>, AttentionMatrix)> {
    if src.is_empty() {
        return Err(Error::Empty("source sentence"));
    }
    let states = model.encode(src)?;
    let mut tgt = Vec::new();
    let mut rows = Vec::new();
    let cap = 2 * src.len() + 5;
    while tgt.len() < cap {
        let step = model.decode_step(src, &states, &tgt, true)?;
        if step.token == EOS {
            break;
        }
        tgt.push(step.token);
        rows.push(step.attention);
    }
    let a = AttentionMatrix::from_rows(rows)?;
    validate_attention(&a)?;
    Ok((tgt, a))
}

/// Samples a model from `cfg` and a corpus of sentences it translates.
pub fn gen_corpus(cfg: &CorpusConfig) -> Result<(ToyModel, Vec<ParallelExample>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = ToyModel::sample(cfg, &mut rng)?;
    let words: Vec<String> = (0..cfg.vocab_size).map(source_word).collect();
    let singles: Vec<String> = words.iter().filter(|w| model.pair_led_by(w).is_none()).cloned().collect();
    let mut corpus = Vec::with_capacity(cfg.sentence_count);
    for _ in 0..cfg.sentence_count {
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let mut src: Vec<String> = Vec::with_capacity(len + 2);
        while src.len() < len {
            // a leader only appears together with its partner; the last
            // slot takes a single word unless every word leads a pair
            let pool = if src.len() + 1 == len && !singles.is_empty() { &singles } else { &words };
            let w = pool.choose(&mut rng).expect("vocab_size > 0").clone();
            let partner = model.pair_led_by(&w).map(|r| r.second.clone());
            src.push(w);
            src.extend(partner);
        }
        src.push(SENTENCE_FINAL.choose(&mut rng).expect("non-empty").to_string());
        corpus.push(model.reference(&src)?);
    }
    Ok((model, corpus))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::{generate_label_matrix, LabelGenConfig};
    use approx::assert_abs_diff_eq;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn hand_model(sharpness: f64, pairs: Vec<PairRule>) -> ToyModel {
        let mut dictionary = BTreeMap::new();
        for (s, t) in [("a", "A"), ("b", "B"), ("c", "C")] {
            dictionary.insert(s.to_string(), vec![t.to_string()]);
        }
        dictionary.insert("d".into(), toks("D1 D2"));
        dictionary.insert(".".into(), toks("."));
        ToyModel::from_spec(ToyModelSpec {
            dictionary,
            pairs,
            embed_dim: 8,
            seed: 3,
            attn_sharpness: sharpness,
            alt_candidates: 0,
        })
        .unwrap()
    }

    fn swap_ab() -> PairRule {
        PairRule {
            first: "a".into(),
            second: "b".into(),
            kind: PairKind::Swap,
            target: None,
        }
    }

    fn merge_bc() -> PairRule {
        PairRule {
            first: "b".into(),
            second: "c".into(),
            kind: PairKind::Merge,
            target: Some("BC".into()),
        }
    }

    #[test]
    fn one_to_one_corpus_is_diagonal() {
        let cfg = CorpusConfig {
            vocab_size: 10,
            sentence_count: 1,
            min_len: 3,
            max_len: 3,
            swap_prob: 0.0,
            fertility: FertilityProbs {
                one_to_one: 1.0,
                one_to_two: 0.0,
                two_to_one: 0.0,
            },
            seed: 7,
            ..CorpusConfig::default()
        };
        let (_, corpus) = gen_corpus(&cfg).unwrap();
        assert_eq!(corpus.len(), 1);
        let ex = &corpus[0];
        assert_eq!(ex.src.len(), 4);
        assert!(is_sentence_final(ex.src.last().unwrap()));
        assert_eq!(ex.align, (0..4).map(|j| vec![j]).collect::<Vec<_>>());
        assert_eq!(ex.tgt.last(), ex.src.last());
    }

    #[test]
    fn forced_swap_reverses_two_word_sentence() {
        let cfg = CorpusConfig {
            sentence_count: 5,
            min_len: 2,
            max_len: 2,
            swap_prob: 1.0,
            seed: 9,
            ..CorpusConfig::default()
        };
        let (model, corpus) = gen_corpus(&cfg).unwrap();
        for ex in corpus {
            let t = |w: &String| model.entry(w).unwrap()[0].clone();
            assert_eq!(ex.tgt[..2], [t(&ex.src[1]), t(&ex.src[0])]);
            assert_eq!(ex.align[..2], [vec![1], vec![0]]);
        }
    }

    #[test]
    fn one_to_two_fertility_adds_a_target() {
        let cfg = CorpusConfig {
            sentence_count: 3,
            min_len: 1,
            max_len: 1,
            swap_prob: 0.0,
            fertility: FertilityProbs {
                one_to_one: 0.0,
                one_to_two: 1.0,
                two_to_one: 0.0,
            },
            seed: 5,
            ..CorpusConfig::default()
        };
        let (_, corpus) = gen_corpus(&cfg).unwrap();
        for ex in corpus {
            assert_eq!(ex.tgt.len(), ex.src.len() + 1);
            assert_eq!(ex.align[0], vec![0]);
            assert_eq!(ex.align[1], vec![0]);
        }
    }

    #[test]
    fn leaders_always_have_their_partner() {
        for seed in 0..5 {
            let (model, corpus) = gen_corpus(&CorpusConfig {
                seed,
                swap_prob: 0.3,
                ..CorpusConfig::default()
            })
            .unwrap();
            for ex in &corpus {
                assert!(ex.src.len() <= CorpusConfig::default().max_len + 1);
                let mut j = 0;
                while j < ex.src.len() {
                    match model.pair_led_by(&ex.src[j]) {
                        Some(rule) => {
                            assert_eq!(ex.src.get(j + 1), Some(&rule.second), "{:?}", ex.src);
                            j += 2;
                        }
                        None => j += 1,
                    }
                }
            }
        }
    }

    #[test]
    fn corpus_is_deterministic_and_config_checked() {
        let cfg = CorpusConfig::default();
        assert_eq!(gen_corpus(&cfg).unwrap().1, gen_corpus(&cfg).unwrap().1);
        let bad = CorpusConfig {
            vocab_size: 0,
            ..CorpusConfig::default()
        };
        assert!(matches!(gen_corpus(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn encoder_is_incremental_and_positional() {
        let m = hand_model(0.8, vec![]);
        let one = m.encode(&toks("a")).unwrap();
        let two = m.encode(&toks("a b")).unwrap();
        assert_eq!(one[..], two[..1]);
        let rep = m.encode(&toks("a b a")).unwrap();
        assert_ne!(rep[0], rep[2]);
        assert!(m.encode(&[]).unwrap().is_empty());
        assert!(matches!(m.encode(&toks("zzz")), Err(Error::UnknownToken(_))));
    }

    #[test]
    fn first_step_of_one_to_one_sentence() {
        let m = hand_model(0.8, vec![]);
        let src = toks("a b c .");
        let states = m.encode(&src).unwrap();
        let step = m.decode_step(&src, &states, &[], true).unwrap();
        assert_eq!(step.token, "A");
        assert!(step.attention[0] > step.attention[1] && step.attention[0] > step.attention[3]);
        // context is the attention-weighted state average
        let want: f64 = step.attention.iter().zip(&states).map(|(a, h)| a * h.0[1]).sum();
        assert_abs_diff_eq!(step.context.0[1], want, epsilon = 1e-12);
        for (e, a) in step.energies.iter().zip(&step.attention) {
            assert_abs_diff_eq!(e.exp(), *a, epsilon = 1e-12);
        }
    }

    #[test]
    fn swap_attends_to_second_word_first() {
        let m = hand_model(0.8, vec![swap_ab()]);
        let src = toks("a b");
        let (tgt, a) = full_sentence_translate(&m, &src).unwrap();
        assert_eq!(tgt, toks("B A"));
        let rows = a.to_rows();
        assert_abs_diff_eq!(rows[0][0], 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(rows[0][1], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(rows[1][0], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(rows[1][1], 0.2, epsilon = 1e-12);
    }

    #[test]
    fn sharpness_one_gives_one_hot_rows() {
        let m = hand_model(1.0, vec![]);
        let (_, a) = full_sentence_translate(&m, &toks("a b c .")).unwrap();
        for i in 0..a.rows() {
            assert_eq!(a.row(i).iter().filter(|&&w| w == 1.0).count(), 1);
        }
    }

    #[test]
    fn punctuation_only_sentence() {
        let m = hand_model(0.8, vec![]);
        let (tgt, a) = full_sentence_translate(&m, &toks(".")).unwrap();
        assert_eq!(tgt, toks("."));
        assert_eq!(a.to_rows(), vec![vec![1.0]]);
    }

    #[test]
    fn pending_leader_yields_filler_then_resolves() {
        let m = hand_model(0.8, vec![swap_ab(), merge_bc()]);
        let src = toks("a");
        let states = m.encode(&src).unwrap();
        let step = m.decode_step(&src, &states, &[], false).unwrap();
        assert_eq!(step.token, FILLER);
        let src = toks("a c");
        let states = m.encode(&src).unwrap();
        assert_eq!(m.decode_step(&src, &states, &[], false).unwrap().token, "A");

        let plan = m.plan(&toks("d b c ."), true).unwrap();
        let got: Vec<_> = plan.targets.iter().map(|t| (t.token.as_str(), t.aligned.clone())).collect();
        assert_eq!(
            got,
            vec![("D1", vec![0]), ("D2", vec![0]), ("BC", vec![1, 2]), (".", vec![3])]
        );
    }

    #[test]
    fn decoding_past_the_end_gives_eos() {
        let m = hand_model(0.8, vec![]);
        let src = toks("a .");
        let states = m.encode(&src).unwrap();
        let step = m.decode_step(&src, &states, &toks("A ."), false).unwrap();
        assert_eq!(step.token, EOS);
        let src = toks("a");
        let states = m.encode(&src).unwrap();
        assert_eq!(m.decode_step(&src, &states, &toks("A"), false).unwrap().token, FILLER);
        assert_eq!(m.decode_step(&src, &states, &toks("A"), true).unwrap().token, EOS);
    }

    #[test]
    fn corpus_roundtrip_and_label_safety() {
        let cfg = CorpusConfig {
            sentence_count: 100,
            swap_prob: 0.2,
            ..CorpusConfig::default()
        };
        let (model, corpus) = gen_corpus(&cfg).unwrap();
        let label_cfg = LabelGenConfig::new(0.5).unwrap();
        for ex in &corpus {
            let (tgt, a) = full_sentence_translate(&model, &ex.src).unwrap();
            assert_eq!(tgt, ex.tgt);
            let l = generate_label_matrix(&a, &label_cfg).unwrap();
            for (i, al) in ex.align.iter().enumerate() {
                assert!(l.write_point(i).unwrap() >= *al.iter().max().unwrap());
            }
        }
    }

    #[test]
    fn spec_roundtrips_through_json() {
        let m = ToyModel::from_config(&CorpusConfig::default()).unwrap();
        let json = serde_json::to_string(m.spec()).unwrap();
        let back = ToyModel::from_spec(serde_json::from_str(&json).unwrap()).unwrap();
        let src = toks("s1 s2 s3 .");
        assert_eq!(back.encode(&src).unwrap(), m.encode(&src).unwrap());
    }

    #[test]
    fn alternative_candidates_rank_below_the_oracle() {
        let mut spec = hand_model(0.8, vec![]).spec().clone();
        spec.alt_candidates = 2;
        let m = ToyModel::from_spec(spec).unwrap();
        let c = m.next_candidates(&toks("a b ."), &[], true).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c[0].token, "A");
        assert!(c[1].log_prob < c[0].log_prob);
        let total: f64 = c.iter().map(|c| c.log_prob.exp()).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }
}
