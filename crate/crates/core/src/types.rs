//! Shared domain vocabulary: tokens, alignment matrices, stream events and
//! session traces.
//!
//! Indices are 0-based throughout the code. Source/target *counts* (such as
//! `g` in a [`WriteRecord`]) are 1-based counts of consumed tokens.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-sum tolerance for attention matrices.
pub const ROW_SUM_TOL: f64 = 1e-6;

pub const PUNCTUATION: [&str; 4] = [",", ".", "?", "!"];
pub const SENTENCE_FINAL: [&str; 3] = [".", "?", "!"];

pub fn is_punct(text: &str) -> bool {
    PUNCTUATION.contains(&text)
}

pub fn is_sentence_final(text: &str) -> bool {
    SENTENCE_FINAL.contains(&text)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub id: u32,
    pub text: String,
    pub is_punct: bool,
    pub is_sentence_final: bool,
}

impl Token {
    pub fn new(id: u32, text: impl Into<String>) -> Self {
        let text = text.into();
        Self {
            id,
            is_punct: is_punct(&text),
            is_sentence_final: is_sentence_final(&text),
            text,
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// Token text <-> id mapping. On disk: one token per line, the 0-based line
/// number is the id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    texts: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_texts<I, S>(texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Self::new();
        for t in texts {
            vocab.insert(t);
        }
        vocab
    }

    /// Returns the id of `text`, adding it if it is new.
    pub fn insert(&mut self, text: impl Into<String>) -> u32 {
        let text = text.into();
        if let Some(&id) = self.ids.get(&text) {
            return id;
        }
        let id = self.texts.len() as u32;
        self.ids.insert(text.clone(), id);
        self.texts.push(text);
        id
    }

    pub fn token(&self, text: &str) -> Result<Token> {
        self.ids
            .get(text)
            .map(|&id| Token::new(id, text))
            .ok_or_else(|| Error::UnknownToken(text.to_string()))
    }

    pub fn text(&self, id: u32) -> Option<&str> {
        self.texts.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let body = std::fs::read_to_string(path)?;
        let mut vocab = Self::new();
        for (n, line) in body.lines().enumerate() {
            let text = line.trim_end_matches('\r');
            if vocab.ids.contains_key(text) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: n + 1,
                    msg: format!("duplicate token `{text}`"),
                });
            }
            vocab.insert(text);
        }
        Ok(vocab)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut body = self.texts.join("\n");
        body.push('\n');
        std::fs::write(path, body)?;
        Ok(())
    }
}

/// Soft alignment weights, one row per target token, one column per source
/// token. Stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct AttentionMatrix {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
}

impl AttentionMatrix {
    /// Builds a matrix from nested rows. Only the shape is checked here; use
    /// [`validate_attention`] for the stochastic invariants.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let (n_rows, n_cols, weights) = flatten(rows)?;
        Ok(Self {
            rows: n_rows,
            cols: n_cols,
            weights,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.cols + j]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.weights.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for AttentionMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(rows)
    }
}

impl From<AttentionMatrix> for Vec<Vec<f64>> {
    fn from(m: AttentionMatrix) -> Self {
        m.to_rows()
    }
}

/// Checks that every entry lies in [0, 1] and every row sums to one within
/// [`ROW_SUM_TOL`]. The error names the first offending row.
pub fn validate_attention(a: &AttentionMatrix) -> Result<()> {
    if a.rows == 0 || a.cols == 0 {
        return Err(Error::Dimension("attention matrix is empty".into()));
    }
    for i in 0..a.rows {
        let row = a.row(i);
        if let Some(&bad) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidAttention {
                row: i,
                reason: format!("entry {bad} outside [0, 1]"),
            });
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::InvalidAttention {
                row: i,
                reason: format!("row sums to {sum}"),
            });
        }
    }
    Ok(())
}

/// Binary matrix of legal write points: `get(i, j)` is true when target `i`
/// may be written after reading source tokens `0..=j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<u8>>", into = "Vec<Vec<u8>>")]
pub struct PolicyLabelMatrix {
    rows: usize,
    cols: usize,
    labels: Vec<bool>,
}

impl PolicyLabelMatrix {
    pub fn from_rows(rows: Vec<Vec<bool>>) -> Result<Self> {
        let (n_rows, n_cols, labels) = flatten(rows)?;
        Ok(Self {
            rows: n_rows,
            cols: n_cols,
            labels,
        })
    }

    pub fn from_bits(rows: &[&[u8]]) -> Result<Self> {
        Self::from_rows(
            rows.iter()
                .map(|r| r.iter().map(|&b| b != 0).collect())
                .collect(),
        )
    }

    pub(crate) fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            labels: vec![false; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.labels[i * self.cols + j]
    }

    pub(crate) fn set(&mut self, i: usize, j: usize, v: bool) {
        self.labels[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.labels[i * self.cols..(i + 1) * self.cols]
    }

    /// First column of row `i` holding a one.
    pub fn write_point(&self, i: usize) -> Option<usize> {
        self.row(i).iter().position(|&b| b)
    }

    pub fn to_bits(&self) -> Vec<Vec<u8>> {
        self.labels
            .chunks(self.cols)
            .map(|r| r.iter().map(|&b| u8::from(b)).collect())
            .collect()
    }
}

impl TryFrom<Vec<Vec<u8>>> for PolicyLabelMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<u8>>) -> Result<Self> {
        Self::from_rows(
            rows.into_iter()
                .map(|r| r.into_iter().map(|b| b != 0).collect())
                .collect(),
        )
    }
}

impl From<PolicyLabelMatrix> for Vec<Vec<u8>> {
    fn from(m: PolicyLabelMatrix) -> Self {
        m.to_bits()
    }
}

/// Checks the staircase invariants: ones extend rightward within a row, a
/// row never writes left of the row above, and the last column is all ones.
pub fn validate_staircase(l: &PolicyLabelMatrix) -> Result<()> {
    if l.rows == 0 || l.cols == 0 {
        return Err(Error::Dimension("label matrix is empty".into()));
    }
    for i in 0..l.rows {
        if !l.get(i, l.cols - 1) {
            return Err(Error::InvalidLabels {
                row: i,
                reason: "last column must be 1".into(),
            });
        }
        if let Some(wp) = l.write_point(i) {
            if l.row(i)[wp..].iter().any(|&b| !b) {
                return Err(Error::InvalidLabels {
                    row: i,
                    reason: "row is not a staircase".into(),
                });
            }
        }
        if i > 0 && l.write_point(i) < l.write_point(i - 1) {
            return Err(Error::InvalidLabels {
                row: i,
                reason: "writes left of the previous row".into(),
            });
        }
    }
    Ok(())
}

fn flatten<T>(rows: Vec<Vec<T>>) -> Result<(usize, usize, Vec<T>)> {
    let n_rows = rows.len();
    let n_cols = rows.first().map_or(0, Vec::len);
    if n_rows == 0 || n_cols == 0 {
        return Err(Error::Dimension("matrix must have at least one row and one column".into()));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != n_cols) {
        return Err(Error::Dimension(format!(
            "row {i} has {} columns, expected {n_cols}",
            rows[i].len()
        )));
    }
    Ok((n_rows, n_cols, rows.into_iter().flatten().collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    Partial,
    Final,
    EndOfStream,
}

/// One ASR emission. `tokens` is the full hypothesis since the start of the
/// stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEvent {
    pub time_sec: f64,
    pub kind: EventKind,
    pub tokens: Vec<String>,
}

impl StreamEvent {
    pub fn partial(time_sec: f64, tokens: Vec<String>) -> Self {
        Self {
            time_sec,
            kind: EventKind::Partial,
            tokens,
        }
    }

    pub fn final_(time_sec: f64, tokens: Vec<String>) -> Self {
        Self {
            time_sec,
            kind: EventKind::Final,
            tokens,
        }
    }

    pub fn end_of_stream(time_sec: f64) -> Self {
        Self {
            time_sec,
            kind: EventKind::EndOfStream,
            tokens: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WriteRecord {
    /// Target index within the current segment.
    pub i: usize,
    pub token: String,
    /// Source tokens consumed in the current segment when this was written.
    pub g_i: usize,
    pub t_write: f64,
    /// Time at which the `g_i`-th source token was consumed.
    pub t_source_consumed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadRecord {
    /// Source index within the current segment.
    pub j: usize,
    pub token: String,
    pub t_read: f64,
}

/// Reads and writes of a session. Indices restart after every flush;
/// `flush_points` holds the lengths of `writes` at each reset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionTrace {
    pub writes: Vec<WriteRecord>,
    pub reads: Vec<ReadRecord>,
    pub flush_points: Vec<usize>,
    /// Lengths of `reads` at each reset, parallel to `flush_points`.
    pub read_flush_points: Vec<usize>,
}

/// The reads and writes of one segment (between two flushes).
#[derive(Debug, Clone, Copy)]
pub struct SegmentTrace<'a> {
    pub writes: &'a [WriteRecord],
    pub reads: &'a [ReadRecord],
}

impl SessionTrace {
    /// Splits the trace at its flush points. A trailing unflushed segment is
    /// included when it holds any reads or writes.
    pub fn segments(&self) -> Vec<SegmentTrace<'_>> {
        let mut out = Vec::new();
        let (mut w0, mut r0) = (0, 0);
        for (&w1, &r1) in self.flush_points.iter().zip(&self.read_flush_points) {
            out.push(SegmentTrace {
                writes: &self.writes[w0..w1],
                reads: &self.reads[r0..r1],
            });
            (w0, r0) = (w1, r1);
        }
        if w0 < self.writes.len() || r0 < self.reads.len() {
            out.push(SegmentTrace {
                writes: &self.writes[w0..],
                reads: &self.reads[r0..],
            });
        }
        out
    }

    pub fn g(&self) -> Vec<usize> {
        self.writes.iter().map(|w| w.g_i).collect()
    }

    pub fn tokens(&self) -> Vec<String> {
        self.writes.iter().map(|w| w.token.clone()).collect()
    }
}

impl SegmentTrace<'_> {
    pub fn g(&self) -> Vec<usize> {
        self.writes.iter().map(|w| w.g_i).collect()
    }
}
