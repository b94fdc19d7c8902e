//! Policy label generation: turns the attention matrix of a full-sentence
//! translation into a staircase of legal write points, and extracts the
//! supervised training cells from it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{validate_attention, AttentionMatrix, PolicyLabelMatrix};

/// Slack applied to the `f >= gamma` comparison so that cumulative sums which
/// are mathematically equal to gamma are not lost to rounding.
pub const GAMMA_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelGenConfig {
    pub gamma: f64,
}

impl LabelGenConfig {
    pub fn new(gamma: f64) -> Result<Self> {
        let cfg = Self { gamma };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!(
                "gamma must be in (0, 1], got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

impl Default for LabelGenConfig {
    fn default() -> Self {
        Self { gamma: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Read,
    Write,
}

impl Action {
    pub fn is_write(self) -> bool {
        self == Action::Write
    }
}

impl From<bool> for Action {
    fn from(write: bool) -> Self {
        if write {
            Action::Write
        } else {
            Action::Read
        }
    }
}

/// One supervised example: after reading source `0..=source_index`, should
/// target `target_index` be written?
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingCell {
    pub target_index: usize,
    pub source_index: usize,
    pub label: Action,
}

/// Row-wise cumulative attention.
pub fn cumulative_attention(a: &AttentionMatrix) -> Result<Vec<Vec<f64>>> {
    validate_attention(a)?;
    Ok((0..a.rows())
        .map(|i| {
            a.row(i)
                .iter()
                .scan(0.0, |acc, &w| {
                    *acc += w;
                    Some(*acc)
                })
                .collect()
        })
        .collect())
}

/// Leftmost column holding the row maximum.
fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold(0, |best, (j, &w)| if w > row[best] { j } else { best })
}

pub fn generate_label_matrix(a: &AttentionMatrix, cfg: &LabelGenConfig) -> Result<PolicyLabelMatrix> {
    cfg.validate()?;
    let cum = cumulative_attention(a)?;
    let (rows, cols) = (a.rows(), a.cols());
    let mut labels = PolicyLabelMatrix::zeros(rows, cols);

    let mut prev_wp = 0;
    for (i, f) in cum.iter().enumerate() {
        let peak = argmax(a.row(i));
        let raw = (0..cols).find(|&j| f[j] >= cfg.gamma - GAMMA_EPS && peak <= j);
        // Staircase closure turns the first raw write into a suffix of ones;
        // the cross-row pass clips it so it never starts left of the row above.
        let wp = raw.unwrap_or(cols - 1).max(prev_wp);
        for j in wp..cols {
            labels.set(i, j, true);
        }
        prev_wp = wp;
    }
    Ok(labels)
}

/// Emits the cells a decoder can actually visit: row `i` is evaluated from the
/// write point of row `i - 1` onwards (row 0 from the first column).
pub fn extract_training_cells(l: &PolicyLabelMatrix) -> Vec<TrainingCell> {
    let mut cells = Vec::new();
    let mut start = 0;
    for i in 0..l.rows() {
        for j in start..l.cols() {
            cells.push(TrainingCell {
                target_index: i,
                source_index: j,
                label: l.get(i, j).into(),
            });
        }
        start = l.write_point(i).unwrap_or(l.cols() - 1);
    }
    cells
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::validate_staircase;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn attn(rows: &[&[f64]]) -> AttentionMatrix {
        AttentionMatrix::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    fn bits(l: &PolicyLabelMatrix) -> Vec<Vec<u8>> {
        l.to_bits()
    }

    #[test]
    fn cumsum_examples() {
        let f = cumulative_attention(&attn(&[&[0.7, 0.2, 0.1]])).unwrap();
        for (got, want) in f[0].iter().zip([0.7, 0.9, 1.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
        assert_eq!(cumulative_attention(&attn(&[&[1.0]])).unwrap(), vec![vec![1.0]]);
        let f = cumulative_attention(&attn(&[&[0.1, 0.6, 0.3], &[0.0, 0.2, 0.8]])).unwrap();
        let want = [[0.1, 0.7, 1.0], [0.0, 0.2, 1.0]];
        for (row, wrow) in f.iter().zip(want) {
            for (got, w) in row.iter().zip(wrow) {
                assert_abs_diff_eq!(*got, w, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn cumsum_rejects_invalid_attention() {
        assert!(cumulative_attention(&attn(&[&[0.5, 0.4]])).is_err());
    }

    #[test]
    fn diagonal_example_gamma_06() {
        let a = attn(&[&[0.7, 0.2, 0.1], &[0.1, 0.6, 0.3], &[0.0, 0.2, 0.8]]);
        let l = generate_label_matrix(&a, &LabelGenConfig::new(0.6).unwrap()).unwrap();
        assert_eq!(bits(&l), vec![vec![1, 1, 1], vec![0, 1, 1], vec![0, 0, 1]]);
    }

    #[test]
    fn argmax_constraint_delays_write() {
        let a = attn(&[&[0.3, 0.2, 0.5]]);
        let l = generate_label_matrix(&a, &LabelGenConfig::new(0.5).unwrap()).unwrap();
        assert_eq!(bits(&l), vec![vec![0, 0, 1]]);
    }

    #[test]
    fn cross_row_enforcement() {
        let a = attn(&[&[0.2, 0.8], &[0.9, 0.1]]);
        let l = generate_label_matrix(&a, &LabelGenConfig::new(0.5).unwrap()).unwrap();
        assert_eq!(bits(&l), vec![vec![0, 1], vec![0, 1]]);
    }

    #[test]
    fn argmax_ties_resolve_leftmost() {
        let a = attn(&[&[0.4, 0.4, 0.2]]);
        let l = generate_label_matrix(&a, &LabelGenConfig::new(0.4).unwrap()).unwrap();
        assert_eq!(l.write_point(0), Some(0));
    }

    #[test]
    fn gamma_one_writes_only_at_the_end() {
        let a = attn(&[&[0.5, 0.3, 0.2], &[0.1, 0.1, 0.8]]);
        let l = generate_label_matrix(&a, &LabelGenConfig::new(1.0).unwrap()).unwrap();
        assert_eq!(bits(&l), vec![vec![0, 0, 1], vec![0, 0, 1]]);
    }

    #[test]
    fn gamma_out_of_range() {
        assert!(LabelGenConfig::new(0.0).is_err());
        assert!(LabelGenConfig::new(1.01).is_err());
        assert!(LabelGenConfig::new(f64::NAN).is_err());
    }

    #[test]
    fn training_cells() {
        use Action::*;
        let cell = |i, j, label| TrainingCell {
            target_index: i,
            source_index: j,
            label,
        };
        let l = PolicyLabelMatrix::from_bits(&[&[1, 1], &[0, 1]]).unwrap();
        assert_eq!(
            extract_training_cells(&l),
            vec![cell(0, 0, Write), cell(0, 1, Write), cell(1, 0, Read), cell(1, 1, Write)]
        );
        let l = PolicyLabelMatrix::from_bits(&[&[0, 1]]).unwrap();
        assert_eq!(extract_training_cells(&l), vec![cell(0, 0, Read), cell(0, 1, Write)]);
        let l = PolicyLabelMatrix::from_bits(&[&[1]]).unwrap();
        assert_eq!(extract_training_cells(&l), vec![cell(0, 0, Write)]);

        let l = PolicyLabelMatrix::from_bits(&[&[0, 1, 1], &[0, 0, 1]]).unwrap();
        let cells = extract_training_cells(&l);
        assert_eq!(cells.len(), 5);
        assert_eq!(cells[3], cell(1, 1, Read));
    }

    fn stochastic_matrix() -> impl Strategy<Value = AttentionMatrix> {
        (1usize..6, 1usize..7).prop_flat_map(|(r, c)| {
            prop::collection::vec(prop::collection::vec(0.0f64..1.0, c), r).prop_map(|rows| {
                let rows = rows
                    .into_iter()
                    .map(|row| {
                        let s: f64 = row.iter().sum::<f64>() + 1e-3;
                        let mut row: Vec<f64> = row.iter().map(|v| (v + 1e-3 / row.len() as f64) / s).collect();
                        // push residual rounding into the last cell
                        let err = 1.0 - row.iter().sum::<f64>();
                        *row.last_mut().unwrap() += err;
                        row
                    })
                    .collect();
                AttentionMatrix::from_rows(rows).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn labels_are_always_staircases(a in stochastic_matrix(), gamma in 0.01f64..=1.0) {
            let l = generate_label_matrix(&a, &LabelGenConfig::new(gamma).unwrap()).unwrap();
            prop_assert!(validate_staircase(&l).is_ok());
        }

        #[test]
        fn write_points_monotone_in_gamma(a in stochastic_matrix(), g1 in 0.01f64..=1.0, g2 in 0.01f64..=1.0) {
            let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
            let l_lo = generate_label_matrix(&a, &LabelGenConfig::new(lo).unwrap()).unwrap();
            let l_hi = generate_label_matrix(&a, &LabelGenConfig::new(hi).unwrap()).unwrap();
            for i in 0..a.rows() {
                prop_assert!(l_lo.write_point(i) <= l_hi.write_point(i));
            }
        }

        #[test]
        fn training_cells_cover_reachable_region(a in stochastic_matrix(), gamma in 0.01f64..=1.0) {
            let l = generate_label_matrix(&a, &LabelGenConfig::new(gamma).unwrap()).unwrap();
            let cells = extract_training_cells(&l);
            // every row ends in a write, and labels agree with the matrix
            for i in 0..l.rows() {
                let last = cells.iter().rfind(|c| c.target_index == i).unwrap();
                prop_assert_eq!(last.label, Action::Write);
            }
            for c in &cells {
                prop_assert_eq!(c.label.is_write(), l.get(c.target_index, c.source_index));
            }
        }
    }
}
