use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::asr::AsrSimConfig;
use crate::decoder::DecoderConfig;
use crate::error::{Error, Result};
use crate::labels::LabelGenConfig;
use crate::policy::{validate_delta, TrainConfig};
use crate::toy::CorpusConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            l2: t.l2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyChoice {
    Learned,
    WaitK { k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub deltas: Vec<f64>,
    pub beams: Vec<usize>,
    /// Fail the sweep if teacher-forced latency is not monotone in delta.
    pub check_monotone: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            deltas: (10..=20).map(|k| k as f64 * 0.05).collect(),
            beams: vec![1, 3],
            check_monotone: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Root seed; every stage derives its own seed from it.
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub labels: LabelGenConfig,
    pub train: TrainSection,
    pub decoder: DecoderConfig,
    pub asr: AsrSimConfig,
    pub word_duration_sec: f64,
    pub policy: PolicyChoice,
    pub teacher_forced: bool,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            corpus: CorpusConfig::default(),
            labels: LabelGenConfig::default(),
            train: TrainSection::default(),
            decoder: DecoderConfig::default(),
            asr: AsrSimConfig::default(),
            word_duration_sec: 0.3,
            policy: PolicyChoice::Learned,
            teacher_forced: false,
            sweep: SweepConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Corpus = 0,
    Train = 1,
    Decode = 2,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let body = std::fs::read_to_string(path.as_ref())?;
        toml::from_str(&body).map_err(|e| Error::Config(format!("{}: {e}", path.as_ref().display())))
    }

    /// Seed of one pipeline stage, derived from the root seed.
    pub fn stage_seed(&self, stage: Stage) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut seed = 0;
        for _ in 0..=stage as usize {
            seed = rng.next_u64();
        }
        seed
    }

    /// Corpus configuration with the derived corpus seed.
    pub fn corpus_config(&self) -> CorpusConfig {
        CorpusConfig {
            seed: self.stage_seed(Stage::Corpus),
            ..self.corpus.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            epochs: self.train.epochs,
            seed: self.stage_seed(Stage::Train),
            l2: self.train.l2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.labels.validate()?;
        self.train_config().validate()?;
        self.decoder.validate()?;
        self.asr.validate()?;
        if !(self.word_duration_sec > 0.0) {
            return Err(Error::Config("word_duration_sec must be > 0".into()));
        }
        if let PolicyChoice::WaitK { k: 0 } = self.policy {
            return Err(Error::Config("wait-k needs k >= 1".into()));
        }
        for &d in &self.sweep.deltas {
            validate_delta(d)?;
        }
        if self.sweep.beams.contains(&0) {
            return Err(Error::Config("beam sizes must be >= 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sweep_grid() {
        let s = SweepConfig::default();
        assert_eq!(s.deltas.len(), 11);
        assert!((s.deltas[0] - 0.5).abs() < 1e-12);
        assert_eq!(s.deltas[10], 1.0);
    }

    #[test]
    fn toml_overrides_and_defaults() {
        let cfg: ExperimentConfig = toml::from_str(
            r#"
            seed = 9
            [corpus]
            sentence_count = 12
            [decoder]
            delta = 0.7
            [policy]
            kind = "wait_k"
            k = 3
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.corpus.sentence_count, 12);
        assert_eq!(cfg.corpus.vocab_size, CorpusConfig::default().vocab_size);
        assert_eq!(cfg.decoder.delta, 0.7);
        assert_eq!(cfg.policy, PolicyChoice::WaitK { k: 3 });
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn stage_seeds_are_distinct_and_stable() {
        let cfg = ExperimentConfig::default();
        let a = cfg.stage_seed(Stage::Corpus);
        assert_eq!(a, cfg.stage_seed(Stage::Corpus));
        assert_ne!(a, cfg.stage_seed(Stage::Train));
        assert_ne!(cfg.stage_seed(Stage::Train), cfg.stage_seed(Stage::Decode));
    }

    #[test]
    fn invalid_values_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.sweep.deltas = vec![0.5, 1.2];
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.corpus.vocab_size = 0;
        assert!(cfg.validate().is_err());
    }
}
