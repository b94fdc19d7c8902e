use crate::error::Result;
use crate::policy::StateVec;

/// End-of-sentence marker returned when the model has nothing left to write.
pub const EOS: &str = "</s>";

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub token: String,
    pub log_prob: f64,
}

/// What the streaming decoder needs from a frozen translation model.
///
/// The encoder must be incremental: the state of source position `j` may only
/// depend on tokens `0..=j`.
pub trait TranslationModel {
    fn dim(&self) -> usize;

    fn encode_token(&self, token: &str, position: usize) -> Result<StateVec>;

    fn encode(&self, src: &[String]) -> Result<Vec<StateVec>> {
        src.iter()
            .enumerate()
            .map(|(j, t)| self.encode_token(t, j))
            .collect()
    }

    /// Decoder state for the next target position given the target prefix.
    fn decoder_state(&self, tgt_prefix: &[String]) -> StateVec;

    /// Next-token candidates, best first. `src_complete` tells the model no
    /// further source tokens will arrive for this sentence.
    fn next_candidates(
        &self,
        src: &[String],
        tgt_prefix: &[String],
        src_complete: bool,
    ) -> Result<Vec<Candidate>>;
}
