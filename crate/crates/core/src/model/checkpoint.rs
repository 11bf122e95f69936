//! Versioned JSON checkpoints holding the model, its vocabulary and training seed.

use super::{AttentionClassifier, LinearTokenModel};
use crate::data::Vocabulary;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_FORMAT: &str = "faithkit-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SavedModel {
    Attention(AttentionClassifier),
    LinearToken(LinearTokenModel),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub vocab: Vec<String>,
    pub model: SavedModel,
}

impl Checkpoint {
    pub fn new(model: SavedModel, vocab: &Vocabulary, seed: u64) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            seed,
            vocab: vocab.tokens().to_vec(),
            model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let ck: Checkpoint = serde_json::from_reader(file)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint {} v{}", ck.format, ck.version)));
        }
        Ok(ck)
    }

    pub fn vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::from_tokens(self.vocab.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let m = AttentionClassifier::new_random(4, 3, 2, &mut crate::rng::seeded(0));
        let vocab = Vocabulary::new(["a", "b", "c"]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        Checkpoint::new(SavedModel::Attention(m.clone()), &vocab, 7).save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.model, SavedModel::Attention(m));
        assert_eq!(back.seed, 7);
        assert_eq!(back.vocabulary().unwrap(), vocab);
    }
}
