use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::features::PairRelevanceMatrix;
use crate::numerics::{Adam, ParamStore};

/// Everything needed to resume training or parse: weights, optimiser
/// moments, vocabulary and corpus statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub dims_hash: String,
    pub epochs_done: usize,
    pub config: RunConfig,
    pub vocab: Vocabulary,
    pub pairs: PairRelevanceMatrix,
    pub params: ParamStore,
    pub optimizer: Adam,
}

impl Checkpoint {
    /// Rejects checkpoints whose stored shapes disagree with their config.
    pub fn verify(&self) -> Result<()> {
        let expected = self.config.dims_hash();
        if self.dims_hash != expected {
            return Err(Error::Checkpoint(format!(
                "dimension hash {} does not match the stored config ({expected})",
                self.dims_hash
            )));
        }
        let (m, v) = self.optimizer.moments();
        if m.len() != self.params.len() || v.len() != self.params.len() {
            return Err(Error::Checkpoint("optimiser state does not match the parameters".into()));
        }
        for (id, name, t) in self.params.iter() {
            if m[id.index()].shape() != t.shape() || v[id.index()].shape() != t.shape() {
                return Err(Error::Checkpoint(format!("optimiser moments for {name} have the wrong shape")));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let r = BufReader::new(File::open(path)?);
        let ck: Checkpoint =
            serde_json::from_reader(r).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        ck.verify()?;
        Ok(ck)
    }
}
