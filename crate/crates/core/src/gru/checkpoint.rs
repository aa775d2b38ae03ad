use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GruDims, GruParameters};
use crate::error::{Error, Result};

/// JSON parameter snapshot. Matrices are nested row arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub dims: GruDims,
    pub seed: u64,
    pub weights: GruParameters,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cp: Checkpoint = serde_json::from_str(text)?;
        if cp.dims != cp.weights.dims {
            return Err(Error::Model("checkpoint dims disagree with weights".into()));
        }
        cp.weights.check_shapes()?;
        Ok(cp)
    }
}

pub fn save_checkpoint(path: &Path, params: &GruParameters, seed: u64) -> Result<()> {
    let cp = Checkpoint {
        dims: params.dims,
        seed,
        weights: params.clone(),
    };
    std::fs::write(path, cp.to_json()?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_json(&std::fs::read_to_string(path)?)
}
