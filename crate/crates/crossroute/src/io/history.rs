//! Training-history records, one JSON object per line for external plotting.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean sampled-rollout cost over the epoch's training batches.
    pub train_cost: f64,
    /// Mean greedy cost on the fixed validation set.
    pub val_cost: f64,
    pub baseline_replaced: bool,
    pub grad_norm: f64,
}

pub fn write_history(records: &[EpochRecord], path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    for r in records {
        let line = serde_json::to_string(r)
            .map_err(|e| Error::invalid_state(format!("history serialization: {e}")))?;
        writeln!(file, "{line}")?;
    }
    Ok(())
}

pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>> {
    let file = std::fs::File::open(path)?;
    let mut records = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::parse(format!("history record: {e}"), Some(i + 1)))?,
        );
    }
    Ok(records)
}
