use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One prompt/generation pair. Only generation positions are supervised.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToySample {
    pub id: u64,
    pub prompt_tokens: Vec<u32>,
    pub generation_tokens: Vec<u32>,
}

impl ToySample {
    pub fn new(id: u64, prompt_tokens: Vec<u32>, generation_tokens: Vec<u32>) -> Self {
        Self { id, prompt_tokens, generation_tokens }
    }

    pub fn validate(&self) -> Result<()> {
        if self.generation_tokens.is_empty() {
            return Err(Error::input(format!("sample {} has no generation tokens", self.id)));
        }
        Ok(())
    }

    /// Prompt followed by generation.
    pub fn sequence(&self) -> Vec<u32> {
        let mut seq = Vec::with_capacity(self.prompt_tokens.len() + self.generation_tokens.len());
        seq.extend_from_slice(&self.prompt_tokens);
        seq.extend_from_slice(&self.generation_tokens);
        seq
    }

    pub fn tokens(&self) -> impl Iterator<Item = u32> + '_ {
        self.prompt_tokens.iter().chain(&self.generation_tokens).copied()
    }
}

/// Checks per-sample invariants and id uniqueness.
pub fn validate_dataset(samples: &[ToySample]) -> Result<()> {
    let mut seen = HashSet::with_capacity(samples.len());
    for s in samples {
        s.validate()?;
        if !seen.insert(s.id) {
            return Err(Error::data(format!("duplicate sample id {}", s.id)));
        }
    }
    Ok(())
}

/// Reads a dataset file: one JSON object per line with fields `id`,
/// `prompt_tokens` and `generation_tokens`. Blank lines are skipped.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<ToySample>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: ToySample =
            serde_json::from_str(&line).map_err(|e| Error::data(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        out.push(sample);
    }
    validate_dataset(&out)?;
    Ok(out)
}

pub fn write_dataset(path: impl AsRef<Path>, samples: &[ToySample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut w, s).map_err(|e| Error::data(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
