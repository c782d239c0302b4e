use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Identity of a gradient or sketch: a whole sample, or one supervised
/// position inside it.
///
/// Ordering is by sample id, then whole-sample before token entries, then
/// token index. Rankings use this order to break score ties.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SourceId {
    pub sample: u64,
    pub token: Option<u32>,
}

impl SourceId {
    pub const fn sample(id: u64) -> Self {
        Self { sample: id, token: None }
    }

    pub const fn token(id: u64, index: u32) -> Self {
        Self { sample: id, token: Some(index) }
    }

    pub fn is_token(&self) -> bool {
        self.token.is_some()
    }
}

impl fmt::Display for SourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.token {
            None => write!(f, "{}", self.sample),
            Some(j) => write!(f, "{}/{}", self.sample, j),
        }
    }
}

impl FromStr for SourceId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || Error::data(format!("malformed source id {s:?}"));
        match s.split_once('/') {
            None => Ok(Self::sample(s.parse().map_err(|_| bad())?)),
            Some((id, j)) => Ok(Self::token(id.parse().map_err(|_| bad())?, j.parse().map_err(|_| bad())?)),
        }
    }
}
