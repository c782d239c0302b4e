use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sketch::plan::{ProjectionPlan, ShufflePlan};

pub const SPEC_FORMAT_VERSION: u32 = 1;

/// Number of shuffle rounds used unless configured otherwise.
pub const DEFAULT_LAMBDA: u32 = 20;

/// Rounds suggested for a length-`n` vector by the riffle-shuffle mixing
/// bound, `ceil(1.5 * log2 n)`.
pub fn recommended_lambda(n: u64) -> u32 {
    if n <= 1 {
        return 0;
    }
    (1.5 * (n as f64).log2()).ceil() as u32
}

/// Smallest `K * 2^m` that is at least `raw_length`.
pub fn padded_length(raw_length: u64, k: u64) -> Result<u64> {
    if k == 0 {
        return Err(Error::config("K must be at least 1"));
    }
    let mut n = k;
    while n < raw_length {
        n = n
            .checked_mul(2)
            .ok_or_else(|| Error::config(format!("padded length overflows for raw length {raw_length}")))?;
    }
    Ok(n)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignMode {
    Rademacher,
    /// All signs `+1`. Only useful for lossless checks and plain block sums.
    AllPlus,
}

impl fmt::Display for SignMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SignMode::Rademacher => "rademacher",
            SignMode::AllPlus => "all-plus",
        })
    }
}

impl FromStr for SignMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rademacher" => Ok(SignMode::Rademacher),
            "all-plus" => Ok(SignMode::AllPlus),
            other => Err(Error::config(format!("unknown sign mode {other:?}"))),
        }
    }
}

/// Stable 64-bit identity of a sketch configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SpecId(pub u64);

impl fmt::Display for SpecId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl FromStr for SpecId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        u64::from_str_radix(s, 16).map(SpecId).map_err(|_| Error::data(format!("malformed spec id {s:?}")))
    }
}

/// The persisted parameters of a sketch configuration. Plans are always
/// regenerated from these.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SketchParams {
    pub raw_length: u64,
    pub k: u64,
    pub lambda: u32,
    pub seed: u64,
    pub signs: SignMode,
}

impl SketchParams {
    pub fn new(raw_length: u64, k: u64, lambda: u32, seed: u64) -> Self {
        Self { raw_length, k, lambda, seed, signs: SignMode::Rademacher }
    }

    pub fn with_signs(mut self, signs: SignMode) -> Self {
        self.signs = signs;
        self
    }

    fn canonical(&self) -> String {
        format!(
            "gradtrace-sketch v{SPEC_FORMAT_VERSION} seed={} lambda={} k={} raw_length={} signs={}",
            self.seed, self.lambda, self.k, self.raw_length, self.signs
        )
    }

    pub fn spec_id(&self) -> SpecId {
        let digest = Sha256::digest(self.canonical().as_bytes());
        SpecId(u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes")))
    }
}

/// A compression configuration: parameters, derived padded length, and
/// lazily materialized plans.
#[derive(Debug)]
pub struct SketchSpec {
    params: SketchParams,
    padded_length: u64,
    id: SpecId,
    shuffle: OnceLock<ShufflePlan>,
    projection: OnceLock<ProjectionPlan>,
    gather: OnceLock<Vec<u32>>,
}

impl Clone for SketchSpec {
    fn clone(&self) -> Self {
        Self {
            params: self.params,
            padded_length: self.padded_length,
            id: self.id,
            shuffle: self.shuffle.clone(),
            projection: self.projection.clone(),
            gather: self.gather.clone(),
        }
    }
}

impl PartialEq for SketchSpec {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
    }
}

impl SketchSpec {
    pub fn new(params: SketchParams) -> Result<Self> {
        if params.raw_length == 0 {
            return Err(Error::config("raw length must be positive"));
        }
        let padded_length = padded_length(params.raw_length, params.k)?;
        Ok(Self {
            params,
            padded_length,
            id: params.spec_id(),
            shuffle: OnceLock::new(),
            projection: OnceLock::new(),
            gather: OnceLock::new(),
        })
    }

    pub fn params(&self) -> &SketchParams {
        &self.params
    }

    pub fn id(&self) -> SpecId {
        self.id
    }

    pub fn k(&self) -> usize {
        self.params.k as usize
    }

    pub fn raw_length(&self) -> usize {
        self.params.raw_length as usize
    }

    pub fn padded_length(&self) -> u64 {
        self.padded_length
    }

    /// Number of consecutive shuffled coordinates summed into one bucket.
    pub fn bucket_width(&self) -> u64 {
        self.padded_length / self.params.k
    }

    pub fn shuffle_plan(&self) -> &ShufflePlan {
        self.shuffle.get_or_init(|| {
            ShufflePlan::new(self.params.seed, self.params.lambda, self.padded_length)
                .expect("padded length validated at construction")
        })
    }

    pub fn projection_plan(&self) -> &ProjectionPlan {
        self.projection.get_or_init(|| {
            let (seed, n, k) = (self.params.seed, self.padded_length, self.params.k);
            match self.params.signs {
                SignMode::Rademacher => ProjectionPlan::new(seed, n, k),
                SignMode::AllPlus => ProjectionPlan::all_plus(seed, n, k),
            }
            .expect("K divides padded length by construction")
        })
    }

    /// Composed shuffle as a gather map, built on first use.
    pub fn gather_map(&self) -> Result<&[u32]> {
        if let Some(m) = self.gather.get() {
            return Ok(m);
        }
        let map = self.shuffle_plan().compile()?;
        Ok(self.gather.get_or_init(|| map))
    }

    /// Text form: one `key value` pair per line, versioned, ending with the
    /// spec id so readers can detect edits.
    pub fn to_text(&self) -> String {
        let p = &self.params;
        format!(
            "gradtrace-sketch-spec {SPEC_FORMAT_VERSION}\nseed {}\nlambda {}\nk {}\nraw_length {}\nsigns {}\nspec_id {}\n",
            p.seed, p.lambda, p.k, p.raw_length, p.signs, self.id
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::data("empty spec file"))?;
        match header.split_once(' ') {
            Some(("gradtrace-sketch-spec", v)) if v.trim() == SPEC_FORMAT_VERSION.to_string() => {}
            _ => return Err(Error::data(format!("unsupported spec header {header:?}"))),
        }
        let (mut seed, mut lambda, mut k, mut raw, mut signs, mut id) =
            (None, None, None, None, SignMode::Rademacher, None);
        for line in lines {
            let (key, value) =
                line.split_once(' ').ok_or_else(|| Error::data(format!("malformed spec line {line:?}")))?;
            let value = value.trim();
            let num = |v: &str| v.parse::<u64>().map_err(|_| Error::data(format!("bad value for {key}: {v:?}")));
            match key {
                "seed" => seed = Some(num(value)?),
                "lambda" => lambda = Some(num(value)? as u32),
                "k" => k = Some(num(value)?),
                "raw_length" => raw = Some(num(value)?),
                "signs" => signs = value.parse().map_err(|e: Error| Error::data(e.to_string()))?,
                "spec_id" => id = Some(value.parse::<SpecId>()?),
                other => return Err(Error::data(format!("unknown spec key {other:?}"))),
            }
        }
        let missing = |f: &str| Error::data(format!("spec file missing {f}"));
        let params = SketchParams {
            seed: seed.ok_or_else(|| missing("seed"))?,
            lambda: lambda.ok_or_else(|| missing("lambda"))?,
            k: k.ok_or_else(|| missing("k"))?,
            raw_length: raw.ok_or_else(|| missing("raw_length"))?,
            signs,
        };
        let spec = Self::new(params).map_err(|e| Error::data(e.to_string()))?;
        if let Some(id) = id {
            if id != spec.id() {
                return Err(Error::SpecMismatch { expected: spec.id().to_string(), found: id.to_string() });
            }
        }
        Ok(spec)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Builds the spec for `raw_length`-long gradients compressed to `k` values.
pub fn make_sketch_spec(raw_length: u64, k: u64, lambda: u32, seed: u64) -> Result<SketchSpec> {
    SketchSpec::new(SketchParams::new(raw_length, k, lambda, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_examples() {
        assert_eq!(padded_length(8, 4).unwrap(), 8);
        assert_eq!(padded_length(10, 4).unwrap(), 16);
        assert_eq!(padded_length(3, 4).unwrap(), 4);
        assert!(matches!(padded_length(10, 0), Err(Error::Config(_))));
    }

    #[test]
    fn full_parameter_length_sketches_to_k() {
        let spec = make_sketch_spec(6_738_423_808, 1 << 16, 20, 0).unwrap();
        assert_eq!(spec.k(), 65_536);
        assert_eq!(spec.padded_length(), 1 << 33);
    }

    #[test]
    fn recommended_rounds() {
        assert_eq!(recommended_lambda(1 << 20), 30);
        assert_eq!(DEFAULT_LAMBDA, 20);
    }

    #[test]
    fn spec_id_depends_on_every_parameter() {
        let base = SketchParams::new(100, 8, 2, 1);
        let ids = [
            base.spec_id(),
            SketchParams { seed: 2, ..base }.spec_id(),
            SketchParams { lambda: 3, ..base }.spec_id(),
            SketchParams { k: 16, ..base }.spec_id(),
            SketchParams { raw_length: 101, ..base }.spec_id(),
            base.with_signs(SignMode::AllPlus).spec_id(),
        ];
        for (i, a) in ids.iter().enumerate() {
            for b in &ids[i + 1..] {
                assert_ne!(a, b);
            }
        }
        assert_eq!(base.spec_id(), SketchParams::new(100, 8, 2, 1).spec_id());
    }

    #[test]
    fn text_round_trip_and_tamper_detection() {
        let spec = make_sketch_spec(1328, 512, 20, 7).unwrap();
        let text = spec.to_text();
        assert_eq!(SketchSpec::from_text(&text).unwrap(), spec);
        let tampered = text.replace("seed 7", "seed 8");
        assert!(matches!(SketchSpec::from_text(&tampered), Err(Error::SpecMismatch { .. })));
    }
}
