//! Seed-derived shuffle and projection plans.
//!
//! Stream allocation for a spec seed: stream 0 produces the projection sign
//! bits (64 per draw, least significant bit first); stream `i + 1` produces
//! shuffle step `i` as four draws: row divisor, row permutation seed, column
//! divisor, column permutation seed. A permutation seed expands into a
//! Fisher-Yates permutation on stream 0 of its own generator.

use crate::error::{Error, Result};
use crate::rng::SplitRng;

/// One reshape-and-permute round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShuffleStep {
    /// Row count when the vector is viewed as `[x_row, n / x_row]`.
    pub x_row: u64,
    pub row_perm_seed: u64,
    /// Column count when the vector is viewed as `[n / x_col, x_col]`.
    pub x_col: u64,
    pub col_perm_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShufflePlan {
    seed: u64,
    lambda: u32,
    padded_length: u64,
    steps: Vec<ShuffleStep>,
}

impl ShufflePlan {
    pub fn new(seed: u64, lambda: u32, padded_length: u64) -> Result<Self> {
        if padded_length == 0 {
            return Err(Error::config("padded length must be positive"));
        }
        let divisors = proper_divisors(padded_length);
        let pick = |rng: &mut SplitRng| {
            if divisors.is_empty() {
                1
            } else {
                divisors[rng.below(divisors.len() as u64) as usize]
            }
        };
        let steps = (0..lambda)
            .map(|i| {
                let mut rng = SplitRng::new(seed, u64::from(i) + 1);
                let x_row = pick(&mut rng);
                let row_perm_seed = rng.next_u64();
                let x_col = pick(&mut rng);
                let col_perm_seed = rng.next_u64();
                ShuffleStep { x_row, row_perm_seed, x_col, col_perm_seed }
            })
            .collect();
        Ok(Self { seed, lambda, padded_length, steps })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn lambda(&self) -> u32 {
        self.lambda
    }

    pub fn padded_length(&self) -> u64 {
        self.padded_length
    }

    pub fn steps(&self) -> &[ShuffleStep] {
        &self.steps
    }

    /// Applies every round to `v`, returning the shuffled copy.
    pub fn apply<E: Copy>(&self, v: &[E]) -> Result<Vec<E>> {
        if v.len() as u64 != self.padded_length {
            return Err(Error::input(format!("shuffle expects length {}, got {}", self.padded_length, v.len())));
        }
        let mut cur = v.to_vec();
        if self.steps.is_empty() {
            return Ok(cur);
        }
        let mut next = cur.clone();
        let n = v.len();
        for step in &self.steps {
            let rows = step.x_row as usize;
            let row_perm = SplitRng::new(step.row_perm_seed, 0).permutation(rows);
            let width = n / rows;
            for (r, &src) in row_perm.iter().enumerate() {
                let src = src as usize;
                next[r * width..(r + 1) * width].copy_from_slice(&cur[src * width..(src + 1) * width]);
            }
            std::mem::swap(&mut cur, &mut next);

            let cols = step.x_col as usize;
            let col_perm = SplitRng::new(step.col_perm_seed, 0).permutation(cols);
            for (dst_row, src_row) in next.chunks_exact_mut(cols).zip(cur.chunks_exact(cols)) {
                for (d, &c) in dst_row.iter_mut().zip(&col_perm) {
                    *d = src_row[c as usize];
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// The composed permutation as a gather map: `out[i] = v[map[i]]`.
    pub fn compile(&self) -> Result<Vec<u32>> {
        if self.padded_length > u64::from(u32::MAX) {
            return Err(Error::config(format!(
                "padded length {} is too large to compile into a gather map",
                self.padded_length
            )));
        }
        let identity: Vec<u32> = (0..self.padded_length as u32).collect();
        self.apply(&identity)
    }
}

/// Divisors of `n` strictly between 1 and `n`, ascending.
pub fn proper_divisors(n: u64) -> Vec<u64> {
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut d = 2u64;
    while d.saturating_mul(d) <= n {
        if n.is_multiple_of(d) {
            small.push(d);
            if d != n / d {
                large.push(n / d);
            }
        }
        d += 1;
    }
    small.extend(large.into_iter().rev());
    small
}

/// Rademacher signs packed one bit per coordinate; a set bit means `+1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProjectionPlan {
    seed: u64,
    padded_length: u64,
    k: u64,
    words: Vec<u64>,
}

impl ProjectionPlan {
    pub fn new(seed: u64, padded_length: u64, k: u64) -> Result<Self> {
        Self::build(seed, padded_length, k, false)
    }

    /// Every sign `+1`; turns compression into plain block sums.
    pub fn all_plus(seed: u64, padded_length: u64, k: u64) -> Result<Self> {
        Self::build(seed, padded_length, k, true)
    }

    fn build(seed: u64, padded_length: u64, k: u64, all_plus: bool) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("K must be at least 1"));
        }
        if !padded_length.is_multiple_of(k) {
            return Err(Error::config(format!("K={k} does not divide padded length {padded_length}")));
        }
        let n_words = padded_length.div_ceil(64) as usize;
        let mut words = if all_plus {
            vec![u64::MAX; n_words]
        } else {
            let mut rng = SplitRng::new(seed, 0);
            (0..n_words).map(|_| rng.next_u64()).collect()
        };
        let tail = padded_length % 64;
        if tail != 0 {
            if let Some(last) = words.last_mut() {
                *last &= (1u64 << tail) - 1;
            }
        }
        Ok(Self { seed, padded_length, k, words })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn padded_length(&self) -> u64 {
        self.padded_length
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn packed(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn is_plus(&self, i: usize) -> bool {
        (self.words[i >> 6] >> (i & 63)) & 1 == 1
    }

    #[inline]
    pub fn sign(&self, i: usize) -> f64 {
        if self.is_plus(i) {
            1.0
        } else {
            -1.0
        }
    }
}
