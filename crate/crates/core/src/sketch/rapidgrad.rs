use half::f16;
use half::slice::HalfFloatSliceExt;

use crate::error::{Error, Result};
use crate::grad::FlatGradient;
use crate::scalar::Scalar;
use crate::sketch::plan::ShufflePlan;
use crate::sketch::spec::{SketchSpec, SpecId};
use crate::source::SourceId;

/// K-length compressed gradient, stored in half precision.
#[derive(Clone, Debug, PartialEq)]
pub struct RapidGrad {
    values: Vec<f16>,
    source: SourceId,
    spec_id: SpecId,
}

impl RapidGrad {
    pub fn from_parts(values: Vec<f16>, source: SourceId, spec_id: SpecId) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!("sketch value {i} for {source} is not finite")));
        }
        Ok(Self { values, source, spec_id })
    }

    /// Rounds full-precision bucket sums to half precision.
    pub fn from_full<T: Scalar>(values: &[T], source: SourceId, spec_id: SpecId) -> Result<Self> {
        let values = values.iter().map(|v| f16::from_f64(v.widen())).collect();
        Self::from_parts(values, source, spec_id)
    }

    pub fn values(&self) -> &[f16] {
        &self.values
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.to_f64()).collect()
    }

    pub fn source(&self) -> SourceId {
        self.source
    }

    pub fn with_source(mut self, source: SourceId) -> Self {
        self.source = source;
        self
    }

    pub fn spec_id(&self) -> SpecId {
        self.spec_id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Applies the spec's shuffle to a vector already padded to its length.
pub fn apply_shuffle<E: Copy>(v: &[E], plan: &ShufflePlan) -> Result<Vec<E>> {
    plan.apply(v)
}

/// Sketches `values` (unpadded, length `raw_length`) into `k` bucket sums
/// without rounding the result.
pub fn compress_values<T: Scalar>(values: &[T], spec: &SketchSpec) -> Result<Vec<T>> {
    if values.len() != spec.raw_length() {
        return Err(Error::input(format!(
            "gradient length {} does not match spec raw length {}",
            values.len(),
            spec.raw_length()
        )));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::input(format!("non-finite value at {i}")));
    }
    let map = spec.gather_map()?;
    let signs = spec.projection_plan();
    let width = spec.bucket_width() as usize;
    let raw = values.len();
    let out = map
        .chunks_exact(width)
        .enumerate()
        .map(|(b, block)| {
            let base = b * width;
            block.iter().enumerate().fold(T::zero(), |acc, (i, &src)| {
                let src = src as usize;
                if src >= raw {
                    return acc;
                }
                let v = values[src];
                if signs.is_plus(base + i) {
                    acc + v
                } else {
                    acc - v
                }
            })
        })
        .collect();
    Ok(out)
}

/// Compresses a layer-normalized gradient into a [`RapidGrad`].
pub fn compress<T: Scalar>(g: &FlatGradient<T>, spec: &SketchSpec) -> Result<RapidGrad> {
    let full = compress_values(g.values(), spec)?;
    RapidGrad::from_full(&full, g.source(), spec.id())
}

/// Inner product of two sketches accumulated in `f64`.
pub fn sketch_inner(a: &RapidGrad, b: &RapidGrad) -> Result<f64> {
    if a.spec_id != b.spec_id {
        return Err(Error::SpecMismatch { expected: a.spec_id.to_string(), found: b.spec_id.to_string() });
    }
    if a.values.len() != b.values.len() {
        return Err(Error::input("sketches differ in length"));
    }
    Ok(dot_f16(&a.values, &b.values))
}

/// Half to single conversion is exact, so converting in blocks through the
/// vectorized slice routine gives the same sum as per-element widening.
pub(crate) fn dot_f16(a: &[f16], b: &[f16]) -> f64 {
    const BLOCK: usize = 1024;
    let (mut xa, mut xb) = ([0f32; BLOCK], [0f32; BLOCK]);
    let mut sum = 0.0;
    for (ca, cb) in a.chunks(BLOCK).zip(b.chunks(BLOCK)) {
        let (xa, xb) = (&mut xa[..ca.len()], &mut xb[..cb.len()]);
        ca.convert_to_f32_slice(xa);
        cb.convert_to_f32_slice(xb);
        sum = xa.iter().zip(xb.iter()).fold(sum, |s, (x, y)| s + f64::from(*x) * f64::from(*y));
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::LayerMap;
    use crate::sketch::spec::{SignMode, SketchParams};

    fn flat(values: Vec<f64>) -> FlatGradient<f64> {
        let map = LayerMap::from_lengths([("all", values.len())]).unwrap();
        FlatGradient::new(values, map, SourceId::sample(1)).unwrap()
    }

    #[test]
    fn plain_block_sums() {
        let spec = SketchSpec::new(SketchParams::new(8, 4, 0, 0).with_signs(SignMode::AllPlus)).unwrap();
        let r = compress(&flat((1..=8).map(f64::from).collect()), &spec).unwrap();
        assert_eq!(r.to_f64(), vec![3.0, 7.0, 11.0, 15.0]);
    }

    #[test]
    fn signed_block_sums_follow_frozen_bits() {
        let spec = SketchSpec::new(SketchParams::new(8, 4, 0, 11)).unwrap();
        let plan = spec.projection_plan();
        // Hand computation from the stored bits, independent of compress().
        let v: Vec<f64> = (1..=8).map(f64::from).collect();
        let expected: Vec<f64> = (0..4).map(|b| (0..2).map(|i| plan.sign(2 * b + i) * v[2 * b + i]).sum()).collect();
        let r = compress(&flat(v), &spec).unwrap();
        assert_eq!(r.to_f64(), expected);
        // Sign bits for seed 11, frozen.
        assert_eq!(plan.packed()[0] & 0xff, SIGNS_SEED_11);
        assert_eq!(r.to_f64(), FROZEN_SEED_11);
    }

    const SIGNS_SEED_11: u64 = 0x18;
    // Bits 0b0001_1000: only positions 3 and 4 are +1.
    const FROZEN_SEED_11: [f64; 4] = [-3.0, 1.0, -1.0, -15.0];

    #[test]
    fn zero_vector_compresses_to_zero() {
        let spec = SketchSpec::new(SketchParams::new(10, 4, 3, 5)).unwrap();
        let r = compress(&flat(vec![0.0; 10]), &spec).unwrap();
        assert!(r.to_f64().iter().all(|v| *v == 0.0));
        assert_eq!(r.len(), 4);
    }

    #[test]
    fn rejects_wrong_length_and_mixed_specs() {
        let a = SketchSpec::new(SketchParams::new(10, 4, 3, 5)).unwrap();
        let b = SketchSpec::new(SketchParams::new(10, 4, 3, 6)).unwrap();
        assert!(matches!(compress(&flat(vec![1.0; 9]), &a), Err(Error::Input(_))));
        let x = compress(&flat(vec![1.0; 10]), &a).unwrap();
        let y = compress(&flat(vec![1.0; 10]), &b).unwrap();
        assert!(matches!(sketch_inner(&x, &y), Err(Error::SpecMismatch { .. })));
    }

    #[test]
    fn inner_with_zero_and_self() {
        let spec = SketchSpec::new(SketchParams::new(10, 4, 3, 5)).unwrap();
        let x = compress(&flat((0..10).map(|i| i as f64 - 4.5).collect()), &spec).unwrap();
        let z = compress(&flat(vec![0.0; 10]), &spec).unwrap();
        assert_eq!(sketch_inner(&x, &z).unwrap(), 0.0);
        assert!(sketch_inner(&x, &x).unwrap() >= 0.0);
    }

    #[test]
    fn blocked_dot_matches_elementwise_sum() {
        let a: Vec<f16> = (0..3000).map(|i| f16::from_f64((i as f64 * 0.37).sin())).collect();
        let b: Vec<f16> = (0..3000).map(|i| f16::from_f64((i as f64 * 0.11).cos())).collect();
        let plain: f64 = a.iter().zip(&b).map(|(x, y)| x.to_f64() * y.to_f64()).sum();
        assert_eq!(dot_f16(&a, &b).to_bits(), plain.to_bits());
    }
}
