use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::source::SourceId;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerEntry {
    pub name: String,
    pub offset: usize,
    pub length: usize,
}

/// Contiguous, non-overlapping layout of named layers inside a flat
/// parameter (or gradient) vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerMap {
    entries: Vec<LayerEntry>,
}

impl LayerMap {
    /// Builds a map from `(name, length)` pairs laid out back to back.
    pub fn from_lengths<S: Into<String>>(layers: impl IntoIterator<Item = (S, usize)>) -> Result<Self> {
        let mut offset = 0;
        let mut entries = Vec::new();
        for (name, length) in layers {
            let name = name.into();
            if length == 0 {
                return Err(Error::config(format!("layer {name} has zero length")));
            }
            entries.push(LayerEntry { name, offset, length });
            offset += length;
        }
        if entries.is_empty() {
            return Err(Error::config("layer map needs at least one layer"));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[LayerEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_len(&self) -> usize {
        self.entries.last().map_or(0, |e| e.offset + e.length)
    }

    pub fn get(&self, name: &str) -> Option<&LayerEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Splits a flat vector into per-layer owned tensors.
    pub fn unflatten<T: Copy>(&self, values: &[T]) -> Result<Vec<(String, Vec<T>)>> {
        if values.len() != self.total_len() {
            return Err(Error::input(format!(
                "vector length {} does not match layer map length {}",
                values.len(),
                self.total_len()
            )));
        }
        Ok(self.entries.iter().map(|e| (e.name.clone(), values[e.offset..e.offset + e.length].to_vec())).collect())
    }

    /// Concatenates per-layer tensors back into one vector, checking names and
    /// lengths against this map.
    pub fn flatten<T: Copy>(&self, layers: &[(String, Vec<T>)]) -> Result<Vec<T>> {
        if layers.len() != self.entries.len() {
            return Err(Error::input("layer count mismatch"));
        }
        let mut out = Vec::with_capacity(self.total_len());
        for (entry, (name, data)) in self.entries.iter().zip(layers) {
            if *name != entry.name || data.len() != entry.length {
                return Err(Error::input(format!("layer {name} does not match {}", entry.name)));
            }
            out.extend_from_slice(data);
        }
        Ok(out)
    }
}

/// A full gradient flattened in [`LayerMap`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatGradient<T> {
    values: Vec<T>,
    layer_map: LayerMap,
    source: SourceId,
}

impl<T: Scalar> FlatGradient<T> {
    pub fn new(values: Vec<T>, layer_map: LayerMap, source: SourceId) -> Result<Self> {
        if values.len() != layer_map.total_len() {
            return Err(Error::input(format!(
                "gradient has {} values, layer map expects {}",
                values.len(),
                layer_map.total_len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!("non-finite gradient entry at {i} for {source}")));
        }
        Ok(Self { values, layer_map, source })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn layer_map(&self) -> &LayerMap {
        &self.layer_map
    }

    pub fn source(&self) -> SourceId {
        self.source
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layer(&self, index: usize) -> &[T] {
        let e = &self.layer_map.entries()[index];
        &self.values[e.offset..e.offset + e.length]
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a.widen() * b.widen()).sum()
    }
}

/// Per-layer outcome of [`layerwise_normalize`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NormalizeReport {
    /// Indices of layers whose slice was entirely zero and left unchanged.
    pub zero_layers: Vec<usize>,
}

/// Rescales every layer slice to unit L2 norm. All-zero layers are returned
/// unchanged and listed in the report.
pub fn layerwise_normalize<T: Scalar>(g: &FlatGradient<T>) -> (FlatGradient<T>, NormalizeReport) {
    let mut values = g.values.clone();
    let mut report = NormalizeReport::default();
    for (i, e) in g.layer_map.entries().iter().enumerate() {
        let slice = &mut values[e.offset..e.offset + e.length];
        if !normalize_slice(slice) {
            report.zero_layers.push(i);
        }
    }
    let out = FlatGradient { values, layer_map: g.layer_map.clone(), source: g.source };
    (out, report)
}

/// Returns false for an all-zero slice, which is left untouched.
///
/// A slice whose norm is already within summation rounding of 1 is left as
/// is, so the output of one call is a fixed point of the next.
fn normalize_slice<T: Scalar>(slice: &mut [T]) -> bool {
    let norm = l2_norm(slice);
    if norm == T::zero() {
        return false;
    }
    let tol = T::epsilon() * T::of(slice.len().max(64) as f64);
    if (norm - T::one()).abs() <= tol {
        return true;
    }
    for v in slice.iter_mut() {
        *v = *v / norm;
    }
    true
}

/// Norm with max-scaling so huge or tiny layers neither overflow nor
/// underflow while squaring.
fn l2_norm<T: Scalar>(slice: &[T]) -> T {
    let max = slice.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    if max == T::zero() {
        return max;
    }
    max * slice.iter().map(|v| (*v / max) * (*v / max)).sum::<T>().sqrt()
}
