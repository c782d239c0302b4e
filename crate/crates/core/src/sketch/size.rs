//! Storage arithmetic for full gradients versus sketches.

use crate::error::{Error, Result};

pub const KIB: f64 = 1024.0;
pub const MIB: f64 = 1024.0 * 1024.0;
pub const GIB: f64 = 1024.0 * 1024.0 * 1024.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompressionRatio {
    /// `raw_length / K`.
    pub length_ratio: f64,
    /// Full-gradient bytes over sketch bytes.
    pub size_ratio: f64,
    pub raw_bytes: u64,
    pub sketch_bytes: u64,
}

/// Length and byte ratios of a `raw_length` gradient stored with
/// `raw_bytes_per_value` against a `k`-value sketch stored with
/// `sketch_bytes_per_value` (4 and 2 for the usual fp32 / fp16 pairing).
pub fn compression_ratio(
    raw_length: u64,
    k: u64,
    raw_bytes_per_value: u64,
    sketch_bytes_per_value: u64,
) -> Result<CompressionRatio> {
    if k == 0 {
        return Err(Error::config("K must be at least 1"));
    }
    if raw_length == 0 || raw_bytes_per_value == 0 || sketch_bytes_per_value == 0 {
        return Err(Error::config("lengths and value widths must be positive"));
    }
    let raw_bytes = raw_length * raw_bytes_per_value;
    let sketch_bytes = k * sketch_bytes_per_value;
    Ok(CompressionRatio {
        length_ratio: raw_length as f64 / k as f64,
        size_ratio: raw_bytes as f64 / sketch_bytes as f64,
        raw_bytes,
        sketch_bytes,
    })
}

/// Sketch size in kilobytes of 1000 bytes.
pub fn kilobytes(bytes: u64) -> f64 {
    bytes as f64 / 1000.0
}

/// Sketch size in kibibytes.
pub fn kibibytes(bytes: u64) -> f64 {
    bytes as f64 / KIB
}

/// Size label in the convention of published storage tables: the value is
/// computed in binary units and sub-mebibyte sizes are written as thousandths
/// of a mebibyte, so 131,072 bytes reads `125KB` and 2,097,152 bytes `2MB`.
pub fn table_size_label(bytes: u64) -> String {
    let b = bytes as f64;
    if b >= GIB {
        format!("{}GB", trim(b / GIB))
    } else if b >= MIB {
        format!("{}MB", trim(b / MIB))
    } else {
        format!("{}KB", trim(b / MIB * 1000.0))
    }
}

/// Reduction factor against a full-gradient size quoted in (binary)
/// gigabytes, truncated to an integer the way such tables print it.
pub fn quoted_reduction(full_size_gb: f64, sketch_bytes: u64) -> u64 {
    (full_size_gb * GIB / sketch_bytes as f64).floor() as u64
}

fn trim(v: f64) -> String {
    let s = format!("{v:.1}");
    s.strip_suffix(".0").map(str::to_owned).unwrap_or(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_lengths() {
        let r = compression_ratio(1024, 1024, 4, 2).unwrap();
        assert_eq!(r.length_ratio, 1.0);
        assert_eq!(r.size_ratio, 2.0);
    }

    #[test]
    fn zero_k_is_config_error() {
        assert!(matches!(compression_ratio(10, 0, 4, 2), Err(Error::Config(_))));
    }

    #[test]
    fn both_kilobyte_conventions() {
        assert_eq!(kilobytes(131_072), 131.072);
        assert_eq!(kibibytes(131_072), 128.0);
        assert_eq!(table_size_label(131_072), "125KB");
        assert_eq!(table_size_label(2 * 1024 * 1024), "2MB");
        assert_eq!(table_size_label(32 * 1024 * 1024), "32MB");
        assert_eq!(table_size_label(536_870_912 * 4), "2GB");
    }
}
