//! Binary model checkpoint.
//!
//! Layout (little-endian): magic `GTLM`, `u32` format version, four `u64`
//! shape fields (vocab, context window, embed dim, hidden dim), the
//! parameters as `f64` in layer-map order, then `u64` epochs and `f64`
//! learning rate.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grad::model::{ModelShape, ToyLm};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"GTLM";
pub const VERSION: u32 = 1;

pub fn encode<T: Scalar>(model: &ToyLm<T>) -> Vec<u8> {
    let s = model.shape();
    let mut buf = Vec::with_capacity(4 + 4 + 32 + model.parameter_count() * 8 + 16);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for d in [s.vocab_size, s.context_window, s.embed_dim, s.hidden_dim] {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for p in model.params() {
        buf.extend_from_slice(&p.widen().to_le_bytes());
    }
    buf.extend_from_slice(&model.epochs_trained().to_le_bytes());
    buf.extend_from_slice(&model.learning_rate().to_le_bytes());
    buf
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<ToyLm<T>> {
    let mut r = bytes;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::data("not a model checkpoint (bad magic)"));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::data(format!("unsupported checkpoint version {version}")));
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = usize::try_from(read_u64(&mut r)?).map_err(|_| Error::data("dimension overflows usize"))?;
    }
    let shape = ModelShape { vocab_size: dims[0], context_window: dims[1], embed_dim: dims[2], hidden_dim: dims[3] };
    shape.validate().map_err(|e| Error::data(e.to_string()))?;
    let n = shape.parameter_count();
    if r.len() != n * 8 + 16 {
        return Err(Error::data(format!("checkpoint body is {} bytes, expected {}", r.len(), n * 8 + 16)));
    }
    let mut params = Vec::with_capacity(n);
    for _ in 0..n {
        params.push(T::of(read_f64(&mut r)?));
    }
    let epochs = read_u64(&mut r)?;
    let lr = read_f64(&mut r)?;
    ToyLm::from_parts(shape, params, epochs, lr)
}

pub fn save<T: Scalar>(model: &ToyLm<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode(model))?;
    w.flush()?;
    Ok(())
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<ToyLm<T>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode(&bytes)
}

fn truncated(_: std::io::Error) -> Error {
    Error::data("checkpoint is truncated")
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut &[u8]) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let shape = ModelShape { vocab_size: 5, context_window: 2, embed_dim: 3, hidden_dim: 4 };
        let mut m = ToyLm::<f64>::init(shape, 9).unwrap();
        m.set_training_record(5, 5e-5);
        let bytes = encode(&m);
        assert_eq!(&bytes[..4], b"GTLM");
        let back: ToyLm<f64> = decode(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn corrupt_checkpoints_are_data_errors() {
        let shape = ModelShape { vocab_size: 2, context_window: 1, embed_dim: 1, hidden_dim: 1 };
        let bytes = encode(&ToyLm::<f64>::init(shape, 0).unwrap());
        assert!(matches!(decode::<f64>(&bytes[..bytes.len() - 1]), Err(Error::Data(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode::<f64>(&bad), Err(Error::Data(_))));
    }
}
