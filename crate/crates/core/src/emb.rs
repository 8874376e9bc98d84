//! `EMB1` embedding encoding.
//!
//! Layout: the four bytes `EMB1`, little-endian `u32` rows `L`, little-endian
//! `u32` columns `d`, then `L·d` little-endian IEEE-754 single-precision floats
//! in row-major order.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::types::LatentTextEmbedding;

pub const MAGIC: &[u8; 4] = b"EMB1";
const HEADER_LEN: usize = 12;

/// Serialize `e`. Entries are rounded to the nearest `f32`.
pub fn encode(e: &LatentTextEmbedding) -> Result<Vec<u8>> {
    if e.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue("embedding"));
    }
    let (rows, cols) = e.shape();
    let rows = u32::try_from(rows).map_err(|_| Error::Format("too many rows".into()))?;
    let cols = u32::try_from(cols).map_err(|_| Error::Format("too many columns".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * e.as_slice().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for &v in e.as_slice() {
        let single = v as f32;
        if !single.is_finite() {
            return Err(Error::NonFiniteValue("embedding (f32 overflow)"));
        }
        out.extend_from_slice(&single.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<LatentTextEmbedding> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "truncated header: {} bytes",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &bytes[..4])));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("dimension overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "payload is {} bytes, header announces {expected}",
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
        .collect();
    LatentTextEmbedding::new(rows, cols, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};

    #[test]
    fn single_zero_layout() {
        let e = LatentTextEmbedding::zeros(1, 1).unwrap();
        let bytes = encode(&e).unwrap();
        assert_eq!(bytes.len(), 16);
        assert_eq!(&bytes[..4], b"EMB1");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..], &[0, 0, 0, 0]);
        assert_eq!(decode(&bytes).unwrap(), e);
    }

    #[test]
    fn constant_matrix_layout() {
        let e = LatentTextEmbedding::new(2, 3, vec![1.0; 6]).unwrap();
        let bytes = encode(&e).unwrap();
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        for chunk in bytes[12..].chunks(4) {
            assert_eq!(chunk, &1.0f32.to_le_bytes());
        }
    }

    #[test]
    fn bad_magic_and_truncation_are_format_errors() {
        let e = LatentTextEmbedding::new(2, 3, vec![1.0; 6]).unwrap();
        let mut bytes = encode(&e).unwrap();
        assert!(matches!(decode(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        assert!(matches!(decode(&bytes[..7]), Err(Error::Format(_))));
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn random_round_trips_are_bitwise() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let values = (0..16 * 8)
                .map(|_| f64::from(rng.random_range(-10.0f32..10.0)))
                .collect();
            let e = LatentTextEmbedding::new(16, 8, values).unwrap();
            let back = decode(&encode(&e).unwrap()).unwrap();
            assert!(e
                .as_slice()
                .iter()
                .zip(back.as_slice())
                .all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
