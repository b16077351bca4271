//! BTEN1 raw tensor files.
//!
//! Layout: the magic `BTEN1\n`, an ASCII rank line, an ASCII line of
//! space-separated dimensions, then `product(shape)` little-endian `f64`
//! values with no trailing bytes.

use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8] = b"BTEN1\n";

pub fn encode(t: &Tensor) -> Vec<u8> {
    let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
    let mut out = Vec::with_capacity(MAGIC.len() + 32 + t.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(format!("{}\n{}\n", t.rank(), dims.join(" ")).as_bytes());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn read_line(bytes: &[u8], offset: usize) -> Result<(&str, usize)> {
    let rest = &bytes[offset..];
    let end = rest.iter().position(|&b| b == b'\n').ok_or(Error::Format {
        offset,
        msg: "unterminated header line".into(),
    })?;
    let line = std::str::from_utf8(&rest[..end]).map_err(|_| Error::Format {
        offset,
        msg: "header line is not ASCII".into(),
    })?;
    Ok((line, offset + end + 1))
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    if !bytes.starts_with(MAGIC) {
        return Err(Error::Format {
            offset: 0,
            msg: "missing BTEN1 magic".into(),
        });
    }
    let (rank_line, pos) = read_line(bytes, MAGIC.len())?;
    let rank: usize = rank_line.trim().parse().map_err(|_| Error::Format {
        offset: MAGIC.len(),
        msg: format!("bad rank {rank_line:?}"),
    })?;
    let shape_at = pos;
    let (shape_line, pos) = read_line(bytes, pos)?;
    let shape = shape_line
        .split_whitespace()
        .map(|s| s.parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| Error::Format {
            offset: shape_at,
            msg: format!("bad shape line {shape_line:?}"),
        })?;
    if shape.len() != rank {
        return Err(Error::Format {
            offset: shape_at,
            msg: format!("rank {rank} but {} dimensions", shape.len()),
        });
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(8))
        .ok_or(Error::Format {
            offset: shape_at,
            msg: "shape too large".into(),
        })?;
    let payload = &bytes[pos..];
    if payload.len() != count {
        return Err(Error::Format {
            offset: pos,
            msg: format!(
                "payload length mismatch: expected {count} bytes, found {}",
                payload.len()
            ),
        });
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Tensor::new(&shape, data)
}

pub fn write_file(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn round_trip_is_bitwise() {
        let mut rng = Rng::new(21);
        let mut t = Tensor::randn(&[3, 4, 5], 1.0, &mut rng);
        t.data_mut()[0] = -0.0;
        t.data_mut()[1] = f64::MIN_POSITIVE / 2.0;
        let back = decode(&encode(&t)).unwrap();
        assert_eq!(back.shape(), t.shape());
        for (a, b) in back.data().iter().zip(t.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn format_walkthrough() {
        let mut bytes = b"BTEN1\n2\n2 2\n".to_vec();
        for v in [1.0f64, 2.0, 3.0, 4.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let t = decode(&bytes).unwrap();
        assert_eq!(t.shape(), &[2, 2]);
        let eye = Tensor::eye(2);
        assert_eq!(t.matmul(&eye).unwrap(), t);
        assert_eq!(encode(&t), bytes);
    }

    #[test]
    fn truncated_payload_reports_lengths() {
        let t = Tensor::ones(&[2, 3]);
        let mut bytes = encode(&t);
        bytes.truncate(bytes.len() - 5);
        let err = decode(&bytes).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expected 48"), "{msg}");
        assert!(msg.contains("found 43"), "{msg}");
        assert!(matches!(err, Error::Format { offset: 12, .. }));
    }

    #[test]
    fn bad_magic() {
        assert!(matches!(
            decode(b"BTEN2\n1\n1\n"),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn rank_shape_disagreement() {
        let bytes = b"BTEN1\n3\n2 2\n".to_vec();
        assert!(matches!(decode(&bytes), Err(Error::Format { offset: 8, .. })));
    }
}
