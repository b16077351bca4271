use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 8-bit image stored planar, channel-major (`C × H × W`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image8 {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Image8 {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::shape(format!("image {channels}×{height}×{width} is empty")));
        }
        if data.len() != channels * height * width {
            return Err(Error::shape(format!(
                "{} bytes for a {channels}×{height}×{width} image",
                data.len()
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: u8) -> Result<Self> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn plane(&self, c: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> u8 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: u8) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            &[self.channels, self.height, self.width],
            self.data.iter().map(|&v| v as f64).collect(),
        )
        .expect("image dimensions are consistent")
    }

    /// Round to nearest and clamp to `[0, 255]`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (c, h, w) = t.dims3()?;
        Self::new(c, h, w, t.data().iter().map(|&v| quantize(v)).collect())
    }

    /// Binary PGM (`P5`) for one channel, PPM (`P6`) for three.
    pub fn encode_pnm(&self) -> Result<Vec<u8>> {
        let magic = match self.channels {
            1 => "P5",
            3 => "P6",
            c => return Err(Error::shape(format!("PNM holds 1 or 3 channels, image has {c}"))),
        };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        let n = self.height * self.width;
        out.reserve(self.data.len());
        for p in 0..n {
            for c in 0..self.channels {
                out.push(self.data[c * n + p]);
            }
        }
        Ok(out)
    }

    pub fn decode_pnm(bytes: &[u8]) -> Result<Self> {
        let mut cur = Header { bytes, pos: 0 };
        let (_, magic) = cur.token()?;
        let channels = match magic.as_str() {
            "P5" => 1,
            "P6" => 3,
            m => {
                return Err(Error::Format {
                    offset: 0,
                    msg: format!("expected P5 or P6, found {m:?}"),
                })
            }
        };
        let width = cur.number()?;
        let height = cur.number()?;
        let maxval = cur.number()?;
        if maxval != 255 {
            return Err(Error::Format {
                offset: cur.pos,
                msg: format!("only maxval 255 is supported, found {maxval}"),
            });
        }
        // exactly one whitespace byte separates the header from the raster
        let start = cur.pos + 1;
        let n = width * height;
        let expected = n * channels;
        let payload = bytes.get(start..).unwrap_or(&[]);
        if payload.len() < expected {
            return Err(Error::Format {
                offset: bytes.len(),
                msg: format!("raster truncated: expected {expected} bytes, found {}", payload.len()),
            });
        }
        let mut data = vec![0u8; expected];
        for p in 0..n {
            for c in 0..channels {
                data[c * n + p] = payload[p * channels + c];
            }
        }
        Self::new(channels, height, width, data).map_err(|e| Error::Format {
            offset: 0,
            msg: e.to_string(),
        })
    }

    pub fn read_pnm(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode_pnm(&bytes)
    }

    pub fn write_pnm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode_pnm()?).map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn quantize(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    v.round().clamp(0.0, 255.0) as u8
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn token(&mut self) -> Result<(usize, String)> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b'#') => {
                    while !matches!(self.bytes.get(self.pos), None | Some(b'\n')) {
                        self.pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
        let start = self.pos;
        while matches!(self.bytes.get(self.pos), Some(b) if !b.is_ascii_whitespace()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format {
                offset: start,
                msg: "unexpected end of header".into(),
            });
        }
        Ok((start, String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned()))
    }

    fn number(&mut self) -> Result<usize> {
        let (at, tok) = self.token()?;
        tok.parse().map_err(|_| Error::Format {
            offset: at,
            msg: format!("expected a header integer, found {tok:?}"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip() {
        let data: Vec<u8> = (0..3 * 2 * 4).map(|i| (i * 11) as u8).collect();
        let img = Image8::new(3, 2, 4, data).unwrap();
        let bytes = img.encode_pnm().unwrap();
        assert!(bytes.starts_with(b"P6\n4 2\n255\n"));
        assert_eq!(Image8::decode_pnm(&bytes).unwrap(), img);
    }

    #[test]
    fn pgm_with_comment() {
        let mut bytes = b"P5\n# made by hand\n3 1\n255\n".to_vec();
        bytes.extend([0, 128, 255]);
        let img = Image8::decode_pnm(&bytes).unwrap();
        assert_eq!((img.channels(), img.height(), img.width()), (1, 1, 3));
        assert_eq!(img.data(), &[0, 128, 255]);
    }

    #[test]
    fn interleaving() {
        let mut bytes = b"P6 2 1 255\n".to_vec();
        bytes.extend([1, 2, 3, 4, 5, 6]);
        let img = Image8::decode_pnm(&bytes).unwrap();
        assert_eq!(img.data(), &[1, 4, 2, 5, 3, 6]);
    }

    #[test]
    fn malformed() {
        assert!(matches!(Image8::decode_pnm(b"P3\n1 1\n255\n"), Err(Error::Format { .. })));
        assert!(matches!(Image8::decode_pnm(b"P5\n2 2\n255\n\x01"), Err(Error::Format { .. })));
        assert!(matches!(Image8::decode_pnm(b"P5\n1 1\n65535\n\x01\x01"), Err(Error::Format { .. })));
        assert!(matches!(Image8::decode_pnm(b"P5\nx 1\n255\n\x01"), Err(Error::Format { offset: 3, .. })));
    }

    #[test]
    fn tensor_quantizes() {
        let t = Tensor::new(&[1, 1, 4], vec![-3.0, 12.5, 254.6, 900.0]).unwrap();
        assert_eq!(Image8::from_tensor(&t).unwrap().data(), &[0, 13, 255, 255]);
    }
}
