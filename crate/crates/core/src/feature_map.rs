//! Dense `channels × rows × cols` grids and their raster file format.
//!
//! Raster layout (all integers little-endian):
//!
//! | bytes | content                           |
//! |-------|-----------------------------------|
//! | 0..4  | magic `GAFM`                      |
//! | 4..8  | format version, `u32` (= 1)       |
//! | 8..20 | channels, rows, cols as `u32`     |
//! | 20..  | `f64` payload, row-major per channel |

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const RASTER_MAGIC: [u8; 4] = *b"GAFM";
pub const RASTER_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, rows: usize, cols: usize) -> Self {
        Self { channels, rows, cols, data: vec![0.0; channels * rows * cols] }
    }

    pub fn from_vec(channels: usize, rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || rows == 0 || cols == 0 {
            return Err(Error::ShapeMismatch(format!(
                "feature map dimensions must be positive, got {channels}x{rows}x{cols}"
            )));
        }
        if data.len() != channels * rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {channels}x{rows}x{cols} map",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("feature map entries must be finite".into()));
        }
        Ok(Self { channels, rows, cols, data })
    }

    pub fn from_fn(channels: usize, rows: usize, cols: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(channels * rows * cols);
        for k in 0..channels {
            for r in 0..rows {
                for c in 0..cols {
                    data.push(f(k, r, c));
                }
            }
        }
        Self { channels, rows, cols, data }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.rows, self.cols)
    }

    pub fn plane_len(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn index(&self, channel: usize, row: usize, col: usize) -> usize {
        (channel * self.rows + row) * self.cols + col
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[self.index(channel, row, col)]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, row: usize, col: usize, value: f64) {
        let i = self.index(channel, row, col);
        self.data[i] = value;
    }

    pub fn row(&self, channel: usize, row: usize) -> &[f64] {
        let start = self.index(channel, row, 0);
        &self.data[start..start + self.cols]
    }

    pub fn plane(&self, channel: usize) -> &[f64] {
        let start = channel * self.plane_len();
        &self.data[start..start + self.plane_len()]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn write_raster<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&RASTER_MAGIC)?;
        w.write_all(&RASTER_VERSION.to_le_bytes())?;
        for dim in [self.channels, self.rows, self.cols] {
            w.write_all(&(dim as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 8);
        for x in &self.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn to_raster_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.data.len() * 8);
        self.write_raster(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_raster<R: Read>(mut r: R) -> Result<Self> {
        let io = |e: std::io::Error| Error::Raster(e.to_string());
        let mut header = [0u8; 20];
        r.read_exact(&mut header).map_err(io)?;
        if header[0..4] != RASTER_MAGIC {
            return Err(Error::Raster("bad magic".into()));
        }
        let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != RASTER_VERSION {
            return Err(Error::Raster(format!("unsupported version {version}")));
        }
        let (channels, rows, cols) = (word(8) as usize, word(12) as usize, word(16) as usize);
        let n = channels
            .checked_mul(rows)
            .and_then(|x| x.checked_mul(cols))
            .ok_or_else(|| Error::Raster("dimensions overflow".into()))?;
        let mut payload = Vec::new();
        r.read_to_end(&mut payload).map_err(io)?;
        if payload.len() != n * 8 {
            return Err(Error::Raster(format!("expected {} payload bytes, found {}", n * 8, payload.len())));
        }
        let data = payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Self::from_vec(channels, rows, cols, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raster_round_trip_and_header() {
        let map = FeatureMap::from_fn(2, 3, 4, |k, r, c| (k * 100 + r * 10 + c) as f64 * 0.5 - 3.0);
        let bytes = map.to_raster_bytes();
        assert_eq!(&bytes[0..4], b"GAFM");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 20 + 24 * 8);
        assert_eq!(FeatureMap::read_raster(&bytes[..]).unwrap(), map);
    }

    #[test]
    fn raster_rejects_truncation_and_bad_magic() {
        let map = FeatureMap::zeros(1, 2, 2);
        let bytes = map.to_raster_bytes();
        assert!(FeatureMap::read_raster(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(FeatureMap::read_raster(&bad[..]).is_err());
    }

    #[test]
    fn from_vec_validates() {
        assert!(FeatureMap::from_vec(1, 2, 2, vec![0.0; 3]).is_err());
        assert!(FeatureMap::from_vec(1, 1, 1, vec![f64::NAN]).is_err());
        assert!(FeatureMap::from_vec(0, 1, 1, vec![]).is_err());
    }
}
