//! Dense 3D grids and their on-disk formats.
//!
//! Volume files: a 12-byte header of three little-endian `u32` dims
//! (`[d0, d1, d2]`), then `d0*d1*d2` little-endian `f32` values in row-major
//! order (last axis fastest). Mask files share the header and store one byte
//! per voxel (0 or 1).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub type Shape3 = [usize; 3];

pub fn voxel_count(shape: Shape3) -> usize {
    shape[0] * shape[1] * shape[2]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    shape: Shape3,
    data: Vec<f32>,
}

impl Volume {
    pub fn zeros(shape: Shape3) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: Shape3, value: f32) -> Self {
        Volume {
            shape,
            data: vec![value; voxel_count(shape)],
        }
    }

    pub fn from_vec(shape: Shape3, data: Vec<f32>) -> Result<Self> {
        if data.len() != voxel_count(shape) {
            return Err(Error::Shape(format!(
                "{} values for shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Volume { shape, data })
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.shape[1] + j) * self.shape[2] + k
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.index(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f32) {
        let idx = self.index(i, j, k);
        self.data[idx] = v;
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = header_bytes(self.shape);
        out.reserve(self.data.len() * 4);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let shape = parse_header(bytes, path)?;
        let body = &bytes[12..];
        if body.len() != voxel_count(shape) * 4 {
            return Err(Error::format(
                path,
                format!("expected {} body bytes, found {}", voxel_count(shape) * 4, body.len()),
            ));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Volume { shape, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Axis-aligned slice through the middle of `axis`, as a row-major 2D grid.
    pub fn mid_slice(&self, axis: usize) -> (usize, usize, Vec<f32>) {
        let [d0, d1, d2] = self.shape;
        match axis {
            0 => {
                let i = d0 / 2;
                let v = (0..d1)
                    .flat_map(|j| (0..d2).map(move |k| (j, k)))
                    .map(|(j, k)| self.get(i, j, k))
                    .collect();
                (d1, d2, v)
            }
            1 => {
                let j = d1 / 2;
                let v = (0..d0)
                    .flat_map(|i| (0..d2).map(move |k| (i, k)))
                    .map(|(i, k)| self.get(i, j, k))
                    .collect();
                (d0, d2, v)
            }
            _ => {
                let k = d2 / 2;
                let v = (0..d0)
                    .flat_map(|i| (0..d1).map(move |j| (i, j)))
                    .map(|(i, j)| self.get(i, j, k))
                    .collect();
                (d0, d1, v)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    shape: Shape3,
    data: Vec<bool>,
}

impl Mask {
    pub fn empty(shape: Shape3) -> Self {
        Mask {
            shape,
            data: vec![false; voxel_count(shape)],
        }
    }

    pub fn from_vec(shape: Shape3, data: Vec<bool>) -> Result<Self> {
        if data.len() != voxel_count(shape) {
            return Err(Error::Shape(format!(
                "{} mask values for shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Mask { shape, data })
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: bool) {
        let idx = (i * self.shape[1] + j) * self.shape[2] + k;
        self.data[idx] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = header_bytes(self.shape);
        out.extend(self.data.iter().map(|&b| b as u8));
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let shape = parse_header(bytes, path)?;
        let body = &bytes[12..];
        if body.len() != voxel_count(shape) {
            return Err(Error::format(path, "mask body length does not match header"));
        }
        let data = body
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::format(path, format!("mask byte {other} is not 0/1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Mask { shape, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

fn header_bytes(shape: Shape3) -> Vec<u8> {
    let mut out = Vec::with_capacity(12);
    for d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<Shape3> {
    if bytes.len() < 12 {
        return Err(Error::format(path, "file shorter than 12-byte header"));
    }
    let dim = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize;
    Ok([dim(0), dim(4), dim(8)])
}

/// Binary (P5) PGM of a 2D grid, linearly mapped from `[lo, hi]` to `0..=255`.
pub fn pgm_bytes(rows: usize, cols: usize, values: &[f32], lo: f32, hi: f32) -> Vec<u8> {
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    let span = if hi > lo { hi - lo } else { 1.0 };
    out.extend(values.iter().map(|&v| {
        let t = ((v - lo) / span).clamp(0.0, 1.0);
        (t * 255.0).round() as u8
    }));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn volume_bytes_layout() {
        let mut v = Volume::zeros([2, 3, 4]);
        v.set(1, 2, 3, 7.5);
        let b = v.to_bytes();
        assert_eq!(&b[0..4], &2u32.to_le_bytes());
        assert_eq!(&b[4..8], &3u32.to_le_bytes());
        assert_eq!(&b[8..12], &4u32.to_le_bytes());
        assert_eq!(b.len(), 12 + 24 * 4);
        // last voxel is the last 4 bytes in row-major order
        assert_eq!(&b[b.len() - 4..], &7.5f32.to_le_bytes());
        let back = Volume::from_bytes(&b, Path::new("mem")).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn mask_rejects_non_binary_bytes() {
        let mut b = Mask::empty([1, 1, 2]).to_bytes();
        b[13] = 2;
        assert!(Mask::from_bytes(&b, Path::new("mem")).is_err());
    }

    #[test]
    fn truncated_volume_is_rejected() {
        let b = Volume::zeros([2, 2, 2]).to_bytes();
        assert!(Volume::from_bytes(&b[..b.len() - 1], Path::new("mem")).is_err());
    }

    #[test]
    fn pgm_header_and_scaling() {
        let p = pgm_bytes(1, 3, &[0.0, 0.5, 1.0], 0.0, 1.0);
        assert!(p.starts_with(b"P5\n3 1\n255\n"));
        assert_eq!(&p[p.len() - 3..], &[0, 128, 255]);
    }
}
