//! UV position maps and the `UVPM` binary format.
//!
//! Layout (little-endian): `b"UVPM"`, `u32` width, `u32` height, then
//! `width*height` f32 X values, the same count of Y values, then Z values
//! (planar, row-major), then `width*height` validity bytes (0 or 1).

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, GeometryError, Result};

pub const UVPM_MAGIC: &[u8; 4] = b"UVPM";

/// Camera-space XYZ per UV texel. X and Y are image pixel coordinates with pixel
/// centers on integers; Z grows toward the camera.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionMap {
    width: usize,
    height: usize,
    coords: Vec<[f32; 3]>,
    valid: Vec<bool>,
}

impl PositionMap {
    pub fn new(width: usize, height: usize, coords: Vec<[f32; 3]>, valid: Vec<bool>) -> Result<Self> {
        if coords.len() != width * height || valid.len() != width * height {
            return Err(Error::shape(format!("position map buffers do not match {width}x{height}")));
        }
        for (i, (c, &ok)) in coords.iter().zip(&valid).enumerate() {
            if ok && !c.iter().all(|v| v.is_finite()) {
                return Err(Error::geometry(
                    crate::error::FaceRole::Source,
                    GeometryError::NonFinite { x: i % width, y: i / width },
                ));
            }
        }
        Ok(Self { width, height, coords, valid })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn coord(&self, x: usize, y: usize) -> [f32; 3] {
        self.coords[y * self.width + x]
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn coords(&self) -> &[[f32; 3]] {
        &self.coords
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    /// Checks that every valid XY, rounded, lands inside a `width`x`height` image.
    pub fn fits_image(&self, width: usize, height: usize) -> bool {
        self.coords.iter().zip(&self.valid).filter(|(_, &ok)| ok).all(|(c, _)| {
            let x = c[0].round();
            let y = c[1].round();
            x >= 0.0 && y >= 0.0 && x <= (width - 1) as f32 && y <= (height - 1) as f32
        })
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(UVPM_MAGIC)?;
        w.write_u32::<LittleEndian>(self.width as u32)?;
        w.write_u32::<LittleEndian>(self.height as u32)?;
        for axis in 0..3 {
            for c in &self.coords {
                w.write_f32::<LittleEndian>(c[axis])?;
            }
        }
        let mask: Vec<u8> = self.valid.iter().map(|&b| b as u8).collect();
        w.write_all(&mask)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != UVPM_MAGIC {
            return Err(Error::param("not a UVPM position map (bad magic)"));
        }
        let width = r.read_u32::<LittleEndian>()? as usize;
        let height = r.read_u32::<LittleEndian>()? as usize;
        let n = width
            .checked_mul(height)
            .filter(|&n| n > 0 && n <= 1 << 26)
            .ok_or_else(|| Error::param(format!("implausible UVPM size {width}x{height}")))?;
        let mut planes = vec![0f32; n * 3];
        r.read_f32_into::<LittleEndian>(&mut planes)?;
        let mut mask = vec![0u8; n];
        r.read_exact(&mut mask)?;
        if let Some(bad) = mask.iter().find(|&&b| b > 1) {
            return Err(Error::param(format!("UVPM validity byte {bad} is not 0 or 1")));
        }
        let coords = (0..n).map(|i| [planes[i], planes[n + i], planes[2 * n + i]]).collect();
        Self::new(width, height, coords, mask.iter().map(|&b| b == 1).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(12 + self.coords.len() * 13);
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uvpm_layout_is_planar() {
        let pm = PositionMap::new(2, 1, vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]], vec![true, false]).unwrap();
        let bytes = pm.to_bytes();
        assert_eq!(&bytes[..4], b"UVPM");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        let floats: Vec<f32> =
            bytes[12..36].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        assert_eq!(floats, vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(&bytes[36..], &[1, 0]);
        assert_eq!(PositionMap::read_from(&bytes[..]).unwrap(), pm);
    }

    #[test]
    fn truncated_uvpm_rejected() {
        let pm = PositionMap::new(2, 2, vec![[0.0; 3]; 4], vec![true; 4]).unwrap();
        let bytes = pm.to_bytes();
        assert!(PositionMap::read_from(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(PositionMap::read_from(&bad[..]).is_err());
    }

    #[test]
    fn nonfinite_valid_coordinate_rejected() {
        assert!(PositionMap::new(1, 1, vec![[f32::NAN, 0.0, 0.0]], vec![true]).is_err());
        assert!(PositionMap::new(1, 1, vec![[f32::NAN, 0.0, 0.0]], vec![false]).is_ok());
    }
}
