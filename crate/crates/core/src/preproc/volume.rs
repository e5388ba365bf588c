//! The 3D scalar grid and its `.vgrid` container.
//!
//! `.vgrid` layout, all little-endian:
//!
//! ```text
//! "VGRD"      magic
//! version     u32 (currently 1)
//! D, H, W     u64 each
//! spacing     3 x f64, millimetres along D, H, W
//! values      D*H*W x f64, row-major with W fastest
//! ```

use std::fs;
use std::path::Path;

use crate::binio::{read_f64, read_f64s, read_u32, read_u64, write_atomic};
use crate::error::{Error, Result};

pub const VGRID_MAGIC: &[u8; 4] = b"VGRD";
pub const VGRID_VERSION: u32 = 1;

/// A `D x H x W` grid of reals with voxel spacing in millimetres. Axis 0
/// indexes axial slices.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    shape: [usize; 3],
    spacing_mm: [f64; 3],
    values: Vec<f64>,
}

impl Volume {
    pub fn new(shape: [usize; 3], spacing_mm: [f64; 3], values: Vec<f64>) -> Result<Volume> {
        if shape.contains(&0) {
            return Err(Error::shape("volume", format!("empty extent in {shape:?}")));
        }
        if spacing_mm.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "voxel spacing must be positive, got {spacing_mm:?}"
            )));
        }
        let n = shape.iter().product::<usize>();
        if values.len() != n {
            return Err(Error::shape(
                "volume",
                format!("{shape:?} needs {n} values, got {}", values.len()),
            ));
        }
        Ok(Volume {
            shape,
            spacing_mm,
            values,
        })
    }

    pub fn filled(shape: [usize; 3], spacing_mm: [f64; 3], value: f64) -> Result<Volume> {
        Volume::new(shape, spacing_mm, vec![value; shape.iter().product()])
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.shape[1] + y) * self.shape[2] + x
    }

    /// Inverse of [`Volume::index`].
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let [_, h, w] = self.shape;
        [index / (h * w), (index / w) % h, index % w]
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> f64 {
        self.values[self.index(z, y, x)]
    }

    #[inline]
    pub fn set(&mut self, z: usize, y: usize, x: usize, value: f64) {
        let i = self.index(z, y, x);
        self.values[i] = value;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Volume {
        Volume {
            shape: self.shape,
            spacing_mm: self.spacing_mm,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Same geometry, different values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Volume> {
        Volume::new(self.shape, self.spacing_mm, values)
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn count_nonzero(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn same_shape(&self, other: &Volume, op: &'static str) -> Result<()> {
        if self.shape == other.shape {
            Ok(())
        } else {
            Err(Error::shape(op, format!("{:?} vs {:?}", self.shape, other.shape)))
        }
    }

    pub fn to_vgrid_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 + 24 + 24 + 8 * self.values.len());
        out.extend_from_slice(VGRID_MAGIC);
        out.extend_from_slice(&VGRID_VERSION.to_le_bytes());
        for &e in &self.shape {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for s in self.spacing_mm {
            out.extend_from_slice(&s.to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_vgrid_bytes(mut bytes: &[u8]) -> Result<Volume> {
        let r = &mut bytes;
        if r.len() < 4 || &r[..4] != VGRID_MAGIC {
            return Err(Error::Format("missing VGRD magic".into()));
        }
        *r = &r[4..];
        let version = read_u32(r)?;
        if version != VGRID_VERSION {
            return Err(Error::Format(format!("unsupported .vgrid version {version}")));
        }
        let mut shape = [0usize; 3];
        for e in &mut shape {
            *e = usize::try_from(read_u64(r)?).map_err(|_| Error::Format("extent does not fit in memory".into()))?;
        }
        let mut spacing = [0.0; 3];
        for s in &mut spacing {
            *s = read_f64(r)?;
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| Error::Format("extent product overflows".into()))?;
        let values = read_f64s(r, n)?;
        if !r.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes in .vgrid", r.len())));
        }
        Volume::new(shape, spacing, values)
    }

    pub fn write_vgrid(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_vgrid_bytes())
    }

    pub fn read_vgrid(path: &Path) -> Result<Volume> {
        let bytes = fs::read(path)?;
        Volume::from_vgrid_bytes(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_geometry() {
        assert!(Volume::new([0, 1, 1], [1.0; 3], vec![]).is_err());
        assert!(Volume::new([1, 1, 1], [1.0, 0.0, 1.0], vec![0.0]).is_err());
        assert!(Volume::new([1, 1, 2], [1.0; 3], vec![0.0]).is_err());
    }

    #[test]
    fn header_layout() {
        let v = Volume::new([1, 2, 3], [2.5, 0.5, 0.5], (0..6).map(f64::from).collect()).unwrap();
        let b = v.to_vgrid_bytes();
        assert_eq!(&b[..4], b"VGRD");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..16], &1u64.to_le_bytes());
        assert_eq!(&b[16..24], &2u64.to_le_bytes());
        assert_eq!(&b[24..32], &3u64.to_le_bytes());
        assert_eq!(&b[32..40], &2.5f64.to_le_bytes());
        // W fastest: value at (0, 1, 0) is the fourth stored value.
        assert_eq!(&b[56 + 3 * 8..56 + 4 * 8], &3.0f64.to_le_bytes());
        assert_eq!(b.len(), 56 + 6 * 8);
    }

    #[test]
    fn truncated_bytes_fail() {
        let v = Volume::filled([2, 2, 2], [1.0; 3], 7.0).unwrap();
        let b = v.to_vgrid_bytes();
        assert!(Volume::from_vgrid_bytes(&b[..b.len() - 3]).is_err());
        assert!(Volume::from_vgrid_bytes(b"VGRX").is_err());
    }

    proptest! {
        #[test]
        fn vgrid_round_trip_is_bit_exact(
            d in 1usize..4, h in 1usize..4, w in 1usize..4,
            seed in proptest::collection::vec(-1e6f64..1e6, 64),
            sp in 0.1f64..10.0,
        ) {
            let n = d * h * w;
            let v = Volume::new([d, h, w], [sp, sp * 2.0, sp / 3.0], seed[..n].to_vec()).unwrap();
            let back = Volume::from_vgrid_bytes(&v.to_vgrid_bytes()).unwrap();
            prop_assert_eq!(back.to_vgrid_bytes(), v.to_vgrid_bytes());
        }
    }
}
