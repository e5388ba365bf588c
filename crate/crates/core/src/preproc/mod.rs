//! CT normalisation: a raw HU volume plus a lung mask in, a two-channel
//! network input out.
//!
//! The steps run in a fixed order:
//!
//! 1. [`lung_fill`]: lung voxels and everything outside the per-slice convex
//!    hull of the lungs are set to `fill_hu`.
//! 2. [`crop_to_lungs`]: tight bounding box of the lung mask.
//! 3. [`window_clamp`] (channel 0) and [`hu_mask_channel`] (channel 1), both
//!    from the cropped HU values.
//! 4. [`resample`] to the network's input extents.

mod hull;
mod resample;
mod volume;

pub use hull::convex_hull_mask;
pub use resample::{nearest_source, resample_nearest, resample_trilinear, Alignment};
pub use volume::{Volume, VGRID_MAGIC, VGRID_VERSION};

use crate::error::{Error, Result};

/// Desk-scale network input, same 3:2:1 aspect as [`FULL_SHAPE`].
pub const DESK_SHAPE: [usize; 3] = [48, 32, 16];
/// Full-resolution network input.
pub const FULL_SHAPE: [usize; 3] = [192, 128, 64];

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocConfig {
    pub fill_hu: f64,
    pub window_lo: f64,
    pub window_hi: f64,
    pub mask_threshold_hu: f64,
    pub target_shape: [usize; 3],
}

impl Default for PreprocConfig {
    fn default() -> Self {
        PreprocConfig {
            fill_hu: -200.0,
            window_lo: -200.0,
            window_hi: 600.0,
            mask_threshold_hu: 130.0,
            target_shape: DESK_SHAPE,
        }
    }
}

impl PreprocConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_lo < self.window_hi) {
            return Err(Error::InvalidArgument(format!(
                "window [{}, {}] is empty",
                self.window_lo, self.window_hi
            )));
        }
        if !(self.window_lo < self.mask_threshold_hu && self.mask_threshold_hu < self.window_hi) {
            return Err(Error::InvalidArgument(format!(
                "mask threshold {} outside window ({}, {})",
                self.mask_threshold_hu, self.window_lo, self.window_hi
            )));
        }
        if self.target_shape.contains(&0) {
            return Err(Error::InvalidArgument("target shape has an empty extent".into()));
        }
        Ok(())
    }
}

/// Axis-aligned sub-box of a volume.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Crop {
    pub offset: [usize; 3],
    pub shape: [usize; 3],
}

impl Crop {
    pub fn apply(&self, v: &Volume) -> Result<Volume> {
        let [d, h, w] = v.shape();
        let fits = (0..3).all(|a| self.offset[a] + self.shape[a] <= [d, h, w][a]);
        if !fits {
            return Err(Error::shape("crop", format!("{self:?} outside {:?}", v.shape())));
        }
        let [o0, o1, o2] = self.offset;
        let mut out = Vec::with_capacity(self.shape.iter().product());
        for z in o0..o0 + self.shape[0] {
            for y in o1..o1 + self.shape[1] {
                let start = v.index(z, y, o2);
                out.extend_from_slice(&v.values()[start..start + self.shape[2]]);
            }
        }
        Volume::new(self.shape, v.spacing_mm(), out)
    }
}

/// Sets lung voxels, and voxels outside the lungs' per-slice convex hull, to
/// `fill_hu`; all other voxels keep their value.
pub fn lung_fill(ct: &Volume, lung_mask: &Volume, cfg: &PreprocConfig) -> Result<Volume> {
    ct.same_shape(lung_mask, "lung_fill")?;
    let hull = convex_hull_mask(lung_mask);
    let values = ct
        .values()
        .iter()
        .zip(lung_mask.values())
        .zip(hull.values())
        .map(|((&v, &lung), &inside)| if lung != 0.0 || inside == 0.0 { cfg.fill_hu } else { v })
        .collect();
    ct.with_values(values)
}

/// Tight bounding box (zero margin) of the nonzero voxels of `lung_mask`.
pub fn lung_bounding_box(lung_mask: &Volume) -> Result<Crop> {
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for (i, &m) in lung_mask.values().iter().enumerate() {
        if m != 0.0 {
            let c = lung_mask.coords(i);
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
        }
    }
    if lo[0] == usize::MAX {
        return Err(Error::MissingData("lung mask is empty".into()));
    }
    Ok(Crop {
        offset: lo,
        shape: std::array::from_fn(|a| hi[a] - lo[a] + 1),
    })
}

pub fn crop_to_lungs(ct: &Volume, lung_mask: &Volume) -> Result<(Volume, Crop)> {
    ct.same_shape(lung_mask, "crop_to_lungs")?;
    let crop = lung_bounding_box(lung_mask)?;
    Ok((crop.apply(ct)?, crop))
}

/// Clamp to the HU window and rescale affinely onto `[0, 1]`.
pub fn window_clamp(v: &Volume, cfg: &PreprocConfig) -> Volume {
    let (lo, hi) = (cfg.window_lo, cfg.window_hi);
    v.map(|x| (x.clamp(lo, hi) - lo) / (hi - lo))
}

/// Clamp only, staying in HU.
pub fn window_clamp_hu(v: &Volume, cfg: &PreprocConfig) -> Volume {
    v.map(|x| x.clamp(cfg.window_lo, cfg.window_hi))
}

/// 1 where HU is strictly above the threshold.
pub fn hu_mask_channel(v: &Volume, cfg: &PreprocConfig) -> Volume {
    let t = cfg.mask_threshold_hu;
    v.map(|x| if x > t { 1.0 } else { 0.0 })
}

/// Trilinear for intensities, nearest-neighbour for binary volumes.
pub fn resample(v: &Volume, target: [usize; 3]) -> Volume {
    if v.is_binary() {
        resample_nearest(v, target)
    } else {
        resample_trilinear(v, target, Alignment::Corners)
    }
}

/// Output of [`preprocess`].
#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessed {
    /// Channel 0: windowed CT in `[0, 1]`.
    pub ct: Volume,
    /// Channel 1: HU above threshold, `{0, 1}`.
    pub mask: Volume,
    pub crop: Crop,
    /// Cropped HU after fill, before any rescaling.
    pub cropped_hu: Volume,
}

impl Preprocessed {
    /// Channel-major `[2, D, H, W]` buffer for the network.
    pub fn channels(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.ct.len());
        out.extend_from_slice(self.ct.values());
        out.extend_from_slice(self.mask.values());
        out
    }
}

pub fn preprocess(ct: &Volume, lung_mask: &Volume, cfg: &PreprocConfig) -> Result<Preprocessed> {
    cfg.validate()?;
    if !lung_mask.is_binary() {
        return Err(Error::InvalidArgument("lung mask must be binary".into()));
    }
    let filled = lung_fill(ct, lung_mask, cfg)?;
    let (cropped, crop) = crop_to_lungs(&filled, lung_mask)?;
    let windowed = window_clamp(&cropped, cfg);
    let mask = hu_mask_channel(&cropped, cfg);
    Ok(Preprocessed {
        ct: resample_trilinear(&windowed, cfg.target_shape, Alignment::Corners),
        mask: resample_nearest(&mask, cfg.target_shape),
        crop,
        cropped_hu: cropped,
    })
}

/// Carry a label volume (e.g. lesion truth) through the same crop and
/// resampling as [`preprocess`] applied to its scan.
pub fn project_labels(labels: &Volume, crop: &Crop, target: [usize; 3]) -> Result<Volume> {
    Ok(resample_nearest(&crop.apply(labels)?, target))
}
