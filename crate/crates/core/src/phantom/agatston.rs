//! Slice-wise Agatston calcium scoring.

use crate::error::{Error, Result};
use crate::preproc::Volume;

/// Voxels at or below this HU never count as calcium.
pub const CALCIUM_HU: f64 = 130.0;
/// Components smaller than this (in mm²) are dropped as noise.
pub const MIN_AREA_MM2: f64 = 1.0;

/// Density weight keyed to a component's peak HU.
pub fn density_weight(peak_hu: f64) -> f64 {
    if peak_hu >= 400.0 {
        4.0
    } else if peak_hu >= 300.0 {
        3.0
    } else if peak_hu >= 200.0 {
        2.0
    } else if peak_hu >= CALCIUM_HU {
        1.0
    } else {
        0.0
    }
}

/// Class band of a score: 0 for none, 1 below 400, 2 from 400.
pub fn class_for_score(agatston: f64) -> usize {
    if agatston <= 0.0 {
        0
    } else if agatston < 400.0 {
        1
    } else {
        2
    }
}

/// Sum over axial slices of `area_mm2 * weight(peak HU)` for each 8-connected
/// component of `lesion_mask` and `HU > 130`. Pixel area comes from the
/// in-plane spacing of `ct`.
pub fn agatston_score(ct: &Volume, lesion_mask: &Volume) -> Result<f64> {
    ct.same_shape(lesion_mask, "agatston_score")?;
    let sp = ct.spacing_mm();
    if !(sp[1] > 0.0 && sp[2] > 0.0 && sp[1].is_finite() && sp[2].is_finite()) {
        return Err(Error::InvalidArgument(format!("in-plane spacing unknown: {sp:?}")));
    }
    let pixel_area = sp[1] * sp[2];
    let [d, h, w] = ct.shape();
    let mut label = vec![false; h * w];
    let mut stack = Vec::new();
    let mut total = 0.0;
    for z in 0..d {
        let base = z * h * w;
        for (i, seen) in label.iter_mut().enumerate() {
            *seen = !(lesion_mask.values()[base + i] != 0.0 && ct.values()[base + i] > CALCIUM_HU);
        }
        for start in 0..h * w {
            if label[start] {
                continue;
            }
            label[start] = true;
            stack.push(start);
            let (mut count, mut peak) = (0usize, f64::NEG_INFINITY);
            while let Some(p) = stack.pop() {
                count += 1;
                peak = peak.max(ct.values()[base + p]);
                let (y, x) = ((p / w) as isize, (p % w) as isize);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (ny, nx) = (y + dy, x + dx);
                        if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                            continue;
                        }
                        let q = ny as usize * w + nx as usize;
                        if !label[q] {
                            label[q] = true;
                            stack.push(q);
                        }
                    }
                }
            }
            let area = count as f64 * pixel_area;
            if area >= MIN_AREA_MM2 {
                total += area * density_weight(peak);
            }
        }
    }
    Ok(total)
}
