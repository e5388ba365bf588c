//! Hand-built 16x16x8 volume with every expected output voxel written out.

#![allow(dead_code)]

use aidnet_core::preproc::Volume;

pub const SHAPE: [usize; 3] = [16, 16, 8];

fn in_lung(z: usize, y: usize, x: usize) -> bool {
    if !(4..=11).contains(&z) {
        return false;
    }
    let upper = (2..=5).contains(&y) && (1..=6).contains(&x);
    // The lower lung narrows in slices 8..=11, leaving a wedge outside the hull.
    let lower_x = if z >= 8 { 3..=6 } else { 1..=6 };
    let lower = (10..=13).contains(&y) && lower_x.contains(&x);
    upper || lower
}

/// Voxels outside the per-slice hull in slices 8..=11 (left boundary runs
/// from (y=5, x=1) to (y=13, x=3)), worked out by hand.
const WEDGE: [(usize, usize); 12] = [
    (6, 1),
    (7, 1),
    (8, 1),
    (9, 1),
    (10, 1),
    (10, 2),
    (11, 1),
    (11, 2),
    (12, 1),
    (12, 2),
    (13, 1),
    (13, 2),
];

/// Voxel, HU, expected window value, expected mask value.
type Probe = ((usize, usize, usize), f64, f64, f64);

/// Hand-placed HU values inside the mediastinum.
const PROBES: [Probe; 7] = [
    ((6, 7, 4), 130.0, 0.4125, 0.0),
    ((6, 7, 5), 131.0, 0.41375, 1.0),
    ((6, 8, 4), 700.0, 1.0, 1.0),
    ((6, 8, 5), -500.0, 0.0, 0.0),
    ((7, 7, 4), 600.0, 1.0, 1.0),
    ((7, 8, 4), -200.0, 0.0, 0.0),
    ((9, 8, 3), 250.0, 0.5625, 1.0),
];

pub fn build() -> (Volume, Volume) {
    let mut ct = Volume::filled(SHAPE, [2.0, 1.0, 1.0], 100.0).unwrap();
    let mut lung = Volume::filled(SHAPE, [2.0, 1.0, 1.0], 0.0).unwrap();
    for z in 0..16 {
        for y in 0..16 {
            for x in 0..8 {
                if in_lung(z, y, x) {
                    lung.set(z, y, x, 1.0);
                    ct.set(z, y, x, -850.0);
                }
            }
        }
    }
    for z in 8..=11 {
        for &(y, x) in &WEDGE {
            ct.set(z, y, x, 900.0);
        }
    }
    for &((z, y, x), hu, _, _) in &PROBES {
        ct.set(z, y, x, hu);
    }
    // Bright voxel outside the lung bounding box: cropped away entirely.
    ct.set(0, 0, 0, 1500.0);
    (ct, lung)
}

/// Crop offset and shape the pipeline must choose.
pub const CROP_OFFSET: [usize; 3] = [4, 2, 1];
pub const CROP_SHAPE: [usize; 3] = [8, 12, 6];

/// Expected cropped HU, windowed CT and calcium mask, in crop order.
pub fn expected() -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut want_ct = Vec::new();
    let mut want_mask = Vec::new();
    let mut want_hu = Vec::new();
    for z in 4..=11 {
        for y in 2..=13 {
            for x in 1..=6 {
                let (hu, window, mask) = if in_lung(z, y, x) || (z >= 8 && WEDGE.contains(&(y, x))) {
                    (-200.0, 0.0, 0.0)
                } else if let Some(p) = PROBES.iter().find(|p| p.0 == (z, y, x)) {
                    (p.1, p.2, p.3)
                } else {
                    (100.0, 0.375, 0.0)
                };
                want_hu.push(hu);
                want_ct.push(window);
                want_mask.push(mask);
            }
        }
    }
    (want_hu, want_ct, want_mask)
}
