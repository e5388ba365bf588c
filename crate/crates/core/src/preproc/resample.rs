//! Grid resampling.

use super::volume::Volume;

/// Where output samples sit relative to input samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Alignment {
    /// First and last samples of each axis coincide (field-of-view preserving).
    Corners,
    /// Sample centres of equal-sized cells coincide; the half-cell at each end
    /// is clamped to the border value.
    Centers,
}

fn source_coord(i: usize, src: usize, dst: usize, align: Alignment) -> f64 {
    match align {
        Alignment::Corners if dst == 1 => (src as f64 - 1.0) / 2.0,
        Alignment::Corners => i as f64 * (src as f64 - 1.0) / (dst as f64 - 1.0),
        Alignment::Centers => ((i as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, src as f64 - 1.0),
    }
}

/// Per output index: lower source index, upper source index, weight of upper.
fn axis_taps(src: usize, dst: usize, align: Alignment) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            let s = source_coord(i, src, dst, align);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

fn resampled_spacing(v: &Volume, target: [usize; 3]) -> [f64; 3] {
    let (shape, sp) = (v.shape(), v.spacing_mm());
    std::array::from_fn(|a| {
        if target[a] > 1 && shape[a] > 1 {
            sp[a] * (shape[a] - 1) as f64 / (target[a] - 1) as f64
        } else {
            sp[a] * shape[a] as f64 / target[a] as f64
        }
    })
}

/// Trilinear interpolation onto `target` extents.
pub fn resample_trilinear(v: &Volume, target: [usize; 3], align: Alignment) -> Volume {
    let [d, h, w] = v.shape();
    let tz = axis_taps(d, target[0], align);
    let ty = axis_taps(h, target[1], align);
    let tx = axis_taps(w, target[2], align);
    let mut out = Vec::with_capacity(target.iter().product());
    let lerp = |a: f64, b: f64, t: f64| if t == 0.0 { a } else { a * (1.0 - t) + b * t };
    for &(z0, z1, fz) in &tz {
        for &(y0, y1, fy) in &ty {
            for &(x0, x1, fx) in &tx {
                let along_x = |z, y| lerp(v.get(z, y, x0), v.get(z, y, x1), fx);
                let c0 = lerp(along_x(z0, y0), along_x(z0, y1), fy);
                let c1 = lerp(along_x(z1, y0), along_x(z1, y1), fy);
                out.push(lerp(c0, c1, fz));
            }
        }
    }
    Volume::new(target, resampled_spacing(v, target), out).expect("resampled geometry is valid by construction")
}

/// Nearest-neighbour resampling for label volumes; values are copied, never
/// blended. Uses corner alignment.
pub fn resample_nearest(v: &Volume, target: [usize; 3]) -> Volume {
    let [d, h, w] = v.shape();
    let pick = |i, src, dst| source_coord(i, src, dst, Alignment::Corners).round() as usize;
    let mut out = Vec::with_capacity(target.iter().product());
    for z in 0..target[0] {
        let sz = pick(z, d, target[0]);
        for y in 0..target[1] {
            let sy = pick(y, h, target[1]);
            for x in 0..target[2] {
                out.push(v.get(sz, sy, pick(x, w, target[2])));
            }
        }
    }
    Volume::new(target, resampled_spacing(v, target), out).expect("resampled geometry is valid by construction")
}

/// Source voxel that [`resample_nearest`] copies into output voxel `at`.
pub fn nearest_source(shape: [usize; 3], target: [usize; 3], at: [usize; 3]) -> [usize; 3] {
    std::array::from_fn(|a| source_coord(at[a], shape[a], target[a], Alignment::Corners).round() as usize)
}
