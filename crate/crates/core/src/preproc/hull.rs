//! Per-slice 2D convex hulls of binary masks.

use super::volume::Volume;

type Pt = (i64, i64);

fn cross(o: Pt, a: Pt, b: Pt) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Andrew's monotone chain. Returns the hull counter-clockwise without
/// collinear points; fewer than three points for degenerate input.
fn monotone_chain(mut pts: Vec<Pt>) -> Vec<Pt> {
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Pt> = Vec::with_capacity(2 * pts.len());
    // Lower chain left to right, then upper chain right to left.
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

fn inside(hull: &[Pt], p: Pt) -> bool {
    match hull {
        [] => false,
        [a] => *a == p,
        [a, b] => {
            cross(*a, *b, p) == 0
                && p.0 >= a.0.min(b.0)
                && p.0 <= a.0.max(b.0)
                && p.1 >= a.1.min(b.1)
                && p.1 <= a.1.max(b.1)
        }
        _ => (0..hull.len()).all(|i| cross(hull[i], hull[(i + 1) % hull.len()], p) >= 0),
    }
}

/// Binary mask of voxels whose centres lie in (or on) the convex hull of the
/// nonzero voxel centres, computed independently for each axial slice.
pub fn convex_hull_mask(mask: &Volume) -> Volume {
    let [d, h, w] = mask.shape();
    let mut out = mask.map(|_| 0.0);
    for z in 0..d {
        let pts: Vec<Pt> = (0..h)
            .flat_map(|y| (0..w).map(move |x| (y, x)))
            .filter(|&(y, x)| mask.get(z, y, x) != 0.0)
            .map(|(y, x)| (y as i64, x as i64))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let (y0, y1) = (
            pts.iter().map(|p| p.0).min().unwrap(),
            pts.iter().map(|p| p.0).max().unwrap(),
        );
        let (x0, x1) = (
            pts.iter().map(|p| p.1).min().unwrap(),
            pts.iter().map(|p| p.1).max().unwrap(),
        );
        let hull = monotone_chain(pts);
        for y in y0..=y1 {
            for x in x0..=x1 {
                if inside(&hull, (y, x)) {
                    out.set(z, y as usize, x as usize, 1.0);
                }
            }
        }
    }
    out
}
