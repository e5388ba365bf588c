//! Synthetic chest-like scan/rescan phantoms with known calcium lesions.
//!
//! Each subject is an elliptic body in air, two lungs, a bright spine block
//! behind the lungs, and for positive subjects a few calcified blobs in the
//! mediastinum. Labels come from scoring the generated scan.

mod agatston;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use agatston::{agatston_score, class_for_score, density_weight, CALCIUM_HU, MIN_AREA_MM2};

use crate::binio::write_atomic;
use crate::error::{Error, Result};
use crate::preproc::{convex_hull_mask, Volume};

pub const AIR_HU: f64 = -1000.0;
pub const TISSUE_HU: f64 = 40.0;
pub const LUNG_HU: f64 = -800.0;
pub const SPINE_HU: f64 = 700.0;
pub const RESCAN_NOISE_HU: f64 = 10.0;
pub const MIN_SHAPE: [usize; 3] = [16, 16, 8];
pub const DEFAULT_SPACING_MM: [f64; 3] = [3.0, 3.0, 3.0];
/// Desk cohort mix (control, mild, severe).
pub const DESK_COUNTS: [usize; 3] = [100, 77, 34];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Severity {
    None,
    Mild,
    Severe,
}

impl Severity {
    pub const ALL: [Severity; 3] = [Severity::None, Severity::Mild, Severity::Severe];

    pub fn class_label(self) -> usize {
        self as usize
    }

    fn hu_range(self) -> (f64, f64) {
        match self {
            Severity::None => (0.0, 0.0),
            Severity::Mild => (200.0, 399.0),
            Severity::Severe => (400.0, 800.0),
        }
    }
}

/// One phantom subject with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: String,
    /// Raw HU.
    pub scan: Volume,
    pub rescan: Volume,
    pub lung_mask: Volume,
    /// The lung mask moved with the rescan's translation.
    pub rescan_lung_mask: Volume,
    /// Calcium truth in scan coordinates.
    pub lesion_mask: Volume,
    pub agatston: f64,
    pub class_label: usize,
}

struct Anatomy {
    /// (center, semi-axes) per lung, in voxel units `[d, h, w]`.
    lungs: [([f64; 3], [f64; 3]); 2],
}

impl Anatomy {
    fn new(shape: [usize; 3]) -> Anatomy {
        let [d, h, w] = shape.map(|s| s as f64);
        let semi = [0.40 * d, 0.14 * h, 0.30 * w];
        let center = |fh: f64| [0.5 * (d - 1.0), fh * (h - 1.0), 0.45 * (w - 1.0)];
        Anatomy {
            lungs: [(center(0.28), semi), (center(0.72), semi)],
        }
    }

    fn in_lung(&self, p: [f64; 3]) -> bool {
        self.lungs
            .iter()
            .any(|(c, s)| (0..3).map(|a| ((p[a] - c[a]) / s[a]).powi(2)).sum::<f64>() <= 1.0)
    }
}

fn draw_body(shape: [usize; 3], spacing: [f64; 3], anatomy: &Anatomy) -> Result<(Volume, Volume)> {
    let [d, h, w] = shape;
    let mut ct = Volume::filled(shape, spacing, AIR_HU)?;
    let mut lung = Volume::filled(shape, spacing, 0.0)?;
    let (ch, cw) = (0.5 * (h as f64 - 1.0), 0.5 * (w as f64 - 1.0));
    let (rh, rw) = (0.45 * h as f64, 0.45 * w as f64);
    // Spine sits behind the lungs (larger W than any lung voxel) at mid-H.
    let lung_w_max = anatomy.lungs[0].0[2] + anatomy.lungs[0].1[2];
    let spine_w = (lung_w_max.floor() as usize + 1)..(lung_w_max.floor() as usize + 3).min(w);
    let spine_h = (h / 2 - h / 10)..(h / 2 + h / 10);
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let (fy, fx) = (y as f64, x as f64);
                if ((fy - ch) / rh).powi(2) + ((fx - cw) / rw).powi(2) <= 1.0 {
                    ct.set(z, y, x, TISSUE_HU);
                }
                if anatomy.in_lung([z as f64, fy, fx]) {
                    ct.set(z, y, x, LUNG_HU);
                    lung.set(z, y, x, 1.0);
                } else if spine_w.contains(&x) && spine_h.contains(&y) {
                    ct.set(z, y, x, SPINE_HU);
                }
            }
        }
    }
    Ok((ct, lung))
}

struct Blob {
    center: [usize; 3],
    radius: f64,
    hu: f64,
}

fn paint_blobs(ct: &Volume, blobs: &[Blob]) -> Result<(Volume, Volume)> {
    let mut ct = ct.clone();
    let mut mask = Volume::filled(ct.shape(), ct.spacing_mm(), 0.0)?;
    let [d, h, w] = ct.shape();
    for b in blobs {
        let r = b.radius.ceil() as isize;
        for dz in -r..=r {
            for dy in -r..=r {
                for dx in -r..=r {
                    if ((dz * dz + dy * dy + dx * dx) as f64) > b.radius * b.radius {
                        continue;
                    }
                    let p = [
                        b.center[0] as isize + dz,
                        b.center[1] as isize + dy,
                        b.center[2] as isize + dx,
                    ];
                    if p[0] < 0
                        || p[1] < 0
                        || p[2] < 0
                        || p[0] >= d as isize
                        || p[1] >= h as isize
                        || p[2] >= w as isize
                    {
                        continue;
                    }
                    let (z, y, x) = (p[0] as usize, p[1] as usize, p[2] as usize);
                    ct.set(z, y, x, ct.get(z, y, x).max(b.hu));
                    mask.set(z, y, x, 1.0);
                }
            }
        }
    }
    Ok((ct, mask))
}

/// A blob may only cover voxels inside the lungs' hull and outside the lungs.
fn blob_fits(blob: &Blob, lung: &Volume, hull: &Volume) -> bool {
    let r = blob.radius.ceil() as isize;
    let [d, h, w] = lung.shape();
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                if ((dz * dz + dy * dy + dx * dx) as f64) > blob.radius * blob.radius {
                    continue;
                }
                let p = [
                    blob.center[0] as isize + dz,
                    blob.center[1] as isize + dy,
                    blob.center[2] as isize + dx,
                ];
                if p[0] < 0 || p[1] < 0 || p[2] < 0 || p[0] >= d as isize || p[1] >= h as isize || p[2] >= w as isize {
                    return false;
                }
                let (z, y, x) = (p[0] as usize, p[1] as usize, p[2] as usize);
                if lung.get(z, y, x) != 0.0 || hull.get(z, y, x) == 0.0 {
                    return false;
                }
            }
        }
    }
    true
}

fn sample_blobs<R: Rng>(rng: &mut R, severity: Severity, shape: [usize; 3], lung: &Volume, hull: &Volume) -> Vec<Blob> {
    let [d, h, w] = shape;
    let (lo, hi) = severity.hu_range();
    let count = rng.random_range(1..=4);
    let mut blobs = Vec::with_capacity(count);
    for _ in 0..count {
        for _ in 0..64 {
            let blob = Blob {
                center: [
                    rng.random_range(d * 3 / 8..=d * 5 / 8),
                    rng.random_range(h * 2 / 5..=h * 3 / 5),
                    rng.random_range(w / 4..=w * 3 / 4),
                ],
                radius: [1.0, 1.5, 2.0][rng.random_range(0..3)],
                hu: rng.random_range(lo..=hi).round(),
            };
            if blob_fits(&blob, lung, hull) {
                blobs.push(blob);
                break;
            }
        }
    }
    blobs
}

/// Fallback lesion placed at the first fitting mediastinal site.
fn fallback_blob(severity: Severity, shape: [usize; 3], lung: &Volume, hull: &Volume) -> Option<Blob> {
    let [d, h, w] = shape;
    let (radius, hu) = match severity {
        Severity::Severe => (2.0, 600.0),
        _ => (1.0, 250.0),
    };
    for z in d * 3 / 8..=d * 5 / 8 {
        for x in w / 4..=w * 3 / 4 {
            let blob = Blob {
                center: [z, h / 2, x],
                radius,
                hu,
            };
            if blob_fits(&blob, lung, hull) {
                return Some(blob);
            }
        }
    }
    None
}

/// Shift by one voxel along `axis` in direction `sign`, replicating the edge.
fn translate(v: &Volume, axis: usize, sign: isize) -> Volume {
    let shape = v.shape();
    let mut out = v.clone();
    for i in 0..v.len() {
        let mut c = v.coords(i);
        let src = (c[axis] as isize - sign).clamp(0, shape[axis] as isize - 1);
        c[axis] = src as usize;
        out.values_mut()[i] = v.get(c[0], c[1], c[2]);
    }
    out
}

/// Generate one subject; every random draw comes from `seed`.
pub fn generate_subject(
    seed: u64,
    severity: Severity,
    shape: [usize; 3],
    spacing_mm: [f64; 3],
) -> Result<SubjectRecord> {
    if (0..3).any(|a| shape[a] < MIN_SHAPE[a]) {
        return Err(Error::InvalidArgument(format!(
            "phantom shape {shape:?} is below the minimum {MIN_SHAPE:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anatomy = Anatomy::new(shape);
    let (base, lung) = draw_body(shape, spacing_mm, &anatomy)?;
    if lung.count_nonzero() == 0 {
        return Err(Error::InvalidArgument(format!("no room for lungs in {shape:?}")));
    }

    let (scan, lesion_mask, agatston) = if severity == Severity::None {
        let empty = Volume::filled(shape, spacing_mm, 0.0)?;
        (base, empty, 0.0)
    } else {
        let hull = convex_hull_mask(&lung);
        let target = severity.class_label();
        let mut hit = None;
        for _ in 0..64 {
            let blobs = sample_blobs(&mut rng, severity, shape, &lung, &hull);
            if blobs.is_empty() {
                continue;
            }
            let (ct, mask) = paint_blobs(&base, &blobs)?;
            let score = agatston_score(&ct, &mask)?;
            if class_for_score(score) == target {
                hit = Some((ct, mask, score));
                break;
            }
        }
        match hit {
            Some(h) => h,
            None => {
                let blob = fallback_blob(severity, shape, &lung, &hull)
                    .ok_or_else(|| Error::InvalidArgument(format!("no mediastinal room in {shape:?}")))?;
                let (ct, mask) = paint_blobs(&base, &[blob])?;
                let score = agatston_score(&ct, &mask)?;
                if class_for_score(score) != target {
                    return Err(Error::InvalidArgument(format!(
                        "cannot reach the {severity:?} band at spacing {spacing_mm:?}"
                    )));
                }
                (ct, mask, score)
            }
        }
    };

    let noise = Normal::new(0.0, RESCAN_NOISE_HU).expect("valid sigma");
    let axis = rng.random_range(0..3);
    let sign = if rng.random_bool(0.5) { 1 } else { -1 };
    let noisy = scan.with_values(scan.values().iter().map(|v| v + noise.sample(&mut rng)).collect())?;
    Ok(SubjectRecord {
        subject_id: format!("subject_{seed:06}"),
        rescan: translate(&noisy, axis, sign),
        rescan_lung_mask: translate(&lung, axis, sign),
        class_label: class_for_score(agatston),
        scan,
        lung_mask: lung,
        lesion_mask,
        agatston,
    })
}

/// One manifest row.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub class_label: usize,
    pub agatston: f64,
    pub scan: PathBuf,
    pub rescan: PathBuf,
    pub lung_mask: PathBuf,
    pub rescan_lung_mask: PathBuf,
    pub lesion_mask: PathBuf,
}

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const MANIFEST_HEADER: &str = "subject_id,class,agatston,scan,rescan,lung_mask,rescan_lung_mask,lesion_mask";

impl ManifestEntry {
    /// Relative file names used inside a cohort directory.
    pub fn for_subject(rec: &SubjectRecord) -> ManifestEntry {
        let f = |part: &str| PathBuf::from(format!("{}_{part}.vgrid", rec.subject_id));
        ManifestEntry {
            subject_id: rec.subject_id.clone(),
            class_label: rec.class_label,
            agatston: rec.agatston,
            scan: f("scan"),
            rescan: f("rescan"),
            lung_mask: f("lung"),
            rescan_lung_mask: f("rescan_lung"),
            lesion_mask: f("lesion"),
        }
    }
}

pub fn manifest_csv(entries: &[ManifestEntry]) -> String {
    let mut s = format!("{MANIFEST_HEADER}\n");
    for e in entries {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            e.subject_id,
            e.class_label,
            e.agatston,
            e.scan.display(),
            e.rescan.display(),
            e.lung_mask.display(),
            e.rescan_lung_mask.display(),
            e.lesion_mask.display()
        );
    }
    s
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == MANIFEST_HEADER => {}
        other => return Err(Error::Format(format!("unexpected manifest header {other:?}"))),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(Error::Format(format!("manifest row {} has {} fields", i + 1, f.len())));
            }
            let bad = |what: &str| Error::Format(format!("manifest row {}: bad {what}", i + 1));
            let class_label: usize = f[1].parse().map_err(|_| bad("class"))?;
            let agatston: f64 = f[2].parse().map_err(|_| bad("agatston"))?;
            if class_label > 2 || !(agatston >= 0.0) || class_for_score(agatston) != class_label {
                return Err(bad("label"));
            }
            Ok(ManifestEntry {
                subject_id: f[0].to_string(),
                class_label,
                agatston,
                scan: f[3].into(),
                rescan: f[4].into(),
                lung_mask: f[5].into(),
                rescan_lung_mask: f[6].into(),
                lesion_mask: f[7].into(),
            })
        })
        .collect()
}

/// A generated cohort and its manifest rows (relative paths).
#[derive(Clone, Debug)]
pub struct Cohort {
    pub subjects: Vec<SubjectRecord>,
    pub manifest: Vec<ManifestEntry>,
}

/// Controls first, then mild, then severe. Subject `i` uses seed `seed + i`.
pub fn build_cohort(counts: [usize; 3], seed: u64, shape: [usize; 3], spacing_mm: [f64; 3]) -> Result<Cohort> {
    let mut subjects = Vec::with_capacity(counts.iter().sum());
    let mut i = 0u64;
    for (sev, &n) in Severity::ALL.iter().zip(&counts) {
        for _ in 0..n {
            subjects.push(generate_subject(seed.wrapping_add(i), *sev, shape, spacing_mm)?);
            i += 1;
        }
    }
    // Distinct ids even when two cohorts share seeds.
    for (k, s) in subjects.iter_mut().enumerate() {
        s.subject_id = format!("s{k:04}");
    }
    let manifest = subjects.iter().map(ManifestEntry::for_subject).collect();
    Ok(Cohort { subjects, manifest })
}

impl Cohort {
    /// Write every volume, then the manifest last.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (s, e) in self.subjects.iter().zip(&self.manifest) {
            s.scan.write_vgrid(&dir.join(&e.scan))?;
            s.rescan.write_vgrid(&dir.join(&e.rescan))?;
            s.lung_mask.write_vgrid(&dir.join(&e.lung_mask))?;
            s.rescan_lung_mask.write_vgrid(&dir.join(&e.rescan_lung_mask))?;
            s.lesion_mask.write_vgrid(&dir.join(&e.lesion_mask))?;
        }
        write_atomic(&dir.join(MANIFEST_FILE), manifest_csv(&self.manifest).as_bytes())
    }

    pub fn read(dir: &Path) -> Result<Cohort> {
        let path = dir.join(MANIFEST_FILE);
        let text =
            std::fs::read_to_string(&path).map_err(|e| Error::MissingData(format!("{}: {e}", path.display())))?;
        let manifest = parse_manifest(&text)?;
        let subjects = manifest
            .iter()
            .map(|e| {
                let rd = |p: &PathBuf| Volume::read_vgrid(&dir.join(p));
                Ok(SubjectRecord {
                    subject_id: e.subject_id.clone(),
                    scan: rd(&e.scan)?,
                    rescan: rd(&e.rescan)?,
                    lung_mask: rd(&e.lung_mask)?,
                    rescan_lung_mask: rd(&e.rescan_lung_mask)?,
                    lesion_mask: rd(&e.lesion_mask)?,
                    agatston: e.agatston,
                    class_label: e.class_label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Cohort { subjects, manifest })
    }
}
