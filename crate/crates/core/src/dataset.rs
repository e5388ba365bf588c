//! Network-ready samples and cohort splits.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::binio::write_atomic;
use crate::error::{Error, Result};
use crate::phantom::SubjectRecord;
use crate::preproc::{preprocess, project_labels, PreprocConfig, Volume};
use crate::volgrid::Tensor;

/// One subject after preprocessing: a two-channel `[2, D, H, W]` buffer for
/// each acquisition.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub class: usize,
    pub agatston: f64,
    pub shape: [usize; 3],
    pub scan: Vec<f64>,
    pub rescan: Vec<f64>,
    /// Lesion truth carried to input resolution, when known.
    pub lesion: Option<Volume>,
}

impl Sample {
    pub fn is_positive(&self) -> bool {
        self.class > 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Acquisition {
    Scan,
    Rescan,
}

/// Stack samples into an `[N, 2, D, H, W]` tensor.
pub fn stack(samples: &[&Sample], which: Acquisition) -> Result<Tensor> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot stack zero samples".into()))?;
    let shape = first.shape;
    let mut data = Vec::with_capacity(samples.len() * first.scan.len());
    for s in samples {
        if s.shape != shape {
            return Err(Error::shape("stack", format!("{:?} vs {:?}", s.shape, shape)));
        }
        data.extend_from_slice(match which {
            Acquisition::Scan => &s.scan,
            Acquisition::Rescan => &s.rescan,
        });
    }
    Tensor::constant(&[samples.len(), 2, shape[0], shape[1], shape[2]], data)
}

/// Preprocess both acquisitions of a phantom subject.
pub fn prepare_subject(rec: &SubjectRecord, cfg: &PreprocConfig) -> Result<Sample> {
    let scan = preprocess(&rec.scan, &rec.lung_mask, cfg)?;
    let rescan = preprocess(&rec.rescan, &rec.rescan_lung_mask, cfg)?;
    let lesion = project_labels(&rec.lesion_mask, &scan.crop, cfg.target_shape)?;
    Ok(Sample {
        id: rec.subject_id.clone(),
        class: rec.class_label,
        agatston: rec.agatston,
        shape: cfg.target_shape,
        scan: scan.channels(),
        rescan: rescan.channels(),
        lesion: Some(lesion),
    })
}

/// Index sets of a train/validation/test partition.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Largest-remainder allocation of `total` slots across class counts.
fn allocate(counts: &[usize], total: usize) -> Vec<usize> {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return vec![0; counts.len()];
    }
    let mut alloc: Vec<usize> = counts.iter().map(|&c| c * total / n).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    // Largest fractional part first, lower class on ties.
    order.sort_by_key(|&k| (std::cmp::Reverse((counts[k] * total) % n), k));
    let mut left = total - alloc.iter().sum::<usize>();
    for k in order.into_iter().cycle() {
        if left == 0 {
            break;
        }
        if alloc[k] < counts[k] {
            alloc[k] += 1;
            left -= 1;
        }
    }
    alloc
}

/// Class-stratified split with seeded shuffling inside each class. Each
/// index list is sorted ascending.
pub fn stratified_split(classes: &[usize], n_test: usize, n_val: usize, seed: u64) -> Result<Split> {
    if n_test + n_val > classes.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot hold out {} of {} subjects",
            n_test + n_val,
            classes.len()
        )));
    }
    let k = classes.iter().max().map_or(0, |&m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &c) in classes.iter().enumerate() {
        by_class[c].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for members in &mut by_class {
        members.shuffle(&mut rng);
    }
    let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let test_alloc = allocate(&counts, n_test);
    let remaining: Vec<usize> = counts.iter().zip(&test_alloc).map(|(c, t)| c - t).collect();
    let val_alloc = allocate(&remaining, n_val);

    let mut split = Split::default();
    for (c, members) in by_class.iter().enumerate() {
        let (t, v) = (test_alloc[c], val_alloc[c]);
        split.test.extend_from_slice(&members[..t]);
        split.val.extend_from_slice(&members[t..t + v]);
        split.train.extend_from_slice(&members[t + v..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// Held-out sizes for a cohort of `n`: 40 test and 20 validation subjects per
/// 211, rounded.
pub fn holdout_sizes(n: usize) -> (usize, usize) {
    let scaled = |k: usize| (n * k + 105) / 211;
    (scaled(40), scaled(20))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        }
    }
}

impl std::str::FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Partition::Train),
            "val" => Ok(Partition::Val),
            "test" => Ok(Partition::Test),
            _ => Err(Error::Format(format!("unknown partition {s:?}"))),
        }
    }
}

impl Split {
    /// Partition of each of `n` subjects.
    pub fn assignments(&self, n: usize) -> Vec<Partition> {
        let mut out = vec![Partition::Train; n];
        for &i in &self.val {
            out[i] = Partition::Val;
        }
        for &i in &self.test {
            out[i] = Partition::Test;
        }
        out
    }
}

pub const PREPARED_MANIFEST: &str = "prepared.csv";
pub const PREPARED_HEADER: &str = "subject_id,class,agatston,partition,depth,height,width";
const PARTS: [&str; 5] = ["scan_ct", "scan_hu_mask", "rescan_ct", "rescan_hu_mask", "lesion"];

fn part_path(dir: &Path, id: &str, part: &str) -> std::path::PathBuf {
    dir.join(format!("{id}_{part}.vgrid"))
}

/// Write each sample's channels as `.vgrid` files, then the manifest.
pub fn write_prepared(dir: &Path, samples: &[Sample], partitions: &[Partition]) -> Result<()> {
    if samples.len() != partitions.len() {
        return Err(Error::InvalidArgument("one partition per sample required".into()));
    }
    std::fs::create_dir_all(dir)?;
    let mut csv = format!("{PREPARED_HEADER}\n");
    for (s, p) in samples.iter().zip(partitions) {
        let n: usize = s.shape.iter().product();
        let vol = |data: &[f64]| Volume::new(s.shape, [1.0; 3], data.to_vec());
        let lesion = match &s.lesion {
            Some(l) => l.values().to_vec(),
            None => vec![0.0; n],
        };
        let parts = [&s.scan[..n], &s.scan[n..], &s.rescan[..n], &s.rescan[n..], &lesion[..]];
        for (name, data) in PARTS.iter().zip(parts) {
            vol(data)?.write_vgrid(&part_path(dir, &s.id, name))?;
        }
        let [d, h, w] = s.shape;
        let _ = writeln!(csv, "{},{},{},{},{d},{h},{w}", s.id, s.class, s.agatston, p.as_str());
    }
    write_atomic(&dir.join(PREPARED_MANIFEST), csv.as_bytes())
}

/// Load everything [`write_prepared`] wrote.
pub fn read_prepared(dir: &Path) -> Result<Vec<(Sample, Partition)>> {
    let path = dir.join(PREPARED_MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::MissingData(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(PREPARED_HEADER) {
        return Err(Error::Format(format!("{} has an unexpected header", path.display())));
    }
    let mut out = Vec::new();
    for (row, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Format(format!("{} row {}: {line:?}", PREPARED_MANIFEST, row + 1));
        if f.len() != 7 {
            return Err(bad());
        }
        let class: usize = f[1].parse().map_err(|_| bad())?;
        let agatston: f64 = f[2].parse().map_err(|_| bad())?;
        let partition: Partition = f[3].parse()?;
        let mut shape = [0usize; 3];
        for a in 0..3 {
            shape[a] = f[4 + a].parse().map_err(|_| bad())?;
        }
        if class > 2 {
            return Err(bad());
        }
        let mut vols = Vec::with_capacity(PARTS.len());
        for name in PARTS {
            let v = Volume::read_vgrid(&part_path(dir, f[0], name))?;
            if v.shape() != shape {
                return Err(Error::shape(
                    "read_prepared",
                    format!("{} {name} is {:?}", f[0], v.shape()),
                ));
            }
            vols.push(v);
        }
        let cat = |a: &Volume, b: &Volume| [a.values(), b.values()].concat();
        out.push((
            Sample {
                id: f[0].to_string(),
                class,
                agatston,
                shape,
                scan: cat(&vols[0], &vols[1]),
                rescan: cat(&vols[2], &vols[3]),
                lesion: Some(vols.swap_remove(4)),
            },
            partition,
        ));
    }
    Ok(out)
}
