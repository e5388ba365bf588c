//! 3D Grad-CAM over the maps that feed global average pooling, plus slice
//! overlays for inspection.

use std::path::{Path, PathBuf};

use crate::binio::write_atomic;
use crate::error::{Error, Result};
use crate::model::{backbone, head_from_features, AidNetParams, BackboneOutput, NUM_CLASSES};
use crate::preproc::{resample_trilinear, Alignment, Volume};
use crate::volgrid::Tensor;

/// Weight of the source slice in an overlay composite.
pub const SOURCE_WEIGHT: f64 = 0.6;
/// Weight of the heatmap in an overlay composite.
pub const HEATMAP_WEIGHT: f64 = 0.4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCamResult {
    /// Input resolution, non-negative, max 1 unless identically zero.
    pub heatmap: Volume,
    /// `relu(sum_k alpha_k A_k)` at feature-map resolution, unnormalised.
    pub coarse: Volume,
    /// One weight per feature channel.
    pub raw_weights: Vec<f64>,
    pub target_class: usize,
    pub logits: [f64; NUM_CLASSES],
}

/// Grad-CAM for one `[1, 2, D, H, W]` input. Parameters stay frozen; only the
/// feature maps carry gradients.
pub fn grad_cam(params: &AidNetParams, x: &Tensor, target_class: usize) -> Result<GradCamResult> {
    if target_class >= NUM_CLASSES {
        return Err(Error::InvalidArgument(format!(
            "target class {target_class} outside 0..{NUM_CLASSES}"
        )));
    }
    let input = match x.shape() {
        [1, _, d, h, w] => [*d, *h, *w],
        s => return Err(Error::shape("grad_cam", format!("expected one input, got {s:?}"))),
    };
    let bound = params.bind_frozen()?;
    let frozen = backbone(&bound, x)?;
    let maps = Tensor::param(frozen.pre_gap_maps.shape(), frozen.pre_gap_maps.to_vec())?;
    let features = BackboneOutput {
        gated_input: frozen.gated_input,
        pre_gap_maps: maps.clone(),
    };
    let out = head_from_features(&bound, &features)?;
    let l = out.logits.data();
    let logits = [l[0], l[1], l[2]];
    out.logits.pick(&[0, target_class])?.backward()?;

    let (c, fd, fh, fw) = match maps.shape() {
        [1, c, d, h, w] => (*c, *d, *h, *w),
        s => return Err(Error::shape("grad_cam", format!("feature maps {s:?}"))),
    };
    let z = fd * fh * fw;
    let grad = maps.grad_or_zeros();
    let raw_weights: Vec<f64> = grad.chunks_exact(z).map(|g| g.iter().sum::<f64>() / z as f64).collect();
    let a = maps.data();
    let mut cam = vec![0.0; z];
    for (k, &alpha) in raw_weights.iter().enumerate().take(c) {
        if alpha == 0.0 {
            continue;
        }
        for (v, &ak) in cam.iter_mut().zip(&a[k * z..(k + 1) * z]) {
            *v += alpha * ak;
        }
    }
    for v in &mut cam {
        *v = v.max(0.0);
    }
    let spacing = [0, 1, 2].map(|i| input[i] as f64 / [fd, fh, fw][i] as f64);
    let coarse = Volume::new([fd, fh, fw], spacing, cam)?;
    let up = resample_trilinear(&coarse, input, Alignment::Centers);
    let peak = up.values().iter().copied().fold(0.0, f64::max);
    let heatmap = Volume::new(
        input,
        [1.0; 3],
        up.values()
            .iter()
            .map(|&v| if peak > 0.0 { (v / peak).max(0.0) } else { 0.0 })
            .collect(),
    )?;
    Ok(GradCamResult {
        heatmap,
        coarse,
        raw_weights,
        target_class,
        logits,
    })
}

/// `0.6 * source + 0.4 * heatmap`, both clamped to `[0, 1]` first.
pub fn composite(source: &Volume, heatmap: &Volume) -> Result<Volume> {
    source.same_shape(heatmap, "composite")?;
    let values = source
        .values()
        .iter()
        .zip(heatmap.values())
        .map(|(&s, &h)| SOURCE_WEIGHT * s.clamp(0.0, 1.0) + HEATMAP_WEIGHT * h.clamp(0.0, 1.0))
        .collect();
    source.with_values(values)
}

/// Binary 8-bit PGM of one axial slice with values in `[0, 1]`.
pub fn slice_pgm(v: &Volume, z: usize) -> Vec<u8> {
    let [_, h, w] = v.shape();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    let base = z * h * w;
    out.extend(
        v.values()[base..base + h * w]
            .iter()
            .map(|&x| (x.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

/// Write `<stem>_heatmap.vgrid` and one `<stem>_slice_NNN.pgm` composite per
/// axial slice into `dir`. Returns the paths written.
pub fn overlay_export(result: &GradCamResult, source: &Volume, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    let blend = composite(source, &result.heatmap)?;
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::with_capacity(source.shape()[0] + 1);
    let heat_path = dir.join(format!("{stem}_heatmap.vgrid"));
    result.heatmap.write_vgrid(&heat_path)?;
    written.push(heat_path);
    let digits = source.shape()[0].saturating_sub(1).to_string().len().max(3);
    for z in 0..source.shape()[0] {
        let p = dir.join(format!("{stem}_slice_{z:0digits$}.pgm"));
        write_atomic(&p, &slice_pgm(&blend, z))?;
        written.push(p);
    }
    Ok(written)
}

/// Binary dilation with a `(2r+1)^3` cube, clipped at the borders.
pub fn dilate(mask: &Volume, radius: usize) -> Volume {
    let [d, h, w] = mask.shape();
    let mut out = mask.map(|_| 0.0);
    for (i, &m) in mask.values().iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        let c = mask.coords(i);
        let span = |a: usize, n: usize| c[a].saturating_sub(radius)..=(c[a] + radius).min(n - 1);
        for z in span(0, d) {
            for y in span(1, h) {
                for x in span(2, w) {
                    out.set(z, y, x, 1.0);
                }
            }
        }
    }
    out
}

/// Linear index of the largest heatmap value (first on ties).
pub fn heatmap_argmax(heatmap: &Volume) -> usize {
    let v = heatmap.values();
    (0..v.len()).fold(0, |best, i| if v[i] > v[best] { i } else { best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CHANNELS, SAG_CHANNELS};

    const SHAPE: [usize; 3] = [12, 8, 8];

    fn input(seed: u64) -> Tensor {
        let n = 2 * SHAPE.iter().product::<usize>();
        let data = (0..n)
            .map(|i| (((i as u64 + 3) * 2654435761 + seed * 131) % 997) as f64 / 997.0)
            .collect();
        Tensor::constant(&[1, 2, SHAPE[0], SHAPE[1], SHAPE[2]], data).unwrap()
    }

    fn width(p: &AidNetParams) -> usize {
        AidNetParams::embedding_width(p.has_sag())
    }

    #[test]
    fn heatmap_is_normalised_and_non_negative() {
        let p = AidNetParams::init(true, 1).unwrap();
        for class in 0..3 {
            let r = grad_cam(&p, &input(class as u64), class).unwrap();
            assert_eq!(r.heatmap.shape(), SHAPE);
            assert_eq!(r.raw_weights.len(), CHANNELS[4]);
            assert!(r.heatmap.values().iter().all(|&v| v >= 0.0));
            let max = r.heatmap.values().iter().copied().fold(0.0, f64::max);
            assert!(max == 0.0 || (max - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ignored_logit_gives_zero_map() {
        let mut p = AidNetParams::init(true, 2).unwrap();
        let w = width(&p);
        let mut head = p.param_set().get("head.weight").unwrap().data.clone();
        for f in 0..w {
            head[f * NUM_CLASSES + 1] = 0.0;
        }
        p.set("head.weight", head).unwrap();
        let r = grad_cam(&p, &input(0), 1).unwrap();
        assert!(r.raw_weights.iter().all(|&a| a == 0.0));
        assert!(r.heatmap.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_channel_head_follows_that_channel() {
        let mut p = AidNetParams::init(true, 3).unwrap();
        let w = width(&p);
        let mut head = vec![0.0; w * NUM_CLASSES];
        head[2] = 1.5; // GAP channel 0 into logit 2
        p.set("head.weight", head).unwrap();
        p.set("sag.proj.weight", vec![0.0; SAG_CHANNELS * CHANNELS[4]]).unwrap();
        let x = input(5);
        let r = grad_cam(&p, &x, 2).unwrap();
        let coarse = r.coarse.shape();
        let z = coarse.iter().product::<usize>();
        assert!(r.raw_weights[0] > 0.0);
        assert!(r.raw_weights[1..].iter().all(|&a| a == 0.0));

        let maps = backbone(&p.bind_frozen().unwrap(), &x).unwrap().pre_gap_maps;
        let ch0 = &maps.data()[..z];
        let argmax = |v: &[f64]| (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b });
        if ch0.iter().all(|&v| v == 0.0) {
            return;
        }
        let hm = argmax(r.heatmap.values());
        let c = r.heatmap.coords(hm);
        let cell = [0, 1, 2].map(|a| c[a] * coarse[a] / SHAPE[a]);
        let coarse_at = r.coarse.get(cell[0], cell[1], cell[2]);
        let coarse_max = r.coarse.values().iter().copied().fold(0.0, f64::max);
        assert_eq!(coarse_at, coarse_max);
        assert_eq!(r.coarse.index(cell[0], cell[1], cell[2]), argmax(ch0));
    }

    #[test]
    fn weights_match_uniform_channel_perturbation() {
        let p = AidNetParams::init(true, 4).unwrap();
        let x = input(7);
        let class = 1;
        let r = grad_cam(&p, &x, class).unwrap();
        let bound = p.bind_frozen().unwrap();
        let base = backbone(&bound, &x).unwrap();
        let shape = base.pre_gap_maps.shape().to_vec();
        let z: usize = shape[2..].iter().product();
        let logit = |k: usize, eps: f64| {
            let mut a = base.pre_gap_maps.to_vec();
            for v in &mut a[k * z..(k + 1) * z] {
                *v += eps;
            }
            let f = BackboneOutput {
                gated_input: base.gated_input.clone(),
                pre_gap_maps: Tensor::constant(&shape, a).unwrap(),
            };
            head_from_features(&bound, &f).unwrap().logits.data()[class]
        };
        let h = 1e-5;
        for k in [0, 7, 31, 63] {
            let fd = (logit(k, h) - logit(k, -h)) / (2.0 * h * z as f64);
            let an = r.raw_weights[k];
            let scale = an.abs().max(fd.abs()).max(1e-8);
            assert!((an - fd).abs() / scale < 1e-4, "channel {k}: {an} vs {fd}");
        }
    }

    #[test]
    fn classes_have_distinct_weights() {
        let p = AidNetParams::init(true, 6).unwrap();
        let x = input(2);
        let a = grad_cam(&p, &x, 0).unwrap();
        let b = grad_cam(&p, &x, 2).unwrap();
        assert_ne!(a.raw_weights, b.raw_weights);
    }

    #[test]
    fn rejects_bad_class_and_batch() {
        let p = AidNetParams::init(false, 0).unwrap();
        assert!(grad_cam(&p, &input(0), 3).is_err());
        let two = Tensor::constant(&[2, 2, 12, 8, 8], vec![0.0; 2 * 2 * 12 * 64]).unwrap();
        assert!(grad_cam(&p, &two, 0).is_err());
    }

    #[test]
    fn dilation_grows_by_radius() {
        let mut m = Volume::filled([5, 5, 5], [1.0; 3], 0.0).unwrap();
        m.set(2, 2, 2, 1.0);
        assert_eq!(dilate(&m, 1).count_nonzero(), 27);
        assert_eq!(dilate(&m, 2).count_nonzero(), 125);
        m.set(2, 2, 2, 0.0);
        m.set(0, 0, 0, 1.0);
        assert_eq!(dilate(&m, 2).count_nonzero(), 27);
        assert_eq!(heatmap_argmax(&dilate(&m, 1)), 0);
    }

    #[test]
    fn composite_rules() {
        let src = Volume::new([1, 2, 2], [1.0; 3], vec![0.0, 0.5, 1.0, 0.25]).unwrap();
        let zero = Volume::filled([1, 2, 2], [1.0; 3], 0.0).unwrap();
        let c = composite(&src, &zero).unwrap();
        assert_eq!(c.values(), &[0.0, 0.3, 0.6, 0.15]);
        let one = Volume::filled([1, 2, 2], [1.0; 3], 1.0).unwrap();
        assert!(composite(&one, &one)
            .unwrap()
            .values()
            .iter()
            .all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn export_writes_heatmap_and_slices() {
        let p = AidNetParams::init(true, 8).unwrap();
        let x = input(1);
        let r = grad_cam(&p, &x, 1).unwrap();
        let src = Volume::new(SHAPE, [1.0; 3], x.data()[..SHAPE.iter().product()].to_vec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = overlay_export(&r, &src, dir.path(), "case").unwrap();
        assert_eq!(files.len(), 1 + SHAPE[0]);
        assert_eq!(Volume::read_vgrid(&files[0]).unwrap(), r.heatmap);
        assert!(files[1].ends_with("case_slice_000.pgm"));
        let pgm = std::fs::read(&files[1]).unwrap();
        assert!(pgm.starts_with(b"P5\n8 8\n255\n"));
        assert_eq!(pgm.len(), b"P5\n8 8\n255\n".len() + 64);
    }
}
