//! Pooling, resampling and shape manipulation on `[N, C, D, H, W]` tensors.

use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

fn spatial_dims(op: &'static str, t: &Tensor) -> Result<[usize; 5]> {
    match *t.shape() {
        [n, c, d, h, w] => Ok([n, c, d, h, w]),
        ref s => Err(Error::shape(op, format!("expected [N, C, D, H, W], got {s:?}"))),
    }
}

impl Tensor {
    /// Max pooling. Within a window, ties go to the lowest linear index.
    pub fn maxpool3d(&self, window: [usize; 3], stride: [usize; 3]) -> Result<Tensor> {
        let [n, c, d, h, w] = spatial_dims("maxpool3d", self)?;
        if window.contains(&0) || stride.contains(&0) {
            return Err(Error::shape("maxpool3d", "window and stride must be positive"));
        }
        let ext = [d, h, w];
        let mut out_ext = [0; 3];
        for a in 0..3 {
            if window[a] > ext[a] {
                return Err(Error::shape(
                    "maxpool3d",
                    format!("window {window:?} larger than spatial extent {ext:?}"),
                ));
            }
            out_ext[a] = (ext[a] - window[a]) / stride[a] + 1;
        }
        let [od, oh, ow] = out_ext;
        let x = self.data();
        let mut out = Vec::with_capacity(n * c * od * oh * ow);
        let mut argmax = Vec::with_capacity(out.capacity());
        for plane in 0..n * c {
            let base = plane * d * h * w;
            for z in 0..od {
                for y in 0..oh {
                    for xw in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_at = 0;
                        for a in 0..window[0] {
                            for b in 0..window[1] {
                                for e in 0..window[2] {
                                    let at =
                                        base + ((z * stride[0] + a) * h + y * stride[1] + b) * w + xw * stride[2] + e;
                                    // Scan order is increasing in linear index
                                    // within a window, so strict `>` keeps the
                                    // lowest one on ties.
                                    if x[at] > best {
                                        best = x[at];
                                        best_at = at;
                                    }
                                }
                            }
                        }
                        out.push(best);
                        argmax.push(best_at);
                    }
                }
            }
        }
        let in_len = self.numel();
        Tensor::from_op(
            "maxpool3d",
            vec![n, c, od, oh, ow],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![0.0; in_len];
                for (&at, &g) in argmax.iter().zip(g) {
                    dx[at] += g;
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Spatial mean per channel: `[N, C, D, H, W] -> [N, C]`.
    pub fn global_avg_pool(&self) -> Result<Tensor> {
        let [n, c, d, h, w] = spatial_dims("global_avg_pool", self)?;
        let vox = d * h * w;
        let out: Vec<f64> = self
            .data()
            .chunks_exact(vox)
            .map(|p| p.iter().sum::<f64>() / vox as f64)
            .collect();
        Tensor::from_op(
            "global_avg_pool",
            vec![n, c],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = Vec::with_capacity(g.len() * vox);
                for &g in g {
                    dx.extend(std::iter::repeat_n(g / vox as f64, vox));
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Nearest-neighbour resize of the spatial axes; source index along each
    /// axis is `floor(i * in / out)`. Backward sums the copies.
    pub fn upsample_nearest(&self, target: [usize; 3]) -> Result<Tensor> {
        let [n, c, d, h, w] = spatial_dims("upsample_nearest", self)?;
        if target.contains(&0) {
            return Err(Error::shape("upsample_nearest", "empty target extent"));
        }
        let [td, th, tw] = target;
        let map = |i: usize, src: usize, dst: usize| i * src / dst;
        let mut index = Vec::with_capacity(n * c * td * th * tw);
        for plane in 0..n * c {
            let base = plane * d * h * w;
            for z in 0..td {
                let sz = map(z, d, td);
                for y in 0..th {
                    let sy = map(y, h, th);
                    for x in 0..tw {
                        index.push(base + (sz * h + sy) * w + map(x, w, tw));
                    }
                }
            }
        }
        let src = self.data();
        let out = index.iter().map(|&i| src[i]).collect();
        let in_len = self.numel();
        Tensor::from_op(
            "upsample_nearest",
            vec![n, c, td, th, tw],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![0.0; in_len];
                for (&i, &g) in index.iter().zip(g) {
                    dx[i] += g;
                }
                vec![Some(dx)]
            }),
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape()),
            ));
        }
        Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(|g| vec![Some(g.to_vec())]),
        )
    }

    /// Keeps the leading (batch) axis and folds everything else.
    pub fn flatten(&self) -> Result<Tensor> {
        let n = self.shape()[0];
        self.reshape(&[n, self.numel() / n])
    }

    pub fn concat(&self, other: &Tensor, axis: usize) -> Result<Tensor> {
        let (a, b) = (self.shape(), other.shape());
        let agree =
            a.len() == b.len() && axis < a.len() && a.iter().zip(b).enumerate().all(|(i, (x, y))| i == axis || x == y);
        if !agree {
            return Err(Error::shape(
                "concat",
                format!("cannot join {a:?} and {b:?} along axis {axis}"),
            ));
        }
        let outer: usize = a[..axis].iter().product();
        let inner: usize = a[axis + 1..].iter().product();
        let (ca, cb) = (a[axis] * inner, b[axis] * inner);
        let mut out = Vec::with_capacity(self.numel() + other.numel());
        for o in 0..outer {
            out.extend_from_slice(&self.data()[o * ca..(o + 1) * ca]);
            out.extend_from_slice(&other.data()[o * cb..(o + 1) * cb]);
        }
        let mut shape = a.to_vec();
        shape[axis] += b[axis];
        Tensor::from_op(
            "concat",
            shape,
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                let mut da = Vec::with_capacity(outer * ca);
                let mut db = Vec::with_capacity(outer * cb);
                for chunk in g.chunks_exact(ca + cb) {
                    da.extend_from_slice(&chunk[..ca]);
                    db.extend_from_slice(&chunk[ca..]);
                }
                vec![Some(da), Some(db)]
            }),
        )
    }
}
