//! Elementwise maps, broadcasting arithmetic, softmax and reductions.

use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

/// Row-major strides for `shape`.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Per output element, the source index into each operand.
type SourceMaps = (Vec<usize>, Vec<usize>);

/// For equal-rank shapes whose extents agree or are 1, the broadcast output
/// shape plus, per output element, the source index into each operand.
fn broadcast_maps(op: &'static str, a: &[usize], b: &[usize]) -> Result<(Vec<usize>, Option<SourceMaps>)> {
    if a == b {
        return Ok((a.to_vec(), None));
    }
    if a.len() != b.len() {
        return Err(Error::shape(op, format!("rank mismatch {a:?} vs {b:?}")));
    }
    let mut out = Vec::with_capacity(a.len());
    for (&x, &y) in a.iter().zip(b) {
        match (x, y) {
            _ if x == y => out.push(x),
            (1, _) => out.push(y),
            (_, 1) => out.push(x),
            _ => return Err(Error::shape(op, format!("cannot broadcast {a:?} with {b:?}"))),
        }
    }
    let (sa, sb) = (strides(a), strides(b));
    let so = strides(&out);
    let n = numel(&out);
    let mut ia = Vec::with_capacity(n);
    let mut ib = Vec::with_capacity(n);
    for lin in 0..n {
        let (mut pa, mut pb, mut rem) = (0, 0, lin);
        for d in 0..out.len() {
            let i = rem / so[d];
            rem %= so[d];
            if a[d] != 1 {
                pa += i * sa[d];
            }
            if b[d] != 1 {
                pb += i * sb[d];
            }
        }
        ia.push(pa);
        ib.push(pb);
    }
    Ok((out, Some((ia, ib))))
}

impl Tensor {
    fn unary(
        &self,
        op: &'static str,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Result<Tensor> {
        let out: Vec<f64> = self.data().iter().map(|&x| f(x)).collect();
        let x = self.clone();
        let y = out.clone();
        Tensor::from_op(
            op,
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let dx = g
                    .iter()
                    .zip(x.data())
                    .zip(&y)
                    .map(|((g, &x), &y)| g * df(x, y))
                    .collect();
                vec![Some(dx)]
            }),
        )
    }

    /// `max(x, 0)`; the derivative at exactly 0 is taken as 0.
    pub fn relu(&self) -> Result<Tensor> {
        self.unary("relu", |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        self.unary("sigmoid", sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn scale(&self, factor: f64) -> Result<Tensor> {
        self.unary("scale", move |x| factor * x, move |_, _| factor)
    }

    pub fn add_scalar(&self, offset: f64) -> Result<Tensor> {
        self.unary("add_scalar", move |x| x + offset, |_, _| 1.0)
    }

    /// Elementwise sum with broadcasting over unit extents.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let (shape, maps) = broadcast_maps("add", self.shape(), other.shape())?;
        let (na, nb) = (self.numel(), other.numel());
        match maps {
            None => {
                let out = self.data().iter().zip(other.data()).map(|(a, b)| a + b).collect();
                Tensor::from_op(
                    "add",
                    shape,
                    out,
                    vec![self.clone(), other.clone()],
                    Box::new(|g| vec![Some(g.to_vec()), Some(g.to_vec())]),
                )
            }
            Some((ia, ib)) => {
                let (a, b) = (self.data(), other.data());
                let out = ia.iter().zip(&ib).map(|(&i, &j)| a[i] + b[j]).collect();
                Tensor::from_op(
                    "add",
                    shape,
                    out,
                    vec![self.clone(), other.clone()],
                    Box::new(move |g| {
                        let mut da = vec![0.0; na];
                        let mut db = vec![0.0; nb];
                        for ((&i, &j), &g) in ia.iter().zip(&ib).zip(g) {
                            da[i] += g;
                            db[j] += g;
                        }
                        vec![Some(da), Some(db)]
                    }),
                )
            }
        }
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.add(&other.scale(-1.0)?)
    }

    /// Elementwise product with broadcasting over unit extents.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        let (shape, maps) = broadcast_maps("mul", self.shape(), other.shape())?;
        let (ta, tb) = (self.clone(), other.clone());
        let (na, nb) = (self.numel(), other.numel());
        let (ia, ib) = maps.unwrap_or_else(|| ((0..na).collect(), (0..nb).collect()));
        let (a, b) = (self.data(), other.data());
        let out = ia.iter().zip(&ib).map(|(&i, &j)| a[i] * b[j]).collect();
        Tensor::from_op(
            "mul",
            shape,
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                let (a, b) = (ta.data(), tb.data());
                let mut da = vec![0.0; na];
                let mut db = vec![0.0; nb];
                for ((&i, &j), &g) in ia.iter().zip(&ib).zip(g) {
                    da[i] += g * b[j];
                    db[j] += g * a[i];
                }
                vec![Some(da), Some(db)]
            }),
        )
    }

    /// Softmax along `axis`, computed with the max-shift for stability.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::shape(
                "softmax",
                format!("axis {axis} out of range for {shape:?}"),
            ));
        }
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let x = self.data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| o * len * inner + k * inner + i;
                let m = (0..len).map(|k| x[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for k in 0..len {
                    let e = (x[at(k)] - m).exp();
                    y[at(k)] = e;
                    z += e;
                }
                for k in 0..len {
                    y[at(k)] /= z;
                }
            }
        }
        let yc = y.clone();
        Tensor::from_op(
            "softmax",
            shape,
            y,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![0.0; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| o * len * inner + k * inner + i;
                        let dot: f64 = (0..len).map(|k| g[at(k)] * yc[at(k)]).sum();
                        for k in 0..len {
                            dx[at(k)] = yc[at(k)] * (g[at(k)] - dot);
                        }
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    pub fn sum(&self) -> Result<Tensor> {
        let total = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(
            "sum",
            vec![1],
            vec![total],
            vec![self.clone()],
            Box::new(move |g| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&self) -> Result<Tensor> {
        let n = self.numel();
        self.sum()?.scale(1.0 / n as f64)
    }

    /// The element at a multi-index, as a one-element tensor.
    pub fn pick(&self, index: &[usize]) -> Result<Tensor> {
        let shape = self.shape();
        if index.len() != shape.len() || index.iter().zip(shape).any(|(i, s)| i >= s) {
            return Err(Error::shape("pick", format!("index {index:?} outside {shape:?}")));
        }
        let lin: usize = index.iter().zip(strides(shape)).map(|(i, s)| i * s).sum();
        let n = self.numel();
        Tensor::from_op(
            "pick",
            vec![1],
            vec![self.data()[lin]],
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![0.0; n];
                dx[lin] = g[0];
                vec![Some(dx)]
            }),
        )
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_at_zero() {
        let t = Tensor::constant(&[1], vec![0.0]).unwrap().sigmoid().unwrap();
        assert_eq!(t.data(), &[0.5]);
    }

    #[test]
    fn softmax_equal_logits() {
        let t = Tensor::constant(&[1, 3], vec![0.7; 3]).unwrap().softmax(1).unwrap();
        for &p in t.data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let vals: Vec<f64> = (0..24).map(|i| ((i * 37 % 11) as f64 - 5.0) * 3.1).collect();
        let t = Tensor::constant(&[2, 3, 4], vals).unwrap();
        for axis in 0..3 {
            let s = t.softmax(axis).unwrap();
            let shape = s.shape().to_vec();
            let st = strides(&shape);
            for lin in 0..s.numel() {
                if !(lin / st[axis]).is_multiple_of(shape[axis]) {
                    continue;
                }
                let total: f64 = (0..shape[axis]).map(|k| s.data()[lin + k * st[axis]]).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
        assert!(t.softmax(3).is_err());
    }

    #[test]
    fn relu_gradient_sides() {
        let x = Tensor::param(&[2], vec![-1.0, 1.0]).unwrap();
        x.relu().unwrap().sum().unwrap().backward().unwrap();
        assert_eq!(*x.grad().unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn broadcast_mul_over_channels() {
        let alpha = Tensor::param(&[1, 1, 2], vec![2.0, 3.0]).unwrap();
        let x = Tensor::param(&[1, 3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = alpha.mul(&x).unwrap();
        assert_eq!(y.shape(), &[1, 3, 2]);
        assert_eq!(y.data(), &[2.0, 6.0, 6.0, 12.0, 10.0, 18.0]);
        y.sum().unwrap().backward().unwrap();
        assert_eq!(*alpha.grad().unwrap(), vec![9.0, 12.0]);
        assert_eq!(*x.grad().unwrap(), vec![2.0, 3.0, 2.0, 3.0, 2.0, 3.0]);
    }

    #[test]
    fn broadcast_rejects_mismatch() {
        let a = Tensor::zeros(&[2, 3]).unwrap();
        let b = Tensor::zeros(&[3, 3]).unwrap();
        assert!(a.add(&b).is_err());
        assert!(a.mul(&Tensor::zeros(&[6]).unwrap()).is_err());
    }

    #[test]
    fn pick_routes_gradient() {
        let x = Tensor::param(&[2, 3], vec![0.0; 6]).unwrap();
        x.pick(&[1, 2]).unwrap().backward().unwrap();
        assert_eq!(*x.grad().unwrap(), vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(x.pick(&[2, 0]).is_err());
    }
}
