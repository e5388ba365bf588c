use super::tensor::Tensor;
use crate::error::{Error, Result};

impl Tensor {
    /// Row-wise Euclidean distance between two `[N, F]` tensors, `-> [N]`.
    ///
    /// At zero distance the derivative is taken as 0 rather than the
    /// undefined `0/0`.
    pub fn pairwise_distance(&self, other: &Tensor) -> Result<Tensor> {
        let (n, f) = match (self.shape(), other.shape()) {
            (&[n, f], b) if b == [n, f] => (n, f),
            (a, b) => {
                return Err(Error::shape(
                    "pairwise_distance",
                    format!("expected equal [N, F] shapes, got {a:?} and {b:?}"),
                ))
            }
        };
        let (a, b) = (self.data(), other.data());
        let dist: Vec<f64> = (0..n)
            .map(|i| {
                let r = i * f..(i + 1) * f;
                a[r.clone()]
                    .iter()
                    .zip(&b[r])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let (ta, tb, dc) = (self.clone(), other.clone(), dist.clone());
        Tensor::from_op(
            "pairwise_distance",
            vec![n],
            dist,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                let (a, b) = (ta.data(), tb.data());
                let mut da = vec![0.0; n * f];
                for i in 0..n {
                    if dc[i] == 0.0 {
                        continue;
                    }
                    let s = g[i] / dc[i];
                    for j in i * f..(i + 1) * f {
                        da[j] = s * (a[j] - b[j]);
                    }
                }
                let db = da.iter().map(|v| -v).collect();
                vec![Some(da), Some(db)]
            }),
        )
    }

    /// Mean negative log-likelihood of `labels` under `softmax(self)` for
    /// `[N, K]` logits, with optional per-class weights (weighted mean).
    pub fn cross_entropy(&self, labels: &[usize], class_weights: Option<&[f64]>) -> Result<Tensor> {
        let (n, k) = match *self.shape() {
            [n, k] if labels.len() == n => (n, k),
            ref s => {
                return Err(Error::shape(
                    "cross_entropy",
                    format!("logits {s:?} with {} labels", labels.len()),
                ))
            }
        };
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidArgument(format!("label {bad} outside {k} classes")));
        }
        if class_weights.is_some_and(|w| w.len() != k) {
            return Err(Error::InvalidArgument(format!("need {k} class weights")));
        }
        let weight = |l: usize| class_weights.map_or(1.0, |w| w[l]);
        let norm: f64 = labels.iter().map(|&l| weight(l)).sum();
        if norm <= 0.0 {
            return Err(Error::InvalidArgument("class weights sum to zero".into()));
        }
        let x = self.data();
        let mut probs = vec![0.0; n * k];
        let mut loss = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = &x[i * k..(i + 1) * k];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for j in 0..k {
                probs[i * k + j] = (row[j] - lse).exp();
            }
            loss += weight(label) * (lse - row[label]);
        }
        let labels = labels.to_vec();
        let weights: Vec<f64> = labels.iter().map(|&l| weight(l) / norm).collect();
        Tensor::from_op(
            "cross_entropy",
            vec![1],
            vec![loss / norm],
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = probs.clone();
                for (i, &label) in labels.iter().enumerate() {
                    dx[i * k + label] -= 1.0;
                    for v in &mut dx[i * k..(i + 1) * k] {
                        *v *= g[0] * weights[i];
                    }
                }
                vec![Some(dx)]
            }),
        )
    }
}
