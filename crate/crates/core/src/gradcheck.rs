//! Central finite-difference checks of analytic gradients.
//!
//! [`check_op`] compares every input coordinate of a small graph against a
//! central difference. [`check_network`] does the same for the total loss of
//! a full network, probing each parameter array and a few random directions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{forward_pair, total_loss, AidNetParams, LossConfig, PairBatch};
use crate::volgrid::Tensor;
use crate::Result;

/// `|a - b| / max(|a|, |b|, floor)`. The floor lets two near-zero
/// gradients compare as equal.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest relative error seen, with a description of where.
#[derive(Clone, Debug, PartialEq)]
pub struct Worst {
    pub rel_err: f64,
    pub location: String,
}

impl Worst {
    fn new() -> Self {
        Worst {
            rel_err: 0.0,
            location: String::new(),
        }
    }

    fn update(&mut self, e: f64, location: impl FnOnce() -> String) {
        if e > self.rel_err || e.is_nan() {
            self.rel_err = e;
            self.location = location();
        }
    }
}

/// Reduce any tensor to a scalar with a fixed random projection.
fn project(out: &Tensor) -> Result<Tensor> {
    if out.numel() == 1 {
        return out.sum();
    }
    let mut r = ChaCha8Rng::seed_from_u64(99);
    let w: Vec<f64> = (0..out.numel()).map(|_| r.random_range(-1.0..1.0)).collect();
    out.mul(&Tensor::constant(out.shape(), w)?)?.sum()
}

/// Check `build` against central differences at every coordinate of every
/// input. Non-scalar outputs are reduced by a fixed random projection.
///
/// ```
/// use aidnet_core::gradcheck::check_op;
///
/// let x = (vec![2, 2], vec![0.3, -0.1, 0.8, 0.5]);
/// let worst = check_op(&[x], &|t| t[0].sigmoid(), 1e-4, 1e-6).unwrap();
/// assert!(worst.rel_err < 1e-8);
/// ```
pub fn check_op(
    inputs: &[(Vec<usize>, Vec<f64>)],
    build: &dyn Fn(&[Tensor]) -> Result<Tensor>,
    h: f64,
    floor: f64,
) -> Result<Worst> {
    let leaves = inputs
        .iter()
        .map(|(s, d)| Tensor::param(s, d.clone()))
        .collect::<Result<Vec<_>>>()?;
    project(&build(&leaves)?)?.backward()?;

    let mut worst = Worst::new();
    for (j, (_, data)) in inputs.iter().enumerate() {
        let analytic = leaves[j].grad_or_zeros();
        let eval = |x: Vec<f64>| -> Result<f64> {
            let consts = inputs
                .iter()
                .enumerate()
                .map(|(k, (s, d))| Tensor::constant(s, if k == j { x.clone() } else { d.clone() }))
                .collect::<Result<Vec<_>>>()?;
            project(&build(&consts)?)?.item()
        };
        for i in 0..data.len() {
            let mut p = data.clone();
            p[i] = data[i] + h;
            let up = eval(p.clone())?;
            p[i] = data[i] - h;
            let fd = (up - eval(p)?) / (2.0 * h);
            worst.update(rel_err(analytic[i], fd, floor), || {
                format!("input {j}[{i}]: analytic {} vs fd {fd}", analytic[i])
            });
        }
    }
    Ok(worst)
}

/// Settings for [`check_network`].
#[derive(Clone, Debug)]
pub struct NetCheck {
    /// Step for single-coordinate probes.
    pub h: f64,
    /// Step for whole-parameter directional probes.
    pub h_direction: f64,
    pub floor: f64,
    /// Arrays up to this size are probed at every element.
    pub exhaustive_up_to: usize,
    /// Random elements probed in larger arrays.
    pub samples: usize,
    pub directions: usize,
    pub seed: u64,
}

impl Default for NetCheck {
    fn default() -> Self {
        // Coarser steps push first-layer perturbations across relu kinks.
        NetCheck {
            h: 1e-5,
            h_direction: 1e-6,
            floor: 1e-6,
            exhaustive_up_to: 64,
            samples: 32,
            directions: 3,
            seed: 0,
        }
    }
}

fn loss_value(p: &AidNetParams, b: &PairBatch, loss: &LossConfig) -> Result<f64> {
    let bound = p.bind_frozen()?;
    let out = forward_pair(&bound, b)?;
    total_loss(&out, b, loss)?.total.item()
}

/// Analytic gradient of the total loss for every parameter array.
pub fn loss_gradients(p: &AidNetParams, b: &PairBatch, loss: &LossConfig) -> Result<Vec<Vec<f64>>> {
    let bound = p.bind()?;
    let out = forward_pair(&bound, b)?;
    total_loss(&out, b, loss)?.total.backward()?;
    Ok(bound.grads())
}

/// Compare the analytic gradient of the total loss with central differences.
pub fn check_network(params: &AidNetParams, batch: &PairBatch, loss: &LossConfig, opts: &NetCheck) -> Result<Worst> {
    let grads = loss_gradients(params, batch, loss)?;
    let mut r = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst = Worst::new();
    let names: Vec<(String, usize)> = params
        .param_set()
        .iter()
        .map(|p| (p.name.clone(), p.data.len()))
        .collect();

    for (k, (name, len)) in names.iter().enumerate() {
        let idx: Vec<usize> = if *len <= opts.exhaustive_up_to {
            (0..*len).collect()
        } else {
            (0..opts.samples).map(|_| r.random_range(0..*len)).collect()
        };
        let base = &params.param_set().iter().nth(k).expect("index from the same set").data;
        for i in idx {
            let probe = |delta: f64| -> Result<f64> {
                let mut p = params.clone();
                let mut data = base.clone();
                data[i] += delta;
                p.set(name, data)?;
                loss_value(&p, batch, loss)
            };
            let fd = (probe(opts.h)? - probe(-opts.h)?) / (2.0 * opts.h);
            worst.update(rel_err(grads[k][i], fd, opts.floor), || {
                format!("{name}[{i}]: analytic {} vs fd {fd}", grads[k][i])
            });
        }
    }

    for _ in 0..opts.directions {
        let dir: Vec<Vec<f64>> = names
            .iter()
            .map(|(_, n)| (0..*n).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect();
        let shifted = |s: f64| -> Result<f64> {
            let mut p = params.clone();
            for (k, (name, _)) in names.iter().enumerate() {
                let d = params.param_set().iter().nth(k).expect("same set").data.iter();
                p.set(name, d.zip(&dir[k]).map(|(w, v)| w + s * v).collect())?;
            }
            loss_value(&p, batch, loss)
        };
        let h = opts.h_direction;
        let fd = (shifted(h)? - shifted(-h)?) / (2.0 * h);
        let an: f64 = grads
            .iter()
            .flatten()
            .zip(dir.iter().flatten())
            .map(|(g, v)| g * v)
            .sum();
        worst.update(rel_err(an, fd, opts.floor), || {
            format!("direction: analytic {an} vs fd {fd}")
        });
    }
    Ok(worst)
}
