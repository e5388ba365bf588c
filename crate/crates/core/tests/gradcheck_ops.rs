//! Central-difference checks of every differentiable op (h = 1e-4, rel < 1e-5).

mod common;

use aidnet_core::gradcheck::check_op;
use aidnet_core::model::contrastive_loss;
use aidnet_core::volgrid::Tensor;
use aidnet_core::Result;
use common::{away_from_zero, rng, uniform};

const H: f64 = 1e-4;
const TOL: f64 = 1e-5;

const FLOOR: f64 = 1e-6;

fn check(name: &str, inputs: &[(Vec<usize>, Vec<f64>)], build: &dyn Fn(&[Tensor]) -> Result<Tensor>) {
    let worst = check_op(inputs, build, H, FLOOR).unwrap();
    assert!(
        worst.rel_err < TOL,
        "{name}: rel err {:e} at {}",
        worst.rel_err,
        worst.location
    );
}

fn rand_input(shape: &[usize], seed: u64) -> (Vec<usize>, Vec<f64>) {
    let n = shape.iter().product();
    (shape.to_vec(), uniform(&mut rng(seed), n, -1.0, 1.0))
}

#[test]
fn elementwise_unary() {
    let x = rand_input(&[2, 3, 4], 1);
    check("sigmoid", std::slice::from_ref(&x), &|t| t[0].sigmoid());
    check("scale", std::slice::from_ref(&x), &|t| t[0].scale(-2.5));
    check("add_scalar", std::slice::from_ref(&x), &|t| t[0].add_scalar(0.7));
    let kinked = (vec![2, 3, 4], away_from_zero(&mut rng(2), 24, 0.01));
    check("relu", &[kinked], &|t| t[0].relu());
}

#[test]
fn elementwise_binary_with_broadcast() {
    let a = rand_input(&[2, 3, 4], 3);
    let b = rand_input(&[2, 3, 4], 4);
    let row = rand_input(&[1, 3, 1], 5);
    check("add", &[a.clone(), b.clone()], &|t| t[0].add(&t[1]));
    check("sub", &[a.clone(), b.clone()], &|t| t[0].sub(&t[1]));
    check("mul", &[a.clone(), b.clone()], &|t| t[0].mul(&t[1]));
    check("add_broadcast", &[a.clone(), row.clone()], &|t| t[0].add(&t[1]));
    check("mul_broadcast", &[a.clone(), row.clone()], &|t| t[0].mul(&t[1]));
    check("sub_broadcast", &[row, a], &|t| t[0].sub(&t[1]));
}

#[test]
fn reductions_and_softmax() {
    let x = rand_input(&[3, 5], 6);
    check("sum", std::slice::from_ref(&x), &|t| t[0].sum());
    check("mean", std::slice::from_ref(&x), &|t| t[0].mean());
    check("pick", std::slice::from_ref(&x), &|t| t[0].pick(&[2, 1]));
    check("softmax1", std::slice::from_ref(&x), &|t| t[0].softmax(1));
    check("softmax0", &[x], &|t| t[0].softmax(0));
}

#[test]
fn pooling_and_reshaping() {
    let x = rand_input(&[2, 2, 4, 4, 4], 7);
    check("maxpool2", std::slice::from_ref(&x), &|t| {
        t[0].maxpool3d([2; 3], [2; 3])
    });
    check("maxpool3s1", std::slice::from_ref(&x), &|t| {
        t[0].maxpool3d([3; 3], [1; 3])
    });
    check("gap", std::slice::from_ref(&x), &|t| t[0].global_avg_pool());
    let small = rand_input(&[1, 2, 2, 2, 3], 8);
    check("upsample", std::slice::from_ref(&small), &|t| {
        t[0].upsample_nearest([4, 3, 5])
    });
    check("reshape", std::slice::from_ref(&small), &|t| t[0].reshape(&[2, 12]));
    check("flatten", std::slice::from_ref(&small), &|t| t[0].flatten());
    let other = rand_input(&[1, 3, 2, 2, 3], 9);
    check("concat", &[small, other], &|t| t[0].concat(&t[1], 1));
}

#[test]
fn convolution_and_dense() {
    let x = rand_input(&[2, 3, 5, 4, 4], 10);
    let w = rand_input(&[4, 3, 3, 3, 3], 11);
    let b = rand_input(&[4], 12);
    check("conv_same", &[x.clone(), w.clone(), b.clone()], &|t| {
        t[0].conv3d(&t[1], &t[2], [1; 3], [1; 3])
    });
    check("conv_strided", &[x.clone(), w, b.clone()], &|t| {
        t[0].conv3d(&t[1], &t[2], [2; 3], [0; 3])
    });
    let w1 = rand_input(&[4, 3, 1, 1, 1], 13);
    check("conv_pointwise", &[x, w1, b], &|t| {
        t[0].conv3d(&t[1], &t[2], [1; 3], [0; 3])
    });

    let f = rand_input(&[3, 5], 14);
    let dw = rand_input(&[5, 4], 15);
    let db = rand_input(&[4], 16);
    check("dense", &[f, dw, db], &|t| t[0].dense(&t[1], &t[2]));
}

#[test]
fn losses() {
    let a = rand_input(&[3, 6], 17);
    let b = rand_input(&[3, 6], 18);
    check("pairwise_distance", &[a, b], &|t| t[0].pairwise_distance(&t[1]));

    let logits = rand_input(&[4, 3], 19);
    check("cross_entropy", std::slice::from_ref(&logits), &|t| {
        t[0].cross_entropy(&[0, 2, 1, 2], None)
    });
    check("cross_entropy_weighted", &[logits], &|t| {
        t[0].cross_entropy(&[0, 2, 1, 2], Some(&[1.0, 2.5, 0.5]))
    });

    // Distances kept clear of zero and of the margin kink.
    let d = (vec![4], vec![0.3, 1.7, 0.45, 2.2]);
    check("contrastive", &[d], &|t| contrastive_loss(&t[0], &[0, 1, 1, 0], 1.0));
}
