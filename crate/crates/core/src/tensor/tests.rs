use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gradcheck::check_gradients;
use super::*;
use crate::error::Error;

fn t(shape: &[usize], data: &[f64]) -> DenseTensor {
    DenseTensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn rand_t(shape: &[usize], seed: u64) -> DenseTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DenseTensor::uniform(shape, -1.0, 1.0, &mut rng).unwrap()
}

fn c(x: DenseTensor) -> Var {
    Var::constant(x)
}

fn naive_matmul(a: &DenseTensor, b: &DenseTensor) -> DenseTensor {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = DenseTensor::zeros(&[m, n]).unwrap();
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.get(&[i, p]).unwrap() * b.get(&[p, j]).unwrap();
            }
            out.set(&[i, j], s).unwrap();
        }
    }
    out
}

#[test]
fn matmul_identity_and_zero() {
    let a = rand_t(&[3, 3], 1);
    let i3 = c(DenseTensor::eye(3).unwrap());
    assert_eq!(i3.matmul(&c(a.clone())).unwrap().value(), &a);
    let z = c(DenseTensor::zeros(&[2, 2]).unwrap());
    let b = c(rand_t(&[2, 2], 2));
    assert!(z.matmul(&b).unwrap().value().data().iter().all(|&x| x == 0.0));
}

#[test]
fn matmul_matches_triple_loop() {
    let a = rand_t(&[2, 3], 3);
    let b = rand_t(&[3, 2], 4);
    let got = c(a.clone()).matmul(&c(b.clone())).unwrap();
    assert!(got.value().max_abs_diff(&naive_matmul(&a, &b)).unwrap() < 1e-12);
}

#[test]
fn matmul_broadcasts_batch_axes() {
    let a = rand_t(&[2, 3, 4], 5);
    let b = rand_t(&[4, 5], 6);
    let got = c(a.clone()).matmul(&c(b.clone())).unwrap();
    assert_eq!(got.shape(), &[2, 3, 5]);
    for bi in 0..2 {
        let ab = DenseTensor::new(vec![3, 4], a.data()[bi * 12..(bi + 1) * 12].to_vec()).unwrap();
        let expect = naive_matmul(&ab, &b);
        let slice = &got.value().data()[bi * 15..(bi + 1) * 15];
        for (x, y) in slice.iter().zip(expect.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let err = c(rand_t(&[2, 3], 1)).matmul(&c(rand_t(&[2, 3], 2))).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]"), "{msg}");
    assert!(matches!(err, Error::ShapeMismatch { .. }));
}

#[test]
fn softmax_examples() {
    let s = c(t(&[3], &[0.0, 0.0, 0.0])).softmax(0).unwrap();
    for &v in s.value().data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let s = c(t(&[2], &[1000.0, 0.0])).softmax(0).unwrap();
    assert_eq!(s.value().data()[0], 1.0);
    assert!(s.value().data()[1] < 1e-300);

    let s = c(t(&[3], &[1.0, 2.0, 3.0])).softmax(0).unwrap();
    let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|x| x.exp()).sum();
    for (k, &v) in s.value().data().iter().enumerate() {
        assert!((v - ((k + 1) as f64).exp() / z).abs() < 1e-12);
    }
}

#[test]
fn softmax_rejects_nan() {
    let err = c(t(&[2], &[f64::NAN, 0.0])).softmax(0).unwrap_err();
    assert!(matches!(err, Error::NonFinite { op: "softmax" }));
    let all_masked = c(t(&[2], &[f64::NEG_INFINITY; 2])).softmax(0);
    assert!(all_masked.is_err());
}

#[test]
fn softmax_gives_masked_entries_zero_weight() {
    let s = c(t(&[3], &[0.0, f64::NEG_INFINITY, 0.0])).softmax(0).unwrap();
    assert_eq!(s.value().data(), &[0.5, 0.0, 0.5]);
}

#[test]
fn backward_of_sum_and_square() {
    let x = Var::leaf(rand_t(&[4], 9));
    x.sum().backward().unwrap();
    assert!(x.grad().unwrap().data().iter().all(|&g| g == 1.0));

    let x = Var::leaf(rand_t(&[5], 10));
    x.mul(&x).unwrap().sum().backward().unwrap();
    let g = x.grad().unwrap();
    for (gi, xi) in g.data().iter().zip(x.value().data()) {
        assert_eq!(*gi, 2.0 * xi);
    }
}

fn assert_grad_ok(inputs: &[DenseTensor], f: impl Fn(&[Var]) -> crate::Result<Var>) {
    let res = check_gradients(inputs, None, 1e-5, f).unwrap();
    for (k, r) in res.iter().enumerate() {
        assert!(r.rel_err < 1e-4, "input {k}: {r:?}");
    }
}

/// Contract each op's output against a fixed random weight so the check
/// exercises a non-trivial output gradient.
fn weighted(v: &Var, seed: u64) -> crate::Result<Var> {
    let w = c(rand_t(v.shape(), seed));
    Ok(v.mul(&w)?.sum())
}

#[test]
fn gradcheck_elementwise_and_broadcast() {
    let a = rand_t(&[3, 4], 1);
    let b = rand_t(&[4], 2);
    assert_grad_ok(&[a.clone(), b.clone()], |v| weighted(&v[0].add(&v[1])?, 7));
    assert_grad_ok(&[a.clone(), b.clone()], |v| weighted(&v[0].sub(&v[1])?, 7));
    assert_grad_ok(&[a.clone(), b.clone()], |v| weighted(&v[0].mul(&v[1])?, 7));
    let pos = b.map(|x| x.abs() + 0.5);
    assert_grad_ok(&[a.clone(), pos], |v| weighted(&v[0].div(&v[1])?, 7));
    let col = rand_t(&[3, 1], 3);
    assert_grad_ok(&[a.clone(), col], |v| weighted(&v[0].mul(&v[1])?, 8));
}

#[test]
fn gradcheck_unary() {
    let a = rand_t(&[2, 5], 11);
    assert_grad_ok(std::slice::from_ref(&a), |v| weighted(&v[0].exp(), 1));
    assert_grad_ok(std::slice::from_ref(&a), |v| weighted(&v[0].sigmoid(), 1));
    assert_grad_ok(std::slice::from_ref(&a), |v| weighted(&v[0].silu(), 1));
    assert_grad_ok(std::slice::from_ref(&a), |v| weighted(&v[0].softplus(), 1));
    assert_grad_ok(std::slice::from_ref(&a), |v| weighted(&v[0].square(), 1));
    assert_grad_ok(std::slice::from_ref(&a), |v| weighted(&v[0].scale(-2.5).add_scalar(1.0), 1));
    let pos = a.map(|x| x.abs() + 0.1);
    assert_grad_ok(&[pos], |v| weighted(&v[0].sqrt(), 1));
}

#[test]
fn gradcheck_reductions_and_shapes() {
    let a = rand_t(&[2, 3, 4], 12);
    assert_grad_ok(std::slice::from_ref(&a), |v| weighted(&v[0].sum_axis(1)?, 2));
    assert_grad_ok(std::slice::from_ref(&a), |v| weighted(&v[0].mean_axis(2)?, 2));
    assert_grad_ok(std::slice::from_ref(&a), |v| Ok(v[0].mean().scale(3.0)));
    assert_grad_ok(std::slice::from_ref(&a), |v| weighted(&v[0].reshape(&[6, 4])?, 2));
    assert_grad_ok(std::slice::from_ref(&a), |v| weighted(&v[0].transpose(0, 2)?, 2));
    assert_grad_ok(std::slice::from_ref(&a), |v| weighted(&v[0].slice(1, 1, 3)?, 2));
    assert_grad_ok(std::slice::from_ref(&a), |v| {
        let parts = v[0].split(2, &[1, 3])?;
        weighted(&parts[0], 3)?.add(&weighted(&parts[1], 4)?)
    });
    let b = rand_t(&[2, 2, 4], 13);
    assert_grad_ok(&[a.clone(), b], |v| weighted(&Var::concat(&[&v[0], &v[1]], 1)?, 5));
    assert_grad_ok(std::slice::from_ref(&a), |v| weighted(&v[0].index_select(&[1, 0, 1])?, 6));
    assert_grad_ok(std::slice::from_ref(&a), |v| weighted(&v[0].cumsum(1)?, 7));
}

#[test]
fn gradcheck_softmax_norm_matmul() {
    let a = rand_t(&[3, 5], 21);
    assert_grad_ok(std::slice::from_ref(&a), |v| weighted(&v[0].softmax(1)?, 1));
    assert_grad_ok(std::slice::from_ref(&a), |v| weighted(&v[0].softmax(0)?, 1));
    let s = rand_t(&[5], 22);
    assert_grad_ok(&[a.clone(), s], |v| weighted(&v[0].rms_norm(&v[1], 1e-6)?, 2));
    let b = rand_t(&[2, 5, 4], 23);
    assert_grad_ok(&[a.clone(), b], |v| weighted(&v[0].matmul(&v[1])?, 3));
}

#[test]
fn gradcheck_composite_graph() {
    let x = rand_t(&[4, 6], 31);
    let w = rand_t(&[6, 6], 32);
    let s = rand_t(&[6], 33);
    assert_grad_ok(&[x, w, s], |v| {
        let h = v[0].matmul(&v[1])?.silu();
        let n = h.rms_norm(&v[2], 1e-6)?;
        let p = n.softmax(1)?;
        p.mul(&h)?.sum().add(&v[0].exp().mean())
    });
}

#[test]
fn rms_norm_has_unit_rms_before_scale() {
    let x = rand_t(&[7, 12], 41);
    let ones = c(DenseTensor::ones(&[12]).unwrap());
    let y = c(x).rms_norm(&ones, 1e-14).unwrap();
    for row in y.value().data().chunks(12) {
        let rms = (row.iter().map(|v| v * v).sum::<f64>() / 12.0).sqrt();
        assert!((rms - 1.0).abs() < 1e-10);
    }
}

#[test]
fn cumsum_matches_sequential_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ints = DenseTensor::from_fn(&[3, 200], |_| {
        use rand::Rng;
        rng.random_range(-50i32..50) as f64
    })
    .unwrap();
    let got = c(ints.clone()).cumsum(1).unwrap();
    for r in 0..3 {
        let mut acc = 0.0;
        for k in 0..200 {
            acc += ints.get(&[r, k]).unwrap();
            assert_eq!(got.value().get(&[r, k]).unwrap(), acc);
        }
    }
}

proptest! {
    #[test]
    fn reshape_roundtrip_is_identity(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
        let x = rand_t(&[rows, cols], seed);
        let y = c(x.clone()).reshape(&[cols * rows]).unwrap().reshape(&[rows, cols]).unwrap();
        prop_assert_eq!(y.value(), &x);
    }

    #[test]
    fn softmax_rows_sum_to_one(data in prop::collection::vec(-50.0f64..50.0, 12)) {
        let s = c(t(&[3, 4], &data)).softmax(1).unwrap();
        for row in s.value().data().chunks(4) {
            prop_assert!(row.iter().all(|&p| p > 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
