use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::gradcheck::check_gradients;
use crate::tensor::{no_grad, DenseTensor};

fn rand_t(shape: &[usize], seed: u64) -> DenseTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DenseTensor::uniform(shape, -1.0, 1.0, &mut rng).unwrap()
}

fn c(x: DenseTensor) -> Var {
    Var::constant(x)
}

fn coords(n: usize) -> Vec<PatchCoord> {
    (0..n).map(|i| PatchCoord::new(i / 6, (i / 2) % 3, i % 2)).collect()
}

#[test]
fn prepend_meta_order_and_gradient() {
    let x = rand_t(&[3, 6], 1);
    assert_eq!(prepend_meta(&c(x.clone()), None).unwrap().value(), &x);
    let r = rand_t(&[2, 6], 2);
    let y = prepend_meta(&c(x.clone()), Some(&c(r.clone()))).unwrap();
    assert_eq!(y.shape(), &[5, 6]);
    assert_eq!(&y.value().data()[..12], r.data());
    assert_eq!(&y.value().data()[12..], x.data());
    assert!(prepend_meta(&c(x.clone()), Some(&c(rand_t(&[2, 4], 3)))).is_err());

    let w = rand_t(&[5, 6], 4);
    let res = check_gradients(&[r], None, 1e-5, |v| {
        Ok(prepend_meta(&c(x.clone()), Some(&v[0]))?.mul(&c(w.clone()))?.square().sum())
    })
    .unwrap();
    assert!(res[0].rel_err < 1e-8, "{res:?}");
}

#[test]
fn split_projection_examples() {
    let (a, s) = (4, 4);
    let width = 3 * a + 2 * s;
    let x = c(rand_t(&[3, width], 5));
    let zw = c(DenseTensor::zeros(&[width, width]).unwrap());
    let zb = c(DenseTensor::zeros(&[width]).unwrap());
    let p = split_projection(&x, &zw, &zb, a, s).unwrap();
    for part in [&p.q, &p.k, &p.v, &p.x_ssm, &p.gate] {
        assert!(part.value().data().iter().all(|&v| v == 0.0));
    }

    let eye = c(DenseTensor::eye(width).unwrap());
    let p = split_projection(&x, &eye, &zb, a, s).unwrap();
    for (k, part) in [&p.q, &p.k, &p.v, &p.x_ssm, &p.gate].into_iter().enumerate() {
        assert_eq!(part.value(), x.slice(1, 4 * k, 4 * k + 4).unwrap().value());
    }

    let w = rand_t(&[width, width], 6);
    let b = rand_t(&[width], 7);
    let p = split_projection(&x, &c(w.clone()), &c(b.clone()), a, s).unwrap();
    for (k, part) in [&p.q, &p.k, &p.v, &p.x_ssm, &p.gate].into_iter().enumerate() {
        let wk = c(w.clone()).slice(1, 4 * k, 4 * k + 4).unwrap();
        let bk = c(b.clone()).slice(0, 4 * k, 4 * k + 4).unwrap();
        let expect = x.matmul(&wk).unwrap().add(&bk).unwrap();
        assert!(part.value().max_abs_diff(expect.value()).unwrap() < 1e-12);
    }
    assert!(split_projection(&x, &c(rand_t(&[width, 19], 1)), &c(rand_t(&[19], 1)), a, s).is_err());
}

/// Full attention per head with an explicit `-inf` mask.
fn masked_full_attention(q: &DenseTensor, k: &DenseTensor, v: &DenseTensor, spec: AttentionSpec) -> DenseTensor {
    let t = q.shape()[0];
    let dk = spec.head_dim;
    let mut mask = DenseTensor::full(&[t, t], f64::NEG_INFINITY).unwrap();
    for i in 0..t {
        for j in 0..t {
            let visible = if i < spec.n_meta || j < spec.n_meta {
                true
            } else {
                let band = spec.window.is_none_or(|w| i.abs_diff(j) <= w);
                band && (!spec.causal || j <= i)
            };
            if visible {
                mask.set(&[i, j], 0.0).unwrap();
            }
        }
    }
    let mut heads = Vec::new();
    for h in 0..spec.heads {
        let qh = c(q.clone()).slice(1, h * dk, (h + 1) * dk).unwrap();
        let kh = c(k.clone()).slice(1, h * dk, (h + 1) * dk).unwrap();
        let vh = c(v.clone()).slice(1, h * dk, (h + 1) * dk).unwrap();
        let scores = qh
            .matmul(&kh.t().unwrap())
            .unwrap()
            .scale(1.0 / (dk as f64).sqrt())
            .add(&c(mask.clone()))
            .unwrap();
        heads.push(scores.softmax(1).unwrap().matmul(&vh).unwrap());
    }
    let refs: Vec<&Var> = heads.iter().collect();
    Var::concat(&refs, 1).unwrap().value().clone()
}

fn spec(window: Option<usize>, n_meta: usize, causal: bool) -> AttentionSpec {
    AttentionSpec {
        heads: 2,
        head_dim: 3,
        n_meta,
        window,
        causal,
    }
}

#[test]
fn wide_window_equals_full_attention() {
    let (q, k, v) = (rand_t(&[10, 6], 1), rand_t(&[10, 6], 2), rand_t(&[10, 6], 3));
    for m in [0, 2] {
        let full = windowed_attention(&c(q.clone()), &c(k.clone()), &c(v.clone()), spec(None, m, false)).unwrap();
        let wide = windowed_attention(&c(q.clone()), &c(k.clone()), &c(v.clone()), spec(Some(10), m, false)).unwrap();
        assert!(full.value().max_abs_diff(wide.value()).unwrap() <= 1e-12);
    }
}

#[test]
fn zero_values_give_zero_output() {
    let (q, k) = (rand_t(&[7, 6], 1), rand_t(&[7, 6], 2));
    let v = DenseTensor::zeros(&[7, 6]).unwrap();
    let y = windowed_attention(&c(q), &c(k), &c(v), spec(Some(1), 1, false)).unwrap();
    assert!(y.value().data().iter().all(|&x| x == 0.0));
}

#[test]
fn band_matches_masked_full_attention() {
    let (q, k, v) = (rand_t(&[16, 6], 4), rand_t(&[16, 6], 5), rand_t(&[16, 6], 6));
    for s in [
        spec(Some(2), 0, false),
        spec(Some(2), 3, false),
        spec(Some(2), 3, true),
        spec(None, 2, true),
    ] {
        let got = windowed_attention(&c(q.clone()), &c(k.clone()), &c(v.clone()), s).unwrap();
        let want = masked_full_attention(&q, &k, &v, s);
        assert!(got.value().max_abs_diff(&want).unwrap() <= 1e-12, "{s:?}");
    }
}

#[test]
fn attention_rows_sum_to_one() {
    let (q, k) = (rand_t(&[12, 6], 7), rand_t(&[12, 6], 8));
    for s in [spec(Some(1), 3, false), spec(Some(3), 2, true), spec(None, 0, false)] {
        for w in attention_weights(&q, &k, s).unwrap() {
            for row in w.data().chunks(12) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            }
        }
    }
    // Meta queries see every key; sequence queries see every meta key.
    let w = &attention_weights(&q, &k, spec(Some(1), 3, false)).unwrap()[0];
    assert!(w.data()[..12].iter().all(|&p| p > 0.0));
    assert!(w.get(&[11, 0]).unwrap() > 0.0);
    assert_eq!(w.get(&[11, 5]).unwrap(), 0.0);
}

#[test]
fn attention_gradient() {
    let inputs = [rand_t(&[9, 6], 9), rand_t(&[9, 6], 10), rand_t(&[9, 6], 11)];
    let w = rand_t(&[9, 6], 12);
    for s in [spec(Some(2), 2, false), spec(None, 1, true)] {
        let res = check_gradients(&inputs, None, 1e-5, |v| {
            Ok(windowed_attention(&v[0], &v[1], &v[2], s)?.mul(&c(w.clone()))?.sum())
        })
        .unwrap();
        for r in res {
            assert!(r.rel_err < 1e-6, "{r:?}");
        }
    }
}

struct ScanInputs {
    x: DenseTensor,
    dt: DenseTensor,
    decay: DenseTensor,
    b: DenseTensor,
    c: DenseTensor,
    skip: DenseTensor,
}

fn scan_inputs(t: usize, s: usize, h: usize, n: usize, seed: u64) -> ScanInputs {
    ScanInputs {
        x: rand_t(&[t, s], seed),
        dt: rand_t(&[t, h], seed + 1).map(|v| 0.05 + 0.05 * v.abs()),
        decay: rand_t(&[t, h], seed + 2).map(|v| 0.5 + 0.49 * v),
        b: rand_t(&[t, n], seed + 3),
        c: rand_t(&[t, n], seed + 4),
        skip: rand_t(&[s], seed + 5),
    }
}

fn run_scan(i: &ScanInputs) -> DenseTensor {
    selective_scan(&c(i.x.clone()), &c(i.dt.clone()), &c(i.decay.clone()), &c(i.b.clone()), &c(i.c.clone()), &c(i.skip.clone()))
        .unwrap()
        .value()
        .clone()
}

fn sequential_scan(i: &ScanInputs) -> DenseTensor {
    let (t, s) = (i.x.shape()[0], i.x.shape()[1]);
    let (h, n) = (i.dt.shape()[1], i.b.shape()[1]);
    let per = s / h;
    let mut state = vec![0.0; s * n];
    let mut y = DenseTensor::zeros(&[t, s]).unwrap();
    for ti in 0..t {
        for p in 0..s {
            let head = p / per;
            let a = i.decay.get(&[ti, head]).unwrap();
            let dt = i.dt.get(&[ti, head]).unwrap();
            let xv = i.x.get(&[ti, p]).unwrap();
            let mut acc = i.skip.data()[p] * xv;
            for m in 0..n {
                let st = &mut state[p * n + m];
                *st = a * *st + dt * xv * i.b.get(&[ti, m]).unwrap();
                acc += i.c.get(&[ti, m]).unwrap() * *st;
            }
            y.set(&[ti, p], acc).unwrap();
        }
    }
    y
}

#[test]
fn scan_matches_sequential_recurrence() {
    for (t, seed) in [(1, 1), (64, 2), (300, 3)] {
        let i = scan_inputs(t, 6, 2, 4, seed);
        assert!(run_scan(&i).max_abs_diff(&sequential_scan(&i)).unwrap() <= 1e-10);
    }
}

#[test]
fn scan_trivial_cases() {
    let mut i = scan_inputs(20, 4, 2, 3, 9);
    i.decay = DenseTensor::zeros(&[20, 2]).unwrap();
    let y = run_scan(&i);
    for ti in 0..20 {
        for p in 0..4 {
            let head = p / 2;
            let xv = i.x.get(&[ti, p]).unwrap();
            let mut want = i.skip.data()[p] * xv;
            for m in 0..3 {
                want += i.c.get(&[ti, m]).unwrap() * i.dt.get(&[ti, head]).unwrap() * xv * i.b.get(&[ti, m]).unwrap();
            }
            assert!((y.get(&[ti, p]).unwrap() - want).abs() < 1e-14);
        }
    }
    let mut i = scan_inputs(20, 4, 2, 3, 10);
    i.x = DenseTensor::zeros(&[20, 4]).unwrap();
    assert!(run_scan(&i).data().iter().all(|&v| v == 0.0));
}

#[test]
fn unstable_decay_is_clamped() {
    let mut i = scan_inputs(50, 2, 1, 2, 11);
    i.decay = DenseTensor::full(&[50, 1], 1.5).unwrap();
    let y = run_scan(&i);
    let mut clamped = i;
    clamped.decay = DenseTensor::full(&[50, 1], MAX_DECAY).unwrap();
    assert!(y.all_finite());
    assert_eq!(y, sequential_scan(&clamped));
}

#[test]
fn scan_gradient() {
    let i = scan_inputs(12, 4, 2, 3, 12);
    let w = rand_t(&[12, 4], 13);
    let res = check_gradients(
        &[i.x, i.dt, i.decay, i.b, i.c, i.skip],
        None,
        1e-5,
        |v| Ok(selective_scan(&v[0], &v[1], &v[2], &v[3], &v[4], &v[5])?.mul(&c(w.clone()))?.sum()),
    )
    .unwrap();
    for (k, r) in res.iter().enumerate() {
        assert!(r.rel_err < 1e-6, "input {k}: {r:?}");
    }
}

fn toy_stack(kind: StackKind) -> (StackSpec, ParamStore) {
    let cfg = HymbaConfig::toy();
    let spec = cfg.encoder_stack(kind);
    let mut store = ParamStore::new();
    spec.init(&mut store, "enc", &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    (spec, store)
}

#[test]
fn gate_annihilation_and_zero_branches() {
    let x = c(rand_t(&[5, 6], 1));
    let ya = c(rand_t(&[5, 4], 2));
    let ys = c(rand_t(&[5, 4], 3));
    let ones = c(DenseTensor::ones(&[4]).unwrap());
    let w = c(rand_t(&[4, 6], 4));
    let closed = c(DenseTensor::full(&[5, 4], -1e4).unwrap());
    let got = gated_fuse(&ya, &ys, &closed, &ones, &ones, &w, &x, 1e-6).unwrap();
    let attn_only = x.add(&ya.rms_norm(&ones, 1e-6).unwrap().matmul(&w).unwrap()).unwrap();
    assert!(got.value().max_abs_diff(attn_only.value()).unwrap() < 1e-12);

    let zero = c(DenseTensor::zeros(&[5, 4]).unwrap());
    let got = gated_fuse(&zero, &zero, &ys, &ones, &ones, &w, &x, 1e-6).unwrap();
    assert_eq!(got.value(), x.value());
    assert!(gated_fuse(&ya, &c(rand_t(&[5, 3], 1)), &ys, &ones, &ones, &w, &x, 1e-6).is_err());
}

#[test]
fn full_block_gradient() {
    let (spec, store) = toy_stack(StackKind::Hybrid);
    let names: Vec<String> = store.names().map(String::from).collect();
    let n_meta = 2;
    let crd = coords(6);
    let x0 = rand_t(&[n_meta + 6, 24], 21);
    let w = rand_t(&[n_meta + 6, 24], 22);
    let mut inputs: Vec<DenseTensor> = names.iter().map(|n| store.get(n).unwrap().clone()).collect();
    inputs.push(x0);
    let entries: Vec<Vec<usize>> = inputs
        .iter()
        .map(|t| (0..t.len()).step_by((t.len() / 7).max(1)).collect())
        .collect();
    let res = check_gradients(&inputs, Some(&entries), 1e-5, |v| {
        let bound = Bound::from_vars(names.iter().cloned().zip(v.iter().cloned()));
        let y = spec.forward(&bound, "enc", v.last().unwrap(), n_meta, &crd)?;
        Ok(y.mul(&c(w.clone()))?.sum())
    })
    .unwrap();
    for (name, r) in names.iter().chain(["input".to_string()].iter()).zip(&res) {
        assert!(r.rel_err < 1e-4, "{name}: {r:?}");
    }
}

#[test]
fn encoder_depth_zero_is_identity() {
    let mut spec = HymbaConfig::toy().encoder_stack(StackKind::Hybrid);
    spec.depth = 0;
    let x = c(rand_t(&[4, 24], 1));
    let y = spec.forward(&ParamStore::new().bind_const(), "enc", &x, 2, &coords(2)).unwrap();
    assert_eq!(y.value(), x.value());
}

#[test]
fn saturated_window_equals_full_stack() {
    let (mut spec, store) = toy_stack(StackKind::Hybrid);
    let p = store.bind_const();
    let x = c(rand_t(&[2 + 9, 24], 5));
    spec.window = 64;
    spec.full_layers.clear();
    let windowed = spec.forward(&p, "enc", &x, 2, &coords(9)).unwrap();
    spec.full_layers = [0, 1].into_iter().collect();
    let full = spec.forward(&p, "enc", &x, 2, &coords(9)).unwrap();
    assert!(windowed.value().max_abs_diff(full.value()).unwrap() <= 1e-12);
}

#[test]
fn encoder_outputs_stay_finite() {
    let (spec, store) = toy_stack(StackKind::Hybrid);
    let (aspec, astore) = toy_stack(StackKind::Attention);
    let (p, ap) = (store.bind_const(), astore.bind_const());
    no_grad(|| {
        for seed in 0..1000u64 {
            let t = 1 + (seed as usize % 12);
            let x = rand_t(&[2 + t, 24], seed).map(|v| v * 10.0);
            let x = c(x);
            let y = spec.forward(&p, "enc", &x, 2, &coords(t)).unwrap();
            assert!(y.value().all_finite(), "seed {seed}");
            if seed % 50 == 0 {
                assert!(aspec.forward(&ap, "enc", &x, 2, &coords(t)).unwrap().value().all_finite());
            }
        }
    });
}

#[test]
fn config_validation() {
    assert!(HymbaConfig::toy().validate().is_ok());
    assert!(HymbaConfig::default().validate().is_ok());
    let bad = HymbaConfig {
        dim: 25,
        ..HymbaConfig::toy()
    };
    assert!(bad.validate().is_err());
    let bad = HymbaConfig {
        full_attn_layers: Some(vec![2]),
        ..HymbaConfig::toy()
    };
    assert!(bad.validate().is_err());
    let spec = HymbaConfig {
        depth: 20,
        ..HymbaConfig::default()
    }
    .encoder_stack(StackKind::Hybrid);
    assert_eq!(spec.full_layers.into_iter().collect::<Vec<_>>(), vec![0, 10, 19]);
}

#[test]
fn attention_baseline_roughly_matches_parameter_count() {
    let cfg = HymbaConfig::default();
    let count = |kind| {
        let mut s = ParamStore::new();
        cfg.encoder_stack(kind).init(&mut s, "enc", &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        s.num_scalars() as f64
    };
    let ratio = count(StackKind::Attention) / count(StackKind::Hybrid);
    assert!((0.85..1.15).contains(&ratio), "{ratio}");
}
