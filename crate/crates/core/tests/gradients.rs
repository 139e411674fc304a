//! Finite-difference checks of every differentiable primitive and of the
//! full pretraining and finetuning objectives.

use speechssl::rng::CounterRng;
use speechssl::tensor::gradcheck::check_gradients;
use speechssl::tensor::{Bound, ParamStore, Tape, Tensor, Var};
use speechssl::Result;

mod common;
use common::{agrees, ctc_toy_reports, ssl_toy_reports, GRAD_H};

const SEEDS: u64 = 20;

fn random(shape: &[usize], rng: &mut CounterRng, positive: bool) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| if positive { 0.3 + rng.uniform() * 1.5 } else { rng.normal() }).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Sum of the op output weighted by fixed random coefficients.
fn weighted_sum(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let w = random(&shape, &mut CounterRng::new(seed ^ 0xABCD), false);
    let w = tape.constant(w);
    let p = tape.mul(out, w)?;
    tape.sum(p, None)
}

fn check_op(
    label: &str,
    inputs: &dyn Fn(&mut CounterRng) -> Vec<(String, Tensor<f64>)>,
    op: &dyn Fn(&mut Tape<f64>, &Bound, &mut CounterRng) -> Result<Var>,
) {
    for seed in 0..SEEDS {
        let mut rng = CounterRng::new(seed);
        let mut params = ParamStore::new();
        for (name, t) in inputs(&mut rng) {
            params.insert(name, t);
        }
        let reports = check_gradients(
            &params,
            |_| true,
            |tape, b| {
                let mut r = CounterRng::new(seed + 1000);
                let out = op(tape, b, &mut r)?;
                weighted_sum(tape, out, seed)
            },
            GRAD_H,
            64,
        )
        .unwrap();
        for r in reports {
            assert!(agrees(&r), "{label} seed {seed} input {}: rel err {} abs err {}", r.name, r.rel_err, r.abs_err);
        }
    }
}

fn dims(rng: &mut CounterRng) -> (usize, usize, usize) {
    (1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(8))
}

#[test]
fn matmul_and_transpose() {
    check_op(
        "matmul",
        &|r| {
            let (m, k, n) = dims(r);
            vec![("a".into(), random(&[m, k], r, false)), ("b".into(), random(&[k, n], r, false))]
        },
        &|t, b, _| {
            let a = b.get("a")?;
            let bt = b.get("b")?;
            let y = t.matmul(a, bt)?;
            t.transpose(y)
        },
    );
}

#[test]
fn elementwise_with_broadcast() {
    check_op(
        "add/sub/mul",
        &|r| {
            let (m, _, n) = dims(r);
            vec![
                ("a".into(), random(&[m, n], r, false)),
                ("row".into(), random(&[1, n], r, false)),
                ("col".into(), random(&[m, 1], r, false)),
            ]
        },
        &|t, b, _| {
            let (a, row, col) = (b.get("a")?, b.get("row")?, b.get("col")?);
            let x = t.add(a, row)?;
            let y = t.mul(x, col)?;
            let z = t.sub(y, row)?;
            t.scale(z, 0.7)
        },
    );
}

#[test]
fn exp_log_xlogx() {
    check_op(
        "exp/log/xlogx",
        &|r| {
            let (m, _, n) = dims(r);
            vec![("p".into(), random(&[m, n], r, true))]
        },
        &|t, b, _| {
            let p = b.get("p")?;
            let e = t.exp(p)?;
            let l = t.log(p)?;
            let x = t.xlogx(p)?;
            let s = t.add(e, l)?;
            t.add(s, x)
        },
    );
}

#[test]
fn conv1d_with_stride_and_padding() {
    check_op(
        "conv1d",
        &|r| {
            let (cin, cout, len) = dims(r);
            let k = 1 + r.below(3);
            vec![
                ("x".into(), random(&[cin, len + k], r, false)),
                ("w".into(), random(&[cout, cin, k], r, false)),
                ("b".into(), random(&[cout], r, false)),
            ]
        },
        &|t, b, r| {
            let stride = 1 + r.below(2);
            let pad = r.below(2);
            t.conv1d(b.get("x")?, b.get("w")?, Some(b.get("b")?), stride, pad)
        },
    );
}

#[test]
fn normalizations_and_gelu() {
    check_op(
        "layer_norm/group_norm/gelu",
        &|r| {
            let (m, _, n) = dims(r);
            let n = n.max(2);
            vec![
                ("x".into(), random(&[m, n], r, false)),
                ("g".into(), random(&[n], r, false)),
                ("b".into(), random(&[n], r, false)),
                ("cg".into(), random(&[m], r, false)),
                ("cb".into(), random(&[m], r, false)),
            ]
        },
        &|t, b, _| {
            let x = b.get("x")?;
            let ln = t.layer_norm(x, b.get("g")?, b.get("b")?, 1e-5)?;
            let shape = t.shape(x).to_vec();
            let gn = t.group_norm(x, shape[0], b.get("cg")?, b.get("cb")?, 1e-5)?;
            let s = t.add(ln, gn)?;
            t.gelu(s)
        },
    );
}

#[test]
fn softmax_family() {
    check_op(
        "softmax/log_softmax",
        &|r| {
            let (m, _, n) = dims(r);
            vec![("x".into(), random(&[m, n], r, false))]
        },
        &|t, b, r| {
            let x = b.get("x")?;
            let axis = r.below(2);
            let s = t.softmax(x, axis)?;
            let l = t.log_softmax(x, 1 - axis)?;
            t.add(s, l)
        },
    );
}

#[test]
fn reductions_reshape_concat_slice() {
    check_op(
        "sum/mean/reshape/concat/slice",
        &|r| {
            let (m, k, n) = dims(r);
            vec![("x".into(), random(&[m, k, n], r, false)), ("y".into(), random(&[m, k, n], r, false))]
        },
        &|t, b, r| {
            let (x, y) = (b.get("x")?, b.get("y")?);
            let s = t.shape(x).to_vec();
            let axis = r.below(3);
            let c = t.concat(&[x, y], axis)?;
            let cut = 1 + r.below(s[axis] * 2 - 1);
            let sl = t.slice(c, axis, 0, cut)?;
            let red = t.sum(sl, Some(axis))?;
            let flat: usize = t.shape(red).iter().product();
            let re = t.reshape(red, &[flat])?;
            let m = t.mean(x, None)?;
            let m = t.reshape(m, &[1])?;
            t.add(re, m)
        },
    );
}

#[test]
fn gather_and_cosine() {
    check_op(
        "gather_rows/cosine_similarity",
        &|r| {
            let (m, _, n) = dims(r);
            vec![("table".into(), random(&[m + 1, n], r, false)), ("other".into(), random(&[3, n], r, false))]
        },
        &|t, b, r| {
            let table = b.get("table")?;
            let rows = t.shape(table)[0];
            let idx: Vec<usize> = (0..3).map(|_| r.below(rows)).collect();
            let g = t.gather_rows(table, &idx)?;
            t.cosine_similarity(g, b.get("other")?, 1, 1e-8)
        },
    );
}

#[test]
fn pretraining_objective_matches_finite_differences() {
    for seed in 0..3 {
        let t = std::time::Instant::now();
        let reports = ssl_toy_reports(seed);
        for prefix in ["quantizer.logits", "quantizer.codebook", "context.block", "encoder", "ssl.final_proj", "mask_emb"] {
            assert!(reports.iter().any(|r| r.name.starts_with(prefix)), "no report for {prefix}");
        }
        for r in &reports {
            assert!(agrees(r), "seed {seed} {}: {}", r.name, r.rel_err);
        }
        assert!(t.elapsed().as_secs_f64() < 5.0);
    }
}

#[test]
fn ctc_head_matches_finite_differences() {
    for seed in 0..3 {
        let reports = ctc_toy_reports(seed);
        assert!(reports.iter().any(|r| r.name.starts_with("asr.head")));
        for r in &reports {
            assert!(agrees(r), "seed {seed} {}: {}", r.name, r.rel_err);
        }
    }
}
