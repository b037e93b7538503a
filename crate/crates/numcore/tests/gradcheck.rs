//! Central finite-difference checks of every differentiable tape operation.

use std::sync::Arc;

use numcore::{BatchNormStats, Mode, NeighborTable, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Builds `Σ r ⊙ op(inputs)` with fixed random weights `r`, compares the tape
/// gradient of every input entry with central differences.
fn check<F>(inputs: Vec<Tensor>, seed: u64, build: F)
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let weighted_loss = |inputs: &[Tensor]| -> (Tape, Vec<Var>, Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let out = build(&mut tape, &vars);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = random(tape.value(out).shape(), &mut rng);
        let r = tape.constant(r);
        let prod = tape.mul(out, r).unwrap();
        let loss = tape.sum(prod);
        (tape, vars, loss)
    };
    let (tape, vars, loss) = weighted_loss(&inputs);
    let grads = tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (which, input) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[which]);
        for e in 0..input.len() {
            let eval = |delta: f64| {
                let mut perturbed = inputs.clone();
                perturbed[which].data_mut()[e] += delta;
                let (tp, _, l) = weighted_loss(&perturbed);
                tp.value(l).data()[0]
            };
            let numeric = (eval(H) - eval(-H)) / (2.0 * H);
            let err = rel_err(analytic.data()[e], numeric);
            worst = worst.max(err);
            assert!(
                err < REL_TOL,
                "input {which} entry {e}: analytic {} numeric {numeric} (rel {err})",
                analytic.data()[e]
            );
        }
    }
    assert!(worst < REL_TOL);
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn linear_gradients() {
    let mut r = rng(1);
    let inputs = vec![random(&[5, 3], &mut r), random(&[3, 4], &mut r), random(&[4], &mut r)];
    check(inputs, 11, |t, v| t.linear(v[0], v[1], Some(v[2])).unwrap());
}

#[test]
fn leaky_relu_gradients() {
    let mut r = rng(2);
    check(vec![random(&[4, 6], &mut r)], 12, |t, v| t.leaky_relu(v[0], 0.2).unwrap());
}

#[test]
fn batch_norm_gradients_both_modes() {
    let mut r = rng(3);
    let inputs = vec![random(&[7, 3], &mut r), random(&[3], &mut r), random(&[3], &mut r)];
    check(inputs.clone(), 13, |t, v| {
        let mut stats = BatchNormStats::new(3);
        t.batch_norm_points(v[0], v[1], v[2], &mut stats, Mode::Train).unwrap()
    });
    check(inputs, 14, |t, v| {
        let mut stats = BatchNormStats::new(3);
        stats.running_mean = vec![0.1, -0.2, 0.3];
        stats.running_var = vec![0.5, 2.0, 1.5];
        t.batch_norm_points(v[0], v[1], v[2], &mut stats, Mode::Eval).unwrap()
    });
}

#[test]
fn softmax_gradients() {
    let mut r = rng(4);
    check(vec![random(&[6, 3], &mut r)], 15, |t, v| t.softmax_over_points(v[0]).unwrap());
}

#[test]
fn max_pool_gradients() {
    let mut r = rng(5);
    check(vec![random(&[4, 3, 5], &mut r)], 16, |t, v| t.neighbor_max_pool(v[0]).unwrap());
}

#[test]
fn concat_and_elementwise_gradients() {
    let mut r = rng(6);
    let inputs = vec![random(&[3, 2], &mut r), random(&[3, 4], &mut r), random(&[3, 2], &mut r)];
    check(inputs, 17, |t, v| {
        let c = t.concat_features(&[v[0], v[1]]).unwrap();
        let d = t.sub(v[0], v[2]).unwrap();
        let e = t.mul(d, v[2]).unwrap();
        let f = t.add(e, v[0]).unwrap();
        let s = t.square(f);
        t.concat_features(&[c, s]).unwrap()
    });
}

fn random_neighbors(n: usize, k: usize, r: &mut ChaCha8Rng) -> Arc<NeighborTable> {
    let idx = (0..n * k).map(|_| r.random_range(0..n as u32)).collect();
    Arc::new(NeighborTable::new(n, k, idx).unwrap())
}

#[test]
fn edge_features_and_matmul_tn_gradients() {
    let mut r = rng(7);
    let nb = random_neighbors(5, 3, &mut r);
    check(vec![random(&[5, 2], &mut r)], 18, move |t, v| {
        let e = t.edge_features(v[0], nb.clone()).unwrap();
        t.reshape(e, vec![15, 4]).unwrap()
    });
    let inputs = vec![random(&[6, 3], &mut r), random(&[6, 2], &mut r)];
    check(inputs, 19, |t, v| t.matmul_tn(v[0], v[1]).unwrap());
}

#[test]
fn fused_edge_conv_gradients() {
    let mut r = rng(8);
    let nb = random_neighbors(6, 3, &mut r);
    let inputs = vec![
        random(&[6, 2], &mut r),
        random(&[4, 5], &mut r),
        random(&[5], &mut r),
        random(&[5], &mut r),
    ];
    for mode in [Mode::Train, Mode::Eval] {
        let nb = nb.clone();
        check(inputs.clone(), 20, move |t, v| {
            let mut stats = BatchNormStats::new(5);
            stats.running_mean = vec![0.1, 0.0, -0.1, 0.2, 0.0];
            stats.running_var = vec![1.0, 0.5, 2.0, 1.0, 0.7];
            t.edge_conv(v[0], nb.clone(), v[1], v[2], v[3], &mut stats, mode, 0.2)
                .unwrap()
        });
    }
}

/// The fused kernel must agree with the explicit composition of the
/// primitive operations, in value, gradients and running statistics.
#[test]
fn fused_edge_conv_matches_composition() {
    let mut r = rng(9);
    let (n, k, f, fo) = (24, 5, 4, 7);
    let nb = random_neighbors(n, k, &mut r);
    let x = random(&[n, f], &mut r);
    let w = random(&[2 * f, fo], &mut r);
    let gamma = random(&[fo], &mut r);
    let beta = random(&[fo], &mut r);
    for mode in [Mode::Train, Mode::Eval] {
        let mut stats_a = BatchNormStats::new(fo);
        stats_a.running_var = vec![1.3; fo];
        let mut stats_b = stats_a.clone();

        let mut ta = Tape::new();
        let va: Vec<Var> = [&x, &w, &gamma, &beta].iter().map(|t| ta.param((*t).clone())).collect();
        let fused = ta
            .edge_conv(va[0], nb.clone(), va[1], va[2], va[3], &mut stats_a, mode, 0.2)
            .unwrap();

        let mut tb = Tape::new();
        let vb: Vec<Var> = [&x, &w, &gamma, &beta].iter().map(|t| tb.param((*t).clone())).collect();
        let e = tb.edge_features(vb[0], nb.clone()).unwrap();
        let flat = tb.reshape(e, vec![n * k, 2 * f]).unwrap();
        let z = tb.linear(flat, vb[1], None).unwrap();
        let y = tb.batch_norm_points(z, vb[2], vb[3], &mut stats_b, mode).unwrap();
        let a = tb.leaky_relu(y, 0.2).unwrap();
        let a3 = tb.reshape(a, vec![n, k, fo]).unwrap();
        let composed = tb.neighbor_max_pool(a3).unwrap();

        for (p, q) in ta.value(fused).data().iter().zip(tb.value(composed).data()) {
            assert!((p - q).abs() < 1e-12, "{mode:?}: {p} vs {q}");
        }
        for (p, q) in stats_a.running_mean.iter().zip(&stats_b.running_mean) {
            assert!((p - q).abs() < 1e-12);
        }
        for (p, q) in stats_a.running_var.iter().zip(&stats_b.running_var) {
            assert!((p - q).abs() < 1e-12);
        }

        let rw = random(&[n, fo], &mut r);
        let ra = ta.constant(rw.clone());
        let rb = tb.constant(rw);
        let la = ta.mul(fused, ra).unwrap();
        let la = ta.sum(la);
        let lb = tb.mul(composed, rb).unwrap();
        let lb = tb.sum(lb);
        let ga = ta.backward(la).unwrap();
        let gb = tb.backward(lb).unwrap();
        for i in 0..4 {
            let (p, q) = (ga.wrt(va[i]), gb.wrt(vb[i]));
            for (a, b) in p.data().iter().zip(q.data()) {
                assert!((a - b).abs() < 1e-10, "{mode:?} input {i}: {a} vs {b}");
            }
        }
    }
}
