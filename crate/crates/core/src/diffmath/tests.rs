use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

#[test]
fn square_derivative() {
    let tape = Tape::new();
    let x = tape.param(Tensor::scalar(3.0));
    let g = x.mul(x).backward().unwrap();
    assert_eq!(g.get(x).item(), 6.0);
}

#[test]
fn tanh_derivative_at_zero() {
    let tape = Tape::new();
    let x = tape.param(Tensor::scalar(0.0));
    let g = x.tanh().backward().unwrap();
    assert_eq!(g.get(x).item(), 1.0);
}

#[test]
fn backward_rejects_non_scalar_root() {
    let tape = Tape::new();
    let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
    let err = x.relu().backward().err().unwrap();
    assert!(err.to_string().contains("backward requires scalar"));
}

#[test]
fn constants_never_accumulate_and_unreachable_nodes_are_zero() {
    let tape = Tape::new();
    let c = tape.constant(Tensor::vector(vec![1.0, 2.0]));
    let x = tape.param(Tensor::vector(vec![3.0, 4.0]));
    let unused = tape.param(Tensor::vector(vec![5.0]));
    let y = c.mul(x).sum();
    let g = y.backward().unwrap();
    assert_eq!(g.get(x).data(), &[1.0, 2.0]);
    assert_eq!(g.get(c).data(), &[0.0, 0.0]);
    assert_eq!(g.get(unused).data(), &[0.0]);
}

#[test]
fn fan_out_accumulates() {
    // f = x*x + 3x at x=2 -> f' = 2x + 3 = 7
    let tape = Tape::new();
    let x = tape.param(Tensor::scalar(2.0));
    let y = x.mul(x).add(x.scale(3.0));
    assert_eq!(y.backward().unwrap().get(x).item(), 7.0);
}

#[test]
fn cross_entropy_values() {
    let tape = Tape::new();
    let ce = |l: [f64; 2]| tape.constant(Tensor::vector(l.to_vec())).cross_entropy(0).unwrap().item();
    assert!((ce([0.0, 0.0]) - std::f64::consts::LN_2).abs() < 1e-15);
    assert!(ce([100.0, 0.0]).abs() < 1e-40);
    assert!((ce([1.0, 0.0]) - 0.313_261_687_518_222_8).abs() < 1e-12);
    let err = tape.constant(Tensor::vector(vec![0.0, 0.0])).cross_entropy(2);
    assert!(err.is_err());
}

#[test]
fn cross_entropy_uniform_is_ln_k() {
    let tape = Tape::new();
    for k in 1..10 {
        let v = tape.constant(Tensor::full(&[k], 0.3)).cross_entropy(k / 2).unwrap().item();
        assert!((v - (k as f64).ln()).abs() < 1e-12);
    }
}

#[test]
fn clip_examples() {
    let mut g = GradMap::new();
    g.insert("a".into(), Tensor::vector(vec![1.0, 2.0]));
    let out = clip_global_norm(g.clone(), 30.0).unwrap();
    assert_eq!(out, g);

    let mut g = GradMap::new();
    g.insert("a".into(), Tensor::vector(vec![30.0, 40.0]));
    let out = clip_global_norm(g, 30.0).unwrap();
    assert_eq!(out["a"].data(), &[18.0, 24.0]);

    let mut g = GradMap::new();
    g.insert("a".into(), Tensor::zeros(&[3]));
    assert_eq!(clip_global_norm(g.clone(), 30.0).unwrap(), g);
    assert!(clip_global_norm(GradMap::new(), 30.0).unwrap().is_empty());
    assert!(clip_global_norm(GradMap::new(), 0.0).is_err());
}

fn single(name: &str, v: f64) -> GradMap {
    let mut m = GradMap::new();
    m.insert(name.into(), Tensor::scalar(v));
    m
}

#[test]
fn adamw_examples() {
    let mut p = single("w", 0.7);
    let mut st = OptimizerState::new(0.001, 0.0);
    adamw_step(&mut p, &single("w", 0.0), &mut st).unwrap();
    assert_eq!(p["w"].item(), 0.7);
    assert_eq!(st.t, 1);

    let mut p = single("w", 1.0);
    let mut st = OptimizerState::new(0.001, 0.01);
    adamw_step(&mut p, &single("w", 0.0), &mut st).unwrap();
    assert!((p["w"].item() - 0.99999).abs() < 1e-15);

    let mut p = single("w", 0.0);
    let mut st = OptimizerState::new(0.001, 0.0);
    adamw_step(&mut p, &single("w", 1.0), &mut st).unwrap();
    assert!((p["w"].item() + 0.001).abs() < 1e-10);
    assert_eq!(st.first_moment("w").unwrap().shape(), p["w"].shape());

    let mut bad = GradMap::new();
    bad.insert("w".into(), Tensor::zeros(&[2]));
    assert!(adamw_step(&mut p, &bad, &mut st).is_err());
    assert_eq!(st.t, 1);
}

#[test]
fn adamw_is_reproducible() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = GradMap::new();
        p.insert("a".into(), rand_tensor(&mut rng, &[4, 3]));
        let mut st = OptimizerState::new(0.01, 0.01);
        for _ in 0..20 {
            let mut g = GradMap::new();
            g.insert("a".into(), rand_tensor(&mut rng, &[4, 3]));
            adamw_step(&mut p, &g, &mut st).unwrap();
        }
        p["a"].data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

/// Builds a random three-layer composite touching most ops and returns the
/// scalar loss for the given flat parameter vector.
struct Composite {
    x: Tensor,
    shapes: Vec<Vec<usize>>,
    label: usize,
}

impl Composite {
    fn eval<'t>(&self, tape: &'t Tape, params: &[Tensor]) -> (Value<'t>, Vec<Value<'t>>) {
        let ps: Vec<Value> = params.iter().map(|p| tape.param(p.clone())).collect();
        let x = tape.constant(self.x.clone());
        // conv block on [2, 6, 6, 2]
        let h = x.conv2d(ps[0], ps[1], 2, 1).tanh();
        let pooled = h.mean_spatial(); // [2, 3]
        let l1 = pooled.matmul(ps[2]).add_row(ps[3]).relu(); // [2, 4]
        let agg = l1.max_rows(); // [4]
        let extra = Value::concat(&[agg, ps[4]]); // [6]
        let sm = extra.reshape(&[1, 6]).softmax().reshape(&[6]);
        let mixed = extra.add(sm.log().scale(0.1)).mul(extra);
        let logits = mixed.reshape(&[1, 6]).matmul(ps[5]).reshape(&[3]);
        let ce = logits.cross_entropy(self.label).unwrap();
        let n = mixed.slice(1, 3).l2_norm();
        (ce.add(n.scale(0.05)).add(l1.mean()), ps)
    }
}

fn composite(seed: u64) -> (Composite, Vec<Tensor>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = vec![vec![3, 3, 2, 3], vec![3], vec![3, 4], vec![4], vec![2], vec![6, 3]];
    let params = shapes.iter().map(|s| rand_tensor(&mut rng, s)).collect();
    let c = Composite { x: rand_tensor(&mut rng, &[2, 6, 6, 2]), shapes, label: seed as usize % 3 };
    (c, params)
}

#[test]
fn composite_gradients_match_finite_differences() {
    let h = 1e-4;
    let mut report = GradCheckReport::default();
    for seed in 0..8 {
        let (c, params) = composite(seed);
        let tape = Tape::new();
        let (loss, ps) = c.eval(&tape, &params);
        let grads = loss.backward().unwrap();
        for (pi, pv) in ps.iter().enumerate() {
            let ga = grads.get(*pv);
            assert_eq!(ga.shape(), c.shapes[pi].as_slice());
            for e in 0..params[pi].numel() {
                let f = |v: f64| {
                    let mut p2 = params.clone();
                    p2[pi].data_mut()[e] = v;
                    let t = Tape::new();
                    let out = c.eval(&t, &p2).0.item();
                    out
                };
                let num = central_difference(f, params[pi].data()[e], h);
                report.record(ga.data()[e], num, 1e-6, 1e-4);
            }
        }
    }
    assert!(report.checked > 100);
    assert_eq!(report.passed, report.checked, "max rel error {}", report.max_rel_error);
}

#[test]
fn max_pool2d_routes_to_argmax() {
    let tape = Tape::new();
    let data: Vec<f64> = (0..16).map(|i| ((i * 7) % 16) as f64).collect();
    let x = tape.param(Tensor::new(&[1, 4, 4, 1], data.clone()));
    let y = x.max_pool2d();
    assert_eq!(y.shape(), vec![1, 2, 2, 1]);
    let g = y.sum().backward().unwrap().get(x);
    assert_eq!(g.sum(), 4.0);
    for (i, gv) in g.data().iter().enumerate() {
        if *gv == 1.0 {
            assert!(y.value().data().contains(&data[i]));
        }
    }
}

#[test]
fn max_rows_ties_go_to_first_row() {
    let tape = Tape::new();
    let x = tape.param(Tensor::new(&[2, 2], vec![1.0, 5.0, 1.0, 2.0]));
    let y = x.max_rows();
    assert_eq!(y.value().data(), &[1.0, 5.0]);
    let g = y.sum().backward().unwrap().get(x);
    assert_eq!(g.data(), &[1.0, 1.0, 0.0, 0.0]);
}

proptest! {
    #[test]
    fn clipped_norm_bounded_and_direction_kept(
        v in proptest::collection::vec(-1e3f64..1e3, 1..20),
        c in 0.1f64..100.0,
    ) {
        let mut g = GradMap::new();
        g.insert("x".into(), Tensor::vector(v.clone()));
        let out = clip_global_norm(g, c).unwrap();
        let n = global_norm(&out);
        prop_assert!(n <= c + 1e-9);
        let scale = out["x"].data().iter().zip(&v).find(|(_, b)| b.abs() > 1e-9).map(|(a, b)| a / b);
        if let Some(s) = scale {
            prop_assert!(s > 0.0);
            for (a, b) in out["x"].data().iter().zip(&v) {
                prop_assert!((a - s * b).abs() <= 1e-9 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn cross_entropy_non_negative(
        logits in proptest::collection::vec(-50f64..50.0, 1..12),
        pick in 0usize..12,
    ) {
        let label = pick % logits.len();
        let tape = Tape::new();
        let v = tape.constant(Tensor::vector(logits)).cross_entropy(label).unwrap().item();
        prop_assert!(v >= 0.0);
    }
}
