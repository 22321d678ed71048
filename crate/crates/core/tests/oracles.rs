//! Library results against independent loop-level oracles.

mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{f1_oracle, gconv_oracle, gradient_suite, random_pair};
use symdec::decoder::gconv;
use symdec::metrics::{binary_entropy, cross_entropy, default_taus, f1_max, F1Options, CONSISTENCY_EPS};
use symdec::Tensor;

#[test]
fn gconv_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for case in 0..20 {
        let n = [4, 8][case % 2];
        let (ci, co, h) = (rng.random_range(1..=4), rng.random_range(1..=3), rng.random_range(3..=7));
        let x = Tensor::<f64>::randn(&[n, ci, h, h], 1.0, &mut rng);
        let psi = Tensor::<f64>::randn(&[co, ci, n, 3, 3], 1.0, &mut rng);
        let b = Tensor::<f64>::randn(&[co], 1.0, &mut rng);
        let got = gconv(&x, &psi, &b).unwrap();
        let want = gconv_oracle(&x, &psi, &b);
        let err = got.data().iter().zip(&want).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-9, "case {case}: {err}");
    }
}

#[test]
fn f1_matches_confusion_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let opts = F1Options::default();
    for _ in 0..50 {
        let k = rng.random_range(1..4);
        let (p, g): (Vec<_>, Vec<_>) = (0..k).map(|_| random_pair(&mut rng)).unzip();
        let r = f1_max(&p, &g, &opts).unwrap();
        assert_eq!((r.f1, r.tau), f1_oracle(&p, &g, &default_taus()));
    }
}

#[test]
fn cross_entropy_bounds_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let (p, _) = random_pair(&mut rng);
        let (q, _) = random_pair(&mut rng);
        let h = binary_entropy(&p, CONSISTENCY_EPS);
        assert!(cross_entropy(&p, &q, CONSISTENCY_EPS).unwrap() >= h - 1e-12);
        assert!((cross_entropy(&p, &p, CONSISTENCY_EPS).unwrap() - h).abs() < 1e-5);
    }
}

#[test]
fn every_rule_and_the_objective_pass_finite_differences() {
    for (name, err) in gradient_suite(3) {
        assert!(err < 1e-3, "{name}: {err}");
    }
}

#[test]
fn kinked_objective_agrees_at_smaller_steps() {
    use symdec::autodiff::Tape;
    use symdec::params::Bound;
    use symdec::training::loss_on;

    let spec = common::micro_spec();
    let (names, inputs, img, gt, focal) = common::objective_problem(7);
    let eval = |xs: &[Tensor<f64>]| -> (f64, Vec<Tensor<f64>>) {
        let tape = Tape::checked();
        let vars: Vec<_> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let b = Bound::from_vars(names.iter().cloned().zip(vars.iter().copied()));
        let l = loss_on(&tape, &b, &spec, &img, &gt, &focal).unwrap();
        let v = l.value().item();
        let g = tape.backward(l).unwrap();
        (v, vars.iter().map(|&x| g.get_or_zeros(x)).collect())
    };
    let (_, grads) = eval(&inputs);
    let i = names.iter().position(|n| n == "encoder.patch.bias").unwrap();
    let fd = |j: usize, h: f64| {
        let bump = |d: f64| {
            let mut w = inputs.clone();
            let mut v = w[i].data().to_vec();
            v[j] += d;
            w[i] = Tensor::new(inputs[i].shape(), v).unwrap();
            eval(&w).0
        };
        (bump(h) - bump(-h)) / (2.0 * h)
    };
    let scale = grads[i].data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (mut at_1e4, mut at_1e6) = (0.0f64, 0.0f64);
    for j in 0..inputs[i].len() {
        let a = grads[i].data()[j];
        at_1e4 = at_1e4.max((fd(j, 1e-4) - a).abs() / scale);
        at_1e6 = at_1e6.max((fd(j, 1e-6) - a).abs() / scale);
    }
    // the 1e-4 step crosses the kink; a smaller step sees the smooth side
    assert!(at_1e4 > 1e-3, "{at_1e4}");
    assert!(at_1e6 < 1e-5, "{at_1e6}");
}
