//! Reverse-mode automatic differentiation over flat parameter vectors, and
//! the Adam optimizer.

mod adam;
mod real;
mod tape;

pub use adam::{adam_step, AdamState};
pub use real::Real;
pub use tape::{dot, forward_backward, norm, sum, Adjoints, Op, Tape, Var};

use thiserror::Error;

/// Inputs of `acos` are clamped to `[-1 + ACOS_EPS, 1 - ACOS_EPS]`.
pub const ACOS_EPS: f64 = 1e-7;
/// Below this norm the gradient of [`norm`] is defined as zero.
pub const NORM_GUARD: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("non-finite value {value} at tape node {node} ({op})")]
    NonFinite { node: usize, op: Op, value: f64 },
    #[error("length mismatch: optimizer has {expected} slots, got {params} params and {grads} grads")]
    LengthMismatch {
        expected: usize,
        params: usize,
        grads: usize,
    },
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Central finite differences of a plain f64 function.
    fn fd_grad(f: &dyn Fn(&[f64]) -> f64, p: &[f64], h: f64) -> Vec<f64> {
        (0..p.len())
            .map(|i| {
                let mut a = p.to_vec();
                let mut b = p.to_vec();
                a[i] += h;
                b[i] -= h;
                (f(&a) - f(&b)) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-2)
    }

    #[test]
    fn square_at_three() {
        let (loss, g) = forward_backward(&[3.0], |_, p| p[0] * p[0]).unwrap();
        assert_eq!(loss, 9.0);
        assert_eq!(g, vec![6.0]);
    }

    #[test]
    fn unused_parameter_has_zero_gradient() {
        let (loss, g) = forward_backward(&[1.5, -2.0], |_, p| p[0].sin()).unwrap();
        assert!((loss - 1.5f64.sin()).abs() < 1e-15);
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn non_finite_loss_names_first_bad_node() {
        let err = forward_backward(&[-1.0], |_, p| p[0].sqrt() * 2.0).unwrap_err();
        match err {
            DiffError::NonFinite { node, op, .. } => {
                assert_eq!(node, 1);
                assert_eq!(op, Op::Sqrt);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    /// Composite of the primitives the field and photometric model use.
    fn composite<S: Real>(p: &[S]) -> S {
        let a = (p[0] * p[1] + p[2]).sigmoid();
        let b = (p[3] - p[4]).relu() + (p[5] * 0.3).abs();
        let n = S::norm(&[p[6], p[7], p[8]]);
        let th = (p[8] / n).acos();
        let phi = p[7].atan2(p[6]);
        let r = (th * p[9]).powi(2) + 1.0;
        let dotp = S::dot(&[p[0], p[1], p[2]], &[p[3], p[4], p[5]]);
        let m = p[1].min(p[2]) + p[3].max(p[4]);
        a * b + r * (phi.cos() + th.sin()) + (dotp / (n + 1.0)).exp() + m * (p[0] * p[0] + 1.0).sqrt()
    }

    #[test]
    fn composite_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let p: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
            // keep away from kinks of relu/abs/min/max
            if (p[3] - p[4]).abs() < 1e-2 || p[5].abs() < 1e-2 || (p[1] - p[2]).abs() < 1e-2 {
                continue;
            }
            let (loss, g) = forward_backward(&p, |_, v| composite(v)).unwrap();
            assert!((loss - composite(&p)).abs() < 1e-12);
            let fd = fd_grad(&|x| composite(x), &p, 1e-4);
            for (a, b) in g.iter().zip(&fd) {
                assert!(rel_err(*a, *b) < 1e-4, "analytic {a} vs fd {b}");
            }
        }
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        type Unary = fn(Var<'_>) -> Var<'_>;
        let unary: Vec<(&str, Unary, fn(f64) -> f64, (f64, f64))> = vec![
            ("sqrt", |x| x.sqrt(), |x| x.sqrt(), (0.1, 3.0)),
            ("sin", |x| x.sin(), |x| x.sin(), (-3.0, 3.0)),
            ("cos", |x| x.cos(), |x| x.cos(), (-3.0, 3.0)),
            ("exp", |x| x.exp(), |x| x.exp(), (-2.0, 2.0)),
            ("acos", |x| x.acos(), |x| x.acos(), (-0.95, 0.95)),
            ("sigmoid", |x| x.sigmoid(), super::tape::sigmoid, (-5.0, 5.0)),
            ("relu", |x| x.relu(), |x| x.max(0.0), (-2.0, 2.0)),
            ("abs", |x| x.abs(), |x| x.abs(), (-2.0, 2.0)),
            ("neg", |x| -x, |x| -x, (-2.0, 2.0)),
            ("powf", |x| x.powf(2.5), |x| x.powf(2.5), (0.1, 2.0)),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (name, f, fr, (lo, hi)) in unary {
            for _ in 0..100 {
                let x: f64 = rng.random_range(lo..hi);
                if x.abs() < 1e-3 {
                    continue;
                }
                let (_, g) = forward_backward(&[x], |_, p| f(p[0])).unwrap();
                let fd = (fr(x + 1e-5) - fr(x - 1e-5)) / 2e-5;
                assert!(rel_err(g[0], fd) < 1e-4, "{name} at {x}: {} vs {fd}", g[0]);
            }
        }
        type Binary = for<'a> fn(Var<'a>, Var<'a>) -> Var<'a>;
        let binary: Vec<(&str, Binary, fn(f64, f64) -> f64)> = vec![
            ("add", |a, b| a + b, |a, b| a + b),
            ("sub", |a, b| a - b, |a, b| a - b),
            ("mul", |a, b| a * b, |a, b| a * b),
            ("div", |a, b| a / b, |a, b| a / b),
            ("atan2", |a, b| a.atan2(b), f64::atan2),
            ("min", |a, b| a.min(b), f64::min),
            ("max", |a, b| a.max(b), f64::max),
            ("dot", |a, b| dot(&[a, b], &[b, a]), |a, b| 2.0 * a * b),
            ("norm", |a, b| norm(&[a, b]), |a, b| a.hypot(b)),
        ];
        for (name, f, fr) in binary {
            for _ in 0..100 {
                let a: f64 = rng.random_range(-2.0..2.0);
                let b: f64 = rng.random_range(0.2..2.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                if (a - b).abs() < 1e-3 {
                    continue;
                }
                let (_, g) = forward_backward(&[a, b], |_, p| f(p[0], p[1])).unwrap();
                let fa = (fr(a + 1e-5, b) - fr(a - 1e-5, b)) / 2e-5;
                let fb = (fr(a, b + 1e-5) - fr(a, b - 1e-5)) / 2e-5;
                assert!(rel_err(g[0], fa) < 1e-4, "{name} d/da at ({a},{b})");
                assert!(rel_err(g[1], fb) < 1e-4, "{name} d/db at ({a},{b})");
            }
        }
    }

    #[test]
    fn guarded_edge_cases() {
        let (_, g) = forward_backward(&[0.0], |_, p| p[0].abs()).unwrap();
        assert_eq!(g[0], 0.0);
        let (_, g) = forward_backward(&[0.0, 0.0], |_, p| norm(p)).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
        // left-biased ties
        let (_, g) = forward_backward(&[1.0, 1.0], |_, p| p[0].min(p[1])).unwrap();
        assert_eq!(g, vec![1.0, 0.0]);
        let (_, g) = forward_backward(&[1.0, 1.0], |_, p| p[0].max(p[1])).unwrap();
        assert_eq!(g, vec![1.0, 0.0]);
        // clamped acos stays finite at the endpoints
        let (v, g) = forward_backward(&[1.0], |_, p| p[0].acos()).unwrap();
        assert!(v.is_finite() && g[0].is_finite());
    }

    #[test]
    fn backward_is_linear_in_the_seed_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let p: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
            fn f1<'a>(v: &[Var<'a>]) -> Var<'a> {
                v[0] * v[1] + v[2].sin()
            }
            fn f2<'a>(v: &[Var<'a>]) -> Var<'a> {
                (v[3] * v[0]).exp() + v[4] / (v[5] * v[5] + 1.0)
            }
            let (_, g1) = forward_backward(&p, |_, v| f1(v)).unwrap();
            let (_, g2) = forward_backward(&p, |_, v| f2(v)).unwrap();
            let (_, g12) = forward_backward(&p, |_, v| f1(v) + f2(v)).unwrap();
            for i in 0..p.len() {
                assert!((g12[i] - g1[i] - g2[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients_are_bit_reproducible() {
        let p: Vec<f64> = (0..10).map(|i| (i as f64 * 0.37).sin()).collect();
        let (l1, g1) = forward_backward(&p, |_, v| composite(v)).unwrap();
        let (l2, g2) = forward_backward(&p, |_, v| composite(v)).unwrap();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert!(g1.iter().zip(&g2).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn multi_seed_backward_reads_input_adjoints() {
        let tape = Tape::new();
        let x = tape.input(2.0);
        let y = tape.input(5.0);
        let a = x * y;
        let b = x + y;
        let adj = tape.backward(&[(a, 1.0), (b, 10.0)]);
        assert_eq!(adj.of(x), 15.0);
        assert_eq!(adj.of(y), 12.0);
        assert_eq!(tape.len(), 4);
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut st = AdamState::new(3);
        let p = adam_step(&mut st, &[1.0, 2.0, 3.0], &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, 2.0, 3.0]);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn adam_length_mismatch() {
        let mut st = AdamState::new(2);
        assert!(matches!(
            adam_step(&mut st, &[1.0, 2.0], &[0.0]),
            Err(DiffError::LengthMismatch { .. })
        ));
        assert_eq!(st.step_count, 0);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut st = AdamState::new(1);
        let mut p = vec![0.0];
        for _ in 0..2000 {
            let (_, g) = forward_backward(&p, |_, v| (v[0] - 5.0) * (v[0] - 5.0)).unwrap();
            st.step(&mut p, &g).unwrap();
        }
        assert!((p[0] - 5.0).abs() < 1e-2, "p = {}", p[0]);
    }
}
