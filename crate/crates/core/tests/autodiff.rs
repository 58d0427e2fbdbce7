use std::sync::Arc;

use ctxppi_core::autodiff::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Inputs bounded away from zero, for primitives with a kink there.
fn random_off_zero(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    random(rows, cols, rng).map(|v| if v.abs() < 0.05 { v.signum() * 0.5 } else { v })
}

/// `sum(y ∘ C)` for a fixed random `C`, so every output entry matters.
fn project(tape: &mut Tape, y: Var, seed: u64) -> Result<Var, AutodiffError> {
    let (r, c) = tape.value(y).shape();
    let w = tape.constant(random(r, c, &mut ChaCha8Rng::seed_from_u64(seed)));
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn matmul_both_sides(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(3, 4, &mut rng);
        let b = random(4, 2, &mut rng);
        let (a2, b2) = (a.clone(), b.clone());
        let left = grad_check(|t, x| { let b = t.constant(b2.clone()); let y = t.matmul(x, b)?; project(t, y, seed) }, &a, EPS).unwrap();
        let right = grad_check(|t, x| { let a = t.constant(a2.clone()); let y = t.matmul(a, x)?; project(t, y, seed) }, &b, EPS).unwrap();
        prop_assert!(left < TOL && right < TOL, "{left} {right}");
    }

    #[test]
    fn add_scale_mul(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(3, 3, &mut rng);
        let b = random(3, 3, &mut rng);
        let err = grad_check(|t, x| {
            let c = t.constant(b.clone());
            let s = t.add(x, c)?;
            let s = t.scale(s, -1.7);
            let m = t.mul(s, x)?;
            project(t, m, seed)
        }, &a, EPS).unwrap();
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn add_row_and_scale_rows(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(4, 3, &mut rng);
        let row = random(1, 3, &mut rng);
        let w = random(4, 1, &mut rng);
        let (a2, a3, w2) = (a.clone(), a.clone(), w.clone());
        let e1 = grad_check(|t, x| { let a = t.constant(a2.clone()); let y = t.add_row(a, x)?; project(t, y, seed) }, &row, EPS).unwrap();
        let e2 = grad_check(|t, x| { let a = t.constant(a3.clone()); let y = t.scale_rows(a, x)?; project(t, y, seed) }, &w, EPS).unwrap();
        let e3 = grad_check(|t, x| { let w = t.constant(w2.clone()); let y = t.scale_rows(x, w)?; project(t, y, seed) }, &a, EPS).unwrap();
        prop_assert!(e1 < TOL && e2 < TOL && e3 < TOL, "{e1} {e2} {e3}");
    }

    #[test]
    fn concat_gather_scatter(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(5, 2, &mut rng);
        let idx: Arc<[usize]> = (0..7).map(|_| rng.gen_range(0..5)).collect();
        let err = grad_check(|t, x| {
            let sq = t.mul(x, x)?;
            let c = t.rowwise_concat(&[x, sq])?;
            let g = t.gather_rows(c, idx.clone())?;
            let s = t.scatter_add_rows(g, idx.clone(), 6)?;
            project(t, s, seed)
        }, &a, EPS).unwrap();
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn pointwise_nonlinearities(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_off_zero(4, 3, &mut rng);
        let e_lrelu = grad_check(|t, x| { let y = t.leaky_relu(x, 0.2); project(t, y, seed) }, &a, EPS).unwrap();
        let e_sig = grad_check(|t, x| { let y = t.sigmoid(x); project(t, y, seed) }, &a, EPS).unwrap();
        let pos = a.map(|v| v.abs() + 0.1);
        let e_log = grad_check(|t, x| { let y = t.log(x)?; project(t, y, seed) }, &pos, EPS).unwrap();
        prop_assert!(e_lrelu < TOL && e_sig < TOL && e_log < TOL, "{e_lrelu} {e_sig} {e_log}");
    }

    #[test]
    fn segment_softmax_gradient(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(8, 2, &mut rng);
        let seg: Arc<[usize]> = (0..8).map(|_| rng.gen_range(0..3)).collect();
        let err = grad_check(|t, x| { let y = t.segment_softmax(x, seg.clone())?; project(t, y, seed) }, &a, EPS).unwrap();
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn row_dot_mean_and_bce(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(6, 3, &mut rng);
        let b = random(6, 3, &mut rng);
        let targets: Arc<[f64]> = (0..6).map(|i| (i % 2) as f64).collect();
        let e1 = grad_check(|t, x| {
            let c = t.constant(b.clone());
            let d = t.row_dot(x, c)?;
            t.bce_with_logits(d, targets.clone())
        }, &a, EPS).unwrap();
        let e2 = grad_check(|t, x| { let d = t.row_dot(x, x)?; t.mean(d) }, &a, EPS).unwrap();
        prop_assert!(e1 < TOL && e2 < TOL, "{e1} {e2}");
    }

    #[test]
    fn segment_softmax_sums_to_one(seed in any::<u64>(), rows in 1usize..40, cols in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(rows, cols, &mut rng).scaled(30.0);
        let seg: Arc<[usize]> = (0..rows).map(|_| rng.gen_range(0..5)).collect();
        let mut t = Tape::new();
        let x = t.constant(a);
        let y = t.segment_softmax(x, seg.clone()).unwrap();
        let v = t.value(y);
        for s in 0..5 {
            for j in 0..cols {
                let members: Vec<f64> = (0..rows).filter(|&k| seg[k] == s).map(|k| v.get(k, j)).collect();
                if !members.is_empty() {
                    prop_assert!((members.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
        }
    }
}

#[test]
fn quadratic_check_is_tight() {
    let x = Matrix::from_rows(&[vec![0.3, -0.7], vec![1.1, 0.05]]).unwrap();
    let err = grad_check(
        |t, x| {
            let sq = t.mul(x, x)?;
            let s = t.sum(sq);
            Ok(t.scale(s, 0.5))
        },
        &x,
        EPS,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn constant_function_has_zero_error() {
    let x = Matrix::filled(2, 2, 0.4);
    let err = grad_check(|t, _| Ok(t.constant(Matrix::scalar(3.0))), &x, EPS).unwrap();
    assert_eq!(err, 0.0);
}

#[test]
fn grad_check_rejects_bad_eps_and_nan() {
    let x = Matrix::filled(1, 1, 1.0);
    assert!(matches!(
        grad_check(|t, x| Ok(t.sum(x)), &x, 0.1),
        Err(AutodiffError::ContractViolation(_))
    ));
    let nan = Matrix::filled(1, 1, f64::NAN);
    assert!(matches!(
        grad_check(|t, x| Ok(t.sum(x)), &nan, EPS),
        Err(AutodiffError::Numerical(_))
    ));
}

#[test]
fn shape_errors_name_both_shapes() {
    let mut t = Tape::new();
    let a = t.constant(Matrix::zeros(2, 3));
    let b = t.constant(Matrix::zeros(2, 2));
    match t.add(a, b) {
        Err(AutodiffError::Shape { left, right, .. }) => {
            assert_eq!((left, right), ((2, 3), (2, 2)))
        }
        other => panic!("{other:?}"),
    }
    assert!(t.matmul(a, b).is_err());
}

#[test]
fn adam_constant_gradient_first_step() {
    let mut p = Matrix::filled(2, 2, 1.0);
    let g = Matrix::filled(2, 2, 0.37);
    let cfg = AdamConfig {
        lr: 0.05,
        ..Default::default()
    };
    let mut state = AdamState::new(cfg, [&p]);
    state.step(&mut [&mut p], &[&g]).unwrap();
    // m̂ = g, v̂ = g², update = lr · g / (|g| + ε).
    let expected = 1.0 - 0.05 * 0.37 / (0.37 + 1e-8);
    for &v in p.as_slice() {
        assert!((v - expected).abs() < 1e-15);
    }
    assert_eq!(state.step, 1);
}
