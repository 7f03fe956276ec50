use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::array::Array;
use crate::error::{Error, Result};

fn rand_array(rng: &mut ChaCha8Rng, shape: &[usize]) -> Array<f64> {
    Array::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn scalar(v: f64) -> Array<f64> {
    Array::new(vec![1], vec![v]).unwrap()
}

/// Reduces any node to a scalar with fixed random weights so every output
/// coordinate contributes to the checked gradient.
fn weighted_sum(tape: &mut Tape<f64>, v: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rand_array(&mut rng, tape.shape(v));
    let p = tape.mul_const(v, w)?;
    tape.sum(p)
}

const TOL: f64 = 1e-4;
const H: f64 = 1e-5;

#[test]
fn square_and_sum_values() {
    let mut t = Tape::<f64>::new();
    let n = t.variable(scalar(3.0));
    let sq = t.mul(n, n).unwrap();
    assert_eq!(t.value(sq).item(), 9.0);

    let ones = t.variable(Array::ones(&[4]));
    let s = t.sum(ones).unwrap();
    assert_eq!(t.value(s).item(), 4.0);
}

#[test]
fn recorded_values_match_plain_evaluation_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = rand_array(&mut rng, &[2, 3, 9]);
    let w = rand_array(&mut rng, &[4, 3, 3]);
    let b = rand_array(&mut rng, &[4]);

    let plain = {
        let y = kernels::conv1d(&x, &w).unwrap();
        let y = kernels::add_bias(&y, &b).unwrap();
        let y = kernels::leaky_relu(&y, 0.1);
        kernels::tanh(&y)
    };

    let mut t = Tape::<f64>::new();
    let xv = t.variable(x);
    let wv = t.variable(w);
    let bv = t.variable(b);
    let y = t.conv1d(xv, wv).unwrap();
    let y = t.add_bias(y, bv).unwrap();
    let y = t.leaky_relu(y, 0.1).unwrap();
    let y = t.tanh(y).unwrap();
    assert_eq!(t.value(y).data(), plain.data());
}

#[test]
fn first_and_second_derivatives_of_powers() {
    let mut t = Tape::<f64>::new();
    let x = t.variable(scalar(3.0));
    let sq = t.mul(x, x).unwrap();
    let g = t.grad(sq, &[x], false).unwrap()[0];
    assert_eq!(t.value(g).item(), 6.0);

    let mut t = Tape::<f64>::new();
    let x = t.variable(scalar(2.0));
    let sq = t.mul(x, x).unwrap();
    let cube = t.mul(sq, x).unwrap();
    let g = t.grad(cube, &[x], true).unwrap()[0];
    assert_eq!(t.value(g).item(), 12.0);
    let gg = t.grad(g, &[x], false).unwrap()[0];
    assert_eq!(t.value(gg).item(), 12.0);
}

#[test]
fn second_derivative_of_cube_is_exactly_six_x() {
    for &x0 in &[-3.5, -1.0, 0.0, 0.25, 1.0, 2.0, 7.75, 1024.0] {
        let mut t = Tape::<f64>::new();
        let x = t.variable(scalar(x0));
        let sq = t.mul(x, x).unwrap();
        let cube = t.mul(sq, x).unwrap();
        let g = t.grad(cube, &[x], true).unwrap()[0];
        let gg = t.grad(g, &[x], false).unwrap()[0];
        assert_eq!(t.value(gg).item(), 6.0 * x0, "at x = {x0}");
    }
}

#[test]
fn finite_diff_check_trivial_cases() {
    let x = Array::from_f64(vec![3], &[1.0, 2.0, 3.0]).unwrap();
    let err = finite_diff_check(|t, v| t.sq_norm(v), &x, 1e-5).unwrap();
    assert!(err < 1e-8, "{err}");

    let err = finite_diff_check(
        |t, v| {
            let z = t.scale(v, 0.0)?;
            let s = t.sum(z)?;
            t.affine(s, 1.0, 5.0)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert_eq!(err, 0.0);

    assert!(matches!(finite_diff_check(|t, v| t.sum(v), &x, 0.5), Err(Error::Config(_))));
    assert!(matches!(finite_diff_check(|t, v| t.sum(v), &x, 0.0), Err(Error::Config(_))));
}

/// Every primitive passes a central-difference check on random inputs.
#[test]
fn primitive_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    type F = Box<dyn Fn(&mut Tape<f64>, Var) -> Result<Var>>;
    let other = rand_array(&mut rng, &[2, 3, 5]);
    let w = rand_array(&mut rng, &[4, 3, 3]);
    let w1 = rand_array(&mut rng, &[4, 3, 1]);
    let g_out = rand_array(&mut rng, &[2, 4, 5]);
    let bias = rand_array(&mut rng, &[3]);
    let mat = rand_array(&mut rng, &[3, 4]);
    let mask = Array::from_fn(&[2, 3, 5], |i| if i % 3 == 0 { 0.0 } else { 1.5 });

    let cases: Vec<(&str, Vec<usize>, F)> = vec![
        ("add", vec![2, 3, 5], {
            let o = other.clone();
            Box::new(move |t, v| {
                let c = t.variable(o.clone());
                let y = t.add(v, c)?;
                let y = t.mul(y, y)?;
                weighted_sum(t, y, 1)
            })
        }),
        ("sub", vec![2, 3, 5], {
            let o = other.clone();
            Box::new(move |t, v| {
                let c = t.constant(o.clone());
                let y = t.sub(c, v)?;
                let y = t.mul(y, v)?;
                weighted_sum(t, y, 2)
            })
        }),
        ("mul", vec![2, 3, 5], {
            let o = other.clone();
            Box::new(move |t, v| {
                let c = t.variable(o.clone());
                let y = t.mul(v, c)?;
                weighted_sum(t, y, 3)
            })
        }),
        ("matmul", vec![5, 3], {
            let m = mat.clone();
            Box::new(move |t, v| {
                let c = t.variable(m.clone());
                let y = t.matmul(v, c, false, false)?;
                let z = t.matmul(y, v, true, false)?; // (4x5)(5x3)
                let z2 = t.matmul(v, z, false, true)?; // (5x3)(3x4)
                weighted_sum(t, z2, 4)
            })
        }),
        ("matmul_t", vec![3, 5], {
            let m = mat.clone();
            Box::new(move |t, v| {
                let c = t.variable(m.clone());
                let y = t.matmul(c, v, true, false)?; // (4x3)(3x5)
                let z = t.matmul(y, v, false, true)?; // (4x5)(5x3)
                let z2 = t.matmul(y, c, true, true)?; // (5x4)(4x3)
                let z = t.reshape(z, &[12])?;
                let z2 = t.reshape(z2, &[15])?;
                let a = weighted_sum(t, z, 5)?;
                let b = weighted_sum(t, z2, 55)?;
                t.add(a, b)
            })
        }),
        ("conv1d", vec![2, 3, 5], {
            let w = w.clone();
            Box::new(move |t, v| {
                let wv = t.variable(w.clone());
                let y = t.conv1d(v, wv)?;
                weighted_sum(t, y, 6)
            })
        }),
        ("conv1d_weight", vec![4, 3, 3], {
            let x = other.clone();
            Box::new(move |t, v| {
                let xv = t.variable(x.clone());
                let y = t.conv1d(xv, v)?;
                let y = t.tanh(y)?;
                weighted_sum(t, y, 7)
            })
        }),
        ("conv1d_k1", vec![2, 3, 5], {
            let w = w1.clone();
            Box::new(move |t, v| {
                let wv = t.constant(w.clone());
                let y = t.conv1d(v, wv)?;
                weighted_sum(t, y, 8)
            })
        }),
        ("conv1d_input_grad", vec![2, 4, 5], {
            let w = w.clone();
            Box::new(move |t, v| {
                let wv = t.constant(w.clone());
                let y = t.conv1d_input_grad(v, wv)?;
                let y = t.mul(y, y)?;
                weighted_sum(t, y, 9)
            })
        }),
        ("conv1d_input_grad_w", vec![4, 3, 3], {
            let g = g_out.clone();
            Box::new(move |t, v| {
                let gv = t.constant(g.clone());
                let y = t.conv1d_input_grad(gv, v)?;
                let y = t.mul(y, y)?;
                weighted_sum(t, y, 10)
            })
        }),
        ("conv1d_weight_grad", vec![2, 3, 5], {
            let g = g_out.clone();
            Box::new(move |t, v| {
                let gv = t.constant(g.clone());
                let y = t.conv1d_weight_grad(v, gv, 3)?;
                let y = t.mul(y, y)?;
                weighted_sum(t, y, 11)
            })
        }),
        ("conv1d_weight_grad_g", vec![2, 4, 5], {
            let x = other.clone();
            Box::new(move |t, v| {
                let xv = t.constant(x.clone());
                let y = t.conv1d_weight_grad(xv, v, 3)?;
                let y = t.mul(y, y)?;
                weighted_sum(t, y, 12)
            })
        }),
        ("leaky_relu", vec![2, 3, 5], Box::new(|t, v| {
            let y = t.leaky_relu(v, 0.1)?;
            weighted_sum(t, y, 13)
        })),
        ("sigmoid", vec![2, 3, 5], Box::new(|t, v| {
            let y = t.sigmoid(v)?;
            weighted_sum(t, y, 14)
        })),
        ("tanh", vec![2, 3, 5], Box::new(|t, v| {
            let y = t.tanh(v)?;
            weighted_sum(t, y, 15)
        })),
        ("narrow", vec![2, 3, 5], Box::new(|t, v| {
            let y = t.narrow(v, 1, 2)?;
            let y = t.mul(y, y)?;
            weighted_sum(t, y, 16)
        })),
        ("pad_channels", vec![2, 3, 5], Box::new(|t, v| {
            let y = t.pad_channels(v, 2, 6)?;
            let y = t.mul(y, y)?;
            weighted_sum(t, y, 17)
        })),
        ("concat", vec![2, 3, 5], Box::new(|t, v| {
            let sq = t.mul(v, v)?;
            let y = t.concat(&[v, sq, v])?;
            weighted_sum(t, y, 18)
        })),
        ("masked_sq_norm", vec![2, 3, 5], {
            let m = mask.clone();
            Box::new(move |t, v| t.masked_sq_norm(v, m.clone()))
        }),
        ("bias_channel_ops", vec![3], {
            let x = other.clone();
            Box::new(move |t, v| {
                let xv = t.constant(x.clone());
                let y = t.add_bias(xv, v)?;
                let y = t.mul(y, y)?;
                let s = t.channel_sum(y)?;
                let s = t.mul(s, v)?;
                let b = t.broadcast_channel(s, &[2, 3, 5])?;
                weighted_sum(t, b, 19)
            })
        }),
        ("powf_affine", vec![2, 3, 5], Box::new(|t, v| {
            let sq = t.mul(v, v)?;
            let pos = t.affine(sq, 2.0, 1.0)?;
            let y = t.powf(pos, -0.5)?;
            weighted_sum(t, y, 20)
        })),
        ("reshape_broadcast", vec![2, 3, 5], Box::new(|t, v| {
            let r = t.reshape(v, &[6, 5])?;
            let s = t.mean(r)?;
            let b = t.broadcast_scalar(s, &[6, 5])?;
            let y = t.mul(b, r)?;
            weighted_sum(t, y, 21)
        })),
    ];

    for (name, shape, f) in &cases {
        let x = rand_array(&mut rng, shape);
        let err = finite_diff_check(|t, v| f(t, v), &x, H).unwrap();
        assert!(err < TOL, "{name}: relative error {err}");
    }
    let _ = bias;
}

/// The gradient recorded with `create_graph` is differentiable: checks the
/// gradient of a functional of an inner gradient.
#[test]
fn gradient_of_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = rand_array(&mut rng, &[3, 3, 3]);
    let w2 = rand_array(&mut rng, &[3, 3, 3]);
    let x = rand_array(&mut rng, &[1, 3, 6]);

    let inner = |t: &mut Tape<f64>, wv: Var, xv: Var| -> Result<Var> {
        let y = t.conv1d(xv, wv)?;
        let y = t.leaky_relu(y, 0.1)?;
        let w2v = t.constant(w2.clone());
        let y = t.conv1d(y, w2v)?;
        let y = t.sigmoid(y)?;
        let r = t.sub(xv, y)?;
        t.sq_norm(r)
    };
    let f = |t: &mut Tape<f64>, wv: Var| -> Result<Var> {
        let xv = t.variable(x.clone());
        let u = inner(t, wv, xv)?;
        let g = t.grad(u, &[xv], true)?[0];
        let g2 = t.tanh(g)?;
        weighted_sum(t, g2, 99)
    };
    let err = finite_diff_check(f, &w, H).unwrap();
    assert!(err < TOL, "relative error {err}");
}

#[test]
fn masked_norm_gradient_vanishes_at_masked_entries() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_array(&mut rng, &[2, 4, 6]);
    let mask = Array::from_fn(&[2, 4, 6], |i| if i % 2 == 0 { 0.0 } else { 1.0 });
    let mut t = Tape::<f64>::new();
    let xv = t.variable(x);
    let n = t.masked_sq_norm(xv, mask.clone()).unwrap();
    let g = t.grad_arrays(n, &[xv]).unwrap().remove(0);
    for (gv, m) in g.data().iter().zip(mask.data()) {
        if *m == 0.0 {
            assert_eq!(*gv, 0.0);
        }
    }
}

#[test]
fn unreachable_wrt_gives_zero_gradient_and_warning() {
    let mut t = Tape::<f64>::new();
    let a = t.variable(Array::ones(&[3]));
    let b = t.variable(Array::ones(&[2]));
    let s = t.sum(a).unwrap();
    let g = t.grad(s, &[b], false).unwrap()[0];
    assert_eq!(t.value(g).data(), &[0.0, 0.0]);
    assert_eq!(t.warnings().len(), 1);
}

#[test]
fn non_finite_results_raise_numerical_error_naming_the_op() {
    let mut t = Tape::<f64>::new();
    let a = t.variable(Array::from_f64(vec![2], &[-1.0, 4.0]).unwrap());
    match t.powf(a, 0.5) {
        Err(Error::Numerical { op }) => assert_eq!(op, "powf"),
        other => panic!("expected numerical error, got {other:?}"),
    }
}

#[test]
fn nodes_from_another_tape_are_rejected() {
    let mut t1 = Tape::<f64>::new();
    let mut t2 = Tape::<f64>::new();
    let a = t1.variable(Array::ones(&[2]));
    let b = t2.variable(Array::ones(&[2]));
    let _ = t2.variable(Array::ones(&[2]));
    assert!(matches!(t2.grad(b, &[a], false), Err(Error::Internal(_)) | Err(Error::Shape(_))));
}

#[test]
fn detached_nodes_stop_gradients() {
    let mut t = Tape::<f64>::new();
    let x = t.variable(scalar(2.0));
    let sq = t.mul(x, x).unwrap();
    let d = t.detach(sq);
    let y = t.mul(d, x).unwrap();
    let g = t.grad(y, &[x], false).unwrap()[0];
    assert_eq!(t.value(g).item(), 4.0);
}

#[test]
fn works_in_single_precision() {
    let mut t = Tape::<f32>::new();
    let x = t.variable(Array::new(vec![1], vec![2.0f32]).unwrap());
    let sq = t.mul(x, x).unwrap();
    let cube = t.mul(sq, x).unwrap();
    let g = t.grad(cube, &[x], true).unwrap()[0];
    let gg = t.grad(g, &[x], false).unwrap()[0];
    assert_eq!(t.value(g).item(), 12.0f32);
    assert_eq!(t.value(gg).item(), 12.0f32);
}
