use derm_core::autograd::OpKind;
use derm_core::gradcheck::{grad_check, grad_check_with_fault, layer_suite, GradCheck, MAX_ATTEMPTS, TOLERANCE};
use derm_core::nn::spline::BSplineBasis;
use derm_core::{Graph, Result, Rng, Tensor, Var};

const POINTS: u64 = 10;

/// Signed weights so that every output element reaches the scalar differently.
fn weights(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = Rng::from_parts(&[seed, 77]);
    let mut w = Tensor::<f64>::rand_uniform(shape, 0.5, 1.5, &mut rng);
    for v in w.data_mut() {
        if rng.next_f64() < 0.5 {
            *v = -*v;
        }
    }
    w
}

fn reduce(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let w = g.constant(weights(g.shape(out), seed));
    let p = g.mul(out, w)?;
    Ok(g.sum(p))
}

fn randn(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, rng)
}

/// Checks `op` at `POINTS` admissible random points; inadmissible draws
/// (gradients below the finite-difference resolution) are skipped, but only
/// a bounded number of them.
fn check_op<I, F>(name: &str, mut inputs: I, mut op: F)
where
    I: FnMut(&mut Rng) -> Vec<Tensor<f64>>,
    F: FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut judged = 0;
    for seed in 0..POINTS * 3 {
        let mut rng = Rng::from_parts(&[seed, 0x0F]);
        let point = inputs(&mut rng);
        let r = grad_check(&point, |g, v| {
            let out = op(g, v)?;
            reduce(g, out, seed)
        })
        .unwrap();
        if !r.admissible() {
            continue;
        }
        assert!(r.max_rel_error < TOLERANCE, "{name} at point {seed}: {r:?}");
        judged += 1;
        if judged == POINTS {
            return;
        }
    }
    panic!("{name}: only {judged} admissible points");
}

#[test]
fn sigmoid_of_matmul() {
    for seed in 0..POINTS {
        let mut rng = Rng::new(seed);
        let w = randn(&[3, 4], &mut rng);
        let x = randn(&[4, 2], &mut rng);
        let r = grad_check(&[w, x], |g, v| {
            let z = g.matmul(v[0], v[1])?;
            let s = g.sigmoid(z);
            Ok(g.sum(s))
        })
        .unwrap();
        assert!(r.max_rel_error < TOLERANCE, "{r:?}");
        assert_eq!(r.coordinates, 12 + 8);
    }
}

#[test]
fn products() {
    check_op("matmul", |r| vec![randn(&[3, 4], r), randn(&[4, 2], r)], |g, v| g.matmul(v[0], v[1]));
    check_op("bmm", |r| vec![randn(&[2, 3, 4], r), randn(&[2, 4, 2], r)], |g, v| g.bmm(v[0], v[1]));
    check_op(
        "linear",
        |r| vec![randn(&[3, 4], r), randn(&[5, 4], r), randn(&[5], r)],
        |g, v| g.linear(v[0], v[1], Some(v[2])),
    );
    check_op("linear without bias", |r| vec![randn(&[3, 4], r), randn(&[5, 4], r)], |g, v| {
        g.linear(v[0], v[1], None)
    });
}

#[test]
fn convolution_and_pooling() {
    for (stride, pad) in [(1, 1), (2, 0), (2, 1)] {
        check_op(
            "conv2d",
            |r| vec![randn(&[2, 2, 5, 5], r), randn(&[3, 2, 3, 3], r), randn(&[3], r)],
            |g, v| g.conv2d(v[0], v[1], Some(v[2]), stride, pad),
        );
    }
    check_op("max_pool2", |r| vec![randn(&[2, 2, 4, 5], r)], |g, v| g.max_pool2(v[0]));
}

/// Standard normal values kept away from the kink at zero.
fn off_kink(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let mut t = randn(shape, rng);
    for v in t.data_mut() {
        if v.abs() < 1e-3 {
            *v += 0.1;
        }
    }
    t
}

#[test]
fn elementwise() {
    check_op("relu", |r| vec![off_kink(&[4, 5], r)], |g, v| Ok(g.relu(v[0])));
    check_op("sigmoid", |r| vec![randn(&[4, 5], r)], |g, v| Ok(g.sigmoid(v[0])));
    check_op("silu", |r| vec![randn(&[4, 5], r)], |g, v| Ok(g.silu(v[0])));
    check_op("scale", |r| vec![randn(&[4, 5], r)], |g, v| Ok(g.scale(v[0], -0.7)));
    check_op("add", |r| vec![randn(&[3, 4], r), randn(&[3, 4], r)], |g, v| g.add(v[0], v[1]));
    check_op("sub", |r| vec![randn(&[3, 4], r), randn(&[3, 4], r)], |g, v| g.sub(v[0], v[1]));
    check_op("mul", |r| vec![randn(&[3, 4], r), randn(&[3, 4], r)], |g, v| g.mul(v[0], v[1]));
    check_op("square", |r| vec![randn(&[3, 4], r)], |g, v| g.mul(v[0], v[0]));
}

#[test]
fn shape_ops() {
    check_op("reshape", |r| vec![randn(&[2, 6], r)], |g, v| {
        let x = g.reshape(v[0], &[3, 4])?;
        Ok(g.sigmoid(x))
    });
    check_op("permute", |r| vec![randn(&[2, 3, 4], r)], |g, v| {
        let x = g.permute(v[0], &[2, 0, 1])?;
        Ok(g.sigmoid(x))
    });
    check_op("concat", |r| vec![randn(&[2, 3], r), randn(&[2, 2], r)], |g, v| {
        let x = g.concat(&[v[0], v[1]], 1)?;
        Ok(g.sigmoid(x))
    });
    for axis in 0..3 {
        check_op("mean", |r| vec![randn(&[2, 3, 4], r)], |g, v| g.mean(v[0], axis));
    }
}

#[test]
fn normalizations() {
    for axis in 0..2 {
        check_op("softmax", |r| vec![randn(&[3, 4], r)], |g, v| g.softmax(v[0], axis));
    }
    check_op(
        "layer_norm",
        |r| vec![randn(&[3, 5], r), randn(&[5], r), randn(&[5], r)],
        |g, v| g.layer_norm(v[0], v[1], v[2]),
    );
}

#[test]
fn dropout_with_fixed_mask() {
    check_op("dropout", |r| vec![randn(&[4, 6], r)], |g, v| {
        let mut rng = Rng::new(9);
        g.dropout(v[0], 0.3, &mut rng)
    });
}

#[test]
fn spline_basis() {
    let basis = BSplineBasis::uniform(4, 3, -2.0, 2.0).unwrap();
    // interior of the knot cells, where every active basis function is
    // comfortably above the resolution of the differences
    check_op(
        "bspline",
        |r| {
            let data: Vec<f64> = (0..6)
                .map(|_| -2.0 + r.below(4) as f64 + r.uniform(0.25, 0.75))
                .collect();
            vec![Tensor::new(&[2, 3], data).unwrap()]
        },
        |g, v| g.bspline(v[0], &basis),
    );
}

#[test]
fn loss() {
    check_op("weighted_bce", |r| vec![randn(&[4, 1], r)], |g, v| {
        let p = g.sigmoid(v[0]);
        let l = g.weighted_bce(p, &[1.0, 0.0, 1.0, 0.0], &[1.2, 0.7, 1.2, 0.7])?;
        // reduce() multiplies by a constant, which keeps the sign of the loss
        Ok(l)
    });
}

#[test]
fn suite_passes_at_five_points() {
    for seed in 0..5 {
        for row in layer_suite(seed, None).unwrap() {
            println!(
                "seed {seed} {:<24} {:.3e} over {} coordinates (point {})",
                row.name, row.check.max_rel_error, row.check.coordinates, row.attempts
            );
            assert!(row.passes(), "{} at seed {seed}: {row:?}", row.name);
        }
    }
}

fn rows_failing(fault: (OpKind, f64)) -> Vec<&'static str> {
    layer_suite(0, Some(fault))
        .unwrap()
        .into_iter()
        .filter(|r| !r.passes())
        .map(|r| r.name)
        .collect()
}

#[test]
fn injected_faults_are_caught() {
    let failing = rows_failing((OpKind::Softmax, 1.1));
    for name in ["softmax", "attention", "encoder_block", "sequential_model", "parallel_model_eq5"] {
        assert!(failing.contains(&name), "{name} missed: {failing:?}");
    }
    assert!(!failing.contains(&"linear"));

    let failing = rows_failing((OpKind::Conv2d, 0.5));
    assert!(failing.contains(&"conv2d") && failing.contains(&"cnn_backbone"), "{failing:?}");

    let failing = rows_failing((OpKind::Relu, 0.0));
    for name in ["cnn_backbone", "encoder_block", "sequential_model", "parallel_model_eq5"] {
        assert!(failing.contains(&name), "{name} missed: {failing:?}");
    }

    let failing = rows_failing((OpKind::BSpline, 2.0));
    assert!(failing.contains(&"spline_layer") && failing.contains(&"parallel_model_spline"));
    assert!(!failing.contains(&"parallel_model_eq5"));
}

#[test]
fn vanishing_backward_cannot_hide_behind_resolution() {
    // a backward pass shrunk to almost nothing makes every point unresolvable;
    // the row must fail rather than be skipped
    let rows = layer_suite(0, Some((OpKind::Sigmoid, 1e-9))).unwrap();
    let pe = rows.iter().find(|r| r.name == "positional_encoding").unwrap();
    assert!(!pe.check.resolvable());
    assert_eq!(pe.attempts, MAX_ATTEMPTS);
    assert!(!pe.passes());
}

#[test]
fn dropped_gradient_is_caught() {
    let x = Tensor::from_f64(&[3], &[0.4, -1.0, 2.0]).unwrap();
    let r: GradCheck = grad_check_with_fault(
        &[x],
        |g, v| {
            let s = g.silu(v[0]);
            Ok(g.sum(s))
        },
        Some((OpKind::Silu, 0.0)),
    )
    .unwrap();
    assert!(r.resolvable());
    assert!(r.max_rel_error > 0.5);
}
