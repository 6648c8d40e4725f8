use numkit::gradcheck::{check, weighted_sum};
use numkit::init::uniform;
use numkit::{ParamStore, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const SEEDS: u64 = 10;

fn rand_tensor(seed: u64, shape: &[usize], scale: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    uniform(&mut rng, shape, scale)
}

fn positive(seed: u64, shape: &[usize]) -> Tensor {
    let t = rand_tensor(seed, shape, 1.0);
    let data = t.data().iter().map(|v| 0.5 + v.abs()).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Runs `f` over ten seeds and returns the worst relative error.
fn worst<F>(inputs: impl Fn(u64) -> Vec<Tensor>, f: F) -> f64
where
    F: Fn(&mut Tape, &[Var], u64) -> numkit::Result<Var>,
{
    (0..SEEDS)
        .map(|seed| {
            let ins = inputs(seed);
            check(&ins, H, |tape, v| f(tape, v, seed)).unwrap().max_rel_error()
        })
        .fold(0.0, f64::max)
}

#[test]
fn matmul_sum_gradient() {
    let err = worst(
        |s| vec![rand_tensor(s, &[3, 4], 1.0), rand_tensor(s + 100, &[4, 2], 1.0)],
        |tape, v, _| {
            let p = tape.matmul(v[0], v[1])?;
            Ok(tape.sum(p))
        },
    );
    assert!(err < 1e-7, "matmul rel err {err}");
}

#[test]
fn matmul_weighted_gradient() {
    let err = worst(
        |s| vec![rand_tensor(s, &[4, 5], 1.0), rand_tensor(s + 7, &[5, 3], 1.0)],
        |tape, v, s| {
            let p = tape.matmul(v[0], v[1])?;
            weighted_sum(tape, p, s)
        },
    );
    assert!(err < 1e-7, "matmul rel err {err}");
}

#[test]
fn softmax_jacobian() {
    let err = worst(
        |s| vec![rand_tensor(s, &[3, 5], 2.0)],
        |tape, v, s| {
            let y = tape.softmax(v[0])?;
            weighted_sum(tape, y, s)
        },
    );
    assert!(err < 1e-6, "softmax rel err {err}");
}

#[test]
fn log_softmax_jacobian() {
    let err = worst(
        |s| vec![rand_tensor(s, &[4, 3], 2.0)],
        |tape, v, s| {
            let y = tape.log_softmax(v[0])?;
            weighted_sum(tape, y, s)
        },
    );
    assert!(err < 1e-6, "log_softmax rel err {err}");
}

#[test]
fn layer_norm_gradient() {
    let err = worst(
        |s| {
            vec![
                rand_tensor(s, &[4, 6], 2.0),
                rand_tensor(s + 1, &[6], 1.5),
                rand_tensor(s + 2, &[6], 1.0),
            ]
        },
        |tape, v, s| {
            let y = tape.layer_norm(v[0], v[1], v[2], 1e-5)?;
            weighted_sum(tape, y, s)
        },
    );
    assert!(err < 1e-5, "layer_norm rel err {err}");
}

#[test]
fn gelu_gradient() {
    let err = worst(
        |s| vec![rand_tensor(s, &[8, 8], 3.0)],
        |tape, v, s| {
            let y = tape.gelu(v[0]);
            weighted_sum(tape, y, s)
        },
    );
    assert!(err < 1e-5, "gelu rel err {err}");
}

#[test]
fn elementwise_suite_gradients() {
    type Case = (&'static str, fn(u64) -> Vec<Tensor>, fn(&mut Tape, &[Var]) -> numkit::Result<Var>);
    let cases: Vec<Case> = vec![
        ("add", |s| vec![rand_tensor(s, &[3, 4], 1.0), rand_tensor(s + 1, &[3, 4], 1.0)], |t, v| t.add(v[0], v[1])),
        ("sub", |s| vec![rand_tensor(s, &[3, 4], 1.0), rand_tensor(s + 1, &[3, 4], 1.0)], |t, v| t.sub(v[0], v[1])),
        ("mul", |s| vec![rand_tensor(s, &[3, 4], 1.0), rand_tensor(s + 1, &[3, 4], 1.0)], |t, v| t.mul(v[0], v[1])),
        ("div", |s| vec![rand_tensor(s, &[3, 4], 1.0), positive(s + 1, &[3, 4])], |t, v| t.div(v[0], v[1])),
        ("scale", |s| vec![rand_tensor(s, &[5], 1.0)], |t, v| Ok(t.scale(v[0], -2.5))),
        ("add_scalar", |s| vec![rand_tensor(s, &[5], 1.0)], |t, v| Ok(t.add_scalar(v[0], 3.0))),
        ("sqrt", |s| vec![positive(s, &[2, 5])], |t, v| Ok(t.sqrt(v[0]))),
        ("exp", |s| vec![rand_tensor(s, &[2, 5], 1.0)], |t, v| Ok(t.exp(v[0]))),
        ("relu", |s| vec![rand_tensor(s, &[4, 4], 1.0)], |t, v| Ok(t.relu(v[0]))),
        ("concat_lastdim", |s| vec![rand_tensor(s, &[3, 2], 1.0), rand_tensor(s + 1, &[3, 4], 1.0)], |t, v| t.concat_lastdim(&[v[0], v[1], v[0]])),
        ("concat_rows", |s| vec![rand_tensor(s, &[2, 3], 1.0), rand_tensor(s + 1, &[1, 3], 1.0)], |t, v| t.concat(&[v[0], v[1]], 0)),
        ("sum_axis0", |s| vec![rand_tensor(s, &[3, 4, 2], 1.0)], |t, v| t.sum_axis(v[0], 0)),
        ("sum_axis1", |s| vec![rand_tensor(s, &[3, 4, 2], 1.0)], |t, v| t.sum_axis(v[0], 1)),
        ("mean_axis2", |s| vec![rand_tensor(s, &[3, 4, 2], 1.0)], |t, v| t.mean_axis(v[0], 2)),
        ("transpose", |s| vec![rand_tensor(s, &[3, 5], 1.0)], |t, v| t.transpose(v[0])),
        ("reshape", |s| vec![rand_tensor(s, &[3, 4], 1.0)], |t, v| t.reshape(v[0], &[2, 6])),
        ("slice", |s| vec![rand_tensor(s, &[3, 6], 1.0)], |t, v| t.slice_lastdim(v[0], 2, 3)),
        ("broadcast", |s| vec![rand_tensor(s, &[4], 1.0)], |t, v| t.broadcast(v[0], 3)),
        ("add_row", |s| vec![rand_tensor(s, &[3, 4], 1.0), rand_tensor(s + 1, &[4], 1.0)], |t, v| t.add_row(v[0], v[1])),
        ("index_rows", |s| vec![rand_tensor(s, &[3, 4], 1.0)], |t, v| t.index_rows(v[0], &[2, 0, 2, 1])),
        ("pick", |s| vec![rand_tensor(s, &[3, 4], 1.0)], |t, v| t.pick(v[0], &[3, 0, 1])),
        ("mean", |s| vec![rand_tensor(s, &[3, 4], 1.0)], |t, v| Ok(t.mean(v[0]))),
    ];
    for (name, inputs, op) in cases {
        let err = worst(inputs, |tape, v, s| {
            let y = op(tape, v)?;
            weighted_sum(tape, y, s)
        });
        assert!(err < 1e-4, "{name}: rel err {err}");
    }
}

#[test]
fn dropout_gradient_with_fixed_mask() {
    // The mask is fixed once sampled, so the adjoint equals the mask itself.
    for seed in 0..SEEDS {
        let x = rand_tensor(seed, &[6, 6], 1.0).with_grad();
        let mut tape = Tape::training(seed);
        let xv = tape.leaf(&x);
        let y = tape.dropout(xv, 0.3).unwrap();
        let mask: Vec<f64> = tape
            .value(y)
            .iter()
            .zip(x.data())
            .map(|(y, x)| y / x)
            .collect();
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        for (g, m) in grads.wrt(xv).unwrap().iter().zip(&mask) {
            assert!((g - m).abs() < 1e-12);
        }
    }
}

/// `loss = sum(W·(W·(W·x)))`: three uses of one parameter, as in three
/// recycling iterations.
#[test]
fn shared_parameter_receives_summed_adjoints() {
    for seed in 0..SEEDS {
        let w = rand_tensor(seed, &[3, 3], 0.8);
        let x = rand_tensor(seed + 50, &[3, 1], 1.0);
        let report = check(&[w.clone()], H, |tape, v| {
            let xv = tape.constant(&[3, 1], x.data().to_vec())?;
            let mut h = xv;
            for _ in 0..3 {
                h = tape.matmul(v[0], h)?;
            }
            Ok(tape.sum(h))
        })
        .unwrap();
        assert!(report.max_rel_error() < 1e-4, "{}", report.max_rel_error());

        // The same gradient assembled from three single-use adjoints: copy the
        // parameter onto the tape once per use and let the store add them up.
        let mut store = ParamStore::new();
        let id = store.insert("w", w.clone()).unwrap();
        let mut tape = Tape::new();
        let mut h = tape.constant(&[3, 1], x.data().to_vec()).unwrap();
        for _ in 0..3 {
            let wv = tape.param(&store, id);
            h = tape.matmul(wv, h).unwrap();
        }
        let loss = tape.sum(h);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.params().count(), 3);
        store.accumulate(&grads).unwrap();
        let summed = store.get(id).grad().unwrap();
        for (a, b) in summed.iter().zip(&report.analytic[0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn forward_is_bit_deterministic() {
    let run = || {
        let mut tape = Tape::training(42);
        let x = tape.leaf(&rand_tensor(3, &[5, 8], 1.0));
        let w = tape.leaf(&rand_tensor(4, &[8, 8], 1.0));
        let h = tape.matmul(x, w).unwrap();
        let h = tape.gelu(h);
        let h = tape.dropout(h, 0.2).unwrap();
        let h = tape.softmax(h).unwrap();
        tape.value(h).to_vec()
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(
        rows in 1usize..6,
        cols in 1usize..9,
        seed in 0u64..1000,
        scale in 0.1f64..50.0,
    ) {
        let mut tape = Tape::new();
        let x = tape.leaf(&rand_tensor(seed, &[rows, cols], scale));
        let y = tape.softmax(x).unwrap();
        for row in tape.value(y).chunks(cols) {
            let s: f64 = row.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn layer_norm_standardises(seed in 0u64..1000, d in 2usize..16, shift in -50.0f64..50.0) {
        let t = rand_tensor(seed, &[3, d], 4.0);
        let data: Vec<f64> = t.data().iter().map(|v| v + shift).collect();
        let mut tape = Tape::new();
        let x = tape.constant(&[3, d], data).unwrap();
        let g = tape.leaf(&Tensor::ones(&[d]));
        let b = tape.leaf(&Tensor::zeros(&[d]));
        let y = tape.layer_norm(x, g, b, 1e-12).unwrap();
        for row in tape.value(y).chunks(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            prop_assert!(mean.abs() < 1e-6);
            prop_assert!((var - 1.0).abs() < 1e-6);
        }
    }
}
