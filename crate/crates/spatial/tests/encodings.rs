use numkit::gradcheck::{check, weighted_sum};
use numkit::init::uniform;
use numkit::{ParamStore, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spatial::{
    bias_projection, centrality_encoding, gaussian_basis, pairwise_distances, region_encoding,
    ElectrodeLayout, GaussianBasisBank, RegionScheme, SchemeKind,
};

fn rand_tensor(seed: u64, shape: &[usize], scale: f64) -> Tensor {
    uniform(&mut ChaCha8Rng::seed_from_u64(seed), shape, scale)
}

fn random_layout(seed: u64, n: usize) -> ElectrodeLayout {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = (0..n)
        .map(|_| {
            let v: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.0)];
            let r = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            [v[0] / r, v[1] / r, v[2] / r]
        })
        .collect();
    ElectrodeLayout::new((0..n).map(|i| format!("ch{i}")).collect(), coords).unwrap()
}

#[test]
fn distances_match_brute_force() {
    let layout = ElectrodeLayout::standard_62();
    let d = pairwise_distances(&layout);
    let n = layout.len();
    let c = layout.coords();
    for i in 0..n {
        assert_eq!(d[i * n + i], 0.0);
        for j in 0..n {
            let dx = c[i][0] - c[j][0];
            let dy = c[i][1] - c[j][1];
            let dz = c[i][2] - c[j][2];
            let oracle = (dx * dx + dy * dy + dz * dz).sqrt();
            assert!((d[i * n + j] - oracle).abs() <= 1e-12);
            assert_eq!(d[i * n + j], d[j * n + i]);
            for k in 0..n {
                assert!(d[i * n + k] <= d[i * n + j] + d[j * n + k] + 1e-12);
            }
        }
    }
}

#[test]
fn default_basis_peaks_at_nearest_mean() {
    let layout = random_layout(5, 7);
    let n = layout.len();
    let dist = pairwise_distances(&layout);
    let k = 6;
    let mut store = ParamStore::new();
    let bank = GaussianBasisBank::register(&mut store, "b", &dist, n, k).unwrap();
    let mut tape = Tape::new();
    let dv = tape.constant(&[n, n], dist.clone()).unwrap();
    let b = bank.forward(&mut tape, &store, dv).unwrap();
    let vals = tape.value(b);
    let mu = store.get(bank.mu).data();
    for p in 0..n * n {
        let row = &vals[p * k..(p + 1) * k];
        let argmax = (0..k).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        let nearest = (0..k)
            .min_by(|&a, &b| (mu[a] - dist[p]).abs().total_cmp(&(mu[b] - dist[p]).abs()))
            .unwrap();
        assert_eq!(argmax, nearest, "pair {p}, distance {}", dist[p]);
    }
}

#[test]
fn gaussian_basis_gradients() {
    for seed in 0..10u64 {
        let n = 3;
        let k = 4;
        let layout = random_layout(seed, n);
        let dist = pairwise_distances(&layout);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mu = Tensor::new(vec![k], (0..k).map(|_| rng.gen_range(0.0..2.0)).collect()).unwrap();
        let sigma = Tensor::new(vec![k], (0..k).map(|_| rng.gen_range(0.3..1.0)).collect()).unwrap();
        let alpha = Tensor::new(vec![n, n], (0..n * n).map(|_| rng.gen_range(0.5..1.5)).collect()).unwrap();
        let beta = rand_tensor(seed + 9, &[n, n], 0.3);
        let report = check(&[mu, sigma, alpha, beta], 1e-5, |tape, v| {
            let dv = tape.constant(&[n, n], dist.clone())?;
            let b = gaussian_basis(tape, v[0], v[1], v[2], v[3], dv).map_err(|e| match e {
                spatial::SpatialError::Numeric(n) => n,
                other => panic!("{other}"),
            })?;
            weighted_sum(tape, b, seed)
        })
        .unwrap();
        assert!(report.rel_errors[0] < 1e-5, "mu {}", report.rel_errors[0]);
        assert!(report.max_rel_error() < 1e-5, "{:?}", report.rel_errors);
    }
}

#[test]
fn identity_affine_gives_symmetric_encoding() {
    let layout = random_layout(2, 5);
    let n = layout.len();
    let dist = pairwise_distances(&layout);
    let mut store = ParamStore::new();
    let bank = GaussianBasisBank::register(&mut store, "b", &dist, n, 3).unwrap();
    let mut tape = Tape::new();
    let dv = tape.constant(&[n, n], dist.clone()).unwrap();
    let b = bank.forward(&mut tape, &store, dv).unwrap();
    let v = tape.value(b);
    for i in 0..n {
        for j in 0..n {
            for k in 0..3 {
                assert_eq!(v[(i * n + j) * 3 + k], v[(j * n + i) * 3 + k]);
            }
        }
    }

    // A learned β on one ordered pair breaks the symmetry for that pair only.
    let beta = store.get(bank.beta).data().to_vec();
    let mut beta2 = beta;
    beta2[1] = 0.4;
    store.set_data(bank.beta, &beta2).unwrap();
    let mut tape = Tape::new();
    let dv = tape.constant(&[n, n], dist).unwrap();
    let b = bank.forward(&mut tape, &store, dv).unwrap();
    let v = tape.value(b);
    assert_ne!(v[n * 3], v[3]);
}

#[test]
fn centrality_matches_triple_loop() {
    for seed in 0..10u64 {
        let (n, k, d) = (7, 5, 4);
        let b = rand_tensor(seed, &[n, n, k], 2.0);
        let w = rand_tensor(seed + 1, &[k, d], 1.0);
        let mut tape = Tape::new();
        let bv = tape.leaf(&b);
        let wv = tape.leaf(&w);
        let e = tape.sum_axis(bv, 1).unwrap();
        let e = tape.value(e).to_vec();
        let c = centrality_encoding(&mut tape, bv, wv).unwrap();
        let bd = b.data();
        for i in 0..n {
            for kk in 0..k {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += bd[(i * n + j) * k + kk];
                }
                assert!((e[i * k + kk] - acc).abs() <= 1e-12);
            }
        }
        for i in 0..n {
            for dd in 0..d {
                let mut acc = 0.0;
                for kk in 0..k {
                    let mut s = 0.0;
                    for j in 0..n {
                        s += bd[(i * n + j) * k + kk];
                    }
                    acc += s * w.data()[kk * d + dd];
                }
                assert!((tape.value(c)[i * d + dd] - acc).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn region_gradient_counts_members() {
    let layout = ElectrodeLayout::standard_62();
    let scheme = RegionScheme::builtin(SchemeKind::Lobe).unwrap();
    let idx = scheme.tag_indices(&layout).unwrap();
    let d = 3;
    let table = rand_tensor(4, &[scheme.n_regions(), d], 1.0).with_grad();
    let mut tape = Tape::new();
    let tv = tape.leaf(&table);
    let r = region_encoding(&mut tape, tv, &idx).unwrap();
    let vals = tape.value(r).to_vec();
    for i in 0..62 {
        for j in 0..62 {
            let same_rows = vals[i * d..(i + 1) * d] == vals[j * d..(j + 1) * d];
            assert_eq!(same_rows, idx[i] == idx[j]);
        }
    }
    let loss = tape.sum(r);
    let grads = tape.backward(loss).unwrap();
    let g = grads.wrt(tv).unwrap();
    for t in 0..scheme.n_regions() {
        let count = idx.iter().filter(|&&i| i == t).count() as f64;
        assert!(g[t * d..(t + 1) * d].iter().all(|&v| v == count));
    }
}

#[test]
fn single_region_rows_identical() {
    let layout = random_layout(1, 4);
    let mut tape = Tape::new();
    let table = tape.leaf(&rand_tensor(3, &[2, 5], 1.0));
    let r = region_encoding(&mut tape, table, &vec![1; layout.len()]).unwrap();
    let v = tape.value(r);
    for row in v.chunks(5) {
        assert_eq!(row, &v[..5]);
    }
}

#[test]
fn hemisphere_separates_fp1_fp2_after_update() {
    let layout = ElectrodeLayout::standard_62();
    let scheme = RegionScheme::builtin(SchemeKind::Hemisphere).unwrap();
    let idx = scheme.tag_indices(&layout).unwrap();
    let (fp1, fp2) = (layout.index_of("FP1").unwrap(), layout.index_of("FP2").unwrap());
    assert_ne!(idx[fp1], idx[fp2]);
    // Identical initial rows diverge once a loss touches only FP1.
    let table = Tensor::zeros(&[scheme.n_regions(), 2]).with_grad();
    let mut tape = Tape::new();
    let tv = tape.leaf(&table);
    let r = region_encoding(&mut tape, tv, &idx).unwrap();
    let row = tape.slice_lastdim(r, 0, 1).unwrap();
    let picked = tape.index_rows(row, &[fp1]).unwrap();
    let loss = tape.sum(picked);
    let g = tape.backward(loss).unwrap();
    let g = g.wrt(tv).unwrap();
    let updated: Vec<f64> = table.data().iter().zip(g).map(|(p, g)| p - 0.1 * g).collect();
    assert_ne!(&updated[idx[fp1] * 2..idx[fp1] * 2 + 2], &updated[idx[fp2] * 2..idx[fp2] * 2 + 2]);
}

#[test]
fn projection_gradients() {
    for seed in 0..10u64 {
        let (n, k, m) = (3, 4, 2);
        let ins = vec![
            rand_tensor(seed, &[n, n, k], 1.0),
            rand_tensor(seed + 1, &[k, k], 0.8),
            rand_tensor(seed + 2, &[k], 0.3),
            rand_tensor(seed + 3, &[k, m], 0.8),
            rand_tensor(seed + 4, &[m], 0.3),
        ];
        let report = check(&ins, 1e-5, |tape, v| {
            let o = bias_projection(tape, v[0], v[1], v[2], v[3], v[4]).map_err(|e| match e {
                spatial::SpatialError::Numeric(n) => n,
                other => panic!("{other}"),
            })?;
            weighted_sum(tape, o, seed)
        })
        .unwrap();
        assert!(report.max_rel_error() < 1e-5, "{:?}", report.rel_errors);
    }
}

#[test]
fn projection_is_permutation_equivariant() {
    let (n, k, m) = (5, 3, 2);
    let b = rand_tensor(1, &[n, n, k], 1.0);
    let perm = [3usize, 0, 4, 1, 2];
    let mut permuted = vec![0.0; n * n * k];
    for i in 0..n {
        for j in 0..n {
            for kk in 0..k {
                permuted[(perm[i] * n + perm[j]) * k + kk] = b.data()[(i * n + j) * k + kk];
            }
        }
    }
    let run = |data: Vec<f64>| {
        let mut tape = Tape::new();
        let bv = tape.constant(&[n, n, k], data).unwrap();
        let w1 = tape.leaf(&rand_tensor(2, &[k, k], 1.0));
        let b1 = tape.leaf(&rand_tensor(3, &[k], 1.0));
        let w2 = tape.leaf(&rand_tensor(4, &[k, m], 1.0));
        let b2 = tape.leaf(&rand_tensor(5, &[m], 1.0));
        let o = bias_projection(&mut tape, bv, w1, b1, w2, b2).unwrap();
        tape.value(o).to_vec()
    };
    let out = run(b.data().to_vec());
    let out_p = run(permuted);
    for i in 0..n {
        for j in 0..n {
            for mm in 0..m {
                assert_eq!(out_p[(perm[i] * n + perm[j]) * m + mm], out[(i * n + j) * m + mm]);
            }
        }
    }
}

proptest! {
    #[test]
    fn basis_output_positive_and_finite(
        seed in 0u64..500,
        mu in proptest::collection::vec(-3.0f64..3.0, 3),
        sigma in proptest::collection::vec(0.3f64..2.0, 3),
    ) {
        let n = 4;
        let layout = random_layout(seed, n);
        let dist = pairwise_distances(&layout);
        let mut tape = Tape::new();
        let mu = tape.constant(&[3], mu).unwrap();
        let sigma = tape.constant(&[3], sigma).unwrap();
        let alpha = tape.leaf(&rand_tensor(seed, &[n, n], 2.0));
        let beta = tape.leaf(&rand_tensor(seed + 1, &[n, n], 0.5));
        let dv = tape.constant(&[n, n], dist).unwrap();
        let b = gaussian_basis(&mut tape, mu, sigma, alpha, beta, dv).unwrap();
        prop_assert!(tape.value(b).iter().all(|&v| v > 0.0 && v.is_finite()));
    }
}
