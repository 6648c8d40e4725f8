#![allow(dead_code)]

use eegsig::{extract_features, synth_dataset, SynthSpec};
use mvgt::train::{batch_loss_single_tape, Dataset, Sample};
use mvgt::{Ablation, ModelConfig, Mvgt};
use numkit::Tape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spatial::{ElectrodeLayout, RegionScheme, SchemeKind};

pub const TOY_CHANNELS: [&str; 6] = ["FP1", "FP2", "C3", "C4", "O1", "O2"];

pub fn toy_layout() -> ElectrodeLayout {
    let names: Vec<String> = TOY_CHANNELS.iter().map(|s| s.to_string()).collect();
    ElectrodeLayout::standard_62().subset(&names).unwrap()
}

pub fn lobe() -> RegionScheme {
    RegionScheme::builtin(SchemeKind::Lobe).unwrap()
}

/// n=6, d=8, L=2, M=2, K=4, R=2, dropout off.
pub fn toy_config(ablation: Ablation) -> ModelConfig {
    ModelConfig {
        d: 8,
        k: 4,
        layers: 2,
        heads: 2,
        recycles: 2,
        dropout: 0.0,
        ablation,
        ..ModelConfig::default()
    }
}

pub fn toy_model(ablation: Ablation, seed: u64) -> Mvgt {
    Mvgt::new(toy_config(ablation), toy_layout(), lobe(), seed).unwrap()
}

pub fn random_samples(model: &Mvgt, count: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = model.config().n_classes;
    (0..count)
        .map(|i| Sample {
            trial: format!("r{i}"),
            label: i % c,
            x: (0..model.segment_len()).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        })
        .collect()
}

/// Gradient norm below which a relative error is measured against this
/// floor instead. Some parameters (a per-head constant attention bias, for
/// instance) have an exactly zero gradient, leaving only rounding noise.
pub const GRAD_FLOOR: f64 = 1e-6;

pub fn floored_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(GRAD_FLOOR)
}

fn loss(model: &Mvgt, batch: &[&Sample]) -> f64 {
    let mut tape = Tape::new();
    let l = batch_loss_single_tape(model, &mut tape, batch).unwrap();
    tape.scalar(l)
}

/// Largest per-parameter relative error between reverse-mode gradients and
/// central differences of the batch loss, with the offending name.
pub fn parameter_gradcheck(model: &Mvgt, batch: &[&Sample], h: f64) -> (f64, String) {
    let mut tape = Tape::new();
    let l = batch_loss_single_tape(model, &mut tape, batch).unwrap();
    let grads = tape.backward(l).unwrap();
    let mut analytic: Vec<Vec<f64>> = model.store().iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect();
    for (id, g) in grads.params() {
        analytic[id.index()].iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    let mut work = model.clone();
    let mut worst = (0.0, String::new());
    let ids: Vec<_> = model.store().ids().collect();
    for id in ids {
        let n = model.store().get(id).numel();
        let mut numeric = vec![0.0; n];
        for (j, g) in numeric.iter_mut().enumerate() {
            let orig = model.store().get(id).data()[j];
            work.store_mut().get_mut(id).data_mut()[j] = orig + h;
            let up = loss(&work, batch);
            work.store_mut().get_mut(id).data_mut()[j] = orig - h;
            let down = loss(&work, batch);
            work.store_mut().get_mut(id).data_mut()[j] = orig;
            *g = (up - down) / (2.0 * h);
        }
        let e = floored_error(&analytic[id.index()], &numeric);
        if e > worst.0 {
            worst = (e, model.store().name(id).to_string());
        }
    }
    worst
}

/// Strong-signal synthetic corpus (3 classes, one lobe raised per class),
/// features at 1 s windows and segments of T=5, split 60/40 by trial.
pub fn strong_split(seed: u64, trials_per_class: usize, shift_db: f64) -> (Dataset, Dataset) {
    let layout = ElectrodeLayout::standard_62();
    let spec = SynthSpec::strong(&lobe(), 3, trials_per_class, shift_db, seed);
    synth_split(&spec, &layout)
}

pub fn synth_split(spec: &SynthSpec, layout: &ElectrodeLayout) -> (Dataset, Dataset) {
    let trials: Vec<(String, eegsig::FeatureTensor)> = synth_dataset(spec, layout, &lobe())
        .unwrap()
        .into_iter()
        .map(|t| (t.id, extract_features(&t.recording, 1.0).unwrap()))
        .collect();
    let data = Dataset::from_trials(&trials, layout.names(), 5, 1, Some(spec.n_classes)).unwrap();
    data.split_by_trial(0.6).unwrap()
}

/// Multinomial logistic regression on time-averaged, standardised segment
/// features, fitted by full-batch gradient descent. Returns test accuracy.
pub fn linear_probe(train: &Dataset, test: &Dataset) -> f64 {
    let (t, f) = (train.t, train.f);
    let reduce = |s: &Sample| -> Vec<f64> {
        s.x.chunks(t * f)
            .flat_map(|ch| (0..f).map(move |b| (0..t).map(|tau| ch[tau * f + b]).sum::<f64>() / t as f64))
            .collect()
    };
    let xs: Vec<Vec<f64>> = train.samples.iter().map(reduce).collect();
    let dim = xs[0].len();
    let mean: Vec<f64> = (0..dim).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / xs.len() as f64).collect();
    let sd: Vec<f64> = (0..dim)
        .map(|j| {
            let v = xs.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / xs.len() as f64;
            v.sqrt().max(1e-9)
        })
        .collect();
    let standardise = |x: Vec<f64>| -> Vec<f64> { x.iter().enumerate().map(|(j, v)| (v - mean[j]) / sd[j]).collect() };
    let xs: Vec<Vec<f64>> = xs.into_iter().map(standardise).collect();
    let c = train.n_classes;
    let mut w = vec![0.0; c * (dim + 1)];
    let logits = |w: &[f64], x: &[f64]| -> Vec<f64> {
        (0..c)
            .map(|k| {
                let row = &w[k * (dim + 1)..(k + 1) * (dim + 1)];
                row[dim] + row[..dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    };
    for _ in 0..200 {
        let mut g = vec![0.0; w.len()];
        for (x, s) in xs.iter().zip(&train.samples) {
            let z = logits(&w, x);
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let total: f64 = e.iter().sum();
            for k in 0..c {
                let d = e[k] / total - if k == s.label { 1.0 } else { 0.0 };
                let row = &mut g[k * (dim + 1)..(k + 1) * (dim + 1)];
                for j in 0..dim {
                    row[j] += d * x[j];
                }
                row[dim] += d;
            }
        }
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= 0.1 * gi / xs.len() as f64;
        }
    }
    let correct = test
        .samples
        .iter()
        .filter(|s| {
            let z = logits(&w, &standardise(reduce(s)));
            let pred = (0..c).fold(0, |b, k| if z[k] > z[b] { k } else { b });
            pred == s.label
        })
        .count();
    correct as f64 / test.len() as f64
}
