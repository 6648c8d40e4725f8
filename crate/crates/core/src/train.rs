//! Cross-entropy training with AdamW, trial-level splits and evaluation.

use std::collections::BTreeMap;
use std::path::Path;

use eegsig::{segment, FeatureTensor};
use numkit::{AdamW, AdamWConfig, Tape, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MvgtError, Result};
use crate::metrics::{confusion, EvalReport};
use crate::model::Mvgt;

/// Mean negative log-likelihood of the true classes. `logits` is `[B × C]`.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let s = tape.shape(logits).to_vec();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(MvgtError::Data(format!(
            "logits of shape {s:?} for {} labels",
            labels.len()
        )));
    }
    if let Some(i) = labels.iter().position(|&l| l >= s[1]) {
        return Err(MvgtError::Data(format!(
            "label {} at index {i} outside 0..{}",
            labels[i], s[1]
        )));
    }
    let lp = tape.log_softmax(logits)?;
    let picked = tape.pick(lp, labels)?;
    let mean = tape.mean(picked);
    Ok(tape.scale(mean, -1.0))
}

/// One segment with the trial it was cut from.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub trial: String,
    pub label: usize,
    /// `[n × T·f]`
    pub x: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub channel_names: Vec<String>,
    pub t: usize,
    pub f: usize,
    pub n_classes: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Segments every trial's features with window `t` and `stride`. Trials
    /// keep their input order. `n_classes` defaults to the largest label + 1.
    pub fn from_trials(
        trials: &[(String, FeatureTensor)],
        channel_names: &[String],
        t: usize,
        stride: usize,
        n_classes: Option<usize>,
    ) -> Result<Self> {
        if trials.is_empty() {
            return Err(MvgtError::Data("no trials".into()));
        }
        let mut samples = Vec::new();
        let mut f = 0;
        for (id, feats) in trials {
            if feats.n_channels() != channel_names.len() {
                return Err(MvgtError::Data(format!(
                    "trial {id} has {} channels, expected {}",
                    feats.n_channels(),
                    channel_names.len()
                )));
            }
            let batch = segment(feats, t, stride)?;
            f = batch.n_bands();
            for s in 0..batch.len() {
                samples.push(Sample {
                    trial: id.clone(),
                    label: batch.labels()[s],
                    x: batch.segment(s).to_vec(),
                });
            }
        }
        let max_label = samples.iter().map(|s| s.label).max().unwrap_or(0);
        let n_classes = n_classes.unwrap_or(max_label + 1);
        if max_label >= n_classes {
            return Err(MvgtError::Data(format!("label {max_label} with only {n_classes} classes")));
        }
        Ok(Dataset {
            channel_names: channel_names.to_vec(),
            t,
            f,
            n_classes,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Distinct trial ids in first-appearance order.
    pub fn trials(&self) -> Vec<&str> {
        let mut seen = Vec::new();
        for s in &self.samples {
            if !seen.contains(&s.trial.as_str()) {
                seen.push(s.trial.as_str());
            }
        }
        seen
    }

    fn with_samples(&self, samples: Vec<Sample>) -> Self {
        Dataset {
            channel_names: self.channel_names.clone(),
            t: self.t,
            f: self.f,
            n_classes: self.n_classes,
            samples,
        }
    }

    /// Splits by trial: within each class the first `round(fraction · n)`
    /// trials (at least one, and leaving at least one) go to training.
    pub fn split_by_trial(&self, train_fraction: f64) -> Result<(Dataset, Dataset)> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(MvgtError::Config(format!("train fraction {train_fraction} outside (0, 1)")));
        }
        let mut by_class: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
        for s in &self.samples {
            let list = by_class.entry(s.label).or_default();
            if !list.contains(&s.trial.as_str()) {
                list.push(s.trial.as_str());
            }
        }
        let mut train_ids = Vec::new();
        for (class, ids) in &by_class {
            if ids.len() < 2 {
                return Err(MvgtError::Data(format!(
                    "class {class} has {} trial(s); a trial-level split needs two",
                    ids.len()
                )));
            }
            let k = ((train_fraction * ids.len() as f64).round() as usize).clamp(1, ids.len() - 1);
            train_ids.extend_from_slice(&ids[..k]);
        }
        let (train, test): (Vec<Sample>, Vec<Sample>) = self
            .samples
            .iter()
            .cloned()
            .partition(|s| train_ids.contains(&s.trial.as_str()));
        Ok((self.with_samples(train), self.with_samples(test)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub train_fraction: f64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            batch_size: 32,
            lr: 1e-3,
            epochs: 50,
            seed: 0,
            weight_decay: 0.1,
            train_fraction: 0.6,
        }
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(MvgtError::Config("batch size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr <= 1.0) {
            return Err(MvgtError::Config(format!("learning rate {} outside [0, 1]", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(MvgtError::Config(format!("weight decay {}", self.weight_decay)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub test_acc: f64,
}

/// Whether training continues after an epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub curve: Vec<EpochRecord>,
    pub eval: EvalReport,
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Dropout seed for one segment of one step.
fn tape_seed(seed: u64, step: u64, index: u64) -> u64 {
    mix(mix(seed ^ 0x6d76_6774) ^ mix(step.wrapping_add(1)) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Accumulates into the model's parameter gradients the gradient of the
/// mean cross-entropy over `batch`, and returns that loss.
///
/// Spatial encodings are computed once on a shared tape. Each segment then
/// runs on its own training tape with the encodings as tracked leaves; their
/// adjoints are summed and pushed back through the shared tape.
pub fn accumulate_batch_gradient(model: &mut Mvgt, batch: &[&Sample], seed: u64, step: u64) -> Result<f64> {
    if batch.is_empty() {
        return Err(MvgtError::Data("empty batch".into()));
    }
    let mut shared = Tape::new();
    let sv = model.spatial_forward(&mut shared)?;
    let values = sv.map(|v| crate::model::SpatialValues {
        centrality: shared.tensor(v.centrality),
        region: shared.tensor(v.region),
        bias: shared.tensor(v.bias),
    });
    let mut enc_adjoint: [Option<Vec<f64>>; 3] = [None, None, None];
    let weight = 1.0 / batch.len() as f64;
    let mut loss_sum = 0.0;
    for (i, sample) in batch.iter().enumerate() {
        let mut tape = Tape::training(tape_seed(seed, step, i as u64));
        let enc = model.encoding_leaves(&mut tape, values.as_ref(), true)?;
        let logits = model.forward_segment(&mut tape, &sample.x, &enc, None)?;
        let ce = cross_entropy(&mut tape, logits, &[sample.label])?;
        let loss = tape.scale(ce, weight);
        let value = tape.scalar(ce);
        if !value.is_finite() {
            return Err(MvgtError::NonFinite(format!(
                "loss {value} on segment of trial {} at step {step}",
                sample.trial
            )));
        }
        loss_sum += value;
        let grads = tape.backward(loss)?;
        model.store_mut().accumulate(&grads)?;
        for (slot, var) in enc_adjoint.iter_mut().zip([enc.centrality, enc.region, enc.bias]) {
            if let Some(g) = grads.wrt(var) {
                match slot {
                    Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                    None => *slot = Some(g.to_vec()),
                }
            }
        }
    }
    if let Some(v) = sv {
        let seeds: Vec<(Var, Vec<f64>)> = [v.centrality, v.region, v.bias]
            .into_iter()
            .zip(enc_adjoint)
            .filter_map(|(var, g)| g.map(|g| (var, g)))
            .collect();
        if !seeds.is_empty() {
            let grads = shared.backward_seeded(seeds)?;
            model.store_mut().accumulate(&grads)?;
        }
    }
    Ok(loss_sum * weight)
}

/// Mean cross-entropy of `batch` with every segment on one tape, including
/// the spatial encodings. Slower than [`accumulate_batch_gradient`] but a
/// single differentiable graph, which is what gradient checks need.
pub fn batch_loss_single_tape(model: &Mvgt, tape: &mut Tape, batch: &[&Sample]) -> Result<Var> {
    let sv = model.spatial_forward(tape)?;
    let enc = model.encoding_vars(tape, sv)?;
    let logits: Vec<Var> = batch
        .iter()
        .map(|s| model.forward_segment(tape, &s.x, &enc, None))
        .collect::<Result<_>>()?;
    let all = if logits.len() == 1 {
        logits[0]
    } else {
        tape.concat(&logits, 0)?
    };
    let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
    cross_entropy(tape, all, &labels)
}

/// Evaluation-mode accuracy and confusion matrix.
pub fn evaluate(model: &Mvgt, data: &Dataset) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(MvgtError::Data("evaluation set is empty".into()));
    }
    let xs: Vec<&[f64]> = data.samples.iter().map(|s| s.x.as_slice()).collect();
    let logits = model.logits(&xs)?;
    if let Some(i) = logits.iter().position(|v| !v.is_finite()) {
        return Err(MvgtError::NonFinite(format!(
            "non-finite logit for segment {}",
            i / model.config().n_classes
        )));
    }
    Ok(EvalReport::from_confusion(confusion(
        &logits,
        &data.labels(),
        model.config().n_classes,
    )?))
}

/// Trains for `spec.epochs` epochs, evaluating on `test` after each one.
/// `observer` sees every epoch record and may stop training early.
pub fn train(
    model: &mut Mvgt,
    train: &Dataset,
    test: &Dataset,
    spec: &TrainSpec,
    mut observer: impl FnMut(&EpochRecord) -> Control,
) -> Result<TrainReport> {
    spec.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(MvgtError::Data(format!(
            "empty split: {} training and {} test segments",
            train.len(),
            test.len()
        )));
    }
    let c = model.config();
    if train.n_classes != c.n_classes || train.t != c.t || train.f != c.f {
        return Err(MvgtError::Config(format!(
            "data has {} classes, T={}, f={}; model expects {}, {}, {}",
            train.n_classes, train.t, train.f, c.n_classes, c.t, c.f
        )));
    }
    let mut opt = AdamW::new(
        AdamWConfig {
            lr: spec.lr,
            weight_decay: spec.weight_decay,
            ..AdamWConfig::default()
        },
        model.store(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = Vec::with_capacity(spec.epochs);
    let mut step = 0u64;
    for epoch in 1..=spec.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(spec.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train.samples[i]).collect();
            model.store_mut().zero_grad();
            let loss = accumulate_batch_gradient(model, &batch, spec.seed, step)
                .map_err(|e| match e {
                    MvgtError::NonFinite(m) => MvgtError::NonFinite(format!("epoch {epoch}: {m}")),
                    e => e,
                })?;
            opt.step(model.store_mut()).map_err(|e| match e {
                numkit::NumError::NonFinite { context } => {
                    MvgtError::NonFinite(format!("epoch {epoch}, step {step}: {context}"))
                }
                e => e.into(),
            })?;
            total += loss * batch.len() as f64;
            step += 1;
        }
        let record = EpochRecord {
            epoch,
            train_loss: total / train.len() as f64,
            test_acc: evaluate(model, test)?.accuracy,
        };
        curve.push(record);
        if observer(&record) == Control::Stop {
            break;
        }
    }
    let mut eval = evaluate(model, test)?;
    eval.loss_curve = curve.iter().map(|r| r.train_loss).collect();
    Ok(TrainReport { curve, eval })
}

/// `epoch,train_loss,test_acc` with shortest round-trip float formatting.
pub fn write_loss_curve(path: &Path, curve: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss", "test_acc"])?;
    for r in curve {
        w.write_record([r.epoch.to_string(), r.train_loss.to_string(), r.test_acc.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_c() {
        let mut tape = Tape::new();
        let z = tape.constant(&[2, 3], vec![0.0; 6]).unwrap();
        let l = cross_entropy(&mut tape, z, &[0, 2]).unwrap();
        assert!((tape.scalar(l) - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn confident_true_class_gives_small_loss() {
        let mut tape = Tape::new();
        let z = tape.constant(&[1, 3], vec![60.0, 0.0, 0.0]).unwrap();
        let l = cross_entropy(&mut tape, z, &[0]).unwrap();
        assert!(tape.scalar(l) < 1e-20);
    }

    #[test]
    fn label_out_of_range_is_data_error() {
        let mut tape = Tape::new();
        let z = tape.constant(&[2, 3], vec![0.0; 6]).unwrap();
        let err = cross_entropy(&mut tape, z, &[0, 3]).unwrap_err();
        assert!(matches!(err, MvgtError::Data(_)));
        assert!(err.to_string().contains("index 1"));
    }

    #[test]
    fn tape_seeds_differ() {
        assert_ne!(tape_seed(1, 0, 0), tape_seed(1, 0, 1));
        assert_ne!(tape_seed(1, 0, 0), tape_seed(1, 1, 0));
        assert_ne!(tape_seed(1, 0, 0), tape_seed(2, 0, 0));
    }
}
