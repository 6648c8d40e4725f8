use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use eegsig::io::{load_recording, save_features, save_recording};
use eegsig::{extract_features, synth_dataset, SynthSpec};
use mvgt::ablation::{ablation_sweep, write_csv as write_ablation_csv};
use mvgt::attention::{mean_attention, token_names, top_k_pairs, write_csv as write_attention_csv};
use mvgt::train::{evaluate, train as fit, write_loss_curve, Control, Dataset, TrainSpec};
use mvgt::{checkpoint, Ablation, GraphNormMode, ModelConfig, Mvgt, MvgtError};

use crate::inputs::{self, FeatureSet};
use crate::{
    AblationArgs, AttentionArgs, EvalArgs, ExtractArgs, FitArgs, ModelArgs, NormArg, SplitArg, SplitArgs,
    SynthArgs, TrainArgs, Usage,
};

pub fn synth(a: &SynthArgs) -> Result<()> {
    let layout = inputs::layout(a.channels_layout.as_deref())?;
    let scheme = inputs::scheme(&a.scheme)?.restrict(&layout)?;
    let base = if a.shift_db == 0.0 {
        SynthSpec::null(a.classes, a.trials, a.seed)
    } else {
        SynthSpec::strong(&scheme, a.classes, a.trials, a.shift_db, a.seed)
    };
    let spec = SynthSpec {
        noise: a.noise,
        trial_jitter_db: a.jitter_db,
        duration_s: a.duration,
        sample_rate_hz: a.sample_rate,
        ..base
    };
    let trials = synth_dataset(&spec, &layout, &scheme)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for t in &trials {
        save_recording(&a.out, &t.id, &t.recording).with_context(|| format!("writing trial {}", t.id))?;
    }
    println!("wrote {} recordings to {}", trials.len(), a.out.display());
    Ok(())
}

pub fn extract(a: &ExtractArgs) -> Result<()> {
    let manifests = inputs::files_with_suffix(&a.input, ".json", Some(".features.json"))?;
    if manifests.is_empty() {
        return Err(MvgtError::Data(format!("no recording manifests in {}", a.input.display())).into());
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for m in &manifests {
        let stem = inputs::stem(m, ".json");
        let rec = load_recording(m).with_context(|| format!("loading {}", m.display()))?;
        let features = extract_features(&rec, a.window_seconds).with_context(|| format!("recording {stem}"))?;
        save_features(&a.out, stem, &features, rec.channel_names())?;
    }
    println!("extracted features for {} recordings into {}", manifests.len(), a.out.display());
    Ok(())
}

fn model_config(m: &ModelArgs, n_classes: usize, f: usize) -> Result<ModelConfig> {
    let config = ModelConfig {
        d: m.hidden,
        k: m.basis,
        layers: m.layers,
        heads: m.heads,
        recycles: m.recycles,
        dropout: m.dropout,
        n_classes,
        t: m.t,
        f,
        ablation: Ablation::flags(!m.no_centrality, !m.no_bre, !m.no_gse, !m.pointwise),
        graph_norm: match m.graph_norm {
            NormArg::Standard => GraphNormMode::Standard,
            NormArg::MinMax => GraphNormMode::MinMax,
        },
        detach_recycles: m.detach_recycles,
        ..ModelConfig::default()
    };
    config.validate()?;
    Ok(config)
}

fn train_spec(f: &FitArgs, seed: u64) -> Result<TrainSpec> {
    let spec = TrainSpec {
        batch_size: f.batch_size,
        lr: f.lr,
        epochs: f.epochs,
        seed,
        weight_decay: f.weight_decay,
        train_fraction: f.train_fraction,
    };
    spec.validate()?;
    Ok(spec)
}

/// Features, layout, scheme and the trial-level split for training commands.
struct Prepared {
    layout: spatial::ElectrodeLayout,
    scheme: spatial::RegionScheme,
    config: ModelConfig,
    train: Dataset,
    test: Dataset,
}

fn prepare(features: &Path, m: &ModelArgs, f: &FitArgs) -> Result<Prepared> {
    let set = inputs::features(features)?;
    let layout = inputs::montage(m.channels_layout.as_deref(), &set.channels)?;
    let scheme = inputs::scheme(&m.scheme)?;
    let data = set.dataset(m.t, m.stride, None)?;
    let config = model_config(m, data.n_classes, data.f)?;
    let (train, test) = data.split_by_trial(f.train_fraction)?;
    Ok(Prepared { layout, scheme, config, train, test })
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let p = prepare(&a.features, &a.model, &a.fit)?;
    let spec = train_spec(&a.fit, a.seed)?;
    let mut model = Mvgt::new(p.config, p.layout, p.scheme, a.seed)?;
    eprintln!(
        "training on {} segments, testing on {} ({} parameters)",
        p.train.len(),
        p.test.len(),
        model.store().numel()
    );
    let report = fit(&mut model, &p.train, &p.test, &spec, |r| {
        eprintln!("epoch {:>3}  loss {:.4}  test acc {:.3}", r.epoch, r.train_loss, r.test_acc);
        Control::Continue
    })?;
    ensure_parent(&a.out)?;
    checkpoint::save(&model, &a.out)?;
    write_loss_curve(&sibling(&a.out, "loss_curve.csv"), &report.curve)?;
    report.eval.write_csv(&sibling(&a.out, "report.csv"))?;
    report.eval.write_confusion_csv(&sibling(&a.out, "confusion.csv"))?;
    println!("test accuracy {:.4}; checkpoint {}", report.eval.accuracy, a.out.display());
    Ok(())
}

/// The checkpoint plus the requested split of a feature directory,
/// segmented the way the model expects.
fn load_for_model(model_path: &Path, features: &Path, s: &SplitArgs) -> Result<(Mvgt, Dataset)> {
    let model = checkpoint::load(model_path).with_context(|| format!("loading {}", model_path.display()))?;
    let set: FeatureSet = inputs::features(features)?;
    if set.channels != model.layout().names() {
        return Err(MvgtError::Data(format!(
            "features in {} have channels that differ from the model's montage",
            features.display()
        ))
        .into());
    }
    let c = model.config();
    let data = set.dataset(c.t, s.stride, Some(c.n_classes))?;
    let data = match s.split {
        SplitArg::All => data,
        SplitArg::Train => data.split_by_trial(s.train_fraction)?.0,
        SplitArg::Test => data.split_by_trial(s.train_fraction)?.1,
    };
    Ok((model, data))
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let (model, data) = load_for_model(&a.model, &a.features, &a.split)?;
    let report = evaluate(&model, &data)?;
    ensure_parent(&a.out)?;
    report.write_csv(&a.out)?;
    report.write_confusion_csv(&sibling(&a.out, "confusion.csv"))?;
    println!("accuracy {:.4} on {} segments", report.accuracy, data.len());
    Ok(())
}

pub fn attention(a: &AttentionArgs) -> Result<()> {
    let (model, data) = load_for_model(&a.model, &a.features, &a.split)?;
    let names = token_names(&model);
    let pairs = names.len() * names.len();
    if a.topk == 0 || a.topk > pairs {
        return Err(Usage(format!("--topk {} outside 1..={pairs}", a.topk)).into());
    }
    let segments: Vec<&[f64]> = data.samples.iter().map(|s| s.x.as_slice()).collect();
    let maps = mean_attention(&model, &segments)?;
    let c = model.config();
    let rows = top_k_pairs(&maps, c.recycles, c.layers, c.heads, &names, a.topk)?;
    ensure_parent(&a.out)?;
    write_attention_csv(&a.out, &rows)?;
    println!("wrote {} attention pairs from {} segments", rows.len(), segments.len());
    Ok(())
}

pub fn ablation(a: &AblationArgs) -> Result<()> {
    if a.seeds.is_empty() {
        return Err(Usage("--seeds is empty".into()).into());
    }
    let p = prepare(&a.features, &a.model, &a.fit)?;
    let spec = train_spec(&a.fit, a.seeds[0])?;
    let base = ModelConfig { ablation: Ablation::FULL, ..p.config };
    let rows = ablation_sweep(&p.train, &p.test, &p.layout, &p.scheme, &base, &spec, &a.seeds)?;
    ensure_parent(&a.out)?;
    write_ablation_csv(&a.out, &rows)?;
    for row in &rows {
        let (mean, std) = row.mean_std();
        let f = row.ablation;
        println!(
            "centrality={} bre={} gse={} inverted={}  acc {:.4} ± {:.4}  failed {}",
            f.use_centrality,
            f.use_bre,
            f.use_gse,
            f.use_inverted,
            mean,
            std,
            row.failed_runs()
        );
    }
    Ok(())
}
