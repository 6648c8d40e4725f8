//! Trains every component combination over several seeds.

use std::path::Path;

use serde::Serialize;
use spatial::{ElectrodeLayout, RegionScheme};

use crate::config::{Ablation, ModelConfig};
use crate::error::Result;
use crate::model::Mvgt;
use crate::train::{train, Control, Dataset, TrainSpec};

/// Outcome of one (flags, seed) run.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRun {
    pub seed: u64,
    /// `None` when the run failed numerically.
    pub accuracy: Option<f64>,
    pub epochs: usize,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub ablation: Ablation,
    pub runs: Vec<AblationRun>,
}

impl AblationRow {
    fn accuracies(&self) -> Vec<f64> {
        self.runs.iter().filter_map(|r| r.accuracy).collect()
    }

    pub fn failed_runs(&self) -> usize {
        self.runs.iter().filter(|r| r.accuracy.is_none()).count()
    }

    /// Mean and population standard deviation over completed runs.
    pub fn mean_std(&self) -> (f64, f64) {
        let a = self.accuracies();
        if a.is_empty() {
            return (f64::NAN, f64::NAN);
        }
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        let var = a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }
}

/// Runs the nine rows of [`Ablation::ROWS`] for each seed. The seed sets
/// both initialisation and training randomness. Numeric failures are
/// recorded on the run; any other error aborts the sweep.
pub fn ablation_sweep(
    train_set: &Dataset,
    test_set: &Dataset,
    layout: &ElectrodeLayout,
    scheme: &RegionScheme,
    base: &ModelConfig,
    spec: &TrainSpec,
    seeds: &[u64],
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(Ablation::ROWS.len());
    for ablation in Ablation::ROWS {
        let config = ModelConfig {
            ablation,
            ..base.clone()
        };
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut model = Mvgt::new(config.clone(), layout.clone(), scheme.clone(), seed)?;
            let spec = TrainSpec { seed, ..spec.clone() };
            match train(&mut model, train_set, test_set, &spec, |_| Control::Continue) {
                Ok(report) => runs.push(AblationRun {
                    seed,
                    accuracy: Some(report.eval.accuracy),
                    epochs: report.curve.len(),
                    error: None,
                }),
                Err(e) if e.is_numeric() => runs.push(AblationRun {
                    seed,
                    accuracy: None,
                    epochs: 0,
                    error: Some(e.to_string()),
                }),
                Err(e) => return Err(e),
            }
        }
        rows.push(AblationRow { ablation, runs });
    }
    Ok(rows)
}

#[derive(Serialize)]
struct CsvRow {
    centrality: bool,
    bre: bool,
    gse: bool,
    inverted: bool,
    seeds: usize,
    failed: usize,
    mean_acc: f64,
    std_acc: f64,
    accuracies: String,
}

/// One line per row: flags, seed count, failed runs, mean/std accuracy and
/// the per-seed accuracies joined by `;`.
pub fn write_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        let (mean, std) = row.mean_std();
        let a = row.ablation;
        w.serialize(CsvRow {
            centrality: a.use_centrality,
            bre: a.use_bre,
            gse: a.use_gse,
            inverted: a.use_inverted,
            seeds: row.runs.len(),
            failed: row.failed_runs(),
            mean_acc: mean,
            std_acc: std,
            accuracies: row
                .runs
                .iter()
                .map(|r| r.accuracy.map_or("nan".to_string(), |v| v.to_string()))
                .collect::<Vec<_>>()
                .join(";"),
        })?;
    }
    w.flush()?;
    Ok(())
}
