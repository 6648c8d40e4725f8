//! Averaged attention maps and top-k channel-pair export.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MvgtError, Result};
use crate::model::Mvgt;

/// Post-softmax attention `[R × L × M × tokens × tokens]` averaged over
/// `segments` in evaluation mode.
pub fn mean_attention(model: &Mvgt, segments: &[&[f64]]) -> Result<Vec<f64>> {
    if segments.is_empty() {
        return Err(MvgtError::Data("no segments to average attention over".into()));
    }
    let mut sum: Vec<f64> = Vec::new();
    for seg in segments {
        let (_, maps) = model.forward_with_attention(seg)?;
        if sum.is_empty() {
            sum = maps;
        } else {
            sum.iter_mut().zip(&maps).for_each(|(a, b)| *a += b);
        }
    }
    let n = segments.len() as f64;
    sum.iter_mut().for_each(|v| *v /= n);
    Ok(sum)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionExportRow {
    pub recycle_iter: usize,
    pub layer: usize,
    pub head: usize,
    pub src_channel: String,
    pub dst_channel: String,
    pub weight: f64,
}

/// Token labels: channel names for channel tokens, `t0, t1, …` for time
/// tokens.
pub fn token_names(model: &Mvgt) -> Vec<String> {
    if model.config().ablation.use_inverted {
        model.layout().names().to_vec()
    } else {
        (0..model.config().t).map(|t| format!("t{t}")).collect()
    }
}

/// Top-`k` `(src, dst)` pairs of every (layer, head) map in the final
/// recycling pass, by descending weight; ties go to the smaller
/// `(src, dst)` index pair.
pub fn top_k_pairs(
    maps: &[f64],
    recycles: usize,
    layers: usize,
    heads: usize,
    names: &[String],
    k: usize,
) -> Result<Vec<AttentionExportRow>> {
    let tok = names.len();
    let block = tok * tok;
    if maps.len() != recycles * layers * heads * block {
        return Err(MvgtError::Data(format!(
            "{} attention weights for {recycles}×{layers}×{heads} maps of {tok}×{tok}",
            maps.len()
        )));
    }
    if k == 0 || k > block {
        return Err(MvgtError::Config(format!("top-k of {k} outside 1..={block}")));
    }
    let r = recycles - 1;
    let mut rows = Vec::with_capacity(layers * heads * k);
    for l in 0..layers {
        for m in 0..heads {
            let start = ((r * layers + l) * heads + m) * block;
            let map = &maps[start..start + block];
            let mut idx: Vec<usize> = (0..block).collect();
            idx.sort_by(|&a, &b| map[b].total_cmp(&map[a]).then(a.cmp(&b)));
            rows.extend(idx[..k].iter().map(|&p| AttentionExportRow {
                recycle_iter: r,
                layer: l,
                head: m,
                src_channel: names[p / tok].clone(),
                dst_channel: names[p % tok].clone(),
                weight: map[p],
            }));
        }
    }
    Ok(rows)
}

pub fn write_csv(path: &Path, rows: &[AttentionExportRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
