//! Inter-trajectory attention scores and their relation to Born probabilities.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::Array1;
use rayon::prelude::*;

use super::model::temporal_output;
use super::params::ModelParams;
use super::Ablation;
use crate::borndist::{encode_outcome, BornEstimate};
use crate::circuits::TrajectoryRecord;
use crate::stats::{spearman, Welford};
use crate::{Error, Result};

/// Log-spaced bins per decade of `q`.
pub const BINS_PER_DECADE: f64 = 8.0;

/// Query and key projections of the first inter-trajectory layer.
fn projections(params: &ModelParams, record: &TrajectoryRecord) -> Result<(Array1<f64>, Array1<f64>)> {
    let y = Array1::from(temporal_output(params, record, Ablation::Full)?);
    let layer = &params.inter[0];
    Ok((layer.q.dot(&y), layer.k.dot(&y)))
}

/// Unnormalized, unscaled first-layer score `(Q y_i) · (K y_j)`.
pub fn intertraj_scores_raw(params: &ModelParams, record_i: &TrajectoryRecord, record_j: &TrajectoryRecord) -> Result<f64> {
    let (q, _) = projections(params, record_i)?;
    let (_, k) = projections(params, record_j)?;
    Ok(q.dot(&k))
}

/// Scores of every ordered pair `i ≠ j`, row-major `N × N` with zeros on the diagonal.
pub fn intertraj_score_matrix(params: &ModelParams, records: &[TrajectoryRecord]) -> Result<Vec<Vec<f64>>> {
    let proj = records.par_iter().map(|r| projections(params, r)).collect::<Result<Vec<_>>>()?;
    Ok((0..records.len())
        .into_par_iter()
        .map(|i| (0..records.len()).map(|j| if i == j { 0.0 } else { proj[i].0.dot(&proj[j].1) }).collect())
        .collect())
}

/// Mean score of the pairs whose Born product falls in `[q_lo, q_hi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BornScoreRow {
    pub q_lo: f64,
    pub q_hi: f64,
    pub mean_score: f64,
    pub stderr: f64,
    pub pairs: u64,
}

impl BornScoreRow {
    /// Geometric bin center.
    pub fn q_center(&self) -> f64 {
        (self.q_lo * self.q_hi).sqrt()
    }
}

/// Bins ordered pairs `i ≠ j` by `q = p_i p_j` (Born probabilities of the
/// slice-`t` outcomes) and averages `score(i, j)` per bin, ascending in `q`.
pub fn attention_vs_born_with<F>(records: &[TrajectoryRecord], t: usize, born: &BornEstimate, score: F) -> Result<Vec<BornScoreRow>>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    if records.iter().any(|r| r.l != born.l) || t != born.t {
        return Err(Error::Metadata("Born estimate does not describe these records".into()));
    }
    let probs: Vec<f64> = records.iter().map(|r| born.probability(encode_outcome(r.time_slice(t)))).collect();
    if probs.iter().any(|&p| p <= 0.0) {
        return Err(Error::Metadata("a record's outcome is missing from the Born estimate".into()));
    }
    let bins = (0..records.len())
        .into_par_iter()
        .map(|i| {
            let mut local: BTreeMap<i64, Welford> = BTreeMap::new();
            for j in (0..records.len()).filter(|&j| j != i) {
                let bin = (BINS_PER_DECADE * (probs[i] * probs[j]).log10()).floor() as i64;
                local.entry(bin).or_default().push(score(i, j));
            }
            local
        })
        .reduce(BTreeMap::new, |mut a, b| {
            for (k, w) in b {
                a.entry(k).or_default().merge(&w);
            }
            a
        });
    Ok(bins
        .into_iter()
        .map(|(bin, w)| BornScoreRow {
            q_lo: 10f64.powf(bin as f64 / BINS_PER_DECADE),
            q_hi: 10f64.powf((bin + 1) as f64 / BINS_PER_DECADE),
            mean_score: w.mean(),
            stderr: w.stderr(),
            pairs: w.count(),
        })
        .collect())
}

/// [`attention_vs_born_with`] using the model's raw first-layer scores.
pub fn attention_vs_born(params: &ModelParams, records: &[TrajectoryRecord], t: usize, born: &BornEstimate) -> Result<Vec<BornScoreRow>> {
    let proj = records.par_iter().map(|r| projections(params, r)).collect::<Result<Vec<_>>>()?;
    attention_vs_born_with(records, t, born, |i, j| proj[i].0.dot(&proj[j].1))
}

/// Spearman correlation between bin center and mean score.
pub fn born_score_trend(rows: &[BornScoreRow]) -> Option<f64> {
    let q: Vec<f64> = rows.iter().map(|r| r.q_center()).collect();
    let s: Vec<f64> = rows.iter().map(|r| r.mean_score).collect();
    spearman(&q, &s)
}

/// CSV with header `q_lo,q_hi,mean_score,stderr,pairs`.
pub fn write_csv<W: Write>(mut out: W, rows: &[BornScoreRow]) -> Result<()> {
    writeln!(out, "q_lo,q_hi,mean_score,stderr,pairs")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.q_lo, r.q_hi, r.mean_score, r.stderr, r.pairs)?;
    }
    Ok(())
}
