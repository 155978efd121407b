//! Reference-qubit order parameter: mean final entropy `⟨S_Q⟩` of a probe qubit
//! Bell-paired with the system before scrambling, swept over `L` and `γ`, and
//! the crossing of two system sizes.

use std::io::Write;

use crate::circuits::{CircuitConfig, InitialState, TaskKind, TrajectorySampler};
use crate::rng::stream_seed;
use crate::statevec::NoiseModel;
use crate::stats::Welford;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub l: usize,
    pub gamma: f64,
    /// `⟨S_Q⟩` in bits.
    pub mean_sq: f64,
    pub stderr: f64,
    pub m: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Rows of one system size, in ascending `γ`.
    pub fn curve(&self, l: usize) -> Vec<SweepRow> {
        let mut rows: Vec<SweepRow> = self.rows.iter().filter(|r| r.l == l).copied().collect();
        rows.sort_by(|a, b| a.gamma.total_cmp(&b.gamma));
        rows
    }

    /// CSV with header `L,gamma,one_minus_mean_sq,stderr`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "L,gamma,one_minus_mean_sq,stderr")?;
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.l, r.gamma, 1.0 - r.mean_sq, r.stderr)?;
        }
        Ok(())
    }
}

/// Seed of one sweep cell; independent of the rest of the grid.
pub fn cell_seed(master_seed: u64, l: usize, gamma: f64) -> u64 {
    stream_seed(stream_seed(master_seed, l as u64), gamma.to_bits())
}

/// Mean and standard error of `S_Q` over `m` trajectories at one `(L, γ)`.
pub fn sq_cell(l: usize, gamma: f64, m: usize, noise: Option<NoiseModel>, master_seed: u64) -> Result<SweepRow> {
    let config = CircuitConfig::new(l, gamma, TaskKind::ReferenceQubit, InitialState::Psi0, cell_seed(master_seed, l, gamma))
        .with_noise(noise);
    let entropies = TrajectorySampler::new(config)?.run_reference_many(0..m as u64)?;
    let w: Welford = entropies.into_iter().collect();
    Ok(SweepRow { l, gamma, mean_sq: w.mean(), stderr: w.stderr(), m })
}

/// `⟨S_Q⟩` for every `(L, γ)` pair, `m ≥ 100` trajectories each.
pub fn sq_sweep(ls: &[usize], gammas: &[f64], m: usize, noise: Option<NoiseModel>, master_seed: u64) -> Result<SweepTable> {
    if m < 100 {
        return Err(Error::invalid(format!("M = {m} below the minimum of 100 trajectories")));
    }
    let mut rows = Vec::with_capacity(ls.len() * gammas.len());
    for &l in ls {
        for &gamma in gammas {
            let row = sq_cell(l, gamma, m, noise, master_seed)?;
            log::info!("L={l} gamma={gamma:.3} <S_Q>={:.4} +- {:.4}", row.mean_sq, row.stderr);
            rows.push(row);
        }
    }
    Ok(SweepTable { rows })
}

/// `γ` where the piecewise-linear `⟨S_Q⟩(γ)` curves of two sizes intersect.
/// With several intersections, returns the one nearest the middle of the span
/// of sign changes.
pub fn crossing_estimate(table: &SweepTable, pair: (usize, usize)) -> Result<f64> {
    let a = table.curve(pair.0);
    let b = table.curve(pair.1);
    if a.len() < 2 || a.len() != b.len() || a.iter().zip(&b).any(|(x, y)| x.gamma != y.gamma) {
        return Err(Error::invalid("both sizes need the same gamma grid with at least two points"));
    }
    let gammas: Vec<f64> = a.iter().map(|r| r.gamma).collect();
    let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x.mean_sq - y.mean_sq).collect();
    let mut roots = Vec::new();
    let mut span: Option<(f64, f64)> = None;
    for i in 0..gammas.len() - 1 {
        let (d0, d1) = (diff[i], diff[i + 1]);
        let (g0, g1) = (gammas[i], gammas[i + 1]);
        let root = if d0 == 0.0 {
            Some(g0)
        } else if d0 * d1 < 0.0 {
            Some(g0 + (g1 - g0) * d0 / (d0 - d1))
        } else {
            None
        };
        if let Some(r) = root {
            roots.push(r);
            span = Some(span.map_or((g0, g1), |(lo, _)| (lo, g1)));
        }
    }
    if diff[diff.len() - 1] == 0.0 {
        let g = gammas[gammas.len() - 1];
        roots.push(g);
        span = Some(span.map_or((g, g), |(lo, _)| (lo, g)));
    }
    let (lo, hi) = span.ok_or_else(|| Error::NoCrossing(format!("L = {} and L = {} do not cross", pair.0, pair.1)))?;
    let mid = 0.5 * (lo + hi);
    roots.dedup();
    Ok(roots
        .into_iter()
        .min_by(|x, y| (x - mid).abs().total_cmp(&(y - mid).abs()))
        .expect("at least one root"))
}
