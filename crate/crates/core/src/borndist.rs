//! Born-probability statistics: the binomial and Beta-binomial densities of
//! sampled outcome probabilities, the Porter–Thomas limit, their tail
//! comparison, and empirical `Prob(p)` histograms built from trajectories.
//!
//! Densities follow the `Prob(p = k/M)` convention: they are `M` times the
//! probability mass at `k`, so `Σ_k density / M = 1`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;

use statrs::function::gamma::ln_gamma;

use crate::circuits::TrajectoryRecord;
use crate::{Error, Result};

/// Rising products shorter than this are summed term by term; log-gamma
/// differences of arguments near `2^20` lose about `1e-9` absolute.
const DIRECT_SUM_MAX: u64 = 512;

/// `ln Γ(a + n) − ln Γ(a)`.
fn ln_rising(a: f64, n: u64) -> f64 {
    if n <= DIRECT_SUM_MAX {
        (0..n).map(|i| (a + i as f64).ln()).sum()
    } else {
        ln_gamma(a + n as f64) - ln_gamma(a)
    }
}

fn ln_choose(m: u64, k: u64) -> f64 {
    let k = k.min(m - k);
    ln_rising((m - k + 1) as f64, k) - ln_rising(1.0, k)
}

fn check_pmf_args(k: u64, m: u64, d: f64) -> Result<()> {
    if m == 0 {
        return Err(Error::invalid("sample size M must be positive"));
    }
    if k > m {
        return Err(Error::invalid(format!("k = {k} exceeds M = {m}")));
    }
    if !(d >= 2.0) {
        return Err(Error::invalid(format!("Hilbert dimension D = {d} must be at least 2")));
    }
    Ok(())
}

/// `ln` of [`binom_prob_p`].
pub fn ln_binom_prob_p(k: u64, m: u64, d: f64) -> Result<f64> {
    check_pmf_args(k, m, d)?;
    let (kf, mf) = (k as f64, m as f64);
    Ok(mf.ln() + ln_choose(m, k) - kf * d.ln() + (mf - kf) * (-1.0 / d).ln_1p())
}

/// `M · C(M,k) (1/D)^k (1 − 1/D)^(M−k)`: density of `p = k/M` for a uniformly
/// random outcome when every outcome has probability `1/D`.
pub fn binom_prob_p(k: u64, m: u64, d: f64) -> Result<f64> {
    ln_binom_prob_p(k, m, d).map(f64::exp)
}

/// `ln` of [`betabinom_prob_p`].
pub fn ln_betabinom_prob_p(k: u64, m: u64, d: f64) -> Result<f64> {
    check_pmf_args(k, m, d)?;
    let mf = m as f64;
    let falling_m = ln_rising((m - k + 1) as f64, k);
    let tail = ln_rising(mf + d - k as f64 - 1.0, k + 1);
    Ok(mf.ln() + (d - 1.0).ln() + falling_m - tail)
}

/// `M (D−1) M! (M+D−k−2)! / ((M−k)! (M+D−1)!)`: density of `p = k/M` when the
/// outcome probabilities are Porter–Thomas (Beta(1, D−1)) distributed.
pub fn betabinom_prob_p(k: u64, m: u64, d: f64) -> Result<f64> {
    ln_betabinom_prob_p(k, m, d).map(f64::exp)
}

/// Beta(1, D−1) density `(D−1)(1−p)^(D−2)`.
pub fn beta_prob(p: f64, d: f64) -> f64 {
    (d - 1.0) * (1.0 - p).powf(d - 2.0)
}

fn check_tail_args(p: f64, m: u64, d: f64) -> Result<()> {
    let mf = m as f64;
    if m < 4 || !(p >= 2.0 / mf && p <= 0.5) {
        return Err(Error::invalid(format!("p = {p} outside the tail regime [2/M, 1/2] for M = {m}")));
    }
    if !(d > mf) {
        return Err(Error::invalid(format!("tail formula needs D > M (D = {d}, M = {m})")));
    }
    Ok(())
}

/// Asymptotic log ratio of the binomial to the Beta-binomial density in the tail:
/// `(1+Mp) ln(1+M/D) − (1+Mp) ln(Mp) − ½ ln(2π(1−p)/(Mp)) + 1`.
pub fn tail_log_diff(p: f64, m: u64, d: f64) -> Result<f64> {
    check_tail_args(p, m, d)?;
    let mp = m as f64 * p;
    Ok((1.0 + mp) * (m as f64 / d).ln_1p() - (1.0 + mp) * mp.ln() - 0.5 * (2.0 * PI * (1.0 - p) / mp).ln() + 1.0)
}

/// `exp` of [`tail_log_diff`].
pub fn tail_ratio(p: f64, m: u64, d: f64) -> Result<f64> {
    tail_log_diff(p, m, d).map(f64::exp)
}

/// Tail log ratio with the `Mp − 1` term that a consistent Stirling expansion of
/// `k!` retains; agrees with the exact density ratio to a few percent when
/// `D ≫ M`.
pub fn tail_log_diff_stirling(p: f64, m: u64, d: f64) -> Result<f64> {
    Ok(tail_log_diff(p, m, d)? + m as f64 * p - 1.0)
}

/// Empirical Born probabilities of the outcome strings at one time slice.
#[derive(Debug, Clone, PartialEq)]
pub struct BornEstimate {
    pub t: usize,
    pub l: usize,
    /// Outcome string (site 0 in the most significant bit) to occurrence count.
    pub counts: BTreeMap<u64, u64>,
    /// Denominator: `M`, or `M·L` with translation augmentation.
    pub total: u64,
}

impl BornEstimate {
    pub fn probability(&self, outcome: u64) -> f64 {
        self.counts.get(&outcome).map_or(0.0, |&k| k as f64 / self.total as f64)
    }

    /// `(outcome, k / total)` in ascending outcome order.
    pub fn entries(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.counts.iter().map(|(&m, &k)| (m, k as f64 / self.total as f64))
    }

    pub fn total_probability(&self) -> f64 {
        self.entries().map(|(_, p)| p).sum()
    }
}

/// Encodes `L` outcome bits with site 0 as the most significant bit.
pub fn encode_outcome(bits: &[u8]) -> u64 {
    bits.iter().fold(0u64, |acc, &b| (acc << 1) | u64::from(b & 1))
}

fn rotate_outcome(code: u64, l: usize, shift: usize) -> u64 {
    let shift = shift % l;
    if shift == 0 {
        return code;
    }
    let mask = (1u64 << l) - 1;
    // moving site x to x + shift is a right rotation with site 0 as the MSB
    ((code >> shift) | (code << (l - shift))) & mask
}

/// Frequency `k/M` of each observed outcome string at time index `t`; with
/// `translate`, every record also contributes its `L − 1` nontrivial cyclic
/// shifts and the denominator becomes `M·L`.
pub fn empirical_born(records: &[TrajectoryRecord], t: usize, translate: bool) -> Result<BornEstimate> {
    let first = records.first().ok_or_else(|| Error::InsufficientData("no records".into()))?;
    let l = first.l;
    if l > 63 {
        return Err(Error::invalid("outcome strings longer than 63 sites are not supported"));
    }
    if t >= 2 * l {
        return Err(Error::invalid(format!("time index {t} out of range for 2L = {}", 2 * l)));
    }
    if records.iter().any(|r| r.l != l) {
        return Err(Error::Metadata("records have different L".into()));
    }
    let mut counts = BTreeMap::new();
    for r in records {
        let code = encode_outcome(r.time_slice(t));
        if translate {
            for s in 0..l {
                *counts.entry(rotate_outcome(code, l, s)).or_insert(0) += 1;
            }
        } else {
            *counts.entry(code).or_insert(0) += 1;
        }
    }
    let total = records.len() as u64 * if translate { l as u64 } else { 1 };
    Ok(BornEstimate { t, l, counts, total })
}

/// One bin of a [`ProbHistogram`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistBin {
    pub k: u64,
    pub p: f64,
    pub density: f64,
}

/// `Prob(p)` on the exact grid `p = k / M`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbHistogram {
    pub bins: Vec<HistBin>,
    pub sample_size: u64,
    pub hilbert_dim: f64,
}

impl ProbHistogram {
    /// Tabulates an analytic density over `k = 0..=M`.
    pub fn from_pmf(m: u64, d: f64, density: impl Fn(u64, u64, f64) -> Result<f64>) -> Result<Self> {
        let bins = (0..=m)
            .map(|k| Ok(HistBin { k, p: k as f64 / m as f64, density: density(k, m, d)? }))
            .collect::<Result<Vec<_>>>()?;
        Ok(ProbHistogram { bins, sample_size: m, hilbert_dim: d })
    }

    /// Single bin of unit weight at `p`: the deterministic-outcome limit.
    pub fn delta(p: f64, d: f64) -> Self {
        ProbHistogram { bins: vec![HistBin { k: 1, p, density: 1.0 / d }], sample_size: 1, hilbert_dim: d }
    }

    /// `Σ density / M`; one for a complete analytic density.
    pub fn pmf_mass(&self) -> f64 {
        self.bins.iter().map(|b| b.density).sum::<f64>() / self.sample_size as f64
    }

    /// `Σ p · N_p` with `N_p = density · D`; one for an empirical histogram.
    pub fn born_mass(&self) -> f64 {
        self.bins.iter().map(|b| b.p * b.density * self.hilbert_dim).sum()
    }

    /// `Σ p^n · density`, i.e. the outcome average of `p^n` over all `D` strings.
    pub fn moment(&self, n: i32) -> f64 {
        self.bins.iter().map(|b| b.p.powi(n) * b.density).sum()
    }

    /// CSV with header `p,density`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "p,density")?;
        for b in &self.bins {
            writeln!(out, "{},{}", b.p, b.density)?;
        }
        Ok(())
    }
}

/// Groups outcomes by their count: `N_p` outcomes share `p = k / total`, and the
/// bin density is `N_p / D`.
pub fn prob_p_histogram(estimate: &BornEstimate, d: f64) -> ProbHistogram {
    let mut by_count: BTreeMap<u64, u64> = BTreeMap::new();
    for &k in estimate.counts.values() {
        *by_count.entry(k).or_insert(0) += 1;
    }
    let bins = by_count
        .into_iter()
        .map(|(k, n)| HistBin { k, p: k as f64 / estimate.total as f64, density: n as f64 / d })
        .collect();
    ProbHistogram { bins, sample_size: estimate.total, hilbert_dim: d }
}
