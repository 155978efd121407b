//! Bayesian optimal decoding of the initial state: posteriors, exact and
//! Monte-Carlo `P_corr`, the accuracy `α`, and `P_corr` from simulated
//! trajectory likelihoods grouped into sets.

use rand::distributions::Open01;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::circuits::{DualLikelihood, InitialState};
use crate::rng::stream_rng;
use crate::stats::Welford;
use crate::{Error, Result};

/// Posterior of hypothesis `a` under equal priors, `p_a / (p_a + p_b)`, from log
/// likelihoods.
pub fn posterior(logp_a: f64, logp_b: f64) -> Result<f64> {
    if logp_a.is_nan() || logp_b.is_nan() || logp_a == f64::INFINITY || logp_b == f64::INFINITY {
        return Err(Error::invalid("log-likelihoods must be finite or -inf"));
    }
    match (logp_a == f64::NEG_INFINITY, logp_b == f64::NEG_INFINITY) {
        (true, true) => Err(Error::invalid("both likelihoods are zero")),
        (false, true) => Ok(1.0),
        (true, false) => Ok(0.0),
        (false, false) => Ok(logistic(logp_a - logp_b)),
    }
}

#[inline]
fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One decoded record: both log-likelihoods and the posterior of the true state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorSample {
    pub logp_true: f64,
    pub logp_other: f64,
    pub posterior: f64,
}

impl PosteriorSample {
    pub fn new(logp_true: f64, logp_other: f64) -> Result<Self> {
        Ok(PosteriorSample { logp_true, logp_other, posterior: posterior(logp_true, logp_other)? })
    }
}

/// Exact `P_corr = Σ_m (p² + q²) / (2 (p + q))` over complete outcome
/// distributions `p = p(m|Ψ0)`, `q = p(m|Φ0)`, evaluated as
/// `1/2 + Σ_m (p − q)² / (4 (p + q))`.
pub fn pcorr_exact(probs_psi: &[f64], probs_phi: &[f64]) -> Result<f64> {
    if probs_psi.len() != probs_phi.len() {
        return Err(Error::invalid("distributions have different lengths"));
    }
    for probs in [probs_psi, probs_phi] {
        if probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::invalid("probabilities must be nonnegative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("distribution sums to {total}")));
        }
    }
    let excess: f64 = probs_psi
        .iter()
        .zip(probs_phi)
        .filter(|(&p, &q)| p + q > 0.0)
        .map(|(&p, &q)| (p - q).powi(2) / (4.0 * (p + q)))
        .sum();
    Ok(0.5 + excess)
}

/// Born-probability model of both initial states for the Monte-Carlo decoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BornModel {
    /// Independent Porter–Thomas (Beta(1, D−1)) probabilities: strong monitoring.
    PorterThomas,
    /// Every outcome has probability `1/D` under both states: no information.
    Flat,
}

/// How the `2N`-dimensional `P_corr` integral is sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McEstimator {
    /// Draw every `x_i, y_i` from the Born model and average
    /// `D^N (Πx)² / (Πx + Πy)`. Unbiased, but its variance grows so fast with
    /// `N` that it is only usable for a handful of set members.
    Uniform,
    /// Draw `x_i` from the size-biased model `D·x·Prob(x)` (Beta(2, D−1) for
    /// Porter–Thomas) and `y_i` from the model; the summand becomes the posterior
    /// `Πx / (Πx + Πy)` of the true state, which is bounded in `[0, 1]`.
    SizeBiased,
}

/// How an exact posterior tie of 1/2 is scored by the accuracy `α`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieRule {
    /// A tie is a wrong answer.
    Failure,
    /// A tie is resolved by a fair guess and scores 1/2.
    #[default]
    Half,
}

impl TieRule {
    fn score(self) -> f64 {
        match self {
            TieRule::Failure => 0.0,
            TieRule::Half => 0.5,
        }
    }
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

/// `P_corr` and `α` from one shared set of Monte-Carlo samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McDecoding {
    pub pcorr: Estimate,
    pub alpha: Estimate,
}

/// Settings of [`decode_mc`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McSettings {
    pub model: BornModel,
    pub set_size: usize,
    pub d: f64,
    pub samples: usize,
    pub estimator: McEstimator,
    pub ties: TieRule,
}

impl McSettings {
    pub fn gamma1(set_size: usize, d: f64, samples: usize) -> Self {
        McSettings {
            model: BornModel::PorterThomas,
            set_size,
            d,
            samples,
            estimator: McEstimator::SizeBiased,
            ties: TieRule::default(),
        }
    }
}

const CHUNK: usize = 1 << 14;

/// `ln` of a Beta(1, D−1) draw by inverse CDF.
#[inline]
fn ln_beta1(u: f64, d: f64) -> f64 {
    (-((-u).ln_1p() / (d - 1.0)).exp_m1()).ln()
}

/// `ln` of a Beta(2, D−1) draw: the second smallest of `D` uniforms.
#[inline]
fn ln_beta2(u1: f64, u2: f64, d: f64) -> f64 {
    let v1 = -((-u1).ln_1p() / d).exp_m1();
    let w = -((-u2).ln_1p() / (d - 1.0)).exp_m1();
    (v1 + (1.0 - v1) * w).ln()
}

struct Draw {
    /// `ln Πx_i` (true state) and `ln Πy_i` (other state).
    ln_x: f64,
    ln_y: f64,
}

fn draw<R: Rng>(s: &McSettings, rng: &mut R) -> Draw {
    let n = s.set_size;
    match s.model {
        BornModel::Flat => {
            let v = -(n as f64) * s.d.ln();
            Draw { ln_x: v, ln_y: v }
        }
        BornModel::PorterThomas => {
            let mut ln_x = 0.0;
            let mut ln_y = 0.0;
            for _ in 0..n {
                let u: f64 = rng.sample(Open01);
                ln_x += match s.estimator {
                    McEstimator::Uniform => ln_beta1(u, s.d),
                    McEstimator::SizeBiased => ln_beta2(u, rng.sample(Open01), s.d),
                };
                ln_y += ln_beta1(rng.sample(Open01), s.d);
            }
            Draw { ln_x, ln_y }
        }
    }
}

fn tie_aware_indicator(ln_x: f64, ln_y: f64, ties: TieRule) -> f64 {
    if ln_x > ln_y {
        1.0
    } else if ln_x == ln_y {
        ties.score()
    } else {
        0.0
    }
}

/// Monte-Carlo `P_corr` and accuracy for sets of `N` i.i.d. outcomes.
///
/// Samples are split into fixed chunks with independent RNG substreams derived
/// from one draw of `rng`, so results do not depend on the thread count.
pub fn decode_mc<R: Rng + ?Sized>(settings: &McSettings, rng: &mut R) -> Result<McDecoding> {
    let s = *settings;
    if s.set_size == 0 {
        return Err(Error::invalid("set size N must be at least 1"));
    }
    if !(s.d >= 2.0) {
        return Err(Error::invalid("D must be at least 2"));
    }
    if s.samples < 2 {
        return Err(Error::invalid("need at least two Monte-Carlo samples"));
    }
    let seed: u64 = rng.gen();
    let chunks = s.samples.div_ceil(CHUNK);
    let n_ln_d = s.set_size as f64 * s.d.ln();

    match s.estimator {
        McEstimator::SizeBiased => {
            let (pc, al) = (0..chunks)
                .into_par_iter()
                .map(|c| {
                    let mut rng = stream_rng(seed, c as u64);
                    let len = CHUNK.min(s.samples - c * CHUNK);
                    let (mut pc, mut al) = (Welford::default(), Welford::default());
                    for _ in 0..len {
                        let Draw { ln_x, ln_y } = draw(&s, &mut rng);
                        pc.push(logistic(ln_x - ln_y));
                        al.push(tie_aware_indicator(ln_x, ln_y, s.ties));
                    }
                    (pc, al)
                })
                .collect::<Vec<_>>()
                .into_iter()
                .fold((Welford::default(), Welford::default()), |(mut a, mut b), (c, d)| {
                    a.merge(&c);
                    b.merge(&d);
                    (a, b)
                });
            Ok(McDecoding {
                pcorr: Estimate { value: pc.mean(), stderr: pc.stderr() },
                alpha: Estimate { value: al.mean(), stderr: al.stderr() },
            })
        }
        McEstimator::Uniform => {
            // log-summands of P_corr and of α, evaluated against a common shift
            let terms: Vec<(f64, f64)> = (0..chunks)
                .into_par_iter()
                .flat_map_iter(|c| {
                    let mut rng = stream_rng(seed, c as u64);
                    let len = CHUNK.min(s.samples - c * CHUNK);
                    (0..len)
                        .map(|_| {
                            let Draw { ln_x, ln_y } = draw(&s, &mut rng);
                            let ln_sum = ln_x.max(ln_y) + (-(ln_x - ln_y).abs()).exp().ln_1p();
                            let pc = 2.0 * ln_x - ln_sum + n_ln_d;
                            let ind = tie_aware_indicator(ln_x, ln_y, s.ties);
                            let al = if ind > 0.0 { ln_x + n_ln_d + ind.ln() } else { f64::NEG_INFINITY };
                            (pc, al)
                        })
                        .collect::<Vec<_>>()
                })
                .collect();
            let pcorr = shifted_mean(terms.iter().map(|t| t.0));
            let alpha = shifted_mean(terms.iter().map(|t| t.1));
            Ok(McDecoding { pcorr, alpha })
        }
    }
}

/// Mean and standard error of `exp(t_j)` computed relative to `max t_j`.
fn shifted_mean(log_terms: impl Iterator<Item = f64> + Clone) -> Estimate {
    let shift = log_terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if shift == f64::NEG_INFINITY {
        return Estimate { value: 0.0, stderr: 0.0 };
    }
    let w: Welford = log_terms.map(|t| (t - shift).exp()).collect();
    let scale = shift.exp();
    Estimate { value: w.mean() * scale, stderr: w.stderr() * scale }
}

/// `P_corr` at `γ = 1` for sets of `N` outcomes of a `D`-dimensional scrambled
/// state.
pub fn pcorr_gamma1_mc<R: Rng + ?Sized>(
    n: usize,
    d: f64,
    samples: usize,
    estimator: McEstimator,
    rng: &mut R,
) -> Result<Estimate> {
    let settings = McSettings { estimator, ..McSettings::gamma1(n, d, samples) };
    Ok(decode_mc(&settings, rng)?.pcorr)
}

/// Accuracy `α` for single outcomes under `model`.
pub fn accuracy_alpha_mc<R: Rng + ?Sized>(
    model: BornModel,
    d: f64,
    samples: usize,
    ties: TieRule,
    rng: &mut R,
) -> Result<Estimate> {
    let settings = McSettings { model, ties, ..McSettings::gamma1(1, d, samples) };
    Ok(decode_mc(&settings, rng)?.alpha)
}

/// `P_corr` from simulated trajectories: the duals of each true state are
/// shuffled into sets of `N`, set log-likelihoods are member sums, and the
/// posterior of the true state is averaged over all sets of both classes.
pub fn pcorr_trajectory<R: Rng + ?Sized>(duals: &[DualLikelihood], n: usize, rng: &mut R) -> Result<Estimate> {
    if n == 0 {
        return Err(Error::invalid("set size N must be at least 1"));
    }
    let mut stats = Welford::default();
    for state in [InitialState::Psi0, InitialState::Phi0] {
        let mut class: Vec<&DualLikelihood> = duals.iter().filter(|d| d.true_state == state).collect();
        if class.len() < n {
            return Err(Error::InsufficientData(format!(
                "{} duals for {state:?}, need at least N = {n}",
                class.len()
            )));
        }
        // canonical order first so the partition only depends on the rng
        class.sort_by_key(|d| d.record.trajectory_seed);
        class.shuffle(rng);
        for set in class.chunks_exact(n) {
            let lt: f64 = set.iter().map(|d| d.logp_true()).sum();
            let lo: f64 = set.iter().map(|d| d.logp_other()).sum();
            stats.push(posterior(lt, lo)?);
        }
    }
    Ok(Estimate { value: stats.mean(), stderr: stats.stderr() })
}
