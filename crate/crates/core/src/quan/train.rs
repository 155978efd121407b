//! Minibatch training with early stopping, and evaluation metrics.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::model::{backward, forward, predict};
use super::optim::{adam_step, bce_loss, AdamState};
use super::params::ModelParams;
use super::TrainConfig;
use crate::circuits::TrajectoryRecord;
use crate::dataset::{make_sets, TrajectorySet};
use crate::rng::{stream_rng, stream_seed};
use crate::stats::Welford;
use crate::{Error, Result};

const TEST_SETS_STREAM: u64 = 0x7e57;
const ORDER_STREAM: u64 = 0x0dde;
const DROPOUT_STREAM: u64 = 0xd409;
const INIT_STREAM: u64 = 0x1417;

/// One epoch of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean loss over the training sets, with dropout active.
    pub train: f64,
    pub test: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochLoss>,
}

impl TrainHistory {
    /// CSV with header `epoch,train_loss,test_loss`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "epoch,train_loss,test_loss")?;
        for e in &self.epochs {
            writeln!(out, "{},{},{}", e.epoch, e.train, e.test)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters with the lowest test loss seen.
    pub params: ModelParams,
    pub best_epoch: usize,
    pub best_test_loss: f64,
    pub history: TrainHistory,
}

/// Cuts every group (records sharing `γ` and label) into sets of `N`.
fn sets_of(groups: &[Vec<TrajectoryRecord>], n: usize, seed: u64, round: u64) -> Result<Vec<TrajectorySet>> {
    let mut sets = Vec::new();
    for (i, group) in groups.iter().enumerate() {
        let mut rng = stream_rng(stream_seed(seed, i as u64), round);
        sets.extend(make_sets(group, n, &mut rng)?.sets);
    }
    Ok(sets)
}

fn check_groups(groups: &[Vec<TrajectoryRecord>], n: usize, what: &str) -> Result<usize> {
    let mut labels = [false; 2];
    let mut l = None;
    for g in groups {
        if g.len() < n {
            return Err(Error::InsufficientData(format!("{what} group with {} records cannot fill a set of {n}", g.len())));
        }
        for r in g {
            if *l.get_or_insert(r.l) != r.l {
                return Err(Error::Metadata(format!("{what} records mix system sizes")));
            }
            labels[usize::from(r.label.min(1))] = true;
        }
    }
    if labels != [true, true] {
        return Err(Error::InsufficientData(format!("{what} data must contain both labels")));
    }
    l.ok_or_else(|| Error::InsufficientData(format!("no {what} records")))
}

/// Mean eval-mode loss over sets.
pub fn set_loss(params: &ModelParams, sets: &[TrajectorySet], config: &TrainConfig) -> Result<f64> {
    let preds = sets
        .par_iter()
        .map(|s| predict(params, &s.records, config.ablation))
        .collect::<Result<Vec<f64>>>()?;
    let labels: Vec<u8> = sets.iter().map(|s| s.label).collect();
    Ok(bce_loss(&preds, &labels))
}

/// Trains from scratch. Each entry of `train_groups` / `test_groups` holds the
/// records of one `(γ, label)` pair. Training sets are redrawn every
/// `shuffle_period` epochs; test sets are drawn once. Returns the parameters
/// with the lowest test loss.
pub fn train(train_groups: &[Vec<TrajectoryRecord>], test_groups: &[Vec<TrajectoryRecord>], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let n = config.set_size;
    let l = check_groups(train_groups, n, "training")?;
    if check_groups(test_groups, n, "test")? != l {
        return Err(Error::Metadata("training and test records have different L".into()));
    }
    let mut params = ModelParams::init(config.dims(l), &mut stream_rng(config.seed, INIT_STREAM));
    log::info!("QuAN with {} parameters at L = {l}, N = {n}", params.num_params());
    let test_sets = sets_of(test_groups, n, stream_seed(config.seed, TEST_SETS_STREAM), 0)?;
    let mut adam = AdamState::new(&params);
    let mut best = (params.clone(), 0usize, set_loss(&params, &test_sets, config)?);
    let mut history = TrainHistory::default();
    let mut train_sets = Vec::new();
    for epoch in 0..config.max_epochs {
        if epoch % config.shuffle_period == 0 {
            train_sets = sets_of(train_groups, n, config.seed, (epoch / config.shuffle_period) as u64)?;
        }
        let mut order: Vec<usize> = (0..train_sets.len()).collect();
        order.shuffle(&mut stream_rng(stream_seed(config.seed, ORDER_STREAM), epoch as u64));
        let mut train_loss = Welford::new();
        for (b, batch) in order.chunks(config.batch_sets()).enumerate() {
            let results = batch
                .par_iter()
                .enumerate()
                .map(|(k, &i)| {
                    let set = &train_sets[i];
                    let index = (b * config.batch_sets() + k) as u64;
                    let mut rng = stream_rng(stream_seed(stream_seed(config.seed, DROPOUT_STREAM), epoch as u64), index);
                    let pass = forward(&params, &set.records, config.ablation, Some((config.drop_rate, &mut rng)))?;
                    Ok((bce_loss(&[pass.y], &[set.label]), backward(&params, &pass, set.label)))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut grads = params.zeros_like();
            for (loss, g) in &results {
                train_loss.push(*loss);
                grads.scaled_add(1.0, g);
            }
            grads.scale(1.0 / results.len() as f64);
            adam_step(&mut params, &grads, &mut adam, config);
        }
        let test = set_loss(&params, &test_sets, config)?;
        if !test.is_finite() || !train_loss.mean().is_finite() {
            return Err(Error::invalid(format!("loss diverged at epoch {epoch}")));
        }
        history.epochs.push(EpochLoss { epoch, train: train_loss.mean(), test });
        log::debug!("epoch {epoch}: train {:.5} test {test:.5}", train_loss.mean());
        if test < best.2 {
            best = (params.clone(), epoch + 1, test);
        } else if epoch + 1 - best.1 >= config.patience {
            log::info!("no improvement for {} epochs, stopping at epoch {epoch}", config.patience);
            break;
        }
    }
    let (params, best_epoch, best_test_loss) = best;
    log::info!("best test loss {best_test_loss:.5} after {best_epoch} epochs");
    Ok(TrainOutcome { params, best_epoch, best_test_loss, history })
}

/// Mean prediction at one `γ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaRow {
    pub gamma: f64,
    pub mean_y: f64,
    pub stderr: f64,
    pub sets: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    pub rows: Vec<GammaRow>,
    /// Average probability assigned to the correct label over all sets.
    pub pcorr: f64,
    /// Where `⟨y⟩(γ)` crosses 0.5; `None` when it never does.
    pub gamma_star: Option<f64>,
    pub sharpness: Option<f64>,
}

impl EvalMetrics {
    /// CSV with header `row,gamma,mean_y,stderr,sets,pcorr,gamma_star,sharpness`:
    /// one `gamma` row per grid point, then one `summary` row. Undefined values
    /// are written as `nan`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "row,gamma,mean_y,stderr,sets,pcorr,gamma_star,sharpness")?;
        for r in &self.rows {
            writeln!(out, "gamma,{},{},{},{},,,", r.gamma, r.mean_y, r.stderr, r.sets)?;
        }
        let opt = |v: Option<f64>| v.unwrap_or(f64::NAN);
        writeln!(out, "summary,,,,,{},{},{}", self.pcorr, opt(self.gamma_star), opt(self.sharpness))?;
        Ok(())
    }
}

/// First `γ` where the piecewise-linear curve through `(γ_i, y_i)` crosses 0.5
/// from one side to the other. The grid must be ascending.
pub fn gamma_star(gammas: &[f64], means: &[f64]) -> Option<f64> {
    for i in 0..gammas.len().saturating_sub(1) {
        let (a, b) = (means[i] - 0.5, means[i + 1] - 0.5);
        if (a < 0.0 && b >= 0.0) || (a > 0.0 && b <= 0.0) {
            return Some(gammas[i] + (gammas[i + 1] - gammas[i]) * a / (a - b));
        }
    }
    None
}

/// Centered difference of `y(γ)` at the grid point nearest `at`; one-sided at
/// the ends of the grid.
pub fn sharpness(gammas: &[f64], means: &[f64], at: f64) -> Option<f64> {
    if gammas.len() < 2 {
        return None;
    }
    let i = (0..gammas.len()).min_by(|&a, &b| (gammas[a] - at).abs().total_cmp(&(gammas[b] - at).abs()))?;
    let lo = i.saturating_sub(1);
    let hi = (i + 1).min(gammas.len() - 1);
    Some((means[hi] - means[lo]) / (gammas[hi] - gammas[lo]))
}

/// Predictions on disjoint sets of `N` drawn from each group of records (one
/// group per `γ`, labels taken from the records).
pub fn eval_metrics(params: &ModelParams, groups: &[Vec<TrajectoryRecord>], config: &TrainConfig) -> Result<EvalMetrics> {
    let n = config.set_size;
    let mut rows = Vec::with_capacity(groups.len());
    let mut correct = Welford::new();
    for (i, group) in groups.iter().enumerate() {
        let mut rng = stream_rng(stream_seed(config.seed, TEST_SETS_STREAM ^ 0xe7a1), i as u64);
        let sets = make_sets(group, n, &mut rng)?.sets;
        if sets.is_empty() {
            return Err(Error::InsufficientData(format!("group {i} has {} records, fewer than N = {n}", group.len())));
        }
        let preds = sets
            .par_iter()
            .map(|s| predict(params, &s.records, config.ablation))
            .collect::<Result<Vec<f64>>>()?;
        for (s, &y) in sets.iter().zip(&preds) {
            correct.push(if s.label == 1 { y } else { 1.0 - y });
        }
        let w: Welford = preds.iter().copied().collect();
        rows.push(GammaRow { gamma: sets[0].gamma(), mean_y: w.mean(), stderr: w.stderr(), sets: sets.len() });
    }
    rows.sort_by(|a, b| a.gamma.total_cmp(&b.gamma));
    let gammas: Vec<f64> = rows.iter().map(|r| r.gamma).collect();
    let means: Vec<f64> = rows.iter().map(|r| r.mean_y).collect();
    let gamma_star = gamma_star(&gammas, &means);
    let sharpness = gamma_star.and_then(|g| sharpness(&gammas, &means, g));
    Ok(EvalMetrics { rows, pcorr: correct.mean(), gamma_star, sharpness })
}

/// Smallest `M` whose loss is at most `epsilon`.
pub fn minimal_sample_complexity(loss_by_m: &[(usize, f64)], epsilon: f64) -> Result<usize> {
    loss_by_m
        .iter()
        .filter(|(_, loss)| *loss <= epsilon)
        .map(|&(m, _)| m)
        .min()
        .ok_or_else(|| Error::ThresholdNotReached(format!("no M reaches a test loss of {epsilon}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuits::TaskKind;
    use crate::quan::checkpoint::Checkpoint;

    /// Records filled with `bit` except for a first time slice of `1 − bit`.
    fn marked(l: usize, bit: u8, gamma: f64, label: u8, count: usize) -> Vec<TrajectoryRecord> {
        (0..count)
            .map(|i| {
                let mut bits = vec![bit; 2 * l * l];
                bits[..l].fill(1 - bit);
                TrajectoryRecord::new(l, bits, gamma, TaskKind::PhaseRecognition, label, i as u64).unwrap()
            })
            .collect()
    }

    fn smoke_config(seed: u64) -> TrainConfig {
        TrainConfig {
            n_e: 2,
            set_size: 4,
            d_h: 4,
            learning_rate: 1e-2,
            batch_trajectories: 16,
            max_epochs: 50,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn separable_smoke_training() {
        let train_groups = vec![marked(4, 0, 0.1, 0, 32), marked(4, 1, 0.9, 1, 32)];
        let test_groups = vec![marked(4, 0, 0.1, 0, 16), marked(4, 1, 0.9, 1, 16)];
        for seed in 1..=3 {
            let out = train(&train_groups, &test_groups, &smoke_config(seed)).unwrap();
            assert!(out.best_test_loss < 0.01, "seed {seed}: best test loss {}", out.best_test_loss);
        }
        let config = smoke_config(1);
        let out = train(&train_groups, &test_groups, &config).unwrap();
        assert!(out.best_test_loss < 0.01, "best test loss {}", out.best_test_loss);
        assert!(out.history.epochs.iter().all(|e| e.train.is_finite() && e.test.is_finite()));
        assert!(out.best_test_loss <= out.history.epochs.last().unwrap().test);
        let again = train(&train_groups, &test_groups, &config).unwrap();
        let a = Checkpoint::new(&out.params, &config, out.best_epoch, out.best_test_loss);
        let b = Checkpoint::new(&again.params, &config, again.best_epoch, again.best_test_loss);
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let m = eval_metrics(&out.params, &test_groups, &config).unwrap();
        assert!(m.pcorr > 0.99);
        assert!(m.rows[0].mean_y < 0.01 && m.rows[1].mean_y > 0.99);
    }

    #[test]
    fn training_needs_both_labels() {
        let only = vec![marked(4, 0, 0.1, 0, 32)];
        assert!(train(&only, &only, &smoke_config(1)).is_err());
    }

    #[test]
    fn gamma_star_and_sharpness() {
        let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        assert_eq!(gamma_star(&grid, &grid), Some(0.5));
        assert!((sharpness(&grid, &grid, 0.5).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(gamma_star(&grid, &vec![0.5; 11]), None);
        assert_eq!(gamma_star(&grid, &vec![0.2; 11]), None);
        let g = gamma_star(&[0.1, 0.3, 0.5], &[0.1, 0.4, 0.8]).unwrap();
        assert!(g > 0.3 && g < 0.5);
    }

    #[test]
    fn constant_predictor_metrics() {
        let mut p = ModelParams::init(crate::quan::ModelDims { l: 4, n_e: 2, d_h: 4 }, &mut stream_rng(1, 0));
        p.w_p.fill(0.0);
        let config = smoke_config(1);
        let groups = vec![marked(4, 0, 0.1, 0, 8), marked(4, 1, 0.9, 1, 8)];
        let m = eval_metrics(&p, &groups, &config).unwrap();
        assert!(m.rows.iter().all(|r| r.mean_y == 0.5));
        assert_eq!(m.pcorr, 0.5);
        assert_eq!((m.gamma_star, m.sharpness), (None, None));
    }

    #[test]
    fn sample_complexity_examples() {
        let table = [(256, 0.5), (512, 0.08), (1024, 0.05)];
        assert_eq!(minimal_sample_complexity(&table, 0.1).unwrap(), 512);
        assert!(minimal_sample_complexity(&table, 0.01).is_err());
        assert!(minimal_sample_complexity(&table, 0.4).unwrap() <= minimal_sample_complexity(&table, 0.1).unwrap());
    }
}
