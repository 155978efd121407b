//! Subcommand implementations.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use mipt_core::borndist::{empirical_born, prob_p_histogram};
use mipt_core::circuits::{phase_label, DualLikelihood, TrajectorySampler};
use mipt_core::dataset::{read_trajectories, write_trajectories, DatasetMeta};
use mipt_core::decoder::{self, BornModel, McEstimator, McSettings, TieRule};
use mipt_core::quan::{self, Checkpoint, TrainConfig};
use mipt_core::rng::{stream_rng, stream_seed};
use mipt_core::stats::Welford;
use mipt_core::{CircuitConfig, InitialState, NoiseModel, TaskKind, TrajectoryRecord};
use rand::Rng;

use crate::config::KeyValues;
use crate::{Axis, CliError, DecodeMode, Estimator, Initial, Model, Task, Ties};

type Result<T> = std::result::Result<T, CliError>;

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

/// Writes CSV to `path`, or to stdout when no path is given.
fn emit(path: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> mipt_core::Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let mut out = create(p)?;
            write(&mut out)?;
            out.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut out = stdout.lock();
            write(&mut out)?;
        }
    }
    Ok(())
}

fn noise_model(rates: Option<&[f64]>) -> Result<Option<NoiseModel>> {
    match rates {
        None => Ok(None),
        Some([p1q, p2q]) => Ok(Some(NoiseModel::new(*p1q, *p2q)?)),
        Some(other) => Err(CliError::usage(format!("noise needs two rates p1q,p2q, got {}", other.len()))),
    }
}

fn task_kind(task: Task) -> TaskKind {
    match task {
        Task::Distinguish => TaskKind::StateDistinguish,
        Task::Phase => TaskKind::PhaseRecognition,
        Task::Refqubit => TaskKind::ReferenceQubit,
    }
}

/// Seed of the file holding `(γ, initial)`.
pub fn file_seed(seed: u64, gamma: f64, initial: InitialState) -> u64 {
    stream_seed(stream_seed(seed, gamma.to_bits()), u64::from(initial.label()))
}

/// Sidecar path: `run.mqt` with suffix `duals` becomes `run.duals.csv`.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_stem().unwrap_or_default().to_os_string();
    name.push(format!(".{suffix}.csv"));
    path.with_file_name(name)
}

pub struct SimulateArgs {
    pub task: Task,
    pub l: usize,
    pub gammas: Vec<f64>,
    pub shots: usize,
    pub seed: u64,
    pub initial: Option<Initial>,
    pub noise: Option<Vec<f64>>,
    pub duals: bool,
    pub out: PathBuf,
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let task = task_kind(a.task);
    if a.task != Task::Distinguish && a.initial.is_some() {
        return Err(CliError::usage("--initial only applies to --task distinguish"));
    }
    if a.task != Task::Distinguish && a.duals {
        return Err(CliError::usage("--duals only applies to --task distinguish"));
    }
    if a.shots == 0 {
        return Err(CliError::usage("--shots must be positive"));
    }
    let noise = noise_model(a.noise.as_deref())?;
    let initials = match a.initial {
        Some(Initial::Both) => vec![InitialState::Psi0, InitialState::Phi0],
        Some(Initial::Phi) => vec![InitialState::Phi0],
        Some(Initial::Psi) | None => vec![InitialState::Psi0],
    };
    fs::create_dir_all(&a.out)?;
    for &gamma in &a.gammas {
        for &initial in &initials {
            let seed = file_seed(a.seed, gamma, initial);
            let config = CircuitConfig::new(a.l, gamma, task, initial, seed).with_noise(noise);
            let sampler = TrajectorySampler::new(config.clone())?;
            let mut name = format!("{}_L{}_g{gamma}", task.name(), a.l);
            if task == TaskKind::StateDistinguish {
                name.push_str(if initial == InitialState::Psi0 { "_psi" } else { "_phi" });
            }
            let path = a.out.join(format!("{name}.mqt"));
            let range = 0..a.shots as u64;
            let records = match task {
                TaskKind::StateDistinguish if a.duals => {
                    let duals = sampler.run_dual_many(range)?;
                    let mut out = create(&sidecar(&path, "duals"))?;
                    writeln!(out, "trajectory,logp_psi,logp_phi")?;
                    for (i, d) in duals.iter().enumerate() {
                        writeln!(out, "{i},{},{}", d.logp_psi, d.logp_phi)?;
                    }
                    out.flush()?;
                    duals.into_iter().map(|d| d.record).collect()
                }
                TaskKind::ReferenceQubit => {
                    let runs = range.map(|i| sampler.run_reference(i)).collect::<mipt_core::Result<Vec<_>>>()?;
                    let mut out = create(&sidecar(&path, "sq"))?;
                    writeln!(out, "trajectory,s_q")?;
                    for (i, (_, s)) in runs.iter().enumerate() {
                        writeln!(out, "{i},{s}")?;
                    }
                    out.flush()?;
                    runs.into_iter().map(|(r, _)| r).collect()
                }
                _ => sampler.run_many(range)?,
            };
            let meta = DatasetMeta { l: a.l, gamma, task, label: config.label(), noise, master_seed: seed };
            let manifest = write_trajectories(&path, &meta, &records)?;
            log::info!("{}: {} trajectories, sha256 {}", path.display(), manifest.count, manifest.sha256);
            println!("{}", path.display());
        }
    }
    Ok(())
}

pub fn probdist(input: &Path, time: usize, translate: bool, out: Option<&Path>) -> Result<()> {
    let (meta, records) = read_trajectories(input)?;
    if time == 0 || time > 2 * meta.l {
        return Err(CliError::usage(format!("--time {time} outside 1..={}", 2 * meta.l)));
    }
    let estimate = empirical_born(&records, time - 1, translate)?;
    let hist = prob_p_histogram(&estimate, 2f64.powi(meta.l as i32));
    emit(out, |w| hist.write_csv(w))
}

pub struct DecodeArgs {
    pub mode: DecodeMode,
    pub psi_probs: Option<Vec<f64>>,
    pub phi_probs: Option<Vec<f64>>,
    pub n: Option<usize>,
    pub d: Option<f64>,
    pub samples: Option<usize>,
    pub estimator: Estimator,
    pub model: Model,
    pub ties: Ties,
    pub in_psi: Option<PathBuf>,
    pub in_phi: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

fn need<T: Copy>(value: Option<T>, flag: &str, mode: &str) -> Result<T> {
    value.ok_or_else(|| CliError::usage(format!("{mode} mode requires {flag}")))
}

fn reject(present: bool, flag: &str, mode: &str) -> Result<()> {
    if present {
        return Err(CliError::usage(format!("{flag} does not apply to {mode} mode")));
    }
    Ok(())
}

/// Reads a trajectory file and its `duals` sidecar.
pub fn read_duals(path: &Path, true_state: InitialState) -> Result<Vec<DualLikelihood>> {
    let (_, records) = read_trajectories(path)?;
    let csv = sidecar(path, "duals");
    let file = File::open(&csv).map_err(|e| CliError::runtime(format!("{}: {e}", csv.display())))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != "trajectory,logp_psi,logp_phi" {
        return Err(CliError::runtime(format!("{}: unexpected header {header:?}", csv.display())));
    }
    let mut duals = Vec::with_capacity(records.len());
    for (record, line) in records.into_iter().zip(lines) {
        let line = line?;
        let fields: Vec<&str> = line.split(',').collect();
        let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| CliError::runtime(format!("{}: {line:?}: {e}", csv.display())));
        if fields.len() != 3 {
            return Err(CliError::runtime(format!("{}: malformed row {line:?}", csv.display())));
        }
        duals.push(DualLikelihood { record, logp_psi: parse(fields[1])?, logp_phi: parse(fields[2])?, true_state });
    }
    Ok(duals)
}

pub fn decode(a: &DecodeArgs) -> Result<()> {
    let mut rows: Vec<(&str, f64, f64)> = Vec::new();
    match a.mode {
        DecodeMode::Exact => {
            let m = "exact";
            for (present, flag) in [
                (a.n.is_some(), "--N"),
                (a.d.is_some(), "--D"),
                (a.samples.is_some(), "--samples"),
                (a.in_psi.is_some() || a.in_phi.is_some(), "--in-psi/--in-phi"),
                (a.seed.is_some(), "--seed"),
            ] {
                reject(present, flag, m)?;
            }
            let psi = a.psi_probs.as_deref().ok_or_else(|| CliError::usage("exact mode requires --psi-probs"))?;
            let phi = a.phi_probs.as_deref().ok_or_else(|| CliError::usage("exact mode requires --phi-probs"))?;
            rows.push(("pcorr", decoder::pcorr_exact(psi, phi)?, 0.0));
        }
        DecodeMode::Mc => {
            let m = "mc";
            reject(a.psi_probs.is_some() || a.phi_probs.is_some(), "--psi-probs/--phi-probs", m)?;
            reject(a.in_psi.is_some() || a.in_phi.is_some(), "--in-psi/--in-phi", m)?;
            let settings = McSettings {
                model: match a.model {
                    Model::PorterThomas => BornModel::PorterThomas,
                    Model::Flat => BornModel::Flat,
                },
                set_size: need(a.n, "--N", m)?,
                d: need(a.d, "--D", m)?,
                samples: need(a.samples, "--samples", m)?,
                estimator: match a.estimator {
                    Estimator::SizeBiased => McEstimator::SizeBiased,
                    Estimator::Uniform => McEstimator::Uniform,
                },
                ties: match a.ties {
                    Ties::Half => TieRule::Half,
                    Ties::Failure => TieRule::Failure,
                },
            };
            let mut rng = stream_rng(need(a.seed, "--seed", m)?, 0);
            let r = decoder::decode_mc(&settings, &mut rng)?;
            rows.push(("pcorr", r.pcorr.value, r.pcorr.stderr));
            rows.push(("alpha", r.alpha.value, r.alpha.stderr));
        }
        DecodeMode::Trajectory => {
            let m = "trajectory";
            reject(a.psi_probs.is_some() || a.phi_probs.is_some(), "--psi-probs/--phi-probs", m)?;
            reject(a.d.is_some(), "--D", m)?;
            reject(a.samples.is_some(), "--samples", m)?;
            let psi = a.in_psi.as_deref().ok_or_else(|| CliError::usage("trajectory mode requires --in-psi"))?;
            let phi = a.in_phi.as_deref().ok_or_else(|| CliError::usage("trajectory mode requires --in-phi"))?;
            let n = need(a.n, "--N", m)?;
            let mut duals = read_duals(psi, InitialState::Psi0)?;
            duals.extend(read_duals(phi, InitialState::Phi0)?);
            let mut rng = stream_rng(need(a.seed, "--seed", m)?, 0);
            let e = decoder::pcorr_trajectory(&duals, n, &mut rng)?;
            rows.push(("pcorr", e.value, e.stderr));
        }
    }
    emit(a.out.as_deref(), |w| {
        writeln!(w, "parameter,estimate,stderr")?;
        for (name, v, se) in &rows {
            writeln!(w, "{name},{v},{se}")?;
        }
        Ok(())
    })
}

fn read_groups(paths: &[PathBuf]) -> Result<Vec<Vec<TrajectoryRecord>>> {
    paths
        .iter()
        .map(|p| {
            read_trajectories(p).map(|(_, r)| r).map_err(|e| match e {
                mipt_core::Error::Io(io) => CliError::usage(format!("{}: {io}", p.display())),
                other => other.into(),
            })
        })
        .collect()
}

pub fn train(config_path: &Path) -> Result<()> {
    let mut kv = KeyValues::load(config_path)?;
    let train_files = kv.take_paths("train")?.ok_or_else(|| CliError::usage("missing key train"))?;
    let test_files = kv.take_paths("test")?.ok_or_else(|| CliError::usage("missing key test"))?;
    let checkpoint = kv.take_path("checkpoint")?.ok_or_else(|| CliError::usage("missing key checkpoint"))?;
    let loss_csv = kv.take_path("loss_csv")?.unwrap_or_else(|| sidecar(&checkpoint, "loss"));
    let config = kv.take_train_config()?;
    kv.finish()?;
    let train_groups = read_groups(&train_files)?;
    let test_groups = read_groups(&test_files)?;
    let outcome = quan::train(&train_groups, &test_groups, &config)?;
    let ckpt = Checkpoint::new(&outcome.params, &config, outcome.best_epoch, outcome.best_test_loss);
    if let Some(dir) = checkpoint.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    ckpt.save(&checkpoint)?;
    emit(Some(&loss_csv), |w| outcome.history.write_csv(w))?;
    println!("best_epoch={} best_test_loss={} checksum={}", outcome.best_epoch, outcome.best_test_loss, ckpt.checksum()?);
    Ok(())
}

pub fn eval(model: &Path, inputs: &[PathBuf], seed: Option<u64>, out: Option<&Path>) -> Result<()> {
    let ckpt = Checkpoint::load(model)?;
    let params = ckpt.params()?;
    let mut config = ckpt.config.clone();
    if let Some(s) = seed {
        config.seed = s;
    }
    let groups = read_groups(inputs)?;
    for (g, path) in groups.iter().zip(inputs) {
        if let Some(r) = g.iter().find(|r| r.l != ckpt.dims.l) {
            return Err(CliError::usage(format!("{}: L = {} but the model expects L = {}", path.display(), r.l, ckpt.dims.l)));
        }
        if g.len() < config.set_size {
            return Err(CliError::usage(format!(
                "{}: {} records cannot fill one set of the model's N = {}",
                path.display(),
                g.len(),
                config.set_size
            )));
        }
    }
    let metrics = quan::eval_metrics(&params, &groups, &config)?;
    emit(out, |w| metrics.write_csv(w))
}

/// Where sweep training data come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Source {
    Circuit,
    /// Independent bits with `P(1) = (1 − γ) / 2`: a fast, learnable stand-in.
    Synthetic,
}

#[derive(Debug, Clone)]
struct SweepSpec {
    l: usize,
    train_gammas: Vec<f64>,
    eval_gammas: Vec<f64>,
    m: usize,
    test_m: usize,
    noise: Option<NoiseModel>,
    source: Source,
    config: TrainConfig,
}

fn synthetic_records(l: usize, gamma: f64, count: usize, seed: u64) -> Result<Vec<TrajectoryRecord>> {
    let q = 0.5 * (1.0 - gamma);
    (0..count as u64)
        .map(|i| {
            let mut rng = stream_rng(seed, i);
            let bits = (0..2 * l * l).map(|_| u8::from(rng.gen::<f64>() < q)).collect();
            Ok(TrajectoryRecord::new(l, bits, gamma, TaskKind::PhaseRecognition, phase_label(gamma), seed ^ i)?)
        })
        .collect()
}

impl SweepSpec {
    fn records(&self, l: usize, gamma: f64, count: usize, seed: u64) -> Result<Vec<TrajectoryRecord>> {
        match self.source {
            Source::Synthetic => synthetic_records(l, gamma, count, seed),
            Source::Circuit => {
                let config = CircuitConfig::new(l, gamma, TaskKind::PhaseRecognition, InitialState::Psi0, seed).with_noise(self.noise);
                Ok(TrajectorySampler::new(config)?.run_many(0..count as u64)?)
            }
        }
    }
}

const TRAIN_SPLIT: u64 = 0;
const TEST_SPLIT: u64 = 1;

/// Result of one training in a sweep.
struct Trial {
    test_loss: f64,
    /// `⟨y⟩` per evaluation `γ`.
    mean_y: Vec<f64>,
    gamma_star: Option<f64>,
}

fn run_trial(spec: &SweepSpec, rep: usize) -> Result<Trial> {
    let seed = stream_seed(spec.config.seed, rep as u64);
    let l = spec.l;
    let data = |gamma: f64, count: usize, split: u64| spec.records(l, gamma, count, stream_seed(stream_seed(seed, gamma.to_bits()), split));
    let train_groups = spec.train_gammas.iter().map(|&g| data(g, spec.m, TRAIN_SPLIT)).collect::<Result<Vec<_>>>()?;
    let test_groups = spec.train_gammas.iter().map(|&g| data(g, spec.test_m, TEST_SPLIT)).collect::<Result<Vec<_>>>()?;
    let config = TrainConfig { seed, ..spec.config.clone() };
    let outcome = quan::train(&train_groups, &test_groups, &config)?;
    let eval_groups = spec.eval_gammas.iter().map(|&g| data(g, spec.test_m, TEST_SPLIT)).collect::<Result<Vec<_>>>()?;
    let metrics = quan::eval_metrics(&outcome.params, &eval_groups, &config)?;
    log::info!("rep {rep}: test loss {:.4}, gamma* {:?}", outcome.best_test_loss, metrics.gamma_star);
    Ok(Trial {
        test_loss: outcome.best_test_loss,
        mean_y: metrics.rows.iter().map(|r| r.mean_y).collect(),
        gamma_star: metrics.gamma_star,
    })
}

fn load_sweep_spec(path: &Path) -> Result<SweepSpec> {
    let mut kv = KeyValues::load(path)?;
    let l = kv.require("L")?;
    let train_gammas: Vec<f64> = kv.take_list("train_gammas")?.ok_or_else(|| CliError::usage("missing key train_gammas"))?;
    let mut eval_gammas: Vec<f64> = kv.take_list("eval_gammas")?.unwrap_or_else(|| train_gammas.clone());
    eval_gammas.sort_by(f64::total_cmp);
    let m = kv.require("M")?;
    let test_m = kv.take("test_M")?.unwrap_or(m);
    let noise = noise_model(kv.take_list::<f64>("noise")?.as_deref())?;
    let source = match kv.take::<String>("source")?.as_deref() {
        None | Some("circuit") => Source::Circuit,
        Some("synthetic") => Source::Synthetic,
        Some(other) => return Err(CliError::usage(format!("unknown source {other}"))),
    };
    let config = kv.take_train_config()?;
    kv.finish()?;
    Ok(SweepSpec { l, train_gammas, eval_gammas, m, test_m, noise, source, config })
}

fn mean_stderr(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let w: Welford = values.into_iter().collect();
    let se = if w.count() > 1 { w.stderr() } else { f64::NAN };
    (w.mean(), se)
}

fn as_count(axis: Axis, v: f64) -> Result<usize> {
    if v < 1.0 || v.fract() != 0.0 {
        return Err(CliError::usage(format!("{axis:?} values must be positive integers, got {v}")));
    }
    Ok(v as usize)
}

/// One row of the sweep table.
struct Cell {
    value: f64,
    reps: usize,
    loss: (f64, f64),
    mean_y: (f64, f64),
    gamma_star: (f64, f64),
    found: usize,
}

fn summarize(value: f64, trials: &[Trial], y_index: Option<usize>) -> Cell {
    let stars: Vec<f64> = trials.iter().filter_map(|t| t.gamma_star).collect();
    Cell {
        value,
        reps: trials.len(),
        loss: mean_stderr(trials.iter().map(|t| t.test_loss)),
        mean_y: y_index.map_or((f64::NAN, f64::NAN), |i| mean_stderr(trials.iter().map(|t| t.mean_y[i]))),
        gamma_star: if stars.is_empty() { (f64::NAN, f64::NAN) } else { mean_stderr(stars.iter().copied()) },
        found: stars.len(),
    }
}

pub fn sweep(config: &Path, axis: Axis, values: &[f64], reps: usize, epsilon: &[f64], out: &Path) -> Result<()> {
    if reps == 0 {
        return Err(CliError::usage("--reps must be positive"));
    }
    let spec = load_sweep_spec(config)?;
    let mut cells = Vec::with_capacity(values.len());
    if axis == Axis::Gamma {
        let spec = SweepSpec { eval_gammas: values.to_vec(), ..spec };
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let trials = (0..reps).map(|r| run_trial(&spec, r)).collect::<Result<Vec<_>>>()?;
        for (rank, &i) in order.iter().enumerate() {
            cells.push((i, summarize(values[i], &trials, Some(rank))));
        }
        cells.sort_by_key(|c| c.0);
    } else {
        for (i, &v) in values.iter().enumerate() {
            let mut s = spec.clone();
            match axis {
                Axis::M => s.m = as_count(axis, v)?,
                Axis::N => s.config.set_size = as_count(axis, v)?,
                Axis::L => s.l = as_count(axis, v)?,
                Axis::Gamma => unreachable!(),
            }
            s.config.validate()?;
            let trials = (0..reps).map(|r| run_trial(&s, r)).collect::<Result<Vec<_>>>()?;
            cells.push((i, summarize(v, &trials, None)));
        }
    }
    let name = match axis {
        Axis::M => "M",
        Axis::N => "N",
        Axis::L => "L",
        Axis::Gamma => "gamma",
    };
    emit(Some(out), |w| {
        writeln!(w, "axis,value,reps,test_loss,test_loss_stderr,mean_y,mean_y_stderr,gamma_star,gamma_star_stderr,gamma_star_found")?;
        for (_, c) in &cells {
            writeln!(
                w,
                "{name},{},{},{},{},{},{},{},{},{}",
                c.value, c.reps, c.loss.0, c.loss.1, c.mean_y.0, c.mean_y.1, c.gamma_star.0, c.gamma_star.1, c.found
            )?;
        }
        Ok(())
    })?;
    if axis != Axis::Gamma {
        let losses: Vec<f64> = cells.iter().map(|(_, c)| c.loss.0).collect();
        let monotone = losses.windows(2).all(|p| p[1] <= p[0]);
        let best = cells.iter().min_by(|a, b| a.1.loss.0.total_cmp(&b.1.loss.0)).map(|(_, c)| c);
        emit(Some(&sidecar(out, "trend")), |w| {
            writeln!(w, "axis,monotone_decreasing,best_value,best_test_loss")?;
            if let Some(b) = best {
                writeln!(w, "{name},{monotone},{},{}", b.value, b.loss.0)?;
            }
            Ok(())
        })?;
    }
    if axis == Axis::M {
        let table: Vec<(usize, f64)> = cells.iter().map(|(_, c)| (c.value as usize, c.loss.0)).collect();
        emit(Some(&sidecar(out, "mstar")), |w| write_mstar(w, &table, epsilon))?;
    }
    Ok(())
}

/// CSV `epsilon,mstar`; `nan` where no `M` reaches the threshold.
pub fn write_mstar(w: &mut dyn Write, table: &[(usize, f64)], epsilon: &[f64]) -> mipt_core::Result<()> {
    writeln!(w, "epsilon,mstar")?;
    for &eps in epsilon {
        match quan::minimal_sample_complexity(table, eps) {
            Ok(m) => writeln!(w, "{eps},{m}")?,
            Err(mipt_core::Error::ThresholdNotReached(_)) => writeln!(w, "{eps},nan")?,
            Err(e) => return Err(e),
        }
    }
    Ok(())
}
