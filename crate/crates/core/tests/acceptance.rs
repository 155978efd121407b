//! End-to-end acceptance run. Prints one `PASS`/`FAIL` line per criterion and
//! fails if any hard criterion fails. `ACCEPTANCE_CRITERIA=1,3,9` restricts the
//! run to a subset.

use std::io::Write;
use std::time::{Duration, Instant};

use mipt_core::borndist::{betabinom_prob_p, binom_prob_p, empirical_born, tail_ratio};
use mipt_core::circuits::{coupling_distinguish, coupling_phase, phase_label, TrajectorySampler};
use mipt_core::correlations::spatiotemporal_corr;
use mipt_core::decoder::{accuracy_alpha_mc, pcorr_exact, pcorr_gamma1_mc, pcorr_trajectory, BornModel, Estimate, McEstimator, TieRule};
use mipt_core::orderparam::{crossing_estimate, sq_cell, sq_sweep};
use mipt_core::quan::introspect::{attention_vs_born, born_score_trend};
use mipt_core::quan::{self, backward, forward, Ablation, Checkpoint, ModelDims, ModelParams, TrainConfig};
use mipt_core::rng::stream_rng;
use mipt_core::{CircuitConfig, InitialState, TaskKind, TrajectoryRecord};
use qd::Quad;
use rand::seq::SliceRandom;
use rand::Rng;

#[allow(dead_code)]
#[path = "../src/quan/reference.rs"]
mod reference;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

/// Writes past the test harness's output capture so every line shows up.
fn report(id: usize, v: &Verdict, elapsed: Duration, soft: bool) {
    let tag = if v.pass { "PASS" } else { "FAIL" };
    let soft = if soft { " (soft gate)" } else { "" };
    let line = format!("acceptance {id:>2}: {tag}{soft} [{:.1} s] {}\n", elapsed.as_secs_f64(), v.detail);
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
}

/// `b` does not fall below `a` by more than `k` combined standard errors.
fn not_below(a: &Estimate, b: &Estimate, k: f64) -> bool {
    b.value >= a.value - k * (a.stderr.powi(2) + b.stderr.powi(2)).sqrt()
}

fn fmt_est(e: &Estimate) -> String {
    format!("{:.4}±{:.4}", e.value, e.stderr)
}

fn c1() -> Verdict {
    let t = Instant::now();
    let mut worst = 0.0f64;
    for (m, d) in [(50u64, 2f64.powi(8)), (1_000, 2f64.powi(16)), (10_000, 2f64.powi(20))] {
        for pmf in [binom_prob_p, betabinom_prob_p] {
            let total: f64 = (0..=m).map(|k| pmf(k, m, d).unwrap()).sum::<f64>() / m as f64;
            worst = worst.max((total - 1.0).abs());
        }
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(worst < 1e-9 && secs < 1.0, format!("max |sum pmf/M - 1| = {worst:.2e}, {secs:.3} s"))
}

fn c2() -> Verdict {
    let (m, d) = (100u64, 2f64.powi(16));
    let bin: Vec<f64> = (0..=m).map(|k| binom_prob_p(k, m, d).unwrap()).collect();
    let bb: Vec<f64> = (0..=m).map(|k| betabinom_prob_p(k, m, d).unwrap()).collect();
    let ordering_ok = (2..=m as usize).all(|k0| bb[k0..].iter().sum::<f64>() >= bin[k0..].iter().sum::<f64>());

    let (m, d) = (100u64, 2f64.powi(20));
    let k = 10u64;
    let exact = binom_prob_p(k, m, d).unwrap() / betabinom_prob_p(k, m, d).unwrap();
    let formula = tail_ratio(k as f64 / m as f64, m, d).unwrap();
    let rel = (formula - exact).abs() / exact;
    verdict(
        ordering_ok && rel <= 0.1,
        format!(
            "tail ordering for all k0 >= 2: {ordering_ok}; tail_ratio(10/M) = {formula:.3e} vs exact pmf ratio {exact:.3e} (relative error {rel:.3})"
        ),
    )
}

fn c3() -> Verdict {
    let t = Instant::now();
    let d = 2f64.powi(12);
    let pcorr = pcorr_gamma1_mc(1, d, 1_000_000, McEstimator::SizeBiased, &mut stream_rng(3, 0)).unwrap();
    let alpha = accuracy_alpha_mc(BornModel::PorterThomas, d, 1_000_000, TieRule::Half, &mut stream_rng(3, 1)).unwrap();
    let same = [0.1, 0.2, 0.3, 0.4];
    let exact = pcorr_exact(&same, &same).unwrap();
    let secs = t.elapsed().as_secs_f64();
    verdict(
        (pcorr.value - 0.667).abs() <= 0.01 && (alpha.value - 0.75).abs() <= 0.01 && exact == 0.5 && secs < 30.0,
        format!("P_corr(N=1) = {}, alpha = {}, identical exact = {exact}, {secs:.1} s", fmt_est(&pcorr), fmt_est(&alpha)),
    )
}

fn c4() -> Verdict {
    let d = 2f64.powi(12);
    let ns = [1usize, 4, 16, 64, 256];
    let est: Vec<Estimate> = ns
        .iter()
        .map(|&n| pcorr_gamma1_mc(n, d, 200_000, McEstimator::SizeBiased, &mut stream_rng(4, n as u64)).unwrap())
        .collect();
    let monotone = est.windows(2).all(|w| not_below(&w[0], &w[1], 1.0));
    let last = est.last().unwrap().value;
    let curve: Vec<String> = ns.iter().zip(&est).map(|(n, e)| format!("N={n}: {}", fmt_est(e))).collect();
    verdict(monotone && last >= 0.99, format!("{} (non-decreasing: {monotone})", curve.join(", ")))
}

fn records(l: usize, gamma: f64, task: TaskKind, initial: InitialState, count: usize, seed: u64) -> Vec<TrajectoryRecord> {
    TrajectorySampler::new(CircuitConfig::new(l, gamma, task, initial, seed)).unwrap().run_many(0..count as u64).unwrap()
}

fn c5() -> Verdict {
    let mut zero_ok = true;
    for l in [4usize, 8] {
        for initial in [InitialState::Psi0, InitialState::Phi0] {
            let recs = records(l, 0.0, TaskKind::StateDistinguish, initial, 1_000, 5);
            zero_ok &= recs.iter().all(|r| r.bits.iter().all(|&b| b == 0));
        }
    }
    let l = 8;
    let recs = records(l, 0.0, TaskKind::PhaseRecognition, InitialState::Psi0, 10_000 / (2 * l), 5);
    let sweeps = (recs.len() * 2 * l) as f64;
    let sigma = 0.5 / sweeps.sqrt();
    let worst_z = (0..l)
        .map(|x| {
            let ones: usize = recs.iter().map(|r| (0..2 * l).map(|t| usize::from(r.bit(t, x))).sum::<usize>()).sum();
            ((ones as f64 / sweeps - 0.5) / sigma).abs()
        })
        .fold(0.0f64, f64::max);
    let gate_diff = coupling_phase(1.0).unwrap().max_abs_diff(&coupling_distinguish(1.0).unwrap());
    verdict(
        zero_ok && worst_z <= 4.0 && gate_diff <= 1e-12,
        format!("gamma=0 distinguish all-zero: {zero_ok}; phase per-site mean worst |z| = {worst_z:.2} over {sweeps} sweeps; |U_phase(1) - U_dist(1)| = {gate_diff:.1e}"),
    )
}

fn duals_pcorr(l: usize, gamma: f64, m: usize, n: usize, seed: u64) -> Estimate {
    let mut duals = Vec::with_capacity(2 * m);
    for initial in [InitialState::Psi0, InitialState::Phi0] {
        let config = CircuitConfig::new(l, gamma, TaskKind::StateDistinguish, initial, seed + u64::from(initial.label()));
        duals.extend(TrajectorySampler::new(config).unwrap().run_dual_many(0..m as u64).unwrap());
    }
    pcorr_trajectory(&duals, n, &mut stream_rng(seed, 99)).unwrap()
}

fn c6() -> Verdict {
    let t = Instant::now();
    let gammas = [0.05, 0.2, 0.4, 0.6, 0.9];
    let est: Vec<Estimate> = gammas.iter().enumerate().map(|(i, &g)| duals_pcorr(8, g, 4_000, 64, 600 + 10 * i as u64)).collect();
    let monotone = est.windows(2).all(|w| not_below(&w[0], &w[1], 2.0));
    let low_ok = (est[0].value - 0.5).abs() <= 0.02;
    let high_ok = est[4].value >= 0.99;
    let secs = t.elapsed().as_secs_f64();
    let curve: Vec<String> = gammas.iter().zip(&est).map(|(g, e)| format!("{g}: {}", fmt_est(e))).collect();
    verdict(
        monotone && low_ok && high_ok && secs < 1200.0,
        format!("L=8 N=64 P_corr by gamma {}; monotone: {monotone}", curve.join(", ")),
    )
}

fn c7() -> Verdict {
    let t = Instant::now();
    let s0 = sq_cell(8, 0.0, 100, None, 7).unwrap();
    let s1 = sq_cell(8, 1.0, 100, None, 7).unwrap();
    let limits_ok = (s0.mean_sq - 1.0).abs() <= 1e-9 && s1.mean_sq.abs() <= 1e-9;
    let grid: Vec<f64> = (0..=10).map(|i| 0.10 + 0.02 * i as f64).collect();
    let table = sq_sweep(&[8, 12], &grid, 5_000, None, 7).unwrap();
    let crossing = crossing_estimate(&table, (8, 12));
    let secs = t.elapsed().as_secs_f64();
    let crossing_ok = matches!(crossing, Ok(g) if (0.17..=0.29).contains(&g));
    verdict(
        limits_ok && crossing_ok && secs < 1800.0,
        format!(
            "<S_Q>(L=8) = {:.3e} at gamma 0, {:.3e} at gamma 1; L=8/12 crossing on [0.10, 0.30] step 0.02: {:?}",
            s0.mean_sq, s1.mean_sq, crossing.map(|g| (g * 1e4).round() / 1e4)
        ),
    )
}

fn c8() -> Verdict {
    let l = 8;
    let est: Vec<Estimate> = [0.1, 0.5, 0.9]
        .iter()
        .enumerate()
        .map(|(i, &g)| spatiotemporal_corr(&records(l, g, TaskKind::PhaseRecognition, InitialState::Psi0, 10_000, 80 + i as u64), l).unwrap())
        .collect();
    let increasing = est.windows(2).all(|w| w[1].value > w[0].value || not_below(&w[0], &w[1], 2.0));
    let strictly = est.windows(2).all(|w| w[1].value > w[0].value);
    verdict(
        increasing,
        format!("C(dt=L, dx=0) at gamma 0.1/0.5/0.9: {} (strictly increasing: {strictly})", est.iter().map(fmt_est).collect::<Vec<_>>().join(", ")),
    )
}

fn perturbed_model(dims: ModelDims, seed: u64) -> ModelParams {
    let mut p = ModelParams::init(dims, &mut stream_rng(seed, 0));
    let mut rng = stream_rng(seed, 1);
    for t in p.tensors_mut() {
        t.mapv_inplace(|v| v + rng.gen_range(-0.3..0.3));
    }
    p
}

fn random_records(l: usize, n: usize, seed: u64) -> Vec<TrajectoryRecord> {
    let mut rng = stream_rng(seed, 0);
    (0..n)
        .map(|i| {
            let bits = (0..2 * l * l).map(|_| rng.gen_range(0..2u8)).collect();
            TrajectoryRecord::new(l, bits, 0.3, TaskKind::PhaseRecognition, 0, i as u64).unwrap()
        })
        .collect()
}

fn marked(l: usize, bit: u8, gamma: f64, label: u8, count: usize) -> Vec<TrajectoryRecord> {
    (0..count)
        .map(|i| {
            let mut bits = vec![bit; 2 * l * l];
            bits[..l].fill(1 - bit);
            TrajectoryRecord::new(l, bits, gamma, TaskKind::PhaseRecognition, label, i as u64).unwrap()
        })
        .collect()
}

fn c9() -> Verdict {
    let t = Instant::now();
    let dims = ModelDims { l: 4, n_e: 2, d_h: 4 };
    let mut worst_grad = 0.0f64;
    let mut checked = 0usize;
    for seed in 1..=3u64 {
        let p = perturbed_model(dims, seed);
        let recs = random_records(4, 4, seed + 100);
        let label = (seed % 2) as u8;
        let analytic = backward(&p, &forward(&p, &recs, Ablation::Full, None).unwrap(), label).flatten();
        let h = Quad::from(1e-5);
        let shifted = |ti: usize, j: usize, d: Quad| reference::loss(&reference::RefParams::new(&p, Some((ti, j, d))), &recs, label, Ablation::Full);
        let mut offset = 0;
        for (ti, (_, tensor)) in p.tensors().into_iter().enumerate() {
            for j in 0..tensor.len() {
                let ga = analytic[offset + j];
                if ga.abs() > 1e-8 {
                    let gn = ((shifted(ti, j, h) - shifted(ti, j, -h)) / (h + h)).0;
                    worst_grad = worst_grad.max((ga - gn).abs() / ga.abs());
                    checked += 1;
                }
            }
            offset += tensor.len();
        }
    }

    let mut worst_perm = 0.0f64;
    let mut worst_row = 0.0f64;
    for seed in 1..=3u64 {
        let p = perturbed_model(dims, seed);
        let recs = random_records(4, 16, seed + 200);
        let mut shuffled = recs.clone();
        shuffled.shuffle(&mut stream_rng(seed, 2));
        for ablation in [Ablation::Full, Ablation::NoInterTraj, Ablation::NoAttention] {
            let a = forward(&p, &recs, ablation, None).unwrap();
            let b = forward(&p, &shuffled, ablation, None).unwrap();
            worst_perm = worst_perm.max((a.y - b.y).abs());
            for m in a.attention_matrices() {
                for row in m.rows() {
                    worst_row = worst_row.max((row.sum() - 1.0).abs());
                }
            }
        }
    }

    let config = TrainConfig { n_e: 2, set_size: 4, d_h: 4, learning_rate: 1e-2, batch_trajectories: 16, max_epochs: 20, seed: 9, ..TrainConfig::default() };
    let train = vec![marked(4, 0, 0.1, 0, 32), marked(4, 1, 0.9, 1, 32)];
    let test = vec![marked(4, 0, 0.1, 0, 16), marked(4, 1, 0.9, 1, 16)];
    let run = || {
        let out = quan::train(&train, &test, &config).unwrap();
        Checkpoint::new(&out.params, &config, out.best_epoch, out.best_test_loss).checksum().unwrap()
    };
    let (a, b) = (run(), run());
    let secs = t.elapsed().as_secs_f64();
    verdict(
        worst_grad < 1e-4 && worst_perm < 1e-12 && worst_row <= 1e-9 && a == b && secs < 300.0,
        format!(
            "gradient check worst relative error {worst_grad:.2e} over {checked} entries; permutation {worst_perm:.1e}; softmax rows {worst_row:.1e}; identical checkpoints: {}",
            a == b
        ),
    )
}

/// Shared setup of the desk-scale phase-recognition runs.
struct PhaseData {
    train: Vec<Vec<TrajectoryRecord>>,
    test: Vec<Vec<TrajectoryRecord>>,
    eval: Vec<Vec<TrajectoryRecord>>,
}

const TRAIN_GAMMAS: [f64; 4] = [0.05, 0.1, 0.85, 0.9];
const EVAL_GAMMAS: [f64; 11] = [0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.85, 0.9];

fn phase_records(l: usize, gamma: f64, count: usize, seed: u64) -> Vec<TrajectoryRecord> {
    let recs = records(l, gamma, TaskKind::PhaseRecognition, InitialState::Psi0, count, seed);
    assert!(recs.iter().all(|r| r.label == phase_label(gamma)));
    recs
}

fn phase_data(l: usize, m: usize) -> PhaseData {
    let group = |gammas: &[f64], count: usize, base: u64| -> Vec<Vec<TrajectoryRecord>> {
        gammas.iter().enumerate().map(|(i, &g)| phase_records(l, g, count, base + i as u64)).collect()
    };
    PhaseData { train: group(&TRAIN_GAMMAS, m, 1_000), test: group(&TRAIN_GAMMAS, 256, 2_000), eval: group(&EVAL_GAMMAS, 256, 3_000) }
}

fn desk_config(seed: u64, ablation: Ablation) -> TrainConfig {
    TrainConfig { set_size: 16, learning_rate: 1e-3, batch_trajectories: 256, max_epochs: 100, seed, ablation, ..TrainConfig::default() }
}

struct Trained {
    params: ModelParams,
    loss: f64,
    gamma_star: Option<f64>,
    y_low: f64,
    y_high: f64,
}

fn train_and_eval(data: &PhaseData, config: &TrainConfig) -> Trained {
    let out = quan::train(&data.train, &data.test, config).unwrap();
    let m = quan::eval_metrics(&out.params, &data.eval, config).unwrap();
    Trained {
        loss: out.best_test_loss,
        gamma_star: m.gamma_star,
        y_low: m.rows.first().unwrap().mean_y,
        y_high: m.rows.last().unwrap().mean_y,
        params: out.params,
    }
}

fn c10(models: &mut Vec<ModelParams>) -> Verdict {
    let t = Instant::now();
    let data = phase_data(8, 1_024);
    let mut main_ok = true;
    let mut worse = 0;
    let mut notes = Vec::new();
    for seed in 1..=3u64 {
        let full = train_and_eval(&data, &desk_config(seed, Ablation::Full));
        let ablated = train_and_eval(&data, &desk_config(seed, Ablation::NoInterTraj));
        let ok = full.loss < 0.1 && full.y_low < 0.3 && full.y_high > 0.7 && matches!(full.gamma_star, Some(g) if g > 0.1 && g < 0.85);
        main_ok &= ok;
        let is_worse = ablated.loss > full.loss || ablated.gamma_star.is_none();
        worse += usize::from(is_worse);
        notes.push(format!(
            "seed {seed}: loss {:.4}, <y>(0.05) {:.3}, <y>(0.9) {:.3}, gamma* {:?}; no-intertraj loss {:.4}, gamma* {:?}",
            full.loss,
            full.y_low,
            full.y_high,
            full.gamma_star.map(|g| (g * 1e3).round() / 1e3),
            ablated.loss,
            ablated.gamma_star.map(|g| (g * 1e3).round() / 1e3)
        ));
        models.push(full.params);
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        main_ok && worse >= 2 && secs < 7200.0,
        format!("{}; ablation worse on {worse}/3 seeds", notes.join("; ")),
    )
}

fn c11() -> Verdict {
    let table = [(128usize, 0.7), (256, 0.45), (512, 0.2), (1024, 0.08)];
    let bumpy = [(128usize, 0.3), (256, 0.5), (512, 0.09), (1024, 0.12)];
    let msc = quan::minimal_sample_complexity;
    let tables_ok = msc(&table, 0.4).unwrap() == 512
        && msc(&table, 0.1).unwrap() == 1024
        && msc(&table, 0.08).unwrap() == 1024
        && msc(&table, 0.05).is_err()
        && msc(&bumpy, 0.4).unwrap() == 128
        && msc(&bumpy, 0.1).unwrap() == 512
        && msc(&[], 0.5).is_err();
    let mut runs_ok = true;
    let mut notes = Vec::new();
    for l in [6usize, 8] {
        let full = phase_data(l, 1_024);
        let losses: Vec<(usize, f64)> = [128usize, 256, 512, 1024]
            .iter()
            .map(|&m| {
                let train: Vec<Vec<TrajectoryRecord>> = full.train.iter().map(|g| g[..m].to_vec()).collect();
                let out = quan::train(&train, &full.test, &desk_config(11, Ablation::Full)).unwrap();
                (m, out.best_test_loss)
            })
            .collect();
        let (a, b) = (msc(&losses, 0.4).ok(), msc(&losses, 0.1).ok());
        if let (Some(a), Some(b)) = (a, b) {
            runs_ok &= a <= b;
        }
        let shown: Vec<String> = losses.iter().map(|(m, loss)| format!("{m}: {loss:.4}")).collect();
        notes.push(format!("L={l} losses {{{}}} M*(0.4) = {a:?}, M*(0.1) = {b:?}", shown.join(", ")));
    }
    verdict(tables_ok && runs_ok, format!("hand tables: {tables_ok}; {}", notes.join("; ")))
}

fn c12(models: &[ModelParams]) -> Verdict {
    if models.is_empty() {
        return verdict(false, "needs the trained models of criterion 10".into());
    }
    let recs = phase_records(8, 0.9, 1_024, 12_000);
    let t = 1;
    let born = empirical_born(&recs, t, true).unwrap();
    let rhos: Vec<Option<f64>> = models
        .iter()
        .map(|p| born_score_trend(&attention_vs_born(p, &recs, t, &born).unwrap()))
        .collect();
    let positive = rhos.iter().filter(|r| matches!(r, Some(v) if *v > 0.0)).count();
    let shown: Vec<String> = rhos.iter().map(|r| r.map_or("undefined".into(), |v| format!("{v:.3}"))).collect();
    verdict(positive >= 2, format!("Spearman(Born product, mean score) at gamma 0.9, t=2 by seed: {}", shown.join(", ")))
}

#[test]
fn acceptance() {
    let selected: Option<Vec<usize>> = std::env::var("ACCEPTANCE_CRITERIA")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |id: usize| selected.as_ref().map_or(true, |s| s.contains(&id));
    let mut models = Vec::new();
    let mut failed = Vec::new();
    let soft = [12usize];
    std::io::stdout().lock().write_all(b"\n").unwrap();
    for id in 1..=12usize {
        if !wanted(id) {
            continue;
        }
        let t = Instant::now();
        let v = match id {
            1 => c1(),
            2 => c2(),
            3 => c3(),
            4 => c4(),
            5 => c5(),
            6 => c6(),
            7 => c7(),
            8 => c8(),
            9 => c9(),
            10 => c10(&mut models),
            11 => c11(),
            _ => c12(&models),
        };
        report(id, &v, t.elapsed(), soft.contains(&id));
        if !v.pass && !soft.contains(&id) {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failed acceptance criteria: {failed:?}");
}

/// Qualitative L = 12 learnability check: `P_corr ≥ 0.95` by `γ = 0.5`.
#[test]
#[ignore = "long run"]
fn acceptance_6_l12() {
    let t = Instant::now();
    let e = duals_pcorr(12, 0.5, 2_000, 64, 612);
    report(6, &verdict(e.value >= 0.95, format!("L=12 gamma=0.5 P_corr = {}", fmt_est(&e))), t.elapsed(), true);
    assert!(e.value >= 0.95);
}
