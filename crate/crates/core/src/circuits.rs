//! Circuit protocols: scrambled initial states, monitored brickwork dynamics
//! with ancilla-mediated weak measurements, and trajectory sampling.
//!
//! Layout conventions:
//! - system qubits are `0..L`; the measurement ancilla (when simulated
//!   explicitly) is qubit `L`; the reference qubit of the baseline protocol is
//!   qubit `L` of the fast path.
//! - even brick layers act on bonds `(0,1), (2,3), ...`; odd layers on
//!   `(1,2), ..., (L-1,0)` with periodic wraparound. The left site of a bond is
//!   the more-significant gate qubit.
//! - a scrambling time step is one even plus one odd layer; the monitored part
//!   has `2L` single layers (even first), each followed by a full sweep of weak
//!   measurements in ascending site order.
//!
//! Two implementations of the weak measurement exist. [`weak_measure_sweep`]
//! literally entangles an explicit ancilla, measures it and resets it. The
//! sampler uses the equivalent Kraus update on the system qubit: with the
//! ancilla prepared in `|a>`, outcome `b` applies
//! `K_b = diag(<b|B_0|a>, <b|B_1|a>)` where `B_c` is the ancilla block of the
//! controlled coupling for control value `c`. Both consume random numbers in
//! the same order, so they produce identical records for the same stream.

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{stream_rng, stream_seed, StreamRng};
use crate::statevec::{
    sample_binary, sample_pauli_error, Gate1Q, Gate2Q, NoiseModel, Pauli, PureState, C64,
};
use crate::{Error, Result};

/// Which protocol generated a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    StateDistinguish,
    PhaseRecognition,
    ReferenceQubit,
}

impl TaskKind {
    pub fn code(self) -> u8 {
        match self {
            TaskKind::StateDistinguish => 0,
            TaskKind::PhaseRecognition => 1,
            TaskKind::ReferenceQubit => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(TaskKind::StateDistinguish),
            1 => Ok(TaskKind::PhaseRecognition),
            2 => Ok(TaskKind::ReferenceQubit),
            other => Err(Error::Format(format!("unknown task code {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::StateDistinguish => "distinguish",
            TaskKind::PhaseRecognition => "phase",
            TaskKind::ReferenceQubit => "refqubit",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [TaskKind::StateDistinguish, TaskKind::PhaseRecognition, TaskKind::ReferenceQubit]
            .into_iter()
            .find(|t| t.name() == name)
    }

    /// Whether the monitored dynamics use the phase-recognition gates.
    fn uses_phase_protocol(self) -> bool {
        !matches!(self, TaskKind::StateDistinguish)
    }
}

/// Product state that is scrambled into the initial state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InitialState {
    /// Scrambled `|0>^L`.
    Psi0,
    /// Scrambled `|+>^L`.
    Phi0,
}

impl InitialState {
    pub fn label(self) -> u8 {
        match self {
            InitialState::Psi0 => 0,
            InitialState::Phi0 => 1,
        }
    }

    pub fn other(self) -> Self {
        match self {
            InitialState::Psi0 => InitialState::Phi0,
            InitialState::Phi0 => InitialState::Psi0,
        }
    }

    fn product(self, l: usize) -> PureState {
        match self {
            InitialState::Psi0 => PureState::zero(l),
            InitialState::Phi0 => PureState::plus(l),
        }
    }
}

/// Everything needed to sample trajectories of one circuit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitConfig {
    pub l: usize,
    pub gamma: f64,
    pub task: TaskKind,
    pub initial: InitialState,
    pub noise: Option<NoiseModel>,
    pub master_seed: u64,
}

impl CircuitConfig {
    pub fn new(l: usize, gamma: f64, task: TaskKind, initial: InitialState, master_seed: u64) -> Self {
        CircuitConfig { l, gamma, task, initial, noise: None, master_seed }
    }

    pub fn with_noise(mut self, noise: Option<NoiseModel>) -> Self {
        self.noise = noise;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.l < 4 || self.l % 2 != 0 {
            return Err(Error::invalid(format!("L = {} must be an even integer >= 4", self.l)));
        }
        check_gamma(self.gamma)?;
        if self.task.uses_phase_protocol() && self.initial != InitialState::Psi0 {
            return Err(Error::invalid("phase-recognition circuits start from Psi0 only"));
        }
        Ok(())
    }

    /// Label stored with each record: the initial-state identity for state
    /// distinguishing, otherwise the monitoring phase (`gamma >= 0.5` is strong).
    pub fn label(&self) -> u8 {
        match self.task {
            TaskKind::StateDistinguish => self.initial.label(),
            _ => phase_label(self.gamma),
        }
    }
}

/// Strong-monitoring label used for phase-recognition data.
pub fn phase_label(gamma: f64) -> u8 {
    u8::from(gamma >= 0.5)
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid(format!("gamma = {gamma} outside [0, 1]")));
    }
    Ok(())
}

/// One measurement trajectory: a `2L x L` grid of ancilla outcomes, stored
/// time-major (`bits[t * L + x]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub l: usize,
    pub bits: Vec<u8>,
    pub gamma: f64,
    pub task: TaskKind,
    pub label: u8,
    pub trajectory_seed: u64,
}

impl TrajectoryRecord {
    pub fn new(l: usize, bits: Vec<u8>, gamma: f64, task: TaskKind, label: u8, trajectory_seed: u64) -> Result<Self> {
        if bits.len() != 2 * l * l {
            return Err(Error::invalid(format!("record has {} bits, expected 2L^2 = {}", bits.len(), 2 * l * l)));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::invalid("record bits must be 0 or 1"));
        }
        Ok(TrajectoryRecord { l, bits, gamma, task, label, trajectory_seed })
    }

    /// Number of time slices, `2L`.
    pub fn num_times(&self) -> usize {
        2 * self.l
    }

    #[inline]
    pub fn bit(&self, t: usize, x: usize) -> u8 {
        self.bits[t * self.l + x]
    }

    pub fn time_slice(&self, t: usize) -> &[u8] {
        &self.bits[t * self.l..(t + 1) * self.l]
    }
}

/// Outcome of a trajectory tracked under both candidate initial states.
#[derive(Debug, Clone, PartialEq)]
pub struct DualLikelihood {
    pub record: TrajectoryRecord,
    /// `ln p(record | Psi0)`.
    pub logp_psi: f64,
    /// `ln p(record | Phi0)`.
    pub logp_phi: f64,
    pub true_state: InitialState,
}

impl DualLikelihood {
    pub fn logp_true(&self) -> f64 {
        match self.true_state {
            InitialState::Psi0 => self.logp_psi,
            InitialState::Phi0 => self.logp_phi,
        }
    }

    pub fn logp_other(&self) -> f64 {
        match self.true_state {
            InitialState::Psi0 => self.logp_phi,
            InitialState::Phi0 => self.logp_psi,
        }
    }
}

fn c(re: f64, im: f64) -> C64 {
    Complex64::new(re, im)
}

#[rustfmt::skip]
const US_PRINTED: [[(f64, f64); 4]; 4] = [
    [(0.3644, 0.3086), (0.2537, 0.0937), (0.5589, 0.0768), (0.5589, -0.2612)],
    [(0.3857, -0.5273), (-0.1871, 0.1649), (0.3448, 0.5512), (-0.2860, 0.0803)],
    [(-0.0213, 0.4688), (0.0841, -0.4706), (0.4436, 0.0357), (-0.5604, 0.1975)],
    [(0.1572, 0.3166), (0.0522, 0.7958), (0.0076, -0.2467), (-0.4211, -0.0276)],
];

#[rustfmt::skip]
const UM_PRINTED: [[(f64, f64); 4]; 4] = [
    [(0.9167, -0.1057), (0.3727, 0.0430), (-0.0300, -0.0692), (-0.0181, 0.0419)],
    [(0.0188, -0.0022), (0.1810, 0.0209), (0.3601, 0.8311), (0.1519, -0.3507)],
    [(-0.0438, -0.3797), (-0.1037, 0.8998), (0.1672, -0.0724), (0.0174, 0.0075)],
    [(0.0052, 0.0454), (0.0086, -0.0750), (0.3443, -0.1491), (0.8467, 0.3668)],
];

fn to_matrix(printed: &[[(f64, f64); 4]; 4]) -> [[C64; 4]; 4] {
    let mut m = [[c(0.0, 0.0); 4]; 4];
    for (row, prow) in m.iter_mut().zip(printed) {
        for (e, &(re, im)) in row.iter_mut().zip(prow) {
            *e = c(re, im);
        }
    }
    m
}

/// Printed (four-decimal) scrambling gate, before re-unitarization.
pub fn gate_us_printed() -> [[C64; 4]; 4] {
    to_matrix(&US_PRINTED)
}

/// Printed (four-decimal) monitored phase-recognition gate.
pub fn gate_um_printed() -> [[C64; 4]; 4] {
    to_matrix(&UM_PRINTED)
}

/// Scrambling gate (also the monitored gate of the state-distinguishing task).
pub fn gate_us() -> Gate2Q {
    static US: OnceLock<Gate2Q> = OnceLock::new();
    *US.get_or_init(|| Gate2Q::reunitarize(gate_us_printed()).expect("printed U_s is near-unitary"))
}

/// Monitored gate of the phase-recognition task.
pub fn gate_um() -> Gate2Q {
    static UM: OnceLock<Gate2Q> = OnceLock::new();
    *UM.get_or_init(|| Gate2Q::reunitarize(gate_um_printed()).expect("printed U_m is near-unitary"))
}

/// `exp(i phi sigma_x)`.
fn x_rotation(phi: f64) -> Gate1Q {
    Gate1Q::rx(2.0 * phi)
}

/// Controlled rotation `|0><0| (x) I + |1><1| (x) exp(i pi gamma sigma_x / 2)`,
/// system qubit as control, ancilla as target.
pub fn coupling_distinguish(gamma: f64) -> Result<Gate2Q> {
    check_gamma(gamma)?;
    Ok(Gate2Q::controlled(&Gate1Q::identity(), &x_rotation(PI * gamma / 2.0)))
}

/// `|0><0| (x) exp(i pi (1-gamma) sigma_x / 4) + |1><1| (x) exp(i pi (1+gamma) sigma_x / 4)`.
pub fn coupling_phase(gamma: f64) -> Result<Gate2Q> {
    check_gamma(gamma)?;
    Ok(Gate2Q::controlled(
        &x_rotation(PI * (1.0 - gamma) / 4.0),
        &x_rotation(PI * (1.0 + gamma) / 4.0),
    ))
}

/// Ancilla pre-rotation `R_x(pi (1 - gamma) / 2)` of the phase protocol.
pub fn ancilla_prerotation(gamma: f64) -> Gate1Q {
    Gate1Q::rx(PI * (1.0 - gamma) / 2.0)
}

/// Bonds of brick layer `layer` (even layers first).
pub fn brick_bonds(l: usize, layer: usize) -> impl Iterator<Item = (usize, usize)> {
    let offset = layer % 2;
    (0..l / 2).map(move |k| {
        let a = 2 * k + offset;
        (a % l, (a + 1) % l)
    })
}

fn apply_gate_noisy<R: Rng + ?Sized>(
    state: &mut PureState,
    gate: &Gate2Q,
    qa: usize,
    qb: usize,
    noise: Option<&NoiseModel>,
    rng: &mut R,
) -> Result<()> {
    state.apply_2q(gate, qa, qb)?;
    if let Some(n) = noise {
        state.apply_depolarizing(&[qa, qb], n.p2q, rng)?;
    }
    Ok(())
}

fn brick_layer<R: Rng + ?Sized>(
    state: &mut PureState,
    gate: &Gate2Q,
    l: usize,
    layer: usize,
    noise: Option<&NoiseModel>,
    rng: &mut R,
) -> Result<()> {
    for (a, b) in brick_bonds(l, layer) {
        apply_gate_noisy(state, gate, a, b, noise, rng)?;
    }
    Ok(())
}

/// Scrambles the first `l` qubits of `state` with `steps` brickwork time steps
/// of [`gate_us`].
pub fn scramble_in_place<R: Rng + ?Sized>(
    state: &mut PureState,
    l: usize,
    steps: usize,
    noise: Option<&NoiseModel>,
    rng: &mut R,
) -> Result<()> {
    let us = gate_us();
    for _ in 0..steps {
        brick_layer(state, &us, l, 0, noise, rng)?;
        brick_layer(state, &us, l, 1, noise, rng)?;
    }
    Ok(())
}

/// Scrambled initial state: `2L` brickwork time steps of [`gate_us`] on
/// `|0>^L` or `|+>^L`.
pub fn scramble<R: Rng + ?Sized>(
    initial: InitialState,
    l: usize,
    noise: Option<&NoiseModel>,
    rng: &mut R,
) -> Result<PureState> {
    scramble_with_steps(initial, l, 2 * l, noise, rng)
}

/// [`scramble`] with an explicit number of time steps.
pub fn scramble_with_steps<R: Rng + ?Sized>(
    initial: InitialState,
    l: usize,
    steps: usize,
    noise: Option<&NoiseModel>,
    rng: &mut R,
) -> Result<PureState> {
    if l < 2 || l % 2 != 0 {
        return Err(Error::invalid(format!("L = {l} must be even")));
    }
    let mut state = initial.product(l);
    scramble_in_place(&mut state, l, steps, noise, rng)?;
    Ok(state)
}

/// One sweep of weak measurements with an explicitly simulated ancilla at
/// qubit index `L` (the last qubit of `state`), which must start in `|0>`.
///
/// For each site in ascending order: (phase protocol) pre-rotate the ancilla,
/// apply the controlled coupling with the site as control, measure the
/// ancilla, record the bit and return the ancilla to `|0>`.
pub fn weak_measure_sweep<R: Rng + ?Sized>(
    state: &mut PureState,
    gamma: f64,
    task: TaskKind,
    noise: Option<&NoiseModel>,
    rng: &mut R,
) -> Result<Vec<u8>> {
    check_gamma(gamma)?;
    let n = state.num_qubits();
    if n < 2 {
        return Err(Error::invalid("state needs at least one system qubit and the ancilla"));
    }
    let anc = n - 1;
    if state.prob_one(anc)? > 1e-12 {
        return Err(Error::invalid("ancilla must start in |0>"));
    }
    let cr = coupling_distinguish(gamma)?;
    let pre = ancilla_prerotation(gamma);
    let mut bits = Vec::with_capacity(anc);
    for x in 0..anc {
        if task.uses_phase_protocol() {
            state.apply_1q(&pre, anc)?;
            if let Some(nm) = noise {
                state.apply_depolarizing(&[anc], nm.p1q, rng)?;
            }
        }
        apply_gate_noisy(state, &cr, x, anc, noise, rng)?;
        let m = state.measure_qubit(anc, rng)?;
        if m.outcome == 1 {
            state.apply_1q(&Gate1Q::pauli_x(), anc)?;
        }
        bits.push(m.outcome);
    }
    Ok(bits)
}

/// Weak-measurement protocol reduced to Kraus operators on the system qubit.
#[derive(Debug, Clone, Copy)]
struct WeakProtocol {
    pre: Option<Gate1Q>,
    /// Ancilla blocks of the controlled coupling for control 0 and 1.
    blocks: [Gate1Q; 2],
    /// Noise-free `kraus[b][c] = <b| B_c pre |0>`.
    kraus: [[C64; 2]; 2],
}

impl WeakProtocol {
    fn new(gamma: f64, task: TaskKind) -> Result<Self> {
        check_gamma(gamma)?;
        let pre = task.uses_phase_protocol().then(|| ancilla_prerotation(gamma));
        let blocks = [Gate1Q::identity(), x_rotation(PI * gamma / 2.0)];
        let a = pre.map_or([c(1.0, 0.0), c(0.0, 0.0)], |g| g.apply_to([c(1.0, 0.0), c(0.0, 0.0)]));
        let kraus = Self::kraus_for(&blocks, a);
        Ok(WeakProtocol { pre, blocks, kraus })
    }

    fn kraus_for(blocks: &[Gate1Q; 2], a: [C64; 2]) -> [[C64; 2]; 2] {
        let out0 = blocks[0].apply_to(a);
        let out1 = blocks[1].apply_to(a);
        [[out0[0], out1[0]], [out0[1], out1[1]]]
    }

    /// Kraus operators for one site, drawing gate noise in the same order as
    /// the explicit-ancilla sweep. Returns the operators, whether the
    /// ancilla readout is flipped, and the Pauli hitting the system qubit.
    fn draw_site<R: Rng + ?Sized>(
        &self,
        noise: Option<&NoiseModel>,
        rng: &mut R,
    ) -> ([[C64; 2]; 2], bool, Pauli) {
        let Some(nm) = noise else {
            return (self.kraus, false, Pauli::I);
        };
        let mut kraus = self.kraus;
        if let Some(pre) = &self.pre {
            if let Some(w) = sample_pauli_error(1, nm.p1q, rng) {
                let a = pre.apply_to([c(1.0, 0.0), c(0.0, 0.0)]);
                kraus = Self::kraus_for(&self.blocks, w[0].gate().apply_to(a));
            }
        }
        match sample_pauli_error(2, nm.p2q, rng) {
            Some(w) => (kraus, w[1].flips_bit(), w[0]),
            None => (kraus, false, Pauli::I),
        }
    }
}

/// Probability of Kraus outcome `k` given the marginal `p1` of the control.
#[inline]
fn kraus_prob(k: &[C64; 2], p1: f64) -> f64 {
    let w0 = k[0].norm_sqr();
    let w1 = k[1].norm_sqr();
    (w0 + (w1 - w0) * p1).clamp(0.0, 1.0)
}

fn apply_kraus(state: &mut PureState, x: usize, k: &[C64; 2], prob: f64) -> Result<()> {
    let s = 1.0 / prob.sqrt();
    state.apply_diagonal_1q(x, k[0] * s, k[1] * s)
}

/// Samples one site measurement with the Kraus update; returns the recorded bit.
fn measure_site<R: Rng + ?Sized>(
    state: &mut PureState,
    x: usize,
    protocol: &WeakProtocol,
    noise: Option<&NoiseModel>,
    rng: &mut R,
) -> Result<u8> {
    let (kraus, flip, sys_pauli) = protocol.draw_site(noise, rng);
    let p1 = state.prob_one(x)?;
    let probs = [kraus_prob(&kraus[0], p1), kraus_prob(&kraus[1], p1)];
    let flip = usize::from(flip);
    // readout 0 corresponds to Kraus branch `flip`
    let u: f64 = rng.gen();
    let bit = sample_binary(probs[flip], u);
    let branch = bit as usize ^ flip;
    apply_kraus(state, x, &kraus[branch], probs[branch])?;
    if sys_pauli != Pauli::I {
        state.apply_1q(&sys_pauli.gate(), x)?;
    }
    Ok(bit)
}

/// Reusable sampler for one [`CircuitConfig`]; noise-free scrambled states are
/// computed once and shared by every trajectory.
#[derive(Debug, Clone)]
pub struct TrajectorySampler {
    config: CircuitConfig,
    monitored: Gate2Q,
    protocol: WeakProtocol,
    cached_initial: Option<PureState>,
    cached_other: Option<PureState>,
}

impl TrajectorySampler {
    pub fn new(config: CircuitConfig) -> Result<Self> {
        config.validate()?;
        let monitored = if config.task.uses_phase_protocol() { gate_um() } else { gate_us() };
        let protocol = WeakProtocol::new(config.gamma, config.task)?;
        let mut sampler = TrajectorySampler {
            config,
            monitored,
            protocol,
            cached_initial: None,
            cached_other: None,
        };
        if sampler.config.noise.is_none() {
            let mut unused = stream_rng(0, 0);
            sampler.cached_initial = Some(sampler.prepare(sampler.config.initial, &mut unused)?);
            if sampler.config.task == TaskKind::StateDistinguish {
                sampler.cached_other = Some(sampler.prepare(sampler.config.initial.other(), &mut unused)?);
            }
        }
        Ok(sampler)
    }

    pub fn config(&self) -> &CircuitConfig {
        &self.config
    }

    fn prepare(&self, initial: InitialState, rng: &mut StreamRng) -> Result<PureState> {
        let l = self.config.l;
        let noise = self.config.noise.as_ref();
        match self.config.task {
            TaskKind::ReferenceQubit => {
                // reference qubit at index L, Bell-paired with system qubit 0
                let h = std::f64::consts::FRAC_1_SQRT_2;
                let mut amps = vec![c(0.0, 0.0); 1 << (l + 1)];
                amps[0] = c(h, 0.0);
                amps[(1 << l) | 1] = c(h, 0.0);
                let mut state = PureState::from_amplitudes(amps)?;
                scramble_in_place(&mut state, l, 2 * l, noise, rng)?;
                Ok(state)
            }
            _ => scramble(initial, l, noise, rng),
        }
    }

    fn initial_state(&self, initial: InitialState, rng: &mut StreamRng) -> Result<PureState> {
        let cached = if initial == self.config.initial { &self.cached_initial } else { &self.cached_other };
        match cached {
            Some(s) => Ok(s.clone()),
            None => self.prepare(initial, rng),
        }
    }

    fn empty_record(&self, index: u64) -> TrajectoryRecord {
        let l = self.config.l;
        TrajectoryRecord {
            l,
            bits: Vec::with_capacity(2 * l * l),
            gamma: self.config.gamma,
            task: self.config.task,
            label: self.config.label(),
            trajectory_seed: stream_seed(self.config.master_seed, index),
        }
    }

    fn evolve(&self, state: &mut PureState, record: &mut TrajectoryRecord, rng: &mut StreamRng, mut on_step: impl FnMut(&PureState)) -> Result<()> {
        let l = self.config.l;
        let noise = self.config.noise.as_ref();
        for t in 0..2 * l {
            brick_layer(state, &self.monitored, l, t, noise, rng)?;
            for x in 0..l {
                let bit = measure_site(state, x, &self.protocol, noise, rng)?;
                record.bits.push(bit);
            }
            on_step(state);
        }
        Ok(())
    }

    /// Samples trajectory `index`.
    pub fn run(&self, index: u64) -> Result<TrajectoryRecord> {
        let mut rng = stream_rng(self.config.master_seed, index);
        let mut state = self.initial_state(self.config.initial, &mut rng)?;
        let mut record = self.empty_record(index);
        self.evolve(&mut state, &mut record, &mut rng, |_| {})?;
        Ok(record)
    }

    /// Samples trajectory `index`, also returning the final state (system
    /// qubits first, then the reference qubit if present).
    pub fn run_with_state(&self, index: u64) -> Result<(TrajectoryRecord, PureState)> {
        let mut rng = stream_rng(self.config.master_seed, index);
        let mut state = self.initial_state(self.config.initial, &mut rng)?;
        let mut record = self.empty_record(index);
        self.evolve(&mut state, &mut record, &mut rng, |_| {})?;
        Ok((record, state))
    }

    /// Reference-qubit trajectory; returns the record and the final entropy of
    /// the reference qubit in bits.
    pub fn run_reference(&self, index: u64) -> Result<(TrajectoryRecord, f64)> {
        let (record, trace) = self.run_reference_trace(index)?;
        Ok((record, *trace.last().expect("at least one time step")))
    }

    /// Like [`run_reference`](Self::run_reference) but returns the reference
    /// entropy after every monitored time step.
    pub fn run_reference_trace(&self, index: u64) -> Result<(TrajectoryRecord, Vec<f64>)> {
        if self.config.task != TaskKind::ReferenceQubit {
            return Err(Error::invalid("reference-qubit run requires the ReferenceQubit task"));
        }
        let l = self.config.l;
        let mut rng = stream_rng(self.config.master_seed, index);
        let mut state = self.initial_state(self.config.initial, &mut rng)?;
        let mut record = self.empty_record(index);
        let mut trace = Vec::with_capacity(2 * l);
        let mut err = None;
        self.evolve(&mut state, &mut record, &mut rng, |s| match s.reduced_density_1q(l) {
            Ok(rho) => trace.push(rho.von_neumann_entropy()),
            Err(e) => err = Some(e),
        })?;
        if let Some(e) = err {
            return Err(e);
        }
        Ok((record, trace))
    }

    /// Evolves both candidate initial states through the same circuit; the
    /// outcomes are sampled from the configured (true) initial state and the
    /// other branch is projected onto them.
    pub fn run_dual(&self, index: u64) -> Result<DualLikelihood> {
        if self.config.task != TaskKind::StateDistinguish {
            return Err(Error::invalid("dual likelihood tracking requires the StateDistinguish task"));
        }
        let l = self.config.l;
        let noise = self.config.noise.as_ref();
        let true_state = self.config.initial;
        let mut rng = stream_rng(self.config.master_seed, index);
        let mut truth = self.initial_state(true_state, &mut rng)?;
        let mut other = self.initial_state(true_state.other(), &mut rng)?;
        let mut record = self.empty_record(index);
        let (mut logp_true, mut logp_other) = (0.0f64, 0.0f64);
        for t in 0..2 * l {
            for (a, b) in brick_bonds(l, t) {
                truth.apply_2q(&self.monitored, a, b)?;
                other.apply_2q(&self.monitored, a, b)?;
                if let Some(nm) = noise {
                    if let Some(w) = sample_pauli_error(2, nm.p2q, &mut rng) {
                        for (q, p) in [(a, w[0]), (b, w[1])] {
                            if p != Pauli::I {
                                truth.apply_1q(&p.gate(), q)?;
                                other.apply_1q(&p.gate(), q)?;
                            }
                        }
                    }
                }
            }
            for x in 0..l {
                let (kraus, flip, sys_pauli) = self.protocol.draw_site(noise, &mut rng);
                let flip = usize::from(flip);
                let p1 = truth.prob_one(x)?;
                let probs = [kraus_prob(&kraus[0], p1), kraus_prob(&kraus[1], p1)];
                let u: f64 = rng.gen();
                let bit = sample_binary(probs[flip], u);
                let branch = bit as usize ^ flip;
                logp_true += probs[branch].ln();
                apply_kraus(&mut truth, x, &kraus[branch], probs[branch])?;
                if logp_other > f64::NEG_INFINITY {
                    let q = kraus_prob(&kraus[branch], other.prob_one(x)?);
                    if q <= f64::MIN_POSITIVE {
                        logp_other = f64::NEG_INFINITY;
                    } else {
                        logp_other += q.ln();
                        apply_kraus(&mut other, x, &kraus[branch], q)?;
                    }
                }
                if sys_pauli != Pauli::I {
                    truth.apply_1q(&sys_pauli.gate(), x)?;
                    other.apply_1q(&sys_pauli.gate(), x)?;
                }
                record.bits.push(bit);
            }
        }
        let (logp_psi, logp_phi) = match true_state {
            InitialState::Psi0 => (logp_true, logp_other),
            InitialState::Phi0 => (logp_other, logp_true),
        };
        Ok(DualLikelihood { record, logp_psi, logp_phi, true_state })
    }

    /// Trajectories `indices`, in index order.
    pub fn run_many(&self, indices: std::ops::Range<u64>) -> Result<Vec<TrajectoryRecord>> {
        indices.into_par_iter().map(|i| self.run(i)).collect()
    }

    pub fn run_dual_many(&self, indices: std::ops::Range<u64>) -> Result<Vec<DualLikelihood>> {
        indices.into_par_iter().map(|i| self.run_dual(i)).collect()
    }

    pub fn run_reference_many(&self, indices: std::ops::Range<u64>) -> Result<Vec<f64>> {
        indices.into_par_iter().map(|i| self.run_reference(i).map(|(_, s)| s)).collect()
    }

    /// Reference implementation of [`run`](Self::run) that simulates the
    /// ancilla explicitly with [`weak_measure_sweep`].
    pub fn run_explicit_ancilla(&self, index: u64) -> Result<TrajectoryRecord> {
        if self.config.task == TaskKind::ReferenceQubit {
            return Err(Error::invalid("explicit-ancilla path supports the two learning tasks only"));
        }
        let l = self.config.l;
        let noise = self.config.noise.as_ref();
        let mut rng = stream_rng(self.config.master_seed, index);
        let system = self.initial_state(self.config.initial, &mut rng)?;
        let mut state = system.tensor(&PureState::zero(1));
        let mut record = self.empty_record(index);
        for t in 0..2 * l {
            brick_layer(&mut state, &self.monitored, l, t, noise, &mut rng)?;
            let bits = weak_measure_sweep(&mut state, self.config.gamma, self.config.task, noise, &mut rng)?;
            record.bits.extend(bits);
        }
        Ok(record)
    }
}

/// Samples trajectory `trajectory_index` of `config`.
pub fn run_trajectory(config: &CircuitConfig, trajectory_index: u64) -> Result<TrajectoryRecord> {
    TrajectorySampler::new(config.clone())?.run(trajectory_index)
}

/// Dual-likelihood trajectory of a state-distinguishing `config`.
pub fn run_trajectory_dual(config: &CircuitConfig, trajectory_index: u64) -> Result<DualLikelihood> {
    TrajectorySampler::new(config.clone())?.run_dual(trajectory_index)
}

/// Reference-qubit trajectory and final reference entropy (bits).
pub fn run_reference_qubit(config: &CircuitConfig, trajectory_index: u64) -> Result<(TrajectoryRecord, f64)> {
    TrajectorySampler::new(config.clone())?.run_reference(trajectory_index)
}
