//! Dense statevector engine.
//!
//! Qubit ordering: qubit 0 is the most-significant bit of the amplitude index,
//! so for `n` qubits the basis state `|b_0 b_1 ... b_{n-1}>` sits at index
//! `sum_q b_q << (n - 1 - q)`. Two-qubit gates act on the local index
//! `2 * b_qa + b_qb`, i.e. the first qubit argument is the more significant one.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

/// Outcomes with Born probability below this are never sampled.
pub const MIN_SAMPLED_PROB: f64 = 1e-15;

/// Single-qubit gate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gate1Q {
    pub matrix: [[C64; 2]; 2],
}

impl Gate1Q {
    /// Checked constructor: rejects matrices with `max|U^dag U - I| >= 1e-9`.
    pub fn new(matrix: [[C64; 2]; 2]) -> Result<Self> {
        let g = Gate1Q { matrix };
        let dev = g.unitarity_defect();
        if dev >= 1e-9 {
            return Err(Error::NotUnitary(format!("1q gate deviates by {dev:.3e}")));
        }
        Ok(g)
    }

    pub fn identity() -> Self {
        Gate1Q { matrix: [[ONE, ZERO], [ZERO, ONE]] }
    }

    pub fn pauli_x() -> Self {
        Gate1Q { matrix: [[ZERO, ONE], [ONE, ZERO]] }
    }

    pub fn pauli_y() -> Self {
        Gate1Q { matrix: [[ZERO, -I], [I, ZERO]] }
    }

    pub fn pauli_z() -> Self {
        Gate1Q { matrix: [[ONE, ZERO], [ZERO, -ONE]] }
    }

    /// `exp(i theta sigma_x / 2)`.
    pub fn rx(theta: f64) -> Self {
        let c = C64::new((theta / 2.0).cos(), 0.0);
        let s = C64::new(0.0, (theta / 2.0).sin());
        Gate1Q { matrix: [[c, s], [s, c]] }
    }

    pub fn unitarity_defect(&self) -> f64 {
        let m = &self.matrix;
        let mut worst: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = ZERO;
                for k in 0..2 {
                    acc += m[k][i].conj() * m[k][j];
                }
                let target = if i == j { ONE } else { ZERO };
                worst = worst.max((acc - target).norm());
            }
        }
        worst
    }

    pub fn apply_to(&self, v: [C64; 2]) -> [C64; 2] {
        let m = &self.matrix;
        [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
    }
}

/// Two-qubit gate in the `2 * b_qa + b_qb` local basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gate2Q {
    pub matrix: [[C64; 4]; 4],
}

impl Gate2Q {
    /// Checked constructor: rejects matrices with `max|U^dag U - I| >= 1e-9`.
    pub fn new(matrix: [[C64; 4]; 4]) -> Result<Self> {
        let dev = unitarity_defect4(&matrix);
        if dev >= 1e-9 {
            return Err(Error::NotUnitary(format!("2q gate deviates by {dev:.3e}")));
        }
        Ok(Gate2Q { matrix })
    }

    pub fn identity() -> Self {
        let mut m = [[ZERO; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = ONE;
        }
        Gate2Q { matrix: m }
    }

    pub fn swap() -> Self {
        let mut m = [[ZERO; 4]; 4];
        m[0][0] = ONE;
        m[1][2] = ONE;
        m[2][1] = ONE;
        m[3][3] = ONE;
        Gate2Q { matrix: m }
    }

    /// Controlled gate `|0><0| (x) block0 + |1><1| (x) block1`, control on the
    /// more-significant qubit.
    pub fn controlled(block0: &Gate1Q, block1: &Gate1Q) -> Self {
        let mut m = [[ZERO; 4]; 4];
        for i in 0..2 {
            for j in 0..2 {
                m[i][j] = block0.matrix[i][j];
                m[2 + i][2 + j] = block1.matrix[i][j];
            }
        }
        Gate2Q { matrix: m }
    }

    /// Closest unitary (polar factor) to a nearly unitary matrix.
    ///
    /// Uses the Newton-Schulz iteration `X <- X (3I - X^dag X) / 2`, which
    /// converges quadratically to `m (m^dag m)^{-1/2}` when all singular values
    /// lie in `(0, sqrt 3)`.
    pub fn reunitarize(m: [[C64; 4]; 4]) -> Result<Self> {
        let defect = unitarity_defect4(&m);
        if defect >= 0.05 {
            return Err(Error::NotUnitary(format!(
                "max|m^dag m - I| = {defect:.3e} exceeds 0.05"
            )));
        }
        let mut x = m;
        for _ in 0..100 {
            let g = gram4(&x);
            let mut corr = [[ZERO; 4]; 4];
            let mut dev: f64 = 0.0;
            for i in 0..4 {
                for j in 0..4 {
                    let id = if i == j { ONE } else { ZERO };
                    dev = dev.max((g[i][j] - id).norm());
                    corr[i][j] = (id * 3.0 - g[i][j]) * 0.5;
                }
            }
            if dev < 1e-15 {
                break;
            }
            x = matmul4(&x, &corr);
        }
        Gate2Q::new(x)
    }

    pub fn unitarity_defect(&self) -> f64 {
        unitarity_defect4(&self.matrix)
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Gate2Q) -> f64 {
        max_abs_diff4(&self.matrix, &other.matrix)
    }

    pub fn matmul(&self, other: &Gate2Q) -> Gate2Q {
        Gate2Q { matrix: matmul4(&self.matrix, &other.matrix) }
    }

    /// `a (x) b`, `a` on the more-significant qubit.
    pub fn kron(a: &Gate1Q, b: &Gate1Q) -> Gate2Q {
        let mut m = [[ZERO; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                m[i][j] = a.matrix[i >> 1][j >> 1] * b.matrix[i & 1][j & 1];
            }
        }
        Gate2Q { matrix: m }
    }
}

pub(crate) fn max_abs_diff4(a: &[[C64; 4]; 4], b: &[[C64; 4]; 4]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            worst = worst.max((a[i][j] - b[i][j]).norm());
        }
    }
    worst
}

fn matmul4(a: &[[C64; 4]; 4], b: &[[C64; 4]; 4]) -> [[C64; 4]; 4] {
    let mut out = [[ZERO; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            let mut acc = ZERO;
            for k in 0..4 {
                acc += a[i][k] * b[k][j];
            }
            out[i][j] = acc;
        }
    }
    out
}

fn gram4(m: &[[C64; 4]; 4]) -> [[C64; 4]; 4] {
    let mut g = [[ZERO; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            let mut acc = ZERO;
            for k in 0..4 {
                acc += m[k][i].conj() * m[k][j];
            }
            g[i][j] = acc;
        }
    }
    g
}

fn unitarity_defect4(m: &[[C64; 4]; 4]) -> f64 {
    let g = gram4(m);
    let mut worst: f64 = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            let id = if i == j { ONE } else { ZERO };
            worst = worst.max((g[i][j] - id).norm());
        }
    }
    worst
}

/// Gate error rates of the depolarizing noise model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub p1q: f64,
    pub p2q: f64,
}

impl NoiseModel {
    pub fn new(p1q: f64, p2q: f64) -> Result<Self> {
        for (name, p) in [("p1q", p1q), ("p2q", p2q)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} = {p} is not a probability")));
            }
        }
        Ok(NoiseModel { p1q, p2q })
    }

    /// Near-term hardware rates: `p1q = 4e-5`, `p2q = 2e-3`.
    pub fn hardware() -> Self {
        NoiseModel { p1q: 4e-5, p2q: 2e-3 }
    }
}

/// Single-qubit Pauli operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];

    pub fn gate(self) -> Gate1Q {
        match self {
            Pauli::I => Gate1Q::identity(),
            Pauli::X => Gate1Q::pauli_x(),
            Pauli::Y => Gate1Q::pauli_y(),
            Pauli::Z => Gate1Q::pauli_z(),
        }
    }

    /// True if the operator flips a computational-basis bit.
    pub fn flips_bit(self) -> bool {
        matches!(self, Pauli::X | Pauli::Y)
    }
}

/// Draws the error of one depolarizing channel application: `None` with
/// probability `1 - p`, otherwise a uniformly chosen non-identity Pauli word
/// on `width` (1 or 2) qubits.
pub fn sample_pauli_error<R: Rng + ?Sized>(width: usize, p: f64, rng: &mut R) -> Option<Vec<Pauli>> {
    debug_assert!(width == 1 || width == 2);
    if p <= 0.0 {
        return None;
    }
    let u: f64 = rng.gen();
    if u >= p {
        return None;
    }
    let words = (1usize << (2 * width)) - 1;
    let w = 1 + rng.gen_range(0..words);
    Some(
        (0..width)
            .map(|k| Pauli::ALL[(w >> (2 * (width - 1 - k))) & 3])
            .collect(),
    )
}

/// Result of sampling a single-qubit measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub outcome: u8,
    /// Born probability of the sampled outcome.
    pub prob: f64,
}

/// Result of forcing a single-qubit measurement outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub prob: f64,
    /// Set when the forced outcome has zero probability; the state is then
    /// left untouched and the log-likelihood is `-inf`.
    pub zero_likelihood: bool,
}

impl Projection {
    pub fn ln_prob(&self) -> f64 {
        if self.zero_likelihood {
            f64::NEG_INFINITY
        } else {
            self.prob.ln()
        }
    }
}

/// Dense pure state over `num_qubits` qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    num_qubits: usize,
    amplitudes: Vec<C64>,
}

impl PureState {
    /// `|0...0>`.
    pub fn zero(num_qubits: usize) -> Self {
        Self::basis(num_qubits, 0)
    }

    pub fn basis(num_qubits: usize, index: usize) -> Self {
        assert!(num_qubits >= 1 && num_qubits < usize::BITS as usize);
        let mut amplitudes = vec![ZERO; 1 << num_qubits];
        amplitudes[index] = ONE;
        PureState { num_qubits, amplitudes }
    }

    /// `|+>^n`.
    pub fn plus(num_qubits: usize) -> Self {
        let d = 1usize << num_qubits;
        let a = C64::new(1.0 / (d as f64).sqrt(), 0.0);
        PureState { num_qubits, amplitudes: vec![a; d] }
    }

    /// Wraps an amplitude vector; its length must be a power of two >= 2.
    /// The vector is not renormalized.
    pub fn from_amplitudes(amplitudes: Vec<C64>) -> Result<Self> {
        let len = amplitudes.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(Error::invalid(format!("amplitude count {len} is not 2^n with n >= 1")));
        }
        Ok(PureState { num_qubits: len.trailing_zeros() as usize, amplitudes })
    }

    /// Tensor product `self (x) other`, `self` on the more-significant qubits.
    pub fn tensor(&self, other: &PureState) -> PureState {
        let mut amplitudes = Vec::with_capacity(self.amplitudes.len() * other.amplitudes.len());
        for a in &self.amplitudes {
            for b in &other.amplitudes {
                amplitudes.push(a * b);
            }
        }
        PureState { num_qubits: self.num_qubits + other.num_qubits, amplitudes }
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn normalize(&mut self) {
        let n = self.norm_sqr().sqrt();
        if n > 0.0 {
            let inv = 1.0 / n;
            for a in &mut self.amplitudes {
                *a *= inv;
            }
        }
    }

    /// Born probabilities of all computational basis states.
    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    fn check(&self, q: usize) -> Result<()> {
        if q >= self.num_qubits {
            Err(Error::QubitOutOfRange { index: q, num_qubits: self.num_qubits })
        } else {
            Ok(())
        }
    }

    #[inline]
    fn mask(&self, q: usize) -> usize {
        1 << (self.num_qubits - 1 - q)
    }

    pub fn apply_1q(&mut self, gate: &Gate1Q, q: usize) -> Result<()> {
        self.check(q)?;
        let m = gate.matrix;
        let stride = self.mask(q);
        for block in self.amplitudes.chunks_exact_mut(2 * stride) {
            let (lo, hi) = block.split_at_mut(stride);
            for (a0, a1) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x0, x1) = (*a0, *a1);
                *a0 = m[0][0] * x0 + m[0][1] * x1;
                *a1 = m[1][0] * x0 + m[1][1] * x1;
            }
        }
        Ok(())
    }

    pub fn apply_2q(&mut self, gate: &Gate2Q, qa: usize, qb: usize) -> Result<()> {
        self.check(qa)?;
        self.check(qb)?;
        if qa == qb {
            return Err(Error::SameQubit(qa));
        }
        let m = &gate.matrix;
        let ma = self.mask(qa);
        let mb = self.mask(qb);
        let (hi_mask, lo_mask) = if ma > mb { (ma, mb) } else { (mb, ma) };
        let quarter = self.amplitudes.len() >> 2;
        let amps = &mut self.amplitudes;
        for r in 0..quarter {
            // insert zero bits at the two gate positions
            let low = r & (lo_mask - 1);
            let t = ((r ^ low) << 1) | low;
            let mid = t & (hi_mask - 1);
            let base = ((t ^ mid) << 1) | mid;
            let idx = [base, base | mb, base | ma, base | ma | mb];
            let v = [amps[idx[0]], amps[idx[1]], amps[idx[2]], amps[idx[3]]];
            for (row, &i) in m.iter().zip(idx.iter()) {
                amps[i] = row[0] * v[0] + row[1] * v[1] + row[2] * v[2] + row[3] * v[3];
            }
        }
        Ok(())
    }

    /// Multiplies the `|0>` and `|1>` components of qubit `q` by `d0`, `d1`.
    pub fn apply_diagonal_1q(&mut self, q: usize, d0: C64, d1: C64) -> Result<()> {
        self.check(q)?;
        let stride = self.mask(q);
        for block in self.amplitudes.chunks_exact_mut(2 * stride) {
            let (lo, hi) = block.split_at_mut(stride);
            if d0 != ONE {
                lo.iter_mut().for_each(|a| *a *= d0);
            }
            if d1 != ONE {
                hi.iter_mut().for_each(|a| *a *= d1);
            }
        }
        Ok(())
    }

    /// Marginal probability that qubit `q` reads 1.
    pub fn prob_one(&self, q: usize) -> Result<f64> {
        self.check(q)?;
        let stride = self.mask(q);
        let p: f64 = self
            .amplitudes
            .chunks_exact(2 * stride)
            .flat_map(|block| block[stride..].iter())
            .map(|a| a.norm_sqr())
            .sum();
        Ok(p.clamp(0.0, 1.0))
    }

    /// Samples a computational-basis measurement of `q` and collapses the state.
    pub fn measure_qubit<R: Rng + ?Sized>(&mut self, q: usize, rng: &mut R) -> Result<Measurement> {
        let p1 = self.prob_one(q)?;
        let p0 = (1.0 - p1).clamp(0.0, 1.0);
        let u: f64 = rng.gen();
        let outcome = sample_binary(p0, u);
        let proj = self.project_qubit(q, outcome)?;
        Ok(Measurement { outcome, prob: proj.prob })
    }

    /// Forces outcome `outcome` on qubit `q`, renormalizing when possible.
    pub fn project_qubit(&mut self, q: usize, outcome: u8) -> Result<Projection> {
        let p1 = self.prob_one(q)?;
        let prob = if outcome == 0 { (1.0 - p1).clamp(0.0, 1.0) } else { p1 };
        if prob <= f64::MIN_POSITIVE {
            return Ok(Projection { prob: 0.0, zero_likelihood: true });
        }
        let s = C64::new(1.0 / prob.sqrt(), 0.0);
        let (d0, d1) = if outcome == 0 { (s, ZERO) } else { (ZERO, s) };
        self.apply_diagonal_1q(q, d0, d1)?;
        Ok(Projection { prob, zero_likelihood: false })
    }

    /// Measures `q` and flips it back to `|0>` if it read 1.
    pub fn reset_qubit<R: Rng + ?Sized>(&mut self, q: usize, rng: &mut R) -> Result<()> {
        let m = self.measure_qubit(q, rng)?;
        if m.outcome == 1 {
            self.apply_1q(&Gate1Q::pauli_x(), q)?;
        }
        Ok(())
    }

    /// Stochastic unraveling of the depolarizing channel on one or two qubits.
    /// Returns the Pauli word that was applied, if any.
    pub fn apply_depolarizing<R: Rng + ?Sized>(
        &mut self,
        qubits: &[usize],
        p: f64,
        rng: &mut R,
    ) -> Result<Option<Vec<Pauli>>> {
        if qubits.is_empty() || qubits.len() > 2 {
            return Err(Error::invalid("depolarizing noise acts on one or two qubits"));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("noise probability {p} outside [0, 1]")));
        }
        for &q in qubits {
            self.check(q)?;
        }
        let word = sample_pauli_error(qubits.len(), p, rng);
        if let Some(w) = &word {
            for (&q, &pauli) in qubits.iter().zip(w) {
                if pauli != Pauli::I {
                    self.apply_1q(&pauli.gate(), q)?;
                }
            }
        }
        Ok(word)
    }

    /// Partial trace onto qubit `q`.
    pub fn reduced_density_1q(&self, q: usize) -> Result<DensityMatrix1Q> {
        self.check(q)?;
        let stride = self.mask(q);
        let (mut r00, mut r11, mut r01) = (0.0, 0.0, ZERO);
        for block in self.amplitudes.chunks_exact(2 * stride) {
            let (lo, hi) = block.split_at(stride);
            for (a0, a1) in lo.iter().zip(hi) {
                r00 += a0.norm_sqr();
                r11 += a1.norm_sqr();
                r01 += a0 * a1.conj();
            }
        }
        Ok(DensityMatrix1Q {
            matrix: [[C64::new(r00, 0.0), r01], [r01.conj(), C64::new(r11, 0.0)]],
        })
    }
}

/// Draws a binary outcome from `P(0) = p0` with one uniform `u` in `[0, 1)`.
/// Outcomes with probability below [`MIN_SAMPLED_PROB`] are never returned.
#[inline]
pub fn sample_binary(p0: f64, u: f64) -> u8 {
    let p0 = p0.clamp(0.0, 1.0);
    if p0 < MIN_SAMPLED_PROB {
        1
    } else if 1.0 - p0 < MIN_SAMPLED_PROB {
        0
    } else if u < p0 {
        0
    } else {
        1
    }
}

/// Reduced density matrix of one qubit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix1Q {
    pub matrix: [[C64; 2]; 2],
}

impl DensityMatrix1Q {
    pub fn from_real_diagonal(p0: f64, p1: f64) -> Self {
        DensityMatrix1Q { matrix: [[C64::new(p0, 0.0), ZERO], [ZERO, C64::new(p1, 0.0)]] }
    }

    pub fn trace(&self) -> f64 {
        self.matrix[0][0].re + self.matrix[1][1].re
    }

    pub fn purity(&self) -> f64 {
        let m = &self.matrix;
        m[0][0].norm_sqr() + m[1][1].norm_sqr() + 2.0 * m[0][1].norm_sqr()
    }

    /// Eigenvalues from the trace/determinant formula, ascending, clamped to `[0, 1]`.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let m = &self.matrix;
        let tr = m[0][0].re + m[1][1].re;
        let det = m[0][0].re * m[1][1].re - m[0][1].norm_sqr();
        let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
        [((tr - disc) / 2.0).clamp(0.0, 1.0), ((tr + disc) / 2.0).clamp(0.0, 1.0)]
    }

    /// Von Neumann entropy in bits, with `0 log 0 = 0`.
    pub fn von_neumann_entropy(&self) -> f64 {
        von_neumann_entropy(self)
    }
}

/// Von Neumann entropy of a one-qubit density matrix, in bits.
pub fn von_neumann_entropy(rho: &DensityMatrix1Q) -> f64 {
    let s: f64 = rho
        .eigenvalues()
        .iter()
        .filter(|&&l| l > 1e-300)
        .map(|&l| -l * l.log2())
        .sum();
    s.clamp(0.0, 1.0)
}
