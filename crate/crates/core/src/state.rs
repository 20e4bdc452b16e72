//! Dense pure and mixed n-qubit states.
//!
//! Basis index convention: qubit 0 is the least-significant bit. A density
//! matrix of `n` qubits is stored row-major as a `2n`-qubit vector whose low
//! `n` bits index the column and whose high `n` bits index the row, so the
//! same local-matrix kernel drives both `U|psi>` and `U rho U^dagger`.

use num_complex::Complex64;

use crate::error::{QtlError, Result};
use crate::noise::KrausChannel;

pub type C64 = Complex64;

pub const MAX_STATEVECTOR_QUBITS: usize = 16;
pub const MAX_DENSITY_QUBITS: usize = 10;

/// Residue above which an expectation value is treated as inconsistent.
const IMAG_TOLERANCE: f64 = 1e-8;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

#[inline]
fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// A one- or two-qubit unitary, row-major. For two-qubit gates the first
/// target is the high bit of the local index, so `CNOT` with targets
/// `[control, target]` has the textbook matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GateMatrix {
    arity: usize,
    entries: Vec<C64>,
}

impl GateMatrix {
    /// Validates shape and unitarity (`U^dagger U = I` within 1e-12).
    pub fn new(arity: usize, entries: Vec<C64>) -> Result<Self> {
        if !(1..=2).contains(&arity) {
            return Err(QtlError::Dimension(format!("gate arity {arity} unsupported")));
        }
        let dim = 1 << arity;
        if entries.len() != dim * dim {
            return Err(QtlError::Dimension(format!(
                "expected {} entries for arity {arity}, got {}",
                dim * dim,
                entries.len()
            )));
        }
        let gate = Self { arity, entries };
        let residual = gate.unitarity_residual();
        if residual > 1e-12 {
            return Err(QtlError::Dimension(format!(
                "matrix is not unitary (residual {residual:e})"
            )));
        }
        Ok(gate)
    }

    pub fn hadamard() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            arity: 1,
            entries: vec![re(h), re(h), re(h), re(-h)],
        }
    }

    /// `RY(theta) = exp(-i theta Y / 2)`.
    pub fn ry(theta: f64) -> Self {
        let (s, c) = (theta / 2.0).sin_cos();
        Self {
            arity: 1,
            entries: vec![re(c), re(-s), re(s), re(c)],
        }
    }

    pub fn cnot() -> Self {
        let mut entries = vec![ZERO; 16];
        entries[0] = ONE;
        entries[5] = ONE;
        entries[11] = ONE;
        entries[14] = ONE;
        Self { arity: 2, entries }
    }

    pub fn cz() -> Self {
        let mut entries = vec![ZERO; 16];
        entries[0] = ONE;
        entries[5] = ONE;
        entries[10] = ONE;
        entries[15] = -ONE;
        Self { arity: 2, entries }
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn entries(&self) -> &[C64] {
        &self.entries
    }

    pub fn unitarity_residual(&self) -> f64 {
        let dim = 1 << self.arity;
        let mut worst: f64 = 0.0;
        for i in 0..dim {
            for j in 0..dim {
                let mut acc = ZERO;
                for k in 0..dim {
                    acc += self.entries[k * dim + i].conj() * self.entries[k * dim + j];
                }
                let expected = if i == j { ONE } else { ZERO };
                worst = worst.max((acc - expected).norm());
            }
        }
        worst
    }
}

fn check_targets(n_qubits: usize, arity: usize, targets: &[usize]) -> Result<()> {
    if targets.len() != arity {
        return Err(QtlError::Arity {
            arity,
            targets: targets.len(),
        });
    }
    for (i, &t) in targets.iter().enumerate() {
        if t >= n_qubits {
            return Err(QtlError::QubitIndex { index: t, n_qubits });
        }
        if targets[..i].contains(&t) {
            return Err(QtlError::DuplicateTarget(t));
        }
    }
    Ok(())
}

/// Applies a `2^k x 2^k` row-major matrix to the listed bits of `amps`.
/// Targets must already be validated.
pub(crate) fn apply_local(amps: &mut [C64], matrix: &[C64], targets: &[usize]) {
    match targets {
        [t] => {
            let stride = 1usize << t;
            let (m00, m01, m10, m11) = (matrix[0], matrix[1], matrix[2], matrix[3]);
            for i in 0..amps.len() {
                if i & stride != 0 {
                    continue;
                }
                let a0 = amps[i];
                let a1 = amps[i | stride];
                amps[i] = m00 * a0 + m01 * a1;
                amps[i | stride] = m10 * a0 + m11 * a1;
            }
        }
        [hi, lo] => {
            let bh = 1usize << hi;
            let bl = 1usize << lo;
            for i in 0..amps.len() {
                if i & (bh | bl) != 0 {
                    continue;
                }
                let idx = [i, i | bl, i | bh, i | bh | bl];
                let old = [amps[idx[0]], amps[idx[1]], amps[idx[2]], amps[idx[3]]];
                for (r, &slot) in idx.iter().enumerate() {
                    let row = &matrix[r * 4..r * 4 + 4];
                    amps[slot] = row[0] * old[0] + row[1] * old[1] + row[2] * old[2] + row[3] * old[3];
                }
            }
        }
        _ => unreachable!("only one- and two-qubit operators are supported"),
    }
}

fn conj_matrix(m: &[C64]) -> Vec<C64> {
    m.iter().map(|z| z.conj()).collect()
}

fn z_sign(index: usize, qubit: usize) -> f64 {
    if (index >> qubit) & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Operations shared by pure and mixed states.
pub trait QuantumState {
    fn n_qubits(&self) -> usize;
    fn apply_gate(&mut self, gate: &GateMatrix, targets: &[usize]) -> Result<()>;
    fn expect_pauli_z(&self, qubit: usize) -> Result<f64>;
    fn basis_probabilities(&self) -> Vec<f64>;
}

/// A pure state of `n_qubits` qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct Statevector {
    n_qubits: usize,
    amps: Vec<C64>,
}

impl Statevector {
    /// `|0...0>`.
    pub fn new_zero(n_qubits: usize) -> Result<Self> {
        if n_qubits == 0 || n_qubits > MAX_STATEVECTOR_QUBITS {
            return Err(QtlError::QubitCount {
                n: n_qubits,
                max: MAX_STATEVECTOR_QUBITS,
            });
        }
        let mut amps = vec![ZERO; 1 << n_qubits];
        amps[0] = ONE;
        Ok(Self { n_qubits, amps })
    }

    /// Wraps raw amplitudes; the vector must have length `2^n` and unit norm.
    pub fn from_amplitudes(n_qubits: usize, amps: Vec<C64>) -> Result<Self> {
        if n_qubits == 0 || n_qubits > MAX_STATEVECTOR_QUBITS {
            return Err(QtlError::QubitCount {
                n: n_qubits,
                max: MAX_STATEVECTOR_QUBITS,
            });
        }
        if amps.len() != 1 << n_qubits {
            return Err(QtlError::Dimension(format!(
                "{} amplitudes for {n_qubits} qubits",
                amps.len()
            )));
        }
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(QtlError::Dimension(format!("state norm {norm} is not 1")));
        }
        Ok(Self { n_qubits, amps })
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }
}

impl QuantumState for Statevector {
    fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    fn apply_gate(&mut self, gate: &GateMatrix, targets: &[usize]) -> Result<()> {
        check_targets(self.n_qubits, gate.arity, targets)?;
        apply_local(&mut self.amps, &gate.entries, targets);
        Ok(())
    }

    fn expect_pauli_z(&self, qubit: usize) -> Result<f64> {
        if qubit >= self.n_qubits {
            return Err(QtlError::QubitIndex {
                index: qubit,
                n_qubits: self.n_qubits,
            });
        }
        let value: f64 = self
            .amps
            .iter()
            .enumerate()
            .map(|(i, a)| z_sign(i, qubit) * a.norm_sqr())
            .sum();
        Ok(value.clamp(-1.0, 1.0))
    }

    fn basis_probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }
}

/// A mixed state of up to [`MAX_DENSITY_QUBITS`] qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    n_qubits: usize,
    entries: Vec<C64>,
}

impl DensityMatrix {
    fn check_size(n_qubits: usize) -> Result<()> {
        if n_qubits == 0 || n_qubits > MAX_DENSITY_QUBITS {
            return Err(QtlError::QubitCount {
                n: n_qubits,
                max: MAX_DENSITY_QUBITS,
            });
        }
        Ok(())
    }

    pub fn new_zero(n_qubits: usize) -> Result<Self> {
        Self::check_size(n_qubits)?;
        let dim = 1 << n_qubits;
        let mut entries = vec![ZERO; dim * dim];
        entries[0] = ONE;
        Ok(Self { n_qubits, entries })
    }

    /// `|psi><psi|`.
    pub fn from_pure(psi: &Statevector) -> Result<Self> {
        Self::check_size(psi.n_qubits)?;
        let a = psi.amplitudes();
        let dim = a.len();
        let mut entries = Vec::with_capacity(dim * dim);
        for r in 0..dim {
            for c in 0..dim {
                entries.push(a[r] * a[c].conj());
            }
        }
        Ok(Self {
            n_qubits: psi.n_qubits,
            entries,
        })
    }

    /// `I / 2^n`.
    pub fn maximally_mixed(n_qubits: usize) -> Result<Self> {
        Self::check_size(n_qubits)?;
        let dim = 1 << n_qubits;
        let mut entries = vec![ZERO; dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = re(1.0 / dim as f64);
        }
        Ok(Self { n_qubits, entries })
    }

    /// Row-major entries; checks shape, Hermiticity and unit trace.
    pub fn from_entries(n_qubits: usize, entries: Vec<C64>) -> Result<Self> {
        Self::check_size(n_qubits)?;
        let dim = 1 << n_qubits;
        if entries.len() != dim * dim {
            return Err(QtlError::Dimension(format!(
                "{} entries for a {dim}x{dim} matrix",
                entries.len()
            )));
        }
        let rho = Self { n_qubits, entries };
        if rho.hermiticity_residual() > 1e-10 {
            return Err(QtlError::Dimension("matrix is not Hermitian".into()));
        }
        if (rho.trace().re - 1.0).abs() > 1e-10 {
            return Err(QtlError::Dimension("trace is not 1".into()));
        }
        Ok(rho)
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    pub fn entries(&self) -> &[C64] {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.entries[row * self.dim() + col]
    }

    pub fn trace(&self) -> C64 {
        let dim = self.dim();
        (0..dim).map(|i| self.entries[i * dim + i]).sum()
    }

    /// `Tr(rho^2)`.
    pub fn purity(&self) -> f64 {
        self.entries.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn hermiticity_residual(&self) -> f64 {
        let dim = self.dim();
        let mut worst: f64 = 0.0;
        for r in 0..dim {
            for c in r..dim {
                worst = worst.max((self.get(r, c) - self.get(c, r).conj()).norm());
            }
        }
        worst
    }

    fn check_subset(&self, arity: usize, targets: &[usize]) -> Result<()> {
        check_targets(self.n_qubits, arity, targets)
    }

    /// `M_row rho M_col^T` restricted to `targets`, returned as new entries:
    /// `row_op` acts on the row index and `col_op` on the column index.
    fn transform(&self, row_op: &[C64], col_op: &[C64], targets: &[usize]) -> Vec<C64> {
        let mut out = self.entries.clone();
        let row_targets: Vec<usize> = targets.iter().map(|t| t + self.n_qubits).collect();
        apply_local(&mut out, row_op, &row_targets);
        apply_local(&mut out, col_op, targets);
        out
    }

    /// `rho -> sum_k K_k rho K_k^dagger` on `targets`.
    pub fn apply_kraus(&mut self, channel: &KrausChannel, targets: &[usize]) -> Result<()> {
        self.check_subset(channel.arity(), targets)?;
        let mut acc = vec![ZERO; self.entries.len()];
        for op in channel.operators() {
            let conj = conj_matrix(op);
            let term = self.transform(op, &conj, targets);
            for (a, t) in acc.iter_mut().zip(term) {
                *a += t;
            }
        }
        self.entries = acc;
        Ok(())
    }
}

impl QuantumState for DensityMatrix {
    fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    fn apply_gate(&mut self, gate: &GateMatrix, targets: &[usize]) -> Result<()> {
        self.check_subset(gate.arity, targets)?;
        let conj = conj_matrix(&gate.entries);
        self.entries = self.transform(&gate.entries, &conj, targets);
        Ok(())
    }

    fn expect_pauli_z(&self, qubit: usize) -> Result<f64> {
        if qubit >= self.n_qubits {
            return Err(QtlError::QubitIndex {
                index: qubit,
                n_qubits: self.n_qubits,
            });
        }
        let dim = self.dim();
        let value: C64 = (0..dim).map(|i| self.entries[i * dim + i] * z_sign(i, qubit)).sum();
        if value.im.abs() > IMAG_TOLERANCE {
            return Err(QtlError::ImaginaryResidue(value.im));
        }
        Ok(value.re.clamp(-1.0, 1.0))
    }

    fn basis_probabilities(&self) -> Vec<f64> {
        let dim = self.dim();
        (0..dim).map(|i| self.entries[i * dim + i].re.max(0.0)).collect()
    }
}

/// `<psi| rho |psi>`, clamped to `[0, 1]`.
pub fn state_fidelity(rho: &DensityMatrix, psi: &Statevector) -> Result<f64> {
    if rho.n_qubits != psi.n_qubits {
        return Err(QtlError::Dimension(format!(
            "density matrix has {} qubits, statevector {}",
            rho.n_qubits, psi.n_qubits
        )));
    }
    let a = psi.amplitudes();
    let dim = a.len();
    let mut acc = ZERO;
    for (r, ar) in a.iter().enumerate() {
        let row: C64 = rho.entries[r * dim..(r + 1) * dim]
            .iter()
            .zip(a)
            .map(|(x, y)| x * y)
            .sum();
        acc += ar.conj() * row;
    }
    Ok(acc.re.clamp(0.0, 1.0))
}
