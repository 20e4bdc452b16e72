//! Device calibration constants and the Kraus channels derived from them.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::BitstringCounts;
use crate::circuit::GateCensus;
use crate::error::{QtlError, Result};
use crate::state::C64;

const COMPLETENESS_TOLERANCE: f64 = 1e-12;

/// Hardware constants in SI units (seconds, probabilities).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceCalibration {
    pub t1: f64,
    pub t2: f64,
    pub gate_time_1q: f64,
    pub gate_time_2q: f64,
    /// Single-qubit gate error rate.
    pub p_depol_1q: f64,
    /// Two-qubit gate error rate.
    pub p_depol_2q: f64,
    pub readout_error: f64,
}

impl DeviceCalibration {
    /// IBM Heron r2 reference values.
    pub fn heron_r2() -> Self {
        Self {
            t1: 250e-6,
            t2: 150e-6,
            gate_time_1q: 32e-9,
            gate_time_2q: 68e-9,
            p_depol_1q: 2e-4,
            p_depol_2q: 5e-3,
            readout_error: 0.012,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, t) in [
            ("t1", self.t1),
            ("t2", self.t2),
            ("gate_time_1q", self.gate_time_1q),
            ("gate_time_2q", self.gate_time_2q),
        ] {
            if t.is_nan() || t <= 0.0 {
                return Err(QtlError::Calibration(format!("{name} must be positive, got {t}")));
            }
        }
        if self.t2 > 2.0 * self.t1 {
            return Err(QtlError::Calibration(format!(
                "t2={} exceeds 2*t1={}",
                self.t2,
                2.0 * self.t1
            )));
        }
        check_probability("p1q", self.p_depol_1q)?;
        check_probability("p2q", self.p_depol_2q)?;
        check_probability("readout", self.readout_error)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: CalibrationFile = serde_json::from_str(&text)?;
        let cal = Self::from(file);
        cal.validate()?;
        Ok(cal)
    }
}

/// On-disk calibration document (microseconds / nanoseconds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationFile {
    pub t1_us: f64,
    pub t2_us: f64,
    pub gate_ns_1q: f64,
    pub gate_ns_2q: f64,
    pub p1q: f64,
    pub p2q: f64,
    pub readout: f64,
}

impl From<CalibrationFile> for DeviceCalibration {
    fn from(f: CalibrationFile) -> Self {
        Self {
            t1: f.t1_us * 1e-6,
            t2: f.t2_us * 1e-6,
            gate_time_1q: f.gate_ns_1q * 1e-9,
            gate_time_2q: f.gate_ns_2q * 1e-9,
            p_depol_1q: f.p1q,
            p_depol_2q: f.p2q,
            readout_error: f.readout,
        }
    }
}

impl From<DeviceCalibration> for CalibrationFile {
    fn from(c: DeviceCalibration) -> Self {
        Self {
            t1_us: c.t1 * 1e6,
            t2_us: c.t2 * 1e6,
            gate_ns_1q: c.gate_time_1q * 1e9,
            gate_ns_2q: c.gate_time_2q * 1e9,
            p1q: c.p_depol_1q,
            p2q: c.p_depol_2q,
            readout: c.readout_error,
        }
    }
}

/// Damping probabilities per gate duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub gamma_1q: f64,
    pub lambda_1q: f64,
    pub gamma_2q: f64,
    pub lambda_2q: f64,
}

impl ChannelParams {
    pub fn zero() -> Self {
        Self {
            gamma_1q: 0.0,
            lambda_1q: 0.0,
            gamma_2q: 0.0,
            lambda_2q: 0.0,
        }
    }
}

/// `1 - exp(-t / T)` without cancellation for `t << T`.
fn decay(t: f64, time_constant: f64) -> f64 {
    -(-t / time_constant).exp_m1()
}

fn damping_pair(t_gate: f64, t1: f64, t2: f64) -> Result<(f64, f64)> {
    let gamma = decay(t_gate, t1);
    let lambda = decay(t_gate, t2) - gamma;
    if lambda < 0.0 {
        return Err(QtlError::Calibration(format!(
            "negative phase damping {lambda:e}: dephasing slower than relaxation (t2 > t1)"
        )));
    }
    Ok((gamma, lambda))
}

/// Amplitude- and phase-damping probabilities for the two gate durations.
pub fn damping_params(cal: &DeviceCalibration) -> Result<ChannelParams> {
    cal.validate()?;
    let (gamma_1q, lambda_1q) = damping_pair(cal.gate_time_1q, cal.t1, cal.t2)?;
    let (gamma_2q, lambda_2q) = damping_pair(cal.gate_time_2q, cal.t1, cal.t2)?;
    Ok(ChannelParams {
        gamma_1q,
        lambda_1q,
        gamma_2q,
        lambda_2q,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelLabel {
    AmplitudeDamping,
    PhaseDamping,
    Depolarizing,
    Composite,
}

/// A completely positive trace-preserving map given by its Kraus operators.
#[derive(Debug, Clone, PartialEq)]
pub struct KrausChannel {
    arity: usize,
    operators: Vec<Vec<C64>>,
    label: ChannelLabel,
}

impl KrausChannel {
    /// Rejects operator sets whose completeness residual exceeds 1e-12.
    pub fn new(arity: usize, operators: Vec<Vec<C64>>, label: ChannelLabel) -> Result<Self> {
        if !(1..=2).contains(&arity) {
            return Err(QtlError::Dimension(format!("channel arity {arity} unsupported")));
        }
        let dim = 1 << arity;
        if operators.is_empty() || operators.iter().any(|k| k.len() != dim * dim) {
            return Err(QtlError::Dimension(format!("Kraus operators must be {dim}x{dim}")));
        }
        let channel = Self {
            arity,
            operators,
            label,
        };
        let residual = channel.completeness_residual();
        if residual > COMPLETENESS_TOLERANCE {
            return Err(QtlError::Completeness(residual));
        }
        Ok(channel)
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn operators(&self) -> &[Vec<C64>] {
        &self.operators
    }

    pub fn label(&self) -> ChannelLabel {
        self.label
    }

    /// Max-entry deviation of `sum_k K_k^dagger K_k` from the identity.
    pub fn completeness_residual(&self) -> f64 {
        let dim = 1 << self.arity;
        let mut sum = vec![C64::new(0.0, 0.0); dim * dim];
        for k in &self.operators {
            for i in 0..dim {
                for j in 0..dim {
                    for m in 0..dim {
                        sum[i * dim + j] += k[m * dim + i].conj() * k[m * dim + j];
                    }
                }
            }
        }
        let mut worst: f64 = 0.0;
        for i in 0..dim {
            for j in 0..dim {
                let expected = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((sum[i * dim + j] - expected).norm());
            }
        }
        worst
    }

    /// The channel that applies `self` first and then `next`.
    pub fn then(&self, next: &KrausChannel) -> Result<KrausChannel> {
        if self.arity != next.arity {
            return Err(QtlError::Arity {
                arity: self.arity,
                targets: next.arity,
            });
        }
        let dim = 1 << self.arity;
        let mut operators = Vec::with_capacity(self.operators.len() * next.operators.len());
        for b in &next.operators {
            for a in &self.operators {
                operators.push(matmul(b, a, dim));
            }
        }
        KrausChannel::new(self.arity, operators, ChannelLabel::Composite)
    }
}

fn matmul(a: &[C64], b: &[C64], dim: usize) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); dim * dim];
    for i in 0..dim {
        for k in 0..dim {
            let aik = a[i * dim + k];
            if aik == C64::new(0.0, 0.0) {
                continue;
            }
            for j in 0..dim {
                out[i * dim + j] += aik * b[k * dim + j];
            }
        }
    }
    out
}

fn kron(a: &[C64], b: &[C64], da: usize, db: usize) -> Vec<C64> {
    let d = da * db;
    let mut out = vec![C64::new(0.0, 0.0); d * d];
    for ar in 0..da {
        for ac in 0..da {
            for br in 0..db {
                for bc in 0..db {
                    out[(ar * db + br) * d + ac * db + bc] = a[ar * da + ac] * b[br * db + bc];
                }
            }
        }
    }
    out
}

fn check_probability(name: &'static str, value: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&value) {
        return Err(QtlError::Probability { name, value });
    }
    Ok(())
}

fn r(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// `K0 = diag(1, sqrt(1-gamma))`, `K1 = [[0, sqrt(gamma)], [0, 0]]`.
pub fn amplitude_damping(gamma: f64) -> Result<KrausChannel> {
    check_probability("gamma", gamma)?;
    let z = r(0.0);
    KrausChannel::new(
        1,
        vec![
            vec![r(1.0), z, z, r((1.0 - gamma).sqrt())],
            vec![z, r(gamma.sqrt()), z, z],
        ],
        ChannelLabel::AmplitudeDamping,
    )
}

/// `K0 = diag(1, sqrt(1-lambda))`, `K1 = diag(0, sqrt(lambda))`.
pub fn phase_damping(lambda: f64) -> Result<KrausChannel> {
    check_probability("lambda", lambda)?;
    let z = r(0.0);
    KrausChannel::new(
        1,
        vec![
            vec![r(1.0), z, z, r((1.0 - lambda).sqrt())],
            vec![z, z, z, r(lambda.sqrt())],
        ],
        ChannelLabel::PhaseDamping,
    )
}

/// Amplitude damping followed by phase damping on one qubit.
pub fn damping(gamma: f64, lambda: f64) -> Result<KrausChannel> {
    amplitude_damping(gamma)?.then(&phase_damping(lambda)?)
}

fn paulis() -> [Vec<C64>; 4] {
    let z = r(0.0);
    let i = C64::new(0.0, 1.0);
    [
        vec![r(1.0), z, z, r(1.0)],
        vec![z, r(1.0), r(1.0), z],
        vec![z, -i, i, z],
        vec![r(1.0), z, z, r(-1.0)],
    ]
}

/// `rho -> (1-p) rho + p I / 2^arity`, as a Pauli-basis Kraus set.
pub fn depolarizing(p: f64, arity: usize) -> Result<KrausChannel> {
    check_probability("p", p)?;
    if !(1..=2).contains(&arity) {
        return Err(QtlError::Dimension(format!("depolarizing arity {arity} unsupported")));
    }
    let n_terms = 1usize << (2 * arity);
    let weight = p / n_terms as f64;
    let paulis = paulis();
    let mut operators = Vec::with_capacity(n_terms);
    for term in 0..n_terms {
        let w = if term == 0 { 1.0 - p + weight } else { weight };
        if w == 0.0 {
            continue;
        }
        let base = if arity == 1 {
            paulis[term].clone()
        } else {
            kron(&paulis[term >> 2], &paulis[term & 3], 2, 2)
        };
        let s = w.sqrt();
        operators.push(base.into_iter().map(|x| x * s).collect());
    }
    KrausChannel::new(arity, operators, ChannelLabel::Depolarizing)
}

/// Converts a gate error rate (probability that one of the non-identity
/// Paulis hits the gate) into the mixing parameter of [`depolarizing`].
pub fn depolarizing_param_from_error_rate(error_rate: f64, arity: u32) -> Result<f64> {
    check_probability("error_rate", error_rate)?;
    let d2 = 4f64.powi(arity as i32);
    let p = error_rate * d2 / (d2 - 1.0);
    check_probability("depolarizing parameter", p)?;
    Ok(p)
}

/// Flips every measured bit independently with probability `p`.
pub fn readout_confusion(counts: &BitstringCounts, p: f64, seed: u64) -> Result<BitstringCounts> {
    check_probability("readout", p)?;
    let n = counts.n_qubits();
    let mut out = BitstringCounts::new(n);
    if p == 0.0 {
        return Ok(counts.clone());
    }
    let all_ones = (1usize << n) - 1;
    if p == 1.0 {
        for (b, c) in counts.iter() {
            out.add(b ^ all_ones, c);
        }
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (b, c) in counts.iter() {
        for _ in 0..c {
            let mut flipped = b;
            for q in 0..n {
                if rng.random::<f64>() < p {
                    flipped ^= 1 << q;
                }
            }
            out.add(flipped, 1);
        }
    }
    Ok(out)
}

/// Product-form circuit fidelity `(1-p1)^n1 * (1-p2)^n2`.
pub fn estimate_fidelity(census: &GateCensus, p_1q: f64, p_2q: f64) -> f64 {
    (1.0 - p_1q).powi(census.one_qubit as i32) * (1.0 - p_2q).powi(census.two_qubit as i32)
}
