//! Circuit execution: exact expectations, noisy mixed-state expectations,
//! and finite-shot sampling with Hamming-weight class interpretation.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::circuit::{BoundGate, ParamMatrix, ParameterizedCircuit};
use crate::error::{QtlError, Result};
use crate::noise::{
    damping, damping_params, depolarizing, depolarizing_param_from_error_rate, readout_confusion, ChannelParams,
    DeviceCalibration, KrausChannel,
};
use crate::state::{state_fidelity, DensityMatrix, QuantumState, Statevector};

/// Odd multiplier for deriving per-sample seeds.
const SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;
const READOUT_SEED_SALT: u64 = 0xD1B5_4A32_D192_ED03;

/// Seed of the `index`-th sample under a run-level master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    master ^ index.wrapping_mul(SEED_STRIDE)
}

/// Measured bitstrings keyed by basis index (qubit 0 = least-significant bit).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitstringCounts {
    n_qubits: usize,
    counts: BTreeMap<usize, u64>,
}

impl BitstringCounts {
    pub fn new(n_qubits: usize) -> Self {
        Self {
            n_qubits,
            counts: BTreeMap::new(),
        }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn add(&mut self, basis_index: usize, count: u64) {
        if count > 0 {
            *self.counts.entry(basis_index).or_insert(0) += count;
        }
    }

    pub fn get(&self, basis_index: usize) -> u64 {
        self.counts.get(&basis_index).copied().unwrap_or(0)
    }

    /// Count for a bitstring written `q_{n-1} ... q_0`, e.g. `"0110"`.
    pub fn get_str(&self, bits: &str) -> Option<u64> {
        if bits.len() != self.n_qubits {
            return None;
        }
        usize::from_str_radix(bits, 2).ok().map(|b| self.get(b))
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, u64)> + '_ {
        self.counts.iter().map(|(&b, &c)| (b, c))
    }

    /// Bitstrings rendered `q_{n-1} ... q_0`.
    pub fn to_string_map(&self) -> BTreeMap<String, u64> {
        self.iter()
            .map(|(b, c)| (format!("{:0width$b}", b, width = self.n_qubits), c))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotConfig {
    pub shots: u64,
    pub seed: u64,
}

impl ShotConfig {
    pub fn new(shots: u64, seed: u64) -> Result<Self> {
        if shots == 0 {
            return Err(QtlError::Config("shots must be at least 1".into()));
        }
        Ok(Self { shots, seed })
    }
}

/// Which channels follow each gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseMode {
    None,
    /// Amplitude then phase damping on every touched qubit.
    DampingAfterEveryGate(ChannelParams),
    /// Depolarizing mixing parameters per gate arity, optionally followed by
    /// thermal relaxation (amplitude then phase damping) on every touched qubit.
    DepolarizingAfterEveryGate {
        p_1q: f64,
        p_2q: f64,
        relaxation: Option<ChannelParams>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoisePolicy {
    pub mode: NoiseMode,
    /// Per-bit flip probability applied to sampled bitstrings.
    pub readout_error: Option<f64>,
}

impl NoisePolicy {
    pub fn ideal() -> Self {
        Self {
            mode: NoiseMode::None,
            readout_error: None,
        }
    }

    pub fn damping(params: ChannelParams) -> Self {
        Self {
            mode: NoiseMode::DampingAfterEveryGate(params),
            readout_error: None,
        }
    }

    pub fn depolarizing(p_1q: f64, p_2q: f64) -> Self {
        Self {
            mode: NoiseMode::DepolarizingAfterEveryGate {
                p_1q,
                p_2q,
                relaxation: None,
            },
            readout_error: None,
        }
    }

    pub fn with_readout(mut self, p: f64) -> Self {
        self.readout_error = Some(p);
        self
    }

    /// Damping channels derived from coherence times and gate durations.
    pub fn damping_from_calibration(cal: &DeviceCalibration) -> Result<Self> {
        Ok(Self::damping(damping_params(cal)?))
    }

    /// Gate-error depolarizing plus thermal relaxation, with readout error.
    pub fn depolarizing_from_calibration(cal: &DeviceCalibration) -> Result<Self> {
        Ok(Self {
            mode: NoiseMode::DepolarizingAfterEveryGate {
                p_1q: depolarizing_param_from_error_rate(cal.p_depol_1q, 1)?,
                p_2q: depolarizing_param_from_error_rate(cal.p_depol_2q, 2)?,
                relaxation: Some(damping_params(cal)?),
            },
            readout_error: Some(cal.readout_error),
        })
    }

    pub fn is_noiseless(&self) -> bool {
        matches!(self.mode, NoiseMode::None)
    }

    pub fn validate(&self) -> Result<()> {
        self.channels().map(|_| ())?;
        if let Some(p) = self.readout_error {
            if !(0.0..=1.0).contains(&p) {
                return Err(QtlError::Probability {
                    name: "readout",
                    value: p,
                });
            }
        }
        Ok(())
    }

    fn channels(&self) -> Result<GateNoise> {
        let mut noise = GateNoise::default();
        match self.mode {
            NoiseMode::None => {}
            NoiseMode::DampingAfterEveryGate(p) => {
                noise.after_1q.push(damping(p.gamma_1q, p.lambda_1q)?);
                noise.after_2q_each.push(damping(p.gamma_2q, p.lambda_2q)?);
            }
            NoiseMode::DepolarizingAfterEveryGate { p_1q, p_2q, relaxation } => {
                noise.after_1q.push(depolarizing(p_1q, 1)?);
                noise.after_2q_joint.push(depolarizing(p_2q, 2)?);
                if let Some(p) = relaxation {
                    noise.after_1q.push(damping(p.gamma_1q, p.lambda_1q)?);
                    noise.after_2q_each.push(damping(p.gamma_2q, p.lambda_2q)?);
                }
            }
        }
        Ok(noise)
    }
}

#[derive(Debug, Default)]
struct GateNoise {
    after_1q: Vec<KrausChannel>,
    after_2q_joint: Vec<KrausChannel>,
    after_2q_each: Vec<KrausChannel>,
}

/// Statevector evolution from `|0...0>`.
pub fn evolve_pure(n_qubits: usize, gates: &[BoundGate]) -> Result<Statevector> {
    let mut psi = Statevector::new_zero(n_qubits)?;
    for g in gates {
        psi.apply_gate(&g.matrix(), &g.targets)?;
    }
    Ok(psi)
}

/// Density-matrix evolution from `|0...0><0...0|` with channels after every gate.
pub fn evolve_mixed(n_qubits: usize, gates: &[BoundGate], policy: &NoisePolicy) -> Result<DensityMatrix> {
    let noise = policy.channels()?;
    let mut rho = DensityMatrix::new_zero(n_qubits)?;
    for g in gates {
        rho.apply_gate(&g.matrix(), &g.targets)?;
        if g.targets.len() == 1 {
            for ch in &noise.after_1q {
                rho.apply_kraus(ch, &g.targets)?;
            }
        } else {
            for ch in &noise.after_2q_joint {
                rho.apply_kraus(ch, &g.targets)?;
            }
            for ch in &noise.after_2q_each {
                for &q in &g.targets {
                    rho.apply_kraus(ch, &[q])?;
                }
            }
        }
    }
    Ok(rho)
}

fn z_expectations<S: QuantumState>(state: &S) -> Result<Vec<f64>> {
    (0..state.n_qubits()).map(|q| state.expect_pauli_z(q)).collect()
}

/// Basis probabilities of the final state: pure when the policy is noiseless.
fn final_probabilities(n_qubits: usize, gates: &[BoundGate], policy: &NoisePolicy) -> Result<Vec<f64>> {
    if policy.is_noiseless() {
        Ok(evolve_pure(n_qubits, gates)?.basis_probabilities())
    } else {
        Ok(evolve_mixed(n_qubits, gates, policy)?.basis_probabilities())
    }
}

/// Noiseless `<Z_i>` for every qubit.
pub fn run_exact(circuit: &ParameterizedCircuit, angles: &[f64], params: &ParamMatrix) -> Result<Vec<f64>> {
    let gates = circuit.bind(angles, params)?;
    z_expectations(&evolve_pure(circuit.shape().n_qubits, &gates)?)
}

/// `<psi|rho|psi>` between the ideal output and the noisy mixed output.
pub fn simulated_fidelity(
    circuit: &ParameterizedCircuit,
    angles: &[f64],
    params: &ParamMatrix,
    policy: &NoisePolicy,
) -> Result<f64> {
    let gates = circuit.bind(angles, params)?;
    let n = circuit.shape().n_qubits;
    state_fidelity(&evolve_mixed(n, &gates, policy)?, &evolve_pure(n, &gates)?)
}

/// Uniform encoding angles in `[-pi/2, pi/2]` and parameters in `[-pi, pi)`.
pub fn random_instance(circuit: &ParameterizedCircuit, seed: u64) -> (Vec<f64>, ParamMatrix) {
    use std::f64::consts::{FRAC_PI_2, PI};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = circuit.shape();
    let angles = (0..shape.n_qubits)
        .map(|_| rng.random_range(-FRAC_PI_2..=FRAC_PI_2))
        .collect();
    let mut params = ParamMatrix::zeros(shape);
    for v in &mut params.values {
        *v = rng.random_range(-PI..PI);
    }
    (angles, params)
}

/// `<Z_i>` of the noisy mixed state.
pub fn run_noisy_expectations(
    circuit: &ParameterizedCircuit,
    angles: &[f64],
    params: &ParamMatrix,
    policy: &NoisePolicy,
) -> Result<Vec<f64>> {
    if policy.is_noiseless() {
        return Err(QtlError::Config(
            "noisy expectation backend needs a damping or depolarizing policy".into(),
        ));
    }
    let gates = circuit.bind(angles, params)?;
    z_expectations(&evolve_mixed(circuit.shape().n_qubits, &gates, policy)?)
}

/// Draws `shots` outcomes from a probability vector by inverse CDF.
pub fn sample_counts(n_qubits: usize, probs: &[f64], shots: u64, seed: u64) -> BitstringCounts {
    let mut cdf = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for &p in probs {
        acc += p;
        cdf.push(acc);
    }
    let total = acc;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hist = vec![0u64; probs.len()];
    for _ in 0..shots {
        let u = rng.random::<f64>() * total;
        let idx = cdf.partition_point(|&c| c <= u).min(probs.len() - 1);
        hist[idx] += 1;
    }
    let mut counts = BitstringCounts::new(n_qubits);
    for (b, c) in hist.into_iter().enumerate() {
        counts.add(b, c);
    }
    counts
}

fn sample_gates(
    n_qubits: usize,
    gates: &[BoundGate],
    cfg: &ShotConfig,
    policy: &NoisePolicy,
) -> Result<BitstringCounts> {
    if cfg.shots == 0 {
        return Err(QtlError::Config("shots must be at least 1".into()));
    }
    let probs = final_probabilities(n_qubits, gates, policy)?;
    let counts = sample_counts(n_qubits, &probs, cfg.shots, cfg.seed);
    match policy.readout_error {
        Some(p) if p > 0.0 => readout_confusion(&counts, p, cfg.seed ^ READOUT_SEED_SALT),
        _ => Ok(counts),
    }
}

/// Finite-shot measurement of every qubit, with optional readout confusion.
pub fn run_sampler(
    circuit: &ParameterizedCircuit,
    angles: &[f64],
    params: &ParamMatrix,
    cfg: &ShotConfig,
    policy: &NoisePolicy,
) -> Result<BitstringCounts> {
    let gates = circuit.bind(angles, params)?;
    sample_gates(circuit.shape().n_qubits, &gates, cfg, policy)
}

pub fn hamming_class(basis_index: usize, class_count: usize) -> usize {
    basis_index.count_ones() as usize % class_count
}

/// `P(c)` = fraction of shots whose Hamming weight is `c` modulo `class_count`.
pub fn interpret(counts: &BitstringCounts, class_count: usize) -> Result<Vec<f64>> {
    if class_count < 2 {
        return Err(QtlError::Config(format!("class count {class_count} < 2")));
    }
    let total = counts.total();
    if total == 0 {
        return Err(QtlError::Empty("bitstring counts"));
    }
    let mut probs = vec![0.0; class_count];
    for (b, c) in counts.iter() {
        probs[hamming_class(b, class_count)] += c as f64;
    }
    for p in &mut probs {
        *p /= total as f64;
    }
    Ok(probs)
}

/// Applies independent per-bit flips to a basis distribution.
fn confuse_distribution(probs: &mut [f64], n_qubits: usize, p: f64) {
    for q in 0..n_qubits {
        let bit = 1usize << q;
        for i in 0..probs.len() {
            if i & bit != 0 {
                continue;
            }
            let (a, b) = (probs[i], probs[i | bit]);
            probs[i] = (1.0 - p) * a + p * b;
            probs[i | bit] = p * a + (1.0 - p) * b;
        }
    }
}

fn class_probs_from_gates(
    n_qubits: usize,
    gates: &[BoundGate],
    class_count: usize,
    policy: &NoisePolicy,
) -> Result<Vec<f64>> {
    if class_count < 2 {
        return Err(QtlError::Config(format!("class count {class_count} < 2")));
    }
    let mut probs = final_probabilities(n_qubits, gates, policy)?;
    if let Some(p) = policy.readout_error {
        confuse_distribution(&mut probs, n_qubits, p);
    }
    let mut classes = vec![0.0; class_count];
    for (b, p) in probs.into_iter().enumerate() {
        classes[hamming_class(b, class_count)] += p;
    }
    let total: f64 = classes.iter().sum();
    for c in &mut classes {
        *c /= total;
    }
    Ok(classes)
}

/// Exact class distribution `sum_{b: f(b)=c} |<b|psi>|^2` (or the mixed-state analogue).
pub fn exact_class_probs(
    circuit: &ParameterizedCircuit,
    angles: &[f64],
    params: &ParamMatrix,
    class_count: usize,
    policy: &NoisePolicy,
) -> Result<Vec<f64>> {
    let gates = circuit.bind(angles, params)?;
    class_probs_from_gates(circuit.shape().n_qubits, &gates, class_count, policy)
}

/// A circuit evaluator producing a real output vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Backend {
    /// Statevector `<Z_i>`.
    Exact,
    /// Mixed-state `<Z_i>` under the policy's channels.
    NoisyExpectation(NoisePolicy),
    /// Exact Hamming-class probabilities (pure or mixed per policy).
    ExactClassProbs { class_count: usize, policy: NoisePolicy },
    /// Sampled Hamming-class frequencies.
    Sampler {
        class_count: usize,
        shots: u64,
        policy: NoisePolicy,
    },
}

impl Backend {
    /// Whether outputs are deterministic functions of the gate angles.
    pub fn is_analytic(&self) -> bool {
        !matches!(self, Backend::Sampler { .. })
    }

    pub fn output_len(&self, n_qubits: usize) -> usize {
        match self {
            Backend::Exact | Backend::NoisyExpectation(_) => n_qubits,
            Backend::ExactClassProbs { class_count, .. } | Backend::Sampler { class_count, .. } => *class_count,
        }
    }

    /// Runs already-bound gates. `seed` only matters for the sampler.
    pub fn evaluate(&self, n_qubits: usize, gates: &[BoundGate], seed: u64) -> Result<Vec<f64>> {
        match self {
            Backend::Exact => z_expectations(&evolve_pure(n_qubits, gates)?),
            Backend::NoisyExpectation(policy) => {
                if policy.is_noiseless() {
                    z_expectations(&evolve_pure(n_qubits, gates)?)
                } else {
                    z_expectations(&evolve_mixed(n_qubits, gates, policy)?)
                }
            }
            Backend::ExactClassProbs { class_count, policy } => {
                class_probs_from_gates(n_qubits, gates, *class_count, policy)
            }
            Backend::Sampler {
                class_count,
                shots,
                policy,
            } => {
                let cfg = ShotConfig { shots: *shots, seed };
                interpret(&sample_gates(n_qubits, gates, &cfg, policy)?, *class_count)
            }
        }
    }
}
