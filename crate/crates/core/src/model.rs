//! Classification heads on frozen features: the classical linear head and
//! the four quantum-hybrid variants.
//!
//! Every variant exposes its trainable tensors as one flat vector, ordered
//! `(W_pre, b_pre, phi, W_post, b_post)` for hybrids and `(W, b)` for the
//! classical head. Gradients and optimizer state use the same layout.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{derive_seed, Backend, NoisePolicy, ShotConfig};
use crate::circuit::{CircuitShape, ParamMatrix, ParameterizedCircuit, Template};
use crate::error::{QtlError, Result};
use crate::gradient::{finite_diff, param_shift, spsa_estimate, GradientMethod, SpsaConfig};
use crate::noise::DeviceCalibration;

/// Probability floor before taking logs of class probabilities.
pub const PROB_FLOOR: f64 = 1e-6;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    Classical,
    RingExact,
    RingNoisy,
    BrickwallExact,
    BrickwallNoisy,
}

impl VariantKind {
    pub const ALL: [VariantKind; 5] = [
        VariantKind::Classical,
        VariantKind::RingExact,
        VariantKind::RingNoisy,
        VariantKind::BrickwallExact,
        VariantKind::BrickwallNoisy,
    ];

    pub fn is_noisy(self) -> bool {
        matches!(self, VariantKind::RingNoisy | VariantKind::BrickwallNoisy)
    }

    pub fn is_brickwall(self) -> bool {
        matches!(self, VariantKind::BrickwallExact | VariantKind::BrickwallNoisy)
    }

    pub fn template(self) -> Option<Template> {
        match self {
            VariantKind::Classical => None,
            VariantKind::RingExact | VariantKind::RingNoisy => Some(Template::RingEntangler),
            VariantKind::BrickwallExact | VariantKind::BrickwallNoisy => Some(Template::BrickWall),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VariantKind::Classical => "classical",
            VariantKind::RingExact => "ring_exact",
            VariantKind::RingNoisy => "ring_noisy",
            VariantKind::BrickwallExact => "brickwall_exact",
            VariantKind::BrickwallNoisy => "brickwall_noisy",
        }
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantKind {
    type Err = QtlError;

    fn from_str(s: &str) -> Result<Self> {
        let normalized = s.replace('-', "_").to_ascii_lowercase();
        VariantKind::ALL
            .into_iter()
            .find(|k| k.as_str() == normalized)
            .ok_or_else(|| QtlError::Config(format!("unknown variant '{s}'")))
    }
}

/// Full description of a head: kind, circuit, noise, shots and gradient engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelVariant {
    pub kind: VariantKind,
    pub shape: CircuitShape,
    pub class_count: usize,
    pub noise: Option<NoisePolicy>,
    pub shots: Option<ShotConfig>,
    pub gradient: GradientMethod,
}

impl ModelVariant {
    /// Reference settings: 4 qubits, depth 3, 1024 shots, SPSA (c = 0.3) for
    /// the sampled head and parameter shift everywhere else.
    pub fn standard(kind: VariantKind, class_count: usize, cal: &DeviceCalibration) -> Result<Self> {
        let shape = CircuitShape::default();
        let spsa = GradientMethod::Spsa(SpsaConfig::default());
        let shots = Some(ShotConfig::new(1024, 0)?);
        let variant = match kind {
            VariantKind::Classical | VariantKind::RingExact => Self {
                kind,
                shape,
                class_count,
                noise: None,
                shots: None,
                gradient: GradientMethod::ParamShift,
            },
            VariantKind::RingNoisy => Self {
                kind,
                shape,
                class_count,
                noise: Some(NoisePolicy::damping_from_calibration(cal)?),
                shots: None,
                gradient: GradientMethod::ParamShift,
            },
            // the exact class probabilities are differentiable, so the
            // shift rule reaches the pre-linear layer directly
            VariantKind::BrickwallExact => Self {
                kind,
                shape,
                class_count,
                noise: None,
                shots,
                gradient: GradientMethod::ParamShift,
            },
            VariantKind::BrickwallNoisy => Self {
                kind,
                shape,
                class_count,
                noise: Some(NoisePolicy::depolarizing_from_calibration(cal)?),
                shots,
                gradient: spsa,
            },
        };
        variant.validate()?;
        Ok(variant)
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(QtlError::Config(format!("class count {} < 2", self.class_count)));
        }
        if self.kind != VariantKind::Classical {
            self.shape.validate()?;
        }
        if self.kind.is_noisy() != self.noise.is_some() {
            return Err(QtlError::Config(format!(
                "variant {} {} a noise policy",
                self.kind,
                if self.kind.is_noisy() { "requires" } else { "forbids" }
            )));
        }
        if self.kind.is_brickwall() != self.shots.is_some() {
            return Err(QtlError::Config(format!(
                "variant {} {} a shot configuration",
                self.kind,
                if self.kind.is_brickwall() {
                    "requires"
                } else {
                    "forbids"
                }
            )));
        }
        if let Some(policy) = &self.noise {
            policy.validate()?;
            if policy.is_noiseless() {
                return Err(QtlError::Config(format!("variant {} needs a noisy policy", self.kind)));
            }
        }
        if let Some(shots) = &self.shots {
            if shots.shots == 0 {
                return Err(QtlError::Config("shots must be at least 1".into()));
            }
        }
        match self.gradient {
            GradientMethod::Spsa(cfg) if !(cfg.c > 0.0) => {
                return Err(QtlError::Config("SPSA perturbation must be positive".into()))
            }
            GradientMethod::FiniteDiff { step } if !(step > 0.0) => {
                return Err(QtlError::Config("finite-difference step must be positive".into()))
            }
            GradientMethod::ParamShift | GradientMethod::FiniteDiff { .. }
                if self.kind == VariantKind::BrickwallNoisy =>
            {
                return Err(QtlError::Config(
                    "sampled variant cannot be differentiated analytically; use SPSA".into(),
                ))
            }
            _ => {}
        }
        Ok(())
    }

    /// The evaluator that produces the quantum layer's output.
    pub fn backend(&self) -> Option<Backend> {
        match self.kind {
            VariantKind::Classical => None,
            VariantKind::RingExact => Some(Backend::Exact),
            VariantKind::RingNoisy => Some(Backend::NoisyExpectation(self.noise.unwrap_or_else(NoisePolicy::ideal))),
            VariantKind::BrickwallExact => Some(Backend::ExactClassProbs {
                class_count: self.class_count,
                policy: NoisePolicy::ideal(),
            }),
            VariantKind::BrickwallNoisy => Some(Backend::Sampler {
                class_count: self.class_count,
                shots: self.shots.map_or(1024, |s| s.shots),
                policy: self.noise.unwrap_or_else(NoisePolicy::ideal),
            }),
        }
    }
}

/// Dense affine map, weights stored `out x in` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Uniform in `+-1/sqrt(in_dim)` for weights and bias.
    pub fn init_uniform<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut draw = || rng.random_range(-bound..bound);
        let weights = (0..in_dim * out_dim).map(|_| draw()).collect();
        let bias = (0..out_dim).map(|_| draw()).collect();
        Self {
            in_dim,
            out_dim,
            weights,
            bias,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.in_dim {
            return Err(QtlError::Dimension(format!(
                "linear layer expects {} inputs, got {}",
                self.in_dim,
                input.len()
            )));
        }
        Ok(self
            .weights
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect())
    }

    /// Appends `(dW, db)` to `grad` and returns `d_input`.
    fn backward(&self, input: &[f64], d_out: &[f64], grad: &mut Vec<f64>) -> Vec<f64> {
        for &d in d_out {
            grad.extend(input.iter().map(|x| d * x));
        }
        grad.extend_from_slice(d_out);
        let mut d_in = vec![0.0; self.in_dim];
        for (row, &d) in self.weights.chunks_exact(self.in_dim).zip(d_out) {
            for (acc, w) in d_in.iter_mut().zip(row) {
                *acc += w * d;
            }
        }
        d_in
    }

    fn write_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.weights);
        out.extend_from_slice(&self.bias);
    }

    fn read_flat<'a>(&mut self, mut flat: &'a [f64]) -> &'a [f64] {
        let (w, rest) = flat.split_at(self.weights.len());
        self.weights.copy_from_slice(w);
        flat = rest;
        let (b, rest) = flat.split_at(self.bias.len());
        self.bias.copy_from_slice(b);
        rest
    }
}

/// Trainable tensors of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "head", rename_all = "snake_case")]
pub enum ModelParams {
    Classical {
        linear: LinearLayer,
    },
    Hybrid {
        pre: LinearLayer,
        quantum: ParamMatrix,
        post: LinearLayer,
    },
}

/// A head bound to a feature dimension, with its parameters.
#[derive(Debug, Clone)]
pub struct HybridModel {
    variant: ModelVariant,
    feature_dim: usize,
    params: ModelParams,
    circuit: Option<ParameterizedCircuit>,
}

/// Intermediate values of a hybrid forward pass.
#[derive(Debug, Clone)]
struct HybridTrace {
    pre_activation: Vec<f64>,
    angles: Vec<f64>,
    quantum_out: Vec<f64>,
    head_in: Vec<f64>,
    logits: Vec<f64>,
}

/// Softmax cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(QtlError::Config(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - logits[label];
    let mut grad: Vec<f64> = exps.into_iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Lowest index among maximal entries.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `tanh(W_pre f + b_pre) * pi/2`.
pub fn encode_angles(features: &[f64], pre: &LinearLayer) -> Result<Vec<f64>> {
    Ok(pre
        .forward(features)?
        .into_iter()
        .map(|z| z.tanh() * FRAC_PI_2)
        .collect())
}

impl HybridModel {
    /// Fresh model with weights drawn from `seed`.
    pub fn new(variant: ModelVariant, feature_dim: usize, seed: u64) -> Result<Self> {
        variant.validate()?;
        if feature_dim == 0 {
            return Err(QtlError::Config("feature dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = match variant.kind {
            VariantKind::Classical => ModelParams::Classical {
                linear: LinearLayer::init_uniform(feature_dim, variant.class_count, &mut rng),
            },
            kind => {
                let shape = variant.shape;
                let pre = LinearLayer::init_uniform(feature_dim, shape.n_qubits, &mut rng);
                let mut quantum = ParamMatrix::zeros(shape);
                for v in &mut quantum.values {
                    *v = rng.random_range(-PI..PI);
                }
                let head_in = if kind.is_brickwall() {
                    variant.class_count
                } else {
                    shape.n_qubits
                };
                let post = LinearLayer::init_uniform(head_in, variant.class_count, &mut rng);
                ModelParams::Hybrid { pre, quantum, post }
            }
        };
        Self::from_params(variant, feature_dim, params)
    }

    pub fn from_params(variant: ModelVariant, feature_dim: usize, params: ModelParams) -> Result<Self> {
        variant.validate()?;
        let circuit = match variant.kind.template() {
            Some(t) => Some(ParameterizedCircuit::build(t, variant.shape)?),
            None => None,
        };
        let consistent = match (&params, variant.kind) {
            (ModelParams::Classical { linear }, VariantKind::Classical) => {
                linear.in_dim == feature_dim
                    && linear.out_dim == variant.class_count
                    && linear.weights.len() == feature_dim * variant.class_count
                    && linear.bias.len() == variant.class_count
            }
            (ModelParams::Hybrid { pre, quantum, post }, kind) if kind != VariantKind::Classical => {
                let n = variant.shape.n_qubits;
                let head_in = if kind.is_brickwall() { variant.class_count } else { n };
                pre.in_dim == feature_dim
                    && pre.out_dim == n
                    && pre.weights.len() == feature_dim * n
                    && pre.bias.len() == n
                    && quantum.depth == variant.shape.depth
                    && quantum.n_qubits == n
                    && quantum.values.len() == n * variant.shape.depth
                    && post.in_dim == head_in
                    && post.out_dim == variant.class_count
                    && post.weights.len() == head_in * variant.class_count
                    && post.bias.len() == variant.class_count
            }
            _ => false,
        };
        if !consistent {
            return Err(QtlError::Dimension(format!(
                "parameters do not match variant {} with feature dimension {feature_dim}",
                variant.kind
            )));
        }
        Ok(Self {
            variant,
            feature_dim,
            params,
            circuit,
        })
    }

    pub fn variant(&self) -> &ModelVariant {
        &self.variant
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    pub fn circuit(&self) -> Option<&ParameterizedCircuit> {
        self.circuit.as_ref()
    }

    pub fn quantum_trainable_count(&self) -> usize {
        match &self.params {
            ModelParams::Classical { .. } => 0,
            ModelParams::Hybrid { quantum, .. } => quantum.values.len(),
        }
    }

    pub fn classical_trainable_count(&self) -> usize {
        match &self.params {
            ModelParams::Classical { linear } => linear.param_count(),
            ModelParams::Hybrid { pre, post, .. } => pre.param_count() + post.param_count(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.quantum_trainable_count() + self.classical_trainable_count()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        match &self.params {
            ModelParams::Classical { linear } => linear.write_flat(&mut out),
            ModelParams::Hybrid { pre, quantum, post } => {
                pre.write_flat(&mut out);
                out.extend_from_slice(&quantum.values);
                post.write_flat(&mut out);
            }
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(QtlError::Dimension(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        match &mut self.params {
            ModelParams::Classical { linear } => {
                linear.read_flat(flat);
            }
            ModelParams::Hybrid { pre, quantum, post } => {
                let rest = pre.read_flat(flat);
                let (q, rest) = rest.split_at(quantum.values.len());
                quantum.values.copy_from_slice(q);
                post.read_flat(rest);
            }
        }
        Ok(())
    }

    /// Copy of the model carrying `flat` as its parameters.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let mut m = self.clone();
        m.set_flat_params(flat)?;
        Ok(m)
    }

    /// SHA-256 over the little-endian bytes of the flat parameter vector.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for v in self.flat_params() {
            hasher.update(v.to_le_bytes());
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn check_features(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.feature_dim {
            return Err(QtlError::Dimension(format!(
                "model expects {} features, got {}",
                self.feature_dim,
                features.len()
            )));
        }
        if features.iter().any(|f| !f.is_finite()) {
            return Err(QtlError::NonFinite("feature vector".into()));
        }
        Ok(())
    }

    /// `W f + b`.
    pub fn forward_classical(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.check_features(features)?;
        match &self.params {
            ModelParams::Classical { linear } => linear.forward(features),
            ModelParams::Hybrid { .. } => Err(QtlError::Config(format!(
                "forward_classical called on {} model",
                self.variant.kind
            ))),
        }
    }

    fn hybrid_trace(&self, features: &[f64], seed: u64) -> Result<HybridTrace> {
        self.check_features(features)?;
        let (ModelParams::Hybrid { pre, quantum, post }, Some(circuit), Some(backend)) =
            (&self.params, &self.circuit, self.variant.backend())
        else {
            return Err(QtlError::Config("classical model has no quantum layer".into()));
        };
        let pre_activation = pre.forward(features)?;
        let angles: Vec<f64> = pre_activation.iter().map(|z| z.tanh() * FRAC_PI_2).collect();
        let gates = circuit.bind(&angles, quantum)?;
        let quantum_out = backend.evaluate(circuit.shape().n_qubits, &gates, seed)?;
        let head_in = if self.variant.kind.is_brickwall() {
            quantum_out.iter().map(|p| (p + PROB_FLOOR).ln()).collect()
        } else {
            quantum_out.clone()
        };
        let logits = post.forward(&head_in)?;
        Ok(HybridTrace {
            pre_activation,
            angles,
            quantum_out,
            head_in,
            logits,
        })
    }

    /// `W_post <Z> + b_post` for the ring variants.
    pub fn forward_hybrid_expectation(&self, features: &[f64]) -> Result<Vec<f64>> {
        if !matches!(self.variant.kind, VariantKind::RingExact | VariantKind::RingNoisy) {
            return Err(QtlError::Config(format!(
                "expectation forward pass not defined for {}",
                self.variant.kind
            )));
        }
        Ok(self.hybrid_trace(features, 0)?.logits)
    }

    /// `W_post log(P + floor) + b_post` for the brick-wall variants; `seed`
    /// drives shot sampling in the noisy variant.
    pub fn forward_hybrid_sampler(&self, features: &[f64], seed: u64) -> Result<Vec<f64>> {
        if !self.variant.kind.is_brickwall() {
            return Err(QtlError::Config(format!(
                "sampler forward pass not defined for {}",
                self.variant.kind
            )));
        }
        Ok(self.hybrid_trace(features, seed)?.logits)
    }

    /// Class probabilities of the brick-wall quantum layer.
    pub fn class_probabilities(&self, features: &[f64], seed: u64) -> Result<Vec<f64>> {
        if !self.variant.kind.is_brickwall() {
            return Err(QtlError::Config(format!(
                "{} has no class-probability layer",
                self.variant.kind
            )));
        }
        Ok(self.hybrid_trace(features, seed)?.quantum_out)
    }

    /// Encoding angles for `features`.
    pub fn angles(&self, features: &[f64]) -> Result<Vec<f64>> {
        match &self.params {
            ModelParams::Hybrid { pre, .. } => {
                self.check_features(features)?;
                encode_angles(features, pre)
            }
            ModelParams::Classical { .. } => Err(QtlError::Config("classical model has no encoding".into())),
        }
    }

    /// Logits of any variant.
    pub fn forward(&self, features: &[f64], seed: u64) -> Result<Vec<f64>> {
        match self.variant.kind {
            VariantKind::Classical => self.forward_classical(features),
            _ => Ok(self.hybrid_trace(features, seed)?.logits),
        }
    }

    pub fn loss(&self, features: &[f64], label: usize, seed: u64) -> Result<f64> {
        Ok(cross_entropy(&self.forward(features, seed)?, label)?.0)
    }

    /// Loss and flat gradient for one sample by the chain rule. The quantum
    /// layer is differentiated with parameter shift or finite differences per
    /// the variant; SPSA variants fall back to a single-sample SPSA estimate.
    pub fn backward(&self, features: &[f64], label: usize, seed: u64) -> Result<(f64, Vec<f64>)> {
        if let GradientMethod::Spsa(cfg) = self.variant.gradient {
            if self.variant.kind != VariantKind::Classical {
                let loss = self.loss(features, label, seed)?;
                let grad = self.spsa_gradient(&[(features, label)], seed, &cfg)?;
                return Ok((loss, grad));
            }
        }
        match &self.params {
            ModelParams::Classical { linear } => {
                let logits = self.forward_classical(features)?;
                let (loss, d_logits) = cross_entropy(&logits, label)?;
                let mut grad = Vec::with_capacity(self.param_count());
                linear.backward(features, &d_logits, &mut grad);
                Ok((loss, grad))
            }
            ModelParams::Hybrid { pre, quantum, post } => {
                let trace = self.hybrid_trace(features, seed)?;
                let (loss, d_logits) = cross_entropy(&trace.logits, label)?;
                let mut post_grad = Vec::with_capacity(post.param_count());
                let d_head = post.backward(&trace.head_in, &d_logits, &mut post_grad);
                let upstream: Vec<f64> = if self.variant.kind.is_brickwall() {
                    d_head
                        .iter()
                        .zip(&trace.quantum_out)
                        .map(|(d, p)| d / (p + PROB_FLOOR))
                        .collect()
                } else {
                    d_head
                };
                let (d_angles, d_params) = self.quantum_layer_gradient(&trace.angles, quantum, &upstream)?;
                let d_pre: Vec<f64> = d_angles
                    .iter()
                    .zip(&trace.pre_activation)
                    .map(|(d, z)| {
                        let t = z.tanh();
                        d * FRAC_PI_2 * (1.0 - t * t)
                    })
                    .collect();
                let mut grad = Vec::with_capacity(self.param_count());
                pre.backward(features, &d_pre, &mut grad);
                grad.extend_from_slice(&d_params);
                grad.extend_from_slice(&post_grad);
                Ok((loss, grad))
            }
        }
    }

    fn quantum_layer_gradient(
        &self,
        angles: &[f64],
        quantum: &ParamMatrix,
        upstream: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let circuit = self.circuit.as_ref().expect("hybrid model has a circuit");
        let backend = self.variant.backend().expect("hybrid model has a backend");
        match self.variant.gradient {
            GradientMethod::ParamShift => {
                let g = param_shift(&backend, circuit, angles, quantum, upstream)?;
                Ok((g.d_angles, g.d_params.values))
            }
            GradientMethod::FiniteDiff { step } => {
                if !backend.is_analytic() {
                    return Err(QtlError::Config("finite differences need an analytic backend".into()));
                }
                let n = angles.len();
                let mut point: Vec<f64> = angles.to_vec();
                point.extend_from_slice(&quantum.values);
                let contracted = |x: &[f64]| -> Result<f64> {
                    let params = ParamMatrix {
                        depth: quantum.depth,
                        n_qubits: quantum.n_qubits,
                        values: x[n..].to_vec(),
                    };
                    let gates = circuit.unchecked_bind(&x[..n], &params);
                    let out = backend.evaluate(n, &gates, 0)?;
                    Ok(out.iter().zip(upstream).map(|(o, u)| o * u).sum())
                };
                let g = finite_diff(contracted, &point, step)?;
                Ok((g[..n].to_vec(), g[n..].to_vec()))
            }
            GradientMethod::Spsa(_) => unreachable!("SPSA handled at the batch level"),
        }
    }

    /// Mean loss over a batch; sample `i` uses seed `derive_seed(seed, i)`.
    pub fn batch_loss(&self, batch: &[(&[f64], usize)], seed: u64) -> Result<f64> {
        let losses: Vec<Result<f64>> = batch
            .par_iter()
            .enumerate()
            .map(|(i, (f, y))| self.loss(f, *y, derive_seed(seed, i as u64)))
            .collect();
        let mut total = 0.0;
        for l in losses {
            total += l?;
        }
        Ok(total / batch.len() as f64)
    }

    /// SPSA estimate of the batch-loss gradient over the full flat vector.
    pub fn spsa_gradient(&self, batch: &[(&[f64], usize)], seed: u64, cfg: &SpsaConfig) -> Result<Vec<f64>> {
        let theta = self.flat_params();
        spsa_estimate(|x| self.with_flat(x)?.batch_loss(batch, seed), &theta, cfg)
    }

    /// Mean loss and gradient over a batch. Per-sample work runs in parallel
    /// and is reduced in sample order.
    pub fn batch_gradient(&self, batch: &[(&[f64], usize)], seed: u64, step: u64) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(QtlError::Empty("batch"));
        }
        if let (GradientMethod::Spsa(cfg), false) = (self.variant.gradient, self.variant.kind == VariantKind::Classical)
        {
            let loss = self.batch_loss(batch, seed)?;
            let step_cfg = SpsaConfig {
                c: cfg.c,
                seed: derive_seed(cfg.seed ^ seed, step),
            };
            let grad = self.spsa_gradient(batch, seed, &step_cfg)?;
            return Ok((loss, grad));
        }
        let results: Vec<Result<(f64, Vec<f64>)>> = batch
            .par_iter()
            .enumerate()
            .map(|(i, (f, y))| self.backward(f, *y, derive_seed(seed, i as u64)))
            .collect();
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.param_count()];
        for r in results {
            let (l, g) = r?;
            loss += l;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        let scale = 1.0 / batch.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        Ok((loss * scale, grad))
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            variant: self.variant,
            feature_dim: self.feature_dim,
            seed,
            params: self.params.clone(),
        }
    }
}

/// Persisted model: variant, shapes, every parameter tensor and the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub variant: ModelVariant,
    pub feature_dim: usize,
    pub seed: u64,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn into_model(self) -> Result<HybridModel> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(QtlError::Config(format!(
                "unsupported checkpoint version {}",
                self.format_version
            )));
        }
        HybridModel::from_params(self.variant, self.feature_dim, self.params)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
