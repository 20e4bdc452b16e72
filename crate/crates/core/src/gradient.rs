//! Gradient engines for the quantum layer.

use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::circuit::{AngleSlot, ParamMatrix, ParameterizedCircuit};
use crate::error::{QtlError, Result};

/// Default central-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpsaConfig {
    /// Perturbation magnitude.
    pub c: f64,
    pub seed: u64,
}

impl SpsaConfig {
    pub fn new(c: f64, seed: u64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(QtlError::Config(format!("SPSA perturbation c={c} must be positive")));
        }
        Ok(Self { c, seed })
    }

    /// Rademacher direction in `{-1, +1}^dim` for this seed.
    pub fn direction(&self, dim: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..dim)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect()
    }
}

impl Default for SpsaConfig {
    fn default() -> Self {
        Self { c: 0.3, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GradientMethod {
    ParamShift,
    Spsa(SpsaConfig),
    FiniteDiff { step: f64 },
}

/// Gradient of a contracted quantum-layer output with respect to its angles.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumGradient {
    pub d_angles: Vec<f64>,
    pub d_params: ParamMatrix,
}

/// Shift rule `d<O>/dx = (<O>(x + pi/2) - <O>(x - pi/2)) / 2` for every
/// rotation, contracted with `upstream` (one weight per backend output).
pub fn param_shift(
    backend: &Backend,
    circuit: &ParameterizedCircuit,
    angles: &[f64],
    params: &ParamMatrix,
    upstream: &[f64],
) -> Result<QuantumGradient> {
    if !backend.is_analytic() {
        return Err(QtlError::Config(
            "parameter shift needs an analytic backend, not a sampler".into(),
        ));
    }
    let n = circuit.shape().n_qubits;
    if upstream.len() != backend.output_len(n) {
        return Err(QtlError::Dimension(format!(
            "upstream has {} entries, backend produces {}",
            upstream.len(),
            backend.output_len(n)
        )));
    }
    let gates = circuit.bind(angles, params)?;
    let mut grad = QuantumGradient {
        d_angles: vec![0.0; n],
        d_params: ParamMatrix::zeros(circuit.shape()),
    };
    if upstream.iter().all(|&u| u == 0.0) {
        return Ok(grad);
    }
    for (i, gate) in gates.iter().enumerate() {
        let (Some(slot), Some(angle)) = (gate.slot, gate.angle) else {
            continue;
        };
        let mut shifted = gates.clone();
        shifted[i].angle = Some(angle + FRAC_PI_2);
        let plus = backend.evaluate(n, &shifted, 0)?;
        shifted[i].angle = Some(angle - FRAC_PI_2);
        let minus = backend.evaluate(n, &shifted, 0)?;
        let partial: f64 = upstream
            .iter()
            .zip(plus.iter().zip(&minus))
            .map(|(u, (p, m))| u * 0.5 * (p - m))
            .sum();
        match slot {
            AngleSlot::Encoding(q) => grad.d_angles[q] += partial,
            AngleSlot::Trainable { layer, qubit } => *grad.d_params.get_mut(layer, qubit) += partial,
        }
    }
    Ok(grad)
}

fn finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(QtlError::NonFinite(format!("{what} = {value}")))
    }
}

/// One simultaneous-perturbation estimate; calls `loss_fn` exactly twice.
pub fn spsa_estimate<F>(mut loss_fn: F, theta: &[f64], cfg: &SpsaConfig) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(cfg.c > 0.0) {
        return Err(QtlError::Config(format!(
            "SPSA perturbation c={} must be positive",
            cfg.c
        )));
    }
    let delta = cfg.direction(theta.len());
    let plus: Vec<f64> = theta.iter().zip(&delta).map(|(t, d)| t + cfg.c * d).collect();
    let minus: Vec<f64> = theta.iter().zip(&delta).map(|(t, d)| t - cfg.c * d).collect();
    let l_plus = finite(loss_fn(&plus)?, "loss at theta + c*delta")?;
    let l_minus = finite(loss_fn(&minus)?, "loss at theta - c*delta")?;
    let scale = (l_plus - l_minus) / (2.0 * cfg.c);
    Ok(delta.into_iter().map(|d| scale * d).collect())
}

/// Central differences, `2 * theta.len()` evaluations.
pub fn finite_diff<F>(mut loss_fn: F, theta: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(QtlError::Config(format!(
            "finite-difference step h={h} must be positive"
        )));
    }
    let mut point = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        point[i] = theta[i] + h;
        let up = finite(loss_fn(&point)?, "loss")?;
        point[i] = theta[i] - h;
        let down = finite(loss_fn(&point)?, "loss")?;
        point[i] = theta[i];
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::NoisePolicy;
    use crate::circuit::{build_ring_circuit, CircuitShape};

    #[test]
    fn single_qubit_shift_is_minus_sine() {
        let shape = CircuitShape::new(2, 1).unwrap();
        let c = build_ring_circuit(shape).unwrap();
        // with phi = 0 and theta_1 = 0 the two ring CNOTs swap qubit 0 into
        // qubit 1, so <Z_1> = cos(theta_0)
        let theta = FRAC_PI_2;
        let g = param_shift(
            &Backend::Exact,
            &c,
            &[theta, 0.0],
            &ParamMatrix::zeros(shape),
            &[0.0, 1.0],
        )
        .unwrap();
        assert!((g.d_angles[0] + theta.sin()).abs() < 1e-10);
    }

    #[test]
    fn zero_upstream_zero_gradient() {
        let shape = CircuitShape::default();
        let c = build_ring_circuit(shape).unwrap();
        let params = ParamMatrix::from_rows(&vec![vec![0.4, 1.0, -0.3, 2.0]; 3]).unwrap();
        let g = param_shift(&Backend::Exact, &c, &[0.3, 0.1, -0.2, 0.5], &params, &[0.0; 4]).unwrap();
        assert!(g.d_angles.iter().chain(&g.d_params.values).all(|&x| x == 0.0));
    }

    #[test]
    fn sampler_rejected() {
        let shape = CircuitShape::default();
        let c = build_ring_circuit(shape).unwrap();
        let sampler = Backend::Sampler {
            class_count: 2,
            shots: 100,
            policy: NoisePolicy::ideal(),
        };
        assert!(param_shift(&sampler, &c, &[0.0; 4], &ParamMatrix::zeros(shape), &[1.0, 0.0]).is_err());
        assert!(param_shift(&Backend::Exact, &c, &[0.0; 4], &ParamMatrix::zeros(shape), &[1.0]).is_err());
    }

    #[test]
    fn spsa_exact_on_scalar_quadratic() {
        // find a seed whose single draw is +1
        let cfg = (0..)
            .map(|seed| SpsaConfig { c: 0.3, seed })
            .find(|cfg| cfg.direction(1)[0] == 1.0)
            .unwrap();
        let g = spsa_estimate(|t| Ok(t[0] * t[0]), &[1.0], &cfg).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn spsa_on_linear_function() {
        let a = [0.5, -1.5, 2.0, 0.25];
        let cfg = SpsaConfig { c: 0.3, seed: 9 };
        let delta = cfg.direction(4);
        let g = spsa_estimate(
            |t| Ok(a.iter().zip(t).map(|(x, y)| x * y).sum()),
            &[0.1, 0.2, 0.3, 0.4],
            &cfg,
        )
        .unwrap();
        let ad: f64 = a.iter().zip(&delta).map(|(x, d)| x * d).sum();
        for (gi, di) in g.iter().zip(&delta) {
            assert!((gi - ad * di).abs() < 1e-12);
        }
    }

    #[test]
    fn spsa_counts_and_determinism() {
        let cfg = SpsaConfig { c: 0.3, seed: 5 };
        let mut calls = 0;
        let g1 = spsa_estimate(
            |t| {
                calls += 1;
                Ok(t.iter().map(|x| x * x * x).sum())
            },
            &[0.5; 16],
            &cfg,
        )
        .unwrap();
        assert_eq!(calls, 2);
        let g2 = spsa_estimate(|t| Ok(t.iter().map(|x| x * x * x).sum()), &[0.5; 16], &cfg).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn spsa_rejects_non_finite_loss() {
        let cfg = SpsaConfig::default();
        assert!(matches!(
            spsa_estimate(|_| Ok(f64::NAN), &[1.0], &cfg),
            Err(QtlError::NonFinite(_))
        ));
        assert!(SpsaConfig::new(0.0, 1).is_err());
    }

    #[test]
    fn finite_diff_examples() {
        let g = finite_diff(|t| Ok(t[0] * t[0]), &[3.0], 1e-6).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
        assert!(finite_diff(|t| Ok(t[0]), &[3.0], 0.0).is_err());
        assert!(finite_diff(|_| Ok(f64::INFINITY), &[3.0], 1e-3).is_err());
    }
}
