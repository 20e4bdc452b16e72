//! Reference implementations built from full 2^n x 2^n matrices, compared
//! against the local-kernel simulators.

use nalgebra::DMatrix;
use num_complex::Complex64;

use qtl::backend::{
    evolve_mixed, evolve_pure, exact_class_probs, hamming_class, interpret, random_instance, run_sampler, NoisePolicy,
    ShotConfig,
};
use qtl::circuit::{BoundGate, CircuitShape, GateKind, ParameterizedCircuit, Template};
use qtl::model::{HybridModel, ModelParams, ModelVariant, VariantKind};
use qtl::noise::{ChannelParams, DeviceCalibration};
use qtl::state::QuantumState;

type M = DMatrix<Complex64>;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn one_qubit_matrix(kind: GateKind, angle: Option<f64>) -> M {
    match kind {
        GateKind::Hadamard => {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            M::from_row_slice(2, 2, &[c(s), c(s), c(s), c(-s)])
        }
        GateKind::RotY => {
            let (s, co) = (angle.unwrap() / 2.0).sin_cos();
            M::from_row_slice(2, 2, &[c(co), c(-s), c(s), c(co)])
        }
        _ => unreachable!(),
    }
}

/// Embeds a single-qubit operator at `q` (qubit 0 is the least-significant
/// bit, so it is the rightmost Kronecker factor).
fn embed_1q(n: usize, q: usize, op: &M) -> M {
    let mut out = M::identity(1, 1);
    for k in (0..n).rev() {
        let factor = if k == q { op.clone() } else { M::identity(2, 2) };
        out = out.kronecker(&factor);
    }
    out
}

/// Permutation / phase matrix of a controlled gate, from bit logic.
fn controlled(n: usize, kind: GateKind, a: usize, b: usize) -> M {
    let dim = 1 << n;
    let mut m = M::zeros(dim, dim);
    for col in 0..dim {
        let ctrl = (col >> a) & 1 == 1;
        match kind {
            GateKind::Cnot => {
                let row = if ctrl { col ^ (1 << b) } else { col };
                m[(row, col)] = c(1.0);
            }
            GateKind::Cz => {
                let phase = if ctrl && (col >> b) & 1 == 1 { -1.0 } else { 1.0 };
                m[(col, col)] = c(phase);
            }
            _ => unreachable!(),
        }
    }
    m
}

fn full_unitary(n: usize, g: &BoundGate) -> M {
    match g.kind {
        GateKind::Cnot | GateKind::Cz => controlled(n, g.kind, g.targets[0], g.targets[1]),
        k => embed_1q(n, g.targets[0], &one_qubit_matrix(k, g.angle)),
    }
}

fn zero_state(n: usize) -> M {
    let mut v = M::zeros(1 << n, 1);
    v[(0, 0)] = c(1.0);
    v
}

#[test]
fn statevector_matches_dense_unitary_product() {
    for template in [Template::RingEntangler, Template::BrickWall] {
        for n in [2, 3, 5] {
            let circuit = ParameterizedCircuit::build(template, CircuitShape::new(n, 2).unwrap()).unwrap();
            for seed in 0..10 {
                let (angles, params) = random_instance(&circuit, seed);
                let gates = circuit.bind(&angles, &params).unwrap();
                let mut u = M::identity(1 << n, 1 << n);
                for g in &gates {
                    u = full_unitary(n, g) * u;
                }
                let want = u * zero_state(n);
                let got = evolve_pure(n, &gates).unwrap();
                for (i, a) in got.amplitudes().iter().enumerate() {
                    assert!(
                        (a - want[(i, 0)]).norm() < 1e-12,
                        "{template:?} n={n} seed={seed} index {i}"
                    );
                }
            }
        }
    }
}

fn dense_kraus(n: usize, ops: &[Vec<Complex64>], q: usize) -> Vec<M> {
    ops.iter()
        .map(|k| embed_1q(n, q, &M::from_row_slice(2, 2, k)))
        .collect()
}

fn apply_dense_channel(rho: &M, kraus: &[M]) -> M {
    kraus
        .iter()
        .fold(M::zeros(rho.nrows(), rho.ncols()), |acc, k| acc + k * rho * k.adjoint())
}

#[test]
fn noisy_evolution_matches_dense_kraus_sums() {
    // damping after every gate; two-qubit gates damp each target separately
    let n = 3;
    let params = ChannelParams {
        gamma_1q: 0.02,
        lambda_1q: 0.03,
        gamma_2q: 0.05,
        lambda_2q: 0.04,
    };
    let ad_pd = |g: f64, l: f64| -> Vec<Vec<Complex64>> {
        // AD then PD, composed by hand: K_pd,j * K_ad,i
        let ad = [
            M::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), c((1.0 - g).sqrt())]),
            M::from_row_slice(2, 2, &[c(0.0), c(g.sqrt()), c(0.0), c(0.0)]),
        ];
        let pd = [
            M::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), c((1.0 - l).sqrt())]),
            M::from_row_slice(2, 2, &[c(0.0), c(0.0), c(0.0), c(l.sqrt())]),
        ];
        let mut out = Vec::new();
        for p in &pd {
            for a in &ad {
                let k = p * a;
                out.push(k.transpose().iter().copied().collect());
            }
        }
        out
    };
    let k1 = ad_pd(params.gamma_1q, params.lambda_1q);
    let k2 = ad_pd(params.gamma_2q, params.lambda_2q);
    let circuit = ParameterizedCircuit::build(Template::RingEntangler, CircuitShape::new(n, 2).unwrap()).unwrap();
    let (angles, qp) = random_instance(&circuit, 3);
    let gates = circuit.bind(&angles, &qp).unwrap();

    let psi0 = zero_state(n);
    let mut rho = &psi0 * psi0.adjoint();
    for g in &gates {
        let u = full_unitary(n, g);
        rho = &u * rho * u.adjoint();
        if g.targets.len() == 1 {
            rho = apply_dense_channel(&rho, &dense_kraus(n, &k1, g.targets[0]));
        } else {
            for &q in &g.targets {
                rho = apply_dense_channel(&rho, &dense_kraus(n, &k2, q));
            }
        }
    }
    let got = evolve_mixed(n, &gates, &NoisePolicy::damping(params)).unwrap();
    for r in 0..(1 << n) {
        for col in 0..(1 << n) {
            assert!((got.get(r, col) - rho[(r, col)]).norm() < 1e-12);
        }
    }
}

#[test]
fn depolarizing_matches_identity_mixing() {
    // (1-p) rho + p I/2^k on the touched subsystem, via partial trace by hand
    let p1 = 0.1;
    let gates = vec![BoundGate {
        kind: GateKind::RotY,
        targets: vec![0],
        angle: Some(0.7),
        slot: None,
    }];
    let rho = evolve_mixed(1, &gates, &NoisePolicy::depolarizing(p1, 0.0)).unwrap();
    let (s, co) = (0.35f64).sin_cos();
    let pure = [[co * co, co * s], [co * s, s * s]];
    for (r, row) in pure.iter().enumerate() {
        for (col, &entry) in row.iter().enumerate() {
            let mixed = if r == col { 0.5 } else { 0.0 };
            let want = (1.0 - p1) * entry + p1 * mixed;
            assert!((rho.get(r, col).re - want).abs() < 1e-14);
        }
    }
}

#[test]
fn sampler_total_variation_shrinks_with_shots() {
    let circuit = ParameterizedCircuit::build(Template::BrickWall, CircuitShape::default()).unwrap();
    let (angles, params) = random_instance(&circuit, 8);
    let policy = NoisePolicy::depolarizing_from_calibration(&DeviceCalibration::heron_r2()).unwrap();
    let exact = exact_class_probs(&circuit, &angles, &params, 2, &policy).unwrap();
    for shots in [256u64, 4096] {
        let mut tvs = Vec::new();
        for r in 0..50 {
            let counts = run_sampler(&circuit, &angles, &params, &ShotConfig::new(shots, r).unwrap(), &policy).unwrap();
            let p = interpret(&counts, 2).unwrap();
            tvs.push(0.5 * p.iter().zip(&exact).map(|(a, b)| (a - b).abs()).sum::<f64>());
        }
        let mean_tv = tvs.iter().sum::<f64>() / tvs.len() as f64;
        assert!(
            mean_tv <= 2.0 / (shots as f64).sqrt(),
            "shots={shots} mean tv {mean_tv}"
        );
    }
}

#[test]
fn class_probabilities_from_basis_counting() {
    let circuit = ParameterizedCircuit::build(Template::BrickWall, CircuitShape::default()).unwrap();
    let (angles, params) = random_instance(&circuit, 21);
    let gates = circuit.bind(&angles, &params).unwrap();
    let probs = evolve_pure(4, &gates).unwrap().basis_probabilities();
    for classes in [2, 3] {
        let mut want = vec![0.0; classes];
        for (b, p) in probs.iter().enumerate() {
            want[(b as u32).count_ones() as usize % classes] += p;
        }
        let got = exact_class_probs(&circuit, &angles, &params, classes, &NoisePolicy::ideal()).unwrap();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(hamming_class(0b1011, classes), 3 % classes);
    }
}

#[test]
fn readout_folding_matches_bit_flip_convolution() {
    // flip each bit independently with probability e, then count classes
    let circuit = ParameterizedCircuit::build(Template::BrickWall, CircuitShape::default()).unwrap();
    let (angles, params) = random_instance(&circuit, 4);
    let gates = circuit.bind(&angles, &params).unwrap();
    let probs = evolve_pure(4, &gates).unwrap().basis_probabilities();
    let e: f64 = 0.05;
    let mut want = [0.0; 2];
    for (b, p) in probs.iter().enumerate() {
        for m in 0..16usize {
            let flips = (b ^ m).count_ones() as i32;
            let w = e.powi(flips) * (1.0 - e).powi(4 - flips);
            want[(m.count_ones() % 2) as usize] += p * w;
        }
    }
    let got = exact_class_probs(&circuit, &angles, &params, 2, &NoisePolicy::ideal().with_readout(e)).unwrap();
    for (a, b) in got.iter().zip(want) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn sampled_head_converges_to_exact_head() {
    let cal = DeviceCalibration::heron_r2();
    let exact_variant = ModelVariant::standard(VariantKind::BrickwallExact, 2, &cal).unwrap();
    let exact = HybridModel::new(exact_variant, 5, 17).unwrap();
    let mut sampled_variant = ModelVariant::standard(VariantKind::BrickwallNoisy, 2, &cal).unwrap();
    sampled_variant.noise = Some(NoisePolicy::damping(ChannelParams::zero()));
    sampled_variant.shots = Some(ShotConfig::new(1_000_000, 0).unwrap());
    let sampled = HybridModel::from_params(sampled_variant, 5, exact.params().clone()).unwrap();
    assert!(matches!(sampled.params(), ModelParams::Hybrid { .. }));
    let f = [0.3, -0.7, 1.1, 0.0, 0.4];
    let a = exact.forward(&f, 0).unwrap();
    let b = sampled.forward(&f, 99).unwrap();
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() < 1e-2, "{x} vs {y}");
    }
}
