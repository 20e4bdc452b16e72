//! The two variational circuit templates and their binding to numbers.

use std::f64::consts::FRAC_PI_2;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{QtlError, Result};
use crate::state::GateMatrix;

/// Qubit count and number of variational layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CircuitShape {
    pub n_qubits: usize,
    pub depth: usize,
}

impl CircuitShape {
    pub fn new(n_qubits: usize, depth: usize) -> Result<Self> {
        let shape = Self { n_qubits, depth };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_qubits < 2 {
            return Err(QtlError::Config(format!(
                "circuit needs at least 2 qubits, got {}",
                self.n_qubits
            )));
        }
        if self.depth < 1 {
            return Err(QtlError::Config("circuit depth must be at least 1".into()));
        }
        Ok(())
    }

    pub fn trainable_count(&self) -> usize {
        self.n_qubits * self.depth
    }
}

impl Default for CircuitShape {
    fn default() -> Self {
        Self { n_qubits: 4, depth: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateKind {
    Hadamard,
    RotY,
    Cnot,
    Cz,
}

impl GateKind {
    pub fn arity(self) -> usize {
        match self {
            GateKind::Hadamard | GateKind::RotY => 1,
            GateKind::Cnot | GateKind::Cz => 2,
        }
    }
}

/// Where a rotation gets its angle from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AngleSlot {
    Encoding(usize),
    Trainable { layer: usize, qubit: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GateOp {
    pub kind: GateKind,
    pub targets: Vec<usize>,
    pub slot: Option<AngleSlot>,
}

impl GateOp {
    fn fixed(kind: GateKind, targets: &[usize]) -> Self {
        Self {
            kind,
            targets: targets.to_vec(),
            slot: None,
        }
    }

    fn ry(qubit: usize, slot: AngleSlot) -> Self {
        Self {
            kind: GateKind::RotY,
            targets: vec![qubit],
            slot: Some(slot),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Template {
    RingEntangler,
    BrickWall,
}

impl std::str::FromStr for Template {
    type Err = QtlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ring" => Ok(Template::RingEntangler),
            "brickwall" => Ok(Template::BrickWall),
            other => Err(QtlError::Config(format!("unknown template '{other}'"))),
        }
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Template::RingEntangler => "ring",
            Template::BrickWall => "brickwall",
        })
    }
}

/// An immutable gate program with angle slots.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterizedCircuit {
    shape: CircuitShape,
    template: Template,
    ops: Vec<GateOp>,
}

/// Trainable rotation angles, `depth x n_qubits`, row-major by layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamMatrix {
    pub depth: usize,
    pub n_qubits: usize,
    pub values: Vec<f64>,
}

impl ParamMatrix {
    pub fn zeros(shape: CircuitShape) -> Self {
        Self {
            depth: shape.depth,
            n_qubits: shape.n_qubits,
            values: vec![0.0; shape.trainable_count()],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let depth = rows.len();
        let n_qubits = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_qubits) {
            return Err(QtlError::Dimension("ragged parameter rows".into()));
        }
        Ok(Self {
            depth,
            n_qubits,
            values: rows.concat(),
        })
    }

    pub fn get(&self, layer: usize, qubit: usize) -> f64 {
        self.values[layer * self.n_qubits + qubit]
    }

    pub fn get_mut(&mut self, layer: usize, qubit: usize) -> &mut f64 {
        &mut self.values[layer * self.n_qubits + qubit]
    }
}

/// A gate with every angle resolved, ready for execution.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundGate {
    pub kind: GateKind,
    pub targets: Vec<usize>,
    pub angle: Option<f64>,
    /// Slot the angle came from, kept for differentiation.
    pub slot: Option<AngleSlot>,
}

impl BoundGate {
    pub fn matrix(&self) -> GateMatrix {
        match self.kind {
            GateKind::Hadamard => GateMatrix::hadamard(),
            GateKind::RotY => GateMatrix::ry(self.angle.unwrap_or(0.0)),
            GateKind::Cnot => GateMatrix::cnot(),
            GateKind::Cz => GateMatrix::cz(),
        }
    }
}

impl fmt::Display for BoundGate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            GateKind::Hadamard => write!(f, "H")?,
            GateKind::RotY => write!(f, "RY({:.4})", self.angle.unwrap_or(0.0))?,
            GateKind::Cnot => write!(f, "CNOT")?,
            GateKind::Cz => write!(f, "CZ")?,
        }
        for t in &self.targets {
            write!(f, " q{t}")?;
        }
        Ok(())
    }
}

impl fmt::Display for GateOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.kind, self.slot) {
            (GateKind::Hadamard, _) => write!(f, "H")?,
            (GateKind::RotY, Some(AngleSlot::Encoding(i))) => write!(f, "RY(theta[{i}])")?,
            (GateKind::RotY, Some(AngleSlot::Trainable { layer, qubit })) => write!(f, "RY(phi[{layer},{qubit}])")?,
            (GateKind::RotY, None) => write!(f, "RY(?)")?,
            (GateKind::Cnot, _) => write!(f, "CNOT")?,
            (GateKind::Cz, _) => write!(f, "CZ")?,
        }
        for t in &self.targets {
            write!(f, " q{t}")?;
        }
        Ok(())
    }
}

/// One gate per line: `H q0`, `RY(1.5708) q2`, `CNOT q1 q2`.
pub fn format_program(gates: &[BoundGate]) -> String {
    let mut out = String::new();
    for g in gates {
        out.push_str(&g.to_string());
        out.push('\n');
    }
    out
}

/// Gate counts consumed by the fidelity estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateCensus {
    pub one_qubit: usize,
    pub two_qubit: usize,
    /// Number of time steps when every gate starts as early as its qubits allow.
    pub depth: usize,
}

impl ParameterizedCircuit {
    pub fn shape(&self) -> CircuitShape {
        self.shape
    }

    pub fn template(&self) -> Template {
        self.template
    }

    pub fn ops(&self) -> &[GateOp] {
        &self.ops
    }

    pub fn build(template: Template, shape: CircuitShape) -> Result<Self> {
        match template {
            Template::RingEntangler => build_ring_circuit(shape),
            Template::BrickWall => build_brickwall_circuit(shape),
        }
    }

    /// Resolves every slot. Encoding angles must lie in `[-pi/2, pi/2]`;
    /// trainable angles are unconstrained.
    pub fn bind(&self, angles: &[f64], params: &ParamMatrix) -> Result<Vec<BoundGate>> {
        let n = self.shape.n_qubits;
        if angles.len() != n {
            return Err(QtlError::Dimension(format!(
                "expected {n} encoding angles, got {}",
                angles.len()
            )));
        }
        if params.depth != self.shape.depth || params.n_qubits != n || params.values.len() != n * self.shape.depth {
            return Err(QtlError::Dimension(format!(
                "expected {}x{n} parameters, got {}x{}",
                self.shape.depth, params.depth, params.n_qubits
            )));
        }
        for (index, &value) in angles.iter().enumerate() {
            if !value.is_finite() || value.abs() > FRAC_PI_2 {
                return Err(QtlError::AngleRange { index, value });
            }
        }
        if let Some(bad) = params.values.iter().find(|v| !v.is_finite()) {
            return Err(QtlError::NonFinite(format!("trainable parameter {bad}")));
        }
        Ok(self.unchecked_bind(angles, params))
    }

    /// Binds without range or shape checks; used when stepping an encoding
    /// angle just past its bound for numerical differentiation.
    pub(crate) fn unchecked_bind(&self, angles: &[f64], params: &ParamMatrix) -> Vec<BoundGate> {
        self.ops
            .iter()
            .map(|op| BoundGate {
                kind: op.kind,
                targets: op.targets.clone(),
                angle: op.slot.map(|slot| match slot {
                    AngleSlot::Encoding(i) => angles[i],
                    AngleSlot::Trainable { layer, qubit } => params.get(layer, qubit),
                }),
                slot: op.slot,
            })
            .collect()
    }

    pub fn gate_census(&self) -> GateCensus {
        let mut one_qubit = 0;
        let mut two_qubit = 0;
        let mut frontier = vec![0usize; self.shape.n_qubits];
        for op in &self.ops {
            match op.kind.arity() {
                1 => one_qubit += 1,
                _ => two_qubit += 1,
            }
            let start = op.targets.iter().map(|&q| frontier[q]).max().unwrap_or(0);
            for &q in &op.targets {
                frontier[q] = start + 1;
            }
        }
        GateCensus {
            one_qubit,
            two_qubit,
            depth: frontier.into_iter().max().unwrap_or(0),
        }
    }

    /// CNOT pairs used by one variational layer, in application order.
    pub fn entangler_pairs(&self) -> Vec<(usize, usize)> {
        match self.template {
            Template::RingEntangler => ring_pairs(self.shape.n_qubits),
            Template::BrickWall => brick_pairs(self.shape.n_qubits),
        }
    }
}

impl fmt::Display for ParameterizedCircuit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for op in &self.ops {
            writeln!(f, "{op}")?;
        }
        Ok(())
    }
}

fn ring_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).map(|i| (i, (i + 1) % n)).collect()
}

fn brick_pairs(n: usize) -> Vec<(usize, usize)> {
    let even = (0..n.saturating_sub(1)).step_by(2).map(|i| (i, i + 1));
    let odd = (1..n.saturating_sub(1)).step_by(2).map(|i| (i, i + 1));
    even.chain(odd).collect()
}

fn push_layers(ops: &mut Vec<GateOp>, shape: CircuitShape, pairs: &[(usize, usize)]) {
    for layer in 0..shape.depth {
        for &(c, t) in pairs {
            ops.push(GateOp::fixed(GateKind::Cnot, &[c, t]));
        }
        for qubit in 0..shape.n_qubits {
            ops.push(GateOp::ry(qubit, AngleSlot::Trainable { layer, qubit }));
        }
    }
}

/// Encoding `RY` on every qubit, then per layer the CNOT ring
/// `(0,1), (1,2), ..., (n-1,0)` followed by trainable `RY` on every qubit.
pub fn build_ring_circuit(shape: CircuitShape) -> Result<ParameterizedCircuit> {
    shape.validate()?;
    let n = shape.n_qubits;
    let mut ops: Vec<GateOp> = (0..n).map(|q| GateOp::ry(q, AngleSlot::Encoding(q))).collect();
    push_layers(&mut ops, shape, &ring_pairs(n));
    Ok(ParameterizedCircuit {
        shape,
        template: Template::RingEntangler,
        ops,
    })
}

/// Hadamard on every qubit, encoding `RY`, then per layer the even CNOTs
/// `(0,1), (2,3), ...`, the odd CNOTs `(1,2), (3,4), ...` and trainable `RY`.
pub fn build_brickwall_circuit(shape: CircuitShape) -> Result<ParameterizedCircuit> {
    shape.validate()?;
    let n = shape.n_qubits;
    let mut ops: Vec<GateOp> = (0..n).map(|q| GateOp::fixed(GateKind::Hadamard, &[q])).collect();
    ops.extend((0..n).map(|q| GateOp::ry(q, AngleSlot::Encoding(q))));
    push_layers(&mut ops, shape, &brick_pairs(n));
    Ok(ParameterizedCircuit {
        shape,
        template: Template::BrickWall,
        ops,
    })
}
