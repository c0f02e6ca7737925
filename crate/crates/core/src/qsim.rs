//! Dense statevector simulator.
//!
//! Amplitudes are indexed little-endian: bit `q` of a basis index is the
//! state of qubit `q`. Gates update amplitudes with strided passes over a
//! single buffer; no 2^n x 2^n operator is ever materialized.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::circuits::ParamCircuit;
use crate::error::{Error, Result};

/// Largest register the simulator accepts.
pub const MAX_QUBITS: usize = 16;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// A concrete (fully bound) gate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Gate {
    H { target: usize },
    Ry { target: usize, theta: f64 },
    Rz { target: usize, theta: f64 },
    P { target: usize, theta: f64 },
    Cx { control: usize, target: usize },
}

impl Gate {
    /// Qubits touched by the gate, control first for `Cx`.
    pub fn qubits(&self) -> Vec<usize> {
        match *self {
            Gate::H { target }
            | Gate::Ry { target, .. }
            | Gate::Rz { target, .. }
            | Gate::P { target, .. } => vec![target],
            Gate::Cx { control, target } => vec![control, target],
        }
    }

    pub fn inverse(&self) -> Gate {
        match *self {
            Gate::H { target } => Gate::H { target },
            Gate::Ry { target, theta } => Gate::Ry { target, theta: -theta },
            Gate::Rz { target, theta } => Gate::Rz { target, theta: -theta },
            Gate::P { target, theta } => Gate::P { target, theta: -theta },
            Gate::Cx { control, target } => Gate::Cx { control, target },
        }
    }

    /// 2x2 matrix of a single-qubit gate, `None` for `Cx`.
    pub fn single_qubit_matrix(&self) -> Option<[[Complex64; 2]; 2]> {
        match *self {
            Gate::H { .. } => {
                let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
                Some([[h, h], [h, -h]])
            }
            Gate::Ry { theta, .. } => {
                let (s, c) = (theta / 2.0).sin_cos();
                Some([
                    [Complex64::new(c, 0.0), Complex64::new(-s, 0.0)],
                    [Complex64::new(s, 0.0), Complex64::new(c, 0.0)],
                ])
            }
            Gate::Rz { theta, .. } => Some([
                [Complex64::from_polar(1.0, -theta / 2.0), ZERO],
                [ZERO, Complex64::from_polar(1.0, theta / 2.0)],
            ]),
            Gate::P { theta, .. } => Some([[ONE, ZERO], [ZERO, Complex64::from_polar(1.0, theta)]]),
            Gate::Cx { .. } => None,
        }
    }

    /// Full matrix on the gate's own qubits (2x2, or 4x4 with the control as
    /// the low bit for `Cx`). Used for unitarity checks.
    pub fn local_matrix(&self) -> Vec<Vec<Complex64>> {
        match self.single_qubit_matrix() {
            Some(m) => m.iter().map(|r| r.to_vec()).collect(),
            None => {
                // basis |t c>: index = c + 2t; flip t when c = 1
                let mut m = vec![vec![ZERO; 4]; 4];
                m[0][0] = ONE;
                m[2][2] = ONE;
                m[3][1] = ONE;
                m[1][3] = ONE;
                m
            }
        }
    }

    fn validate(&self, n_qubits: usize) -> Result<()> {
        let qs = self.qubits();
        if let Some(&q) = qs.iter().find(|&&q| q >= n_qubits) {
            return Err(Error::Index(format!(
                "gate {self:?} targets qubit {q} on a {n_qubits}-qubit register"
            )));
        }
        if qs.len() == 2 && qs[0] == qs[1] {
            return Err(Error::Index(format!("gate {self:?} uses qubit {} twice", qs[0])));
        }
        Ok(())
    }
}

/// Pure state of `n_qubits` qubits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    n_qubits: usize,
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Builds a state from raw amplitudes. The caller is responsible for
    /// normalization; the length must be a power of two within capacity.
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        let dim = amplitudes.len();
        if dim < 2 || !dim.is_power_of_two() {
            return Err(Error::Shape(format!("{dim} amplitudes is not 2^n for n >= 1")));
        }
        let n_qubits = dim.trailing_zeros() as usize;
        if n_qubits > MAX_QUBITS {
            return Err(Error::Capacity(format!("{n_qubits} qubits exceeds {MAX_QUBITS}")));
        }
        Ok(StateVector { n_qubits, amplitudes })
    }

    /// Computational basis state `|index>`.
    pub fn basis(n_qubits: usize, index: usize) -> Result<Self> {
        let mut s = zero_state(n_qubits)?;
        if index >= s.dim() {
            return Err(Error::Index(format!("basis index {index} out of range")));
        }
        s.amplitudes[0] = ZERO;
        s.amplitudes[index] = ONE;
        Ok(s)
    }

    /// Probability mass on basis states with an odd number of set bits.
    pub fn odd_parity_probability(&self) -> f64 {
        self.amplitudes
            .iter()
            .enumerate()
            .filter(|(i, _)| i.count_ones() % 2 == 1)
            .map(|(_, a)| a.norm_sqr())
            .sum()
    }

    /// Applies `gate` to this state in place.
    pub fn apply(&mut self, gate: &Gate) -> Result<()> {
        gate.validate(self.n_qubits)?;
        self.apply_unchecked(gate);
        Ok(())
    }

    pub(crate) fn apply_unchecked(&mut self, gate: &Gate) {
        let amps = &mut self.amplitudes;
        match *gate {
            Gate::Cx { control, target } => {
                let cmask = 1usize << control;
                let tmask = 1usize << target;
                for i in 0..amps.len() {
                    if i & cmask != 0 && i & tmask == 0 {
                        amps.swap(i, i | tmask);
                    }
                }
            }
            Gate::P { target, theta } => {
                let phase = Complex64::from_polar(1.0, theta);
                let mask = 1usize << target;
                for (i, a) in amps.iter_mut().enumerate() {
                    if i & mask != 0 {
                        *a *= phase;
                    }
                }
            }
            Gate::Rz { target, theta } => {
                let lo = Complex64::from_polar(1.0, -theta / 2.0);
                let hi = Complex64::from_polar(1.0, theta / 2.0);
                let mask = 1usize << target;
                for (i, a) in amps.iter_mut().enumerate() {
                    *a *= if i & mask != 0 { hi } else { lo };
                }
            }
            Gate::Ry { target, theta } => {
                let (s, c) = (theta / 2.0).sin_cos();
                for_each_pair(amps, target, |a0, a1| {
                    let (x0, x1) = (*a0, *a1);
                    *a0 = x0 * c - x1 * s;
                    *a1 = x0 * s + x1 * c;
                });
            }
            Gate::H { target } => {
                let h = std::f64::consts::FRAC_1_SQRT_2;
                for_each_pair(amps, target, |a0, a1| {
                    let (x0, x1) = (*a0, *a1);
                    *a0 = (x0 + x1) * h;
                    *a1 = (x0 - x1) * h;
                });
            }
        }
    }

    /// Applies a gate sequence in place.
    pub fn apply_all(&mut self, gates: &[Gate]) -> Result<()> {
        for g in gates {
            g.validate(self.n_qubits)?;
        }
        for g in gates {
            self.apply_unchecked(g);
        }
        Ok(())
    }

    /// Inner product `<self|other>`.
    pub fn inner(&self, other: &StateVector) -> Result<Complex64> {
        if self.n_qubits != other.n_qubits {
            return Err(Error::Shape(format!(
                "cannot compare {}-qubit and {}-qubit states",
                self.n_qubits, other.n_qubits
            )));
        }
        Ok(self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }
}

/// Visits every amplitude pair that differs only in bit `target`.
fn for_each_pair(amps: &mut [Complex64], target: usize, mut f: impl FnMut(&mut Complex64, &mut Complex64)) {
    let stride = 1usize << target;
    for block in amps.chunks_mut(2 * stride) {
        let (lo, hi) = block.split_at_mut(stride);
        for (a0, a1) in lo.iter_mut().zip(hi.iter_mut()) {
            f(a0, a1);
        }
    }
}

/// `|0...0>` on `n_qubits` qubits.
pub fn zero_state(n_qubits: usize) -> Result<StateVector> {
    if !(1..=MAX_QUBITS).contains(&n_qubits) {
        return Err(Error::Capacity(format!(
            "register of {n_qubits} qubits outside 1..={MAX_QUBITS}"
        )));
    }
    let mut amplitudes = vec![ZERO; 1 << n_qubits];
    amplitudes[0] = ONE;
    Ok(StateVector { n_qubits, amplitudes })
}

/// Returns `gate` applied to `state`; the input is left untouched.
pub fn apply_gate(state: &StateVector, gate: &Gate) -> Result<StateVector> {
    let mut out = state.clone();
    out.apply(gate)?;
    Ok(out)
}

/// `|<a|b>|^2`, clamped into `[0, 1]` against rounding.
pub fn state_fidelity(a: &StateVector, b: &StateVector) -> Result<f64> {
    Ok(a.inner(b)?.norm_sqr().clamp(0.0, 1.0))
}

/// Runs `circuit` from `|0...0>` with positional parameter `bindings`.
pub fn run_circuit(circuit: &ParamCircuit, bindings: &[f64]) -> Result<StateVector> {
    let mut state = zero_state(circuit.n_qubits())?;
    evolve(&mut state, circuit, bindings)?;
    Ok(state)
}

/// Applies `circuit` with positional `bindings` to an existing state.
pub fn evolve(state: &mut StateVector, circuit: &ParamCircuit, bindings: &[f64]) -> Result<()> {
    if state.n_qubits() != circuit.n_qubits() {
        return Err(Error::Shape(format!(
            "{}-qubit circuit applied to {}-qubit state",
            circuit.n_qubits(),
            state.n_qubits()
        )));
    }
    let gates = circuit.bind_positional(bindings)?;
    // targets were validated when the circuit was built
    for g in &gates {
        state.apply_unchecked(g);
    }
    Ok(())
}
