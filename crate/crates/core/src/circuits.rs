//! Parameterized circuit templates: Pauli-Z / ZZ feature maps and the
//! RealAmplitudes / EfficientSU2 ansatz families.
//!
//! Data-map convention: a data value `phi` is realized as a phase gate
//! `P(2 * phi)`. With this choice the single-repetition Z map kernel is
//! exactly `prod_j cos^2(x_j - x'_j)`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qsim::{Gate, MAX_QUBITS};

/// Two-qubit connectivity used by entangling layers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Entanglement {
    #[default]
    None,
    Linear,
    Full,
}

impl Entanglement {
    /// Ordered `(control, target)` pairs on `n` qubits.
    pub fn pairs(self, n: usize) -> Vec<(usize, usize)> {
        match self {
            Entanglement::None => Vec::new(),
            Entanglement::Linear => (1..n).map(|i| (i - 1, i)).collect(),
            Entanglement::Full => (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .collect(),
        }
    }
}

impl std::str::FromStr for Entanglement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Entanglement::None),
            "linear" => Ok(Entanglement::Linear),
            "full" => Ok(Entanglement::Full),
            other => Err(Error::Argument(format!("unknown entanglement '{other}'"))),
        }
    }
}

/// Angle slot of a gate template.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Angle {
    Const { value: f64 },
    /// `factor * p[param]`
    Scaled { param: usize, factor: f64 },
    /// `factor * (pi - p[a]) * (pi - p[b])`
    PairProduct { a: usize, b: usize, factor: f64 },
}

impl Angle {
    fn eval(&self, p: &[f64]) -> f64 {
        match *self {
            Angle::Const { value } => value,
            Angle::Scaled { param, factor } => factor * p[param],
            Angle::PairProduct { a, b, factor } => factor * (PI - p[a]) * (PI - p[b]),
        }
    }

    fn params(&self) -> Vec<usize> {
        match *self {
            Angle::Const { .. } => vec![],
            Angle::Scaled { param, .. } => vec![param],
            Angle::PairProduct { a, b, .. } => vec![a, b],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateKind {
    H,
    Ry,
    Rz,
    P,
    Cx,
}

/// A gate whose angle may reference circuit parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateTemplate {
    pub kind: GateKind,
    pub targets: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub angle: Option<Angle>,
}

impl GateTemplate {
    fn fixed(kind: GateKind, targets: Vec<usize>) -> Self {
        GateTemplate { kind, targets, angle: None }
    }

    fn rotation(kind: GateKind, target: usize, angle: Angle) -> Self {
        GateTemplate { kind, targets: vec![target], angle: Some(angle) }
    }

    fn bind(&self, p: &[f64]) -> Gate {
        let theta = self.angle.map(|a| a.eval(p)).unwrap_or(0.0);
        let t = self.targets[0];
        match self.kind {
            GateKind::H => Gate::H { target: t },
            GateKind::Ry => Gate::Ry { target: t, theta },
            GateKind::Rz => Gate::Rz { target: t, theta },
            GateKind::P => Gate::P { target: t, theta },
            GateKind::Cx => Gate::Cx { control: t, target: self.targets[1] },
        }
    }
}

/// Immutable parameterized circuit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamCircuit {
    name: String,
    n_qubits: usize,
    gates: Vec<GateTemplate>,
    param_names: Vec<String>,
    /// Layer (repetition) index of every parameter, parallel to `param_names`.
    param_layers: Vec<usize>,
}

impl ParamCircuit {
    /// Assembles a circuit, checking targets and parameter references.
    pub fn new(
        name: impl Into<String>,
        n_qubits: usize,
        gates: Vec<GateTemplate>,
        param_names: Vec<String>,
        param_layers: Vec<usize>,
    ) -> Result<Self> {
        if !(1..=MAX_QUBITS).contains(&n_qubits) {
            return Err(Error::Capacity(format!("{n_qubits} qubits outside 1..={MAX_QUBITS}")));
        }
        if param_layers.len() != param_names.len() {
            return Err(Error::Argument("param_layers must parallel param_names".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = param_names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::Argument(format!("duplicate parameter name '{dup}'")));
        }
        for g in &gates {
            let arity = if g.kind == GateKind::Cx { 2 } else { 1 };
            if g.targets.len() != arity {
                return Err(Error::Argument(format!("{:?} needs {arity} targets", g.kind)));
            }
            if let Some(&q) = g.targets.iter().find(|&&q| q >= n_qubits) {
                return Err(Error::Index(format!("target {q} outside {n_qubits} qubits")));
            }
            if arity == 2 && g.targets[0] == g.targets[1] {
                return Err(Error::Index("control equals target".into()));
            }
            if let Some(p) = g.angle.iter().flat_map(|a| a.params()).find(|&p| p >= param_names.len()) {
                return Err(Error::Argument(format!("gate references unknown parameter {p}")));
            }
        }
        Ok(ParamCircuit { name: name.into(), n_qubits, gates, param_names, param_layers })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn gates(&self) -> &[GateTemplate] {
        &self.gates
    }

    pub fn n_params(&self) -> usize {
        self.param_names.len()
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    pub fn param_layers(&self) -> &[usize] {
        &self.param_layers
    }

    pub fn n_layers(&self) -> usize {
        self.param_layers.iter().max().map_or(0, |m| m + 1)
    }

    /// Same circuit with parameters relabelled (e.g. by feature name).
    pub fn with_param_names(mut self, names: &[String]) -> Result<Self> {
        if names.len() != self.param_names.len() {
            return Err(Error::Shape(format!(
                "{} names for {} parameters",
                names.len(),
                self.param_names.len()
            )));
        }
        self.param_names = names.to_vec();
        Self::new(self.name, self.n_qubits, self.gates, self.param_names, self.param_layers)
    }

    pub fn count(&self, kind: GateKind) -> usize {
        self.gates.iter().filter(|g| g.kind == kind).count()
    }

    /// Binds parameters by position.
    pub fn bind_positional(&self, values: &[f64]) -> Result<Vec<Gate>> {
        if values.len() != self.n_params() {
            return Err(Error::Binding(format!(
                "{} values supplied for {} parameters",
                values.len(),
                self.n_params()
            )));
        }
        Ok(self.gates.iter().map(|g| g.bind(values)).collect())
    }
}

/// Fully concrete gate list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCircuit {
    pub n_qubits: usize,
    pub gates: Vec<Gate>,
}

/// Binds parameters by name; keys must equal the circuit's parameter names.
pub fn bind(circuit: &ParamCircuit, values: &BTreeMap<String, f64>) -> Result<BoundCircuit> {
    if let Some(extra) = values.keys().find(|k| !circuit.param_names.contains(k)) {
        return Err(Error::Binding(format!("unknown parameter '{extra}'")));
    }
    let positional = circuit
        .param_names
        .iter()
        .map(|n| {
            values
                .get(n)
                .copied()
                .ok_or_else(|| Error::Binding(format!("missing parameter '{n}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundCircuit { n_qubits: circuit.n_qubits, gates: circuit.bind_positional(&positional)? })
}

fn default_names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}[{i}]")).collect()
}

/// Gate-free map that passes features through as parameters only. Encoding
/// with it yields `|0...0>`; useful when the ansatz alone should act.
pub fn build_identity_map(n_features: usize) -> Result<ParamCircuit> {
    ParamCircuit::new("NoFeatureMap", n_features, Vec::new(), default_names("x", n_features), vec![0; n_features])
}

/// First-order Pauli-Z evolution map: per repetition `H` then `P(2 x_i)` on
/// every qubit.
pub fn build_z_feature_map(n_features: usize, reps: usize) -> Result<ParamCircuit> {
    if n_features == 0 || reps == 0 {
        return Err(Error::Argument("Z feature map needs n_features >= 1 and reps >= 1".into()));
    }
    let mut gates = Vec::with_capacity(2 * n_features * reps);
    for _ in 0..reps {
        for q in 0..n_features {
            gates.push(GateTemplate::fixed(GateKind::H, vec![q]));
        }
        for q in 0..n_features {
            gates.push(GateTemplate::rotation(GateKind::P, q, Angle::Scaled { param: q, factor: 2.0 }));
        }
    }
    ParamCircuit::new("ZFeatureMap", n_features, gates, default_names("x", n_features), vec![0; n_features])
}

/// Second-order Pauli-ZZ evolution map with pair terms
/// `2 (pi - x_j)(pi - x_k)` on the layout pairs.
pub fn build_zz_feature_map(n_features: usize, reps: usize, layout: Entanglement) -> Result<ParamCircuit> {
    if n_features < 2 || reps == 0 {
        return Err(Error::Argument("ZZ feature map needs n_features >= 2 and reps >= 1".into()));
    }
    if layout == Entanglement::None {
        return Err(Error::Argument("ZZ feature map requires a linear or full layout".into()));
    }
    let pairs = layout.pairs(n_features);
    let mut gates = Vec::new();
    for _ in 0..reps {
        for q in 0..n_features {
            gates.push(GateTemplate::fixed(GateKind::H, vec![q]));
        }
        for q in 0..n_features {
            gates.push(GateTemplate::rotation(GateKind::P, q, Angle::Scaled { param: q, factor: 2.0 }));
        }
        for &(j, k) in &pairs {
            gates.push(GateTemplate::fixed(GateKind::Cx, vec![j, k]));
            gates.push(GateTemplate::rotation(
                GateKind::P,
                k,
                Angle::PairProduct { a: j, b: k, factor: 2.0 },
            ));
            gates.push(GateTemplate::fixed(GateKind::Cx, vec![j, k]));
        }
    }
    ParamCircuit::new("ZZFeatureMap", n_features, gates, default_names("x", n_features), vec![0; n_features])
}

fn rotation_layer(gates: &mut Vec<GateTemplate>, kind: GateKind, n: usize, first_param: usize) {
    for q in 0..n {
        gates.push(GateTemplate::rotation(kind, q, Angle::Scaled { param: first_param + q, factor: 1.0 }));
    }
}

fn cx_layer(gates: &mut Vec<GateTemplate>, pairs: &[(usize, usize)]) {
    for &(c, t) in pairs {
        gates.push(GateTemplate::fixed(GateKind::Cx, vec![c, t]));
    }
}

/// RY layer followed by `reps` rounds of (CX layer, RY layer).
/// Parameters are ordered layer-major, then by qubit.
pub fn build_real_amplitudes(n_qubits: usize, reps: usize, layout: Entanglement) -> Result<ParamCircuit> {
    if n_qubits == 0 {
        return Err(Error::Argument("ansatz needs at least one qubit".into()));
    }
    let pairs = layout.pairs(n_qubits);
    let mut gates = Vec::new();
    let mut layers = Vec::new();
    for layer in 0..=reps {
        if layer > 0 {
            cx_layer(&mut gates, &pairs);
        }
        rotation_layer(&mut gates, GateKind::Ry, n_qubits, layer * n_qubits);
        layers.extend(std::iter::repeat_n(layer, n_qubits));
    }
    ParamCircuit::new("RealAmplitudes", n_qubits, gates, default_names("θ", layers.len()), layers)
}

/// (RY, RZ) rotation layers alternating with CX layers. Within a layer all RY
/// parameters precede all RZ parameters.
pub fn build_efficient_su2(n_qubits: usize, reps: usize, layout: Entanglement) -> Result<ParamCircuit> {
    if n_qubits == 0 {
        return Err(Error::Argument("ansatz needs at least one qubit".into()));
    }
    let pairs = layout.pairs(n_qubits);
    let mut gates = Vec::new();
    let mut layers = Vec::new();
    for layer in 0..=reps {
        if layer > 0 {
            cx_layer(&mut gates, &pairs);
        }
        let base = 2 * n_qubits * layer;
        rotation_layer(&mut gates, GateKind::Ry, n_qubits, base);
        rotation_layer(&mut gates, GateKind::Rz, n_qubits, base + n_qubits);
        layers.extend(std::iter::repeat_n(layer, 2 * n_qubits));
    }
    ParamCircuit::new("EfficientSU2", n_qubits, gates, default_names("θ", layers.len()), layers)
}
