//! Data model, JSON file format, and static validation for every machine kind.
//!
//! A machine file is a UTF-8 JSON document, `"format": 1`. Rationals are
//! strings `"p/q"` (`q` omitted when 1), complex numbers two-element arrays
//! `[re, im]`, transition matrices row-major nested arrays in state order,
//! superoperators arrays of `{"outcome": label?, "matrix": [[...]]}`.
//! The end-markers are the literal keys `"END_L"` and `"END_R"`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use num_traits::{One, Signed, Zero};
use serde_json::{json, Map, Value};

use crate::error::ModelError;
use crate::numerics::{Mat, Rational, TolerancePolicy};

pub const FORMAT_VERSION: u64 = 1;

/// A symbol of the extended alphabet: the input alphabet plus end-markers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ExtSym {
    EndL,
    EndR,
    Sym(char),
}

impl fmt::Display for ExtSym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtSym::EndL => write!(f, "END_L"),
            ExtSym::EndR => write!(f, "END_R"),
            ExtSym::Sym(c) => write!(f, "{c}"),
        }
    }
}

impl FromStr for ExtSym {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s {
            "END_L" => Ok(ExtSym::EndL),
            "END_R" => Ok(ExtSym::EndR),
            _ => {
                let mut chars = s.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) => Ok(ExtSym::Sym(c)),
                    _ => Err(ModelError::Parse(format!("bad transition key {s:?}"))),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StateRole {
    Continuing,
    PostAccept,
    PostReject,
    NonpostHalt,
    Accept,
    Reject,
    Restart,
}

impl StateRole {
    pub fn as_str(&self) -> &'static str {
        match self {
            StateRole::Continuing => "continuing",
            StateRole::PostAccept => "post_accept",
            StateRole::PostReject => "post_reject",
            StateRole::NonpostHalt => "nonpost_halt",
            StateRole::Accept => "accept",
            StateRole::Reject => "reject",
            StateRole::Restart => "restart",
        }
    }
}

impl FromStr for StateRole {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        Ok(match s {
            "continuing" => StateRole::Continuing,
            "post_accept" => StateRole::PostAccept,
            "post_reject" => StateRole::PostReject,
            "nonpost_halt" => StateRole::NonpostHalt,
            "accept" => StateRole::Accept,
            "reject" => StateRole::Reject,
            "restart" => StateRole::Restart,
            _ => return Err(ModelError::UnknownRole(s.to_string())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MachineKind {
    Pfap,
    Qfap,
    RestartPfa,
    RestartQfa,
    RigaPfap,
    RigaQfap,
    Dfa,
    Nfa,
    MeasuredQfa,
}

impl MachineKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MachineKind::Pfap => "pfap",
            MachineKind::Qfap => "qfap",
            MachineKind::RestartPfa => "restart_pfa",
            MachineKind::RestartQfa => "restart_qfa",
            MachineKind::RigaPfap => "riga_pfap",
            MachineKind::RigaQfap => "riga_qfap",
            MachineKind::Dfa => "dfa",
            MachineKind::Nfa => "nfa",
            MachineKind::MeasuredQfa => "measured_qfa",
        }
    }

    pub fn is_quantum(&self) -> bool {
        matches!(
            self,
            MachineKind::Qfap
                | MachineKind::RestartQfa
                | MachineKind::RigaQfap
                | MachineKind::MeasuredQfa
        )
    }

    pub fn is_probabilistic(&self) -> bool {
        !self.is_quantum()
    }

    pub fn is_riga(&self) -> bool {
        matches!(self, MachineKind::RigaPfap | MachineKind::RigaQfap)
    }

    pub fn is_postselection(&self) -> bool {
        matches!(
            self,
            MachineKind::Pfap | MachineKind::Qfap | MachineKind::RigaPfap | MachineKind::RigaQfap
        )
    }

    pub fn is_restart(&self) -> bool {
        matches!(self, MachineKind::RestartPfa | MachineKind::RestartQfa)
    }

    /// Roles a state of this machine kind may carry.
    pub fn allowed_roles(&self) -> &'static [StateRole] {
        use StateRole::*;
        match self {
            MachineKind::Pfap | MachineKind::Qfap | MachineKind::RigaPfap | MachineKind::RigaQfap => {
                &[Continuing, PostAccept, PostReject, NonpostHalt]
            }
            MachineKind::RestartPfa | MachineKind::RestartQfa => {
                &[Continuing, Accept, Reject, Restart]
            }
            MachineKind::Dfa | MachineKind::Nfa => &[Continuing, Accept],
            MachineKind::MeasuredQfa => &[Continuing],
        }
    }

    /// Roles that halt the computation mid-string (their mass is frozen).
    /// Real-time DFA/NFA and measured machines classify at the end only.
    pub fn halting_roles(&self) -> &'static [StateRole] {
        use StateRole::*;
        match self {
            MachineKind::Pfap | MachineKind::RigaPfap => &[PostAccept, PostReject, NonpostHalt],
            MachineKind::RestartPfa => &[Accept, Reject, Restart],
            _ => &[],
        }
    }
}

impl FromStr for MachineKind {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        Ok(match s {
            "pfap" => MachineKind::Pfap,
            "qfap" => MachineKind::Qfap,
            "restart_pfa" => MachineKind::RestartPfa,
            "restart_qfa" => MachineKind::RestartQfa,
            "riga_pfap" => MachineKind::RigaPfap,
            "riga_qfap" => MachineKind::RigaQfap,
            "dfa" => MachineKind::Dfa,
            "nfa" => MachineKind::Nfa,
            "measured_qfa" => MachineKind::MeasuredQfa,
            _ => return Err(ModelError::UnknownKind(s.to_string())),
        })
    }
}

/// Deterministic decision flag of the Riga model for zero-postselection inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Chi {
    A,
    R,
}

impl Chi {
    pub fn flip(&self) -> Chi {
        match self {
            Chi::A => Chi::R,
            Chi::R => Chi::A,
        }
    }
    pub fn as_str(&self) -> &'static str {
        match self {
            Chi::A => "A",
            Chi::R => "R",
        }
    }
}

/// One Kraus operator, optionally labeled with a measurement outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct KrausOp {
    pub outcome: Option<String>,
    pub matrix: Mat<Complex64>,
}

/// A collection of Kraus operators satisfying Σ E†E = I.
#[derive(Debug, Clone, PartialEq)]
pub struct Superoperator {
    pub ops: Vec<KrausOp>,
}

impl Superoperator {
    pub fn unitary(u: Mat<Complex64>) -> Self {
        Superoperator {
            ops: vec![KrausOp {
                outcome: None,
                matrix: u,
            }],
        }
    }

    pub fn dim(&self) -> usize {
        self.ops.first().map_or(0, |k| k.matrix.rows())
    }

    /// Σ E†E over all operators.
    pub fn completeness_sum(&self) -> Mat<Complex64> {
        let n = self.dim();
        let mut acc: Mat<Complex64> = Mat::zeros(n, n);
        for k in &self.ops {
            acc = acc.add(&k.matrix.dagger().matmul(&k.matrix));
        }
        acc
    }

    /// Apply the channel to a density matrix: ρ ↦ Σ E ρ E†.
    pub fn apply(&self, rho: &Mat<Complex64>) -> Mat<Complex64> {
        let n = self.dim();
        let mut acc: Mat<Complex64> = Mat::zeros(n, n);
        for k in &self.ops {
            acc = acc.add(&k.matrix.matmul(rho).matmul(&k.matrix.dagger()));
        }
        acc
    }

    /// Max deviation of the stacked-matrix Gram matrix from identity:
    /// the columns of the vertically concatenated Kraus matrices must be
    /// orthonormal.
    pub fn stacked_orthonormality_defect(&self) -> f64 {
        let n = self.dim();
        let k = self.ops.len();
        let mut stacked: Mat<Complex64> = Mat::zeros(k * n, n);
        for (b, op) in self.ops.iter().enumerate() {
            for i in 0..n {
                for j in 0..n {
                    stacked[(b * n + i, j)] = op.matrix[(i, j)];
                }
            }
        }
        let gram = stacked.dagger().matmul(&stacked);
        gram.max_abs_diff(&Mat::identity(n))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransitionBlock {
    Stochastic(Mat<Rational>),
    Quantum(Superoperator),
}

impl TransitionBlock {
    pub fn dim(&self) -> usize {
        match self {
            TransitionBlock::Stochastic(m) => m.rows(),
            TransitionBlock::Quantum(s) => s.dim(),
        }
    }

    pub fn as_stochastic(&self) -> Option<&Mat<Rational>> {
        match self {
            TransitionBlock::Stochastic(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_quantum(&self) -> Option<&Superoperator> {
        match self {
            TransitionBlock::Quantum(s) => Some(s),
            _ => None,
        }
    }
}

/// A serializable real-time automaton of any supported kind.
#[derive(Debug, Clone, PartialEq)]
pub struct MachineDescription {
    pub kind: MachineKind,
    pub alphabet: Vec<char>,
    pub states: Vec<(String, StateRole)>,
    pub initial: String,
    pub chi: Option<Chi>,
    pub outcomes: Option<Vec<String>>,
    pub transitions: BTreeMap<ExtSym, TransitionBlock>,
}

impl MachineDescription {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|(n, _)| n == name)
    }

    pub fn initial_index(&self) -> usize {
        self.state_index(&self.initial).expect("validated initial")
    }

    pub fn role(&self, i: usize) -> StateRole {
        self.states[i].1
    }

    pub fn extended_symbols(&self) -> Vec<ExtSym> {
        let mut v = vec![ExtSym::EndL];
        v.extend(self.alphabet.iter().map(|&c| ExtSym::Sym(c)));
        v.push(ExtSym::EndR);
        v
    }

    pub fn block(&self, s: ExtSym) -> &TransitionBlock {
        self.transitions.get(&s).expect("validated transitions")
    }

    /// Structural invariants: state/role vocabulary, initial state,
    /// chi/outcomes presence, dimensions, stochasticity or Kraus
    /// completeness. Violations name the offending state/symbol coordinates.
    pub fn check(&self, tol: &TolerancePolicy) -> Result<(), ModelError> {
        let violations = self.structural_violations(tol);
        if violations.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Violations(violations))
        }
    }

    fn structural_violations(&self, tol: &TolerancePolicy) -> Vec<String> {
        let mut out = Vec::new();
        let n = self.n_states();
        if n == 0 {
            out.push("machine has no states".into());
            return out;
        }
        let mut seen = std::collections::HashSet::new();
        for (name, _) in &self.states {
            if !seen.insert(name) {
                out.push(format!("duplicate state name {name:?}"));
            }
        }
        match self.state_index(&self.initial) {
            None => out.push(format!("initial state {:?} not in state list", self.initial)),
            Some(i) => {
                if (self.kind.is_postselection() || self.kind.is_restart())
                    && self.role(i) != StateRole::Continuing
                {
                    out.push(format!(
                        "initial state {:?} must have role continuing for kind {}",
                        self.initial,
                        self.kind.as_str()
                    ));
                }
            }
        }
        let allowed = self.kind.allowed_roles();
        for (name, role) in &self.states {
            if !allowed.contains(role) {
                out.push(format!(
                    "state {name:?} has role {} not allowed for kind {}",
                    role.as_str(),
                    self.kind.as_str()
                ));
            }
        }
        if self.chi.is_some() != self.kind.is_riga() {
            out.push("chi must be present exactly for Riga kinds".into());
        }
        if self.outcomes.is_some() != (self.kind == MachineKind::MeasuredQfa) {
            out.push("outcomes must be present exactly for measured_qfa".into());
        }
        let expected: std::collections::BTreeSet<ExtSym> =
            self.extended_symbols().into_iter().collect();
        let actual: std::collections::BTreeSet<ExtSym> =
            self.transitions.keys().copied().collect();
        if expected != actual {
            out.push(format!(
                "transition keys {:?} do not match END_L, END_R plus the alphabet",
                actual.iter().map(|s| s.to_string()).collect::<Vec<_>>()
            ));
            return out;
        }
        for (sym, block) in &self.transitions {
            match block {
                TransitionBlock::Stochastic(m) => {
                    if self.kind.is_quantum() {
                        out.push(format!("symbol {sym}: rational matrix in a quantum machine"));
                        continue;
                    }
                    if m.rows() != n || m.cols() != n {
                        out.push(format!(
                            "symbol {sym}: matrix is {}x{}, expected {n}x{n}",
                            m.rows(),
                            m.cols()
                        ));
                        continue;
                    }
                    self.check_stochastic_block(sym, m, &mut out);
                }
                TransitionBlock::Quantum(sop) => {
                    if self.kind.is_probabilistic() {
                        out.push(format!("symbol {sym}: superoperator in a probabilistic machine"));
                        continue;
                    }
                    let mut bad_dim = sop.ops.is_empty();
                    for op in &sop.ops {
                        if op.matrix.rows() != n || op.matrix.cols() != n {
                            bad_dim = true;
                        }
                        for z in op.matrix.row_major() {
                            if !z.re.is_finite() || !z.im.is_finite() {
                                out.push(format!("symbol {sym}: non-finite amplitude"));
                            }
                        }
                    }
                    if bad_dim {
                        out.push(format!(
                            "symbol {sym}: all Kraus matrices must be {n}x{n}"
                        ));
                        continue;
                    }
                    let defect = sop
                        .completeness_sum()
                        .max_abs_diff(&Mat::identity(n));
                    if defect > tol.eps_validate {
                        out.push(format!(
                            "symbol {sym}: Kraus completeness violated, max |Σ E†E − I| = {defect:.3e}"
                        ));
                    }
                    if self.kind == MachineKind::MeasuredQfa {
                        let labels = self.outcomes.clone().unwrap_or_default();
                        for (i, op) in sop.ops.iter().enumerate() {
                            match &op.outcome {
                                None => out.push(format!(
                                    "symbol {sym}: Kraus operator {i} has no outcome label"
                                )),
                                Some(l) if !labels.contains(l) => out.push(format!(
                                    "symbol {sym}: Kraus operator {i} labeled {l:?}, not in the outcome list"
                                )),
                                _ => {}
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn check_stochastic_block(&self, sym: &ExtSym, m: &Mat<Rational>, out: &mut Vec<String>) {
        let n = self.n_states();
        for e in m.row_major() {
            if e.is_negative() {
                out.push(format!("symbol {sym}: negative transition probability"));
                return;
            }
        }
        match self.kind {
            MachineKind::Nfa => {
                for i in 0..n {
                    for j in 0..n {
                        let e = &m[(i, j)];
                        if !e.is_zero() && !e.is_one() {
                            out.push(format!("symbol {sym}: NFA entry [{i},{j}] must be 0 or 1"));
                        }
                    }
                }
            }
            MachineKind::Dfa => {
                for j in 0..n {
                    let mut ones = 0;
                    for i in 0..n {
                        let e = &m[(i, j)];
                        if e.is_one() {
                            ones += 1;
                        } else if !e.is_zero() {
                            out.push(format!("symbol {sym}: DFA entry [{i},{j}] must be 0 or 1"));
                        }
                    }
                    if ones != 1 {
                        out.push(format!(
                            "symbol {sym}: DFA column {j} ({:?}) must contain exactly one 1",
                            self.states[j].0
                        ));
                    }
                }
            }
            _ => {
                for j in 0..n {
                    let mut sum = Rational::zero();
                    for i in 0..n {
                        sum += m[(i, j)].clone();
                    }
                    if !sum.is_one() {
                        out.push(format!(
                            "symbol {sym}: column {j} ({:?}) sums to {sum}, expected 1",
                            self.states[j].0
                        ));
                    }
                }
            }
        }
    }
}

/// Result of [`validate_wellformed`]: violations fail the machine,
/// warnings flag conditions (non-absorbing halting states) that
/// evaluation papers over by freezing.
#[derive(Debug, Clone, Default)]
pub struct WellformedReport {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl WellformedReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Verifies well-formedness. For quantum kinds, checks per symbol both
/// Σ E†E = I and the stacked-matrix orthonormality test, and confirms the
/// two agree; for probabilistic kinds, column stochasticity. Also warns
/// when transition matrices do not act as identity on halting coordinates.
pub fn validate_wellformed(m: &MachineDescription, tol: &TolerancePolicy) -> WellformedReport {
    let mut report = WellformedReport::default();
    let n = m.n_states();
    for (sym, block) in &m.transitions {
        match block {
            TransitionBlock::Stochastic(mat) => {
                if mat.rows() != n || mat.cols() != n {
                    report
                        .violations
                        .push(format!("symbol {sym}: matrix is not {n}x{n}"));
                    continue;
                }
                m.check_stochastic_block(sym, mat, &mut report.violations);
            }
            TransitionBlock::Quantum(sop) => {
                let completeness = sop.completeness_sum().max_abs_diff(&Mat::identity(n));
                let stacked = sop.stacked_orthonormality_defect();
                let sum_ok = completeness <= tol.eps_validate;
                let stacked_ok = stacked <= tol.eps_validate;
                if !sum_ok {
                    report.violations.push(format!(
                        "symbol {sym}: Σ E†E deviates from I by {completeness:.3e}"
                    ));
                }
                if !stacked_ok {
                    report.violations.push(format!(
                        "symbol {sym}: stacked Kraus columns deviate from orthonormality by {stacked:.3e}"
                    ));
                }
                if sum_ok != stacked_ok {
                    report.violations.push(format!(
                        "symbol {sym}: completeness-sum and stacked-matrix tests disagree"
                    ));
                }
            }
        }
    }
    // Halting-state absorption warning (probabilistic kinds with mid-string halting).
    let halting = m.kind.halting_roles();
    if !halting.is_empty() {
        for (sym, block) in &m.transitions {
            if let TransitionBlock::Stochastic(mat) = block {
                if mat.rows() != n {
                    continue;
                }
                for j in 0..n {
                    if !halting.contains(&m.role(j)) {
                        continue;
                    }
                    let absorbing =
                        (0..n).all(|i| if i == j { mat[(i, j)].is_one() } else { mat[(i, j)].is_zero() });
                    if !absorbing {
                        report.warnings.push(format!(
                            "symbol {sym}: halting state {:?} is not absorbing; its mass is frozen during evaluation",
                            m.states[j].0
                        ));
                    }
                }
            }
        }
    }
    report
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

pub fn format_rational(r: &Rational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

pub fn parse_rational(s: &str) -> Result<Rational, ModelError> {
    let parse_int = |t: &str| {
        t.parse::<num_bigint::BigInt>()
            .map_err(|_| ModelError::Parse(format!("bad rational {s:?}")))
    };
    match s.split_once('/') {
        None => Ok(Rational::from_integer(parse_int(s)?)),
        Some((p, q)) => {
            let den = parse_int(q)?;
            if den <= Zero::zero() {
                return Err(ModelError::Parse(format!(
                    "rational {s:?} must have a positive denominator"
                )));
            }
            Ok(Rational::new(parse_int(p)?, den))
        }
    }
}

fn rational_matrix_to_json(m: &Mat<Rational>) -> Value {
    let rows: Vec<Value> = (0..m.rows())
        .map(|i| {
            Value::Array(
                (0..m.cols())
                    .map(|j| Value::String(format_rational(&m[(i, j)])))
                    .collect(),
            )
        })
        .collect();
    Value::Array(rows)
}

fn complex_matrix_to_json(m: &Mat<Complex64>) -> Value {
    let rows: Vec<Value> = (0..m.rows())
        .map(|i| {
            Value::Array(
                (0..m.cols())
                    .map(|j| json!([m[(i, j)].re, m[(i, j)].im]))
                    .collect(),
            )
        })
        .collect();
    Value::Array(rows)
}

fn json_to_rational_matrix(v: &Value) -> Result<Mat<Rational>, ModelError> {
    let rows = v
        .as_array()
        .ok_or_else(|| ModelError::Parse("matrix must be an array of rows".into()))?;
    let mut data = Vec::with_capacity(rows.len());
    for row in rows {
        let cells = row
            .as_array()
            .ok_or_else(|| ModelError::Parse("matrix row must be an array".into()))?;
        let mut r = Vec::with_capacity(cells.len());
        for cell in cells {
            let s = cell
                .as_str()
                .ok_or_else(|| ModelError::Parse(format!("rational entry must be a string, got {cell}")))?;
            r.push(parse_rational(s)?);
        }
        data.push(r);
    }
    Mat::from_rows(data).map_err(|e| ModelError::Parse(e.to_string()))
}

fn json_to_complex_matrix(v: &Value) -> Result<Mat<Complex64>, ModelError> {
    let rows = v
        .as_array()
        .ok_or_else(|| ModelError::Parse("matrix must be an array of rows".into()))?;
    let mut data = Vec::with_capacity(rows.len());
    for row in rows {
        let cells = row
            .as_array()
            .ok_or_else(|| ModelError::Parse("matrix row must be an array".into()))?;
        let mut r = Vec::with_capacity(cells.len());
        for cell in cells {
            let pair = cell
                .as_array()
                .filter(|a| a.len() == 2)
                .ok_or_else(|| ModelError::Parse(format!("complex entry must be [re, im], got {cell}")))?;
            let re = pair[0]
                .as_f64()
                .ok_or_else(|| ModelError::Parse("complex part must be a number".into()))?;
            let im = pair[1]
                .as_f64()
                .ok_or_else(|| ModelError::Parse("complex part must be a number".into()))?;
            r.push(Complex64::new(re, im));
        }
        data.push(r);
    }
    Mat::from_rows(data).map_err(|e| ModelError::Parse(e.to_string()))
}

/// Canonical serialization. `load(save(m))` structurally equals `m`, and
/// the key order is deterministic, so output is byte-identical across runs.
pub fn save(m: &MachineDescription) -> String {
    let mut root = Map::new();
    root.insert("format".into(), json!(FORMAT_VERSION));
    root.insert("kind".into(), json!(m.kind.as_str()));
    root.insert(
        "alphabet".into(),
        Value::Array(m.alphabet.iter().map(|c| json!(c.to_string())).collect()),
    );
    root.insert(
        "states".into(),
        Value::Array(
            m.states
                .iter()
                .map(|(name, role)| {
                    let mut s = Map::new();
                    s.insert("name".into(), json!(name));
                    s.insert("role".into(), json!(role.as_str()));
                    Value::Object(s)
                })
                .collect(),
        ),
    );
    root.insert("initial".into(), json!(m.initial));
    if let Some(chi) = m.chi {
        root.insert("chi".into(), json!(chi.as_str()));
    }
    if let Some(outcomes) = &m.outcomes {
        root.insert("outcomes".into(), json!(outcomes));
    }
    let mut trans = Map::new();
    for sym in m.extended_symbols() {
        let block = m.block(sym);
        let v = match block {
            TransitionBlock::Stochastic(mat) => rational_matrix_to_json(mat),
            TransitionBlock::Quantum(sop) => Value::Array(
                sop.ops
                    .iter()
                    .map(|op| {
                        let mut o = Map::new();
                        if let Some(l) = &op.outcome {
                            o.insert("outcome".into(), json!(l));
                        }
                        o.insert("matrix".into(), complex_matrix_to_json(&op.matrix));
                        Value::Object(o)
                    })
                    .collect(),
            ),
        };
        trans.insert(sym.to_string(), v);
    }
    root.insert("transitions".into(), Value::Object(trans));
    serde_json::to_string_pretty(&Value::Object(root)).expect("serialization cannot fail")
}

/// Parse a machine file and check every structural invariant.
pub fn load(text: &str) -> Result<MachineDescription, ModelError> {
    load_with_tolerance(text, &TolerancePolicy::default())
}

pub fn load_with_tolerance(
    text: &str,
    tol: &TolerancePolicy,
) -> Result<MachineDescription, ModelError> {
    let root: Value =
        serde_json::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
    let obj = root
        .as_object()
        .ok_or_else(|| ModelError::Parse("machine file must be a JSON object".into()))?;
    let format = obj
        .get("format")
        .and_then(Value::as_u64)
        .ok_or_else(|| ModelError::Parse("missing format field".into()))?;
    if format != FORMAT_VERSION {
        return Err(ModelError::Parse(format!(
            "unsupported format version {format}"
        )));
    }
    let kind: MachineKind = obj
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| ModelError::Parse("missing kind field".into()))?
        .parse()?;
    let alphabet = obj
        .get("alphabet")
        .and_then(Value::as_array)
        .ok_or_else(|| ModelError::Parse("missing alphabet field".into()))?
        .iter()
        .map(|v| {
            let s = v
                .as_str()
                .ok_or_else(|| ModelError::Parse("alphabet entries must be strings".into()))?;
            let mut it = s.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => Ok(c),
                _ => Err(ModelError::Parse(format!(
                    "alphabet symbol {s:?} must be a single character"
                ))),
            }
        })
        .collect::<Result<Vec<char>, _>>()?;
    let states = obj
        .get("states")
        .and_then(Value::as_array)
        .ok_or_else(|| ModelError::Parse("missing states field".into()))?
        .iter()
        .map(|v| {
            let s = v
                .as_object()
                .ok_or_else(|| ModelError::Parse("state entries must be objects".into()))?;
            let name = s
                .get("name")
                .and_then(Value::as_str)
                .ok_or_else(|| ModelError::Parse("state missing name".into()))?
                .to_string();
            let role: StateRole = s
                .get("role")
                .and_then(Value::as_str)
                .ok_or_else(|| ModelError::Parse(format!("state {name:?} missing role")))?
                .parse()?;
            Ok((name, role))
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    let initial = obj
        .get("initial")
        .and_then(Value::as_str)
        .ok_or_else(|| ModelError::Parse("missing initial field".into()))?
        .to_string();
    let chi = match obj.get("chi").and_then(Value::as_str) {
        None => None,
        Some("A") => Some(Chi::A),
        Some("R") => Some(Chi::R),
        Some(other) => return Err(ModelError::Parse(format!("chi must be A or R, got {other:?}"))),
    };
    let outcomes = obj.get("outcomes").map(|v| {
        v.as_array()
            .map(|a| {
                a.iter()
                    .map(|x| x.as_str().map(str::to_string))
                    .collect::<Option<Vec<_>>>()
            })
            .flatten()
            .ok_or_else(|| ModelError::Parse("outcomes must be an array of strings".into()))
    });
    let outcomes = match outcomes {
        None => None,
        Some(r) => Some(r?),
    };
    let trans_obj = obj
        .get("transitions")
        .and_then(Value::as_object)
        .ok_or_else(|| ModelError::Parse("missing transitions field".into()))?;
    let mut transitions = BTreeMap::new();
    for (key, v) in trans_obj {
        let sym: ExtSym = key.parse()?;
        let block = if kind.is_probabilistic() {
            TransitionBlock::Stochastic(json_to_rational_matrix(v)?)
        } else {
            let ops = v
                .as_array()
                .ok_or_else(|| ModelError::Parse(format!("symbol {key}: superoperator must be an array")))?
                .iter()
                .map(|op| {
                    let o = op.as_object().ok_or_else(|| {
                        ModelError::Parse(format!("symbol {key}: Kraus entries must be objects"))
                    })?;
                    let outcome = o.get("outcome").and_then(Value::as_str).map(str::to_string);
                    let matrix = json_to_complex_matrix(o.get("matrix").ok_or_else(|| {
                        ModelError::Parse(format!("symbol {key}: Kraus entry missing matrix"))
                    })?)?;
                    Ok(KrausOp { outcome, matrix })
                })
                .collect::<Result<Vec<_>, ModelError>>()?;
            TransitionBlock::Quantum(Superoperator { ops })
        };
        transitions.insert(sym, block);
    }
    let m = MachineDescription {
        kind,
        alphabet,
        states,
        initial,
        chi,
        outcomes,
        transitions,
    };
    m.check(tol)?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rat;

    fn toy_pfap() -> MachineDescription {
        let a = Mat::from_rows(vec![
            vec![rat(1, 2), rat(0, 1), rat(0, 1)],
            vec![rat(1, 2), rat(1, 1), rat(0, 1)],
            vec![rat(0, 1), rat(0, 1), rat(1, 1)],
        ])
        .unwrap();
        let endr = Mat::from_rows(vec![
            vec![rat(0, 1), rat(0, 1), rat(0, 1)],
            vec![rat(0, 1), rat(1, 1), rat(0, 1)],
            vec![rat(1, 1), rat(0, 1), rat(1, 1)],
        ])
        .unwrap();
        let mut transitions = BTreeMap::new();
        transitions.insert(ExtSym::EndL, TransitionBlock::Stochastic(Mat::identity(3)));
        transitions.insert(ExtSym::Sym('a'), TransitionBlock::Stochastic(a));
        transitions.insert(ExtSym::EndR, TransitionBlock::Stochastic(endr));
        MachineDescription {
            kind: MachineKind::Pfap,
            alphabet: vec!['a'],
            states: vec![
                ("q0".into(), StateRole::Continuing),
                ("nh".into(), StateRole::NonpostHalt),
                ("pa".into(), StateRole::PostAccept),
            ],
            initial: "q0".into(),
            chi: None,
            outcomes: None,
            transitions,
        }
    }

    #[test]
    fn roundtrip_structural_identity() {
        let m = toy_pfap();
        let text = save(&m);
        let back = load(&text).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn save_is_deterministic() {
        let m = toy_pfap();
        assert_eq!(save(&m), save(&m));
    }

    #[test]
    fn rationals_serialized_in_lowest_terms() {
        assert_eq!(format_rational(&rat(18, 34)), "9/17");
        assert_eq!(format_rational(&rat(4, 2)), "2");
        assert_eq!(parse_rational("9/17").unwrap(), rat(9, 17));
        assert!(parse_rational("1/0").is_err());
    }

    #[test]
    fn bad_column_sum_names_the_column() {
        let mut m = toy_pfap();
        if let Some(TransitionBlock::Stochastic(mat)) = m.transitions.get_mut(&ExtSym::Sym('a')) {
            mat[(0, 0)] = rat(9, 16); // column 0 now sums to 17/16
        }
        let err = m.check(&TolerancePolicy::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("column 0"), "message was: {msg}");
        assert!(msg.contains("17/16"), "message was: {msg}");
    }

    #[test]
    fn quantum_completeness_violation_detected() {
        use num_complex::Complex64;
        let e = Mat::from_rows(vec![
            vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)],
            vec![Complex64::new(0.0, 0.0), Complex64::new(0.5f64.sqrt(), 0.0)],
        ])
        .unwrap();
        let sop = Superoperator {
            ops: vec![KrausOp { outcome: None, matrix: e }],
        };
        let mut transitions = BTreeMap::new();
        transitions.insert(ExtSym::EndL, TransitionBlock::Quantum(sop.clone()));
        transitions.insert(ExtSym::Sym('a'), TransitionBlock::Quantum(Superoperator::unitary(Mat::identity(2))));
        transitions.insert(ExtSym::EndR, TransitionBlock::Quantum(Superoperator::unitary(Mat::identity(2))));
        let m = MachineDescription {
            kind: MachineKind::Qfap,
            alphabet: vec!['a'],
            states: vec![
                ("q0".into(), StateRole::Continuing),
                ("pa".into(), StateRole::PostAccept),
            ],
            initial: "q0".into(),
            chi: None,
            outcomes: None,
            transitions,
        };
        let err = m.check(&TolerancePolicy::default()).unwrap_err();
        assert!(err.to_string().contains("completeness"));
    }

    #[test]
    fn wellformed_direct_sum_kraus_pair() {
        use num_complex::Complex64;
        let h = 0.5f64.sqrt();
        let e1 = Mat::from_rows(vec![
            vec![Complex64::new(h, 0.0), Complex64::new(0.0, 0.0)],
            vec![Complex64::new(0.0, 0.0), Complex64::new(h, 0.0)],
        ])
        .unwrap();
        let e2 = Mat::from_rows(vec![
            vec![Complex64::new(h, 0.0), Complex64::new(0.0, 0.0)],
            vec![Complex64::new(0.0, 0.0), Complex64::new(-h, 0.0)],
        ])
        .unwrap();
        let sop = Superoperator {
            ops: vec![
                KrausOp { outcome: None, matrix: e1 },
                KrausOp { outcome: None, matrix: e2 },
            ],
        };
        assert!(sop.completeness_sum().max_abs_diff(&Mat::identity(2)) < 1e-15);
        assert!(sop.stacked_orthonormality_defect() < 1e-15);
    }
}
