//! Machine-to-machine constructions: restart ↔ postselection conversion,
//! complement, union/intersection, error amplification by tensor powers,
//! Riga-to-standard conversion, error-free machines from cutpoint-zero
//! pairs, conversion to standard (unbounded-error) machines, first-symbol
//! dispatch, and measured-machine state partitioning.
//!
//! Product constructions exist in two forms: materialized (explicit
//! matrices, refused above a state cap) and virtual ([`Composite`] trees
//! evaluated by probability algebra). The materialized path exists to
//! validate the algebra on small instances; amplified machines are far too
//! large to materialize.

use std::collections::BTreeMap;

use num_complex::Complex64;
use num_traits::{One, Zero};
use serde_json::{json, Map, Value};

use crate::error::{EvalError, ModelError, TransformError};
use crate::machine::{
    self, Chi, ExtSym, KrausOp, MachineDescription, MachineKind, StateRole, Superoperator,
    TransitionBlock,
};
use crate::numerics::{tensor_product, Mat, Rational};
use crate::semantics::{self, ApproxOutcome, ExactOutcome, Outcome, Prob};

pub const DEFAULT_STATE_CAP: usize = 20_000;

/// How many copies of a machine are needed to push its error bound down
/// to (at most) its square.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplificationPlan {
    pub eps_in: Rational,
    pub k: u32,
    pub eps_out_bound: Rational,
}

/// A transformation tree evaluated without materializing product state
/// spaces.
#[derive(Debug, Clone, PartialEq)]
pub enum Composite {
    Machine(Box<MachineDescription>),
    TensorPower { k: u32, factor: Box<Composite> },
    Union(Box<Composite>, Box<Composite>),
    Intersection(Box<Composite>, Box<Composite>),
    Complement(Box<Composite>),
    PrefixDispatch {
        routing: BTreeMap<char, usize>,
        short: ShortAnswers,
        factors: [Box<Composite>; 2],
    },
}

/// Hardwired decisions for inputs shorter than two symbols, which a
/// dispatch machine cannot route.
#[derive(Debug, Clone, PartialEq)]
pub struct ShortAnswers {
    pub empty_accepts: bool,
    pub single: BTreeMap<char, bool>,
}

// ---------------------------------------------------------------------------
// Role remaps: restart ↔ postselection, complement
// ---------------------------------------------------------------------------

/// Reinterpret a postselection machine as a restart machine: identical
/// transition data, with nonpostselection halting states designated as
/// restart states.
pub fn to_restart(m: &MachineDescription) -> Result<MachineDescription, TransformError> {
    let kind = match m.kind {
        MachineKind::Pfap => MachineKind::RestartPfa,
        MachineKind::Qfap => MachineKind::RestartQfa,
        other => return Err(TransformError::KindMismatch(other.as_str().into())),
    };
    let mut out = m.clone();
    out.kind = kind;
    for (_, role) in &mut out.states {
        *role = match *role {
            StateRole::PostAccept => StateRole::Accept,
            StateRole::PostReject => StateRole::Reject,
            StateRole::NonpostHalt => StateRole::Restart,
            other => other,
        };
    }
    Ok(out)
}

/// Inverse of [`to_restart`]: restart states become nonpostselection
/// halting states.
pub fn to_postselection(m: &MachineDescription) -> Result<MachineDescription, TransformError> {
    let kind = match m.kind {
        MachineKind::RestartPfa => MachineKind::Pfap,
        MachineKind::RestartQfa => MachineKind::Qfap,
        other => return Err(TransformError::KindMismatch(other.as_str().into())),
    };
    let mut out = m.clone();
    out.kind = kind;
    for (_, role) in &mut out.states {
        *role = match *role {
            StateRole::Accept => StateRole::PostAccept,
            StateRole::Reject => StateRole::PostReject,
            StateRole::Restart => StateRole::NonpostHalt,
            other => other,
        };
    }
    Ok(out)
}

/// Swap the postselection accept and reject designations; for Riga
/// machines also flip χ.
pub fn complement(m: &MachineDescription) -> Result<MachineDescription, TransformError> {
    if !m.kind.is_postselection() {
        return Err(TransformError::KindMismatch(m.kind.as_str().into()));
    }
    let mut out = m.clone();
    for (_, role) in &mut out.states {
        *role = match *role {
            StateRole::PostAccept => StateRole::PostReject,
            StateRole::PostReject => StateRole::PostAccept,
            other => other,
        };
    }
    out.chi = out.chi.map(|c| c.flip());
    Ok(out)
}

// ---------------------------------------------------------------------------
// Freezing materialization
// ---------------------------------------------------------------------------

/// Rewrite every transition matrix to act as identity on halting-role
/// states. Evaluation semantics are unchanged (frozen mass never moves
/// anyway), but the rewritten matrices stay correct when composed or
/// tensored, where the evaluator's per-machine freezing no longer sees the
/// factor boundaries.
pub fn freeze_halting(m: &MachineDescription) -> MachineDescription {
    let halting = m.kind.halting_roles();
    if halting.is_empty() {
        return m.clone();
    }
    let n = m.n_states();
    let frozen: Vec<bool> = (0..n).map(|i| halting.contains(&m.role(i))).collect();
    let mut out = m.clone();
    for block in out.transitions.values_mut() {
        if let TransitionBlock::Stochastic(mat) = block {
            for (j, is_frozen) in frozen.iter().enumerate() {
                if *is_frozen {
                    for i in 0..n {
                        mat[(i, j)] = if i == j {
                            Rational::one()
                        } else {
                            Rational::zero()
                        };
                    }
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Tensor products: powers, union, intersection
// ---------------------------------------------------------------------------

fn require_product_kind(m: &MachineDescription) -> Result<(), TransformError> {
    match m.kind {
        MachineKind::Pfap | MachineKind::Qfap => Ok(()),
        other => Err(TransformError::KindMismatch(other.as_str().into())),
    }
}

fn check_cap(states: usize, cap: usize) -> Result<(), TransformError> {
    if states > cap {
        Err(TransformError::MaterializationCap(states, cap))
    } else {
        Ok(())
    }
}

fn is_post(role: StateRole) -> bool {
    matches!(role, StateRole::PostAccept | StateRole::PostReject)
}

fn is_halted(role: StateRole) -> bool {
    role != StateRole::Continuing
}

fn tensor_pair(
    m1: &MachineDescription,
    m2: &MachineDescription,
    role_of: impl Fn(StateRole, StateRole) -> StateRole,
    cap: usize,
) -> Result<MachineDescription, TransformError> {
    require_product_kind(m1)?;
    require_product_kind(m2)?;
    if m1.kind != m2.kind {
        return Err(TransformError::KindMismatch(format!(
            "{} vs {}",
            m1.kind.as_str(),
            m2.kind.as_str()
        )));
    }
    if m1.alphabet != m2.alphabet {
        return Err(TransformError::AlphabetMismatch);
    }
    let (n1, n2) = (m1.n_states(), m2.n_states());
    let n = n1
        .checked_mul(n2)
        .ok_or(TransformError::MaterializationCap(usize::MAX, cap))?;
    check_cap(n, cap)?;
    let f1 = freeze_halting(m1);
    let f2 = freeze_halting(m2);
    let mut states = Vec::with_capacity(n);
    for i1 in 0..n1 {
        for i2 in 0..n2 {
            states.push((
                format!("{}|{}", m1.states[i1].0, m2.states[i2].0),
                role_of(m1.role(i1), m2.role(i2)),
            ));
        }
    }
    let initial = states[m1.initial_index() * n2 + m2.initial_index()].0.clone();
    let mut transitions = BTreeMap::new();
    for sym in m1.extended_symbols() {
        let block = match (f1.block(sym), f2.block(sym)) {
            (TransitionBlock::Stochastic(a), TransitionBlock::Stochastic(b)) => {
                TransitionBlock::Stochastic(tensor_product(a, b))
            }
            (TransitionBlock::Quantum(a), TransitionBlock::Quantum(b)) => {
                let mut ops = Vec::with_capacity(a.ops.len() * b.ops.len());
                for ka in &a.ops {
                    for kb in &b.ops {
                        ops.push(KrausOp {
                            outcome: None,
                            matrix: tensor_product(&ka.matrix, &kb.matrix),
                        });
                    }
                }
                TransitionBlock::Quantum(Superoperator { ops })
            }
            _ => return Err(TransformError::KindMismatch(m1.kind.as_str().into())),
        };
        transitions.insert(sym, block);
    }
    Ok(MachineDescription {
        kind: m1.kind,
        alphabet: m1.alphabet.clone(),
        states,
        initial,
        chi: None,
        outcomes: None,
        transitions,
    })
}

fn power_role(r1: StateRole, r2: StateRole) -> StateRole {
    match (r1, r2) {
        (StateRole::PostAccept, StateRole::PostAccept) => StateRole::PostAccept,
        (StateRole::PostReject, StateRole::PostReject) => StateRole::PostReject,
        (a, b) if is_halted(a) && is_halted(b) => StateRole::NonpostHalt,
        _ => StateRole::Continuing,
    }
}

fn union_role(r1: StateRole, r2: StateRole) -> StateRole {
    match (r1, r2) {
        (StateRole::PostReject, StateRole::PostReject) => StateRole::PostReject,
        (a, b) if is_post(a) && is_post(b) => StateRole::PostAccept,
        (a, b) if is_halted(a) && is_halted(b) => StateRole::NonpostHalt,
        _ => StateRole::Continuing,
    }
}

fn intersection_role(r1: StateRole, r2: StateRole) -> StateRole {
    match (r1, r2) {
        (StateRole::PostAccept, StateRole::PostAccept) => StateRole::PostAccept,
        (a, b) if is_post(a) && is_post(b) => StateRole::PostReject,
        (a, b) if is_halted(a) && is_halted(b) => StateRole::NonpostHalt,
        _ => StateRole::Continuing,
    }
}

/// Materialized k-fold tensor power with accept set ⊗Q_pa and reject set
/// ⊗Q_pr.
pub fn tensor_power(
    m: &MachineDescription,
    k: u32,
    cap: usize,
) -> Result<MachineDescription, TransformError> {
    if k == 0 {
        return Err(TransformError::KindMismatch("tensor power requires k >= 1".into()));
    }
    require_product_kind(m)?;
    // Refuse up front on the final size, not the first intermediate
    // product that happens to cross the cap.
    let total = m
        .n_states()
        .checked_pow(k)
        .ok_or(TransformError::MaterializationCap(usize::MAX, cap))?;
    check_cap(total, cap)?;
    let mut acc = m.clone();
    for _ in 1..k {
        acc = tensor_pair(&acc, m, power_role, cap)?;
    }
    Ok(acc)
}

/// Materialized union: accept set Q_p1 ⊗ Q_p2 ∖ Q_pr1 ⊗ Q_pr2.
pub fn union(
    m1: &MachineDescription,
    m2: &MachineDescription,
    cap: usize,
) -> Result<MachineDescription, TransformError> {
    tensor_pair(m1, m2, union_role, cap)
}

/// Materialized intersection: accept set Q_pa1 ⊗ Q_pa2.
pub fn intersect(
    m1: &MachineDescription,
    m2: &MachineDescription,
    cap: usize,
) -> Result<MachineDescription, TransformError> {
    tensor_pair(m1, m2, intersection_role, cap)
}

// ---------------------------------------------------------------------------
// Error amplification
// ---------------------------------------------------------------------------

fn check_eps(eps: &Rational) -> Result<(), TransformError> {
    let half = Rational::new(1.into(), 2.into());
    if eps <= &Rational::zero() || eps >= &half {
        Err(TransformError::EpsOutOfRange)
    } else {
        Ok(())
    }
}

/// Smallest number of copies k such that a machine with error bound ε,
/// raised to the k-th tensor power, has error bound at most ε²:
/// k = 1 + min{ j ≥ 1 : (1/ε − 1)^j ≥ 1/ε + 1 }.
pub fn amplification_plan(eps_in: &Rational) -> Result<AmplificationPlan, TransformError> {
    check_eps(eps_in)?;
    let base = (Rational::one() - eps_in) / eps_in; // 1/ε − 1, > 1
    let target = (Rational::one() + eps_in) / eps_in; // 1/ε + 1
    let mut j = 1u32;
    let mut pow = base.clone();
    while pow < target {
        pow *= &base;
        j += 1;
    }
    let k = j + 1;
    let eps_out_bound = eps_in * eps_in;
    debug_assert!({
        let r_in = eps_in / (Rational::one() - eps_in);
        let r_out = &eps_out_bound / (Rational::one() - &eps_out_bound);
        let mut p = Rational::one();
        for _ in 0..k {
            p *= &r_in;
        }
        p <= r_out
    });
    Ok(AmplificationPlan {
        eps_in: eps_in.clone(),
        k,
        eps_out_bound,
    })
}

/// Amplify a postselection machine recognizing its language with error
/// bound `eps_in` into a virtual tensor power with error bound ≤ eps_in².
pub fn amplify(
    m: &MachineDescription,
    eps_in: &Rational,
) -> Result<(AmplificationPlan, Composite), TransformError> {
    require_product_kind(m)?;
    let plan = amplification_plan(eps_in)?;
    let composite = Composite::TensorPower {
        k: plan.k,
        factor: Box::new(Composite::Machine(Box::new(m.clone()))),
    };
    Ok((plan, composite))
}

// ---------------------------------------------------------------------------
// Virtual evaluation
// ---------------------------------------------------------------------------

impl Composite {
    pub fn alphabet(&self) -> Vec<char> {
        match self {
            Composite::Machine(m) => m.alphabet.clone(),
            Composite::TensorPower { factor, .. } | Composite::Complement(factor) => {
                factor.alphabet()
            }
            Composite::Union(a, _) | Composite::Intersection(a, _) => a.alphabet(),
            Composite::PrefixDispatch { factors, .. } => factors[0].alphabet(),
        }
    }

    fn leaves_probabilistic(&self) -> Option<bool> {
        match self {
            Composite::Machine(m) => Some(m.kind.is_probabilistic()),
            Composite::TensorPower { factor, .. } | Composite::Complement(factor) => {
                factor.leaves_probabilistic()
            }
            Composite::Union(a, b) | Composite::Intersection(a, b) => {
                match (a.leaves_probabilistic(), b.leaves_probabilistic()) {
                    (Some(x), Some(y)) if x == y => Some(x),
                    _ => None,
                }
            }
            Composite::PrefixDispatch { factors, .. } => {
                match (
                    factors[0].leaves_probabilistic(),
                    factors[1].leaves_probabilistic(),
                ) {
                    (Some(x), Some(y)) if x == y => Some(x),
                    _ => None,
                }
            }
        }
    }
}

fn pow_p<P: Prob>(x: &P, k: u32) -> P {
    let mut acc = P::one();
    for _ in 0..k {
        acc = acc * x.clone();
    }
    acc
}

fn eval_composite_generic<P: Prob>(
    c: &Composite,
    w: &str,
    leaf: &dyn Fn(&MachineDescription, &str) -> Result<Outcome<P>, EvalError>,
) -> Result<Outcome<P>, TransformError> {
    let out = match c {
        Composite::Machine(m) => leaf(m, w)?,
        Composite::TensorPower { k, factor } => {
            let o = eval_composite_generic(factor, w, leaf)?;
            let p_a = pow_p(&o.p_a, *k);
            let p_r = pow_p(&o.p_r, *k);
            let p_nh = P::one() - p_a.clone() - p_r.clone();
            Outcome {
                p_a,
                p_r,
                p_nh,
                p_cont: P::zero(),
            }
        }
        Composite::Union(a, b) => {
            let oa = eval_composite_generic(a, w, leaf)?;
            let ob = eval_composite_generic(b, w, leaf)?;
            let pp = oa.postselection_mass() * ob.postselection_mass();
            let p_r = oa.p_r * ob.p_r;
            let p_a = pp.clone() - p_r.clone();
            Outcome {
                p_a,
                p_r,
                p_nh: P::one() - pp,
                p_cont: P::zero(),
            }
        }
        Composite::Intersection(a, b) => {
            let oa = eval_composite_generic(a, w, leaf)?;
            let ob = eval_composite_generic(b, w, leaf)?;
            let pp = oa.postselection_mass() * ob.postselection_mass();
            let p_a = oa.p_a * ob.p_a;
            let p_r = pp.clone() - p_a.clone();
            Outcome {
                p_a,
                p_r,
                p_nh: P::one() - pp,
                p_cont: P::zero(),
            }
        }
        Composite::Complement(inner) => {
            let o = eval_composite_generic(inner, w, leaf)?;
            Outcome {
                p_a: o.p_r,
                p_r: o.p_a,
                p_nh: o.p_nh,
                p_cont: o.p_cont,
            }
        }
        Composite::PrefixDispatch {
            routing,
            short,
            factors,
        } => {
            let mut chars = w.chars();
            match (chars.next(), chars.clone().next()) {
                (None, _) => decided(short.empty_accepts),
                (Some(c), None) => {
                    let accepts = short
                        .single
                        .get(&c)
                        .copied()
                        .ok_or(TransformError::RoutingIncomplete(c))?;
                    decided(accepts)
                }
                (Some(c), Some(_)) => {
                    let which = *routing
                        .get(&c)
                        .ok_or(TransformError::RoutingIncomplete(c))?;
                    let rest: String = chars.collect();
                    eval_composite_generic(&factors[which.min(1)], &rest, leaf)?
                }
            }
        }
    };
    Ok(out)
}

fn decided<P: Prob>(accepts: bool) -> Outcome<P> {
    if accepts {
        Outcome {
            p_a: P::one(),
            p_r: P::zero(),
            p_nh: P::zero(),
            p_cont: P::zero(),
        }
    } else {
        Outcome {
            p_a: P::zero(),
            p_r: P::one(),
            p_nh: P::zero(),
            p_cont: P::zero(),
        }
    }
}

/// Virtual evaluation with exact arithmetic; every leaf must be
/// probabilistic.
pub fn eval_composite_exact(c: &Composite, w: &str) -> Result<ExactOutcome, TransformError> {
    if c.leaves_probabilistic() != Some(true) {
        return Err(TransformError::MixedScalarKinds);
    }
    eval_composite_generic(c, w, &semantics::evaluate_pfap)
}

/// Virtual evaluation in floating point; every leaf must be quantum.
pub fn eval_composite_approx(c: &Composite, w: &str) -> Result<ApproxOutcome, TransformError> {
    if c.leaves_probabilistic() != Some(false) {
        return Err(TransformError::MixedScalarKinds);
    }
    eval_composite_generic(c, w, &semantics::evaluate_qfap)
}

/// Materialize a composite tree into a single explicit machine.
pub fn materialize(c: &Composite, cap: usize) -> Result<MachineDescription, TransformError> {
    match c {
        Composite::Machine(m) => Ok((**m).clone()),
        Composite::TensorPower { k, factor } => tensor_power(&materialize(factor, cap)?, *k, cap),
        Composite::Union(a, b) => union(&materialize(a, cap)?, &materialize(b, cap)?, cap),
        Composite::Intersection(a, b) => {
            intersect(&materialize(a, cap)?, &materialize(b, cap)?, cap)
        }
        Composite::Complement(inner) => complement(&materialize(inner, cap)?),
        Composite::PrefixDispatch {
            routing,
            short,
            factors,
        } => prefix_dispatch(
            &materialize(&factors[0], cap)?,
            &materialize(&factors[1], cap)?,
            routing,
            short,
        ),
    }
}

// ---------------------------------------------------------------------------
// Composite serialization
// ---------------------------------------------------------------------------

pub fn save_composite(c: &Composite) -> String {
    let mut root = Map::new();
    root.insert("format".into(), json!(machine::FORMAT_VERSION));
    root.insert("composite".into(), composite_to_json(c));
    serde_json::to_string_pretty(&Value::Object(root)).expect("serialization cannot fail")
}

fn composite_to_json(c: &Composite) -> Value {
    let mut node = Map::new();
    match c {
        Composite::Machine(m) => {
            node.insert("op".into(), json!("machine"));
            let inner: Value =
                serde_json::from_str(&machine::save(m)).expect("machine serialization");
            node.insert("machine".into(), inner);
        }
        Composite::TensorPower { k, factor } => {
            node.insert("op".into(), json!("tensor_power"));
            node.insert("k".into(), json!(k));
            node.insert("factor".into(), composite_to_json(factor));
        }
        Composite::Union(a, b) => {
            node.insert("op".into(), json!("union"));
            node.insert(
                "factors".into(),
                Value::Array(vec![composite_to_json(a), composite_to_json(b)]),
            );
        }
        Composite::Intersection(a, b) => {
            node.insert("op".into(), json!("intersection"));
            node.insert(
                "factors".into(),
                Value::Array(vec![composite_to_json(a), composite_to_json(b)]),
            );
        }
        Composite::Complement(inner) => {
            node.insert("op".into(), json!("complement"));
            node.insert("factor".into(), composite_to_json(inner));
        }
        Composite::PrefixDispatch {
            routing,
            short,
            factors,
        } => {
            node.insert("op".into(), json!("prefix_dispatch"));
            let mut r = Map::new();
            for (c, i) in routing {
                r.insert(c.to_string(), json!(i));
            }
            node.insert("routing".into(), Value::Object(r));
            let mut s = Map::new();
            s.insert(
                "empty".into(),
                json!(if short.empty_accepts { "accept" } else { "reject" }),
            );
            let mut single = Map::new();
            for (c, acc) in &short.single {
                single.insert(c.to_string(), json!(if *acc { "accept" } else { "reject" }));
            }
            s.insert("single".into(), Value::Object(single));
            node.insert("short".into(), Value::Object(s));
            node.insert(
                "factors".into(),
                Value::Array(vec![
                    composite_to_json(&factors[0]),
                    composite_to_json(&factors[1]),
                ]),
            );
        }
    }
    Value::Object(node)
}

pub fn load_composite(text: &str) -> Result<Composite, TransformError> {
    let root: Value = serde_json::from_str(text)
        .map_err(|e| TransformError::Model(ModelError::Parse(e.to_string())))?;
    let obj = root
        .as_object()
        .ok_or_else(|| parse_err("composite file must be a JSON object"))?;
    let format = obj
        .get("format")
        .and_then(Value::as_u64)
        .ok_or_else(|| parse_err("missing format field"))?;
    if format != machine::FORMAT_VERSION {
        return Err(parse_err(&format!("unsupported format version {format}")));
    }
    let node = obj
        .get("composite")
        .ok_or_else(|| parse_err("missing composite field"))?;
    composite_from_json(node)
}

fn parse_err(msg: &str) -> TransformError {
    TransformError::Model(ModelError::Parse(msg.to_string()))
}

fn composite_from_json(v: &Value) -> Result<Composite, TransformError> {
    let node = v
        .as_object()
        .ok_or_else(|| parse_err("composite node must be an object"))?;
    let op = node
        .get("op")
        .and_then(Value::as_str)
        .ok_or_else(|| parse_err("composite node missing op"))?;
    let factor = |key: &str| -> Result<Composite, TransformError> {
        composite_from_json(node.get(key).ok_or_else(|| parse_err("missing factor"))?)
    };
    let two_factors = || -> Result<(Composite, Composite), TransformError> {
        let arr = node
            .get("factors")
            .and_then(Value::as_array)
            .ok_or_else(|| parse_err("missing factors array"))?;
        if arr.len() != 2 {
            return Err(parse_err("factors array must have two entries"));
        }
        Ok((composite_from_json(&arr[0])?, composite_from_json(&arr[1])?))
    };
    Ok(match op {
        "machine" => {
            let inner = node
                .get("machine")
                .ok_or_else(|| parse_err("missing machine body"))?;
            let m = machine::load(&inner.to_string())?;
            Composite::Machine(Box::new(m))
        }
        "tensor_power" => {
            let k = node
                .get("k")
                .and_then(Value::as_u64)
                .ok_or_else(|| parse_err("tensor_power missing k"))? as u32;
            Composite::TensorPower {
                k,
                factor: Box::new(factor("factor")?),
            }
        }
        "union" => {
            let (a, b) = two_factors()?;
            Composite::Union(Box::new(a), Box::new(b))
        }
        "intersection" => {
            let (a, b) = two_factors()?;
            Composite::Intersection(Box::new(a), Box::new(b))
        }
        "complement" => Composite::Complement(Box::new(factor("factor")?)),
        "prefix_dispatch" => {
            let routing_obj = node
                .get("routing")
                .and_then(Value::as_object)
                .ok_or_else(|| parse_err("prefix_dispatch missing routing"))?;
            let mut routing = BTreeMap::new();
            for (k, v) in routing_obj {
                let c = single_char(k)?;
                let i = v
                    .as_u64()
                    .filter(|&i| i <= 1)
                    .ok_or_else(|| parse_err("routing values must be 0 or 1"))?;
                routing.insert(c, i as usize);
            }
            let short_obj = node
                .get("short")
                .and_then(Value::as_object)
                .ok_or_else(|| parse_err("prefix_dispatch missing short answers"))?;
            let empty_accepts = accepts_str(
                short_obj
                    .get("empty")
                    .and_then(Value::as_str)
                    .ok_or_else(|| parse_err("short answers missing empty"))?,
            )?;
            let mut single = BTreeMap::new();
            for (k, v) in short_obj
                .get("single")
                .and_then(Value::as_object)
                .ok_or_else(|| parse_err("short answers missing single"))?
            {
                let c = single_char(k)?;
                single.insert(
                    c,
                    accepts_str(v.as_str().ok_or_else(|| parse_err("bad single answer"))?)?,
                );
            }
            let (a, b) = two_factors()?;
            Composite::PrefixDispatch {
                routing,
                short: ShortAnswers {
                    empty_accepts,
                    single,
                },
                factors: [Box::new(a), Box::new(b)],
            }
        }
        other => return Err(parse_err(&format!("unknown composite op {other:?}"))),
    })
}

fn single_char(s: &str) -> Result<char, TransformError> {
    let mut it = s.chars();
    match (it.next(), it.next()) {
        (Some(c), None) => Ok(c),
        _ => Err(parse_err(&format!("key {s:?} must be a single character"))),
    }
}

fn accepts_str(s: &str) -> Result<bool, TransformError> {
    match s {
        "accept" => Ok(true),
        "reject" => Ok(false),
        _ => Err(parse_err("short answers must be \"accept\" or \"reject\"")),
    }
}

// ---------------------------------------------------------------------------
// Riga → standard conversion
// ---------------------------------------------------------------------------

/// Convert a Riga machine (which decides by χ when its postselection mass
/// vanishes) into a standard postselection machine, by running it in
/// parallel with a DFA for the set L' of inputs with zero postselection
/// mass:
///
/// 1. the support automaton of the machine (an edge wherever a transition
///    probability is positive, postselection states accepting) recognizes
///    the complement of L';
/// 2. subset construction and complementation yield a DFA D for L';
/// 3. the product of the machine with D routes end-of-input mass into
///    accept/reject/halt sinks per the χ case split.
pub fn riga_to_standard(
    m: &MachineDescription,
    cap: usize,
) -> Result<MachineDescription, TransformError> {
    if m.kind != MachineKind::RigaPfap {
        return Err(TransformError::KindMismatch(m.kind.as_str().into()));
    }
    let chi = m.chi.expect("riga machine has chi");
    let f = freeze_halting(m);
    let n = f.n_states();
    if n > 127 {
        return Err(TransformError::MaterializationCap(n, 127));
    }
    let post: u128 = (0..n)
        .filter(|&i| is_post(m.role(i)))
        .fold(0u128, |acc, i| acc | (1u128 << i));

    let support_step = |set: u128, mat: &Mat<Rational>| -> u128 {
        let mut out = 0u128;
        for j in 0..n {
            if set & (1 << j) != 0 {
                for i in 0..n {
                    if !mat[(i, j)].is_zero() {
                        out |= 1 << i;
                    }
                }
            }
        }
        out
    };

    let endl = f.block(ExtSym::EndL).as_stochastic().expect("probabilistic");
    let endr = f.block(ExtSym::EndR).as_stochastic().expect("probabilistic");
    let start_set = support_step(1u128 << f.initial_index(), endl);
    // D accepts (w ∈ L') iff no postselection state has positive mass
    // after reading ¢ w $.
    let in_lprime = |set: u128| support_step(set, endr) & post == 0;

    // Subset construction, BFS order for canonical state naming.
    let mut subsets: Vec<u128> = vec![start_set];
    let mut index: BTreeMap<u128, usize> = BTreeMap::new();
    index.insert(start_set, 0);
    let mut delta: Vec<Vec<usize>> = Vec::new(); // [subset][symbol]
    let mut head = 0;
    while head < subsets.len() {
        let set = subsets[head];
        let mut row = Vec::with_capacity(m.alphabet.len());
        for &c in &m.alphabet {
            let mat = f.block(ExtSym::Sym(c)).as_stochastic().expect("probabilistic");
            let next = support_step(set, mat);
            let idx = *index.entry(next).or_insert_with(|| {
                subsets.push(next);
                subsets.len() - 1
            });
            row.push(idx);
        }
        delta.push(row);
        head += 1;
    }
    let nd = subsets.len();
    let accept_d: Vec<bool> = subsets.iter().map(|&s| in_lprime(s)).collect();

    // Product machine: (machine state, DFA state) pairs, all continuing,
    // plus terminal sinks.
    let np = n * nd;
    check_cap(np + 3, cap)?;
    let mut states: Vec<(String, StateRole)> = Vec::with_capacity(np + 3);
    for i in 0..n {
        for d in 0..nd {
            states.push((format!("{}|d{}", f.states[i].0, d), StateRole::Continuing));
        }
    }
    let acc = np;
    let rej = np + 1;
    let na = np + 2;
    states.push(("acc".into(), StateRole::PostAccept));
    states.push(("rej".into(), StateRole::PostReject));
    states.push(("na".into(), StateRole::NonpostHalt));
    let nt = np + 3;
    let pair = |i: usize, d: usize| i * nd + d;
    let initial = states[pair(f.initial_index(), 0)].0.clone();

    let sink = |q: usize, d: usize| -> usize {
        let post_q = is_post(m.role(q));
        let in_ad = accept_d[d];
        match chi {
            Chi::A => {
                if (!post_q && in_ad) || (m.role(q) == StateRole::PostAccept && !in_ad) {
                    acc
                } else if m.role(q) == StateRole::PostReject && !in_ad {
                    rej
                } else {
                    na
                }
            }
            Chi::R => {
                if m.role(q) == StateRole::PostAccept && !in_ad {
                    acc
                } else if (!post_q && in_ad) || (m.role(q) == StateRole::PostReject && !in_ad) {
                    rej
                } else {
                    na
                }
            }
        }
    };

    let mut transitions = BTreeMap::new();
    // END_L: advance the machine coordinate; D's start state already
    // accounts for the left end-marker.
    let mut mat = Mat::zeros(nt, nt);
    for q in 0..n {
        for d in 0..nd {
            for qn in 0..n {
                let p = &endl[(qn, q)];
                if !p.is_zero() {
                    mat[(pair(qn, d), pair(q, d))] = p.clone();
                }
            }
        }
    }
    for s in [acc, rej, na] {
        mat[(s, s)] = Rational::one();
    }
    transitions.insert(ExtSym::EndL, TransitionBlock::Stochastic(mat));

    for (ci, &c) in m.alphabet.iter().enumerate() {
        let mq = f.block(ExtSym::Sym(c)).as_stochastic().expect("probabilistic");
        let mut mat = Mat::zeros(nt, nt);
        for q in 0..n {
            for d in 0..nd {
                let dn = delta[d][ci];
                for qn in 0..n {
                    let p = &mq[(qn, q)];
                    if !p.is_zero() {
                        mat[(pair(qn, dn), pair(q, d))] = p.clone();
                    }
                }
            }
        }
        for s in [acc, rej, na] {
            mat[(s, s)] = Rational::one();
        }
        transitions.insert(ExtSym::Sym(c), TransitionBlock::Stochastic(mat));
    }

    // END_R: advance the machine coordinate, then route every pair into
    // its sink.
    let mut mat = Mat::zeros(nt, nt);
    for q in 0..n {
        for d in 0..nd {
            for qn in 0..n {
                let p = &endr[(qn, q)];
                if !p.is_zero() {
                    mat[(sink(qn, d), pair(q, d))] += p;
                }
            }
        }
    }
    for s in [acc, rej, na] {
        mat[(s, s)] = Rational::one();
    }
    transitions.insert(ExtSym::EndR, TransitionBlock::Stochastic(mat));

    Ok(MachineDescription {
        kind: MachineKind::Pfap,
        alphabet: m.alphabet.clone(),
        states,
        initial,
        chi: None,
        outcomes: None,
        transitions,
    })
}

// ---------------------------------------------------------------------------
// Cutpoint-zero constructions
// ---------------------------------------------------------------------------

struct StochasticCopy {
    n: usize,
    initial: usize,
    accept: Vec<bool>,
    blocks: BTreeMap<ExtSym, Mat<Rational>>,
    names: Vec<String>,
}

/// Turn a DFA or NFA into stochastic matrices: each 0/1 column is
/// normalized uniformly over its targets; empty columns feed a fresh dead
/// state. Acceptance probability is positive exactly when the automaton
/// accepts.
fn stochasticize(m: &MachineDescription) -> Result<StochasticCopy, TransformError> {
    if !matches!(m.kind, MachineKind::Dfa | MachineKind::Nfa) {
        return Err(TransformError::KindMismatch(m.kind.as_str().into()));
    }
    let n0 = m.n_states();
    let n = n0 + 1; // trailing dead state
    let dead = n0;
    let mut blocks = BTreeMap::new();
    for sym in m.extended_symbols() {
        let src = m.block(sym).as_stochastic().expect("0/1 matrix");
        let mut mat = Mat::zeros(n, n);
        for j in 0..n0 {
            let targets: Vec<usize> = (0..n0).filter(|&i| !src[(i, j)].is_zero()).collect();
            if targets.is_empty() {
                mat[(dead, j)] = Rational::one();
            } else {
                let p = Rational::new(1.into(), (targets.len() as i64).into());
                for i in targets {
                    mat[(i, j)] = p.clone();
                }
            }
        }
        mat[(dead, dead)] = Rational::one();
        blocks.insert(sym, mat);
    }
    let mut names: Vec<String> = m.states.iter().map(|(s, _)| s.clone()).collect();
    names.push("__dead".into());
    let mut accept: Vec<bool> = (0..n0).map(|i| m.role(i) == StateRole::Accept).collect();
    accept.push(false);
    Ok(StochasticCopy {
        n,
        initial: m.initial_index(),
        accept,
        blocks,
        names,
    })
}

/// Build an error-free postselection machine from a cutpoint-zero machine
/// for a language and one for its complement: branch 1/2–1/2 into both at
/// the left end-marker, then route end-of-input mass of the first
/// machine's accept states to the postselection accept sink and the
/// second's to the reject sink. Exactly one side has positive mass, so
/// every input is decided with zero error.
pub fn errorfree_from_cutpoint_pair(
    m1: &MachineDescription,
    m2: &MachineDescription,
) -> Result<MachineDescription, TransformError> {
    if m1.kind != m2.kind {
        return Err(TransformError::KindMismatch(format!(
            "{} vs {}",
            m1.kind.as_str(),
            m2.kind.as_str()
        )));
    }
    if m1.alphabet != m2.alphabet {
        return Err(TransformError::AlphabetMismatch);
    }
    let c1 = stochasticize(m1)?;
    let c2 = stochasticize(m2)?;
    // Layout: s0, copy 1, copy 2, acc, rej, na.
    let o1 = 1;
    let o2 = 1 + c1.n;
    let acc = 1 + c1.n + c2.n;
    let rej = acc + 1;
    let na = acc + 2;
    let nt = acc + 3;
    let mut states: Vec<(String, StateRole)> = vec![("s0".into(), StateRole::Continuing)];
    for name in &c1.names {
        states.push((format!("m1.{name}"), StateRole::Continuing));
    }
    for name in &c2.names {
        states.push((format!("m2.{name}"), StateRole::Continuing));
    }
    states.push(("acc".into(), StateRole::PostAccept));
    states.push(("rej".into(), StateRole::PostReject));
    states.push(("na".into(), StateRole::NonpostHalt));

    let half = Rational::new(1.into(), 2.into());
    let mut transitions = BTreeMap::new();
    for sym in m1.extended_symbols() {
        let b1 = &c1.blocks[&sym];
        let b2 = &c2.blocks[&sym];
        let mut mat = Mat::zeros(nt, nt);
        match sym {
            ExtSym::EndL => {
                // s0 branches into the advanced initial columns of both
                // copies with probability 1/2 each.
                for i in 0..c1.n {
                    let p = &b1[(i, c1.initial)];
                    if !p.is_zero() {
                        mat[(o1 + i, 0)] = p * &half;
                    }
                }
                for i in 0..c2.n {
                    let p = &b2[(i, c2.initial)];
                    if !p.is_zero() {
                        mat[(o2 + i, 0)] = p * &half;
                    }
                }
                embed(&mut mat, b1, o1);
                embed(&mut mat, b2, o2);
            }
            ExtSym::Sym(_) => {
                mat[(0, 0)] = Rational::one();
                embed(&mut mat, b1, o1);
                embed(&mut mat, b2, o2);
            }
            ExtSym::EndR => {
                mat[(na, 0)] = Rational::one();
                for j in 0..c1.n {
                    for i in 0..c1.n {
                        let p = &b1[(i, j)];
                        if !p.is_zero() {
                            let dest = if c1.accept[i] { acc } else { na };
                            mat[(dest, o1 + j)] += p;
                        }
                    }
                }
                for j in 0..c2.n {
                    for i in 0..c2.n {
                        let p = &b2[(i, j)];
                        if !p.is_zero() {
                            let dest = if c2.accept[i] { rej } else { na };
                            mat[(dest, o2 + j)] += p;
                        }
                    }
                }
            }
        }
        for s in [acc, rej, na] {
            mat[(s, s)] = Rational::one();
        }
        transitions.insert(sym, TransitionBlock::Stochastic(mat));
    }
    Ok(MachineDescription {
        kind: MachineKind::Pfap,
        alphabet: m1.alphabet.clone(),
        states,
        initial: "s0".into(),
        chi: None,
        outcomes: None,
        transitions,
    })
}

fn embed(dst: &mut Mat<Rational>, src: &Mat<Rational>, offset: usize) {
    for j in 0..src.cols() {
        for i in 0..src.rows() {
            let p = &src[(i, j)];
            if !p.is_zero() {
                dst[(offset + i, offset + j)] = p.clone();
            }
        }
    }
}

/// Which side of a language a cutpoint-zero machine certifies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutpointSide {
    /// The machine accepts members of L with positive probability.
    L,
    /// The machine accepts members of the complement of L.
    CoL,
}

/// Build a Riga machine from one cutpoint-zero machine: its accept states
/// feed a postselection sink of one polarity, and χ supplies the opposite
/// answer on the zero-mass inputs.
pub fn riga_errorfree_from_cutpoint0(
    m: &MachineDescription,
    side: CutpointSide,
) -> Result<MachineDescription, TransformError> {
    let c = stochasticize(m)?;
    let post_sink = c.n; // post_accept or post_reject
    let na = c.n + 1;
    let nt = c.n + 2;
    let mut states: Vec<(String, StateRole)> = c
        .names
        .iter()
        .map(|name| (name.clone(), StateRole::Continuing))
        .collect();
    let (sink_role, sink_name, chi) = match side {
        CutpointSide::L => (StateRole::PostAccept, "acc", Chi::R),
        CutpointSide::CoL => (StateRole::PostReject, "rej", Chi::A),
    };
    states.push((sink_name.into(), sink_role));
    states.push(("na".into(), StateRole::NonpostHalt));
    let mut transitions = BTreeMap::new();
    for sym in m.extended_symbols() {
        let b = &c.blocks[&sym];
        let mut mat = Mat::zeros(nt, nt);
        if sym == ExtSym::EndR {
            for j in 0..c.n {
                for i in 0..c.n {
                    let p = &b[(i, j)];
                    if !p.is_zero() {
                        let dest = if c.accept[i] { post_sink } else { na };
                        mat[(dest, j)] += p;
                    }
                }
            }
        } else {
            embed(&mut mat, b, 0);
        }
        mat[(post_sink, post_sink)] = Rational::one();
        mat[(na, na)] = Rational::one();
        transitions.insert(sym, TransitionBlock::Stochastic(mat));
    }
    Ok(MachineDescription {
        kind: MachineKind::RigaPfap,
        alphabet: m.alphabet.clone(),
        states,
        initial: c.names[c.initial].clone(),
        chi: Some(chi),
        outcomes: None,
        transitions,
    })
}

// ---------------------------------------------------------------------------
// Postselection → standard (unbounded-error) machines
// ---------------------------------------------------------------------------

/// Remove postselection: end-of-input mass outside the postselection set
/// is split equally between fresh accept and reject states, so the
/// standard acceptance probability becomes p_a + (1 − p_a − p_r)/2, which
/// exceeds 1/2 exactly when the postselected acceptance probability does.
pub fn to_unbounded_standard(
    m: &MachineDescription,
) -> Result<MachineDescription, TransformError> {
    match m.kind {
        MachineKind::Pfap => to_unbounded_standard_p(m),
        MachineKind::Qfap => to_unbounded_standard_q(m),
        other => Err(TransformError::KindMismatch(other.as_str().into())),
    }
}

/// Pick a sink name that does not collide with the kept source-state
/// names.
fn fresh_name(taken: &[(String, StateRole)], base: &str) -> String {
    let mut name = base.to_string();
    let mut i = 0;
    while taken.iter().any(|(n, _)| *n == name) {
        i += 1;
        name = format!("{base}_{i}");
    }
    name
}

fn to_unbounded_standard_p(m: &MachineDescription) -> Result<MachineDescription, TransformError> {
    let f = freeze_halting(m);
    let n = f.n_states();
    let acc = n;
    let rej = n + 1;
    let nt = n + 2;
    let half = Rational::new(1.into(), 2.into());
    let mut states: Vec<(String, StateRole)> = f
        .states
        .iter()
        .map(|(name, _)| (name.clone(), StateRole::Continuing))
        .collect();
    let acc_name = fresh_name(&states, "acc");
    states.push((acc_name, StateRole::Accept));
    let rej_name = fresh_name(&states, "rej");
    states.push((rej_name, StateRole::Reject));
    let mut transitions = BTreeMap::new();
    for sym in f.extended_symbols() {
        let b = f.block(sym).as_stochastic().expect("probabilistic");
        let mut mat = Mat::zeros(nt, nt);
        if sym == ExtSym::EndR {
            for j in 0..n {
                for i in 0..n {
                    let p = &b[(i, j)];
                    if p.is_zero() {
                        continue;
                    }
                    match m.role(i) {
                        StateRole::PostAccept => mat[(acc, j)] += p,
                        StateRole::PostReject => mat[(rej, j)] += p,
                        _ => {
                            let h = p * &half;
                            mat[(acc, j)] += &h;
                            mat[(rej, j)] += &h;
                        }
                    }
                }
            }
        } else {
            embed(&mut mat, b, 0);
        }
        mat[(acc, acc)] = Rational::one();
        mat[(rej, rej)] = Rational::one();
        transitions.insert(sym, TransitionBlock::Stochastic(mat));
    }
    Ok(MachineDescription {
        kind: MachineKind::RestartPfa,
        alphabet: f.alphabet.clone(),
        states,
        initial: f.initial.clone(),
        chi: None,
        outcomes: None,
        transitions,
    })
}

fn to_unbounded_standard_q(m: &MachineDescription) -> Result<MachineDescription, TransformError> {
    let n = m.n_states();
    let acc = n;
    let rej = n + 1;
    let nt = n + 2;
    let inv_sqrt2 = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let one = Complex64::new(1.0, 0.0);
    let mut states: Vec<(String, StateRole)> = m
        .states
        .iter()
        .map(|(name, _)| (name.clone(), StateRole::Continuing))
        .collect();
    let acc_name = fresh_name(&states, "acc");
    states.push((acc_name, StateRole::Accept));
    let rej_name = fresh_name(&states, "rej");
    states.push((rej_name, StateRole::Reject));
    // Routing channel at the right end-marker: one Kraus operator per
    // source column keeps the completeness sum diagonal.
    let mut route_ops: Vec<Mat<Complex64>> = Vec::new();
    for q in 0..n {
        match m.role(q) {
            StateRole::PostAccept => {
                let mut e = Mat::zeros(nt, nt);
                e[(acc, q)] = one;
                route_ops.push(e);
            }
            StateRole::PostReject => {
                let mut e = Mat::zeros(nt, nt);
                e[(rej, q)] = one;
                route_ops.push(e);
            }
            _ => {
                let mut ea = Mat::zeros(nt, nt);
                ea[(acc, q)] = inv_sqrt2;
                route_ops.push(ea);
                let mut er = Mat::zeros(nt, nt);
                er[(rej, q)] = inv_sqrt2;
                route_ops.push(er);
            }
        }
    }
    let mut keep = Mat::zeros(nt, nt);
    keep[(acc, acc)] = one;
    keep[(rej, rej)] = one;
    route_ops.push(keep);

    // The sink identity may appear in only one operator per symbol, or the
    // completeness sum picks it up once per operator.
    let embed_q = |src: &Mat<Complex64>, with_sinks: bool| -> Mat<Complex64> {
        let mut out = Mat::zeros(nt, nt);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = src[(i, j)];
            }
        }
        if with_sinks {
            out[(acc, acc)] = one;
            out[(rej, rej)] = one;
        }
        out
    };

    let mut transitions = BTreeMap::new();
    for sym in m.extended_symbols() {
        let sop = m.block(sym).as_quantum().expect("quantum");
        let ops: Vec<KrausOp> = if sym == ExtSym::EndR {
            let mut composed = Vec::new();
            for e in &sop.ops {
                // Embed without the sink identity: the original operator
                // never touches the sinks, and the routing step supplies
                // the sink-preserving component.
                let mut base = Mat::zeros(nt, nt);
                for i in 0..n {
                    for j in 0..n {
                        base[(i, j)] = e.matrix[(i, j)];
                    }
                }
                for r in &route_ops {
                    let prod = r.matmul(&base);
                    if prod.max_abs() > 0.0 {
                        composed.push(KrausOp {
                            outcome: None,
                            matrix: prod,
                        });
                    }
                }
            }
            // Sink-preserving component paired with the first original
            // operator slot: sinks hold no mass before END_R, so a single
            // identity-on-sinks operator restores completeness.
            let mut keep_only = Mat::zeros(nt, nt);
            keep_only[(acc, acc)] = one;
            keep_only[(rej, rej)] = one;
            composed.push(KrausOp {
                outcome: None,
                matrix: keep_only,
            });
            composed
        } else {
            sop.ops
                .iter()
                .enumerate()
                .map(|(i, e)| KrausOp {
                    outcome: None,
                    matrix: embed_q(&e.matrix, i == 0),
                })
                .collect()
        };
        transitions.insert(sym, TransitionBlock::Quantum(Superoperator { ops }));
    }
    Ok(MachineDescription {
        kind: MachineKind::RestartQfa,
        alphabet: m.alphabet.clone(),
        states,
        initial: m.initial.clone(),
        chi: None,
        outcomes: None,
        transitions,
    })
}

// ---------------------------------------------------------------------------
// First-symbol dispatch
// ---------------------------------------------------------------------------

/// Combine two postselection machines into one that consumes the first
/// input symbol itself, passes the remaining suffix to the machine chosen
/// by the routing map, and answers inputs shorter than two symbols from
/// the hardwired table.
pub fn prefix_dispatch(
    m1: &MachineDescription,
    m2: &MachineDescription,
    routing: &BTreeMap<char, usize>,
    short: &ShortAnswers,
) -> Result<MachineDescription, TransformError> {
    if m1.kind != MachineKind::Pfap || m2.kind != MachineKind::Pfap {
        return Err(TransformError::KindMismatch(format!(
            "{} vs {}",
            m1.kind.as_str(),
            m2.kind.as_str()
        )));
    }
    if m1.alphabet != m2.alphabet {
        return Err(TransformError::AlphabetMismatch);
    }
    for &c in &m1.alphabet {
        if !routing.contains_key(&c) || !short.single.contains_key(&c) {
            return Err(TransformError::RoutingIncomplete(c));
        }
        if routing[&c] > 1 {
            return Err(TransformError::RoutingIncomplete(c));
        }
    }
    let f1 = freeze_halting(m1);
    let f2 = freeze_halting(m2);
    let na = m1.alphabet.len();
    // Layout: s0, sw, f(σ)…, copy 1, copy 2, acc, rej.
    let s0 = 0;
    let sw = 1;
    let fbase = 2;
    let o1 = fbase + na;
    let o2 = o1 + f1.n_states();
    let acc = o2 + f2.n_states();
    let rej = acc + 1;
    let nt = rej + 1;
    let mut states: Vec<(String, StateRole)> = vec![
        ("s0".into(), StateRole::Continuing),
        ("sw".into(), StateRole::Continuing),
    ];
    for &c in &m1.alphabet {
        states.push((format!("f{c}"), StateRole::Continuing));
    }
    for (name, role) in &f1.states {
        states.push((format!("m1.{name}"), *role));
    }
    for (name, role) in &f2.states {
        states.push((format!("m2.{name}"), *role));
    }
    states.push(("acc".into(), StateRole::PostAccept));
    states.push(("rej".into(), StateRole::PostReject));

    // Advanced initial column of machine i after its own left end-marker.
    let entry = |f: &MachineDescription| -> Vec<Rational> {
        let b = f.block(ExtSym::EndL).as_stochastic().expect("probabilistic");
        (0..f.n_states()).map(|i| b[(i, f.initial_index())].clone()).collect()
    };
    let e1 = entry(&f1);
    let e2 = entry(&f2);

    let fidx = |c: char| fbase + m1.alphabet.iter().position(|&x| x == c).expect("alphabet");
    let answer = |accepts: bool| if accepts { acc } else { rej };

    let mut transitions = BTreeMap::new();
    for sym in m1.extended_symbols() {
        let mut mat = Mat::zeros(nt, nt);
        match sym {
            ExtSym::EndL => {
                mat[(sw, s0)] = Rational::one();
                mat[(sw, sw)] = Rational::one();
                for i in 0..na {
                    mat[(fbase + i, fbase + i)] = Rational::one();
                }
                embed(&mut mat, f1.block(sym).as_stochastic().unwrap(), o1);
                embed(&mut mat, f2.block(sym).as_stochastic().unwrap(), o2);
            }
            ExtSym::Sym(c) => {
                mat[(s0, s0)] = Rational::one();
                // First input symbol: remember it.
                mat[(fidx(c), sw)] = Rational::one();
                // Second input symbol τ from f(σ): enter the routed copy
                // advanced past its end-marker and past τ in one step.
                for &sigma in &m1.alphabet {
                    let col = fidx(sigma);
                    if routing[&sigma] == 0 {
                        let b = f1.block(sym).as_stochastic().unwrap();
                        let v = b.matvec(&e1);
                        for (i, p) in v.iter().enumerate() {
                            if !p.is_zero() {
                                mat[(o1 + i, col)] = p.clone();
                            }
                        }
                    } else {
                        let b = f2.block(sym).as_stochastic().unwrap();
                        let v = b.matvec(&e2);
                        for (i, p) in v.iter().enumerate() {
                            if !p.is_zero() {
                                mat[(o2 + i, col)] = p.clone();
                            }
                        }
                    }
                }
                embed(&mut mat, f1.block(sym).as_stochastic().unwrap(), o1);
                embed(&mut mat, f2.block(sym).as_stochastic().unwrap(), o2);
            }
            ExtSym::EndR => {
                mat[(s0, s0)] = Rational::one();
                mat[(answer(short.empty_accepts), sw)] = Rational::one();
                for &sigma in &m1.alphabet {
                    mat[(answer(short.single[&sigma]), fidx(sigma))] = Rational::one();
                }
                embed(&mut mat, f1.block(sym).as_stochastic().unwrap(), o1);
                embed(&mut mat, f2.block(sym).as_stochastic().unwrap(), o2);
            }
        }
        mat[(acc, acc)] = Rational::one();
        mat[(rej, rej)] = Rational::one();
        transitions.insert(sym, TransitionBlock::Stochastic(mat));
    }
    Ok(MachineDescription {
        kind: MachineKind::Pfap,
        alphabet: m1.alphabet.clone(),
        states,
        initial: "s0".into(),
        chi: None,
        outcomes: None,
        transitions,
    })
}

// ---------------------------------------------------------------------------
// Measured-machine state partitioning
// ---------------------------------------------------------------------------

/// Turn a measured machine (outcome-labeled Kraus operators, outcome list
/// Δ with the continuing outcome first) into a postselection machine over
/// Q × Δ whose state categories carry the measurement outcomes. From a
/// source state in category τ_j, the operator labeled τ_l targets
/// category τ_{(j+l−1) mod |Δ|}: from the continuing category this is the
/// correct categorization, and the cyclic shift on the remaining
/// categories preserves well-formedness.
///
/// Labels map to roles by convention: the first outcome is continuing,
/// `"a"`/`"accept"` → post_accept, `"r"`/`"reject"` → post_reject,
/// anything else → nonpost_halt.
pub fn partition_states(m: &MachineDescription) -> Result<MachineDescription, TransformError> {
    if m.kind != MachineKind::MeasuredQfa {
        return Err(TransformError::KindMismatch(m.kind.as_str().into()));
    }
    let delta = m.outcomes.clone().unwrap_or_default();
    let nd = delta.len();
    if nd == 0 {
        return Err(TransformError::KindMismatch(
            "measured machine has no outcomes".into(),
        ));
    }
    let n = m.n_states();
    let role_of = |j: usize| -> StateRole {
        if j == 0 {
            StateRole::Continuing
        } else {
            match delta[j].as_str() {
                "a" | "accept" => StateRole::PostAccept,
                "r" | "reject" => StateRole::PostReject,
                _ => StateRole::NonpostHalt,
            }
        }
    };
    let mut states = Vec::with_capacity(n * nd);
    for i in 0..n {
        for j in 0..nd {
            states.push((format!("{}|{}", m.states[i].0, delta[j]), role_of(j)));
        }
    }
    let pair = |q: usize, j: usize| q * nd + j;
    let initial = states[pair(m.initial_index(), 0)].0.clone();
    let mut transitions = BTreeMap::new();
    for sym in m.extended_symbols() {
        let sop = m.block(sym).as_quantum().expect("quantum");
        let mut ops = Vec::with_capacity(sop.ops.len());
        for op in &sop.ops {
            let label = op.outcome.as_deref().ok_or(TransformError::UnlabeledKraus)?;
            let l = delta
                .iter()
                .position(|d| d == label)
                .ok_or(TransformError::UnlabeledKraus)?;
            let mut e = Mat::zeros(n * nd, n * nd);
            for j in 0..nd {
                let jt = (j + l) % nd;
                for qt in 0..n {
                    for q in 0..n {
                        let amp = op.matrix[(qt, q)];
                        if amp != Complex64::new(0.0, 0.0) {
                            e[(pair(qt, jt), pair(q, j))] = amp;
                        }
                    }
                }
            }
            ops.push(KrausOp {
                outcome: None,
                matrix: e,
            });
        }
        transitions.insert(sym, TransitionBlock::Quantum(Superoperator { ops }));
    }
    Ok(MachineDescription {
        kind: MachineKind::Qfap,
        alphabet: m.alphabet.clone(),
        states,
        initial,
        chi: None,
        outcomes: None,
        transitions,
    })
}

// ---------------------------------------------------------------------------
// Classical → quantum embedding
// ---------------------------------------------------------------------------

/// Embed a probabilistic machine as a quantum one: every probabilistic
/// branch becomes its own one-entry Kraus operator with a square-root
/// amplitude, so Σ E†E recovers the column sums and the density-matrix
/// diagonal evolves exactly like the stochastic vector.
pub fn classical_embedding(m: &MachineDescription) -> Result<MachineDescription, TransformError> {
    let kind = match m.kind {
        MachineKind::Pfap => MachineKind::Qfap,
        MachineKind::RestartPfa => MachineKind::RestartQfa,
        MachineKind::RigaPfap => MachineKind::RigaQfap,
        other => return Err(TransformError::KindMismatch(other.as_str().into())),
    };
    let f = freeze_halting(m);
    let n = f.n_states();
    let mut transitions = BTreeMap::new();
    for sym in f.extended_symbols() {
        let b = f.block(sym).as_stochastic().expect("probabilistic");
        let mut ops = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let p = &b[(i, j)];
                if !p.is_zero() {
                    let mut e: Mat<Complex64> = Mat::zeros(n, n);
                    e[(i, j)] = Complex64::new(crate::numerics::rational_to_f64(p).sqrt(), 0.0);
                    ops.push(KrausOp {
                        outcome: None,
                        matrix: e,
                    });
                }
            }
        }
        transitions.insert(sym, TransitionBlock::Quantum(Superoperator { ops }));
    }
    Ok(MachineDescription {
        kind,
        alphabet: f.alphabet.clone(),
        states: f.states.clone(),
        initial: f.initial.clone(),
        chi: f.chi,
        outcomes: None,
        transitions,
    })
}
