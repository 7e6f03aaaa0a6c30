//! Witness machines, language membership oracles, and the
//! enumeration-based recognition classifier.

use std::collections::BTreeMap;

use num_complex::Complex64;
use num_traits::{One, Signed, Zero};

use crate::error::{EvalError, TransformError};
use crate::machine::{
    Chi, ExtSym, KrausOp, MachineDescription, MachineKind, StateRole, Superoperator,
    TransitionBlock,
};
use crate::numerics::{rat, rational_to_f64, Mat, Rational, TolerancePolicy};
use crate::semantics::{self, ApproxOutcome, ExactOutcome, Outcome, Prob};
use crate::transforms::{self, Composite, ShortAnswers};

// ---------------------------------------------------------------------------
// Witness machines
// ---------------------------------------------------------------------------

/// PFAP recognizing L_eq = { w ∈ {a,b}* : |w|_a = |w|_b } with error
/// bound 9/19.
///
/// The left end-marker splits the initial mass into an accept branch A
/// (weight 9/17) and two reject branches R1, R2 (weight 4/17 each). A
/// survives every symbol with probability 1/2; R1 survives 'a' with 1/4
/// and 'b' with 1; R2 is symmetric. Dead mass halts outside the
/// postselection set. With n = |w|, a = |w|_a, b = |w|_b this yields
/// p_a = (9/17)·2^{−n} and p_r = (4/17)(4^{−a} + 4^{−b}), so
/// p_r/p_a = (4/9)(2^d + 2^{−d}) with d = a − b: ratio 8/9 ≤ 9/10 for
/// members and ≥ 10/9 for nonmembers, both bounds attained, so the
/// error-ratio test separates the two sides at ε = 9/19.
pub fn build_leq_pfap() -> MachineDescription {
    let names = ["s0", "A", "R1", "R2", "acc", "rej", "na"];
    let roles = [
        StateRole::Continuing,
        StateRole::Continuing,
        StateRole::Continuing,
        StateRole::Continuing,
        StateRole::PostAccept,
        StateRole::PostReject,
        StateRole::NonpostHalt,
    ];
    let n = 7;
    let (s0, a, r1, r2, acc, rej, na) = (0, 1, 2, 3, 4, 5, 6);
    let mut transitions = BTreeMap::new();

    let mut endl = Mat::zeros(n, n);
    endl[(a, s0)] = rat(9, 17);
    endl[(r1, s0)] = rat(4, 17);
    endl[(r2, s0)] = rat(4, 17);
    for i in [a, r1, r2, acc, rej, na] {
        endl[(i, i)] = Rational::one();
    }
    transitions.insert(ExtSym::EndL, TransitionBlock::Stochastic(endl));

    let symbol = |surv_r1: Rational, surv_r2: Rational| {
        let mut m = Mat::zeros(n, n);
        m[(s0, s0)] = Rational::one();
        m[(a, a)] = rat(1, 2);
        m[(na, a)] = rat(1, 2);
        m[(r1, r1)] = surv_r1.clone();
        m[(na, r1)] = Rational::one() - surv_r1;
        m[(r2, r2)] = surv_r2.clone();
        m[(na, r2)] = Rational::one() - surv_r2;
        for i in [acc, rej, na] {
            m[(i, i)] = Rational::one();
        }
        m
    };
    transitions.insert(
        ExtSym::Sym('a'),
        TransitionBlock::Stochastic(symbol(rat(1, 4), Rational::one())),
    );
    transitions.insert(
        ExtSym::Sym('b'),
        TransitionBlock::Stochastic(symbol(Rational::one(), rat(1, 4))),
    );

    let mut endr = Mat::zeros(n, n);
    endr[(na, s0)] = Rational::one();
    endr[(acc, a)] = Rational::one();
    endr[(rej, r1)] = Rational::one();
    endr[(rej, r2)] = Rational::one();
    for i in [acc, rej, na] {
        endr[(i, i)] = Rational::one();
    }
    transitions.insert(ExtSym::EndR, TransitionBlock::Stochastic(endr));

    MachineDescription {
        kind: MachineKind::Pfap,
        alphabet: vec!['a', 'b'],
        states: names
            .iter()
            .zip(roles)
            .map(|(n, r)| (n.to_string(), r))
            .collect(),
        initial: "s0".into(),
        chi: None,
        outcomes: None,
        transitions,
    }
}

/// Scaling constant of the palindrome witness: at least the operator norm
/// of the per-symbol register updates (Frobenius bound √42 ≈ 6.5),
/// rounded up to the next power of two. The power-of-two choice keeps
/// every live register amplitude an exact dyadic float, so the
/// forward/reverse encodings cancel bitwise on palindromes and the reject
/// mass of a member is exactly zero.
pub const LPAL_GAMMA: f64 = 8.0;
/// Accept-amplitude weight of the palindrome witness; nonmembers are
/// accepted with postselected probability at most κ/(κ+1) = 1/4.
pub const LPAL_KAPPA: f64 = 1.0 / 3.0;

/// QFAP recognizing L_pal = { w : w = wʳ } with one-sided error: every
/// palindrome is accepted with postselected probability 1 (its reject
/// mass is exactly zero), every non-palindrome with at most
/// κ/(κ+1) = 1/4.
///
/// An amplitude register (c, F, R, t) tracks the forward and reverse
/// base-4 encodings of the input: per symbol σ ∈ {1, 2},
/// F′ = 4F + σc, R′ = R + σt, t′ = 4t, c′ = c, each map scaled by 1/γ and
/// completed into nonpostselection halting states by the PSD square root
/// of I − A†A. At the right end-marker the reject amplitude is
/// proportional to F − R (zero exactly for palindromes) and the accept
/// amplitude to √κ · c.
pub fn build_lpal_qfap() -> MachineDescription {
    let tol = TolerancePolicy::default();
    let nt = 10;
    let (c, f, r, t) = (0usize, 1usize, 2usize, 3usize);
    let h0 = 4; // h0..h3 completion states
    let acc = 8;
    let rej = 9;
    let names = ["c", "f", "r", "t", "h1", "h2", "h3", "h4", "acc", "rej"];
    let mut states: Vec<(String, StateRole)> = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let role = match i {
            0..=3 => StateRole::Continuing,
            4..=7 => StateRole::NonpostHalt,
            8 => StateRole::PostAccept,
            _ => StateRole::PostReject,
        };
        states.push((name.to_string(), role));
    }
    let one = Complex64::new(1.0, 0.0);
    let mut transitions = BTreeMap::new();

    // END_L: a preparation channel sends the initial state to the
    // register (1, 0, 0, 1)/2, with the residual half of the mass
    // completed into the halting block. Using the dyadic weight 1/2
    // instead of a Hadamard's 1/√2 keeps every live amplitude an exact
    // dyadic float for the rest of the run.
    let half = Complex64::new(0.5, 0.0);
    let mut prep = Mat::zeros(nt, nt);
    prep[(c, c)] = half;
    prep[(t, c)] = half;
    for i in 4..nt {
        prep[(i, i)] = one;
    }
    let mut prep_done = Mat::zeros(nt, nt);
    prep_done[(h0, c)] = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    prep_done[(h0 + 1, f)] = one;
    prep_done[(h0 + 2, r)] = one;
    prep_done[(h0 + 3, t)] = one;
    transitions.insert(
        ExtSym::EndL,
        TransitionBlock::Quantum(Superoperator {
            ops: vec![
                KrausOp {
                    outcome: None,
                    matrix: prep,
                },
                KrausOp {
                    outcome: None,
                    matrix: prep_done,
                },
            ],
        }),
    );

    // Per-symbol register update, scaled by 1/γ and completed.
    let live = |entries: &[(usize, usize, f64)]| -> Mat<Complex64> {
        let mut m = Mat::zeros(4, 4);
        for &(i, j, v) in entries {
            m[(i, j)] = Complex64::new(v, 0.0);
        }
        m
    };
    let g = LPAL_GAMMA;
    for (sym, sigma) in [(ExtSym::Sym('a'), 1.0f64), (ExtSym::Sym('b'), 2.0f64)] {
        let a = live(&[
            (c, c, 1.0 / g),
            (f, c, sigma / g),
            (f, f, 4.0 / g),
            (r, r, 1.0 / g),
            (r, t, sigma / g),
            (t, t, 4.0 / g),
        ]);
        let defect = Mat::identity(4).sub(&a.dagger().matmul(&a));
        let k = defect.psd_sqrt(&tol).expect("subnormalized update");
        // Main operator: scaled update on the register, identity on the
        // halted part of the space.
        let mut e1 = Mat::zeros(nt, nt);
        for i in 0..4 {
            for j in 0..4 {
                e1[(i, j)] = a[(i, j)];
            }
        }
        for i in 4..nt {
            e1[(i, i)] = one;
        }
        // Completion operator: residual register mass into the halting
        // block.
        let mut e2 = Mat::zeros(nt, nt);
        for i in 0..4 {
            for j in 0..4 {
                e2[(h0 + i, j)] = k[(i, j)];
            }
        }
        transitions.insert(
            sym,
            TransitionBlock::Quantum(Superoperator {
                ops: vec![
                    KrausOp {
                        outcome: None,
                        matrix: e1,
                    },
                    KrausOp {
                        outcome: None,
                        matrix: e2,
                    },
                ],
            }),
        );
    }

    // END_R: accept amplitude √κ·c/2, reject amplitude (F − R)/2,
    // residual register mass completed into the halting block, halted
    // mass kept in place.
    let n_map = live(&[
        (0, c, LPAL_KAPPA.sqrt() / 2.0),
        (1, f, 0.5),
        (1, r, -0.5),
    ]);
    let defect = Mat::identity(4).sub(&n_map.dagger().matmul(&n_map));
    let kx = defect.psd_sqrt(&tol).expect("subnormalized end map");
    let mut e1 = Mat::zeros(nt, nt);
    e1[(acc, c)] = n_map[(0, c)];
    e1[(rej, f)] = n_map[(1, f)];
    e1[(rej, r)] = n_map[(1, r)];
    let mut e2 = Mat::zeros(nt, nt);
    for i in 0..4 {
        for j in 0..4 {
            e2[(h0 + i, j)] = kx[(i, j)];
        }
    }
    let mut keep = Mat::zeros(nt, nt);
    for i in 4..nt {
        keep[(i, i)] = one;
    }
    transitions.insert(
        ExtSym::EndR,
        TransitionBlock::Quantum(Superoperator {
            ops: vec![
                KrausOp {
                    outcome: None,
                    matrix: e1,
                },
                KrausOp {
                    outcome: None,
                    matrix: e2,
                },
                KrausOp {
                    outcome: None,
                    matrix: keep,
                },
            ],
        }),
    );

    MachineDescription {
        kind: MachineKind::Qfap,
        alphabet: vec!['a', 'b'],
        states,
        initial: "c".into(),
        chi: None,
        outcomes: None,
        transitions,
    }
}

/// Minimal well-formed QFAP for smoke tests: the left end-marker moves
/// the initial state into the accept state, each 'a' rotates the
/// accept/reject plane by θ, so p_a(aⁿ) = cos²(nθ).
pub fn build_rotation_qfap(theta: f64) -> MachineDescription {
    let nt = 3;
    let (q0, acc, rej) = (0, 1, 2);
    let one = Complex64::new(1.0, 0.0);
    let mut transitions = BTreeMap::new();

    let mut endl = Mat::zeros(nt, nt);
    endl[(acc, q0)] = one;
    endl[(q0, acc)] = one;
    endl[(rej, rej)] = one;
    transitions.insert(
        ExtSym::EndL,
        TransitionBlock::Quantum(Superoperator::unitary(endl)),
    );

    let mut rot = Mat::identity(nt);
    rot[(acc, acc)] = Complex64::new(theta.cos(), 0.0);
    rot[(acc, rej)] = Complex64::new(-theta.sin(), 0.0);
    rot[(rej, acc)] = Complex64::new(theta.sin(), 0.0);
    rot[(rej, rej)] = Complex64::new(theta.cos(), 0.0);
    transitions.insert(
        ExtSym::Sym('a'),
        TransitionBlock::Quantum(Superoperator::unitary(rot)),
    );

    transitions.insert(
        ExtSym::EndR,
        TransitionBlock::Quantum(Superoperator::unitary(Mat::identity(nt))),
    );

    MachineDescription {
        kind: MachineKind::Qfap,
        alphabet: vec!['a'],
        states: vec![
            ("q0".into(), StateRole::Continuing),
            ("acc".into(), StateRole::PostAccept),
            ("rej".into(), StateRole::PostReject),
        ],
        initial: "q0".into(),
        chi: None,
        outcomes: None,
        transitions,
    }
}

/// PFAP for L_eq∪̄eq: inputs starting with 'a' are passed (without their
/// first symbol) to the L_eq witness, inputs starting with 'b' to its
/// complement; the empty string and both single-symbol inputs are
/// hardwired rejections.
pub fn build_leqbar_machine() -> MachineDescription {
    let leq = build_leq_pfap();
    let coleq = transforms::complement(&leq).expect("postselection kind");
    let routing: BTreeMap<char, usize> = [('a', 0), ('b', 1)].into();
    let short = ShortAnswers {
        empty_accepts: false,
        single: [('a', false), ('b', false)].into(),
    };
    transforms::prefix_dispatch(&leq, &coleq, &routing, &short).expect("well-formed dispatch")
}

/// Small Riga machine with a nonempty zero-mass language: any 'b' kills
/// the live branch, so the postselection mass is zero exactly on strings
/// containing 'b', which χ = A turns into certain acceptance.
pub fn build_riga_demo() -> MachineDescription {
    let names = ["q0", "qd", "acc", "rej", "na"];
    let roles = [
        StateRole::Continuing,
        StateRole::Continuing,
        StateRole::PostAccept,
        StateRole::PostReject,
        StateRole::NonpostHalt,
    ];
    let n = 5;
    let (q0, qd, acc, rej, na) = (0, 1, 2, 3, 4);
    let mut transitions = BTreeMap::new();

    transitions.insert(ExtSym::EndL, TransitionBlock::Stochastic(Mat::identity(n)));
    transitions.insert(ExtSym::Sym('a'), TransitionBlock::Stochastic(Mat::identity(n)));

    let mut mb = Mat::zeros(n, n);
    mb[(qd, q0)] = Rational::one();
    mb[(qd, qd)] = Rational::one();
    for i in [acc, rej, na] {
        mb[(i, i)] = Rational::one();
    }
    transitions.insert(ExtSym::Sym('b'), TransitionBlock::Stochastic(mb));

    let mut endr = Mat::zeros(n, n);
    endr[(acc, q0)] = rat(1, 2);
    endr[(rej, q0)] = rat(1, 2);
    endr[(na, qd)] = Rational::one();
    for i in [acc, rej, na] {
        endr[(i, i)] = Rational::one();
    }
    transitions.insert(ExtSym::EndR, TransitionBlock::Stochastic(endr));

    MachineDescription {
        kind: MachineKind::RigaPfap,
        alphabet: vec!['a', 'b'],
        states: names
            .iter()
            .zip(roles)
            .map(|(n, r)| (n.to_string(), r))
            .collect(),
        initial: "q0".into(),
        chi: Some(Chi::A),
        outcomes: None,
        transitions,
    }
}

// ---------------------------------------------------------------------------
// Language oracles
// ---------------------------------------------------------------------------

/// Exact membership predicate over an alphabet.
pub struct LanguageOracle {
    pub name: String,
    pub alphabet: Vec<char>,
    membership: Box<dyn Fn(&str) -> bool + Send + Sync>,
}

impl LanguageOracle {
    pub fn new(
        name: impl Into<String>,
        alphabet: Vec<char>,
        membership: impl Fn(&str) -> bool + Send + Sync + 'static,
    ) -> Self {
        LanguageOracle {
            name: name.into(),
            alphabet,
            membership: Box::new(membership),
        }
    }

    pub fn member(&self, w: &str) -> bool {
        (self.membership)(w)
    }
}

/// L_eq: equally many a's and b's.
pub fn oracle_leq() -> LanguageOracle {
    LanguageOracle::new("leq", vec!['a', 'b'], |w| {
        let a = w.chars().filter(|&c| c == 'a').count();
        let b = w.chars().filter(|&c| c == 'b').count();
        a == b
    })
}

/// L_pal: palindromes over {a, b}.
pub fn oracle_lpal() -> LanguageOracle {
    LanguageOracle::new("lpal", vec!['a', 'b'], |w| {
        let fwd: Vec<char> = w.chars().collect();
        let mut rev = fwd.clone();
        rev.reverse();
        fwd == rev
    })
}

/// L_eq∪̄eq: strings of length at least two whose tail is in L_eq when
/// they start with 'a', or outside L_eq when they start with 'b'.
pub fn oracle_leqbar() -> LanguageOracle {
    let leq = oracle_leq();
    LanguageOracle::new("leqbar", vec!['a', 'b'], move |w| {
        let mut chars = w.chars();
        match (chars.next(), chars.clone().next()) {
            (Some(first), Some(_)) => {
                let rest: String = chars.collect();
                match first {
                    'a' => leq.member(&rest),
                    'b' => !leq.member(&rest),
                    _ => false,
                }
            }
            _ => false,
        }
    })
}

/// Membership by running a DFA.
pub fn oracle_from_dfa(d: &MachineDescription) -> Result<LanguageOracle, TransformError> {
    if d.kind != MachineKind::Dfa {
        return Err(TransformError::KindMismatch(d.kind.as_str().into()));
    }
    let m = d.clone();
    let alphabet = d.alphabet.clone();
    let name = format!("dfa:{}", d.initial);
    Ok(LanguageOracle::new(name, alphabet, move |w| {
        match semantics::evaluate_pfap(&m, w) {
            Ok(o) => o.p_a > Rational::zero(),
            Err(_) => false,
        }
    }))
}

/// All strings over the alphabet up to the length bound, in
/// length-lexicographic order (so the first failure found by enumeration
/// is minimal).
pub fn enumerate_strings(alphabet: &[char], max_len: usize) -> Vec<String> {
    let mut out = vec![String::new()];
    let mut current = vec![String::new()];
    for _ in 0..max_len {
        let mut next = Vec::with_capacity(current.len() * alphabet.len());
        for w in &current {
            for &c in alphabet {
                let mut s = w.clone();
                s.push(c);
                next.push(s);
            }
        }
        out.extend(next.iter().cloned());
        current = next;
    }
    out
}

// ---------------------------------------------------------------------------
// Recognition classifier
// ---------------------------------------------------------------------------

/// A notion of what it means for a machine to recognize a language.
#[derive(Debug, Clone, PartialEq)]
pub enum RecognitionMode {
    StrictCutpoint(Rational),
    NonstrictCutpoint(Rational),
    BoundedError(Rational),
    OneSided(Rational),
    ErrorFree,
    Nondeterministic,
}

/// An acceptance probability, exact or floating point.
#[derive(Debug, Clone, PartialEq)]
pub enum ProbValue {
    Exact(Rational),
    Approx(f64),
}

impl ProbValue {
    pub fn to_f64(&self) -> f64 {
        match self {
            ProbValue::Exact(r) => rational_to_f64(r),
            ProbValue::Approx(x) => *x,
        }
    }

    /// p ≥ bound, with slack for floating-point values.
    fn ge(&self, bound: &Rational, slack: f64) -> bool {
        match self {
            ProbValue::Exact(p) => p >= bound,
            ProbValue::Approx(p) => *p >= rational_to_f64(bound) - slack,
        }
    }

    fn gt(&self, bound: &Rational, slack: f64) -> bool {
        match self {
            ProbValue::Exact(p) => p > bound,
            ProbValue::Approx(p) => *p > rational_to_f64(bound) - slack,
        }
    }

    fn le(&self, bound: &Rational, slack: f64) -> bool {
        match self {
            ProbValue::Exact(p) => p <= bound,
            ProbValue::Approx(p) => *p <= rational_to_f64(bound) + slack,
        }
    }

    fn lt(&self, bound: &Rational, slack: f64) -> bool {
        match self {
            ProbValue::Exact(p) => p < bound,
            ProbValue::Approx(p) => *p < rational_to_f64(bound) + slack,
        }
    }

    fn is_zero(&self, slack: f64) -> bool {
        match self {
            ProbValue::Exact(p) => p.is_zero(),
            ProbValue::Approx(p) => p.abs() <= slack,
        }
    }

    fn is_one(&self, slack: f64) -> bool {
        match self {
            ProbValue::Exact(p) => p.is_one(),
            ProbValue::Approx(p) => (p - 1.0).abs() <= slack,
        }
    }
}

impl std::fmt::Display for ProbValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProbValue::Exact(r) => write!(f, "{}", crate::machine::format_rational(r)),
            ProbValue::Approx(x) => write!(f, "{x:.12e}"),
        }
    }
}

/// What classify runs: a materialized machine or a virtual composite.
pub enum Subject<'a> {
    Machine(&'a MachineDescription),
    Virtual(&'a Composite),
}

impl Subject<'_> {
    pub fn alphabet(&self) -> Vec<char> {
        match self {
            Subject::Machine(m) => m.alphabet.clone(),
            Subject::Virtual(c) => c.alphabet(),
        }
    }
}

enum Evaluated {
    Exact {
        outcome: ExactOutcome,
        accept: Rational,
    },
    Approx {
        outcome: ApproxOutcome,
        accept: f64,
    },
}

impl Evaluated {
    fn accept(&self) -> ProbValue {
        match self {
            Evaluated::Exact { accept, .. } => ProbValue::Exact(accept.clone()),
            Evaluated::Approx { accept, .. } => ProbValue::Approx(*accept),
        }
    }
}

fn decide_exact(
    m: Option<&MachineDescription>,
    o: ExactOutcome,
    tol: &TolerancePolicy,
) -> Result<Evaluated, EvalError> {
    let accept = match m {
        Some(m) if m.kind.is_riga() => semantics::riga_decide(m, &o, tol)?.accept_prob,
        Some(m) if matches!(m.kind, MachineKind::Dfa | MachineKind::Nfa) => o.p_a.clone(),
        _ => semantics::postselect(&o, tol)?.accept_prob,
    };
    Ok(Evaluated::Exact { outcome: o, accept })
}

fn evaluate_subject(
    subject: &Subject<'_>,
    w: &str,
    tol: &TolerancePolicy,
) -> Result<Evaluated, TransformError> {
    match subject {
        Subject::Machine(m) => {
            if m.kind == MachineKind::MeasuredQfa {
                return Err(TransformError::KindMismatch(m.kind.as_str().into()));
            }
            if m.kind.is_probabilistic() {
                let o = semantics::evaluate_pfap(m, w)?;
                Ok(decide_exact(Some(m), o, tol)?)
            } else {
                let o = semantics::evaluate_qfap(m, w)?;
                let accept = if m.kind.is_riga() {
                    semantics::riga_decide(m, &o, tol)?.accept_prob
                } else {
                    semantics::postselect(&o, tol)?.accept_prob
                };
                Ok(Evaluated::Approx { outcome: o, accept })
            }
        }
        Subject::Virtual(c) => {
            if let Ok(o) = transforms::eval_composite_exact(c, w) {
                Ok(decide_exact(None, o, tol)?)
            } else {
                let o = transforms::eval_composite_approx(c, w)?;
                let accept = semantics::postselect(&o, tol)?.accept_prob;
                Ok(Evaluated::Approx { outcome: o, accept })
            }
        }
    }
}

/// Verdict of an enumeration run.
#[derive(Debug, Clone)]
pub struct RecognitionVerdict {
    pub holds: bool,
    pub max_len_checked: usize,
    pub worst_member: Option<(String, ProbValue)>,
    pub worst_nonmember: Option<(String, ProbValue)>,
    pub counterexample: Option<String>,
}

fn eps_ok(eps: &Rational) -> bool {
    eps >= &Rational::zero() && eps < &rat(1, 2)
}

/// Check a recognition claim by enumerating every string up to `max_len`
/// in length-lexicographic order. Probability comparisons are exact for
/// probabilistic subjects and slackened by eps_compare for quantum ones.
/// One-sided recognition accepts either orientation: nonmembers at
/// exactly 0 with members ≥ 1−ε, or members at exactly 1 with nonmembers
/// ≤ ε.
pub fn classify(
    subject: &Subject<'_>,
    oracle: &LanguageOracle,
    mode: &RecognitionMode,
    max_len: usize,
    tol: &TolerancePolicy,
) -> Result<RecognitionVerdict, TransformError> {
    if subject.alphabet() != oracle.alphabet {
        return Err(TransformError::AlphabetMismatch);
    }
    match mode {
        RecognitionMode::BoundedError(e) | RecognitionMode::OneSided(e) => {
            if !eps_ok(e) {
                return Err(TransformError::EpsOutOfRange);
            }
        }
        RecognitionMode::StrictCutpoint(l) | RecognitionMode::NonstrictCutpoint(l) => {
            if l < &Rational::zero() || l > &Rational::one() {
                return Err(TransformError::EpsOutOfRange);
            }
        }
        _ => {}
    }
    let slack = tol.eps_compare;
    let mut worst_member: Option<(String, ProbValue)> = None;
    let mut worst_nonmember: Option<(String, ProbValue)> = None;
    let mut counterexample: Option<String> = None;
    // For one-sided recognition: which orientations are still viable.
    let mut orient_zero_nonmember = true;
    let mut orient_one_member = true;

    for w in enumerate_strings(&oracle.alphabet, max_len) {
        let member = oracle.member(&w);
        let ev = match evaluate_subject(subject, &w, tol) {
            Ok(ev) => ev,
            Err(TransformError::Eval(EvalError::ZeroPostselectionMass)) => {
                if counterexample.is_none() {
                    counterexample = Some(w.clone());
                }
                continue;
            }
            Err(e) => return Err(e),
        };
        let p = ev.accept();
        let pf = p.to_f64();
        if member {
            if worst_member.as_ref().map_or(true, |(_, q)| pf < q.to_f64()) {
                worst_member = Some((w.clone(), p.clone()));
            }
        } else if worst_nonmember
            .as_ref()
            .map_or(true, |(_, q)| pf > q.to_f64())
        {
            worst_nonmember = Some((w.clone(), p.clone()));
        }

        let pass = match mode {
            RecognitionMode::StrictCutpoint(l) => {
                if member {
                    p.gt(l, slack)
                } else {
                    p.le(l, slack)
                }
            }
            RecognitionMode::NonstrictCutpoint(l) => {
                if member {
                    p.ge(l, slack)
                } else {
                    p.lt(l, slack)
                }
            }
            RecognitionMode::BoundedError(e) => {
                // Error-ratio test on the raw outcome when exact; its
                // equivalence with the 1−ε comparison on the normalized
                // value is asserted by test.
                match &ev {
                    Evaluated::Exact { outcome, .. } => {
                        semantics::check_error_ratio(outcome, member, e, tol)
                            .map_err(TransformError::Eval)?
                    }
                    Evaluated::Approx { .. } => {
                        if member {
                            p.ge(&(Rational::one() - e), slack)
                        } else {
                            p.le(e, slack)
                        }
                    }
                }
            }
            RecognitionMode::OneSided(e) => {
                let a = if member {
                    p.ge(&(Rational::one() - e), slack)
                } else {
                    p.is_zero(slack)
                };
                let b = if member {
                    p.is_one(slack)
                } else {
                    p.le(e, slack)
                };
                orient_zero_nonmember &= a;
                orient_one_member &= b;
                orient_zero_nonmember || orient_one_member
            }
            RecognitionMode::ErrorFree => {
                if member {
                    p.is_one(slack)
                } else {
                    p.is_zero(slack)
                }
            }
            RecognitionMode::Nondeterministic => {
                let positive = match &ev {
                    Evaluated::Exact { outcome, .. } => outcome.p_a > Rational::zero(),
                    Evaluated::Approx { outcome, .. } => {
                        !Prob::negligible(&outcome.p_a, tol)
                    }
                };
                positive == member
            }
        };
        if !pass && counterexample.is_none() {
            counterexample = Some(w.clone());
        }
    }
    Ok(RecognitionVerdict {
        holds: counterexample.is_none(),
        max_len_checked: max_len,
        worst_member,
        worst_nonmember,
        counterexample,
    })
}

// ---------------------------------------------------------------------------
// Closed-form oracles for the witness machines (test support)
// ---------------------------------------------------------------------------

/// Closed-form pre-postselection outcome of the L_eq witness, derived by
/// hand from the branch structure and used as an independent check on the
/// matrix evaluation.
pub fn leq_closed_form(w: &str) -> ExactOutcome {
    let n = w.chars().count() as u32;
    let a = w.chars().filter(|&c| c == 'a').count() as u32;
    let b = n - a;
    let pow = |base: &Rational, e: u32| -> Rational {
        let mut acc = Rational::one();
        for _ in 0..e {
            acc *= base;
        }
        acc
    };
    let half = rat(1, 2);
    let quarter = rat(1, 4);
    let p_a = rat(9, 17) * pow(&half, n);
    let p_r = rat(4, 17) * (pow(&quarter, a) + pow(&quarter, b));
    let p_nh = Rational::one() - &p_a - &p_r;
    Outcome {
        p_a,
        p_r,
        p_nh,
        p_cont: Rational::zero(),
    }
}

/// Forward and reverse base-4 encodings of a word over {a→1, b→2}:
/// equal exactly for palindromes.
pub fn lpal_encodings(w: &str) -> (i64, i64) {
    let mut fwd = 0i64;
    let mut rev = 0i64;
    let mut t = 1i64;
    for c in w.chars() {
        let sigma = if c == 'a' { 1 } else { 2 };
        fwd = 4 * fwd + sigma;
        rev += sigma * t;
        t *= 4;
    }
    (fwd, rev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::validate_wellformed;

    fn tol() -> TolerancePolicy {
        TolerancePolicy::default()
    }

    #[test]
    fn leq_matches_closed_form_everywhere() {
        let m = build_leq_pfap();
        for w in enumerate_strings(&['a', 'b'], 8) {
            let o = semantics::evaluate_pfap(&m, &w).unwrap();
            let expect = leq_closed_form(&w);
            assert_eq!(o.p_a, expect.p_a, "p_a mismatch at {w:?}");
            assert_eq!(o.p_r, expect.p_r, "p_r mismatch at {w:?}");
            assert_eq!(o.p_nh, expect.p_nh, "p_nh mismatch at {w:?}");
            assert!(o.p_cont.is_zero());
        }
    }

    #[test]
    fn leq_pinned_values() {
        let m = build_leq_pfap();
        let t = tol();
        let o = semantics::evaluate_pfap(&m, "ab").unwrap();
        assert_eq!(o.p_a, rat(9, 68));
        assert_eq!(o.p_r, rat(2, 17));
        assert_eq!(o.p_nh, rat(51, 68));
        assert_eq!(semantics::postselect(&o, &t).unwrap().accept_prob, rat(9, 17));
        let o = semantics::evaluate_pfap(&m, "").unwrap();
        assert_eq!(o.p_a, rat(9, 17));
        assert_eq!(o.p_r, rat(8, 17));
        let o = semantics::evaluate_pfap(&m, "a").unwrap();
        assert_eq!(semantics::postselect(&o, &t).unwrap().accept_prob, rat(9, 19));
        let o = semantics::evaluate_pfap(&m, "aa").unwrap();
        assert_eq!(semantics::postselect(&o, &t).unwrap().accept_prob, rat(9, 26));
    }

    #[test]
    fn witnesses_are_wellformed() {
        let t = tol();
        for m in [
            build_leq_pfap(),
            build_lpal_qfap(),
            build_rotation_qfap(std::f64::consts::FRAC_PI_4),
            build_leqbar_machine(),
            build_riga_demo(),
        ] {
            m.check(&t).unwrap();
            let report = validate_wellformed(&m, &t);
            assert!(report.violations.is_empty(), "{:?}", report.violations);
        }
    }

    #[test]
    fn lpal_members_accept_with_probability_one() {
        let m = build_lpal_qfap();
        let t = tol();
        for w in enumerate_strings(&['a', 'b'], 8) {
            let o = semantics::evaluate_qfap(&m, &w).unwrap();
            let d = semantics::postselect(&o, &t).unwrap();
            let (fwd, rev) = lpal_encodings(&w);
            if fwd == rev {
                assert!(o.p_r < 1e-9, "palindrome {w:?} has reject mass {}", o.p_r);
                assert!((d.accept_prob - 1.0).abs() < 1e-9);
            } else {
                let diff = (fwd - rev) as f64;
                let expect = LPAL_KAPPA / (LPAL_KAPPA + diff * diff);
                assert!(
                    (d.accept_prob - expect).abs() < 1e-9,
                    "{w:?}: {} vs {expect}",
                    d.accept_prob
                );
                assert!(d.accept_prob <= 0.25 + 1e-9);
            }
        }
    }

    #[test]
    fn rotation_follows_cosine_law() {
        let theta = std::f64::consts::FRAC_PI_4;
        let m = build_rotation_qfap(theta);
        for n in 0..8usize {
            let w = "a".repeat(n);
            let o = semantics::evaluate_qfap(&m, &w).unwrap();
            let expect = (n as f64 * theta).cos().powi(2);
            assert!((o.p_a - expect).abs() < 1e-12, "n={n}");
            assert!((o.p_a + o.p_r - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn leqbar_dispatch_values() {
        let m = build_leqbar_machine();
        let t = tol();
        let p = |w: &str| {
            let o = semantics::evaluate_pfap(&m, w).unwrap();
            semantics::postselect(&o, &t).unwrap().accept_prob
        };
        assert_eq!(p("aab"), rat(9, 17));
        assert_eq!(p("bab"), rat(8, 17));
        assert_eq!(p(""), Rational::zero());
        assert_eq!(p("a"), Rational::zero());
        assert_eq!(p("b"), Rational::zero());
    }

    #[test]
    fn leqbar_tracks_oracle_at_bounded_error() {
        let m = build_leqbar_machine();
        let subject = Subject::Machine(&m);
        let verdict = classify(
            &subject,
            &oracle_leqbar(),
            &RecognitionMode::BoundedError(rat(9, 19)),
            7,
            &tol(),
        )
        .unwrap();
        assert!(verdict.holds, "{:?}", verdict.counterexample);
    }

    #[test]
    fn oracles_pinned_cases() {
        assert!(oracle_leq().member("abba"));
        assert!(!oracle_leq().member("aab"));
        assert!(oracle_lpal().member("abba"));
        assert!(!oracle_lpal().member("ab"));
        assert!(!oracle_leqbar().member("bab"));
        assert!(oracle_leqbar().member("baa"));
        assert!(!oracle_leqbar().member("a"));
    }

    #[test]
    fn classify_leq_bounds() {
        let m = build_leq_pfap();
        let subject = Subject::Machine(&m);
        let good = classify(
            &subject,
            &oracle_leq(),
            &RecognitionMode::BoundedError(rat(9, 19)),
            10,
            &tol(),
        )
        .unwrap();
        assert!(good.holds);
        let (w, p) = good.worst_nonmember.unwrap();
        assert_eq!(w.chars().count(), 1);
        assert_eq!(p, ProbValue::Exact(rat(9, 19)));

        let bad = classify(
            &subject,
            &oracle_leq(),
            &RecognitionMode::BoundedError(rat(2, 5)),
            10,
            &tol(),
        )
        .unwrap();
        assert!(!bad.holds);
        // At ε = 2/5 both sides fail: members are accepted with 9/17 < 3/5,
        // so the minimal counterexample is the empty string.
        assert_eq!(bad.counterexample.unwrap(), "");
    }

    #[test]
    fn classify_monotone_in_eps() {
        let m = build_leq_pfap();
        let subject = Subject::Machine(&m);
        let mut last = false;
        for eps in [rat(1, 3), rat(2, 5), rat(9, 19), rat(47, 95)] {
            let v = classify(
                &subject,
                &oracle_leq(),
                &RecognitionMode::BoundedError(eps),
                6,
                &tol(),
            )
            .unwrap();
            assert!(!last || v.holds, "classify must be monotone in eps");
            last = v.holds;
        }
        assert!(last);
    }

    #[test]
    fn classify_one_sided_lpal() {
        let m = build_lpal_qfap();
        let subject = Subject::Machine(&m);
        let v = classify(
            &subject,
            &oracle_lpal(),
            &RecognitionMode::OneSided(rat(1, 4)),
            6,
            &tol(),
        )
        .unwrap();
        assert!(v.holds, "{:?}", v.counterexample);
    }

    #[test]
    fn classify_enumeration_is_length_lex() {
        let ws = enumerate_strings(&['a', 'b'], 2);
        assert_eq!(ws, vec!["", "a", "b", "aa", "ab", "ba", "bb"]);
    }

    #[test]
    fn riga_demo_decisions() {
        let m = build_riga_demo();
        let t = tol();
        for (w, expect) in [("", rat(1, 2)), ("aa", rat(1, 2)), ("ab", Rational::one()), ("b", Rational::one())] {
            let o = semantics::evaluate_pfap(&m, w).unwrap();
            let d = semantics::riga_decide(&m, &o, &t).unwrap();
            assert_eq!(d.accept_prob, expect, "at {w:?}");
        }
    }
}
