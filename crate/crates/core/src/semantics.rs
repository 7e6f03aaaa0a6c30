//! Executes machines on input strings: stochastic-vector and
//! density-matrix evolution, pre-postselection outcome probabilities,
//! postselection normalization, the restart closed form, and Monte Carlo
//! restart simulation.

use num_complex::Complex64;
use num_traits::{One, Zero};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::EvalError;
use crate::machine::{Chi, ExtSym, MachineDescription, MachineKind, StateRole, TransitionBlock};
use crate::numerics::{rational_to_f64, Mat, Rational, TolerancePolicy};

/// A probability value usable in outcome algebra: exact rationals for
/// probabilistic machines, doubles for quantum machines.
pub trait Prob:
    Clone
    + PartialOrd
    + std::fmt::Debug
    + Zero
    + One
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
{
    /// True when the value counts as zero probability mass. Exact values
    /// compare against zero; floating-point values against an absolute
    /// floor far below any mass a machine of desk scale can legitimately
    /// produce (amplitudes decay geometrically with input length, so the
    /// comparison tolerance would misread small-but-real masses as zero).
    fn negligible(&self, tol: &TolerancePolicy) -> bool;
}

/// Absolute floor under which floating-point probability mass counts as
/// zero. Well below reachable signal levels (γ^{-2n} scales stay above
/// 1e-22 for |w| ≤ 12) and above cancellation noise (squared rounding
/// error, around 1e-32).
pub const ZERO_MASS_FLOOR: f64 = 1e-30;

impl Prob for Rational {
    fn negligible(&self, _tol: &TolerancePolicy) -> bool {
        self.is_zero()
    }
}

impl Prob for f64 {
    fn negligible(&self, _tol: &TolerancePolicy) -> bool {
        self.abs() <= ZERO_MASS_FLOOR
    }
}

/// Pre-postselection outcome masses for one input string.
/// For restart machines the restart mass is reported in `p_nh`.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome<P> {
    pub p_a: P,
    pub p_r: P,
    pub p_nh: P,
    pub p_cont: P,
}

impl<P: Prob> Outcome<P> {
    pub fn postselection_mass(&self) -> P {
        self.p_a.clone() + self.p_r.clone()
    }

    pub fn total(&self) -> P {
        self.p_a.clone() + self.p_r.clone() + self.p_nh.clone() + self.p_cont.clone()
    }
}

pub type ExactOutcome = Outcome<Rational>;
pub type ApproxOutcome = Outcome<f64>;

#[derive(Debug, Clone, PartialEq)]
pub enum EvalResult {
    Exact(ExactOutcome),
    Approx(ApproxOutcome),
}

impl EvalResult {
    pub fn as_exact(&self) -> Option<&ExactOutcome> {
        match self {
            EvalResult::Exact(o) => Some(o),
            _ => None,
        }
    }

    pub fn as_approx(&self) -> Option<&ApproxOutcome> {
        match self {
            EvalResult::Approx(o) => Some(o),
            _ => None,
        }
    }
}

/// Normalized accept/reject pair after postselection (or restart).
#[derive(Debug, Clone, PartialEq)]
pub struct Decision<P> {
    pub accept_prob: P,
    pub reject_prob: P,
}

pub fn word_symbols(m: &MachineDescription, w: &str) -> Result<Vec<ExtSym>, EvalError> {
    let mut syms = vec![ExtSym::EndL];
    for c in w.chars() {
        if !m.alphabet.contains(&c) {
            return Err(EvalError::SymbolNotInAlphabet(c));
        }
        syms.push(ExtSym::Sym(c));
    }
    syms.push(ExtSym::EndR);
    Ok(syms)
}

/// Evaluate any machine kind on an input word.
pub fn evaluate(m: &MachineDescription, w: &str) -> Result<EvalResult, EvalError> {
    if m.kind.is_probabilistic() {
        evaluate_pfap(m, w).map(EvalResult::Exact)
    } else {
        evaluate_qfap(m, w).map(EvalResult::Approx)
    }
}

/// Stochastic-vector evolution through END_L, the word, and END_R.
/// Mass entering a halting role mid-string is frozen there.
pub fn evaluate_pfap(m: &MachineDescription, w: &str) -> Result<ExactOutcome, EvalError> {
    if !m.kind.is_probabilistic() {
        return Err(EvalError::KindMismatch(m.kind.as_str().into()));
    }
    let n = m.n_states();
    let halting = m.kind.halting_roles();
    let is_halting: Vec<bool> = (0..n).map(|i| halting.contains(&m.role(i))).collect();
    let mut v = vec![Rational::zero(); n];
    v[m.initial_index()] = Rational::one();
    for sym in word_symbols(m, w)? {
        let mat = match m.block(sym) {
            TransitionBlock::Stochastic(mat) => mat,
            TransitionBlock::Quantum(_) => {
                return Err(EvalError::KindMismatch(m.kind.as_str().into()))
            }
        };
        let mut next = vec![Rational::zero(); n];
        for (j, frozen) in is_halting.iter().enumerate() {
            if *frozen {
                next[j] = v[j].clone();
            }
        }
        for (i, vi) in v.iter().enumerate() {
            if is_halting[i] || vi.is_zero() {
                continue;
            }
            for (j, slot) in next.iter_mut().enumerate() {
                let p = &mat[(j, i)];
                if !p.is_zero() {
                    *slot += p * vi;
                }
            }
        }
        v = next;
    }
    let mut out = Outcome {
        p_a: Rational::zero(),
        p_r: Rational::zero(),
        p_nh: Rational::zero(),
        p_cont: Rational::zero(),
    };
    for (i, mass) in v.iter().enumerate() {
        match m.role(i) {
            StateRole::PostAccept | StateRole::Accept => out.p_a += mass,
            StateRole::PostReject | StateRole::Reject => out.p_r += mass,
            StateRole::NonpostHalt | StateRole::Restart => out.p_nh += mass,
            StateRole::Continuing => out.p_cont += mass,
        }
    }
    Ok(out)
}

/// Density-matrix evolution with a single terminal measurement:
/// p_τ = tr(P_τ ρ) summed by state role.
pub fn evaluate_qfap(m: &MachineDescription, w: &str) -> Result<ApproxOutcome, EvalError> {
    if !m.kind.is_quantum() {
        return Err(EvalError::KindMismatch(m.kind.as_str().into()));
    }
    let n = m.n_states();
    let mut rho: Mat<Complex64> = Mat::zeros(n, n);
    rho[(m.initial_index(), m.initial_index())] = Complex64::new(1.0, 0.0);
    for sym in word_symbols(m, w)? {
        let sop = match m.block(sym) {
            TransitionBlock::Quantum(sop) => sop,
            TransitionBlock::Stochastic(_) => {
                return Err(EvalError::KindMismatch(m.kind.as_str().into()))
            }
        };
        rho = sop.apply(&rho);
    }
    let mut out = Outcome {
        p_a: 0.0,
        p_r: 0.0,
        p_nh: 0.0,
        p_cont: 0.0,
    };
    for i in 0..n {
        // Diagonal entries of a density matrix are nonnegative; tiny
        // negative values are rounding residue and would otherwise push
        // normalized probabilities outside [0, 1].
        let mass = rho[(i, i)].re.max(0.0);
        match m.role(i) {
            StateRole::PostAccept | StateRole::Accept => out.p_a += mass,
            StateRole::PostReject | StateRole::Reject => out.p_r += mass,
            StateRole::NonpostHalt | StateRole::Restart => out.p_nh += mass,
            StateRole::Continuing => out.p_cont += mass,
        }
    }
    Ok(out)
}

/// Per-outcome probabilities of a measured machine that observes its
/// register after every step and halts on any non-continuing outcome.
/// Returns the probability accumulated per outcome label, with the
/// terminal continuing mass classified under the continuing label.
pub fn evaluate_measured(
    m: &MachineDescription,
    w: &str,
    continuing_label: &str,
) -> Result<Vec<(String, f64)>, EvalError> {
    if m.kind != MachineKind::MeasuredQfa {
        return Err(EvalError::KindMismatch(m.kind.as_str().into()));
    }
    let n = m.n_states();
    let labels = m.outcomes.clone().unwrap_or_default();
    let mut acc: Vec<(String, f64)> = labels.iter().map(|l| (l.clone(), 0.0)).collect();
    let mut rho: Mat<Complex64> = Mat::zeros(n, n);
    rho[(m.initial_index(), m.initial_index())] = Complex64::new(1.0, 0.0);
    for sym in word_symbols(m, w)? {
        let sop = match m.block(sym) {
            TransitionBlock::Quantum(sop) => sop,
            TransitionBlock::Stochastic(_) => {
                return Err(EvalError::KindMismatch(m.kind.as_str().into()))
            }
        };
        let mut cont: Mat<Complex64> = Mat::zeros(n, n);
        for op in &sop.ops {
            let contrib = op.matrix.matmul(&rho).matmul(&op.matrix.dagger());
            let label = op.outcome.as_deref().ok_or(EvalError::KindMismatch(
                "measured_qfa operator without label".into(),
            ))?;
            if label == continuing_label {
                cont = cont.add(&contrib);
            } else if let Some(slot) = acc.iter_mut().find(|(l, _)| l == label) {
                slot.1 += contrib.trace().re;
            }
        }
        rho = cont;
    }
    if let Some(slot) = acc.iter_mut().find(|(l, _)| l == continuing_label) {
        slot.1 += rho.trace().re;
    }
    Ok(acc)
}

/// Postselection normalization: accept = p_a / (p_a + p_r).
pub fn postselect<P: Prob>(o: &Outcome<P>, tol: &TolerancePolicy) -> Result<Decision<P>, EvalError> {
    let mass = o.postselection_mass();
    if mass.negligible(tol) {
        return Err(EvalError::ZeroPostselectionMass);
    }
    Ok(Decision {
        accept_prob: o.p_a.clone() / mass.clone(),
        reject_prob: o.p_r.clone() / mass,
    })
}

/// Overall accept probability of a restart machine from single-round
/// probabilities; the geometric series collapses to the same normalization
/// as postselection, which is the content of the restart/postselection
/// equivalence.
pub fn restart_closed_form<P: Prob>(
    o: &Outcome<P>,
    tol: &TolerancePolicy,
) -> Result<Decision<P>, EvalError> {
    postselect(o, tol)
}

/// Riga decision rule: normalize when postselection mass is nonzero,
/// otherwise decide deterministically by χ.
pub fn riga_decide<P: Prob>(
    m: &MachineDescription,
    o: &Outcome<P>,
    tol: &TolerancePolicy,
) -> Result<Decision<P>, EvalError> {
    let chi = match (m.kind.is_riga(), m.chi) {
        (true, Some(chi)) => chi,
        _ => return Err(EvalError::KindMismatch(m.kind.as_str().into())),
    };
    if o.postselection_mass().negligible(tol) {
        Ok(match chi {
            Chi::A => Decision {
                accept_prob: P::one(),
                reject_prob: P::zero(),
            },
            Chi::R => Decision {
                accept_prob: P::zero(),
                reject_prob: P::one(),
            },
        })
    } else {
        postselect(o, tol)
    }
}

/// Ratio test for bounded-error recognition: a member passes when
/// p_r/p_a ≤ ε/(1−ε), a nonmember when p_a/p_r ≤ ε/(1−ε).
pub fn check_error_ratio<P: Prob>(
    o: &Outcome<P>,
    member: bool,
    eps: &Rational,
    tol: &TolerancePolicy,
) -> Result<bool, EvalError> {
    let half = Rational::new(1.into(), 2.into());
    if eps < &Rational::zero() || eps >= &half {
        return Err(EvalError::EpsOutOfRange);
    }
    if o.postselection_mass().negligible(tol) {
        return Err(EvalError::ZeroPostselectionMass);
    }
    let threshold = eps.clone() / (Rational::one() - eps.clone());
    let (num, den) = if member {
        (o.p_r.clone(), o.p_a.clone())
    } else {
        (o.p_a.clone(), o.p_r.clone())
    };
    // num/den <= t, compared as num <= t*den to keep the degenerate den = 0
    // case (infinite ratio) correct.
    Ok(ratio_leq(&num, &den, &threshold))
}

fn ratio_leq<P: Prob>(num: &P, den: &P, threshold: &Rational) -> bool {
    let t_num = rational_to_p::<P>(threshold.numer());
    let t_den = rational_to_p::<P>(threshold.denom());
    num.clone() * t_den <= den.clone() * t_num
}

fn rational_to_p<P: Prob>(i: &num_bigint::BigInt) -> P {
    // Small integers only (numerator/denominator of a threshold).
    use num_traits::ToPrimitive;
    let v = i.to_i64().expect("threshold components fit in i64");
    let mut acc = P::zero();
    let one = P::one();
    if v >= 0 {
        for _ in 0..v {
            acc = acc + one.clone();
        }
    } else {
        for _ in 0..(-v) {
            acc = acc - one.clone();
        }
    }
    acc
}

/// Report of a Monte Carlo restart simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    /// Total rounds executed across all runs.
    pub rounds_run: u64,
    /// Empirical accept frequency over decided runs.
    pub accept_freq: f64,
    pub mean_rounds_per_decision: f64,
    pub seed: u64,
    pub decided: u64,
    /// Runs cut off at the round cap without a decision.
    pub undecided: u64,
}

pub const DEFAULT_ROUND_CAP: u64 = 1_000_000;

/// Samples `runs` independent restart runs; each run repeats rounds until
/// the machine halts in an accept or reject state, or the round cap is hit.
/// Per-run RNG streams are derived from the seed by counter splitting, so
/// the report is byte-identical for a fixed seed regardless of scheduling.
pub fn simulate_restart(
    m: &MachineDescription,
    w: &str,
    runs: u64,
    seed: u64,
    round_cap: u64,
) -> Result<McReport, EvalError> {
    if m.kind != MachineKind::RestartPfa {
        return Err(EvalError::KindMismatch(m.kind.as_str().into()));
    }
    let syms = word_symbols(m, w)?;
    let n = m.n_states();
    // Pre-extract f64 column distributions per symbol.
    let mut cols: std::collections::BTreeMap<ExtSym, Vec<Vec<f64>>> = Default::default();
    for &sym in &syms {
        cols.entry(sym).or_insert_with(|| {
            let mat = m.block(sym).as_stochastic().expect("restart_pfa is probabilistic");
            (0..n)
                .map(|j| {
                    let mut cum = Vec::with_capacity(n);
                    let mut acc = 0.0;
                    for i in 0..n {
                        acc += rational_to_f64(&mat[(i, j)]);
                        cum.push(acc);
                    }
                    cum
                })
                .collect()
        });
    }
    let init = m.initial_index();
    let roles: Vec<StateRole> = (0..n).map(|i| m.role(i)).collect();
    let mut accepts = 0u64;
    let mut rejects = 0u64;
    let mut undecided = 0u64;
    let mut rounds_run = 0u64;
    for run in 0..runs {
        let mut rng = split_rng(seed, run);
        let mut decided = None;
        let mut round = 0u64;
        'run: while round < round_cap {
            round += 1;
            rounds_run += 1;
            let mut state = init;
            for &sym in &syms {
                let cum = &cols[&sym][state];
                let x: f64 = rng.gen();
                state = cum.iter().position(|&c| x < c).unwrap_or(n - 1);
                match roles[state] {
                    StateRole::Accept => {
                        decided = Some(true);
                        break 'run;
                    }
                    StateRole::Reject => {
                        decided = Some(false);
                        break 'run;
                    }
                    StateRole::Restart => continue 'run,
                    _ => {}
                }
            }
            // Round ran to END_R in a continuing state: the machine simply
            // ends without a verdict; the run is undecided.
            break 'run;
        }
        match decided {
            Some(true) => accepts += 1,
            Some(false) => rejects += 1,
            None => undecided += 1,
        }
    }
    let decided = accepts + rejects;
    Ok(McReport {
        rounds_run,
        accept_freq: if decided > 0 {
            accepts as f64 / decided as f64
        } else {
            0.0
        },
        mean_rounds_per_decision: if decided > 0 {
            rounds_run as f64 / decided as f64
        } else {
            f64::NAN
        },
        seed,
        decided,
        undecided,
    })
}

fn split_rng(seed: u64, counter: u64) -> ChaCha8Rng {
    // splitmix64 finalizer over (seed, counter) for independent streams
    let mut z = seed ^ counter.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    ChaCha8Rng::seed_from_u64(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rat;

    fn tol() -> TolerancePolicy {
        TolerancePolicy::default()
    }

    fn outcome(a: (i64, i64), r: (i64, i64)) -> ExactOutcome {
        let p_a = rat(a.0, a.1);
        let p_r = rat(r.0, r.1);
        let p_nh = Rational::one() - p_a.clone() - p_r.clone();
        Outcome {
            p_a,
            p_r,
            p_nh,
            p_cont: Rational::zero(),
        }
    }

    #[test]
    fn postselect_symmetric_mass() {
        let o = outcome((1, 4), (1, 4));
        let d = postselect(&o, &tol()).unwrap();
        assert_eq!(d.accept_prob, rat(1, 2));
        assert_eq!(d.reject_prob, rat(1, 2));
    }

    #[test]
    fn postselect_leq_example() {
        let d = postselect(&outcome((9, 68), (8, 68)), &tol()).unwrap();
        assert_eq!(d.accept_prob, rat(9, 17));
    }

    #[test]
    fn postselect_zero_mass_is_an_error() {
        let o = outcome((0, 1), (0, 1));
        assert!(matches!(
            postselect(&o, &tol()),
            Err(EvalError::ZeroPostselectionMass)
        ));
    }

    #[test]
    fn restart_closed_form_direct_substitution() {
        let o = Outcome {
            p_a: 0.2,
            p_r: 0.3,
            p_nh: 0.5,
            p_cont: 0.0,
        };
        let d = restart_closed_form(&o, &tol()).unwrap();
        assert!((d.accept_prob - 0.4).abs() < 1e-15);
        let degenerate = Outcome {
            p_a: 0.25,
            p_r: 0.0,
            p_nh: 0.75,
            p_cont: 0.0,
        };
        let d = restart_closed_form(&degenerate, &tol()).unwrap();
        assert_eq!(d.accept_prob, 1.0);
    }

    #[test]
    fn error_ratio_threshold_cases() {
        // ε = 1/3 → threshold 1/2; (2/5, 1/5) member: 1/2 ≤ 1/2.
        let o = outcome((2, 5), (1, 5));
        assert!(check_error_ratio(&o, true, &rat(1, 3), &tol()).unwrap());
        // (1, 0) nonmember: infinite ratio.
        let o = outcome((1, 1), (0, 1));
        assert!(!check_error_ratio(&o, false, &rat(9, 19), &tol()).unwrap());
        // eps out of range
        assert!(check_error_ratio(&o, false, &rat(1, 2), &tol()).is_err());
    }

    #[test]
    fn error_ratio_matches_postselected_bound_on_grid() {
        // Equivalence check: ratio test passes iff the postselected
        // probability reaches 1 − ε, over a rational grid.
        let t = tol();
        for a in 0..=8i64 {
            for r in 0..=8i64 {
                if a + r == 0 {
                    continue;
                }
                let o = Outcome {
                    p_a: rat(a, 16),
                    p_r: rat(r, 16),
                    p_nh: rat(16 - a - r, 16),
                    p_cont: Rational::zero(),
                };
                for (en, ed) in [(1i64, 3i64), (1, 4), (9, 19), (2, 5), (0, 1)] {
                    let eps = rat(en, ed);
                    let d = postselect(&o, &t).unwrap();
                    let one_minus = Rational::one() - eps.clone();
                    assert_eq!(
                        check_error_ratio(&o, true, &eps, &t).unwrap(),
                        d.accept_prob >= one_minus,
                        "a={a} r={r} eps={en}/{ed}"
                    );
                    assert_eq!(
                        check_error_ratio(&o, false, &eps, &t).unwrap(),
                        d.reject_prob >= one_minus
                    );
                }
            }
        }
    }

    #[test]
    fn split_rng_is_deterministic() {
        let mut a = split_rng(7, 3);
        let mut b = split_rng(7, 3);
        let x: f64 = a.gen();
        let y: f64 = b.gen();
        assert_eq!(x, y);
        let mut c = split_rng(7, 4);
        let z: f64 = c.gen();
        assert_ne!(x, z);
    }
}
