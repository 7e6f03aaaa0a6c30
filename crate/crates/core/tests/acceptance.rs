//! Acceptance gate: one test per release criterion, each printing a single
//! PASS/FAIL line. Tolerances are pinned here, not read from configuration.

use std::collections::BTreeMap;

use num_complex::Complex64;
use num_traits::{One, Zero};

use psim_core::lab::{
    build_leq_pfap, build_lpal_qfap, build_riga_demo, classify, enumerate_strings, oracle_leq,
    oracle_lpal, LanguageOracle, RecognitionMode, Subject,
};
use psim_core::machine::{
    validate_wellformed, ExtSym, KrausOp, MachineDescription, MachineKind, StateRole,
    Superoperator, TransitionBlock,
};
use psim_core::numerics::{rat, Mat, Rational, TolerancePolicy};
use psim_core::semantics::{
    check_error_ratio, evaluate_measured, evaluate_pfap, evaluate_qfap, postselect,
    restart_closed_form, riga_decide, simulate_restart, DEFAULT_ROUND_CAP,
};
use psim_core::transforms::{
    amplification_plan, complement, errorfree_from_cutpoint_pair, eval_composite_exact,
    partition_states, riga_to_standard, tensor_power, to_restart, to_unbounded_standard,
    Composite, DEFAULT_STATE_CAP,
};

fn tol() -> TolerancePolicy {
    TolerancePolicy::default()
}

fn words(max_len: usize) -> Vec<String> {
    enumerate_strings(&['a', 'b'], max_len)
}

fn criterion(n: u32, name: &str, check: impl FnOnce() -> Result<(), String>) {
    match check() {
        Ok(()) => println!("criterion {n} ({name}): PASS"),
        Err(e) => {
            println!("criterion {n} ({name}): FAIL — {e}");
            panic!("criterion {n} ({name}) failed: {e}");
        }
    }
}

#[test]
fn criterion_01_postselection_equals_restart_closed_form() {
    criterion(1, "postselection = restart closed form", || {
        let m = build_leq_pfap();
        let r = to_restart(&m).map_err(|e| e.to_string())?;
        for w in words(8) {
            let d1 = postselect(&evaluate_pfap(&m, &w).unwrap(), &tol())
                .map_err(|e| format!("{w:?}: {e}"))?;
            let d2 = restart_closed_form(&evaluate_pfap(&r, &w).unwrap(), &tol())
                .map_err(|e| format!("{w:?}: {e}"))?;
            if d1 != d2 {
                return Err(format!("decisions differ on {w:?}"));
            }
        }
        Ok(())
    });
}

#[test]
fn criterion_02_monte_carlo_convergence() {
    criterion(2, "Monte Carlo restart convergence", || {
        let m = to_restart(&build_leq_pfap()).map_err(|e| e.to_string())?;
        let target = 9.0 / 17.0;
        for seed in 0..20u64 {
            let rep = simulate_restart(&m, "ab", 100_000, seed, DEFAULT_ROUND_CAP)
                .map_err(|e| e.to_string())?;
            if rep.undecided != 0 {
                return Err(format!("seed {seed}: {} undecided runs", rep.undecided));
            }
            let err = (rep.accept_freq - target).abs();
            if err > 0.01 {
                return Err(format!(
                    "seed {seed}: freq {} deviates from 9/17 by {err}",
                    rep.accept_freq
                ));
            }
        }
        Ok(())
    });
}

#[test]
fn criterion_03_bounded_error_verdicts() {
    criterion(3, "bounded-error classification of the balanced-count witness", || {
        let m = build_leq_pfap();
        let subject = Subject::Machine(&m);
        let good = classify(
            &subject,
            &oracle_leq(),
            &RecognitionMode::BoundedError(rat(9, 19)),
            12,
            &tol(),
        )
        .map_err(|e| e.to_string())?;
        if !good.holds {
            return Err(format!(
                "bound 9/19 should hold, counterexample {:?}",
                good.counterexample
            ));
        }
        let bad = classify(
            &subject,
            &oracle_leq(),
            &RecognitionMode::BoundedError(rat(2, 5)),
            12,
            &tol(),
        )
        .map_err(|e| e.to_string())?;
        if bad.holds {
            return Err("bound 2/5 should fail".into());
        }
        // The witness's exact error is 9/19, so any smaller bound already
        // fails on the empty string, the shortest member.
        if bad.counterexample.as_deref() != Some("") {
            return Err(format!(
                "expected the empty string as minimal counterexample, got {:?}",
                bad.counterexample
            ));
        }
        Ok(())
    });
}

#[test]
fn criterion_04_amplification() {
    criterion(4, "error amplification by tensor powers", || {
        let p = amplification_plan(&rat(1, 4)).map_err(|e| e.to_string())?;
        if p.k != 3 {
            return Err(format!("k(1/4) = {}, expected 3", p.k));
        }
        let p = amplification_plan(&rat(9, 19)).map_err(|e| e.to_string())?;
        if p.k != 12 {
            return Err(format!("k(9/19) = {}, expected 12", p.k));
        }
        let m = build_leq_pfap();
        let sq = tensor_power(&m, 2, DEFAULT_STATE_CAP).map_err(|e| e.to_string())?;
        for w in words(8) {
            let o = evaluate_pfap(&m, &w).unwrap();
            let o2 = evaluate_pfap(&sq, &w).unwrap();
            if o2.p_a != &o.p_a * &o.p_a || o2.p_r != &o.p_r * &o.p_r {
                return Err(format!("squared masses differ on {w:?}"));
            }
        }
        let amp = Composite::TensorPower {
            k: 12,
            factor: Box::new(Composite::Machine(Box::new(m))),
        };
        let eps_out = rat(81, 361); // (9/19)²
        let oracle = oracle_leq();
        for w in words(10) {
            let o = eval_composite_exact(&amp, &w).map_err(|e| e.to_string())?;
            let ok = check_error_ratio(&o, oracle.member(&w), &eps_out, &tol())
                .map_err(|e| format!("{w:?}: {e}"))?;
            if !ok {
                return Err(format!("amplified ratio test fails on {w:?}"));
            }
        }
        Ok(())
    });
}

#[test]
fn criterion_05_union_intersection_bounds() {
    criterion(5, "union/intersection probability bounds", || {
        let leq = build_leq_pfap();
        let coleq = complement(&leq).map_err(|e| e.to_string())?;
        // Amplified factors with error bound (9/19)² = 81/361 ≤ 1/4.
        let amp = |m: &MachineDescription| Composite::TensorPower {
            k: 12,
            factor: Box::new(Composite::Machine(Box::new(m.clone()))),
        };
        let oracle = oracle_leq();
        let accept = |c: &Composite, w: &str| -> Result<Rational, String> {
            let o = eval_composite_exact(c, w).map_err(|e| e.to_string())?;
            Ok(postselect(&o, &tol()).map_err(|e| e.to_string())?.accept_prob)
        };

        // Both factors recognize the same language.
        let u_same = Composite::Union(Box::new(amp(&leq)), Box::new(amp(&leq)));
        let i_same = Composite::Intersection(Box::new(amp(&leq)), Box::new(amp(&leq)));
        // Factors recognize complementary languages: every input is a
        // member of exactly one.
        let u_mixed = Composite::Union(Box::new(amp(&leq)), Box::new(amp(&coleq)));

        for w in words(8) {
            let member = oracle.member(&w);
            let pu = accept(&u_same, &w)?;
            let pi = accept(&i_same, &w)?;
            if member {
                if pu < rat(15, 16) {
                    return Err(format!("union accept {pu} < 15/16 on joint member {w:?}"));
                }
                if pi < rat(9, 16) {
                    return Err(format!("intersection accept {pi} < 9/16 on joint member {w:?}"));
                }
            } else {
                if pu > rat(7, 16) {
                    return Err(format!("union accept {pu} > 7/16 on joint nonmember {w:?}"));
                }
                if pi > rat(1, 16) {
                    return Err(format!(
                        "intersection accept {pi} > 1/16 on joint nonmember {w:?}"
                    ));
                }
            }
            let pm = accept(&u_mixed, &w)?;
            if pm < rat(3, 4) {
                return Err(format!(
                    "union accept {pm} < 3/4 on {w:?}, a member of one factor"
                ));
            }
        }
        Ok(())
    });
}

#[test]
fn criterion_06_unbounded_standard_threshold() {
    criterion(6, "postselection → standard machine threshold", || {
        let m = build_leq_pfap();
        let s = to_unbounded_standard(&m).map_err(|e| e.to_string())?;
        let half = rat(1, 2);
        for w in words(10) {
            let post = postselect(&evaluate_pfap(&m, &w).unwrap(), &tol())
                .map_err(|e| format!("{w:?}: {e}"))?;
            let os = evaluate_pfap(&s, &w).unwrap();
            if (post.accept_prob > half) != (os.p_a > half) {
                return Err(format!("1/2-threshold disagreement on {w:?}"));
            }
        }
        Ok(())
    });
}

#[test]
fn criterion_07_riga_equivalence() {
    criterion(7, "Riga → standard conversion equivalence", || {
        let m = build_riga_demo();
        let s = riga_to_standard(&m, DEFAULT_STATE_CAP).map_err(|e| e.to_string())?;
        for w in words(8) {
            let dr = riga_decide(&m, &evaluate_pfap(&m, &w).unwrap(), &tol())
                .map_err(|e| format!("{w:?}: {e}"))?;
            let ds = postselect(&evaluate_pfap(&s, &w).unwrap(), &tol())
                .map_err(|e| format!("{w:?}: {e}"))?;
            if dr != ds {
                return Err(format!("decisions differ on {w:?}"));
            }
            // Inputs with zero postselection mass (any 'b') must be decided
            // with probability one per χ = accept.
            if w.contains('b') && !dr.accept_prob.is_one() {
                return Err(format!("zero-mass input {w:?} not accepted outright"));
            }
        }
        Ok(())
    });
}

#[test]
fn criterion_08_one_sided_quantum_witness() {
    criterion(8, "one-sided palindrome witness", || {
        let m = build_lpal_qfap();
        let verdict = classify(
            &Subject::Machine(&m),
            &oracle_lpal(),
            &RecognitionMode::OneSided(rat(1, 4)),
            8,
            &tol(),
        )
        .map_err(|e| e.to_string())?;
        if !verdict.holds {
            return Err(format!(
                "one-sided claim fails, counterexample {:?}",
                verdict.counterexample
            ));
        }
        for w in words(8) {
            if w.chars().eq(w.chars().rev()) {
                let o = evaluate_qfap(&m, &w).unwrap();
                if o.p_r >= 1e-9 {
                    return Err(format!("palindrome {w:?} has reject mass {}", o.p_r));
                }
            }
        }
        Ok(())
    });
}

/// Two-state measured machine whose halting-labeled operators annihilate
/// the collector state, so halted mass keeps its category after
/// partitioning.
fn measured_witness() -> MachineDescription {
    let n = 2;
    let (q0, q1) = (0, 1);
    let labeled = |label: &str, m: Mat<Complex64>| KrausOp {
        outcome: Some(label.into()),
        matrix: m,
    };
    let branch = |keep: f64, to_a: f64, to_r: f64| -> Superoperator {
        let mut ec = Mat::zeros(n, n);
        ec[(q0, q0)] = Complex64::new(keep.sqrt(), 0.0);
        ec[(q1, q1)] = Complex64::new(1.0, 0.0);
        let mut ea = Mat::zeros(n, n);
        ea[(q1, q0)] = Complex64::new(to_a.sqrt(), 0.0);
        let mut er = Mat::zeros(n, n);
        er[(q1, q0)] = Complex64::new(to_r.sqrt(), 0.0);
        Superoperator {
            ops: vec![labeled("c", ec), labeled("a", ea), labeled("r", er)],
        }
    };
    let mut transitions = BTreeMap::new();
    transitions.insert(ExtSym::EndL, TransitionBlock::Quantum(branch(1.0, 0.0, 0.0)));
    transitions.insert(
        ExtSym::Sym('a'),
        TransitionBlock::Quantum(branch(0.5, 0.25, 0.25)),
    );
    transitions.insert(
        ExtSym::Sym('b'),
        TransitionBlock::Quantum(branch(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)),
    );
    transitions.insert(
        ExtSym::EndR,
        TransitionBlock::Quantum(branch(0.0, 0.75, 0.25)),
    );
    MachineDescription {
        kind: MachineKind::MeasuredQfa,
        alphabet: vec!['a', 'b'],
        states: vec![
            ("q0".into(), StateRole::Continuing),
            ("q1".into(), StateRole::Continuing),
        ],
        initial: "q0".into(),
        chi: None,
        outcomes: Some(vec!["c".into(), "a".into(), "r".into()]),
        transitions,
    }
}

#[test]
fn criterion_09_state_partitioning() {
    criterion(9, "measured-machine state partitioning", || {
        let m = measured_witness();
        let p = partition_states(&m).map_err(|e| e.to_string())?;
        if p.n_states() != m.n_states() * 3 {
            return Err(format!("expected 6 states, got {}", p.n_states()));
        }
        let strict = TolerancePolicy::new(1e-12, 1e-9).map_err(|e| e.to_string())?;
        let report = validate_wellformed(&p, &strict);
        if !report.ok() {
            return Err(format!("well-formedness violations: {:?}", report.violations));
        }
        for w in words(8) {
            let measured = evaluate_measured(&m, &w, "c").map_err(|e| e.to_string())?;
            let get = |label: &str| measured.iter().find(|(l, _)| l == label).unwrap().1;
            let o = evaluate_qfap(&p, &w).unwrap();
            if (o.p_a - get("a")).abs() > 1e-9
                || (o.p_r - get("r")).abs() > 1e-9
                || (o.p_cont - get("c")).abs() > 1e-9
            {
                return Err(format!("outcome probabilities differ on {w:?}"));
            }
        }
        Ok(())
    });
}

/// NFA over {a, b} accepting exactly a*.
fn nfa_only_as() -> MachineDescription {
    let n = 2;
    let (s, d) = (0, 1);
    let mut ma = Mat::zeros(n, n);
    ma[(s, s)] = Rational::one();
    ma[(d, d)] = Rational::one();
    let mut mb = Mat::zeros(n, n);
    mb[(d, s)] = Rational::one();
    mb[(d, d)] = Rational::one();
    let mut transitions = BTreeMap::new();
    transitions.insert(ExtSym::EndL, TransitionBlock::Stochastic(Mat::identity(n)));
    transitions.insert(ExtSym::Sym('a'), TransitionBlock::Stochastic(ma));
    transitions.insert(ExtSym::Sym('b'), TransitionBlock::Stochastic(mb));
    transitions.insert(ExtSym::EndR, TransitionBlock::Stochastic(Mat::identity(n)));
    MachineDescription {
        kind: MachineKind::Nfa,
        alphabet: vec!['a', 'b'],
        states: vec![
            ("s".into(), StateRole::Accept),
            ("d".into(), StateRole::Continuing),
        ],
        initial: "s".into(),
        chi: None,
        outcomes: None,
        transitions,
    }
}

/// NFA over {a, b} accepting exactly the strings containing a 'b'.
fn nfa_contains_b() -> MachineDescription {
    let n = 2;
    let (s, f) = (0, 1);
    let mut ma = Mat::zeros(n, n);
    ma[(s, s)] = Rational::one();
    ma[(f, f)] = Rational::one();
    let mut mb = Mat::zeros(n, n);
    mb[(f, s)] = Rational::one();
    mb[(f, f)] = Rational::one();
    let mut transitions = BTreeMap::new();
    transitions.insert(ExtSym::EndL, TransitionBlock::Stochastic(Mat::identity(n)));
    transitions.insert(ExtSym::Sym('a'), TransitionBlock::Stochastic(ma));
    transitions.insert(ExtSym::Sym('b'), TransitionBlock::Stochastic(mb));
    transitions.insert(ExtSym::EndR, TransitionBlock::Stochastic(Mat::identity(n)));
    MachineDescription {
        kind: MachineKind::Nfa,
        alphabet: vec!['a', 'b'],
        states: vec![
            ("s".into(), StateRole::Continuing),
            ("f".into(), StateRole::Accept),
        ],
        initial: "s".into(),
        chi: None,
        outcomes: None,
        transitions,
    }
}

#[test]
fn criterion_10_error_free_construction() {
    criterion(10, "error-free machine from a cutpoint-zero pair", || {
        let m = errorfree_from_cutpoint_pair(&nfa_only_as(), &nfa_contains_b())
            .map_err(|e| e.to_string())?;
        let oracle = LanguageOracle::new("a*", vec!['a', 'b'], |w: &str| {
            w.chars().all(|c| c == 'a')
        });
        let verdict = classify(
            &Subject::Machine(&m),
            &oracle,
            &RecognitionMode::ErrorFree,
            8,
            &tol(),
        )
        .map_err(|e| e.to_string())?;
        if !verdict.holds {
            return Err(format!(
                "error-free claim fails, counterexample {:?}",
                verdict.counterexample
            ));
        }
        for w in words(8) {
            let o = evaluate_pfap(&m, &w).unwrap();
            if o.postselection_mass().is_zero() {
                return Err(format!("zero postselection mass on {w:?}"));
            }
        }
        Ok(())
    });
}
