//! `psim` — command-line driver for simulating and transforming real-time
//! probabilistic and quantum automata with postselection and restart.
//!
//! Exit codes: 0 success (or verdict holds), 1 usage / I/O / parse
//! failure, 2 validation failure or verdict does not hold.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use psim_core::lab::{
    self, build_leq_pfap, build_leqbar_machine, build_lpal_qfap, build_rotation_qfap,
    enumerate_strings, LanguageOracle, RecognitionMode, Subject,
};
use psim_core::machine::{self, format_rational, parse_rational, MachineDescription, MachineKind};
use psim_core::numerics::TolerancePolicy;
use psim_core::semantics::{
    self, evaluate, postselect, riga_decide, simulate_restart, EvalResult, DEFAULT_ROUND_CAP,
};
use psim_core::transforms::{self, Composite, CutpointSide, ShortAnswers, DEFAULT_STATE_CAP};
use psim_core::EvalError;

#[derive(Parser)]
#[command(
    name = "psim",
    version,
    about = "Simulate and transform postselection/restart automata"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check a machine file for structural well-formedness.
    Validate {
        /// Machine file to check.
        path: PathBuf,
    },
    /// Evaluate a machine on words and print a CSV of probabilities.
    Run {
        /// Machine file to run.
        path: PathBuf,
        /// Evaluate a single word (may be empty).
        #[arg(long, conflicts_with = "enumerate")]
        word: Option<String>,
        /// Evaluate every word up to this length, in length-lex order.
        #[arg(long)]
        enumerate: Option<usize>,
        /// Also run a Monte Carlo restart simulation per word
        /// (restart_pfa machines only); adds mc columns to the CSV.
        #[arg(long)]
        mc: bool,
        /// Number of simulated restart runs per word.
        #[arg(long, default_value_t = 100_000)]
        rounds: u64,
        /// RNG seed for the Monte Carlo simulation.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Apply a machine-to-machine construction and write the result.
    Transform {
        /// One of: to-restart, to-postselect, complement, union,
        /// intersect, amplify, riga-to-std, errorfree-pair,
        /// riga-errorfree, to-unbounded, prefix-dispatch, partition.
        op: String,
        /// Input machine (or composite) files; arity depends on the op.
        inputs: Vec<PathBuf>,
        /// Error bound for amplify, as a rational like 9/19.
        #[arg(long)]
        eps: Option<String>,
        /// Side for riga-errorfree: "l" (machine certifies the language)
        /// or "col" (machine certifies the complement).
        #[arg(long)]
        side: Option<String>,
        /// Routing entries for prefix-dispatch, like "a=0" (repeatable).
        #[arg(long = "route")]
        routes: Vec<String>,
        /// Hardwired answer for the empty input in prefix-dispatch:
        /// accept or reject.
        #[arg(long)]
        empty: Option<String>,
        /// Hardwired answers for single-symbol inputs in prefix-dispatch,
        /// like "a=reject" (repeatable).
        #[arg(long = "single")]
        singles: Vec<String>,
        /// Emit a virtual composite descriptor instead of materializing.
        #[arg(long = "virtual")]
        virtual_: bool,
        /// Write the result here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a recognition claim against a language oracle by enumeration.
    Classify {
        /// Machine or composite file to classify.
        path: PathBuf,
        /// Built-in oracle name (leq, lpal, leqbar) or a DFA file path.
        #[arg(long)]
        oracle: String,
        /// Recognition mode: bounded:E, cutpoint:L, ncutpoint:L,
        /// onesided:E, exact, or nondet (E, L rationals like 9/19).
        #[arg(long)]
        mode: String,
        /// Enumerate every word up to this length.
        #[arg(long, default_value_t = 8)]
        max_len: usize,
    },
    /// Write the four bundled witness machine files.
    Examples {
        /// Directory to write into.
        #[arg(long, default_value = ".")]
        dir: PathBuf,
    },
    /// Time machine evaluation over enumerated strings.
    Bench {
        /// Machine file to time; defaults to the bundled balanced-count
        /// witness.
        path: Option<PathBuf>,
        /// Enumerate every word up to this length.
        #[arg(long, default_value_t = 10)]
        max_len: usize,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match dispatch(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    let tol = tolerance()?;
    match cli.cmd {
        Cmd::Validate { path } => cmd_validate(&path, &tol),
        Cmd::Run {
            path,
            word,
            enumerate,
            mc,
            rounds,
            seed,
            output,
        } => cmd_run(&path, word, enumerate, mc, rounds, seed, output, &tol),
        Cmd::Transform {
            op,
            inputs,
            eps,
            side,
            routes,
            empty,
            singles,
            virtual_,
            out,
        } => cmd_transform(
            &op, &inputs, eps, side, &routes, empty, &singles, virtual_, out,
        ),
        Cmd::Classify {
            path,
            oracle,
            mode,
            max_len,
        } => cmd_classify(&path, &oracle, &mode, max_len, &tol),
        Cmd::Examples { dir } => cmd_examples(&dir),
        Cmd::Bench { path, max_len } => cmd_bench(path.as_deref(), max_len),
    }
}

/// Tolerance policy, with eps_compare overridable through PSIM_TOLERANCE.
fn tolerance() -> Result<TolerancePolicy> {
    let base = TolerancePolicy::default();
    match std::env::var("PSIM_TOLERANCE") {
        Ok(s) => {
            let eps: f64 = s
                .trim()
                .parse()
                .map_err(|_| anyhow!("PSIM_TOLERANCE must be a number, got {s:?}"))?;
            TolerancePolicy::new(base.eps_validate.min(eps), eps)
                .map_err(|e| anyhow!("PSIM_TOLERANCE: {e}"))
        }
        Err(_) => Ok(base),
    }
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_machine(path: &Path, tol: &TolerancePolicy) -> Result<MachineDescription> {
    let text = read_file(path)?;
    machine::load_with_tolerance(&text, tol)
        .with_context(|| format!("loading machine {}", path.display()))
}

enum Loaded {
    Machine(MachineDescription),
    Composite(Composite),
}

/// Load a machine or composite file, distinguished by the top-level
/// "composite" key.
fn load_any(path: &Path, tol: &TolerancePolicy) -> Result<Loaded> {
    let text = read_file(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))?;
    if value.get("composite").is_some() {
        Ok(Loaded::Composite(transforms::load_composite(&text).with_context(
            || format!("loading composite {}", path.display()),
        )?))
    } else {
        load_machine(path, tol).map(Loaded::Machine)
    }
}

fn write_or_print(out: Option<&Path>, content: &str) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, content).with_context(|| format!("writing {}", path.display()))?;
            println!("wrote {}", path.display());
        }
        None => print!("{content}"),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

fn cmd_validate(path: &Path, tol: &TolerancePolicy) -> Result<i32> {
    let text = read_file(path)?;
    // Parse without the structural check so violations can be itemized.
    let m = match machine::load_with_tolerance(&text, tol) {
        Ok(m) => m,
        Err(psim_core::ModelError::Violations(v)) => {
            for line in &v {
                println!("violation: {line}");
            }
            return Ok(2);
        }
        Err(e) => return Err(anyhow!(e).context(format!("loading {}", path.display()))),
    };
    let report = machine::validate_wellformed(&m, tol);
    if report.ok() {
        for w in &report.warnings {
            println!("warning: {w}");
        }
        println!("OK");
        Ok(0)
    } else {
        for v in &report.violations {
            println!("violation: {v}");
        }
        Ok(2)
    }
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

/// Doubles are printed with 12 significant digits.
fn fmt_f(x: f64) -> String {
    format!("{x:.11e}")
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    path: &Path,
    word: Option<String>,
    enumerate: Option<usize>,
    mc: bool,
    rounds: u64,
    seed: u64,
    output: Option<PathBuf>,
    tol: &TolerancePolicy,
) -> Result<i32> {
    let m = load_machine(path, tol)?;
    let words: Vec<String> = match (word, enumerate) {
        (Some(w), None) => vec![w],
        (None, Some(n)) => enumerate_strings(&m.alphabet, n),
        _ => bail!("exactly one of --word and --enumerate must be given"),
    };
    if mc && m.kind != MachineKind::RestartPfa {
        bail!(
            "--mc requires a restart_pfa machine, got {}",
            m.kind.as_str()
        );
    }
    let mut csv = String::from("input,p_a,p_r,p_nh,P_accept,P_reject");
    if mc {
        csv.push_str(",mc_accept_freq,rounds,seed");
    }
    csv.push('\n');
    for w in &words {
        let result = evaluate(&m, w)?;
        let (raw, decision) = match &result {
            EvalResult::Exact(o) => {
                let d = if m.kind.is_riga() {
                    Some(riga_decide(&m, o, tol)?)
                } else {
                    match postselect(o, tol) {
                        Ok(d) => Some(d),
                        Err(EvalError::ZeroPostselectionMass) => None,
                        Err(e) => return Err(e.into()),
                    }
                };
                (
                    [
                        format_rational(&o.p_a),
                        format_rational(&o.p_r),
                        format_rational(&o.p_nh),
                    ],
                    d.map(|d| {
                        [
                            format_rational(&d.accept_prob),
                            format_rational(&d.reject_prob),
                        ]
                    }),
                )
            }
            EvalResult::Approx(o) => {
                let d = if m.kind.is_riga() {
                    Some(riga_decide(&m, o, tol)?)
                } else {
                    match postselect(o, tol) {
                        Ok(d) => Some(d),
                        Err(EvalError::ZeroPostselectionMass) => None,
                        Err(e) => return Err(e.into()),
                    }
                };
                (
                    [fmt_f(o.p_a), fmt_f(o.p_r), fmt_f(o.p_nh)],
                    d.map(|d| [fmt_f(d.accept_prob), fmt_f(d.reject_prob)]),
                )
            }
        };
        let [pa, pr, pnh] = raw;
        let [dacc, drej] = decision
            .unwrap_or_else(|| ["ZERO_POSTSELECTION".into(), "ZERO_POSTSELECTION".into()]);
        csv.push_str(&format!("{w},{pa},{pr},{pnh},{dacc},{drej}"));
        if mc {
            let rep = simulate_restart(&m, w, rounds, seed, DEFAULT_ROUND_CAP)?;
            csv.push_str(&format!(
                ",{},{},{}",
                fmt_f(rep.accept_freq),
                rep.rounds_run,
                rep.seed
            ));
        }
        csv.push('\n');
    }
    write_or_print(output.as_deref(), &csv)?;
    Ok(0)
}

// ---------------------------------------------------------------------------
// transform
// ---------------------------------------------------------------------------

fn as_composite(l: Loaded) -> Composite {
    match l {
        Loaded::Machine(m) => Composite::Machine(Box::new(m)),
        Loaded::Composite(c) => c,
    }
}

fn want_machine(l: Loaded, path: &Path) -> Result<MachineDescription> {
    match l {
        Loaded::Machine(m) => Ok(m),
        Loaded::Composite(_) => bail!(
            "{} is a composite descriptor; pass --virtual or materialize it first",
            path.display()
        ),
    }
}

fn parse_routing(routes: &[String]) -> Result<BTreeMap<char, usize>> {
    let mut out = BTreeMap::new();
    for r in routes {
        let (sym, idx) = r
            .split_once('=')
            .ok_or_else(|| anyhow!("--route entries look like a=0, got {r:?}"))?;
        let c = single_char(sym)?;
        let i: usize = idx
            .parse()
            .ok()
            .filter(|&i| i <= 1)
            .ok_or_else(|| anyhow!("--route target must be 0 or 1, got {idx:?}"))?;
        out.insert(c, i);
    }
    Ok(out)
}

fn parse_short(empty: Option<String>, singles: &[String]) -> Result<ShortAnswers> {
    let empty_accepts = parse_answer(
        empty
            .as_deref()
            .ok_or_else(|| anyhow!("prefix-dispatch requires --empty accept|reject"))?,
    )?;
    let mut single = BTreeMap::new();
    for s in singles {
        let (sym, ans) = s
            .split_once('=')
            .ok_or_else(|| anyhow!("--single entries look like a=reject, got {s:?}"))?;
        single.insert(single_char(sym)?, parse_answer(ans)?);
    }
    Ok(ShortAnswers {
        empty_accepts,
        single,
    })
}

fn parse_answer(s: &str) -> Result<bool> {
    match s {
        "accept" => Ok(true),
        "reject" => Ok(false),
        _ => bail!("answers are accept or reject, got {s:?}"),
    }
}

fn single_char(s: &str) -> Result<char> {
    let mut it = s.chars();
    match (it.next(), it.next()) {
        (Some(c), None) => Ok(c),
        _ => bail!("expected a single symbol, got {s:?}"),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_transform(
    op: &str,
    inputs: &[PathBuf],
    eps: Option<String>,
    side: Option<String>,
    routes: &[String],
    empty: Option<String>,
    singles: &[String],
    virtual_: bool,
    out: Option<PathBuf>,
) -> Result<i32> {
    let tol = tolerance()?;
    let arity = |n: usize| -> Result<()> {
        if inputs.len() != n {
            bail!("{op} takes {n} input file(s), got {}", inputs.len());
        }
        Ok(())
    };
    let load1 = || -> Result<Loaded> {
        arity(1)?;
        load_any(&inputs[0], &tol)
    };
    let load2 = || -> Result<(Loaded, Loaded)> {
        arity(2)?;
        Ok((load_any(&inputs[0], &tol)?, load_any(&inputs[1], &tol)?))
    };

    enum Output {
        Machine(MachineDescription),
        Composite(Composite),
    }

    let result = match op {
        "to-restart" => Output::Machine(transforms::to_restart(&want_machine(
            load1()?,
            &inputs[0],
        )?)?),
        "to-postselect" => Output::Machine(transforms::to_postselection(&want_machine(
            load1()?,
            &inputs[0],
        )?)?),
        "complement" => {
            if virtual_ {
                Output::Composite(Composite::Complement(Box::new(as_composite(load1()?))))
            } else {
                Output::Machine(transforms::complement(&want_machine(load1()?, &inputs[0])?)?)
            }
        }
        "union" | "intersect" => {
            let (a, b) = load2()?;
            if virtual_ {
                let (a, b) = (Box::new(as_composite(a)), Box::new(as_composite(b)));
                Output::Composite(if op == "union" {
                    Composite::Union(a, b)
                } else {
                    Composite::Intersection(a, b)
                })
            } else {
                let a = want_machine(a, &inputs[0])?;
                let b = want_machine(b, &inputs[1])?;
                Output::Machine(if op == "union" {
                    transforms::union(&a, &b, DEFAULT_STATE_CAP)?
                } else {
                    transforms::intersect(&a, &b, DEFAULT_STATE_CAP)?
                })
            }
        }
        "amplify" => {
            let eps = eps.ok_or_else(|| anyhow!("amplify requires --eps p/q"))?;
            let eps = parse_rational(&eps).map_err(|e| anyhow!("--eps: {e}"))?;
            let m = want_machine(load1()?, &inputs[0])?;
            let (plan, composite) = transforms::amplify(&m, &eps)?;
            println!(
                "k = {}, eps_out_bound = {}",
                plan.k,
                format_rational(&plan.eps_out_bound)
            );
            Output::Composite(composite)
        }
        "riga-to-std" => Output::Machine(transforms::riga_to_standard(
            &want_machine(load1()?, &inputs[0])?,
            DEFAULT_STATE_CAP,
        )?),
        "errorfree-pair" => {
            let (a, b) = load2()?;
            Output::Machine(transforms::errorfree_from_cutpoint_pair(
                &want_machine(a, &inputs[0])?,
                &want_machine(b, &inputs[1])?,
            )?)
        }
        "riga-errorfree" => {
            let side = match side.as_deref() {
                Some("l") | Some("L") => CutpointSide::L,
                Some("col") | Some("coL") => CutpointSide::CoL,
                _ => bail!("riga-errorfree requires --side l|col"),
            };
            Output::Machine(transforms::riga_errorfree_from_cutpoint0(
                &want_machine(load1()?, &inputs[0])?,
                side,
            )?)
        }
        "to-unbounded" => Output::Machine(transforms::to_unbounded_standard(&want_machine(
            load1()?,
            &inputs[0],
        )?)?),
        "prefix-dispatch" => {
            let routing = parse_routing(routes)?;
            let short = parse_short(empty, singles)?;
            let (a, b) = load2()?;
            if virtual_ {
                Output::Composite(Composite::PrefixDispatch {
                    routing,
                    short,
                    factors: [Box::new(as_composite(a)), Box::new(as_composite(b))],
                })
            } else {
                Output::Machine(transforms::prefix_dispatch(
                    &want_machine(a, &inputs[0])?,
                    &want_machine(b, &inputs[1])?,
                    &routing,
                    &short,
                )?)
            }
        }
        "partition" => Output::Machine(transforms::partition_states(&want_machine(
            load1()?,
            &inputs[0],
        )?)?),
        other => bail!("unknown transform op {other:?}"),
    };

    let text = match result {
        Output::Machine(m) => machine::save(&m),
        Output::Composite(c) => transforms::save_composite(&c),
    };
    write_or_print(out.as_deref(), &text)?;
    Ok(0)
}

// ---------------------------------------------------------------------------
// classify
// ---------------------------------------------------------------------------

fn parse_mode(spec: &str) -> Result<RecognitionMode> {
    let (name, param) = match spec.split_once(':') {
        Some((n, p)) => (n, Some(p)),
        None => (spec, None),
    };
    let rational = |p: Option<&str>| -> Result<_> {
        let p = p.ok_or_else(|| anyhow!("mode {name:?} needs a rational parameter"))?;
        parse_rational(p).map_err(|e| anyhow!("mode parameter: {e}"))
    };
    Ok(match name {
        "bounded" => RecognitionMode::BoundedError(rational(param)?),
        "cutpoint" => RecognitionMode::StrictCutpoint(rational(param)?),
        "ncutpoint" => RecognitionMode::NonstrictCutpoint(rational(param)?),
        "onesided" => RecognitionMode::OneSided(rational(param)?),
        "exact" => RecognitionMode::ErrorFree,
        "nondet" => RecognitionMode::Nondeterministic,
        other => bail!("unknown mode {other:?}"),
    })
}

fn resolve_oracle(name: &str, tol: &TolerancePolicy) -> Result<LanguageOracle> {
    Ok(match name {
        "leq" => lab::oracle_leq(),
        "lpal" => lab::oracle_lpal(),
        "leqbar" => lab::oracle_leqbar(),
        path => {
            let m = load_machine(Path::new(path), tol)
                .with_context(|| format!("oracle {name:?} is not built in; tried as a DFA file"))?;
            lab::oracle_from_dfa(&m)?
        }
    })
}

fn cmd_classify(
    path: &Path,
    oracle: &str,
    mode_spec: &str,
    max_len: usize,
    tol: &TolerancePolicy,
) -> Result<i32> {
    let loaded = load_any(path, tol)?;
    let oracle = resolve_oracle(oracle, tol)?;
    let mode = parse_mode(mode_spec)?;
    let subject = match &loaded {
        Loaded::Machine(m) => Subject::Machine(m),
        Loaded::Composite(c) => Subject::Virtual(c),
    };
    let verdict = lab::classify(&subject, &oracle, &mode, max_len, tol)?;
    println!("language: {}", oracle.name);
    println!("mode: {mode_spec}");
    println!("max_len: {}", verdict.max_len_checked);
    println!("holds: {}", verdict.holds);
    if let Some((w, p)) = &verdict.worst_member {
        println!("worst member: {w:?} accepted with {p}");
    }
    if let Some((w, p)) = &verdict.worst_nonmember {
        println!("worst nonmember: {w:?} accepted with {p}");
    }
    if let Some(c) = &verdict.counterexample {
        println!("counterexample: {c:?}");
    }
    let field = |v: &Option<(String, lab::ProbValue)>| -> String {
        match v {
            Some((w, p)) => format!("{w}:{p}"),
            None => "-".into(),
        }
    };
    println!(
        "VERDICT holds={} worst_member={} worst_nonmember={}",
        verdict.holds,
        field(&verdict.worst_member),
        field(&verdict.worst_nonmember)
    );
    Ok(if verdict.holds { 0 } else { 2 })
}

// ---------------------------------------------------------------------------
// examples
// ---------------------------------------------------------------------------

fn cmd_examples(dir: &Path) -> Result<i32> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let witnesses: [(&str, MachineDescription); 4] = [
        ("leq.pfap.json", build_leq_pfap()),
        ("lpal.qfap.json", build_lpal_qfap()),
        (
            "rotation.qfap.json",
            build_rotation_qfap(std::f64::consts::FRAC_PI_4),
        ),
        ("leqbar.pfap.json", build_leqbar_machine()),
    ];
    for (name, m) in witnesses {
        let path = dir.join(name);
        std::fs::write(&path, machine::save(&m))
            .with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {}", path.display());
    }
    Ok(0)
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

fn cmd_bench(path: Option<&Path>, max_len: usize) -> Result<i32> {
    let tol = tolerance()?;
    let m = match path {
        Some(p) => load_machine(p, &tol)?,
        None => build_leq_pfap(),
    };
    let words = enumerate_strings(&m.alphabet, max_len);
    let start = std::time::Instant::now();
    for w in &words {
        let _ = semantics::evaluate(&m, w)?;
    }
    let elapsed = start.elapsed();
    println!(
        "evaluated {} strings (max_len {max_len}) in {:.3} s ({:.0} strings/s)",
        words.len(),
        elapsed.as_secs_f64(),
        words.len() as f64 / elapsed.as_secs_f64()
    );
    Ok(0)
}
