//! End-to-end tests for the `psim` binary: exit codes, CSV output,
//! transform plumbing, and classification verdicts.

use assert_cmd::Command;
use predicates::prelude::*;
use std::path::{Path, PathBuf};

fn psim() -> Command {
    Command::cargo_bin("psim").unwrap()
}

/// Write the bundled witness files into a temp dir and return it.
fn examples_dir() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    psim()
        .args(["examples", "--dir"])
        .arg(dir.path())
        .assert()
        .success();
    let path = dir.path().to_path_buf();
    (dir, path)
}

fn leq(dir: &Path) -> PathBuf {
    dir.join("leq.pfap.json")
}

#[test]
fn examples_writes_all_four_witnesses() {
    let (_g, dir) = examples_dir();
    for name in [
        "leq.pfap.json",
        "lpal.qfap.json",
        "rotation.qfap.json",
        "leqbar.pfap.json",
    ] {
        assert!(dir.join(name).exists(), "missing {name}");
    }
}

#[test]
fn validate_accepts_every_bundled_witness() {
    let (_g, dir) = examples_dir();
    for name in [
        "leq.pfap.json",
        "lpal.qfap.json",
        "rotation.qfap.json",
        "leqbar.pfap.json",
    ] {
        psim()
            .arg("validate")
            .arg(dir.join(name))
            .assert()
            .success()
            .stdout(predicate::str::contains("OK"));
    }
}

#[test]
fn validate_reports_violations_with_exit_2() {
    let (_g, dir) = examples_dir();
    let text = std::fs::read_to_string(leq(&dir)).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["transitions"]["a"][0][0] = serde_json::json!("2/3");
    let bad = dir.join("bad.json");
    std::fs::write(&bad, serde_json::to_string(&v).unwrap()).unwrap();
    psim()
        .arg("validate")
        .arg(&bad)
        .assert()
        .code(2)
        .stdout(predicate::str::contains("violation:"));
}

#[test]
fn validate_missing_file_exits_1() {
    psim()
        .args(["validate", "/no/such/file.json"])
        .assert()
        .code(1);
}

#[test]
fn run_prints_the_exact_row_for_a_balanced_word() {
    let (_g, dir) = examples_dir();
    psim()
        .arg("run")
        .arg(leq(&dir))
        .args(["--word", "ab"])
        .assert()
        .success()
        .stdout(predicate::str::contains(
            "input,p_a,p_r,p_nh,P_accept,P_reject\nab,9/68,2/17,3/4,9/17,8/17\n",
        ));
}

#[test]
fn run_enumerate_covers_length_lex_order() {
    let (_g, dir) = examples_dir();
    let out = psim()
        .arg("run")
        .arg(leq(&dir))
        .args(["--enumerate", "2"])
        .assert()
        .success()
        .get_output()
        .stdout
        .clone();
    let out = String::from_utf8(out).unwrap();
    let inputs: Vec<&str> = out
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(inputs, ["", "a", "b", "aa", "ab", "ba", "bb"]);
}

#[test]
fn run_is_deterministic() {
    let (_g, dir) = examples_dir();
    let once = || {
        psim()
            .arg("run")
            .arg(dir.join("lpal.qfap.json"))
            .args(["--enumerate", "4"])
            .assert()
            .success()
            .get_output()
            .stdout
            .clone()
    };
    assert_eq!(once(), once());
}

#[test]
fn zero_postselection_mass_is_flagged_for_standard_machines() {
    // A machine that halts everything into the non-postselecting state
    // leaves nothing to condition on.
    let (_g, dir) = examples_dir();
    let text = std::fs::read_to_string(leq(&dir)).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    // Reroute all END_R mass into the nonpost_halt state (last row).
    let n = v["states"].as_array().unwrap().len();
    let end_r = v["transitions"]["END_R"].as_array().unwrap().clone();
    let mut replaced = vec![vec![serde_json::json!("0"); n]; n];
    for j in 0..n {
        let mut col_sum_zero = true;
        for (i, row) in end_r.iter().enumerate() {
            if row[j] != serde_json::json!("0") {
                col_sum_zero = false;
                let _ = i;
            }
        }
        assert!(!col_sum_zero);
        replaced[n - 1][j] = serde_json::json!("1");
    }
    v["transitions"]["END_R"] = serde_json::json!(replaced);
    let path = dir.join("allhalt.json");
    std::fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
    psim()
        .arg("run")
        .arg(&path)
        .args(["--word", "ab"])
        .assert()
        .success()
        .stdout(predicate::str::contains("ZERO_POSTSELECTION"));
}

#[test]
fn riga_machine_decides_zero_mass_inputs_by_chi() {
    let dir = tempfile::tempdir().unwrap();
    let m = psim_core::lab::build_riga_demo();
    let path = dir.path().join("riga.json");
    std::fs::write(&path, psim_core::machine::save(&m)).unwrap();
    // A word containing 'b' drains the postselecting mass entirely;
    // with chi = accept the empty condition means accept.
    psim()
        .arg("run")
        .arg(&path)
        .args(["--word", "b"])
        .assert()
        .success()
        .stdout(predicate::str::contains("b,0,0,1,1,0"));
}

#[test]
fn monte_carlo_columns_track_the_closed_form() {
    let (_g, dir) = examples_dir();
    let restart = dir.join("leq.restart.json");
    psim()
        .args(["transform", "to-restart"])
        .arg(leq(&dir))
        .arg("--out")
        .arg(&restart)
        .assert()
        .success();
    let out = psim()
        .arg("run")
        .arg(&restart)
        .args(["--word", "ab", "--mc", "--rounds", "40000", "--seed", "1"])
        .assert()
        .success()
        .get_output()
        .stdout
        .clone();
    let out = String::from_utf8(out).unwrap();
    let header = out.lines().next().unwrap();
    assert_eq!(
        header,
        "input,p_a,p_r,p_nh,P_accept,P_reject,mc_accept_freq,rounds,seed"
    );
    let row: Vec<&str> = out.lines().nth(1).unwrap().split(',').collect();
    let freq: f64 = row[6].parse().unwrap();
    assert!((freq - 9.0 / 17.0).abs() < 0.02, "freq {freq}");
    assert_eq!(row[8], "1");
}

#[test]
fn mc_rejects_non_restart_machines() {
    let (_g, dir) = examples_dir();
    psim()
        .arg("run")
        .arg(leq(&dir))
        .args(["--word", "ab", "--mc"])
        .assert()
        .code(1)
        .stderr(predicate::str::contains("restart_pfa"));
}

#[test]
fn complement_twice_restores_the_outcome_distribution() {
    let (_g, dir) = examples_dir();
    let c1 = dir.join("c1.json");
    let c2 = dir.join("c2.json");
    psim()
        .args(["transform", "complement"])
        .arg(leq(&dir))
        .arg("--out")
        .arg(&c1)
        .assert()
        .success();
    psim()
        .args(["transform", "complement"])
        .arg(&c1)
        .arg("--out")
        .arg(&c2)
        .assert()
        .success();
    let row = |p: &Path| {
        String::from_utf8(
            psim()
                .arg("run")
                .arg(p)
                .args(["--enumerate", "3"])
                .assert()
                .success()
                .get_output()
                .stdout
                .clone(),
        )
        .unwrap()
    };
    assert_eq!(row(&leq(&dir)), row(&c2));
}

#[test]
fn amplify_reports_the_round_count_and_classifies_tighter() {
    let (_g, dir) = examples_dir();
    let amp = dir.join("amp.json");
    psim()
        .args(["transform", "amplify"])
        .arg(leq(&dir))
        .args(["--eps", "9/19", "--out"])
        .arg(&amp)
        .assert()
        .success()
        .stdout(predicate::str::contains("k = 12, eps_out_bound = 81/361"));
    psim()
        .arg("classify")
        .arg(&amp)
        .args(["--oracle", "leq", "--mode", "bounded:81/361", "--max-len", "5"])
        .assert()
        .success()
        .stdout(predicate::str::contains("VERDICT holds=true"));
}

#[test]
fn riga_to_std_output_is_wellformed_and_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let m = psim_core::lab::build_riga_demo();
    let riga = dir.path().join("riga.json");
    std::fs::write(&riga, psim_core::machine::save(&m)).unwrap();
    let std_path = dir.path().join("std.json");
    psim()
        .args(["transform", "riga-to-std"])
        .arg(&riga)
        .arg("--out")
        .arg(&std_path)
        .assert()
        .success();
    psim()
        .arg("validate")
        .arg(&std_path)
        .assert()
        .success()
        .stdout(predicate::str::contains("OK"));
}

#[test]
fn virtual_union_descriptor_roundtrips_through_classify() {
    let (_g, dir) = examples_dir();
    let u = dir.join("union.json");
    psim()
        .args(["transform", "union"])
        .arg(leq(&dir))
        .arg(leq(&dir))
        .args(["--virtual", "--out"])
        .arg(&u)
        .assert()
        .success();
    // L union L is still L. The union lifts member acceptance to at
    // least 1-(8/17)^2 = 225/289 and nonmember acceptance to at most
    // 1-(10/19)^2 = 261/361, so the strict cutpoint 3/4 separates them.
    psim()
        .arg("classify")
        .arg(&u)
        .args(["--oracle", "leq", "--mode", "cutpoint:3/4", "--max-len", "5"])
        .assert()
        .success()
        .stdout(predicate::str::contains("VERDICT holds=true"));
}

#[test]
fn classify_failure_exits_2_with_a_counterexample() {
    let (_g, dir) = examples_dir();
    psim()
        .arg("classify")
        .arg(leq(&dir))
        .args(["--oracle", "leq", "--mode", "bounded:2/5", "--max-len", "5"])
        .assert()
        .code(2)
        .stdout(
            predicate::str::contains("holds: false")
                .and(predicate::str::contains("counterexample: \"\""))
                .and(predicate::str::contains("VERDICT holds=false")),
        );
}

#[test]
fn classify_one_sided_palindrome_witness_holds() {
    let (_g, dir) = examples_dir();
    psim()
        .arg("classify")
        .arg(dir.join("lpal.qfap.json"))
        .args(["--oracle", "lpal", "--mode", "onesided:1/4", "--max-len", "6"])
        .assert()
        .success()
        .stdout(predicate::str::contains("VERDICT holds=true"));
}

#[test]
fn prefix_dispatch_requires_short_word_answers() {
    let (_g, dir) = examples_dir();
    psim()
        .args(["transform", "prefix-dispatch"])
        .arg(leq(&dir))
        .arg(leq(&dir))
        .args(["--route", "a=0", "--route", "b=1"])
        .assert()
        .code(1)
        .stderr(predicate::str::contains("--empty"));
}

#[test]
fn unknown_transform_op_exits_1() {
    let (_g, dir) = examples_dir();
    psim()
        .args(["transform", "frobnicate"])
        .arg(leq(&dir))
        .assert()
        .code(1);
}

#[test]
fn tolerance_env_var_must_be_numeric() {
    let (_g, dir) = examples_dir();
    psim()
        .env("PSIM_TOLERANCE", "not-a-number")
        .arg("validate")
        .arg(leq(&dir))
        .assert()
        .code(1)
        .stderr(predicate::str::contains("PSIM_TOLERANCE"));
}

#[test]
fn help_exits_0_and_bad_flags_exit_1() {
    psim().arg("--help").assert().code(0);
    psim().args(["run", "--no-such-flag"]).assert().code(1);
}
