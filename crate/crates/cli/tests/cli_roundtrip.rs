//! End-to-end checks of the command-line contract: exit codes, determinism,
//! serialization round-trips, and generate → compress → verify pipelines.

use condcomp::schema::{InstanceFile, ResultFile};
use std::path::Path;
use std::process::Command;

const EXIT_OK: i32 = 0;
const EXIT_REJECT: i32 = 1;
const EXIT_BUDGET: i32 = 2;
const EXIT_INVALID: i32 = 3;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_condcomp"))
        .args(args)
        .output()
        .expect("binary runs");
    Run {
        code: out.status.code().expect("no signal"),
        stdout: String::from_utf8(out.stdout).expect("utf-8 stdout"),
        stderr: String::from_utf8(out.stderr).expect("utf-8 stderr"),
    }
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).expect("write temp file");
    path.to_str().expect("utf-8 path").to_string()
}

#[test]
fn generation_is_byte_identical_per_seed() {
    for profile in ["sunflower", "separated", "symmetric-ball", "random", "group-random"] {
        let a = run(&["gen", "--profile", profile, "--seed", "7"]);
        let b = run(&["gen", "--profile", profile, "--seed", "7"]);
        assert_eq!(a.code, EXIT_OK, "{profile}: {}", a.stderr);
        assert_eq!(a.stdout, b.stdout, "{profile}: reruns must match byte for byte");
        assert!(!a.stdout.is_empty());
    }
}

#[test]
fn pipeline_gen_compress_verify_accepts() {
    let dir = tempfile::tempdir().expect("tempdir");
    for profile in ["sunflower", "separated", "symmetric-ball", "random", "group-random"] {
        for seed in [0u64, 1, 2] {
            let inst = dir.path().join(format!("{profile}-{seed}.json"));
            let res = dir.path().join(format!("{profile}-{seed}.result.json"));
            let inst = inst.to_str().unwrap();
            let res = res.to_str().unwrap();
            let g = run(&["gen", "--profile", profile, "--seed", &seed.to_string(), "--out", inst]);
            assert_eq!(g.code, EXIT_OK, "gen {profile} {seed}: {}", g.stderr);
            let c = run(&["compress", inst, "--epsilon", "1/10", "--out", res]);
            assert_eq!(c.code, EXIT_OK, "compress {profile} {seed}: {}", c.stderr);
            let v = run(&["verify", inst, res, "--epsilon", "1/10"]);
            assert_eq!(
                v.code, EXIT_OK,
                "verify {profile} {seed}: {}\n{}",
                v.stdout, v.stderr
            );
            assert!(v.stdout.contains("containment_ok: true"), "{}", v.stdout);
            assert!(v.stdout.trim_end().ends_with("accept"), "{}", v.stdout);
        }
    }
}

#[test]
fn result_files_round_trip_and_carry_certificates() {
    let dir = tempfile::tempdir().expect("tempdir");
    let inst = dir.path().join("inst.json");
    let res = dir.path().join("res.json");
    let f = run(&[
        "fixtures", "--name", "shifted-pair", "--p", "3", "--k", "6",
        "--out", inst.to_str().unwrap(),
    ]);
    assert_eq!(f.code, EXIT_OK, "{}", f.stderr);
    let c = run(&[
        "compress", inst.to_str().unwrap(), "--epsilon", "0.1",
        "--out", res.to_str().unwrap(),
    ]);
    assert_eq!(c.code, EXIT_OK, "{}", c.stderr);

    let text = std::fs::read_to_string(&res).unwrap();
    let parsed = ResultFile::from_json(&text).expect("result parses");
    assert_eq!(parsed.to_json(), text, "serialize(parse(result)) is the identity");
    assert_eq!(parsed.certificate.epsilon_target, "1/10");
    assert!(!parsed.certificate.trace.is_empty(), "trace records the derivation");
    let bound = parsed.proof_defect_bound().unwrap();
    let target = parsed.epsilon_target().unwrap();
    assert!(bound <= target, "certificate bound within target");
    parsed.output.parse().expect("output instance is valid");

    let itext = std::fs::read_to_string(&inst).unwrap();
    let ifile = InstanceFile::from_json(&itext).expect("instance parses");
    assert_eq!(ifile.to_json(), itext, "serialize(parse(instance)) is the identity");
}

#[test]
fn verify_rejects_supersets_with_counterexample() {
    let dir = tempfile::tempdir().expect("tempdir");
    // Original: x_1 = 0.  Candidate allows {0, 1}: a strict superset.
    let orig = write(
        dir.path(),
        "orig.json",
        r#"{"kind":"modp","p":3,"s":[0,1],"n":2,
            "conditions":[{"coeffs":[1,0],"e":[0]}]}"#,
    );
    let cand = write(
        dir.path(),
        "cand.json",
        r#"{"kind":"modp","p":3,"s":[0,1],"n":2,
            "conditions":[{"coeffs":[1,0],"e":[0,1]}]}"#,
    );
    let v = run(&["verify", &orig, &cand, "--epsilon", "1/2"]);
    assert_eq!(v.code, EXIT_REJECT, "{}\n{}", v.stdout, v.stderr);
    assert!(v.stdout.contains("containment_ok: false"), "{}", v.stdout);
    assert!(v.stdout.contains("counterexample:"), "{}", v.stdout);
    assert!(v.stdout.trim_end().ends_with("reject"), "{}", v.stdout);

    // Same files, roles as intended → accept with defect 0.
    let v = run(&["verify", &cand, &orig, "--epsilon", "1/2"]);
    assert_eq!(v.code, EXIT_OK, "{}", v.stdout);
}

#[test]
fn verify_example_candidate_defect_pins() {
    let dir = tempfile::tempdir().expect("tempdir");
    let inst = dir.path().join("inst.json");
    let f = run(&[
        "fixtures", "--name", "shifted-pair", "--p", "3", "--k", "6",
        "--out", inst.to_str().unwrap(),
    ]);
    assert_eq!(f.code, EXIT_OK, "{}", f.stderr);
    // The single condition x_1 = 0 internally approximates the family:
    // defect exactly 33/64 − 1/2 = 1/64.
    let cand = write(
        dir.path(),
        "cand.json",
        r#"{"kind":"modp","p":3,"s":[0,1],"n":6,
            "conditions":[{"coeffs":[1,0,0,0,0,0],"e":[0]}]}"#,
    );
    let v = run(&["verify", inst.to_str().unwrap(), &cand, "--epsilon", "1/32"]);
    assert_eq!(v.code, EXIT_OK, "{}\n{}", v.stdout, v.stderr);
    assert!(v.stdout.contains("defect: 1/64"), "{}", v.stdout);
    assert!(v.stdout.contains("certified: true"), "{}", v.stdout);

    // Identical instances: defect exactly 0.
    let v = run(&["verify", inst.to_str().unwrap(), inst.to_str().unwrap(), "--epsilon", "1/32"]);
    assert_eq!(v.code, EXIT_OK);
    assert!(v.stdout.contains("defect: 0/1"), "{}", v.stdout);
}

#[test]
fn invalid_inputs_exit_3_with_diagnostics() {
    let dir = tempfile::tempdir().expect("tempdir");
    let bad = write(
        dir.path(),
        "bad.json",
        r#"{"kind":"modp","p":3,"s":[0,1],"n":1,"conditions":[{"coeffs":[3],"e":[0]}]}"#,
    );
    let r = run(&["density", &bad]);
    assert_eq!(r.code, EXIT_INVALID);
    assert!(r.stderr.contains("condition 0"), "{}", r.stderr);
    assert!(r.stderr.contains("out of range"), "{}", r.stderr);

    let r = run(&["density", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(r.code, EXIT_INVALID);

    let r = run(&["gen", "--profile", "sunflower"]);
    assert_eq!(r.code, EXIT_INVALID, "gen without --seed is an error");
    assert!(r.stderr.contains("--seed"), "{}", r.stderr);

    let r = run(&["gen", "--profile", "florp", "--seed", "1"]);
    assert_eq!(r.code, EXIT_INVALID);

    let good = write(
        dir.path(),
        "good.json",
        r#"{"kind":"modp","p":3,"s":[0,1],"n":1,"conditions":[{"coeffs":[1],"e":[0]}]}"#,
    );
    let r = run(&["density", &good, "--method", "montecarlo"]);
    assert_eq!(r.code, EXIT_INVALID, "montecarlo without --seed is an error");

    let r = run(&["density", &good, "--method", "sorcery", "--seed", "1"]);
    assert_eq!(r.code, EXIT_INVALID);

    let r = run(&["compress", &good, "--epsilon", "7/3"]);
    assert_eq!(r.code, EXIT_INVALID, "epsilon outside (0,1)");

    let r = run(&["frobnicate"]);
    assert_eq!(r.code, EXIT_INVALID, "unknown subcommand");

    let r = run(&["--help"]);
    assert_eq!(r.code, EXIT_OK, "help is not an error");
}

#[test]
fn budget_exhaustion_exits_2() {
    let dir = tempfile::tempdir().expect("tempdir");
    let wide = write(
        dir.path(),
        "wide.json",
        &format!(
            r#"{{"kind":"modp","p":5,"s":[0,1,2,3,4],"n":40,
                "conditions":[{{"coeffs":[{}],"e":[0]}}]}}"#,
            vec!["1"; 40].join(",")
        ),
    );
    let r = run(&["density", &wide]);
    assert_eq!(r.code, EXIT_BUDGET, "{}", r.stderr);
    assert!(r.stderr.contains("budget"), "{}", r.stderr);
    // The convolution method handles the same instance exactly.
    let r = run(&["density", &wide, "--method", "dp"]);
    assert_eq!(r.code, EXIT_OK);
    assert_eq!(r.stdout.trim(), "1/5");
}

#[test]
fn montecarlo_is_seed_reproducible() {
    let dir = tempfile::tempdir().expect("tempdir");
    let inst = write(
        dir.path(),
        "inst.json",
        r#"{"kind":"modp","p":3,"s":[0,1],"n":4,
            "conditions":[{"coeffs":[1,1,0,0],"e":[0,1]}]}"#,
    );
    let a = run(&["density", &inst, "--method", "montecarlo", "--seed", "11", "--samples", "5000"]);
    let b = run(&["density", &inst, "--method", "montecarlo", "--seed", "11", "--samples", "5000"]);
    assert_eq!(a.code, EXIT_OK, "{}", a.stderr);
    assert_eq!(a.stdout, b.stdout, "same seed, same estimate");
    assert!(a.stdout.starts_with("estimate "), "{}", a.stdout);
}

#[test]
fn empty_instances_compress_to_empty_output() {
    let dir = tempfile::tempdir().expect("tempdir");
    let inst = write(
        dir.path(),
        "empty.json",
        r#"{"kind":"modp","p":3,"s":[0,1],"n":3,"conditions":[]}"#,
    );
    let c = run(&["compress", &inst, "--epsilon", "1/10"]);
    assert_eq!(c.code, EXIT_OK, "{}", c.stderr);
    let parsed = ResultFile::from_json(&c.stdout).expect("result parses");
    assert_eq!(parsed.certificate.proof_defect_bound, "0/1");
    match &parsed.output {
        InstanceFile::ModP { conditions, .. } => assert!(conditions.is_empty()),
        _ => panic!("expected a mod-p output"),
    }
}

#[test]
fn fixtures_cover_both_regimes() {
    let r = run(&["fixtures", "--name", "paired-coordinates", "--p", "5", "--k", "4"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let file = InstanceFile::from_json(&r.stdout).expect("fixture parses");
    match file {
        InstanceFile::Group { ref h, .. } => assert_eq!(h, &vec![5, 5]),
        _ => panic!("expected a group fixture"),
    }
    let r = run(&["fixtures", "--name", "product-zero", "--p", "3", "--k", "5"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let r = run(&["fixtures", "--name", "unknown-fixture"]);
    assert_eq!(r.code, EXIT_INVALID);
}

#[test]
fn capitalized_allowed_set_keys_parse() {
    let dir = tempfile::tempdir().expect("tempdir");
    let inst = write(
        dir.path(),
        "caps.json",
        r#"{"kind":"modp","p":3,"S":[0,1],"n":2,
            "conditions":[{"coeffs":[1,1],"E_complement":[2]}]}"#,
    );
    let r = run(&["density", &inst]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert_eq!(r.stdout.trim(), "3/4");
}
