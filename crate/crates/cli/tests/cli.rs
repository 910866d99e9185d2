use std::process::{Command, Output};

use qdr_core::text::{parse_poly, DensityDoc, ParseContext};
use qdr_core::ParamSet;

fn qdr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qdr")).args(args).output().expect("spawn qdr")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn dispersionless_classical_g0() {
    let o = qdr(&["hamiltonian", "--cohft", "kdv", "--d", "0", "--eps", "0", "--hbar", "0"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "G[1,-1] = (1)*u[1,0]\nG[1,0] = (1/2)*u[1,0]^2\n");
}

#[test]
fn kdv_g1_line() {
    let o = qdr(&["hamiltonian", "--cohft", "kdv", "--d", "1", "--eps", "4", "--hbar", "2"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let line = out.lines().find(|l| l.starts_with("G[1,1] = ")).unwrap();
    let ctx = ParseContext::new(1, qdr_core::TruncationSpec::new(4, 2), ParamSet::new()).alias("u", 1);
    let got = parse_poly(&line["G[1,1] = ".len()..], &ctx).unwrap();
    let want = parse_poly(
        "u^3/6 + eps^2/24*u*u[2] + eps^4/1152*u[4] - i*hbar/24*(u + u[2]) - i*hbar*eps^2/2880",
        &ctx,
    )
    .unwrap();
    assert_eq!(got, want);
}

#[test]
fn kdv_verify_passes() {
    let o = qdr(&["verify", "--cohft", "kdv", "--p-max", "3", "--eps", "6", "--hbar", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).ends_with("0 failed\n"));
}

#[test]
fn ilw_verify_passes() {
    let o = qdr(&["verify", "--cohft", "ilw", "--p-max", "2", "--eps", "4", "--hbar", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn toda_verify_passes() {
    let o = qdr(&["verify", "--cohft", "toda", "--p-max", "1", "--eps", "2", "--hbar", "1", "--udeg", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn corrupted_seed_exits_one() {
    let seed = "u^3/5 + eps^2/24*u*u[2] - i*hbar/24*u";
    let o = qdr(&["verify", "--seed-expr", seed, "--p-max", "2", "--output", "structured"]);
    assert_eq!(o.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let failed: Vec<&str> = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| !c["passed"].as_bool().unwrap())
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert!(failed.contains(&"G[1,1] reproduces the seed"), "{failed:?}");
}

#[test]
fn usage_and_engine_errors() {
    assert_eq!(qdr(&["hamiltonian", "--cohft", "nope"]).status.code(), Some(2));
    assert_eq!(qdr(&["hamiltonian", "--cohft", "toda"]).status.code(), Some(2));
    assert_eq!(qdr(&["hamiltonian", "--param", "zeta=1"]).status.code(), Some(2));
    assert_eq!(qdr(&["dispersionless-check", "--cohft", "ilw"]).status.code(), Some(2));
    let o = qdr(&["verify", "--seed-expr", "u^3/6 + eps^2*u^2*u[2]/7", "--p-max", "1"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn output_is_deterministic() {
    let args = ["hamiltonian", "--cohft", "ilw", "--d", "2", "--eps", "4", "--hbar", "2"];
    let a = qdr(&args);
    let b = qdr(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn structured_output_round_trips() {
    let base = ["hamiltonian", "--cohft", "ilw", "--d", "2", "--eps", "4", "--hbar", "2"];
    let text = stdout(&qdr(&base));
    let json = stdout(&qdr(&[&base[..], &["--output", "structured"]].concat()));
    let rows: Vec<serde_json::Value> = serde_json::from_str(&json).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), lines.len());
    for (row, line) in rows.iter().zip(lines) {
        let doc: DensityDoc = serde_json::from_value(row["density"].clone()).unwrap();
        let p = doc.to_poly().unwrap();
        let ctx = ParseContext::new(1, doc.truncation, ParamSet::with(&["mu"]));
        let (_, rhs) = line.split_once(" = ").unwrap();
        assert_eq!(p, parse_poly(rhs, &ctx).unwrap());
        assert_eq!(p.to_string(), rhs);
    }
}

#[test]
fn ilw_at_mu_zero_is_kdv() {
    let common = ["--d", "2", "--eps", "4", "--hbar", "2"];
    let ilw = qdr(&[&["hamiltonian", "--cohft", "ilw", "--param", "mu=0"][..], &common].concat());
    let kdv = qdr(&[&["hamiltonian", "--cohft", "kdv"][..], &common].concat());
    assert_eq!(ilw.stdout, kdv.stdout);
}

#[test]
fn dispersionless_check_passes() {
    let o = qdr(&["dispersionless-check", "--d", "6", "--hbar", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS  dispersionless G[1,-1]"));
}

#[test]
fn other_subcommands() {
    let o = qdr(&["flow", "--d", "1", "--eps", "2", "--hbar", "0"]);
    assert_eq!(stdout(&o), "du[1]/dt[1,1] = (1)*u[1,0]*u[1,1] + (1/12)*eps^2*u[1,3]\n");
    let o = qdr(&["bracket", "--f", "u^2/2", "--g", "u^3/6", "--eps", "0", "--hbar", "0", "--classical"]);
    assert_eq!(stdout(&o), "{f, g} = (1)*u[1,0]^2*u[1,1]\n");
    // δ'·δ' = −i(δ'''/6 + δ'/6).
    let o = qdr(&["coeffs", "--a", "1,1"]);
    assert_eq!(stdout(&o), "C[1] = 1/6\nC[3] = 1/6\nCt(N) = (-1/6)*N^1 + (1/6)*N^3\n");
    let o = qdr(&["miura", "--cohft", "toda", "--udeg", "2", "--eps", "2", "--hbar", "0", "--d", "0"]);
    assert!(o.status.success());
    let fwd = stdout(&o);
    let (_, v) = fwd.trim_end().split_once(" = ").unwrap();
    let o = qdr(&["miura", "--cohft", "toda", "--udeg", "2", "--eps", "2", "--hbar", "0", "--inverse", "--expr", v]);
    let back = stdout(&o);
    let g0 = stdout(&qdr(&["hamiltonian", "--cohft", "toda", "--udeg", "2", "--eps", "2", "--hbar", "0", "--d", "0"]));
    let g0 = g0.lines().find(|l| l.starts_with("G[1,0]")).unwrap();
    assert_eq!(back.trim_end().split_once(" = ").unwrap().1, g0.split_once(" = ").unwrap().1);
}
