//! End-to-end CLI tests: the documented command surface, exit codes, and
//! deterministic outputs. Help text is pinned by golden files so flag
//! names stay a compatibility contract.
//!
//! Regenerate the help goldens with: HELP_REGEN=1 cargo test -p acp-cli

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn acp() -> Command {
    Command::new(env!("CARGO_BIN_EXE_acp"))
}

fn run(args: &[&str]) -> Output {
    acp().args(args).output().expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn scenario_path(name: &str) -> String {
    format!("{}/../../scenarios/{name}", env!("CARGO_MANIFEST_DIR"))
}

const ZERO_SEED: &str = "0000000000000000000000000000000000000000000000000000000000000000";

#[test]
fn keygen_is_deterministic_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let key_a = dir.path().join("a.key");
    let key_b = dir.path().join("b.key");

    let out_a = run(&[
        "keygen",
        "--seed",
        ZERO_SEED,
        "--out",
        key_a.to_str().unwrap(),
    ]);
    assert!(out_a.status.success(), "{}", stderr(&out_a));
    let out_b = run(&[
        "keygen",
        "--seed",
        ZERO_SEED,
        "--out",
        key_b.to_str().unwrap(),
    ]);
    assert!(out_b.status.success());

    // the zero seed maps to one DID on every platform
    assert_eq!(stdout(&out_a), "did:acp:GrRZYotwid5A4FxaddwPxsxChzo\n");
    assert_eq!(stdout(&out_a), stdout(&out_b));
    assert_eq!(
        std::fs::read(&key_a).unwrap(),
        std::fs::read(&key_b).unwrap()
    );

    // bad seed -> validation exit code with a machine-readable error
    let bad = run(&["keygen", "--seed", "1234", "--out", key_a.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(stderr(&bad).starts_with("error: "), "{}", stderr(&bad));
}

fn write_table_style_card(dir: &Path) -> (PathBuf, PathBuf) {
    let key = dir.join("agent.key");
    let card = dir.join("agent.card.json");
    let out = run(&[
        "keygen",
        "--seed",
        ZERO_SEED,
        "--out",
        key.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let out = run(&[
        "card",
        "new",
        "--key",
        key.to_str().unwrap(),
        "--capabilities",
        "data_analysis,web_search,code_gen",
        "--max-latency-ms",
        "500",
        "--data-residency",
        "EU",
        "--trust-score",
        "0.98",
        "--interaction-count",
        "1200",
        "--endpoint",
        "grpc://agent.example.com:50051",
        "--out",
        card.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    (key, card)
}

#[test]
fn card_roundtrip_show_and_validate() {
    let dir = tempfile::tempdir().unwrap();
    let (_key, card) = write_table_style_card(dir.path());

    let validate = run(&["card", "validate", card.to_str().unwrap()]);
    assert!(validate.status.success(), "{}", stderr(&validate));

    let show = run(&["card", "show", card.to_str().unwrap()]);
    let text = stdout(&show);
    assert!(text.contains("data_analysis, web_search, code_gen"));
    assert!(text.contains("max_latency_ms    500"));
    assert!(text.contains("data_residency    EU"));
    assert!(text.contains("0.98 (based on 1200 interactions)"));

    // tamper with one byte of the canonical file: validation names a field
    let mut bytes = std::fs::read(&card).unwrap();
    let pos = bytes.iter().position(|&b| b == b'9').unwrap();
    bytes[pos] = b'8';
    let tampered = dir.path().join("tampered.json");
    std::fs::write(&tampered, &bytes).unwrap();
    let invalid = run(&["card", "validate", tampered.to_str().unwrap()]);
    assert_eq!(invalid.status.code(), Some(2));
    assert!(stderr(&invalid).starts_with("error: "));

    // missing file -> I/O exit code
    let missing = run(&["card", "validate", "/nonexistent/card.json"]);
    assert_eq!(missing.status.code(), Some(4));
}

#[test]
fn sim_run_writes_deterministic_outputs() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let scenario = scenario_path("happy_path.json");

    let out_a = run(&[
        "sim",
        "run",
        "--scenario",
        &scenario,
        "--seed",
        "ab",
        "--out",
        dir_a.path().to_str().unwrap(),
    ]);
    assert!(out_a.status.success(), "{}", stderr(&out_a));
    let out_b = run(&[
        "sim",
        "run",
        "--scenario",
        &scenario,
        "--seed",
        "ab",
        "--out",
        dir_b.path().to_str().unwrap(),
    ]);
    assert!(out_b.status.success());

    assert_eq!(
        stdout(&out_a),
        stdout(&out_b),
        "stdout must be reproducible"
    );
    for file in ["metrics.csv", "summary.json"] {
        assert_eq!(
            std::fs::read(dir_a.path().join(file)).unwrap(),
            std::fs::read(dir_b.path().join(file)).unwrap(),
            "{file} differs between identical runs"
        );
    }
    assert!(dir_a.path().join("reports/demo.json").is_file());
    assert!(dir_a.path().join("state/ledger.log").is_file());

    // a different seed produces a different trace
    let out_c = run(&["sim", "run", "--scenario", &scenario, "--seed", "ac"]);
    assert!(out_c.status.success());
    let trace = |s: &str| {
        s.lines()
            .find(|l| l.starts_with("trace_hash"))
            .map(str::to_string)
    };
    assert_ne!(trace(&stdout(&out_a)), trace(&stdout(&out_c)));
}

#[test]
fn sim_run_reports_expectation_failures_with_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    // an impossible expectation: nobody provides this capability
    let scenario = r#"{
        "horizon_ms": 20000,
        "trust_anchors": ["u"],
        "agents": [
            {"name": "r", "behavior": "requester"},
            {"name": "p", "behavior": "provider:other_work"}
        ],
        "plans": [
            {"at": 1000, "requester": "r", "user": "u",
             "subtasks": [{"capability": "missing_skill"}]}
        ],
        "expect": {"plans_complete": true}
    }"#;
    let path = dir.path().join("impossible.json");
    std::fs::write(&path, scenario).unwrap();
    let out = run(&["sim", "run", "--scenario", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("error: expectation failed"));

    // malformed scenario -> validation failure
    std::fs::write(&path, "{\"horizon_ms\": }").unwrap();
    let bad = run(&["sim", "run", "--scenario", path.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn sweep_emits_fixed_header_csv() {
    let out = run(&[
        "sim",
        "sweep",
        "--agents",
        "8,16",
        "--seeds",
        "1..2",
        "--lookups",
        "10",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "n_agents,seed,mean_hops,p95_hops,c_fit,r2_fit"
    );
    // 2 counts x 2 seeds
    assert_eq!(lines.count(), 4);

    let bad = run(&["sim", "sweep", "--agents", "1"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn ledger_show_and_corruption_detection() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenario_path("happy_path.json");
    let out = run(&[
        "sim",
        "run",
        "--scenario",
        &scenario,
        "--seed",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let state = dir.path().join("state");
    let show = run(&["ledger", "show", "--state", state.to_str().unwrap()]);
    assert!(show.status.success(), "{}", stderr(&show));
    assert!(stdout(&show).contains("entries 1"));

    // truncate the ledger: corrupt state, exit 4
    let ledger_path = state.join("ledger.log");
    let text = std::fs::read_to_string(&ledger_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    std::fs::write(&ledger_path, lines[..lines.len() - 1].join("\n")).unwrap();
    let corrupt = run(&["ledger", "show", "--state", state.to_str().unwrap()]);
    assert_eq!(corrupt.status.code(), Some(4));
    assert!(stderr(&corrupt).contains("corrupt state"));
}

#[test]
fn verify_envelope_accepts_valid_and_rejects_foreign() {
    let dir = tempfile::tempdir().unwrap();
    let (key, card) = write_table_style_card(dir.path());

    // seal an envelope with the same key, store its frame
    let kp = acp_core::identity::KeyPair::from_file_bytes(&std::fs::read(&key).unwrap()).unwrap();
    let env = acp_core::envelope::seal(
        &kp,
        acp_core::envelope::Header {
            msg_type: acp_core::envelope::MsgType::Announce,
            recipient: kp.did(),
            session_id: [1; 16],
            sequence: 0,
            sent_at: 42,
        },
        acp_core::doc::object([("hello", acp_core::doc::Value::from(1i64))]).unwrap(),
    );
    let frame_path = dir.path().join("announce.bin");
    std::fs::write(&frame_path, acp_core::envelope::write_frame(&env)).unwrap();

    let ok = run(&[
        "verify-envelope",
        frame_path.to_str().unwrap(),
        "--card",
        card.to_str().unwrap(),
    ]);
    assert!(ok.status.success(), "{}", stderr(&ok));
    assert!(stdout(&ok).starts_with("ok: ANNOUNCE"));

    // flip a byte: rejected with exit 2
    let mut tampered = acp_core::envelope::write_frame(&env);
    let last = tampered.len() - 1;
    tampered[last] ^= 0x40;
    let tampered_path = dir.path().join("tampered.bin");
    std::fs::write(&tampered_path, &tampered).unwrap();
    let bad = run(&[
        "verify-envelope",
        tampered_path.to_str().unwrap(),
        "--card",
        card.to_str().unwrap(),
    ]);
    assert_eq!(bad.status.code(), Some(2));
}

/// Flag names are a compatibility contract pinned by golden help files.
#[test]
fn help_text_matches_golden_files() {
    let cases: &[(&str, &[&str])] = &[
        ("help_root.txt", &["--help"]),
        ("help_keygen.txt", &["keygen", "--help"]),
        ("help_card_new.txt", &["card", "new", "--help"]),
        ("help_sim_run.txt", &["sim", "run", "--help"]),
        ("help_sim_sweep.txt", &["sim", "sweep", "--help"]),
        ("help_ledger_show.txt", &["ledger", "show", "--help"]),
        ("help_verify_envelope.txt", &["verify-envelope", "--help"]),
    ];
    let dir = format!("{}/tests/golden", env!("CARGO_MANIFEST_DIR"));
    let regen = std::env::var_os("HELP_REGEN").is_some();
    for (file, args) in cases {
        let out = run(args);
        assert!(out.status.success());
        let text = stdout(&out);
        let path = format!("{dir}/{file}");
        if regen {
            std::fs::write(&path, &text).unwrap();
            continue;
        }
        let golden = std::fs::read_to_string(&path)
            .unwrap_or_else(|e| panic!("{file} unreadable ({e}); regenerate with HELP_REGEN=1"));
        assert_eq!(text, golden, "{file} drifted; flags are a contract");
    }
}
