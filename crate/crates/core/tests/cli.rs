use std::process::Command;

use hmm_icl::hmm::LowRankHmm;
use hmm_icl::kernel::TransformerStack;

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_hmm-icl")).args(args).output().unwrap()
}

fn stdout(out: &std::process::Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn gen_hmm_writes_loadable_json() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hmm.json");
    let out = cli(&["gen-hmm", "--num-hidden", "5", "--num-obs", "3", "--rank", "2", "--seed", "4", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    let hmm = LowRankHmm::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!((hmm.num_hidden(), hmm.num_obs(), hmm.rank()), (5, 3, 2));
    assert_eq!(hmm, LowRankHmm::new_low_rank(5, 3, 2, 1.0, 4).unwrap());
}

#[test]
fn gen_mixture_prints_metadata() {
    let out = cli(&["gen-mixture", "--seed", "2"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["num_tasks_built"], 8);
}

#[test]
fn verify_passes_on_default_instance() {
    let out = cli(&["verify"]);
    assert!(out.status.success(), "{}", stdout(&out));
    let text = stdout(&out);
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
    assert!(text.contains("readout_vs_oracle"));
}

#[test]
fn verify_reads_config_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    std::fs::write(
        &path,
        r#"{"hmm": {"kind": "random", "num_hidden": 3, "num_obs": 2, "rank": 2, "seed": 1},
            "n": 6, "l": 4, "k": 5, "construction": {"steps": 3}, "seed": 2}"#,
    )
    .unwrap();
    let out = cli(&["verify", "--config", path.to_str().unwrap(), "--m", "2", "--steps", "5"]);
    assert!(out.status.success(), "{}", stdout(&out));
    assert!(stdout(&out).contains("m_step_marginal"));
}

#[test]
fn build_stack_dumps_and_traces() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("stack.json");
    let trace = dir.path().join("trace");
    let out = cli(&["build-stack", "--steps", "3", "--dump-stack", dump.to_str().unwrap(), "--trace-layers", trace.to_str().unwrap()]);
    assert!(out.status.success());
    let meta: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(meta["gd_layers"], 3);
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&dump).unwrap()).unwrap();
    let stack = TransformerStack::from_json(&doc["stack"].to_string()).unwrap();
    let mut files: Vec<_> = std::fs::read_dir(&trace).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    files.sort();
    assert_eq!(files.len(), stack.layers.len() + 1);
    assert_eq!(files[0], "layer_00_input.csv");
    let first = std::fs::read_to_string(trace.join(&files[0])).unwrap();
    assert_eq!(first.lines().count(), 2 * 4 + 4);
}

#[test]
fn measure_reports_json() {
    let out = cli(&["measure", "--num-mc", "20"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["total_source"], "stack");
    assert!(v["triangle_ok"].as_bool().unwrap());
}

#[test]
fn sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    let out = cli(&["sweep", "--num-mc", "10", "--no-stack", "--grid-n", "4,8", "--grid-steps", "1,2,3", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    assert_eq!(reader.headers().unwrap().len(), 23);
    assert_eq!(reader.records().count(), 6);
}

#[test]
fn failing_cell_sets_exit_code() {
    let out = cli(&["sweep", "--num-mc", "5", "--grid-k", "3,4"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_config_is_an_error() {
    assert_eq!(cli(&["verify", "--k", "2"]).status.code(), Some(2));
    assert_eq!(cli(&["verify", "--config", "/nonexistent/cfg.json"]).status.code(), Some(3));
}
