use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ztfed::cli::main_with_args;
use ztfed::csvio::{load_csv, write_csv};
use ztfed::report::report_dir;
use ztfed::sweep::{read_results, RESULTS_FILE};
use ztfed_core::data::{synth_wind, SynthConfig};

const TOY: &str = r#"
seed = 3
[data.synth]
farms = 2
samples_per_farm = 16
sequence_length = 12
[model]
hidden_size = 4
heads = 1
key_dim = 2
sequence_length = 12
[fl]
global_epochs = 2
sync_interval = 1
clients = 4
participation = 1.0
local_epochs = 1
batch_size = 4
nizk_group = "test512"
[mask]
run_length_max = 8
"#;

fn toy_config(dir: &Path, extra: &str) -> PathBuf {
    let p = dir.join("toy.toml");
    fs::write(&p, format!("{TOY}{extra}")).unwrap();
    p
}

fn run(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("ztfed").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_data_writes_one_file_per_farm() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    assert_eq!(run(&["gen-data", "--seed", "5", "--out", s(&out)]), 0);
    let mut files: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    files.sort();
    assert_eq!(files.len(), 16);
    assert_eq!(files[0], "farm_00.csv");
    assert_eq!(files[15], "farm_15.csv");
}

#[test]
fn bad_paths_and_flags_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    assert_eq!(run(&["run", "--config", s(&missing)]), 2);
    assert_eq!(run(&["run", "--bogus"]), 2);
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[fl]\nlr = 0.1\n").unwrap();
    assert_eq!(run(&["run", "--config", s(&cfg)]), 2);
    assert_eq!(run(&["report", "--out", s(dir.path())]), 2);
}

#[test]
fn toy_run_writes_outputs_quickly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path(), "");
    let out = dir.path().join("run");
    let start = Instant::now();
    assert_eq!(run(&["run", "--config", s(&cfg), "--out", s(&out)]), 0);
    assert!(start.elapsed().as_secs() < 60);
    for f in ["metrics.json", "rounds.jsonl", "model.ztck", "masks/client_00.jsonl", "masks/client_03.jsonl"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["rounds"], 2);
    assert!(metrics["test"]["rmse"].as_f64().unwrap().is_finite());
    let rounds = fs::read_to_string(out.join("rounds.jsonl")).unwrap();
    assert_eq!(rounds.lines().count(), 2);
}

#[test]
fn trust_diagnostics_only_for_dtaa() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path(), "");
    let trust_of = |agg: &str| {
        let out = dir.path().join(agg);
        assert_eq!(run(&["run", "--config", s(&cfg), "--out", s(&out), "--aggregator", agg, "--no-dp"]), 0);
        let first = fs::read_to_string(out.join("rounds.jsonl")).unwrap().lines().next().unwrap().to_string();
        let v: serde_json::Value = serde_json::from_str(&first).unwrap();
        v["trust"].clone()
    };
    assert!(trust_of("fedavg").is_null());
    let t = trust_of("dtaa");
    assert!(t.is_object(), "{t}");
}

#[test]
fn sweep_is_a_product_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path(), "[sweep]\nmissing_rate = [0.2, 0.5]\nepsilon = [40, \"none\"]\n");
    let out = dir.path().join("sweep");
    assert_eq!(run(&["sweep", "--config", s(&cfg), "--out", s(&out)]), 0);
    let rows = read_results(&out.join(RESULTS_FILE)).unwrap();
    assert_eq!(rows.len(), 4);
    let mut eps: Vec<_> = rows.iter().map(|r| r.epsilon.clone()).collect();
    eps.sort();
    assert_eq!(eps, ["40", "40", "none", "none"]);

    // A second invocation reuses every cell and writes the same table.
    let before = fs::read(out.join(RESULTS_FILE)).unwrap();
    let stamp = fs::metadata(out.join("cells/cell_0000/metrics.json")).unwrap().modified().unwrap();
    assert_eq!(run(&["sweep", "--config", s(&cfg), "--out", s(&out)]), 0);
    assert_eq!(fs::read(out.join(RESULTS_FILE)).unwrap(), before);
    assert_eq!(fs::metadata(out.join("cells/cell_0000/metrics.json")).unwrap().modified().unwrap(), stamp);

    assert_eq!(run(&["report", "--out", s(&out)]), 0);
    let text = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(text.starts_with("aggregator | N |"));
    let rep = report_dir(&out).unwrap();
    assert_eq!(rep.groups.len(), 4);
    assert!(rep.groups.iter().filter(|g| g.key.epsilon == "40").all(|g| g.utility.is_some()));
    assert!(rep.sensitivities.iter().any(|s| s.axis == "missing_rate"));
}

#[test]
fn csv_round_trip_preserves_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig { farms: 1, samples_per_farm: 5, sequence_length: 12, power_noise: 0.02 };
    let ds = &synth_wind(&cfg, 9).unwrap()[0];
    let p = dir.path().join("farm_00.csv");
    write_csv(&p, ds).unwrap();
    let back = load_csv(&p, 0, 12).unwrap();
    assert_eq!(back.raw_rows(), ds.raw_rows());
}

#[test]
fn run_from_csv_directory() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let cfg = toy_config(dir.path(), "");
    assert_eq!(run(&["gen-data", "--config", s(&cfg), "--out", s(&data)]), 0);
    let text = TOY.replace("[data.synth]", &format!("[data]\ncsv_dir = {:?}\n[data.synth]", s(&data)));
    let cfg2 = dir.path().join("csv.toml");
    fs::write(&cfg2, text).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&["run", "--config", s(&cfg), "--out", s(&a)]), 0);
    assert_eq!(run(&["run", "--config", s(&cfg2), "--out", s(&b)]), 0);
    let digest = |d: &Path| {
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("metrics.json")).unwrap()).unwrap();
        v["final_digest"].clone()
    };
    assert_eq!(digest(&a), digest(&b));
}

#[test]
fn readme_example_config_is_valid() {
    let readme = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../README.md")).unwrap();
    let start = readme.find("```toml\n").unwrap() + 8;
    let len = readme[start..].find("```").unwrap();
    let spec = ztfed::spec::ExperimentSpec::from_toml(&readme[start..start + len]).unwrap();
    spec.validate().unwrap();
    assert_eq!(spec.fl.adam.learning_rate, 0.003);
    assert_eq!(ztfed::sweep::cells(&spec).len(), 4 * 3 * 4 * 3);
}
