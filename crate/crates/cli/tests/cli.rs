use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chanest::grid::load_dataset;
use chanest::neuralnet::load_model;

const SMALL_CONFIG: &str = r#"{
  "n_sub": 24,
  "n_sym": 14,
  "nfft": 1024,
  "sample_rate": 30720000.0,
  "profiles": ["A", "B", "C", "D", "E"],
  "delay_spread_ns": [1.0, 300.0],
  "doppler_hz": [5.0, 400.0],
  "snr_db": [0.0, 10.0],
  "pilot_symbols": [2, 11],
  "pilot_stride": 2
}"#;

fn chanest(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chanest"))
        .args(args)
        .env_remove("CHANEST_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "status {:?}\nstdout:\n{}\nstderr:\n{}", o.status, stdout(&o), stderr(&o));
    o
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes the small config and generates a 10-sample dataset.
fn small_dataset(dir: &Path) -> PathBuf {
    let cfg = dir.join("scenario.json");
    fs::write(&cfg, SMALL_CONFIG).unwrap();
    let data = dir.join("d.cegd");
    ok(chanest(&["generate", "--config", p(&cfg), "--samples", "10", "--seed", "42", "--out", p(&data)]));
    data
}

fn train_small(dir: &Path, data: &Path, arch: &str, seed: &str, name: &str) -> PathBuf {
    let out = dir.join(name);
    ok(chanest(&[
        "train", "--data", p(data), "--arch", arch, "--epochs", "2", "--batch", "4", "--lr", "0.01",
        "--seed", seed, "--out", p(&out),
    ]));
    out
}

#[test]
fn generate_is_reproducible_and_summarized() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let first = fs::read(&data).unwrap();
    let o = ok(chanest(&["generate", "--config", p(&dir.path().join("scenario.json")), "--samples", "10",
        "--seed", "42", "--out", p(&data)]));
    assert_eq!(fs::read(&data).unwrap(), first);
    let text = stdout(&o);
    assert!(text.contains("samples: 10"), "{text}");
    assert!(text.contains("grid: 24 x 14 x 2"), "{text}");
    assert!(text.contains("TDL-"), "{text}");
    assert!(dir.path().join("d.cegd.meta.json").exists());
    assert_eq!(load_dataset(&data).unwrap().len(), 10);
}

#[test]
fn missing_config_field_exits_2_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, SMALL_CONFIG.replace("\"nfft\": 1024,", "")).unwrap();
    let o = chanest(&["generate", "--config", p(&cfg), "--out", p(&dir.path().join("x.cegd"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nfft"), "{}", stderr(&o));
}

#[test]
fn missing_input_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = chanest(&["train", "--data", p(&dir.path().join("none.cegd")), "--out", p(&dir.path().join("m.cemw"))]);
    assert_eq!(o.status.code(), Some(3));
    let o = chanest(&["generate", "--samples", "1", "--out", "/nonexistent/dir/d.cegd"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn help_documents_defaults() {
    let train = stdout(&ok(chanest(&["train", "--help"])));
    for needle in ["--epochs", "[default: 100]", "--lr", "[default: 0.001]", "--momentum", "[default: 0.9]",
        "--batch", "[default: 256]", "--arch", "[default: undefended]"] {
        assert!(train.contains(needle), "missing {needle}:\n{train}");
    }
    let sweep = stdout(&ok(chanest(&["sweep", "--help"])));
    assert!(sweep.contains("[default: 0.1,0.5,1.0,2.0,3.0]"), "{sweep}");
    assert!(sweep.contains("[default: all]"), "{sweep}");
    for sub in ["generate", "attack", "distill"] {
        ok(chanest(&[sub, "--help"]));
    }
}

#[test]
fn train_writes_checkpoint_and_loss_history() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let out = dir.path().join("s.cemw");
    let o = ok(chanest(&[
        "train", "--data", p(&data), "--arch", "student", "--epochs", "3", "--batch", "4", "--lr", "0.01",
        "--out", p(&out),
    ]));
    assert!(stdout(&o).contains("parameters: 6977"), "{}", stdout(&o));
    assert_eq!(load_model(&out).unwrap().param_count(), 6977);
    let csv = fs::read_to_string(dir.path().join("s.cemw.loss.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,train_mse,val_mse");
    assert_eq!(lines.len(), 1 + 3);
}

#[test]
fn divergent_training_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let o = chanest(&[
        "train", "--data", p(&data), "--arch", "student", "--epochs", "30", "--batch", "4", "--lr", "1e300",
        "--out", p(&dir.path().join("m.cemw")),
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn attack_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let model = train_small(dir.path(), &data, "undefended", "1", "u.cemw");

    let adv = dir.path().join("fgsm0.cegd");
    ok(chanest(&["attack", "--model", p(&model), "--data", p(&data), "--attack", "fgsm", "--eps", "0",
        "--subset", "all", "--out", p(&adv)]));
    let original = load_dataset(&data).unwrap();
    let perturbed = load_dataset(&adv).unwrap();
    assert_eq!(perturbed.inputs(), original.inputs());
    assert!(dir.path().join("fgsm0.cegd.attack.json").exists());

    let adv = dir.path().join("bim.cegd");
    ok(chanest(&["attack", "--model", p(&model), "--data", p(&data), "--attack", "bim", "--eps", "0.5",
        "--subset", "all", "--out", p(&adv)]));
    let perturbed = load_dataset(&adv).unwrap();
    assert_ne!(perturbed.inputs(), original.inputs());
    assert_eq!(perturbed.labels(), original.labels());

    let o = ok(chanest(&["attack", "--model", p(&model), "--data", p(&data), "--attack", "cw", "--eps", "2",
        "--iters", "1", "--out", p(&dir.path().join("cw.cegd"))]));
    assert!(stderr(&o).contains("ignoring --eps"), "{}", stderr(&o));

    let o = chanest(&["attack", "--model", p(&model), "--data", p(&data), "--attack", "deepfool",
        "--out", p(&dir.path().join("x.cegd"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for name in ["fgsm", "bim", "pgd", "mim", "cw"] {
        assert!(err.contains(name), "{err}");
    }

    let o = chanest(&["attack", "--model", p(&model), "--data", p(&data), "--attack", "mim", "--eps", "0",
        "--out", p(&dir.path().join("x.cegd"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn distill_with_zero_alpha_matches_plain_student() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let teacher = dir.path().join("t.cemw");
    let student = dir.path().join("s.cemw");
    ok(chanest(&[
        "distill", "--data", p(&data), "--teacher-out", p(&teacher), "--student-out", p(&student),
        "--alpha", "0", "--epochs", "2", "--batch", "4", "--lr", "0.01", "--seed", "3",
    ]));
    let plain = train_small(dir.path(), &data, "student", "3", "plain.cemw");
    assert_eq!(fs::read(&student).unwrap(), fs::read(&plain).unwrap());
    assert_eq!(load_model(&teacher).unwrap().param_count(), 23553);

    let report = fs::read_to_string(dir.path().join("distill_report.json")).unwrap();
    assert!(report.contains("\"teacher\"") && report.contains("\"student\""), "{report}");
    assert!(report.contains("benign_mse"), "{report}");
}

#[test]
fn sweep_is_deterministic_and_table_matches_csv() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let undefended = train_small(dir.path(), &data, "undefended", "1", "u.cemw");
    let student = train_small(dir.path(), &data, "student", "2", "s.cemw");
    let models = format!("{},{}", p(&undefended), p(&student));
    let run = |name: &str| {
        let out = dir.path().join(name);
        let svg = dir.path().join(format!("{name}.svg"));
        let o = ok(chanest(&["sweep", "--models", &models, "--data", p(&data), "--eps-list", "0.5,3",
            "--attacks", "all", "--out", p(&out), "--svg", p(&svg)]));
        (fs::read(&out).unwrap(), stdout(&o), svg)
    };
    let (csv, table, svg) = run("a.csv");
    let (csv2, _, _) = run("b.csv");
    assert_eq!(csv, csv2);
    let text = String::from_utf8(csv).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(header, "model,attack,epsilon,mse_benign,mse_malicious,asr");
    assert_eq!(text.lines().count(), 1 + 2 * (4 * 2 + 1));
    let table_header: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(table_header.join(","), header);
    assert!(fs::read_to_string(svg).unwrap().contains("<polyline"));

    let o = chanest(&["sweep", "--models", &models, "--data", p(&data), "--attacks", "fgsm,nope",
        "--out", p(&dir.path().join("c.csv"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn thread_cap_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_chanest"))
        .args(["generate", "--samples", "1", "--out", p(&dir.path().join("d.cegd"))])
        .env("CHANEST_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let cfg = dir.path().join("scenario.json");
    fs::write(&cfg, SMALL_CONFIG).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_chanest"))
        .args(["generate", "--config", p(&cfg), "--samples", "2", "--out", p(&dir.path().join("d.cegd"))])
        .env("CHANEST_THREADS", "1")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
}
