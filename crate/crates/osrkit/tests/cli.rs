use std::path::Path;
use std::process::{Command, Output};

use osrkit::report::{read_plot_data, read_report};
use osrkit::ExperimentConfig;

const SMALL: &str = r#"
input_count = 1
methods = ["saliency", "input_x_gradient"]

[dataset]
source = "synthetic_blobs"

[classifier]
hidden = [16]

[gan]
noise_dim = 8
first_hidden = 16
hidden_layers = 2
dataset_copies = 256

[neighborhood]
gan_candidates = 200
noise_candidates = 200
"#;

fn osrkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_osrkit"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    std::fs::write(&path, SMALL).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn config_prints_effective_toml() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let text = ok(osrkit(&["--config", &cfg, "--seed", "9", "config"]));
    let parsed = ExperimentConfig::from_toml(&text, Path::new("stdout")).unwrap();
    assert_eq!(parsed.master_seed, 9);
    assert_eq!(parsed.input_count, 1);
    assert_eq!(parsed.gan.noise_dim, 8);
}

#[test]
fn invalid_config_fails_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "input_count = 0\n").unwrap();
    let out = osrkit(&["--config", path.to_str().unwrap(), "config"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.toml"));
}

#[test]
fn staged_commands_match_a_single_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let staged = dir.path().join("staged");
    let whole = dir.path().join("whole");
    let s = staged.to_str().unwrap();
    for stage in ["train", "gan", "attribute", "evaluate", "rank", "report"] {
        ok(osrkit(&["--config", &cfg, "--out-dir", s, stage]));
    }
    ok(osrkit(&[
        "--config",
        &cfg,
        "--out-dir",
        whole.to_str().unwrap(),
        "run",
    ]));

    for f in [
        "models/well.ckpt",
        "models/bad.ckpt",
        "generators/well-0.ckpt",
        "timings.json",
    ] {
        assert!(staged.join(f).exists(), "{f}");
    }
    let a = std::fs::read(staged.join("report.json")).unwrap();
    let b = std::fs::read(whole.join("report.json")).unwrap();
    assert_eq!(a, b);

    let report = read_report(&staged.join("report.json")).unwrap();
    let rows = read_plot_data(&staged.join("plots").join("osr.csv")).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(report
        .metrics
        .summaries
        .iter()
        .any(|s| s.method == rows[0].method && s.mean == rows[0].mean));
}

#[test]
fn later_stages_explain_missing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = osrkit(&[
        "--config",
        &cfg,
        "--out-dir",
        dir.path().to_str().unwrap(),
        "gan",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("osrkit train"));
}
