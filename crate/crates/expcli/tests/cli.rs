use std::fs;
use std::path::Path;
use std::process::Command;

use evmlink_cli::{emit_plot, load_config, PlotSpec, ResultTable};

const BIN: &str = env!("CARGO_BIN_EXE_evmlink");

fn configs() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/configs"))
}

fn write_config(dir: &Path, json: &str) -> std::path::PathBuf {
    let p = dir.join("cfg.json");
    fs::write(&p, json).unwrap();
    p
}

fn run(args: &[&str]) -> std::process::Output {
    Command::new(BIN).args(args).output().unwrap()
}

const SMALL_SWEEP: &str = r#"{"command": "sweep_nav", "sweep": {"start": 1, "stop": 3, "step": 1, "unit": "ms"},
    "frame_types": ["AssocRequest", "Beacon"], "tracking_modes": ["pilot_phase_amplitude", "off"],
    "subcarrier_snr_db": 15, "impairments": {"cfo_hz": 300, "phase_noise_linewidth_hz": 50},
    "analyzer": {"cfo_correction": "none", "channel_estimation": "long_training"}, "n_frames": 2, "seed": 9}"#;

#[test]
fn writes_csv_plot_and_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_SWEEP);
    let out = dir.path().join("out");
    let o = run(&["sweep_nav", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let table = ResultTable::read_csv(fs::File::open(out.join("results.csv")).unwrap()).unwrap();
    assert_eq!(table.rows.len(), 3 * 2 * 2);
    let hashes: std::collections::BTreeSet<&str> = table.column("config_hash").unwrap().into_iter().collect();
    assert_eq!(hashes.len(), 1);

    let svg = fs::read_to_string(out.join("plot.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    let text: String = doc.descendants().filter_map(|n| n.text()).collect();
    assert!(text.contains("NAV (ms)"));
    let circles = doc.descendants().filter(|n| n.has_tag_name("circle")).count();
    assert_eq!(circles, table.rows.len());
    let dashed = doc.descendants().filter(|n| n.attribute("class") == Some("series untracked")).count();
    assert_eq!(dashed, 2);

    // The resolved config reruns to the same table.
    let resolved = load_config(&out.join("config.resolved.json")).unwrap();
    assert_eq!(resolved.config_hash(), hashes.into_iter().next().unwrap());
    let again = evmlink_cli::run_experiment(&resolved).unwrap();
    assert_eq!(again.to_csv_string().unwrap(), table.to_csv_string().unwrap());
}

#[test]
fn reruns_are_byte_identical_and_seed_flag_changes_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_SWEEP);
    let csv = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec!["sweep_nav", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        assert!(run(&args).status.success());
        fs::read(out.join("results.csv")).unwrap()
    };
    let a = csv("a", &[]);
    assert_eq!(a, csv("b", &["--parallel", "3"]));
    assert_ne!(a, csv("c", &["--seed", "10"]));
}

#[test]
fn plot_is_a_pure_function_of_the_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_SWEEP);
    let out = dir.path().join("out");
    assert!(run(&["sweep_nav", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.success());
    let table = ResultTable::read_csv(fs::File::open(out.join("results.csv")).unwrap()).unwrap();
    let spec = PlotSpec {
        x: "nav_ms".into(),
        y: vec!["evm_rms".into()],
        group_by: vec!["frame_type".into(), "tracking".into()],
    };
    assert_eq!(emit_plot(&table, &spec).unwrap(), fs::read_to_string(out.join("plot.svg")).unwrap());
}

#[test]
fn tracked_series_never_sit_above_untracked() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_SWEEP);
    let out = dir.path().join("out");
    assert!(run(&["sweep_nav", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.success());
    let t = ResultTable::read_csv(fs::File::open(out.join("results.csv")).unwrap()).unwrap();
    let evm: Vec<f64> = t.numeric("evm_rms").unwrap().into_iter().map(Option::unwrap).collect();
    let tracking = t.column("tracking").unwrap();
    // Rows come in (tracked, untracked) pairs per sweep point and frame type.
    for (pair, modes) in evm.chunks(2).zip(tracking.chunks(2)) {
        assert_eq!(modes, ["pilot_phase_amplitude", "off"]);
        assert!(pair[0] <= pair[1], "{pair:?}");
    }
}

#[test]
fn every_shipped_config_parses() {
    for entry in fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        let c = load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        c.resolve().unwrap();
    }
}

#[test]
fn vho_command_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("vho");
    let cfg = configs().join("vho_ramp.json");
    let o = run(&["vho", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let t = ResultTable::read_csv(fs::File::open(out.join("results.csv")).unwrap()).unwrap();
    assert!(!t.rows.is_empty());
    roxmltree::Document::parse(&fs::read_to_string(out.join("plot.svg")).unwrap()).unwrap();
}

#[test]
fn bad_configs_exit_nonzero_with_a_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"command": "single", "n_frames": 0}"#);
    let o = run(&["single", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("n_frames"));

    let cfg = write_config(dir.path(), r#"{"command": "single"}"#);
    let o = run(&["sweep_nav", "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("`command`"));
}
