use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ehlink::analysis::{average_pdp, PdpMode};
use ehlink::config::SimConfig;
use ehlink::policy::{BeliefVector, PolicyTable};
use ehlink::sim::{LinkModel, CSV_HEADER};

fn ehlink(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ehlink")).args(args).current_dir(dir).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("c.cfg");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn bad_config_exits_with_two_and_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "frames = 10\nbeta = 3\n");
    let out = ehlink(&["sweep", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("c.cfg:2:"));

    let out = ehlink(&["sweep", "--config", "missing.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = ehlink(&["run", "fig9"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = ehlink(&["sweep", "--rho", "1.5"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_writes_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "frames = 200\nreplications = 2\n");
    let out = ehlink(&["sweep", "--config", &cfg, "--rho", "0.4", "--policy", "equal:15", "--beta", "1"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..5], &["0.4", "ACK/NAK", "equal:15", "1", "4"]);
    assert_eq!(row[8], "2");
}

#[test]
fn analyze_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let text = "rho = 0.5\nharvest_tx_ptx = 2\ncapacity_tx_ptx = 3\nharvest_rx_prx = 1.2\n\
                capacity_rx_prx = 2\np_dec_mw = 500\nchannel_mode = per_frame\npolicy = equal:15\n";
    let cfg = write_config(dir.path(), text);
    let out = ehlink(&["analyze", "--config", &cfg], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let values: Vec<f64> = stdout.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();

    let config = SimConfig::parse_str(text, "inline").unwrap();
    let chain = LinkModel::from_config(&config).unwrap().chain_model().unwrap();
    assert_eq!(values[0], 0.5);
    assert_eq!(values[1], average_pdp(&chain, PdpMode::Bound).unwrap());
    assert_eq!(values[2], average_pdp(&chain, PdpMode::Chain).unwrap());
}

#[test]
fn solved_table_reloads_with_identical_actions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "max_k = 2\nrho_grid = 0.3, 0.7\nkappa = 4\n");
    let out = ehlink(&["solve", "--config", &cfg, "--out", "policy.bin"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = PolicyTable::load(&dir.path().join("policy.bin")).unwrap();
    let again = PolicyTable::load(&dir.path().join("policy.bin")).unwrap();
    assert_eq!(table, again);
    let belief = BeliefVector::new(vec![0.2, 0.3, 0.5]).unwrap();
    for rho in [0.3, 0.7] {
        for b in 0..=table.capacity {
            for k in 1..=2 {
                assert!(table.lookup(rho, &belief, b, k) <= b);
            }
        }
    }
}

#[test]
fn fig6_run_writes_analytical_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "frames = 500\nreplications = 1\nrho_grid = 0.5\n");
    let out = ehlink(&["run", "fig6", "--config", &cfg, "--out", "res"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["fig6.csv", "fig6.gp", "analytical.csv"] {
        assert!(dir.path().join("res").join(f).exists(), "{f}");
    }
}

#[test]
fn compare_reports_both_schemes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "frames = 300\nreplications = 2\n");
    let out = ehlink(&["compare", "--config", &cfg, "--rho", "0.5", "--policy", "equal"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains(",ACK/NAK,") && text.contains(",ACK/NAKx,"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nakx_minus_nak"));
}
