use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn cortexsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cortexsim"))
        .args(args)
        .output()
        .expect("spawn cortexsim")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A small generated network and stimulus.
fn small_net() -> (TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("net.txt");
    let stim = dir.path().join("stim.txt");
    let out = cortexsim(&[
        "gen-auditory",
        "--channels",
        "3",
        "--hypercolumns",
        "3",
        "--sweep-ms",
        "5",
        "--repeats",
        "2",
        "--out",
        p(&net),
        "--stim",
        p(&stim),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    (dir, net, stim)
}

#[test]
fn generated_network_validates() {
    let (_dir, net, _) = small_net();
    let out = cortexsim(&["validate", "--net", p(&net)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("ok, 10 ranges"), "{text}");
}

#[test]
fn zero_steps_write_empty_records() {
    let (dir, net, stim) = small_net();
    let files = ["spikes.csv", "events.csv", "stats.csv"].map(|f| dir.path().join(f));
    let out = cortexsim(&[
        "run",
        "--net",
        p(&net),
        "--stim",
        p(&stim),
        "--steps",
        "0",
        "--spikes",
        p(&files[0]),
        "--events",
        p(&files[1]),
        "--stats",
        p(&files[2]),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    for f in &files {
        assert_eq!(fs::read(f).unwrap(), b"");
    }
}

#[test]
fn run_writes_one_stats_line_per_step_and_reports_throughput() {
    let (dir, net, stim) = small_net();
    let stats = dir.path().join("stats.csv");
    let out = cortexsim(&[
        "run",
        "--net",
        p(&net),
        "--stim",
        p(&stim),
        "--steps",
        "30",
        "--stats",
        p(&stats),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(&stats).unwrap();
    let ts: Vec<u64> = text
        .lines()
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(ts, (0..30).collect::<Vec<_>>());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("neuron updates/sec"), "{stdout}");
}

#[test]
fn monitor_restricts_recorded_addresses() {
    let (dir, net, stim) = small_net();
    let events = dir.path().join("events.csv");
    let out = cortexsim(&[
        "run",
        "--net",
        p(&net),
        "--stim",
        p(&stim),
        "--steps",
        "40",
        "--monitor",
        "0-7f",
        "--events",
        p(&events),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    for line in fs::read_to_string(&events).unwrap().lines() {
        let addr = u32::from_str_radix(line.split(',').nth(1).unwrap(), 16).unwrap();
        assert!(addr <= 0x7f, "{line}");
    }
}

#[test]
fn malformed_network_fails_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("bad.txt");
    fs::write(&net, "seed 1\n# comment\nbogus line\n").unwrap();
    let out = cortexsim(&["validate", "--net", p(&net)]);
    assert!(!out.status.success());
    let msg = stderr(&out);
    assert!(msg.starts_with("error:"), "{msg}");
    assert!(msg.contains("line 3"), "{msg}");
}

#[test]
fn missing_file_fails() {
    let out = cortexsim(&["validate", "--net", "/nonexistent/net.txt"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("/nonexistent/net.txt"));
}

#[test]
fn unsorted_stimulus_fails() {
    let (dir, net, _) = small_net();
    let stim = dir.path().join("unsorted.txt");
    fs::write(&stim, "ev 5 0 1 0 0 0 0 0 0 0\nev 2 0 1 0 0 0 0 0 0 0\n").unwrap();
    let out = cortexsim(&["run", "--net", p(&net), "--stim", p(&stim), "--steps", "1"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("error:"));
}

#[test]
fn gate_out_of_range_fails() {
    let (_dir, net, _) = small_net();
    let out = cortexsim(&["run", "--net", p(&net), "--steps", "1", "--f-gate", "2000"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("1023"));
}

#[test]
fn report_writes_rate_grids_and_trace() {
    let (dir, net, stim) = small_net();
    let events = dir.path().join("events.csv");
    let stats = dir.path().join("stats.csv");
    let out = cortexsim(&[
        "run",
        "--net",
        p(&net),
        "--stim",
        p(&stim),
        "--steps",
        "60",
        "--events",
        p(&events),
        "--stats",
        p(&stats),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let figs = dir.path().join("figs");
    let out = cortexsim(&[
        "report",
        "--net",
        p(&net),
        "--events",
        p(&events),
        "--stats",
        p(&stats),
        "--out",
        p(&figs),
        "--bin-ms",
        "10",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let trace = fs::read_to_string(figs.join("active_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 61);
    for name in ["rates_excitatory.csv", "rates_inhibitory.csv"] {
        let grid = fs::read_to_string(figs.join(name)).unwrap();
        // header plus 3 channels x 6 bins
        assert_eq!(grid.lines().count(), 1 + 3 * 6, "{name}");
        for line in grid.lines().skip(1) {
            let v: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
            assert!((0.0..=1.0).contains(&v), "{line}");
        }
    }
}

#[test]
fn report_without_inputs_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = cortexsim(&[
        "report",
        "--channels",
        "2",
        "--hypercolumns",
        "3",
        "--out",
        p(dir.path()),
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("--events"));
}
