use std::path::Path;
use std::process::{Command, Output};

use promogen::config::TrainConfig;
use promogen::motion::{read_pmg, write_anchors_json, write_trajectory_csv};
use promogen::motion::{extract_trajectory, gather_anchors};
use promogen::pipeline::SyntheticSpec;

fn promogen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_promogen")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = promogen(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let mut cfg = TrainConfig::default();
    cfg.network.width = 8;
    cfg.network.blocks = 1;
    cfg.network.heads = 2;
    cfg.network.max_frames = 32;
    cfg.loss.disc_hidden = Some(8);
    cfg.train.batch_size = 2;
    cfg.train.iterations_per_epoch = Some(2);
    cfg.curriculum.e_total = 4;
    cfg.data = SyntheticSpec { count: 8, frames: 24, ..Default::default() };
    cfg.diffusion.steps = 3;
    cfg.eval.items = Some(4);
    cfg.eval.densities = vec![1, 3];
    cfg.eval.diversity_pairs = 4;
    cfg.eval.bootstrap = 50;
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    path
}

#[test]
fn end_to_end_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let config = write_config(d);
    let data = d.join("data");
    ok(&["gen-data", "--config", p(&config), "--out", p(&data), "--count", "6"]);
    let files: Vec<_> = std::fs::read_dir(&data).unwrap().collect();
    assert_eq!(files.len(), 6);
    let first = read_pmg(&data.join("00000.pmg")).unwrap();
    assert_eq!(first.frames(), 24);

    let ckpt = d.join("model.ckpt");
    let log = d.join("log.json");
    ok(&["train", "--config", p(&config), "--data", p(&data), "--out", p(&ckpt), "--log", p(&log)]);
    let log: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&log).unwrap()).unwrap();
    assert_eq!(log["epochs"].as_array().unwrap().len(), 4);

    let traj = d.join("traj.csv");
    let anchors = d.join("anchors.json");
    write_trajectory_csv(&extract_trajectory(&first), &traj).unwrap();
    write_anchors_json(&gather_anchors(&first, &[2, 12]).unwrap(), &anchors).unwrap();
    let sample = d.join("sample.pmg");
    let svg = d.join("traj.svg");
    ok(&[
        "sample", "--checkpoint", p(&ckpt), "--trajectory", p(&traj), "--anchors", p(&anchors), "--seed", "5",
        "--out", p(&sample), "--svg", p(&svg),
    ]);
    assert_eq!(read_pmg(&sample).unwrap().frames(), 24);
    assert!(std::fs::read_to_string(&svg).unwrap().contains("<svg"));

    let report = ok(&["eval", "--config", p(&config), "--checkpoint", p(&ckpt), "--data", p(&data)]);
    let report: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(report["densities"], serde_json::json!([1, 3]));
    assert_eq!(report["results"].as_array().unwrap().len(), 2);
}

#[test]
fn fm_sample_and_schedule_dump() {
    let out = ok(&["fm-sample", "--n", "196", "--f-n", "20", "--f-s", "4", "--count", "3", "--seed", "1"]);
    let doc: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(doc["draws"].as_array().unwrap().len(), 3);
    assert!(doc["count_valid"].as_str().unwrap().parse::<u128>().unwrap() > 0);

    let out = ok(&["schedule-dump", "--noise"]);
    let doc: serde_json::Value = serde_json::from_str(&out).unwrap();
    let ks: Vec<u64> = doc["curriculum"].as_array().unwrap().iter().map(|r| r["k_min"].as_u64().unwrap()).collect();
    assert_eq!(ks, [20, 13, 7, 1]);
    assert_eq!(doc["noise"].as_array().unwrap().len(), 1001);
}

#[test]
fn convert_world_joints() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("j.csv");
    let row: Vec<String> = (0..66).map(|i| format!("{}", i as f64 * 0.01)).collect();
    std::fs::write(&input, format!("{}\n{}\n{}\n", row.join(","), row.join(","), row.join(","))).unwrap();
    let out = dir.path().join("m.pmg");
    ok(&["convert", "--input", p(&input), "--out", p(&out)]);
    assert_eq!(read_pmg(&out).unwrap().frames(), 3);
}

#[test]
fn errors_exit_non_zero() {
    let out = promogen(&["fm-sample", "--n", "10", "--f-n", "5", "--f-s", "3"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    let out = promogen(&["sample", "--checkpoint", "/nonexistent/x.ckpt", "--out", "/tmp/never.pmg"]);
    assert!(!out.status.success());
}
