use std::path::Path;
use std::process::{Command, Output};

use pgrain::eval::{
    ablate_m, ablation_csv, compute_metrics, density_imbalanced_spec, generate_scene, report_csv, seeded_scenes,
    ToyPipelineConfig,
};
use pgrain::io::{format_xyz, read_bundle, read_xyz, write_xyz};
use pgrain::norm::sigma_map;
use pgrain::pagwn::{inputs_from_tensors, pagwn_forward_batch, PagwnConfig};
use pgrain::sampling::farthest_point_sample;
use pgrain::PagwnParams;

fn pgrain(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pgrain"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn pgrain")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = pgrain(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn scene(dir: &Path) -> pgrain::PointCloud {
    let cloud = generate_scene(&density_imbalanced_spec(3)).unwrap();
    write_xyz(dir.join("s.xyz"), &cloud).unwrap();
    cloud
}

#[test]
fn sample_single_point_and_range_error() {
    let dir = tempfile::tempdir().unwrap();
    scene(dir.path());
    ok(dir.path(), &["sample", "s.xyz", "--labeled", "--method", "fps", "--count", "1", "--seed", "7", "-o", "one.xyz"]);
    let one = read_xyz(dir.path().join("one.xyz"), 3, true).unwrap();
    assert_eq!(one.len(), 1);

    let out = pgrain(dir.path(), &["sample", "s.xyz", "--labeled", "--count", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("m-out-of-range"));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = pgrain(dir.path(), &["sample", "s.xyz"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(pgrain(dir.path(), &["no-such-command"]).status.code(), Some(2));
}

#[test]
fn missing_input_is_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = pgrain(dir.path(), &["sample", "absent.xyz", "--count", "3"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_thread_count_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pgrain"))
        .args(["scene", "-o", "x.xyz"])
        .current_dir(dir.path())
        .env("PGRAIN_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn fps_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = scene(dir.path());
    ok(dir.path(), &["sample", "s.xyz", "--labeled", "--count", "40", "--seed", "11", "-o", "f.xyz"]);
    let idx = farthest_point_sample(&cloud, 40, 11).unwrap();
    let expected = format_xyz(&cloud.select(&idx).unwrap());
    assert_eq!(std::fs::read_to_string(dir.path().join("f.xyz")).unwrap(), expected);
    let sidecar: Vec<usize> = std::fs::read_to_string(dir.path().join("f.xyz.idx"))
        .unwrap()
        .lines()
        .map(|l| l.parse().unwrap())
        .collect();
    assert_eq!(sidecar, idx);
}

#[test]
fn sigma_map_counts_and_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = scene(dir.path());
    let all = ok(dir.path(), &["sigma-map", "s.xyz", "--labeled", "--k", "8", "--threshold", "0"]);
    assert_eq!(all.trim(), cloud.len().to_string());

    let out = ok(dir.path(), &["sigma-map", "s.xyz", "--labeled", "--k", "16", "--threshold", "0.3", "-o", "m.xyz"]);
    let lib = sigma_map(&cloud, 16, 0.3).unwrap();
    assert_eq!(out.trim(), lib.len().to_string());
    let idx: Vec<usize> = std::fs::read_to_string(dir.path().join("m.xyz.idx"))
        .unwrap()
        .lines()
        .map(|l| l.parse().unwrap())
        .collect();
    assert_eq!(idx, lib);

    let blob = pgrain::PointCloud::new(
        (0..50).map(|i| [i as f64 * 1e-4, 0.0, 0.0]).collect(),
        vec![vec![0.5, 0.5, 0.5]; 50],
        None,
    )
    .unwrap();
    write_xyz(dir.path().join("blob.xyz"), &blob).unwrap();
    assert_eq!(ok(dir.path(), &["sigma-map", "blob.xyz", "--k", "16"]).trim(), "0");
}

#[test]
fn forward_matches_in_process() {
    let dir = tempfile::tempdir().unwrap();
    scene(dir.path());
    ok(dir.path(), &["windows", "s.xyz", "--labeled", "--count", "20", "--k", "12", "--seed", "2", "-o", "win"]);
    ok(dir.path(), &["pagwn-forward", "win", "--seed", "5", "--m", "4", "-o", "out"]);
    let inputs = inputs_from_tensors(&read_bundle(dir.path().join("win")).unwrap()).unwrap();
    let lib = pagwn_forward_batch(&inputs, &PagwnParams::init(3, 5), &PagwnConfig::grouped(4)).unwrap();
    let out = read_bundle(dir.path().join("out")).unwrap();
    let agg = pgrain::io::bundle_get(&out, "aggregated").unwrap().to_array2().unwrap();
    assert_eq!(agg, lib.aggregated);
}

#[test]
fn eval_prints_metrics_csv() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("p.txt"), "0\n1\n1\n1\n").unwrap();
    std::fs::write(dir.path().join("t.txt"), "0\n0\n1\n1\n").unwrap();
    let out = ok(dir.path(), &["eval", "--pred", "p.txt", "--truth", "t.txt", "--classes", "2"]);
    assert_eq!(out, report_csv(&compute_metrics(&[0, 1, 1, 1], &[0, 0, 1, 1], 2).unwrap()));
}

#[test]
fn ablate_emits_four_rows_matching_library() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ToyPipelineConfig {
        epochs: 1,
        ..Default::default()
    };
    std::fs::write(dir.path().join("cfg.json"), serde_json::to_string(&cfg).unwrap()).unwrap();
    let csv = ok(
        dir.path(),
        &["ablate-m", "--config", "cfg.json", "--m", "1,2,3,4", "--train-scenes", "1", "--test-scenes", "1"],
    );
    assert_eq!(csv.lines().count(), 5);
    let (train, test) = seeded_scenes(0, 1, 1, density_imbalanced_spec).unwrap();
    let rows = ablate_m(&cfg, &[1, 2, 3, 4], &train, &test).unwrap();
    assert_eq!(csv, ablation_csv(&rows));
}

#[test]
fn invalid_config_reported() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), "{\"stages\": 3}").unwrap();
    let out = pgrain(dir.path(), &["train-toy", "--config", "bad.json", "-o", "t"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid-config"));
}
