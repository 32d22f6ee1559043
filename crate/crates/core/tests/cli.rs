mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::smooth_image;
use tiled_sr::io::{save_image, BitDepth};
use tiled_sr::tensor::bicubic_resize;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tiled-sr"))
        .args(args)
        .env_remove("TILED_SR_BRIDGE")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes `lr/<name>.png` (32x32) and `hr/<name>.png` (128x128).
fn corpus(dir: &Path, names: &[&str]) {
    std::fs::create_dir_all(dir.join("lr")).unwrap();
    std::fs::create_dir_all(dir.join("hr")).unwrap();
    for (i, n) in names.iter().enumerate() {
        let hr = smooth_image(128, 128, 3, i as f64);
        save_image(&hr, dir.join("hr").join(format!("{n}.png")), BitDepth::Sixteen).unwrap();
        let lr = bicubic_resize(&hr, 32, 32).unwrap();
        save_image(&lr, dir.join("lr").join(format!("{n}.png")), BitDepth::Sixteen).unwrap();
    }
}

#[test]
fn run_batch_with_toy_backend_and_reference() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), &["b", "a"]);
    let out = dir.path().join("out");
    let o = cli(&[
        "run", "--input", s(&dir.path().join("lr")), "-o", s(&out),
        "--backend", &format!("toy:{}", s(&dir.path().join("hr"))),
        "--reference", s(&dir.path().join("hr")),
        "--tags", "mock", "--scale", "4", "--window", "8", "--stride", "4", "--steps", "10",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["a.png", "b.png", "a.report.json", "b.trajectory.csv", "metrics.csv"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "image_id,method,psnr,ssim,lpips,status");
    assert!(lines[1].starts_with("a,local,") && lines[2].starts_with("b,local,"));
    assert!(lines[3].starts_with("mean,"));
    for l in &lines[1..] {
        let psnr: f64 = l.split(',').nth(2).unwrap().parse().unwrap();
        assert!(psnr > 60.0, "{l}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("a.report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["window"], 8);
    assert_eq!(report["config"]["guidance_scale"], 5.5);
    assert_eq!(report["plan"]["windows"].as_array().unwrap().len(), 9);
}

#[test]
fn prompt_modes_give_two_outputs() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), &["x"]);
    let lr = dir.path().join("lr/x.png");
    let backend = format!("toy:{}", s(&dir.path().join("hr/x.png")));
    for mode in ["local", "global"] {
        let o = cli(&[
            "run", "--input", s(&lr), "-o", s(&dir.path().join(mode)), "--backend", &backend,
            "--toy-coupling", "0.01", "--window", "8", "--stride", "4", "--steps", "6", "--prompt-mode", mode,
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let r: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("global/x.report.json")).unwrap()).unwrap();
    assert_eq!(r["config"]["prompt_mode"], "global");
}

#[test]
fn missing_input_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["run", "--input", "/nonexistent/lr.png", "-o", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/lr.png"));
}

#[test]
fn failures_continue_unless_fail_fast() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), &["a", "c"]);
    std::fs::write(dir.path().join("lr/b.png"), b"not a png").unwrap();
    let args = |out: &str| {
        vec![
            "run".to_string(), "--input".into(), s(&dir.path().join("lr")).into(), "-o".into(),
            s(&dir.path().join(out)).into(), "--window".into(), "8".into(), "--stride".into(), "4".into(),
            "--steps".into(), "2".into(),
        ]
    };
    let o = cli(&args("keep").iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(o.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("b.png"), "{stderr}");
    assert!(dir.path().join("keep/c.png").exists());

    let mut ff = args("stop");
    ff.push("--fail-fast".into());
    let o = cli(&ff.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(o.status.code(), Some(2));
    assert!(dir.path().join("stop/a.png").exists());
    assert!(!dir.path().join("stop/c.png").exists());
}

#[test]
fn usage_and_backend_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), &["a"]);
    let lr = dir.path().join("lr/a.png");
    let o = cli(&["run", "--input", s(&lr), "-o", s(dir.path()), "--backend", "magic"]);
    assert_eq!(o.status.code(), Some(1));
    let o = cli(&["run", "--input", s(&lr), "-o", s(dir.path()), "--window", "8", "--stride", "9"]);
    assert_eq!(o.status.code(), Some(1));
    let o = cli(&["run", "--input", s(&lr), "-o", s(dir.path()), "--backend", "bridge:127.0.0.1:1"]);
    assert_eq!(o.status.code(), Some(3));
    let o = cli(&["run", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bridge_address_env_override() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), &["a"]);
    let bin = env!("CARGO_BIN_EXE_tiled-sr");
    let o = Command::new(bin)
        .args(["run", "--input", s(&dir.path().join("lr/a.png")), "-o", s(&dir.path().join("out"))])
        .args(["--backend", "bridge:127.0.0.1:1", "--window", "8", "--stride", "4", "--steps", "2"])
        .env(
            "TILED_SR_BRIDGE",
            format!("exec:'{bin}' echo-server --stdio --window-w 8 --window-h 8 --channels 192"),
        )
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("out/a.png").exists());
}

#[test]
fn analyze_tags_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let o = cli(&["analyze-tags", "--input", s(&empty)]);
    assert!(o.status.success());
    assert_eq!(
        String::from_utf8_lossy(&o.stdout).trim(),
        "image_id,global_count,local_unique_count,per_window_counts,status"
    );
    let o = cli(&["analyze-tags"]);
    assert!(o.status.success());

    // a single-window image: both counts come from the same patch
    let img = common::heterogeneous_image(&mut common::rng(4), 512);
    save_image(&img, dir.path().join("one.png"), BitDepth::Eight).unwrap();
    let csv_path = dir.path().join("tags.csv");
    let o = cli(&["analyze-tags", "--input", s(&dir.path().join("one.png")), "-o", s(&csv_path)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "one");
    assert_eq!(row[1], row[2]);
    assert_eq!(row[4], "ok");
}

#[test]
fn eval_pairs_and_mean() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), &["a", "b"]);
    let sr = dir.path().join("sr");
    std::fs::create_dir(&sr).unwrap();
    std::fs::copy(dir.path().join("hr/a.png"), sr.join("a.png")).unwrap();
    let blurred = bicubic_resize(&smooth_image(64, 64, 3, 1.0), 128, 128).unwrap();
    save_image(&blurred, sr.join("b.png"), BitDepth::Sixteen).unwrap();
    save_image(&smooth_image(16, 16, 3, 0.0), sr.join("c.png"), BitDepth::Sixteen).unwrap();
    let o = cli(&["eval", "--sr", s(&sr), "--hr", s(&dir.path().join("hr")), "--method", "ours"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8_lossy(&o.stdout).to_string();
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[1], "a,ours,inf,1.000000,,ok");
    assert!(lines[2].starts_with("b,ours,"));
    assert!(lines[3].starts_with("c,ours,,,,failed"));
    let b: Vec<&str> = lines[2].split(',').collect();
    let mean: Vec<&str> = lines[4].split(',').collect();
    assert_eq!(mean[0], "mean");
    // the infinite row is excluded from the mean
    assert_eq!(mean[2], b[2]);
}

#[test]
fn plan_prints_windows() {
    let o = cli(&["plan", "--width", "96", "--height", "64"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.starts_with("plan parent=96x64 window=64x64 stride=32 windows=2 (2x1)"), "{text}");
    assert!(text.contains("origin=(32, 0)"));
}
