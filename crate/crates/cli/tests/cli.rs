//! Behavior of the `dassf` binary: determinism, exit codes, stage logs,
//! and error reporting.

use std::path::Path;
use std::process::{Command, Output};

use dassf_core::detector::{init_random, ModelConfig};
use dassf_core::imgio::write_raw_tensor;
use dassf_core::tensor::Tensor;
use dassf_core::weights::{save, Rng64, WeightStore};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dassf"))
}

fn small_cfg(input: usize) -> ModelConfig {
    ModelConfig {
        input_size: (input, input),
        stem_channels: 4,
        channels: [8, 16, 24, 32],
        head_channels: 16,
        num_classes: 3,
        dyhead_blocks: 1,
        ..ModelConfig::default()
    }
}

fn write_cfg(dir: &Path, cfg: &ModelConfig) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    path
}

fn write_image(dir: &Path, size: usize, seed: u64) -> std::path::PathBuf {
    let mut rng = Rng64::new(seed);
    let img = Tensor::from_fn(&[1, 3, size, size], |_| rng.uniform()).unwrap();
    let path = dir.join("image.bin");
    std::fs::write(&path, write_raw_tensor(&img)).unwrap();
    path
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

#[test]
fn forward_is_deterministic_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), &small_cfg(320));
    let img = write_image(dir.path(), 320, 77);
    let out1 = dir.path().join("a.txt");
    let out2 = dir.path().join("b.txt");
    for out in [&out1, &out2] {
        let o = run(bin()
            .args(["forward", "--seed", "7"])
            .arg("--config")
            .arg(&cfg)
            .arg("--image")
            .arg(&img)
            .arg("--out")
            .arg(out));
        assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    }
    let a = std::fs::read(&out1).unwrap();
    let b = std::fs::read(&out2).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn forward_stage_log_shows_head_grids() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), &small_cfg(640));
    let img = write_image(dir.path(), 640, 5);
    let out = dir.path().join("d.txt");
    let o = run(bin()
        .args(["forward", "--seed", "3"])
        .arg("--config")
        .arg(&cfg)
        .arg("--image")
        .arg(&img)
        .arg("--out")
        .arg(&out));
    assert!(o.status.success());
    let log = String::from_utf8_lossy(&o.stdout);
    for grid in ["160x160", "80x80", "40x40", "20x20"] {
        assert!(log.contains(grid), "stage log missing {}: {}", grid, log);
    }
}

#[test]
fn forward_confidence_one_writes_empty_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ModelConfig {
        confidence: 1.0,
        ..small_cfg(320)
    };
    let cfg = write_cfg(dir.path(), &cfg);
    let img = write_image(dir.path(), 320, 9);
    let out = dir.path().join("d.txt");
    let o = run(bin()
        .args(["forward", "--seed", "3"])
        .arg("--config")
        .arg(&cfg)
        .arg("--image")
        .arg(&img)
        .arg("--out")
        .arg(&out));
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(&out).unwrap(), "");
}

#[test]
fn forward_unreadable_image_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), &small_cfg(320));
    let out = dir.path().join("d.txt");
    let o = run(bin()
        .args(["forward", "--seed", "3"])
        .arg("--config")
        .arg(&cfg)
        .arg("--image")
        .arg(dir.path().join("missing.bin"))
        .arg("--out")
        .arg(&out));
    assert!(!o.status.success());
    assert!(!out.exists(), "no partial output file may appear");
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
}

#[test]
fn forward_detection_line_format() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), &small_cfg(320));
    let img = write_image(dir.path(), 320, 77);
    let out = dir.path().join("d.txt");
    let o = run(bin()
        .args(["forward", "--seed", "7"])
        .arg("--config")
        .arg(&cfg)
        .arg("--image")
        .arg(&img)
        .arg("--out")
        .arg(&out));
    assert!(o.status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(!text.is_empty());
    for line in text.lines() {
        let parts: Vec<&str> = line.split(' ').collect();
        assert_eq!(parts.len(), 6, "line `{}`", line);
        let class: usize = parts[0].parse().unwrap();
        assert!(class < 3);
        let score: f32 = parts[1].parse().unwrap();
        assert!(score > 0.0 && score < 1.0);
        let coords: Vec<f32> = parts[2..].iter().map(|p| p.parse().unwrap()).collect();
        assert!(coords[0] < coords[2] && coords[1] < coords[3]);
    }
}

#[test]
fn gradcheck_pass_and_determinism() {
    let o1 = run(bin().args(["gradcheck", "--module", "all", "--seed", "1"]));
    assert!(o1.status.success());
    let o2 = run(bin().args(["gradcheck", "--module", "all", "--seed", "1"]));
    assert_eq!(o1.stdout, o2.stdout);
    let text = String::from_utf8_lossy(&o1.stdout);
    assert!(text.contains("pass"));
    for module in ["tensor-core", "dysample", "scale-fusion", "dyhead"] {
        assert!(text.contains(module), "missing module {} in: {}", module, text);
    }
}

#[test]
fn gradcheck_absurd_eps_fails_nonzero() {
    let o = run(bin().args(["gradcheck", "--module", "tensor-core", "--seed", "1", "--eps", "10"]));
    assert!(!o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("FAIL"), "expected failures in: {}", text);
}

#[test]
fn gradcheck_rejects_unknown_module() {
    let o = run(bin().args(["gradcheck", "--module", "bogus"]));
    assert!(!o.status.success());
}

#[test]
fn inspect_reports_totals_and_flags() {
    let o = run(bin().args(["inspect", "--seed", "4"]));
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("offset gen s=2 g=4"));
    assert!(text.contains("offset gen s=4 g=4"));
    assert!(text.contains("dssff=true xsmall=true dyhead=true"));

    // totals line equals the sum of per-tensor counts
    let store = init_random(&ModelConfig::default(), 4).unwrap();
    assert!(text.contains(&format!("{} params in {} tensors", store.total_params(), store.len())));
}

#[test]
fn inspect_missing_tensor_named_in_error() {
    let dir = tempfile::tempdir().unwrap();
    let store = init_random(&ModelConfig::default(), 4).unwrap();
    let mut partial = WeightStore::new();
    for (name, t) in store.iter() {
        if name != "neck.cpam.pos_h.weight" {
            partial.insert(name, t.clone()).unwrap();
        }
    }
    let path = dir.path().join("partial.dasf");
    save(&partial, &path).unwrap();
    let o = run(bin().args(["inspect"]).arg("--weights").arg(&path));
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("neck.cpam.pos_h.weight"));
}

#[test]
fn bench_accepts_multiple_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let json_path = dir.path().join("bench.json");
    let o = run(bin()
        .args(["bench", "--sizes", "8x16x16,4x8x8", "--scale", "2", "--repeats", "5"])
        .arg("--out")
        .arg(&json_path));
    assert!(o.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
    assert_eq!(report["entries"].as_array().unwrap().len(), 6);
    let o = run(bin().args(["bench", "--sizes", "8x16", "--repeats", "5"]));
    assert!(!o.status.success(), "malformed size must be rejected");
}

#[test]
fn bench_nearest_deviates_dysample_does_not() {
    let dir = tempfile::tempdir().unwrap();
    let json_path = dir.path().join("bench.json");
    let o = run(bin()
        .args(["bench", "--sizes", "8x16x16", "--scale", "2", "--repeats", "5"])
        .arg("--out")
        .arg(&json_path));
    assert!(o.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
    let entries = report["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 3);
    for e in entries {
        let method = e["method"].as_str().unwrap();
        let dev = e["max_abs_dev_vs_bilinear"].as_f64().unwrap();
        match method {
            "nearest" => assert!(dev > 0.0, "nearest must differ from bilinear"),
            "bilinear" => assert_eq!(dev, 0.0),
            "dysample" => assert!(dev < 1e-5, "zero-offset dysample dev {}", dev),
            other => panic!("unexpected method {}", other),
        }
        assert!(e["median_ms"].as_f64().unwrap() >= 0.0);
    }
}
