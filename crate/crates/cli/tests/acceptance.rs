//! Acceptance: the benchmark harness criterion. Run with
//! `cargo test -p dassf-cli --test acceptance -- --nocapture`.

use std::process::Command;

use dassf_cli::bench::run_bench;

#[test]
fn criterion_10_benchmark_harness() {
    // library route
    let report = run_bench(&[(64, 80, 80)], 2, 5, 0).unwrap();
    let entry = |m: &str| {
        report
            .entries
            .iter()
            .find(|e| e.method == m)
            .unwrap_or_else(|| panic!("missing {} entry", m))
    };
    let dys = entry("dysample");
    assert!(
        dys.max_abs_dev_vs_bilinear < 1e-5,
        "zero-offset dysample deviation {}",
        dys.max_abs_dev_vs_bilinear
    );
    // C * 2gs^2 + 2gs^2 bias = 64*32 + 32
    assert_eq!(dys.param_count, 64 * 32 + 32);
    assert_eq!(entry("nearest").param_count, 0);
    assert_eq!(entry("bilinear").param_count, 0);
    assert!(entry("nearest").max_abs_dev_vs_bilinear > 0.0);
    for e in &report.entries {
        assert!(e.median_ms.is_finite() && e.median_ms >= 0.0);
        assert!(e.throughput_per_s > 0.0);
    }

    // command route: same facts through the JSON report
    let dir = tempfile::tempdir().unwrap();
    let json_path = dir.path().join("bench.json");
    let o = Command::new(env!("CARGO_BIN_EXE_dassf"))
        .args(["bench", "--sizes", "64x80x80", "--scale", "2", "--repeats", "5"])
        .arg("--out")
        .arg(&json_path)
        .output()
        .unwrap();
    assert!(o.status.success());
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
    let dys_json = parsed["entries"]
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["method"] == "dysample")
        .unwrap();
    assert!(dys_json["max_abs_dev_vs_bilinear"].as_f64().unwrap() < 1e-5);
    assert_eq!(dys_json["param_count"].as_u64().unwrap(), 64 * 32 + 32);

    println!(
        "[PASS] criterion 10 benchmark harness: (64,80,80) s=2 dysample deviation {:.2e} (< 1e-5), param count {} = C*2gs^2 + bias",
        dys.max_abs_dev_vs_bilinear, dys.param_count
    );
}
