//! End-to-end tests of the `spot` binary: exit codes, file outputs,
//! manifests and rerun determinism on a miniature dataset.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn spot() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spot"))
}

fn run(args: &[&str]) -> Output {
    spot().args(args).output().expect("spawn spot")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

struct Fixture {
    root: PathBuf,
    data: PathBuf,
    params: PathBuf,
}

/// Tiny dataset + trained weights shared by every test in this file.
fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let root = std::env::temp_dir().join(format!("spot-cli-tests-{}", std::process::id()));
        let data = root.join("data");
        let params = root.join("model.sptm");
        std::fs::create_dir_all(&root).unwrap();
        let out = run(&["gen-data", "--n", "24", "--seed", "5", "--out-dir", data.to_str().unwrap()]);
        assert_ok(&out);
        let out = run(&[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--out",
            params.to_str().unwrap(),
            "--epochs",
            "1",
            "--batch-size",
            "8",
            "--m",
            "8",
            "--seed",
            "3",
        ]);
        assert_ok(&out);
        Fixture { root, data, params }
    })
}

#[test]
fn gen_data_writes_manifest_and_dataset() {
    let fx = fixture();
    assert!(fx.data.join("manifest.csv").exists());
    assert!(fx.data.join("image_00000.sptf").exists());
    assert!(fx.data.join("mask_00023.sptf").exists());
    let manifest = fx.data.with_file_name("data.manifest.json");
    let text = std::fs::read_to_string(manifest).unwrap();
    assert!(text.contains("\"command\": \"gen-data\""));
    assert!(text.contains("\"status\": \"done\""));
    assert!(text.contains("elapsed_ms"));
}

#[test]
fn gen_data_is_deterministic() {
    let fx = fixture();
    let other = fx.root.join("data-rerun");
    let out =
        run(&["gen-data", "--n", "24", "--seed", "5", "--out-dir", other.to_str().unwrap()]);
    assert_ok(&out);
    for entry in std::fs::read_dir(&fx.data).unwrap() {
        let p = entry.unwrap().path();
        let name = p.file_name().unwrap();
        let a = std::fs::read(&p).unwrap();
        let b = std::fs::read(other.join(name)).unwrap();
        assert_eq!(a, b, "{name:?} differs between identical gen-data runs");
    }
}

#[test]
fn train_emits_weights_and_history() {
    let fx = fixture();
    assert!(fx.params.exists());
    assert!(fx.root.join("model.history.csv").exists());
    let manifest = std::fs::read_to_string(fx.root.join("model.sptm.manifest.json")).unwrap();
    assert!(manifest.contains("\"command\": \"train\""));
    // inputs carry the dataset digests
    assert!(manifest.contains("manifest.csv"));
}

#[test]
fn eval_writes_reports_and_reruns_identically() {
    let fx = fixture();
    let out_a = fx.root.join("eval-a");
    let out_b = fx.root.join("eval-b");
    for out in [&out_a, &out_b] {
        let r = run(&[
            "eval",
            "--data",
            fx.data.to_str().unwrap(),
            "--params",
            fx.params.to_str().unwrap(),
            "--prior",
            "uniform",
            "--m",
            "4",
            "--seed",
            "9",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_ok(&r);
    }
    let txt_a = std::fs::read(out_a.with_extension("txt")).unwrap();
    let txt_b = std::fs::read(out_b.with_extension("txt")).unwrap();
    assert_eq!(txt_a, txt_b);
    let csv_a = std::fs::read(out_a.with_extension("csv")).unwrap();
    let csv_b = std::fs::read(out_b.with_extension("csv")).unwrap();
    assert_eq!(csv_a, csv_b);
    // stochastic prior: three seeds reported
    let text = String::from_utf8(txt_a).unwrap();
    assert!(text.contains("n_seeds=3"));
    assert!(text.contains("top1_mean="));
    assert!(text.contains("top1_spread="));
}

#[test]
fn deterministic_prior_reports_single_seed() {
    let fx = fixture();
    let out = fx.root.join("eval-iso");
    let r = run(&[
        "eval",
        "--data",
        fx.data.to_str().unwrap(),
        "--params",
        fx.params.to_str().unwrap(),
        "--prior",
        "isotropic",
        "--m",
        "4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_ok(&r);
    let text = std::fs::read_to_string(out.with_extension("txt")).unwrap();
    assert!(text.contains("n_seeds=1"));
    assert!(text.contains("top1_spread=0\n"));
}

#[test]
fn oracle_dumps_trajectories_with_losses() {
    let fx = fixture();
    let out_dir = fx.root.join("oracle-out");
    let r = run(&[
        "oracle",
        "--data",
        fx.data.to_str().unwrap(),
        "--params",
        fx.params.to_str().unwrap(),
        "--m",
        "4",
        "--steps",
        "2",
        "--limit",
        "2",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_ok(&r);
    let traj = std::fs::read_to_string(out_dir.join("trajectory_00000.csv")).unwrap();
    assert!(traj.starts_with("x0,y0,x1,y1,"));
    assert_eq!(traj.lines().count(), 4); // header + 3 rows (steps + 1)
    let losses = std::fs::read_to_string(out_dir.join("trajectory_00000_loss.csv")).unwrap();
    assert_eq!(losses.lines().count(), 4);
    assert!(out_dir.join("summary.txt").exists());
}

#[test]
fn render_produces_svg_with_expected_counts() {
    let fx = fixture();
    // build a small trajectory over one dataset image exported as PPM
    let out_dir = fx.root.join("render-traj");
    let r = run(&[
        "oracle",
        "--data",
        fx.data.to_str().unwrap(),
        "--params",
        fx.params.to_str().unwrap(),
        "--m",
        "4",
        "--steps",
        "2",
        "--limit",
        "1",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_ok(&r);
    let svg_path = fx.root.join("traj.svg");
    let r = run(&[
        "render",
        "--trajectory",
        out_dir.join("trajectory_00000.csv").to_str().unwrap(),
        "--image",
        fx.data.join("image_00021.sptf").to_str().unwrap(),
        "--out",
        svg_path.to_str().unwrap(),
    ]);
    assert_ok(&r);
    let svg = std::fs::read_to_string(&svg_path).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 4);
    assert_eq!(svg.matches("<rect").count(), 4);
    assert!(svg.contains("data:image/png;base64,"));

    // coordinates in the SVG match the trajectory CSV to 1e-3 px
    let csv = std::fs::read_to_string(out_dir.join("trajectory_00000.csv")).unwrap();
    let first_row: Vec<f64> =
        csv.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    let poly_line = svg.lines().find(|l| l.contains("<polyline")).unwrap();
    let points_attr = poly_line.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
    let first_pt: Vec<f64> = points_attr
        .split_whitespace()
        .next()
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert!((first_pt[0] - first_row[0]).abs() < 1e-3);
    assert!((first_pt[1] - first_row[1]).abs() < 1e-3);
}

#[test]
fn bench_reports_per_budget_throughput() {
    let fx = fixture();
    let out = fx.root.join("bench.csv");
    let r = run(&[
        "bench",
        "--data",
        fx.data.to_str().unwrap(),
        "--params",
        fx.params.to_str().unwrap(),
        "--m-list",
        "4,8",
        "--repeats",
        "2",
        "--images",
        "8",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_ok(&r);
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("m,images_per_sec"));
    assert_eq!(text.lines().count(), 3);
    for line in lines {
        let rate: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(rate > 0.0);
    }
}

#[test]
fn usage_errors_exit_1() {
    let out = run(&["eval", "--params", "x", "--out", "y", "--data", "z", "--prior", "bogus"]);
    assert_eq!(exit_code(&out), 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error:"), "stderr: {err}");
    assert_eq!(err.lines().count(), 1, "single-line error expected: {err}");

    let out = run(&["definitely-not-a-command"]);
    assert_eq!(exit_code(&out), 1);
}

#[test]
fn data_errors_exit_2() {
    let fx = fixture();
    let out = run(&[
        "eval",
        "--data",
        "/nonexistent/dataset",
        "--params",
        fx.params.to_str().unwrap(),
        "--out",
        fx.root.join("bad").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error:"));
    assert_eq!(err.lines().count(), 1);
}

#[test]
fn env_var_supplies_dataset_root() {
    let fx = fixture();
    let out = fx.root.join("eval-env");
    let r = spot()
        .env("SPOT_DATA_DIR", &fx.data)
        .args([
            "eval",
            "--params",
            fx.params.to_str().unwrap(),
            "--prior",
            "sobol",
            "--m",
            "4",
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_ok(&r);
    assert!(out.with_extension("txt").exists());
}

#[test]
fn commands_do_not_mutate_inputs(){
    let fx = fixture();
    let digest = |p: &Path| {
        let mut acc: u64 = 0xcbf29ce484222325;
        for b in std::fs::read(p).unwrap() {
            acc ^= b as u64;
            acc = acc.wrapping_mul(0x100000001B3);
        }
        acc
    };
    let before = digest(&fx.params);
    let out = fx.root.join("eval-nomut");
    let r = run(&[
        "eval",
        "--data",
        fx.data.to_str().unwrap(),
        "--params",
        fx.params.to_str().unwrap(),
        "--prior",
        "isotropic",
        "--m",
        "4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_ok(&r);
    assert_eq!(digest(&fx.params), before);
    assert_eq!(digest(&fx.data.join("image_00000.sptf")), digest(&fx.data.join("image_00000.sptf")));
}
