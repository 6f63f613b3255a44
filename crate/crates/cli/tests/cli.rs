use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[data]
num_images = 8
image_size = 16
near_transition_images = 2
test_every = 4

[signal]
num_samples = 60

[fit1d]
encodings = [{ kind = "step", dim = 4 }, { kind = "raw" }]

[fit1d.fit]
epochs = 30
hidden = [8]

[model]
geo_hidden = [8, 8]
app_hidden = [8]
xyz_frequencies = 2
dir_frequencies = 1
illum_dim = 4
time = { kind = "step", dim = 4 }

[model.triplane]
resolution = 4
channels = 2
init_scale = 0.1

[training]
iterations = 6
rays_per_batch = 16
checkpoint_every = 3
probe_rays = 16

[training.sampling]
coarse = 4
fine = 4
perturb = true
scene_half_extent = 1.0

[evaluation]
fit_rays = 16
fit_iterations = 2
sweep_steps = 5
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chronofield"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    dir
}

#[test]
fn full_pipeline_on_a_tiny_config() {
    let dir = setup();
    let d = dir.path();
    let ok = |args: &[&str]| {
        let o = run(d, args);
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        o
    };
    ok(&["gen-data", "--config", "tiny.toml", "--out", "data"]);
    assert!(d.join("data/manifest.json").exists());
    assert!(d.join("data/run.json").exists());
    ok(&["train", "--config", "tiny.toml", "--data", "data", "--out", "run"]);
    let log = std::fs::read_to_string(d.join("run/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 7);
    assert!(log.starts_with("iteration,loss_coarse,loss_fine,lr,seconds"));
    assert!(d.join("run/checkpoint.bin").exists());
    assert!(!d.join("run/.lock").exists());

    let ck = ["--config", "tiny.toml", "--checkpoint", "run/checkpoint.bin", "--data", "data"];
    fn with<'a>(verb: &'a str, ck: &[&'a str], extra: &[&'a str]) -> Vec<&'a str> {
        [&[verb][..], ck, extra].concat()
    }
    ok(&with("render", &ck, &["--time", "0.5", "--illum", "interp:0,1,0.5", "--out", "a.ppm"]));
    ok(&with("render", &ck, &["--time", "0.5", "--illum", "image:2", "--view", "image:1", "--out", "b.ppm"]));
    assert!(std::fs::read(d.join("a.ppm")).unwrap().starts_with(b"P6"));
    ok(&with("sweep-time", &ck, &["--out", "sweep", "--frames"]));
    assert_eq!(std::fs::read_to_string(d.join("sweep/mse_series.csv")).unwrap().lines().count(), 5);
    assert!(d.join("sweep/frame_0004.ppm").exists());
    ok(&with("evaluate", &ck, &["--out", "eval"]));
    let eval: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("eval/eval.json")).unwrap()).unwrap();
    assert_eq!(eval["images"].as_array().unwrap().len(), 2);
    ok(&with("evaluate", &ck, &["--out", "eval2"]));
    assert_eq!(
        std::fs::read(d.join("eval/eval.json")).unwrap(),
        std::fs::read(d.join("eval2/eval.json")).unwrap(),
        "evaluation is deterministic"
    );
    let rec: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("run/run.json")).unwrap()).unwrap();
    for key in ["config_digest", "seed", "version", "wall_seconds"] {
        assert!(rec.get(key).is_some(), "{key}");
    }
}

#[test]
fn signal_commands_write_their_reports() {
    let dir = setup();
    let d = dir.path();
    assert_eq!(code(&run(d, &["gen-signal", "--config", "tiny.toml", "--out", "sig"])), 0);
    assert!(d.join("sig/signal.csv").exists());
    let o = run(d, &["fit1d", "--config", "tiny.toml", "--out", "fit"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("fit/fit1d.json")).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 2);
}

#[test]
fn same_seed_gives_identical_data_and_seed_flag_changes_it() {
    let dir = setup();
    let d = dir.path();
    for out in ["a", "b"] {
        assert_eq!(code(&run(d, &["gen-data", "--config", "tiny.toml", "--out", out])), 0);
    }
    assert_eq!(code(&run(d, &["gen-data", "--config", "tiny.toml", "--seed", "3", "--out", "c"])), 0);
    let read = |p: &str| std::fs::read(d.join(p)).unwrap();
    assert_eq!(read("a/image_0000.ppm"), read("b/image_0000.ppm"));
    assert_ne!(read("a/image_0000.ppm"), read("c/image_0000.ppm"));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = setup();
    let d = dir.path();
    std::fs::write(d.join("bad.toml"), "[training]\nitertions = 3\n").unwrap();
    assert_eq!(code(&run(d, &["gen-data", "--config", "bad.toml", "--out", "x"])), 2);
    assert_eq!(code(&run(d, &["gen-data", "--config", "missing.toml", "--out", "x"])), 2);
    assert_eq!(code(&run(d, &["gen-data", "--config", "tiny.toml", "--out", "data"])), 0);
    assert_eq!(code(&run(d, &["gen-data", "--config", "tiny.toml", "--out", "data"])), 2, "refuses to overwrite");
    assert_eq!(code(&run(d, &["gen-data", "--config", "tiny.toml", "--out", "data", "--force"])), 0);
    std::fs::write(d.join("data/.lock"), "").unwrap();
    assert_eq!(code(&run(d, &["gen-data", "--config", "tiny.toml", "--out", "data", "--force"])), 2, "locked");
}

#[test]
fn data_errors_exit_with_3() {
    let dir = setup();
    let d = dir.path();
    assert_eq!(code(&run(d, &["train", "--config", "tiny.toml", "--data", "nowhere", "--out", "run"])), 3);
    std::fs::create_dir(d.join("junk")).unwrap();
    std::fs::write(d.join("junk/manifest.json"), "{not json").unwrap();
    assert_eq!(code(&run(d, &["train", "--config", "tiny.toml", "--data", "junk", "--out", "run"])), 3);
}

#[test]
fn gradient_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["gradient-check"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("pipeline"));
}
