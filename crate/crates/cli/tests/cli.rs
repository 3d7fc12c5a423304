use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
preset = "desk_scale"

[policy]
expert_hidden = [16]
feature_dim = 8
gate_hidden = [8]
mlp_hidden = [16]

[value]
hidden = [16]

[discriminator]
hidden = [16]
batch_size = 32

[training]
iterations = 3
num_envs = 8
checkpoint_every = 2

[ppo]
steps_per_iteration = 8

[eval]
duration_steps = 50
"#;

fn skillab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skillab"))
        .args(args)
        .output()
        .expect("spawn skillab")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_tiny(dir: &Path) -> String {
    let p = dir.join("tiny.toml");
    std::fs::write(&p, TINY).unwrap();
    p.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_config_exits_2_and_names_path() {
    let o = skillab(&["train", "--config", "/no/such/run.toml"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("/no/such/run.toml"));
}

#[test]
fn invalid_field_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny(dir.path());
    let o = skillab(&["train", "--config", &cfg, "--override", "policy.num_experts=0", "--run-dir", s(&dir.path().join("r"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("num_experts"), "{}", stderr(&o));

    let o = skillab(&["train", "--config", &cfg, "--override", "training.bogus=1"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("bogus"), "{}", stderr(&o));
}

#[test]
fn override_sets_iteration_count_and_eval_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny(dir.path());
    let run = dir.path().join("run");
    let o = skillab(&["train", "--config", &cfg, "--override", "training.iterations=5", "--run-dir", s(&run), "--log-every", "0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let metrics = std::fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 5);
    for f in ["config.toml", "run.json", "timings.jsonl", "checkpoints/iter_000002.json", "checkpoints/iter_000004.json", "checkpoints/iter_000005.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    assert!(String::from_utf8_lossy(&o.stdout).contains("iter_000005.json"));

    let e1 = dir.path().join("e1");
    let e2 = dir.path().join("e2");
    for out in [&e1, &e2] {
        let o = skillab(&["eval", "--checkpoint", s(&run), "--bins", "50", "--duration", "40", "--out", s(out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let a = std::fs::read(e1.join("coverage.json")).unwrap();
    assert_eq!(a, std::fs::read(e2.join("coverage.json")).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(report["bins"], 50);
    assert_eq!(report["samples"], 8 * 40);
    assert_eq!(report["labels"].as_array().unwrap().len(), 9);
    assert!(e1.join("coverage.txt").exists());
    let traj = std::fs::read_to_string(e1.join("trajectories/skill_000.csv")).unwrap();
    assert!(traj.lines().next().unwrap().starts_with("t,skill,v_x"));
    assert_eq!(traj.lines().count(), 41);

    // The config echo matches; a different network shape does not.
    let echo = run.join("config.toml");
    let o = skillab(&["eval", "--checkpoint", s(&run), "--config", s(&echo), "--duration", "5", "--out", s(&dir.path().join("e3"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let other = dir.path().join("other.toml");
    std::fs::write(&other, TINY.replace("feature_dim = 8", "feature_dim = 12")).unwrap();
    let o = skillab(&["eval", "--checkpoint", s(&run), "--config", s(&other), "--out", s(&dir.path().join("e4"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("policy"));

    let o = skillab(&["plot", s(&run)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let svg = std::fs::read_to_string(run.join("plots/training.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
}

#[test]
fn run_root_env_names_default_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny(dir.path());
    let o = Command::new(env!("CARGO_BIN_EXE_skillab"))
        .args(["train", "--config", &cfg, "--override", "training.iterations=1", "--name", "named", "--log-every", "0"])
        .env("SKILLAB_RUN_ROOT", dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(dir.path().join("named/metrics.jsonl").exists());
}

#[test]
fn gradcheck_reports_every_check() {
    let o = skillab(&["gradcheck"]);
    assert_eq!(code(&o), 0);
    let out = String::from_utf8_lossy(&o.stdout);
    for name in ["gram_schmidt", "omoe_forward", "moe_forward"] {
        assert!(out.contains(name), "{out}");
    }
    assert!(!out.contains("FAIL"));
    let o = skillab(&["gradcheck", "--inject-sign-flip"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn ablation_writes_table_curves_and_scatter() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny(dir.path());
    let out = dir.path().join("abl");
    let o = skillab(&["ablation", "--suite", "policy", "--config", &cfg, "--seeds", "0,1", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = std::fs::read_to_string(out.join("coverage_table.csv")).unwrap();
    // Header, 3 variants x 2 seeds, 3 mean rows.
    assert_eq!(table.lines().count(), 1 + 6 + 3);
    assert_eq!(table.lines().filter(|l| l.contains(",mean,")).count(), 3);
    for f in ["report.json", "report.txt", "reward_curves.csv", "scatter_seed0.csv", "scatter_seed1.csv", "plots/reward_curves.svg", "plots/scatter_seed0.svg"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn ablation_rejects_unknown_suite_and_variant() {
    let dir = tempfile::tempdir().unwrap();
    let o = skillab(&["ablation", "--suite", "vision", "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
    let o = skillab(&["ablation", "--suite", "discriminator", "--variants", "SD9", "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
}

#[test]
fn plot_without_data_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&skillab(&["plot", s(dir.path())])), 2);
    assert_eq!(code(&skillab(&["plot", "/no/such/dir"])), 2);
}

#[test]
fn eval_of_missing_checkpoint_exits_2() {
    let o = skillab(&["eval", "--checkpoint", "/no/such/ckpt.json"]);
    assert_eq!(code(&o), 2);
}
