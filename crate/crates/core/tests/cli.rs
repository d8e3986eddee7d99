use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 3

[loop]
T = 1
K = 4
rl_iterations = 2
rl_text = 4
rl_audio = 4

[ppo]
samples_per_prompt = 4
max_seq_tokens = 24

[corpus]
text_size = 20
cognition_size = 200

[cognition]
base_steps = 400
k = 2
eval_samples = 4
n_pairs = 50

[ablation]
iterations = 3

[ablation.collapse]
window = 2
"#;

fn mgrd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mgrd")).args(args).env_remove("MGRD_JUDGE_ENDPOINT").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_config(dir: &Path) -> String {
    let c = dir.join("small.toml");
    std::fs::write(&c, SMALL).unwrap();
    p(&c).to_string()
}

#[test]
fn help_and_unknown_flags() {
    let o = mgrd(&["curate", "--help"]);
    assert_eq!(code(&o), 0);
    for flag in ["--in", "--ckpt", "--k", "--keep", "--out", "--config", "--seed"] {
        assert!(stdout(&o).contains(flag), "{flag} missing from help");
    }
    let o = mgrd(&["loop", "--help"]);
    for flag in ["--config", "--T", "--seed", "--run-dir"] {
        assert!(stdout(&o).contains(flag), "{flag} missing from help");
    }
    assert_eq!(code(&mgrd(&["loop", "--bogus"])), 2);
    assert_eq!(code(&mgrd(&[])), 2);
}

#[test]
fn generate_and_curate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let pool = d.join("pool.jsonl");
    let o = mgrd(&["generate", "--kind", "arithmetic_task", "--size", "12", "--seed", "1", "--out", p(&pool)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    // a cold-start checkpoint to sample from
    let run = d.join("run");
    let cfg = write_config(d);
    let o = mgrd(&["loop", "--config", &cfg, "--run-dir", p(&run)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ckpt = run.join("coldstart.ckpt.json");

    let out = d.join("sel.jsonl");
    let o = mgrd(&["curate", "--in", p(&pool), "--ckpt", p(&ckpt), "--k", "8", "--keep", "3..6", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let line = stdout(&o);
    let nums: Vec<usize> = line.split_whitespace().filter_map(|w| w.parse().ok()).collect();
    assert_eq!(nums.len(), 4, "{line}");
    assert_eq!(nums[0] + nums[1] + nums[2] + nums[3], 12);
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("#meta ") && text.contains("\"keep_max\":\"6\""), "{text}");

    let o = mgrd(&["curate", "--in", p(&pool), "--ckpt", p(&ckpt), "--keep", "6..3"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("keep"));
    let o = mgrd(&["curate", "--in", p(&d.join("missing.jsonl")), "--ckpt", p(&ckpt)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("missing.jsonl"));
}

#[test]
fn loop_run_directory_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let run = dir.path().join("run");
    let o = mgrd(&["loop", "--config", &cfg, "--T", "1", "--seed", "3", "--run-dir", p(&run)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in [
        "config.toml",
        "coldstart.jsonl",
        "coldstart.ckpt.json",
        "iter_1/distilled.jsonl",
        "iter_1/rl_selected.jsonl",
        "iter_1/policy.ckpt.json",
        "metrics.csv",
        "metrics.jsonl",
        "reward_audit.jsonl",
        "filter_audit.jsonl",
    ] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    assert!(!run.join("run.lock").exists());
    let snapshot = std::fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(snapshot.starts_with("# override: --T 1\n# override: --seed 3\n"), "{snapshot}");

    let o = mgrd(&["report", "--run-dir", p(&run), "--window", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("== loop"));
    assert!(run.join("report/reward_curve.csv").is_file());

    // a held lock refuses a second writer
    std::fs::write(run.join("run.lock"), "").unwrap();
    let o = mgrd(&["loop", "--config", &cfg, "--run-dir", p(&run)]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("run.lock"));
}

#[test]
fn report_on_empty_dir_fails() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&mgrd(&["report", "--run-dir", p(dir.path())])), 2);
    assert_eq!(code(&mgrd(&["report", "--run-dir", p(&dir.path().join("nope"))])), 2);
}

#[test]
fn dead_judge_without_fallback_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/judge", l.local_addr().unwrap());
    drop(l);
    let o = Command::new(env!("CARGO_BIN_EXE_mgrd"))
        .args(["loop", "--config", &cfg, "--run-dir", p(&dir.path().join("run"))])
        .env("MGRD_JUDGE_ENDPOINT", &url)
        .output()
        .unwrap();
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("unjudged="), "{}", stderr(&o));
}

#[test]
fn ablation_and_cognition_commands() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let run = dir.path().join("abl");
    let o = mgrd(&["ablation", "--config", &cfg, "--run-dir", p(&run)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("with_format_reward: optimum 0.9"));
    assert!(stdout(&o).contains("accuracy_only: optimum 1"));
    let o = mgrd(&["report", "--run-dir", p(&run), "--window", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let curve = std::fs::read_to_string(run.join("report/think_tokens_curve.csv")).unwrap();
    assert!(curve.starts_with("iteration,accuracy_only,with_format_reward\n"));
    assert_eq!(curve.lines().count(), 4);

    let run = dir.path().join("cog");
    let o = mgrd(&["cognition", "--config", &cfg, "--run-dir", p(&run)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = std::fs::read_to_string(run.join("cognition/report.txt")).unwrap();
    for stage in ["Base model", "Iterative Self-Distillation", "Iterative Self-Distillation + DPO"] {
        assert!(table.contains(stage), "{table}");
    }
    let o = mgrd(&["report", "--run-dir", p(&run)]);
    assert!(stdout(&o).contains("== cognition"));
}
