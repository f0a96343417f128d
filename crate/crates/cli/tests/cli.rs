use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn cleve(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cleve"))
        .args(args)
        .env_remove("CLEVE_SEED")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn assert_ok(out: &Output) {
    assert_eq!(code(out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

const SEMANTIC: &str = r#"{"batch_size": 4, "lr": 1e-3, "steps": 3, "eval_every": 2,
  "encoder": {"layers": 1, "hidden_dim": 16, "heads": 2, "ffn_dim": 32, "max_len": 128, "residual": true}}"#;
const STRUCTURE: &str = r#"{"batch_size": 4, "training_steps": 3, "warmup_steps": 1, "layers": 2, "hidden_dim": 16}"#;
const CLUSTER: &str = r#"{"clustering": {"k_triggers": [2, 3], "k_arguments": [2, 3], "max_iterations": 3}}"#;

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Workspace {
            dir: tempfile::tempdir().unwrap(),
        };
        let out = cleve(&[
            "synth",
            "--out-dir",
            s(ws.dir.path()),
            "--sentences",
            "24",
            "--instances",
            "30",
            "--seed",
            "5",
        ]);
        assert_ok(&out);
        fs::write(ws.path("semantic.json"), SEMANTIC).unwrap();
        fs::write(ws.path("structure.json"), STRUCTURE).unwrap();
        fs::write(ws.path("cluster.json"), CLUSTER).unwrap();
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn pretrain(&self, tag: &str) {
        let sem = self.path(&format!("sem{tag}.ckpt"));
        let st = self.path(&format!("st{tag}.ckpt"));
        assert_ok(&cleve(&[
            "pretrain",
            "--mode",
            "semantic",
            "--corpus",
            s(&self.path("corpus.jsonl")),
            "--config",
            s(&self.path("semantic.json")),
            "--out",
            s(&sem),
        ]));
        assert_ok(&cleve(&[
            "pretrain",
            "--mode",
            "structure",
            "--corpus",
            s(&self.path("corpus.jsonl")),
            "--config",
            s(&self.path("structure.json")),
            "--text",
            s(&sem),
            "--out",
            s(&st),
        ]));
    }

    fn cluster(&self, tag: &str) -> PathBuf {
        let out = self.path(&format!("clusters{tag}.json"));
        assert_ok(&cleve(&[
            "cluster",
            "--corpus",
            s(&self.path("corpus.jsonl")),
            "--text",
            s(&self.path(&format!("sem{tag}.ckpt"))),
            "--graph",
            s(&self.path(&format!("st{tag}.ckpt"))),
            "--config",
            s(&self.path("cluster.json")),
            "--out",
            s(&out),
        ]));
        out
    }
}

#[test]
fn synth_writes_all_files() {
    let ws = Workspace::new();
    for f in ["corpus.jsonl", "gold.jsonl", "train.jsonl", "dev.jsonl"] {
        assert!(fs::metadata(ws.path(f)).unwrap().len() > 0, "{f}");
    }
    let dev = fs::read_to_string(ws.path("dev.jsonl")).unwrap();
    assert_eq!(dev.lines().count(), 6);
}

#[test]
fn pipeline_is_byte_deterministic() {
    let ws = Workspace::new();
    ws.pretrain("a");
    ws.pretrain("b");
    for stem in ["sem", "st"] {
        for suffix in [".ckpt", ".ckpt.meta.json", ".ckpt.loss.csv"] {
            let a = fs::read(ws.path(&format!("{stem}a{suffix}"))).unwrap();
            let b = fs::read(ws.path(&format!("{stem}b{suffix}"))).unwrap();
            assert_eq!(a, b, "{stem}{suffix}");
        }
    }
    let a = fs::read(ws.cluster("a")).unwrap();
    let b = fs::read(ws.cluster("b")).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        fs::read(ws.path("clustersa.json.schema.json")).unwrap(),
        fs::read(ws.path("clustersb.json.schema.json")).unwrap()
    );

    let out = cleve(&["evaluate", "--pred", s(&ws.path("clustersa.json")), "--gold", s(&ws.path("gold.jsonl"))]);
    assert_ok(&out);
    let scores: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for side in ["triggers", "arguments"] {
        let f1 = scores[side]["b3_f1"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&f1), "{side} f1 {f1}");
    }

    let ft = ws.path("ft.ckpt");
    fs::write(ws.path("ft.json"), r#"{"epochs": 2, "batch_size": 8, "lr": 1e-3, "head_hidden": 8}"#).unwrap();
    assert_ok(&cleve(&[
        "finetune",
        "--train",
        s(&ws.path("train.jsonl")),
        "--dev",
        s(&ws.path("dev.jsonl")),
        "--text",
        s(&ws.path("sema.ckpt")),
        "--graph",
        s(&ws.path("sta.ckpt")),
        "--config",
        s(&ws.path("ft.json")),
        "--out",
        s(&ft),
    ]));
    let csv = fs::read_to_string(ws.path("ft.ckpt.epochs.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("epoch,train_loss,dev_f1"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn seed_env_changes_checkpoint() {
    let ws = Workspace::new();
    ws.pretrain("a");
    let out = Command::new(env!("CARGO_BIN_EXE_cleve"))
        .args([
            "pretrain",
            "--mode",
            "semantic",
            "--corpus",
            s(&ws.path("corpus.jsonl")),
            "--config",
            s(&ws.path("semantic.json")),
            "--out",
            s(&ws.path("seeded.ckpt")),
        ])
        .env("CLEVE_SEED", "9")
        .output()
        .unwrap();
    assert_ok(&out);
    assert_ne!(fs::read(ws.path("sema.ckpt")).unwrap(), fs::read(ws.path("seeded.ckpt")).unwrap());
    let meta = fs::read_to_string(ws.path("seeded.ckpt.meta.json")).unwrap();
    assert!(meta.contains("\"seed\": 9"), "{meta}");
}

#[test]
fn structure_mode_requires_text() {
    let ws = Workspace::new();
    let out = cleve(&[
        "pretrain",
        "--mode",
        "structure",
        "--corpus",
        s(&ws.path("corpus.jsonl")),
        "--out",
        s(&ws.path("st.ckpt")),
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--text"));
}

#[test]
fn config_errors_name_the_key() {
    let ws = Workspace::new();
    fs::write(ws.path("bad.json"), r#"{"encoder": {"layers": "two"}}"#).unwrap();
    let out = cleve(&[
        "pretrain",
        "--mode",
        "semantic",
        "--corpus",
        s(&ws.path("corpus.jsonl")),
        "--config",
        s(&ws.path("bad.json")),
        "--out",
        s(&ws.path("x.ckpt")),
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("encoder.layers"));

    fs::write(ws.path("unknown.json"), r#"{"stepz": 3}"#).unwrap();
    let out = cleve(&[
        "pretrain",
        "--mode",
        "semantic",
        "--corpus",
        s(&ws.path("corpus.jsonl")),
        "--config",
        s(&ws.path("unknown.json")),
        "--out",
        s(&ws.path("x.ckpt")),
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("stepz"));
}

#[test]
fn data_errors_exit_two() {
    let ws = Workspace::new();
    fs::write(ws.path("broken.jsonl"), "{\"not\": \"a graph\"}\n").unwrap();
    let out = cleve(&[
        "pretrain",
        "--mode",
        "semantic",
        "--corpus",
        s(&ws.path("broken.jsonl")),
        "--out",
        s(&ws.path("x.ckpt")),
    ]);
    assert_eq!(code(&out), 2);

    let out = cleve(&[
        "evaluate",
        "--pred",
        s(&ws.path("missing.json")),
        "--gold",
        s(&ws.path("gold.jsonl")),
    ]);
    assert_eq!(code(&out), 2);

    fs::write(ws.path("bad.penman"), "(a / attack-01 :ARG0 (b / boy)").unwrap();
    let out = cleve(&["preprocess", "--in", s(&ws.path("bad.penman")), "--out", s(&ws.path("o.jsonl"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&cleve(&["pretrain", "--mode", "lexical"])), 1);
    assert_eq!(code(&cleve(&["no-such-command"])), 1);
    assert_eq!(code(&cleve(&["--help"])), 0);
}

#[test]
fn preprocess_penman_reports_stats() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.penman");
    fs::write(
        &input,
        "# ::tok The rebels attacked Baghdad .\n(a / attack-01 :ARG0 (r / rebel) :ARG1 (c / city :name (n / name :op1 \"Baghdad\")))\n",
    )
    .unwrap();
    let out_path = dir.path().join("out.jsonl");
    let out = cleve(&["preprocess", "--in", s(&input), "--out", s(&out_path), "--stats"]);
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with("graphs=1 "), "{stdout}");
    assert_eq!(fs::read_to_string(&out_path).unwrap().lines().count(), 1);
}
