use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
version = 1

[model]
d_model = 8
num_heads = 2
ff_mult = 2
dropout = 0.0
frames = 2
queries = 2
encoder_layers = 1
decoder_layers = 1

[video]
height = 8
width = 8
channels = 1
grid_h = 2
grid_w = 2

[train]
batch_size = 2
epochs = 3
max_steps = 3
warmup_epochs = 1
eval_every = 1

[data]
clips = 6
actors = 2
total_frames = 2
train_ratio = 0.5
"#;

fn react(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_react")).args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "react {args:?} failed\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_lists_every_config_field() {
    let text = stdout(&react(&["--help"]));
    for key in ["d_model", "encoder_layers", "decoder_layers", "actor_fusion", "peak_lr", "train_ratio", "grid_h"] {
        assert!(text.contains(key), "--help lacks {key}");
    }
    for cmd in ["gen-data", "train", "eval", "retrieve", "gradcheck", "ablate"] {
        assert!(text.contains(cmd), "--help lacks {cmd}");
    }
}

#[test]
fn gen_data_train_eval_retrieve() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let corpus = dir.path().join("corpus");
    let run = dir.path().join("run");

    let gen = stdout(&react(&["gen-data", "--config", path(&cfg), "--out", path(&corpus)]));
    assert!(gen.starts_with("wrote 6 clips"), "{gen}");
    assert!(corpus.join("annotations.txt").is_file() && corpus.join("clips.rnac").is_file());

    react(&["--sequential", "train", "--config", path(&cfg), "--data", path(&corpus), "--out", path(&run)]);
    for f in ["metrics.jsonl", "best.ckpt", "last.ckpt", "predictions.txt"] {
        assert!(run.join(f).is_file(), "train did not write {f}");
    }
    let log = std::fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert!(log.lines().count() >= 3);

    let ckpt = run.join("last.ckpt");
    let preds = dir.path().join("preds.txt");
    let eval = stdout(&react(&[
        "eval",
        "--checkpoint",
        path(&ckpt),
        "--data",
        path(&corpus),
        "--metrics",
        "mca,merged-mca,prf,recall@1",
        "--predictions",
        path(&preds),
    ]));
    let report: serde_json::Value = serde_json::from_str(&eval).unwrap();
    for key in ["mca", "merged-mca", "prf", "recall@1"] {
        assert!(report.get(key).is_some(), "eval lacks {key}: {eval}");
    }
    let mca = report["mca"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&mca));
    assert!(std::fs::read_to_string(&preds).unwrap().starts_with("#react-predictions v1"));

    let ranked = stdout(&react(&[
        "retrieve",
        "--checkpoint",
        path(&ckpt),
        "--data",
        path(&corpus),
        "--prompt",
        "spiking",
        "--top",
        "1",
    ]));
    let lines: Vec<serde_json::Value> = ranked.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    for l in &lines {
        assert!(l["clip_id"].is_string());
        assert_eq!(l["actors"].as_array().unwrap().len(), 1);
    }
}

#[test]
fn gradcheck_passes() {
    let text = stdout(&react(&["gradcheck"]));
    assert!(text.contains("gradient checks passed"), "{text}");
    assert!(!text.contains("FAIL"));
}

#[test]
fn bad_inputs_fail_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[model]\nnum_heads = 3\nd_model = 8\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_react"))
        .args(["gen-data", "--config", path(&cfg), "--out", path(dir.path())])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let missing = Command::new(env!("CARGO_BIN_EXE_react"))
        .args(["eval", "--checkpoint", path(&dir.path().join("none.ckpt"))])
        .output()
        .unwrap();
    assert!(!missing.status.success());
}
