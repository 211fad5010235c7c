use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
[data]
source = "synthetic"
synthetic_test = 200

[data.synthetic]
n = 400
d = 4
classes = 3
angle = { kind = "random" }

[model]
gx = [4, 16, 3]
gy = [4, 16, 3]
disc_hidden = [16]

[train]
batch_size = 50
epochs = 2
alpha = 1e-3

[eval]
cca_components = 3
correlation_k = 3
"#;

fn demian(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_demian")).args(args).output().unwrap()
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("synth.toml");
    fs::write(&path, CONFIG).unwrap();
    path.to_str().unwrap().to_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn train_writes_artifacts_and_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = tmp.path().join(name);
            let o = demian(&["train", "--config", &cfg, "--seed", "3", "--out", out.to_str().unwrap()]);
            assert!(o.status.success(), "{}", stderr(&o));
            assert!(stderr(&o).contains("epoch   2/2"));
            out
        })
        .collect();
    for file in ["metrics.csv", "demian.ckpt", "history.csv", "config.toml"] {
        assert!(runs[0].join(file).exists(), "{file}");
    }
    let a = fs::read(runs[0].join("metrics.csv")).unwrap();
    assert_eq!(a, fs::read(runs[1].join("metrics.csv")).unwrap());
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("metric,split,train_modality,test_modality,value,seed\n"));
    assert!(text.contains("demian.srl_accuracy,test,x,y,"));
    assert!(text.contains("cca.topk_correlation@3,test,-,-,"));
}

#[test]
fn checkpoint_feeds_eval_and_embed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let run = tmp.path().join("run");
    let run = run.to_str().unwrap();
    assert!(demian(&["train", "--config", &cfg, "--out", run]).status.success());
    let ck = format!("{run}/demian.ckpt");
    let train_metrics = fs::read_to_string(format!("{run}/metrics.csv")).unwrap();

    let ev = tmp.path().join("eval");
    let o = demian(&["eval", "--config", &cfg, "--checkpoint", &ck, "--out", ev.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let eval_metrics = fs::read_to_string(ev.join("metrics.csv")).unwrap();
    for line in eval_metrics.lines().skip(1) {
        assert!(train_metrics.contains(line), "{line} missing from training metrics");
    }

    let em = tmp.path().join("embed");
    let o = demian(&["embed", "--config", &cfg, "--checkpoint", &ck, "--split", "train", "--text", "--out", em.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["demian_train_x.bin", "demian_train_y.bin", "demian_train_x.txt"] {
        assert!(em.join(f).exists(), "{f}");
    }
    let o = demian(&["embed", "--config", &cfg, "--checkpoint", &ck, "--split", "valid", "--out", em.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("validation"));
}

#[test]
fn cca_subcommand_skips_demian() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = tmp.path().join("cca");
    let o = demian(&["cca", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!out.join("demian.ckpt").exists());
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.lines().skip(1).all(|l| l.starts_with("cca.")));
}

#[test]
fn bad_input_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[train]\nlearning_rate = 1.0\n").unwrap();
    let o = demian(&["train", "--config", bad.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error:"), "{}", stderr(&o));

    let cfg = write_config(tmp.path());
    let o = demian(&["eval", "--config", &cfg, "--checkpoint", tmp.path().join("nope.ckpt").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("nope.ckpt"));

    let o = demian(&["train", "--config", &cfg, "--lambda", "-1"]);
    assert!(!o.status.success());
}

#[test]
fn selftest_passes_and_repeats_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let o = demian(&["selftest", "--out", dir.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
        assert!(!String::from_utf8_lossy(&o.stdout).contains("FAIL"));
    }
    assert_eq!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(b.join("metrics.csv")).unwrap());
}
