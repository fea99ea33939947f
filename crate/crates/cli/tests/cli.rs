use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sparse-ner"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

const EN: &str = "It\tO\nis\tO\nfound\tO\nin\tO\nPeru\tB-LOC\n.\tO\n\nAda\tB-PER\nLovelace\tI-PER\nworked\tO\nat\tO\nIBM\tB-ORG\n\n";
const YO: &str = "Ola\tB-PER\nwa\tO\nni\tO\nLagos\tB-LOC\n\nBisi\tB-PER\nlo\tO\nsi\tO\nIbadan\tB-LOC\n\n";

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    if let Some(parent) = p.parent() {
        fs::create_dir_all(parent).unwrap();
    }
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_snapshots() {
    let snapshots = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/snapshots");
    let mut cases = vec![("main", vec!["--help"])];
    for sub in ["validate", "perturb", "train", "evaluate", "experiment", "analyze", "report"] {
        cases.push((sub, vec![sub, "--help"]));
    }
    for (name, args) in cases {
        let out = run(&args);
        assert_eq!(code(&out), 0, "{name}");
        let expected = fs::read_to_string(snapshots.join(format!("{name}.help.txt"))).unwrap();
        assert_eq!(stdout(&out), expected, "help for {name} changed");
    }
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["bogus"])), 1);
    assert_eq!(code(&run(&["validate", "--nope", "x"])), 1);
    // seeds are mandatory on stochastic subcommands
    assert_eq!(code(&run(&["perturb", "--scope", "in-language", "--out", "o", "x"])), 1);
    assert_eq!(code(&run(&["train", "--train", "x", "--out", "o"])), 1);
    assert_eq!(code(&run(&["perturb", "--scope", "sideways", "--seed", "1", "--out", "o", "x"])), 1);
}

#[test]
fn validate_reports_counts_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let good = write(dir.path(), "en.iob2", EN);
    let out = run(&["validate", s(&good)]);
    assert_eq!(code(&out), 0);
    assert!(
        stdout(&out).contains("ok, 2 sentences, 11 tokens, 3 mentions (PER 1, LOC 1, ORG 1)"),
        "{}",
        stdout(&out)
    );
    let bad = write(dir.path(), "bad.iob2", "Peru B-LOC extra\n");
    let out = run(&["validate", s(&good), s(&bad)]);
    assert_eq!(code(&out), 2);
    assert!(stdout(&out).contains("line 1"));
}

#[test]
fn missing_config_exits_2() {
    let out = run(&["experiment", "--config", "missing.cfg"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.cfg"));
}

#[test]
fn perturb_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let en = write(dir.path(), "en.iob2", EN);
    let yo = write(dir.path(), "yo.iob2", YO);
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let out = run(&[
            "perturb", "--scope", "in-script", "--seed", "5", "--out", s(&out_dir), s(&en), &format!("yo={}", s(&yo)),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push((
            fs::read(out_dir.join("en.in-script.iob2")).unwrap(),
            fs::read(out_dir.join("yo.in-script.log.jsonl")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_ne!(outputs[0].0, EN.as_bytes());
}

#[test]
fn train_evaluate_analyze_report() {
    let dir = tempfile::tempdir().unwrap();
    let train = write(dir.path(), "corpora/en/train.iob2", &EN.repeat(4));
    let test = write(dir.path(), "corpora/en/test.iob2", EN);
    let results = dir.path().join("results.jsonl");
    for sparsity in ["0", "50"] {
        let model = dir.path().join(format!("model{sparsity}"));
        let out = run(&[
            "train", "--train", &format!("en={}", s(&train)), "--seed", "3", "--sparsity", sparsity,
            "--schedule", "2,8,2", "--embed-dim", "8", "--hidden-dim", "8", "--window", "1",
            "--learning-rate", "0.2", "--epochs", "30", "--batch-size", "2", "--out", s(&model),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let out = run(&[
            "evaluate", "--model", s(&model), "--test", &format!("en={}", s(&test)), "--out", s(&results),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let text = fs::read_to_string(&results).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.contains("\"sparsity\":50"));

    let report_dir = dir.path().join("report");
    let out = run(&[
        "analyze", "--results", s(&results), "--corpus-root", s(&dir.path().join("corpora")), "--out", s(&report_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let overlap = fs::read_to_string(report_dir.join("overlap_f1.csv")).unwrap();
    assert!(overlap.contains("en,1.0000,0,partial,regular"), "{overlap}");

    let out = run(&["report", "--results", s(&results), "--mono", s(&results)]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.starts_with("language,0,50\nen,"));
    assert!(text.contains("0,en,0.0000"));
}

#[test]
fn experiment_runs_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "corpora/en/train.iob2", &EN.repeat(3));
    write(dir.path(), "corpora/en/test.iob2", EN);
    let config = write(
        dir.path(),
        "exp.toml",
        r#"
mode = "monolingual"
languages = ["en"]
sparsity_levels = [0, 50]
strategies = ["partial"]
seeds = [1]
scopes = ["in-language"]

[tagger]
embed_dim = 4
hidden_dim = 4
window = 1
learning_rate = 0.1
epochs = 3
batch_size = 2

[[schedule]]
train_size = 100
start = 1
end = 3
frequency = 1

[paths]
corpus_root = "corpora"
output = "out"
"#,
    );
    let out = run(&["experiment", "--config", s(&config), "--workers", "2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("2 completed, 0 failed"));
    let out = run(&["experiment", "--config", s(&config)]);
    assert!(stdout(&out).contains("2 already done, 0 completed"));
    assert_eq!(code(&run(&["experiment", "--config", s(&config), "--workers", "0"])), 1);
}
