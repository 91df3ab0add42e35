use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn poelm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_poelm")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

#[test]
fn help_lists_every_subcommand() {
    let o = poelm(&["--help"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for cmd in ["augment", "train-vocab", "train-lm", "train-baseline", "generate", "validate", "eval", "synth"] {
        assert!(text.contains(cmd), "{cmd} missing from:\n{text}");
    }
    let eval = stdout(&poelm(&["eval", "--help"]));
    for cmd in ["filtering", "perplexity", "curve"] {
        assert!(eval.contains(cmd), "{cmd} missing from:\n{eval}");
    }
}

#[test]
fn validate_reports_pass_and_rejection() {
    let dir = tempfile::tempdir().unwrap();
    let poem = dir.path().join("poem.txt");
    fs::write(&poem, "quiero luchar\nla noche\nel coche\npara cantar\n").unwrap();

    let ok = poelm(&["validate", "--scheme", "4A 3B 3B 4A", p(&poem)]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(stdout(&ok).contains("\"verdict\""));

    let bad = poelm(&["validate", "--scheme", "5A 3B 3B 4A", p(&poem)]);
    assert_eq!(bad.status.code(), Some(1));

    let usage = poelm(&["validate", "--scheme", "4A 3Bx", p(&poem)]);
    assert_eq!(usage.status.code(), Some(2));

    let desc = poelm(&["validate", "--descriptor", "<PREF> <LEN_4> <CLS_ar> </PREF>", p(&poem)]);
    assert_eq!(desc.status.code(), Some(1));
}

#[test]
fn workflow_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |args: &[&str]| {
        let o = poelm(args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        o
    };
    run(&["synth", "--out", p(&d.join("data")), "--words", "20000", "--heldout-words", "3000", "--poems", "4", "--prompts", "2"]);
    for f in ["poems.txt", "prompts.tsv", "corpus", "heldout"] {
        assert!(d.join("data").join(f).exists(), "{f}");
    }
    run(&["augment", "--corpus", p(&d.join("data/corpus")), "--out", p(&d.join("aug.txt")), "--seed", "3"]);
    let meta = fs::read_to_string(d.join("aug.txt.meta.json")).unwrap();
    assert!(meta.contains("\"seed\": 3"));
    run(&["train-vocab", "--in", p(&d.join("aug.txt")), "--size", "400", "--control", "120", "--out", p(&d.join("vocab.tsv"))]);
    fs::write(d.join("ngram.toml"), "backend = \"ngram\"\norder = 3\n").unwrap();
    let train = |cmd: &str, out: &str| {
        run(&[cmd, "--in", p(&d.join("aug.txt")), "--vocab", p(&d.join("vocab.tsv")), "--config", p(&d.join("ngram.toml")), "--out", p(&d.join(out))]);
    };
    train("train-lm", "poelm.json");
    train("train-baseline", "base.json");

    let gen = |k: &str, out: &str| {
        poelm(&[
            "generate", "--model", p(&d.join("poelm.json")), "--vocab", p(&d.join("vocab.tsv")), "--scheme", "8A 8B 8B 8A", "--k", k,
            "--seed", "4", "--out-dir", p(&d.join(out)),
        ])
    };
    let empty = gen("0", "empty");
    assert_eq!(empty.status.code(), Some(1));
    assert!(stdout(&empty).contains("no valid poem"));

    let a = gen("12", "a");
    let b = gen("12", "b");
    assert_eq!(a.status.code(), b.status.code());
    assert!(matches!(a.status.code(), Some(0) | Some(1)));
    for f in ["candidates.jsonl", "summary.json"] {
        assert_eq!(fs::read(d.join("a").join(f)).unwrap(), fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }
    assert_eq!(fs::read_to_string(d.join("a/candidates.jsonl")).unwrap().lines().count(), 12);

    let models = |cmd: &str| -> Vec<String> {
        ["eval", cmd, "--poelm", p(&d.join("poelm.json")), "--baseline", p(&d.join("base.json")), "--vocab", p(&d.join("vocab.tsv")), "--out-dir", p(&d.join("eval"))]
            .iter()
            .map(|s| s.to_string())
            .collect()
    };
    let with = |cmd: &str, extra: &[&str]| {
        let mut args = models(cmd);
        args.extend(extra.iter().map(|s| s.to_string()));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        run(&refs);
    };
    with("filtering", &["--prompts", p(&d.join("data/prompts.tsv")), "--k", "4"]);
    with("perplexity", &["--poems", p(&d.join("data/poems.txt")), "--prose", p(&d.join("data/heldout"))]);
    with("curve", &["--corpus", p(&d.join("data/heldout")), "--min-tokens", "3", "--max-tokens", "10"]);
    let csv = fs::read_to_string(d.join("eval/filtering.csv")).unwrap();
    assert_eq!(csv.lines().count(), 8);
    for f in ["perplexity.csv", "curve.csv", "filtering.json"] {
        assert!(d.join("eval").join(f).exists(), "{f}");
    }
}

#[test]
fn missing_inputs_fail() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = poelm(&["generate", "--model", p(&d.join("missing.json")), "--vocab", p(&d.join("missing.tsv")), "--scheme", "8A 8A"]);
    assert_eq!(o.status.code(), Some(1));
}
