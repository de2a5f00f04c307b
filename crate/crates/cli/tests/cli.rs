use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn stereoprobe(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stereoprobe"))
        .args(args)
        .current_dir(dir)
        .env_remove("STEREOPROBE_BACKEND_URL")
        .env_remove("STEREOPROBE_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn staged_commands_match_run() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let common = ["--samples-m", "1", "--models", "bert-base,roberta-base", "--top-k", "3,5"];

    let gen = stereoprobe(d, &[&["generate", "--out", "staged/dataset.jsonl"][..], &common].concat());
    assert_eq!(code(&gen), 0, "{}", String::from_utf8_lossy(&gen.stderr));
    for step in [
        vec!["probe", "--out", "staged"],
        vec!["analyze", "--results", "staged"],
        vec!["report", "--results", "staged"],
    ] {
        let out = stereoprobe(d, &[&step[..], &common].concat());
        assert_eq!(code(&out), 0, "{step:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let run = stereoprobe(d, &[&["run", "--out", "oneshot"][..], &common].concat());
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));

    for f in ["dataset.jsonl", "results.jsonl", "report/summary.csv", "report/report.txt"] {
        assert_eq!(
            fs::read(d.join("staged").join(f)).unwrap(),
            fs::read(d.join("oneshot").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn config_file_and_env() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("probe.toml"), "samples_m = 1\ntop_k = [3]\nmodels = [\"gpt2-medium\"]\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_stereoprobe"))
        .args(["run", "--config", "probe.toml"])
        .current_dir(d)
        .env("STEREOPROBE_OUT_DIR", "from-env")
        .env_remove("STEREOPROBE_BACKEND_URL")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("from-env/report/chart_gpt2-medium_k3.svg").is_file());

    fs::write(d.join("bad.toml"), "sample_m = 1\n").unwrap();
    let out = stereoprobe(d, &["validate", "--config", "bad.toml"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("sample_m"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(code(&stereoprobe(d, &["validate"])), 0);
    assert_eq!(code(&stereoprobe(d, &["--help"])), 0);
    assert_eq!(code(&stereoprobe(d, &["frobnicate"])), 1);
    assert_eq!(code(&stereoprobe(d, &["run", "--top-k", "0"])), 1);
    assert_eq!(code(&stereoprobe(d, &["run", "--backend", "ftp://x"])), 1);

    fs::write(d.join("occ.tsv"), "nurse\tlots\n").unwrap();
    assert_eq!(code(&stereoprobe(d, &["validate", "--registry", "occ.tsv"])), 2);

    fs::write(d.join("lex.tsv"), "she\tfemale\nshe\tmale\n").unwrap();
    assert_eq!(code(&stereoprobe(d, &["validate", "--lexicon", "lex.tsv"])), 2);

    let out = stereoprobe(d, &["probe", "--backend", "http://127.0.0.1:9", "--retries", "0", "--timeout-secs", "1"]);
    assert_ne!(code(&out), 0);
}
