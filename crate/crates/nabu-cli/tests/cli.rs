//! End-to-end tests of the `nabu` binary: subcommand wiring, file formats,
//! exit codes, and manifest emission, all at tiny dimensions.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn nabu() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nabu"))
}

fn ok(output: &Output) {
    assert!(
        output.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn tiny_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("run.cfg");
    let base = "embed_dim=16\nhidden_dim=16\nvocab_size=200\nheads=2\nlayers=1\nffn_dim=32\n\
                dropout=0\nmax_decode_len=24\nbeam_size=2\nencoder=gat\nprecision=f32\n\
                languages=ENG,GER\ntask=bi\nbatch_size=8\nlr=0.002\nepochs=3\nseed=5\n";
    fs::write(&path, format!("{base}{extra}")).unwrap();
    path
}

/// prepare → train-tokenizer → train → generate → score, all through the
/// binary, at tiny dimensions.
#[test]
fn full_pipeline_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let data = dir.path().join("data");

    ok(&nabu()
        .args(["prepare", "--synthetic", "6", "--out"])
        .arg(&data)
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap());
    for file in ["eng.train.nabu", "ger.train.nabu", "merged.train.nabu"] {
        assert!(data.join(file).exists(), "{file} missing");
    }
    assert!(data.join("prepare.manifest.json").exists());

    let vocab = dir.path().join("vocab.txt");
    ok(&nabu()
        .args(["train-tokenizer", "--corpus"])
        .arg(data.join("eng.train.nabu"))
        .arg(data.join("ger.train.nabu"))
        .args(["--vocab-size", "200", "--out"])
        .arg(&vocab)
        .output()
        .unwrap());

    let ckpt = dir.path().join("model.ckpt");
    ok(&nabu()
        .args(["train", "--data"])
        .arg(&data)
        .arg("--vocab")
        .arg(&vocab)
        .arg("--out")
        .arg(&ckpt)
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap());
    assert!(ckpt.exists());
    let log = ckpt.with_extension("log.csv");
    let log_text = fs::read_to_string(&log).unwrap();
    assert!(log_text.starts_with("epoch,mean_loss,token_acc,wall_seconds"));
    assert_eq!(log_text.lines().count(), 4, "header + 3 epochs");

    let hyp = dir.path().join("hyp.txt");
    ok(&nabu()
        .args(["generate", "--checkpoint"])
        .arg(&ckpt)
        .arg("--vocab")
        .arg(&vocab)
        .arg("--input")
        .arg(data.join("eng.train.nabu"))
        .arg("--out")
        .arg(&hyp)
        .output()
        .unwrap());
    let blocks = fs::read_to_string(data.join("eng.train.nabu")).unwrap();
    let graph_count = blocks.split("\n\n").filter(|b| !b.trim().is_empty()).count();
    assert_eq!(fs::read_to_string(&hyp).unwrap().lines().count(), graph_count);

    // Scoring the references against themselves is exactly 100/100.
    let refs = dir.path().join("refs.txt");
    let ref_lines: Vec<String> = blocks
        .lines()
        .filter_map(|l| l.strip_prefix("text=").map(str::to_string))
        .collect();
    fs::write(&refs, ref_lines.join("\n") + "\n").unwrap();
    let report_path = dir.path().join("report.json");
    ok(&nabu()
        .args(["score", "--hypotheses"])
        .arg(&refs)
        .arg("--references")
        .arg(&refs)
        .arg("--out")
        .arg(&report_path)
        .args(["--per-segment"])
        .arg(dir.path().join("seg.csv"))
        .output()
        .unwrap());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert!((report["bleu"].as_f64().unwrap() - 100.0).abs() < 1e-9);
    assert!((report["chrfpp"].as_f64().unwrap() - 100.0).abs() < 1e-9);
    assert!(report["meteor"].is_null());
    let csv = fs::read_to_string(dir.path().join("seg.csv")).unwrap();
    assert_eq!(csv.lines().count(), ref_lines.len() + 1);
}

#[test]
fn reify_prints_the_worked_example_dump() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("g.nabu");
    fs::write(&input, "lang=ENG\nAlbert_Einstein | birthPlace | Germany\n").unwrap();
    let output = nabu().args(["reify", "--input"]).arg(&input).output().unwrap();
    ok(&output);
    let dump = String::from_utf8(output.stdout).unwrap();
    assert_eq!(
        dump,
        "Albert_Einstein --A0--> birthPlace#0\n\
         ENG --LANG--> Albert_Einstein\n\
         birthPlace#0 --A1--> Germany\n"
    );

    // Shared-predicate mode collapses repeated predicates into one node.
    fs::write(&input, "lang=ENG\nA | p | B\nC | p | D\n").unwrap();
    let shared = nabu()
        .args(["reify", "--shared-predicates", "--input"])
        .arg(&input)
        .output()
        .unwrap();
    ok(&shared);
    let dump = String::from_utf8(shared.stdout).unwrap();
    assert!(dump.contains("A --A0--> p\n"));
    assert!(dump.contains("C --A0--> p\n"));
    assert!(!dump.contains("p#1"));
}

#[test]
fn unknown_config_keys_exit_with_the_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "definitely_not_a_key=1\n").unwrap();
    let output = nabu()
        .args(["prepare", "--synthetic", "2", "--out"])
        .arg(dir.path().join("out"))
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(12));
    assert!(String::from_utf8_lossy(&output.stderr).contains("unknown config key"));
}

#[test]
fn malformed_triples_exit_with_line_context() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.nabu");
    fs::write(&input, "lang=ENG\nonly | two\n").unwrap();
    let output = nabu().args(["reify", "--input"]).arg(&input).output().unwrap();
    assert_eq!(output.status.code(), Some(10));
    assert!(String::from_utf8_lossy(&output.stderr).contains("line 2"));
}

#[test]
fn score_length_mismatch_has_its_own_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    fs::write(&a, "one\ntwo\n").unwrap();
    fs::write(&b, "one\n").unwrap();
    let output = nabu()
        .args(["score", "--hypotheses"])
        .arg(&a)
        .arg("--references")
        .arg(&b)
        .arg("--out")
        .arg(dir.path().join("r.json"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(16));
}

#[test]
fn truncated_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("broken.ckpt");
    fs::write(&ckpt, b"NABU\x01\x00\x00").unwrap();
    let input = dir.path().join("g.nabu");
    fs::write(&input, "lang=ENG\nA | p | B\n").unwrap();
    let vocab = dir.path().join("v.txt");
    fs::write(&vocab, "[specials]\n").unwrap();
    let output = nabu()
        .args(["generate", "--checkpoint"])
        .arg(&ckpt)
        .arg("--vocab")
        .arg(&vocab)
        .arg("--input")
        .arg(&input)
        .arg("--out")
        .arg(dir.path().join("o.txt"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(14));
}

#[test]
fn prepare_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let hash_dir = |out: &Path| {
        let mut entries: Vec<_> = fs::read_dir(out)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|e| e == "nabu"))
            .collect();
        entries.sort();
        entries
            .iter()
            .map(|p| nabu_cli::manifest::sha256_file(p).unwrap())
            .collect::<Vec<_>>()
    };
    for run in ["a", "b"] {
        ok(&nabu()
            .args(["prepare", "--synthetic", "8", "--out"])
            .arg(dir.path().join(run))
            .arg("--config")
            .arg(&cfg)
            .args(["--seed", "33"])
            .output()
            .unwrap());
    }
    assert_eq!(
        hash_dir(&dir.path().join("a")),
        hash_dir(&dir.path().join("b"))
    );
}
