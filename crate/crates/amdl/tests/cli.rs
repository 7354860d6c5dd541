use std::path::Path;
use std::process::{Command, Output};

fn amdl(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amdl")).args(args).current_dir(dir).env_remove("AMDL_THREADS").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const QUICK: [&str; 6] = ["--epochs", "2", "--milestones", "1", "--lr", "0.1,0.01"];

fn with_quick<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(QUICK).collect()
}

/// Small data for `base-hard` and `easy`, and a base trained for 2 epochs.
fn setup(dir: &Path) {
    assert_eq!(code(&amdl(&["gen-data", "--kind", "hard", "--n", "60", "--seed", "1", "--out", "d", "--name", "base-hard"], dir)), 0);
    assert_eq!(code(&amdl(&["gen-data", "--kind", "easy", "--n", "40", "--seed", "2", "--out", "d"], dir)), 0);
    let o = amdl(&with_quick(&["train-base", "--data", "d", "--name", "base-hard", "--out", "m", "--preset", "tiny"]), dir);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn gen_data_is_deterministic_and_idempotent() {
    let t = tempfile::tempdir().unwrap();
    let o = amdl(&["gen-data", "--kind", "easy", "--n", "200", "--seed", "1", "--out", "a"], t.path());
    assert_eq!(code(&o), 0);
    let files: Vec<_> = ["train", "val", "test"].iter().map(|s| format!("easy.{s}.amds")).collect();
    let read = |d: &str| files.iter().map(|f| std::fs::read(t.path().join(d).join(f)).unwrap()).collect::<Vec<_>>();
    let first = read("a");
    assert_eq!(code(&amdl(&["gen-data", "--kind", "easy", "--n", "200", "--seed", "1", "--out", "a"], t.path())), 0);
    assert_eq!(read("a"), first);
    assert_eq!(code(&amdl(&["gen-data", "--kind", "easy", "--n", "200", "--seed", "1", "--out", "b"], t.path())), 0);
    assert_eq!(read("b"), first);
    assert_eq!(first[0].len(), 4 + 2 + 4 + 2 + 2 + 1 + 2 + 1 + 2 + "synthetic:easy:seed=1".len() + 200 * 2 + 200 * 32 * 32 * 3 + 4);
}

#[test]
fn bad_arguments_exit_2() {
    let t = tempfile::tempdir().unwrap();
    let o = amdl(&["gen-data", "--kind", "hard", "--n", "5", "--seed", "1", "--out", "d"], t.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("20"));
    assert_eq!(code(&amdl(&["gen-data", "--kind", "weird", "--n", "50", "--seed", "1", "--out", "d"], t.path())), 2);
    assert_eq!(code(&amdl(&["select", "--fixture", "table2", "--unknown-flag"], t.path())), 2);
    assert_eq!(code(&amdl(&["select", "--fixture", "table2", "--T", "150"], t.path())), 2);
    assert_eq!(code(&amdl(&["select", "--fixture", "table3"], t.path())), 2);
    assert_eq!(code(&amdl(&["frobnicate"], t.path())), 2);
    let o = Command::new(env!("CARGO_BIN_EXE_amdl")).args(["select", "--fixture", "table2"]).env("AMDL_THREADS", "0").output().unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn help_lists_every_flag() {
    let t = tempfile::tempdir().unwrap();
    let cases: [(&str, &[&str]); 6] = [
        ("gen-data", &["--kind", "--n", "--n-val", "--n-test", "--seed", "--out", "--size", "--name"]),
        ("train-base", &["--name", "--config", "--preset", "--image-size", "--schedule", "--seed", "--epochs", "--batch-size", "--milestones", "--lr", "--momentum", "--weight-decay", "--data", "--out"]),
        ("train-domain", &["--base", "--domain", "--topology", "--strategy", "--no-adapt", "--config", "--epochs", "--data", "--out"]),
        ("evaluate", &["--config", "--base", "--bundle", "--data", "--domain", "--split", "--config-name", "--out"]),
        ("select", &["--config", "--results", "--fixture", "--T"]),
        ("report", &["--config", "--results", "--fixture", "--T", "--out"]),
    ];
    for (cmd, flags) in cases {
        let o = amdl(&[cmd, "--help"], t.path());
        assert_eq!(code(&o), 0);
        let text = stdout(&o);
        for f in flags {
            assert!(text.contains(f), "{cmd} --help lacks {f}");
        }
    }
}

#[test]
fn select_fixture_prints_best_mean() {
    let t = tempfile::tempdir().unwrap();
    let o = amdl(&["select", "--fixture", "table2", "--T", "3.5"], t.path());
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let mean: f64 = text.lines().find_map(|l| l.strip_prefix("mean accuracy ")).unwrap().parse().unwrap();
    assert!((mean - 72.79).abs() <= 0.01);
    assert!(text.contains("GTSR: exit 1 (MLP128) accuracy 97.00"));
}

#[test]
fn missing_and_corrupt_files_exit_3() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(code(&amdl(&["evaluate", "--base", "nope.amdl", "--data", ".", "--domain", "x"], t.path())), 3);
    std::fs::write(t.path().join("bad.amdl"), b"AMDL\x01\x00\x00").unwrap();
    std::fs::create_dir(t.path().join("d")).unwrap();
    let o = amdl(&["evaluate", "--base", "bad.amdl", "--data", "d", "--domain", "x"], t.path());
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("at byte"));
    assert_eq!(code(&amdl(&["select", "--results", "nowhere"], t.path())), 3);
}

#[test]
fn domain_pipeline_and_mismatched_base() {
    let t = tempfile::tempdir().unwrap();
    let p = t.path();
    setup(p);
    let o = amdl(&with_quick(&["train-domain", "--base", "m/base.amdl", "--data", "d", "--domain", "easy", "--out", "m"]), p);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["easy.amdl", "easy.final.amdl", "easy.history.csv", "easy.eval.csv", "base.history.csv"] {
        assert!(p.join("m").join(f).exists(), "{f}");
    }
    let hist = amdl::history::read(&p.join("m/easy.history.csv")).unwrap();
    assert_eq!(hist.records.len(), 2);

    let o = amdl(&["evaluate", "--base", "m/base.amdl", "--bundle", "m/easy.amdl", "--data", "d", "--domain", "easy", "--out", "e.csv", "--config-name", "mlp:128"], p);
    assert_eq!(code(&o), 0);
    // Evaluating the saved best bundle reproduces the numbers written at training time.
    assert_eq!(std::fs::read(p.join("e.csv")).unwrap(), std::fs::read(p.join("m/easy.eval.csv")).unwrap());

    let o = amdl(&["report", "--results", "m", "--T", "3.5", "--out", "r"], p);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read_to_string(p.join("r/report.csv")).unwrap().lines().count(), 2);

    // A base with another channel layout gives a different configuration hash.
    let o = amdl(&with_quick(&["train-base", "--data", "d", "--name", "base-hard", "--out", "m2", "--image-size", "16"]), p);
    assert_eq!(code(&o), 0);
    let o = amdl(&["evaluate", "--base", "m2/base.amdl", "--bundle", "m/easy.amdl", "--data", "d", "--domain", "easy"], p);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("mismatch"));
}

#[test]
fn config_file_with_flag_override() {
    let t = tempfile::tempdir().unwrap();
    let p = t.path();
    setup(p);
    std::fs::write(p.join("run.cfg"), "base = m/base.amdl\ndata = d\nout = c\nepochs = 50\nmilestones = 1\nlr = 0.1, 0.01\ntopology = basic\n").unwrap();
    let o = amdl(&["train-domain", "--config", "run.cfg", "--domain", "easy", "--epochs", "2"], p);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(amdl::history::read(&p.join("c/easy.history.csv")).unwrap().records.len(), 2);
    assert!(std::fs::read_to_string(p.join("c/easy.eval.csv")).unwrap().contains(",basic,"));

    std::fs::write(p.join("bad.cfg"), "epochz = 3\n").unwrap();
    assert_eq!(code(&amdl(&["train-domain", "--config", "bad.cfg", "--domain", "easy"], p)), 2);
}

#[test]
fn divergence_exits_4() {
    let t = tempfile::tempdir().unwrap();
    let p = t.path();
    setup(p);
    let o = amdl(&["train-domain", "--base", "m/base.amdl", "--data", "d", "--domain", "easy", "--out", "x", "--epochs", "2", "--milestones", "1", "--lr", "1e30,1e30"], p);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("non-finite"));
}
