use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hdnn::dataio::{format_model, parse_train_run, read_adapt_report, Corpus};
use hdnn::mathcore::Rng;
use hdnn::network::{HighwayConfig, HighwayNetwork};

fn hdnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hdnn")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &str = "num_states=4\nraw_dim=3\ncontext=1\ntrain_speakers=2\ndev_speakers=1\neval_speakers=2\n\
utterances_per_speaker=3\nmin_frames=8\nmax_frames=12\nseed=3\n";

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("tiny.spec"), TINY).unwrap();
        let f = Fixture { dir };
        ok(hdnn(&["generate", "--spec", s(&f.path("tiny.spec")), "--out", s(&f.path("corpus"))]));
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train_ce(&self, out: &str, extra: &[&str]) -> Output {
        let corpus = self.path("corpus");
        let out = self.path(out);
        let mut args = vec!["train-ce", "--corpus", s(&corpus), "--out", s(&out)];
        if !extra.contains(&"--config") {
            args.extend_from_slice(&["--config", "H=4,L=2"]);
        }
        args.extend_from_slice(extra);
        hdnn(&args)
    }
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = Vec::new();
    for entry in walk(dir) {
        out.push((entry.strip_prefix(dir).unwrap().display().to_string(), fs::read(&entry).unwrap()));
    }
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&hdnn(&["generate", "--out", "/tmp/never"])), 2);
    assert_eq!(code(&hdnn(&["train-ce", "--bogus"])), 2);
    let f = Fixture::new();
    assert_eq!(code(&f.train_ce("x", &["--config", "H=4,nope=1"])), 2);
    assert_eq!(code(&f.train_ce("x", &["--config", "H=4", "--config", "L=2"])), 2);
    assert_eq!(code(&f.train_ce("x", &["--mask", "q"])), 2);
}

#[test]
fn generate_is_deterministic_and_rejects_bad_specs() {
    let f = Fixture::new();
    ok(hdnn(&["generate", "--spec", s(&f.path("tiny.spec")), "--out", s(&f.path("again"))]));
    assert_eq!(files(&f.path("corpus")), files(&f.path("again")));

    fs::write(f.path("bad.spec"), "num_states=1\n").unwrap();
    let out = hdnn(&["generate", "--spec", s(&f.path("bad.spec")), "--out", s(&f.path("bad"))]);
    assert_ne!(code(&out), 0);
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn acceptance_spec_in_repo_describes_the_default_corpus() {
    let spec_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/acceptance.spec");
    let spec = hdnn::dataio::CorpusSpec::parse("acceptance.spec", &fs::read_to_string(spec_path).unwrap()).unwrap();
    assert_eq!(spec.num_states, 20);
    assert_eq!(spec.raw_dim, 10);
    assert_eq!(spec.raw_dim * (2 * spec.context + 1), 210);
}

#[test]
fn zero_epochs_writes_the_initial_model() {
    let f = Fixture::new();
    ok(f.train_ce("ce0", &["--epochs", "0", "--seed", "7"]));
    let init = HighwayNetwork::init(HighwayConfig::new(9, 4, 2, 4), &mut Rng::new(7)).unwrap();
    assert_eq!(fs::read_to_string(f.path("ce0/model.hdnn")).unwrap(), format_model(&init).unwrap());
    let run = parse_train_run("run", &fs::read_to_string(f.path("ce0/train.run")).unwrap()).unwrap();
    assert!(run.records.is_empty());
}

#[test]
fn training_runs_are_byte_reproducible() {
    let f = Fixture::new();
    ok(f.train_ce("a", &["--epochs", "2"]));
    ok(f.train_ce("b", &["--epochs", "2", "--threads", "3"]));
    let strip = |mut v: Vec<(String, Vec<u8>)>| {
        v.retain(|(n, _)| n != "manifest.txt");
        v
    };
    assert_eq!(strip(files(&f.path("a"))), strip(files(&f.path("b"))));
    ok(f.train_ce("c", &["--epochs", "2"]));
    assert_eq!(files(&f.path("a")), files(&f.path("c")));
    let run = parse_train_run("run", &fs::read_to_string(f.path("a/train.run")).unwrap()).unwrap();
    assert_eq!(run.records.len(), 2);
    let manifest = fs::read_to_string(f.path("a/manifest.txt")).unwrap();
    assert!(manifest.contains("command=train-ce") && manifest.contains("H=4") && manifest.contains("seed=1"));
}

#[test]
fn config_precedence_and_dimension_checks() {
    let f = Fixture::new();
    fs::write(f.path("ce.cfg"), "epochs=3\nlr=0.2\n").unwrap();
    let cfg = f.path("ce.cfg");
    ok(f.train_ce("p", &["--config-file", s(&cfg), "--epochs", "1"]));
    let manifest = fs::read_to_string(f.path("p/manifest.txt")).unwrap();
    assert!(manifest.contains("epochs=1\n") && manifest.contains("lr=0.2\n"), "{manifest}");

    assert_eq!(code(&f.train_ce("d", &["--config", "H=4,L=2,input_dim=7"])), 3);
}

#[test]
fn smbr_with_zero_iterations_copies_the_seed() {
    let f = Fixture::new();
    ok(f.train_ce("ce", &["--epochs", "1"]));
    let corpus = f.path("corpus");
    let seed = f.path("ce/model.hdnn");
    let out = f.path("sm");
    ok(hdnn(&["train-smbr", "--corpus", s(&corpus), "--seed-model", s(&seed), "--iters", "0", "--out", s(&out)]));
    assert_eq!(fs::read(&seed).unwrap(), fs::read(out.join("model.hdnn")).unwrap());

    let missing = f.path("nope.hdnn");
    let res = hdnn(&["train-smbr", "--corpus", s(&corpus), "--seed-model", s(&missing), "--out", s(&out)]);
    assert_eq!(code(&res), 3);

    let sm2 = f.path("sm2");
    ok(hdnn(&[
        "train-smbr", "--corpus", s(&corpus), "--seed-model", s(&seed), "--iters", "2", "--mask", "g", "--p", "0",
        "--lr", "1e-3", "--out", s(&sm2),
    ]));
    let run = parse_train_run("run", &fs::read_to_string(sm2.join("train.run")).unwrap()).unwrap();
    assert_eq!(run.records.len(), 2);
    assert_eq!(run.config_value("p"), Some("0"));
}

#[test]
fn adapt_zero_iterations_and_missing_alignments() {
    let f = Fixture::new();
    ok(f.train_ce("ce", &["--epochs", "1"]));
    let corpus = f.path("corpus");
    let model = f.path("ce/model.hdnn");
    let model_bytes = fs::read(&model).unwrap();
    let out = f.path("ad");
    ok(hdnn(&["adapt", "--model", s(&model), "--corpus", s(&corpus), "--iters", "0", "--out", s(&out)]));
    let report = read_adapt_report(&out.join("adapt.report")).unwrap();
    assert!(!report.rows.is_empty());
    assert!(report.rows.iter().all(|r| r.err_sd == r.err_si && r.iteration == 0));
    assert_eq!(fs::read(&model).unwrap(), model_bytes);

    for p in walk(&corpus.join("eval")) {
        if p.extension().is_some_and(|e| e == "ali") {
            fs::remove_file(p).unwrap();
        }
    }
    let res = hdnn(&["adapt", "--model", s(&model), "--corpus", s(&corpus), "--labels", "oracle", "--out", s(&out)]);
    assert_eq!(code(&res), 3);
}

#[test]
fn gradcheck_passes_on_small_networks() {
    let f = Fixture::new();
    let out = f.path("gc");
    ok(hdnn(&["gradcheck", "--config", "H=4,L=3", "--trials", "20", "--out", s(&out)]));
    let text = fs::read_to_string(out.join("gradcheck.txt")).unwrap();
    assert_eq!(text.lines().count(), 22);
}

#[test]
fn report_renders_runs_and_rejects_empty_files() {
    let f = Fixture::new();
    ok(f.train_ce("ce", &["--epochs", "2"]));
    fs::write(f.path("empty.run"), "").unwrap();
    assert_eq!(code(&hdnn(&["report", "--run", s(&f.path("empty.run"))])), 2);
    let run = f.path("ce/train.run");
    let out = f.path("rep");
    let res = ok(hdnn(&["report", "--run", s(&run), s(&run), "--out", s(&out)]));
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("dev_acc") && stdout.contains("summary"));
    let curve = fs::read_to_string(out.join("curve00.dat")).unwrap();
    assert_eq!(curve.lines().count(), 4);
}

#[test]
fn bayes_decode_reproduces_corpus_metadata() {
    let f = Fixture::new();
    let corpus_dir = f.path("corpus");
    let corpus = Corpus::load(&corpus_dir).unwrap();
    for (mode, expected) in [
        ("frame", corpus.metadata.bayes_frame_accuracy[&hdnn::dataio::Split::Eval]),
        ("viterbi", corpus.metadata.bayes_viterbi_accuracy[&hdnn::dataio::Split::Eval]),
    ] {
        let out = f.path(mode);
        ok(hdnn(&["decode", "--corpus", s(&corpus_dir), "--bayes", mode, "--out", s(&out)]));
        let text = fs::read_to_string(out.join("decode.txt")).unwrap();
        let acc: f64 = text
            .lines()
            .find_map(|l| l.strip_prefix("frame_accuracy "))
            .unwrap()
            .parse()
            .unwrap();
        assert!((acc - expected).abs() < 1.0, "{mode}: {acc} vs {expected}");
    }
    ok(f.train_ce("ce", &["--epochs", "1"]));
    let out = f.path("dec");
    ok(hdnn(&["decode", "--corpus", s(&corpus_dir), "--model", s(&f.path("ce/model.hdnn")), "--out", s(&out)]));
    assert_eq!(walk(&out.join("ali")).len(), corpus.eval.len());
}
