use std::fs;
use std::path::Path;
use std::time::Instant;

use hdnn::dataio::{generate_corpus, Corpus, CorpusSpec, Split};
use hdnn::Error;

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn small() -> CorpusSpec {
    CorpusSpec {
        num_states: 5,
        raw_dim: 3,
        train_speakers: 2,
        dev_speakers: 1,
        eval_speakers: 1,
        utterances_per_speaker: 2,
        min_frames: 4,
        max_frames: 8,
        ..CorpusSpec::default()
    }
}

#[test]
fn same_seed_gives_byte_identical_directories() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    generate_corpus(&small()).unwrap().save(a.path()).unwrap();
    generate_corpus(&small()).unwrap().save(b.path()).unwrap();
    assert_eq!(tree(a.path()), tree(b.path()));

    let c = tempfile::tempdir().unwrap();
    let other = CorpusSpec { seed: 99, ..small() };
    generate_corpus(&other).unwrap().save(c.path()).unwrap();
    assert_ne!(tree(a.path()), tree(c.path()));
}

#[test]
fn reload_and_resave_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    generate_corpus(&small()).unwrap().save(a.path()).unwrap();
    Corpus::load(a.path()).unwrap().save(b.path()).unwrap();
    assert_eq!(tree(a.path()), tree(b.path()));
}

#[test]
fn broken_feature_files_are_reported_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_corpus(&small()).unwrap();
    corpus.save(dir.path()).unwrap();
    let utt = &corpus.train[0];
    let path = dir.path().join("train").join(format!("{}.feat", utt.id));
    let text = fs::read_to_string(&path).unwrap();

    let truncated: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
    fs::write(&path, truncated).unwrap();
    match Corpus::load(dir.path()) {
        Err(Error::Parse { line, source_name, .. }) => {
            assert_eq!(line, 4);
            assert!(source_name.ends_with(".feat"));
        }
        other => panic!("expected parse error, got {other:?}"),
    }

    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let first = lines[2].split_whitespace().next().unwrap().to_string();
    lines[2] = lines[2].replacen(&first, "NaN", 1);
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    assert!(matches!(Corpus::load(dir.path()), Err(Error::Parse { line: 3, .. })));
}

#[test]
fn speaker_stats_reflect_the_shift() {
    let spec = CorpusSpec {
        shift: 1.0,
        speaker_noise: 0.0,
        utterances_per_speaker: 30,
        ..small()
    };
    let corpus = generate_corpus(&spec).unwrap();
    let base = CorpusSpec { shift: 0.0, ..spec.clone() };
    let unshifted = generate_corpus(&base).unwrap();
    // Mean offsets between speakers are visible in the recorded stats and
    // vanish without a shift (up to sampling noise).
    let spread = |c: &Corpus| {
        let m: Vec<f64> = c.metadata.speaker_stats.iter().map(|s| s.mean[0]).collect();
        m.iter().cloned().fold(f64::MIN, f64::max) - m.iter().cloned().fold(f64::MAX, f64::min)
    };
    assert_eq!(corpus.metadata.speaker_stats.len(), corpus.speakers.len());
    assert!(spread(&corpus) > spread(&unshifted));
    for split in Split::ALL {
        assert!(corpus.metadata.bayes_frame_accuracy[&split] > 100.0 / spec.num_states as f64);
    }
}

#[test]
fn large_corpus_loads_quickly() {
    let spec = CorpusSpec {
        train_speakers: 40,
        dev_speakers: 8,
        eval_speakers: 15,
        utterances_per_speaker: 20,
        min_frames: 30,
        max_frames: 50,
        ..CorpusSpec::default()
    };
    assert_eq!(spec.num_speakers(), 63);
    let dir = tempfile::tempdir().unwrap();
    generate_corpus(&spec).unwrap().save(dir.path()).unwrap();
    let start = Instant::now();
    let corpus = Corpus::load(dir.path()).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    assert_eq!(corpus.train.len() + corpus.dev.len() + corpus.eval.len(), 63 * 20);
    assert!(elapsed < 1.0, "load took {elapsed:.3}s");
}
