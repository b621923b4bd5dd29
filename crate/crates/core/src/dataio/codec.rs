use std::fs;
use std::path::Path;

use crate::adaptation::{AdaptReport, AdaptRow, LabelSource};
use crate::error::{Error, Result};
use crate::mathcore::Matrix;
use crate::network::{HighwayConfig, HighwayNetwork, ParamSet};
use crate::sequence::{Alignment, Arc, Lattice};
use crate::training::{EpochRecord, TrainRun};

use super::text::{check_finite, push_reals, LineReader};

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn name_of(path: &Path) -> String {
    path.display().to_string()
}

fn expect_end(r: &mut LineReader) -> Result<()> {
    let line = r.next_line()?;
    if line.trim() != "END" {
        return Err(r.error(r.line_no(), "expected END"));
    }
    if let Some(extra) = r.peek() {
        if !extra.trim().is_empty() {
            return Err(r.error(r.line_no() + 1, "trailing content after END"));
        }
    }
    Ok(())
}

fn check_config_pairs(config: &[(String, String)]) -> Result<()> {
    for (k, v) in config {
        let bad = |s: &str| s.is_empty() || s.chars().any(char::is_whitespace);
        if bad(k) || k.contains('=') || v.chars().any(char::is_whitespace) {
            return Err(Error::argument(format!("config entry `{k}={v}` cannot be written")));
        }
    }
    Ok(())
}

/// Reads `key=value` lines until the `columns` line, which is returned.
fn read_config<'a>(r: &mut LineReader<'a>) -> Result<(Vec<(String, String)>, Vec<&'a str>)> {
    let mut config = Vec::new();
    loop {
        let toks = r.tokens()?;
        match toks.first() {
            Some(&"columns") => return Ok((config, toks[1..].to_vec())),
            Some(tok) if toks.len() == 1 => {
                let (k, v) = tok
                    .split_once('=')
                    .ok_or_else(|| r.error(r.line_no(), "expected key=value or columns line"))?;
                config.push((k.to_string(), v.to_string()));
            }
            _ => return Err(r.error(r.line_no(), "expected key=value or columns line")),
        }
    }
}

// ---- features -------------------------------------------------------------

pub fn format_features(frames: &Matrix) -> Result<String> {
    check_finite(frames.as_slice(), "features")?;
    let mut out = format!("FEAT v1 {} {}\n", frames.rows(), frames.cols());
    for t in 0..frames.rows() {
        push_reals(&mut out, frames.row(t));
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_features(name: &str, text: &str) -> Result<Matrix> {
    let mut r = LineReader::new(name, text);
    let dims = r.expect_header("FEAT", "v1")?;
    if dims.len() != 2 {
        return Err(r.error(1, "expected `FEAT v1 T D`"));
    }
    let t: usize = r.parse(dims[0], "frame count")?;
    let d: usize = r.parse(dims[1], "dimension")?;
    let mut data = Vec::with_capacity(t * d);
    for _ in 0..t {
        let toks = r.tokens()?;
        data.extend(r.parse_reals(&toks, d)?);
    }
    if let Some(extra) = r.peek() {
        if !extra.trim().is_empty() {
            return Err(r.error(r.line_no() + 1, "more rows than the header declares"));
        }
    }
    Matrix::from_vec(t, d, data)
}

pub fn read_features(path: &Path) -> Result<Matrix> {
    parse_features(&name_of(path), &read_text(path)?)
}

pub fn write_features(path: &Path, frames: &Matrix) -> Result<()> {
    write_text(path, &format_features(frames)?)
}

// ---- alignments -----------------------------------------------------------

pub fn format_alignment(ali: &Alignment) -> String {
    let ids: Vec<String> = ali.0.iter().map(|s| s.to_string()).collect();
    format!("{}\n", ids.join(" "))
}

pub fn parse_alignment(name: &str, text: &str) -> Result<Alignment> {
    let mut r = LineReader::new(name, text);
    let toks = r.tokens()?;
    let states = toks
        .iter()
        .map(|t| r.parse(t, "state id"))
        .collect::<Result<Vec<usize>>>()?;
    if let Some(extra) = r.peek() {
        if !extra.trim().is_empty() {
            return Err(r.error(2, "alignment must be a single line"));
        }
    }
    Ok(Alignment(states))
}

pub fn read_alignment(path: &Path) -> Result<Alignment> {
    parse_alignment(&name_of(path), &read_text(path)?)
}

pub fn write_alignment(path: &Path, ali: &Alignment) -> Result<()> {
    write_text(path, &format_alignment(ali))
}

// ---- models ---------------------------------------------------------------

pub fn format_model(net: &HighwayNetwork) -> Result<String> {
    let c = net.config();
    let mut out = format!(
        "HDNN v1\ndims {} {} {} {} {}\n",
        c.input_dim,
        c.hidden_dim,
        c.num_layers,
        c.output_dim,
        u8::from(c.gate_bias)
    );
    for block in net.params.blocks() {
        check_finite(block.values, "parameters")?;
        out.push_str(&format!("{} {} {}\n", block.name, block.rows, block.cols));
        if block.cols == 1 {
            push_reals(&mut out, block.values);
            out.push('\n');
        } else {
            for row in block.values.chunks(block.cols) {
                push_reals(&mut out, row);
                out.push('\n');
            }
        }
    }
    out.push_str("END\n");
    Ok(out)
}

pub fn parse_model(name: &str, text: &str) -> Result<HighwayNetwork> {
    let mut r = LineReader::new(name, text);
    r.expect_header("HDNN", "v1")?;
    let toks = r.tokens()?;
    if toks.len() != 6 || toks[0] != "dims" {
        return Err(r.error(r.line_no(), "expected `dims input hidden layers output gate_bias`"));
    }
    let gate_bias = match toks[5] {
        "0" => false,
        "1" => true,
        other => return Err(r.error(r.line_no(), format!("gate_bias must be 0 or 1, got `{other}`"))),
    };
    let config = HighwayConfig {
        input_dim: r.parse(toks[1], "input dimension")?,
        hidden_dim: r.parse(toks[2], "hidden dimension")?,
        num_layers: r.parse(toks[3], "layer count")?,
        output_dim: r.parse(toks[4], "output dimension")?,
        gate_bias,
    };
    config.validate().map_err(|e| r.error(r.line_no(), e.to_string()))?;
    let mut params = ParamSet::zeros(&config);
    let shapes: Vec<(String, usize, usize)> = params
        .blocks()
        .iter()
        .map(|b| (b.name.clone(), b.rows, b.cols))
        .collect();
    for (block, (want_name, rows, cols)) in params.blocks_mut().into_iter().zip(shapes) {
        let toks = r.tokens()?;
        let expected = format!("{want_name} {rows} {cols}");
        if toks.join(" ") != expected {
            return Err(r.error(r.line_no(), format!("expected block header `{expected}`")));
        }
        if cols == 1 {
            let toks = r.tokens()?;
            block.values.copy_from_slice(&r.parse_reals(&toks, rows)?);
        } else {
            for row in block.values.chunks_mut(cols) {
                let toks = r.tokens()?;
                row.copy_from_slice(&r.parse_reals(&toks, cols)?);
            }
        }
    }
    expect_end(&mut r)?;
    HighwayNetwork::from_params(config, params)
}

pub fn read_model(path: &Path) -> Result<HighwayNetwork> {
    parse_model(&name_of(path), &read_text(path)?)
}

pub fn write_model(path: &Path, net: &HighwayNetwork) -> Result<()> {
    write_text(path, &format_model(net)?)
}

// ---- lattices -------------------------------------------------------------

pub fn format_lattice(lat: &Lattice) -> Result<String> {
    let mut out = format!("LAT v1 {} {}\n", lat.num_frames(), lat.num_states());
    for a in lat.arcs() {
        check_finite(&[a.log_acoustic, a.log_graph], "lattice scores")?;
        out.push_str(&format!("{} {} {} {} ", a.frame, a.from, a.to, a.state));
        push_reals(&mut out, &[a.log_acoustic, a.log_graph]);
        out.push('\n');
    }
    out.push_str("END");
    for e in lat.ends() {
        out.push_str(&format!(" {e}"));
    }
    out.push('\n');
    Ok(out)
}

pub fn parse_lattice(name: &str, text: &str) -> Result<Lattice> {
    let mut r = LineReader::new(name, text);
    let dims = r.expect_header("LAT", "v1")?;
    if dims.len() != 2 {
        return Err(r.error(1, "expected `LAT v1 T S`"));
    }
    let t: usize = r.parse(dims[0], "frame count")?;
    let s: usize = r.parse(dims[1], "state count")?;
    let mut arcs = Vec::new();
    loop {
        let toks = r.tokens()?;
        if toks.first() == Some(&"END") {
            let ends = toks[1..]
                .iter()
                .map(|tok| r.parse(tok, "node id"))
                .collect::<Result<Vec<usize>>>()?;
            let end_line = r.line_no();
            if let Some(extra) = r.peek() {
                if !extra.trim().is_empty() {
                    return Err(r.error(end_line + 1, "trailing content after END"));
                }
            }
            return Lattice::new(t, s, arcs, ends).map_err(|e| r.error(end_line, e.to_string()));
        }
        if toks.len() != 6 {
            return Err(r.error(r.line_no(), "expected `t from to state log_ac log_gr`"));
        }
        arcs.push(Arc {
            frame: r.parse(toks[0], "frame")?,
            from: r.parse(toks[1], "node id")?,
            to: r.parse(toks[2], "node id")?,
            state: r.parse(toks[3], "state id")?,
            log_acoustic: r.parse_real(toks[4])?,
            log_graph: r.parse_real(toks[5])?,
        });
    }
}

pub fn read_lattice(path: &Path) -> Result<Lattice> {
    parse_lattice(&name_of(path), &read_text(path)?)
}

pub fn write_lattice(path: &Path, lat: &Lattice) -> Result<()> {
    write_text(path, &format_lattice(lat)?)
}

// ---- training runs --------------------------------------------------------

const BASE_COLUMNS: [&str; 5] = ["epoch", "objective", "train_acc", "dev_acc", "seconds"];

fn push_record(out: &mut String, rec: &EpochRecord) -> Result<()> {
    let mut values = vec![rec.objective, rec.train_acc, rec.dev_acc, rec.seconds];
    values.extend(&rec.extra);
    check_finite(&values, "training metrics")?;
    out.push_str(&format!("{} ", rec.epoch));
    push_reals(out, &values);
    out.push('\n');
    Ok(())
}

pub fn format_train_run(run: &TrainRun) -> Result<String> {
    check_config_pairs(&run.config)?;
    let mut out = String::from("TRAINRUN v1\n");
    for (k, v) in &run.config {
        out.push_str(&format!("{k}={v}\n"));
    }
    out.push_str("columns");
    for c in BASE_COLUMNS.iter().copied().chain(run.extra_columns.iter().map(String::as_str)) {
        if c.is_empty() || c.chars().any(char::is_whitespace) {
            return Err(Error::argument(format!("invalid column name `{c}`")));
        }
        out.push(' ');
        out.push_str(c);
    }
    out.push('\n');
    for rec in std::iter::once(&run.baseline).chain(&run.records) {
        if rec.extra.len() != run.extra_columns.len() {
            return Err(Error::shape("record width differs from the column header"));
        }
    }
    out.push_str("baseline ");
    push_record(&mut out, &run.baseline)?;
    for rec in &run.records {
        push_record(&mut out, rec)?;
    }
    out.push_str("END\n");
    Ok(out)
}

fn parse_record(r: &LineReader, toks: &[&str], width: usize) -> Result<EpochRecord> {
    if toks.len() != width {
        return Err(r.error(r.line_no(), format!("expected {width} columns, found {}", toks.len())));
    }
    let values = r.parse_reals(&toks[1..], width - 1)?;
    Ok(EpochRecord {
        epoch: r.parse(toks[0], "epoch")?,
        objective: values[0],
        train_acc: values[1],
        dev_acc: values[2],
        seconds: values[3],
        extra: values[4..].to_vec(),
    })
}

pub fn parse_train_run(name: &str, text: &str) -> Result<TrainRun> {
    let mut r = LineReader::new(name, text);
    r.expect_header("TRAINRUN", "v1")?;
    let (config, columns) = read_config(&mut r)?;
    if columns.len() < BASE_COLUMNS.len() || columns[..BASE_COLUMNS.len()] != BASE_COLUMNS {
        return Err(r.error(r.line_no(), format!("columns must start with `{}`", BASE_COLUMNS.join(" "))));
    }
    let extra_columns: Vec<String> = columns[BASE_COLUMNS.len()..].iter().map(|s| s.to_string()).collect();
    let width = columns.len();
    let toks = r.tokens()?;
    if toks.first() != Some(&"baseline") {
        return Err(r.error(r.line_no(), "expected baseline record"));
    }
    let baseline = parse_record(&r, &toks[1..], width)?;
    let mut records: Vec<EpochRecord> = Vec::new();
    loop {
        let toks = r.tokens()?;
        if toks == ["END"] {
            break;
        }
        let rec = parse_record(&r, &toks, width)?;
        let expected = baseline.epoch + records.len() + 1;
        if rec.epoch != expected {
            return Err(r.error(r.line_no(), format!("expected epoch {expected}, found {}", rec.epoch)));
        }
        records.push(rec);
    }
    if let Some(extra) = r.peek() {
        if !extra.trim().is_empty() {
            return Err(r.error(r.line_no() + 1, "trailing content after END"));
        }
    }
    Ok(TrainRun {
        config,
        extra_columns,
        baseline,
        records,
    })
}

pub fn read_train_run(path: &Path) -> Result<TrainRun> {
    parse_train_run(&name_of(path), &read_text(path)?)
}

pub fn write_train_run(path: &Path, run: &TrainRun) -> Result<()> {
    write_text(path, &format_train_run(run)?)
}

// ---- adaptation reports ---------------------------------------------------

const ADAPT_COLUMNS: [&str; 5] = ["speaker", "iter", "label_source", "err_si", "err_sd"];

pub fn format_adapt_report(report: &AdaptReport) -> Result<String> {
    check_config_pairs(&report.config)?;
    let mut out = String::from("ADAPT v1\n");
    for (k, v) in &report.config {
        out.push_str(&format!("{k}={v}\n"));
    }
    out.push_str(&format!("columns {}\n", ADAPT_COLUMNS.join(" ")));
    for row in &report.rows {
        if row.speaker.is_empty() || row.speaker.chars().any(char::is_whitespace) {
            return Err(Error::argument(format!("invalid speaker id `{}`", row.speaker)));
        }
        check_finite(&[row.err_si, row.err_sd], "error rates")?;
        out.push_str(&format!("{} {} {} ", row.speaker, row.iteration, row.label_source));
        push_reals(&mut out, &[row.err_si, row.err_sd]);
        out.push('\n');
    }
    out.push_str("summary\n");
    for (spk, acc) in &report.label_accuracy {
        check_finite(&[*acc], "label accuracy")?;
        out.push_str(&format!("label_acc {spk} "));
        push_reals(&mut out, &[*acc]);
        out.push('\n');
    }
    for (iter, si, sd) in report.aggregate() {
        out.push_str(&format!("mean {iter} "));
        push_reals(&mut out, &[si, sd]);
        out.push('\n');
    }
    out.push_str("END\n");
    Ok(out)
}

pub fn parse_adapt_report(name: &str, text: &str) -> Result<AdaptReport> {
    let mut r = LineReader::new(name, text);
    r.expect_header("ADAPT", "v1")?;
    let (config, columns) = read_config(&mut r)?;
    if columns != ADAPT_COLUMNS {
        return Err(r.error(r.line_no(), format!("expected columns `{}`", ADAPT_COLUMNS.join(" "))));
    }
    let mut report = AdaptReport {
        config,
        label_accuracy: Vec::new(),
        rows: Vec::new(),
    };
    loop {
        let toks = r.tokens()?;
        if toks == ["summary"] {
            break;
        }
        if toks.len() != 5 {
            return Err(r.error(r.line_no(), "expected `speaker iter label_source err_si err_sd`"));
        }
        report.rows.push(AdaptRow {
            speaker: toks[0].to_string(),
            iteration: r.parse(toks[1], "iteration")?,
            label_source: r.parse::<LabelSource>(toks[2], "label source")?,
            err_si: r.parse_real(toks[3])?,
            err_sd: r.parse_real(toks[4])?,
        });
    }
    let mut means = Vec::new();
    loop {
        let toks = r.tokens()?;
        match toks.first() {
            Some(&"END") if toks.len() == 1 => break,
            Some(&"label_acc") if toks.len() == 3 => {
                report.label_accuracy.push((toks[1].to_string(), r.parse_real(toks[2])?));
            }
            Some(&"mean") if toks.len() == 4 => {
                means.push((r.parse::<usize>(toks[1], "iteration")?, r.parse_real(toks[2])?, r.parse_real(toks[3])?));
            }
            _ => return Err(r.error(r.line_no(), "malformed summary line")),
        }
    }
    let end_line = r.line_no();
    if let Some(extra) = r.peek() {
        if !extra.trim().is_empty() {
            return Err(r.error(end_line + 1, "trailing content after END"));
        }
    }
    if means != report.aggregate() {
        return Err(r.error(end_line, "summary block disagrees with the per-speaker rows"));
    }
    Ok(report)
}

pub fn read_adapt_report(path: &Path) -> Result<AdaptReport> {
    parse_adapt_report(&name_of(path), &read_text(path)?)
}

pub fn write_adapt_report(path: &Path, report: &AdaptReport) -> Result<()> {
    write_text(path, &format_adapt_report(report)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathcore::Rng;
    use crate::sequence::{nbest_lattice, TransitionModel};
    use proptest::prelude::*;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = Rng::new(seed);
        let data = (0..rows * cols).map(|_| rng.standard_normal() * 1e3).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn sample_run() -> TrainRun {
        let rec = |epoch: usize, x: f64| EpochRecord {
            epoch,
            objective: x,
            train_acc: 50.0 + x,
            dev_acc: 40.0 - x / 3.0,
            seconds: 0.0,
            extra: vec![x * 0.1, -x],
        };
        TrainRun {
            config: vec![("seed".into(), "7".into()), ("mask".into(), "g".into())],
            extra_columns: vec!["expected_acc".into(), "ce".into()],
            baseline: rec(0, 1.0 / 3.0),
            records: vec![rec(1, 0.25), rec(2, std::f64::consts::PI)],
        }
    }

    fn sample_report() -> AdaptReport {
        let mut rows = Vec::new();
        for spk in ["spk001", "spk002"] {
            for iter in 0..3 {
                rows.push(AdaptRow {
                    speaker: spk.into(),
                    iteration: iter,
                    label_source: LabelSource::Pseudo,
                    err_si: 30.1,
                    err_sd: 30.1 - iter as f64 / 7.0,
                });
            }
        }
        AdaptReport {
            config: vec![("lr".into(), "0.0002".into())],
            label_accuracy: vec![("spk001".into(), 70.0), ("spk002".into(), 66.6)],
            rows,
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn features_round_trip(t in 0usize..6, d in 1usize..5, seed in any::<u64>()) {
            let m = random_matrix(t, d, seed);
            let text = format_features(&m).unwrap();
            let back = parse_features("x", &text).unwrap();
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(format_features(&back).unwrap(), text);
        }

        #[test]
        fn model_round_trip(h in 1usize..4, l in 1usize..4, bias in any::<bool>(), seed in any::<u64>()) {
            let mut config = HighwayConfig::new(3, h, l, 2);
            config.gate_bias = bias;
            let net = HighwayNetwork::init(config, &mut Rng::new(seed)).unwrap();
            let text = format_model(&net).unwrap();
            let back = parse_model("x", &text).unwrap();
            prop_assert_eq!(&back.params.to_flat(), &net.params.to_flat());
            prop_assert_eq!(format_model(&back).unwrap(), text);
        }

        #[test]
        fn lattice_round_trip(t in 1usize..5, s in 2usize..4, n in 1usize..6, seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let mut post = Matrix::zeros(t, s);
            for i in 0..t {
                let row: Vec<f64> = (0..s).map(|_| rng.uniform(0.05, 1.0)).collect();
                let z: f64 = row.iter().sum();
                for j in 0..s {
                    post.set(i, j, row[j] / z);
                }
            }
            let lat = nbest_lattice(&post, &TransitionModel::uniform(s), 0.1, n, None).unwrap();
            let text = format_lattice(&lat).unwrap();
            let back = parse_lattice("x", &text).unwrap();
            prop_assert_eq!(format_lattice(&back).unwrap(), text);
        }

        #[test]
        fn alignment_round_trip(states in proptest::collection::vec(0usize..50, 0..30)) {
            let ali = Alignment(states);
            let text = format_alignment(&ali);
            let back = parse_alignment("x", &text).unwrap();
            prop_assert_eq!(&back, &ali);
            prop_assert_eq!(format_alignment(&back), text);
        }
    }

    #[test]
    fn train_run_round_trip() {
        let run = sample_run();
        let text = format_train_run(&run).unwrap();
        let back = parse_train_run("x", &text).unwrap();
        assert_eq!(back, run);
        assert_eq!(format_train_run(&back).unwrap(), text);
    }

    #[test]
    fn adapt_report_round_trip() {
        let report = sample_report();
        let text = format_adapt_report(&report).unwrap();
        let back = parse_adapt_report("x", &text).unwrap();
        assert_eq!(back, report);
        assert_eq!(format_adapt_report(&back).unwrap(), text);
        let tampered = text.replacen("mean 0 ", "mean 0 1", 1);
        assert!(parse_adapt_report("x", &tampered).is_err());
    }

    fn parse_line(err: Error) -> usize {
        match err {
            Error::Parse { line, .. } => line,
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_files_name_the_line() {
        let feats = format_features(&random_matrix(4, 2, 1)).unwrap();
        let cut: String = feats.lines().take(3).map(|l| format!("{l}\n")).collect();
        assert_eq!(parse_line(parse_features("x", &cut).unwrap_err()), 4);

        let net = HighwayNetwork::init(HighwayConfig::new(3, 2, 2, 2), &mut Rng::new(3)).unwrap();
        let model = format_model(&net).unwrap();
        let n = model.lines().count();
        let cut: String = model.lines().take(n - 1).map(|l| format!("{l}\n")).collect();
        assert_eq!(parse_line(parse_model("x", &cut).unwrap_err()), n);

        let run = format_train_run(&sample_run()).unwrap();
        let cut: String = run.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert_eq!(parse_line(parse_train_run("x", &cut).unwrap_err()), 6);

        assert_eq!(parse_line(parse_train_run("x", "").unwrap_err()), 1);
    }

    #[test]
    fn non_finite_values_are_rejected_both_ways() {
        let mut m = random_matrix(2, 2, 5);
        m.as_mut_slice()[3] = f64::NAN;
        assert!(matches!(format_features(&m), Err(Error::Numerical(_))));
        let text = "FEAT v1 1 2\n1.0 inf\n";
        assert_eq!(parse_line(parse_features("x", text).unwrap_err()), 2);
        let text = "FEAT v1 1 2\n1.0 NaN\n";
        assert_eq!(parse_line(parse_features("x", text).unwrap_err()), 2);

        let mut net = HighwayNetwork::init(HighwayConfig::new(2, 2, 1, 2), &mut Rng::new(3)).unwrap();
        net.params.output_bias[0] = f64::INFINITY;
        assert!(matches!(format_model(&net), Err(Error::Numerical(_))));
    }

    #[test]
    fn version_mismatch_is_reported() {
        let err = parse_features("x", "FEAT v2 0 3\n").unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
        assert!(parse_lattice("x", "LAT v9 1 2\nEND 1\n").is_err());
    }

    #[test]
    fn dimension_inconsistency_is_rejected() {
        assert_eq!(parse_line(parse_features("x", "FEAT v1 1 3\n1 2\n").unwrap_err()), 2);
        assert_eq!(parse_line(parse_features("x", "FEAT v1 1 2\n1 2\n3 4\n").unwrap_err()), 3);
        let net = HighwayNetwork::init(HighwayConfig::new(3, 2, 1, 2), &mut Rng::new(3)).unwrap();
        let bad = format_model(&net).unwrap().replacen("dims 3 2", "dims 4 2", 1);
        assert!(parse_model("x", &bad).is_err());
    }
}
