mod report;
mod settings;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use hdnn::adaptation::{adapt_all, AdaptConfig, LabelSource, Speaker};
use hdnn::dataio::{
    format_adapt_report, format_alignment, format_model, format_train_run, generate_corpus, parse_adapt_report,
    parse_train_run, read_model, Corpus, CorpusSpec, Split,
};
use hdnn::gradcheck::run_trial;
use hdnn::mathcore::Rng;
use hdnn::network::{HighwayConfig, HighwayNetwork, ParamGroupMask};
use hdnn::sequence::{state_accuracy, Alignment};
use hdnn::training::{decode, splice_all, train_ce, train_smbr, CeConfig, SmbrConfig, SplicedUtterance};

use report::Artifact;
use settings::{flag, Settings};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] hdnn::Error),
    #[error("gradient check failed: worst relative error {0:.3e}")]
    GradCheck(f64),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(hdnn::Error::Argument(_)) => 2,
            CliError::Core(hdnn::Error::Numerical(_)) | CliError::GradCheck(_) => 4,
            CliError::Core(_) => 3,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Highway DNN acoustic-model experiments on synthetic HMM corpora.
#[derive(Parser)]
#[command(name = "hdnn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic corpus from a spec file.
    Generate(GenerateArgs),
    /// Frame-level cross-entropy training.
    TrainCe(TrainCeArgs),
    /// sMBR sequence training from a seed model.
    TrainSmbr(TrainSmbrArgs),
    /// Viterbi-decode one split and report frame accuracy.
    Decode(DecodeArgs),
    /// Per-speaker adaptation of a speaker-independent model.
    Adapt(AdaptArgs),
    /// Finite-difference check of the CE and sMBR gradients.
    Gradcheck(GradcheckArgs),
    /// Render training logs and adaptation reports as tables and curves.
    Report(ReportArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// File of `key=value` lines (overridden by --config and flags).
    #[arg(long)]
    config_file: Option<PathBuf>,
    /// Comma-separated `key=value` settings, e.g. `H=32,L=4`.
    #[arg(long)]
    config: Option<String>,
    /// Worker threads; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainCeArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Parameter groups to update: `all`, `none` or a subset of `h,g,c`.
    #[arg(long)]
    mask: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Learning rate applied to the minibatch-mean gradient.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    minibatch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Splice context in frames on each side (default from the corpus).
    #[arg(long)]
    context: Option<usize>,
    /// Record wall-clock seconds per epoch (makes the log non-reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct TrainSmbrArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    seed_model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
    /// CE smoothing weight.
    #[arg(long)]
    p: Option<f64>,
    /// Acoustic scale.
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    nbest: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    /// Learning rate per frame.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    mask: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Add the reference alignment to every lattice.
    #[arg(long)]
    include_reference: bool,
    #[arg(long)]
    timing: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum BayesMode {
    /// Per-frame MAP classification with the generating densities.
    Frame,
    /// Viterbi decoding with the generating densities.
    Viterbi,
}

#[derive(Args)]
struct DecodeArgs {
    /// Model to decode with (not needed with --bayes).
    #[arg(long, required_unless_present = "bayes")]
    model: Option<PathBuf>,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "eval")]
    split: String,
    /// Decode with the corpus's generating model instead of a network.
    #[arg(long, value_enum)]
    bayes: Option<BayesMode>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct AdaptArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    labels: Option<String>,
    #[arg(long)]
    iters: Option<usize>,
    /// Learning rate per frame.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    mask: Option<String>,
    #[arg(long)]
    split: Option<String>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Training logs (`train.run`) and adaptation reports (`adapt.report`).
    #[arg(long, required = true, num_args = 1..)]
    run: Vec<PathBuf>,
    /// Directory for `report.txt` and curve files.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Core(hdnn::Error::Io {
        path: dir.display().to_string(),
        source: e,
    }))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| {
        CliError::Core(hdnn::Error::Io {
            path: path.display().to_string(),
            source: e,
        })
    })
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        CliError::Core(hdnn::Error::Io {
            path: path.display().to_string(),
            source: e,
        })
    })
}

/// Records everything needed to repeat the run.
fn write_manifest(
    out: &Path,
    command: &str,
    inputs: &[(&str, &Path)],
    settings: &[(&str, &str)],
    outputs: &[&str],
) -> Result<()> {
    let mut text = format!("MANIFEST v1\ncommand={command}\nversion={}\n", env!("CARGO_PKG_VERSION"));
    for (k, p) in inputs {
        text.push_str(&format!("input.{k}={}\n", p.display()));
    }
    for (k, v) in settings {
        text.push_str(&format!("{k}={v}\n"));
    }
    text.push_str(&format!("outputs={}\n", outputs.join(",")));
    write_file(&out.join("manifest.txt"), &text)
}

fn load_corpus(dir: &Path) -> Result<Corpus> {
    Ok(Corpus::load(dir)?)
}

fn parse_mask(s: &str) -> Result<ParamGroupMask> {
    s.parse::<ParamGroupMask>().map_err(|e| CliError::Usage(e.to_string()))
}

fn parse_split(s: &str) -> Result<Split> {
    s.parse::<Split>().map_err(|e| CliError::Usage(e.to_string()))
}

/// Splice context implied by a model's input layer.
fn context_for(net: &HighwayNetwork, corpus: &Corpus) -> Result<usize> {
    let d = corpus.spec.raw_dim;
    let input = net.config().input_dim;
    if !input.is_multiple_of(d) || (input / d).is_multiple_of(2) {
        return Err(CliError::Core(hdnn::Error::Shape(format!(
            "model input dimension {input} is not a spliced multiple of the corpus dimension {d}"
        ))));
    }
    if net.config().output_dim != corpus.spec.num_states {
        return Err(CliError::Core(hdnn::Error::Shape(format!(
            "model has {} outputs, corpus has {} states",
            net.config().output_dim,
            corpus.spec.num_states
        ))));
    }
    Ok((input / d - 1) / 2)
}

fn pairs(settings: &Settings) -> Vec<(&str, &str)> {
    settings.pairs().collect()
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let text = read_file(&args.spec)?;
    let mut spec = CorpusSpec::parse(&args.spec.display().to_string(), &text)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let corpus = generate_corpus(&spec)?;
    corpus.save(&args.out)?;
    let resolved = spec.to_pairs();
    let settings: Vec<(&str, &str)> = resolved.iter().map(|(k, v)| (*k, v.as_str())).collect();
    write_manifest(&args.out, "generate", &[("spec", &args.spec)], &settings, &["corpus.meta", "train", "dev", "eval"])?;
    for split in Split::ALL {
        println!(
            "{split}: {} utterances, bayes frame accuracy {:.2}%, bayes viterbi accuracy {:.2}%",
            corpus.split(split).len(),
            corpus.metadata.bayes_frame_accuracy[&split],
            corpus.metadata.bayes_viterbi_accuracy[&split]
        );
    }
    Ok(())
}

fn cmd_train_ce(args: &TrainCeArgs) -> Result<()> {
    let corpus = load_corpus(&args.corpus)?;
    let d = CeConfig::default();
    let defaults = [
        ("H", "32".to_string()),
        ("L", "4".to_string()),
        ("gate_bias", "false".to_string()),
        ("input_dim", "auto".to_string()),
        ("context", corpus.spec.context.to_string()),
        ("epochs", d.epochs.to_string()),
        ("lr", d.learning_rate.to_string()),
        ("momentum", d.momentum.to_string()),
        ("minibatch", d.minibatch.to_string()),
        ("mask", d.mask.to_string()),
        ("seed", d.seed.to_string()),
        ("halve", d.halve_on_stall.to_string()),
        ("decode_scale", d.decode_scale.to_string()),
        ("timing", "false".to_string()),
    ];
    let flags = [
        ("mask", args.mask.clone()),
        ("epochs", flag(&args.epochs)),
        ("lr", flag(&args.lr)),
        ("momentum", flag(&args.momentum)),
        ("minibatch", flag(&args.minibatch)),
        ("seed", flag(&args.seed)),
        ("context", flag(&args.context)),
        ("timing", args.timing.then(|| "true".to_string())),
    ];
    let s = Settings::resolve(&defaults, args.cfg.config_file.as_deref(), args.cfg.config.as_deref(), &flags)?;
    let context: usize = s.get("context")?;
    let input_dim = corpus.spec.raw_dim * (2 * context + 1);
    let declared: String = s.get("input_dim")?;
    if declared != "auto" && declared.parse::<usize>().ok() != Some(input_dim) {
        return Err(CliError::Core(hdnn::Error::Shape(format!(
            "input_dim={declared} but the corpus spliced with context {context} gives {input_dim}"
        ))));
    }
    let mut config = HighwayConfig::new(input_dim, s.get("H")?, s.get("L")?, corpus.spec.num_states);
    config.gate_bias = s.get("gate_bias")?;
    let seed: u64 = s.get("seed")?;
    let mut net = HighwayNetwork::init(config, &mut Rng::new(seed))?;
    let cfg = CeConfig {
        epochs: s.get("epochs")?,
        learning_rate: s.get("lr")?,
        momentum: s.get("momentum")?,
        minibatch: s.get("minibatch")?,
        mask: parse_mask(&s.get::<String>("mask")?)?,
        seed,
        halve_on_stall: s.get("halve")?,
        decode_scale: s.get("decode_scale")?,
        threads: args.cfg.threads,
        record_time: s.get("timing")?,
    };
    let train = splice_all(&corpus.train, context);
    let dev = splice_all(&corpus.dev, context);
    let run = train_ce(&mut net, &train, &dev, &corpus.transitions, &cfg)?;
    create_dir(&args.out)?;
    write_file(&args.out.join("model.hdnn"), &format_model(&net)?)?;
    write_file(&args.out.join("train.run"), &format_train_run(&run)?)?;
    let mut settings = pairs(&s);
    let threads = args.cfg.threads.to_string();
    settings.push(("threads", &threads));
    write_manifest(&args.out, "train-ce", &[("corpus", &args.corpus)], &settings, &["model.hdnn", "train.run"])?;
    print!("{}", report::render_train("train-ce", &run));
    Ok(())
}

fn cmd_train_smbr(args: &TrainSmbrArgs) -> Result<()> {
    let corpus = load_corpus(&args.corpus)?;
    let mut net = read_model(&args.seed_model)?;
    let context = context_for(&net, &corpus)?;
    let d = SmbrConfig::default();
    let defaults = [
        ("p", d.p.to_string()),
        ("k", d.k.to_string()),
        ("nbest", d.nbest.to_string()),
        ("iters", d.iterations.to_string()),
        ("lr", d.learning_rate.to_string()),
        ("momentum", d.momentum.to_string()),
        ("mask", d.mask.to_string()),
        ("seed", d.seed.to_string()),
        ("include_reference", d.include_reference.to_string()),
        ("decode_scale", d.decode_scale.to_string()),
        ("timing", "false".to_string()),
    ];
    let flags = [
        ("p", flag(&args.p)),
        ("k", flag(&args.k)),
        ("nbest", flag(&args.nbest)),
        ("iters", flag(&args.iters)),
        ("lr", flag(&args.lr)),
        ("momentum", flag(&args.momentum)),
        ("mask", args.mask.clone()),
        ("seed", flag(&args.seed)),
        ("include_reference", args.include_reference.then(|| "true".to_string())),
        ("timing", args.timing.then(|| "true".to_string())),
    ];
    let s = Settings::resolve(&defaults, args.cfg.config_file.as_deref(), args.cfg.config.as_deref(), &flags)?;
    let cfg = SmbrConfig {
        p: s.get("p")?,
        k: s.get("k")?,
        nbest: s.get("nbest")?,
        iterations: s.get("iters")?,
        learning_rate: s.get("lr")?,
        momentum: s.get("momentum")?,
        mask: parse_mask(&s.get::<String>("mask")?)?,
        seed: s.get("seed")?,
        include_reference: s.get("include_reference")?,
        decode_scale: s.get("decode_scale")?,
        threads: args.cfg.threads,
        record_time: s.get("timing")?,
    };
    let train = splice_all(&corpus.train, context);
    let dev = splice_all(&corpus.dev, context);
    let run = train_smbr(&mut net, &train, &dev, &corpus.transitions, &cfg)?;
    create_dir(&args.out)?;
    write_file(&args.out.join("model.hdnn"), &format_model(&net)?)?;
    write_file(&args.out.join("train.run"), &format_train_run(&run)?)?;
    let mut settings = pairs(&s);
    let threads = args.cfg.threads.to_string();
    settings.push(("threads", &threads));
    write_manifest(
        &args.out,
        "train-smbr",
        &[("corpus", &args.corpus), ("seed_model", &args.seed_model)],
        &settings,
        &["model.hdnn", "train.run"],
    )?;
    print!("{}", report::render_train("train-smbr", &run));
    Ok(())
}

fn cmd_decode(args: &DecodeArgs) -> Result<()> {
    let corpus = load_corpus(&args.corpus)?;
    let defaults = [("split", "eval".to_string()), ("decode_scale", "1".to_string())];
    let flags = [("split", Some(args.split.clone()))];
    let s = Settings::resolve(&defaults, args.cfg.config_file.as_deref(), args.cfg.config.as_deref(), &flags)?;
    let split = parse_split(&s.get::<String>("split")?)?;
    let scale: f64 = s.get("decode_scale")?;
    let utts = corpus.split(split);

    let hyps: Vec<Alignment> = match (args.bayes, &args.model) {
        (Some(BayesMode::Frame), _) => utts.iter().map(|u| corpus.bayes_classify(u)).collect::<hdnn::Result<_>>()?,
        (Some(BayesMode::Viterbi), _) => utts.iter().map(|u| corpus.bayes_decode(u)).collect::<hdnn::Result<_>>()?,
        (None, Some(model)) => {
            let net = read_model(model)?;
            let context = context_for(&net, &corpus)?;
            let spliced: Vec<SplicedUtterance> = splice_all(utts, context);
            spliced
                .iter()
                .map(|u| decode(&net, &u.inputs, &corpus.transitions, scale))
                .collect::<hdnn::Result<_>>()?
        }
        (None, None) => return Err(CliError::Usage("decode needs --model or --bayes".into())),
    };

    let ali_dir = args.out.join("ali");
    create_dir(&ali_dir)?;
    let mut summary = String::from("utterance frames correct\n");
    let (mut frames, mut correct) = (0usize, 0usize);
    for (utt, hyp) in utts.iter().zip(&hyps) {
        write_file(&ali_dir.join(format!("{}.ali", utt.id)), &format_alignment(hyp))?;
        if let Some(reference) = &utt.alignment {
            let c = state_accuracy(hyp, reference)? as usize;
            summary.push_str(&format!("{} {} {c}\n", utt.id, hyp.len()));
            frames += hyp.len();
            correct += c;
        }
    }
    let acc = if frames == 0 { 0.0 } else { 100.0 * correct as f64 / frames as f64 };
    summary.push_str(&format!("total {frames} {correct}\nframe_accuracy {acc:.6}\nframe_error {:.6}\n", 100.0 - acc));
    write_file(&args.out.join("decode.txt"), &summary)?;
    let mut inputs: Vec<(&str, &Path)> = vec![("corpus", &args.corpus)];
    if let Some(m) = &args.model {
        inputs.push(("model", m));
    }
    let mut settings = pairs(&s);
    let mode = match args.bayes {
        Some(BayesMode::Frame) => "bayes-frame",
        Some(BayesMode::Viterbi) => "bayes-viterbi",
        None => "model",
    };
    settings.push(("decoder", mode));
    write_manifest(&args.out, "decode", &inputs, &settings, &["ali", "decode.txt"])?;
    println!("{split}: {frames} frames, frame accuracy {acc:.2}%, frame error {:.2}%", 100.0 - acc);
    Ok(())
}

fn cmd_adapt(args: &AdaptArgs) -> Result<()> {
    let corpus = load_corpus(&args.corpus)?;
    let net = read_model(&args.model)?;
    let context = context_for(&net, &corpus)?;
    let d = AdaptConfig::default();
    let defaults = [
        ("labels", "pseudo".to_string()),
        ("iters", d.iterations.to_string()),
        ("lr", d.learning_rate.to_string()),
        ("mask", d.mask.to_string()),
        ("split", "eval".to_string()),
        ("decode_scale", d.decode_scale.to_string()),
    ];
    let flags = [
        ("labels", args.labels.clone()),
        ("iters", flag(&args.iters)),
        ("lr", flag(&args.lr)),
        ("mask", args.mask.clone()),
        ("split", args.split.clone()),
    ];
    let s = Settings::resolve(&defaults, args.cfg.config_file.as_deref(), args.cfg.config.as_deref(), &flags)?;
    let source: LabelSource = s.get::<String>("labels")?.parse().map_err(|e: hdnn::Error| CliError::Usage(e.to_string()))?;
    let split = parse_split(&s.get::<String>("split")?)?;
    let cfg = AdaptConfig {
        learning_rate: s.get("lr")?,
        iterations: s.get("iters")?,
        mask: parse_mask(&s.get::<String>("mask")?)?,
        decode_scale: s.get("decode_scale")?,
        threads: args.cfg.threads,
    };
    let speakers = Speaker::group(&splice_all(corpus.split(split), context));
    let report = adapt_all(&net, &speakers, &corpus.transitions, &cfg, source)?;
    create_dir(&args.out)?;
    write_file(&args.out.join("adapt.report"), &format_adapt_report(&report)?)?;
    let mut settings = pairs(&s);
    let threads = args.cfg.threads.to_string();
    settings.push(("threads", &threads));
    write_manifest(
        &args.out,
        "adapt",
        &[("corpus", &args.corpus), ("model", &args.model)],
        &settings,
        &["adapt.report"],
    )?;
    print!("{}", report::render_adapt("adapt", &report));
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<()> {
    let defaults = [
        ("H", "4".to_string()),
        ("L", "3".to_string()),
        ("trials", "20".to_string()),
        ("seed", "1".to_string()),
    ];
    let flags = [("trials", flag(&args.trials)), ("seed", flag(&args.seed))];
    let s = Settings::resolve(&defaults, args.cfg.config_file.as_deref(), args.cfg.config.as_deref(), &flags)?;
    let (h, l): (usize, usize) = (s.get("H")?, s.get("L")?);
    let trials: usize = s.get("trials")?;
    let seed: u64 = s.get("seed")?;
    if h == 0 || l == 0 {
        return Err(CliError::Usage("H and L must be positive".into()));
    }
    let mut text = String::from("trial input states frames gate_bias ce smbr smbr_p0.2\n");
    let mut worst = 0.0f64;
    for i in 0..trials {
        let r = run_trial(seed.wrapping_add(i as u64), h, l)?;
        text.push_str(&format!(
            "{i} {} {} {} {} {:.3e} {:.3e} {:.3e}\n",
            r.config.input_dim,
            r.config.output_dim,
            r.frames,
            u8::from(r.config.gate_bias),
            r.ce,
            r.smbr,
            r.composite
        ));
        worst = worst.max(r.worst());
        if r.worst().is_nan() {
            worst = f64::INFINITY;
        }
    }
    text.push_str(&format!("worst {worst:.3e}\n"));
    print!("{text}");
    if let Some(out) = &args.out {
        create_dir(out)?;
        write_file(&out.join("gradcheck.txt"), &text)?;
        write_manifest(out, "gradcheck", &[], &pairs(&s), &["gradcheck.txt"])?;
    }
    if worst >= 1e-4 {
        return Err(CliError::GradCheck(worst));
    }
    Ok(())
}

fn load_artifact(path: &Path) -> Result<Artifact> {
    let text = read_file(path)?;
    if text.trim().is_empty() {
        return Err(CliError::Usage(format!("{} is empty", path.display())));
    }
    let name = path.display().to_string();
    if text.starts_with("ADAPT") {
        Ok(Artifact::Adapt(parse_adapt_report(&name, &text)?))
    } else {
        Ok(Artifact::Train(parse_train_run(&name, &text)?))
    }
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let artifacts: Vec<(String, Artifact)> = args
        .run
        .iter()
        .map(|p| Ok((p.display().to_string(), load_artifact(p)?)))
        .collect::<Result<_>>()?;
    let mut text = String::new();
    let mut curves = Vec::new();
    for (i, (name, art)) in artifacts.iter().enumerate() {
        match art {
            Artifact::Train(run) => {
                text.push_str(&report::render_train(name, run));
                curves.push((format!("curve{i:02}.dat"), report::train_curve(run)));
            }
            Artifact::Adapt(rep) => {
                text.push_str(&report::render_adapt(name, rep));
                curves.push((format!("sweep{i:02}.dat"), report::adapt_curve(rep)));
            }
        }
        text.push('\n');
    }
    let runs: Vec<(String, &hdnn::training::TrainRun)> = artifacts
        .iter()
        .filter_map(|(n, a)| match a {
            Artifact::Train(r) => Some((n.clone(), r)),
            Artifact::Adapt(_) => None,
        })
        .collect();
    if runs.len() > 1 {
        text.push_str("== summary\n");
        text.push_str(&report::render_summary(&runs));
    }
    print!("{text}");
    if let Some(out) = &args.out {
        create_dir(out)?;
        write_file(&out.join("report.txt"), &text)?;
        let mut outputs = vec!["report.txt".to_string()];
        for (file, body) in &curves {
            write_file(&out.join(file), body)?;
            outputs.push(file.clone());
        }
        let inputs: Vec<(String, &Path)> = args
            .run
            .iter()
            .enumerate()
            .map(|(i, p)| (format!("run{i:02}"), p.as_path()))
            .collect();
        let inputs: Vec<(&str, &Path)> = inputs.iter().map(|(k, p)| (k.as_str(), *p)).collect();
        let outputs: Vec<&str> = outputs.iter().map(String::as_str).collect();
        write_manifest(out, "report", &inputs, &[], &outputs)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::TrainCe(a) => cmd_train_ce(a),
        Command::TrainSmbr(a) => cmd_train_smbr(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Adapt(a) => cmd_adapt(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hdnn: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
