use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mathcore::{Matrix, Rng};
use crate::sequence::{viterbi_scores, Alignment, TransitionModel};

use super::codec::{format_alignment, format_features, parse_alignment, parse_features};
use super::text::{push_reals, LineReader};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Dev,
    Eval,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Eval];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Eval => "eval",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "eval" => Ok(Split::Eval),
            other => Err(Error::argument(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker: String,
    /// `T × D` raw features.
    pub frames: Matrix,
    pub alignment: Option<Alignment>,
}

impl Utterance {
    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }
}

/// Parameters of a synthetic corpus. Speakers are split disjointly into
/// train/dev/eval; each speaker applies its own diagonal affine transform
/// plus noise to frames emitted by a shared Gaussian HMM.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub num_states: usize,
    pub raw_dim: usize,
    /// Suggested splice context (frames on each side).
    pub context: usize,
    pub train_speakers: usize,
    pub dev_speakers: usize,
    pub eval_speakers: usize,
    pub utterances_per_speaker: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub seed: u64,
    /// Standard deviation of the per-state emission means.
    pub mean_scale: f64,
    pub var_min: f64,
    pub var_max: f64,
    /// Self-transition probability of every state.
    pub self_loop: f64,
    /// Number of non-self successors per state (the ring successor is always one).
    pub successors: usize,
    /// Magnitude of the per-speaker affine shift.
    pub shift: f64,
    /// Standard deviation of the per-speaker additive noise.
    pub speaker_noise: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            num_states: 20,
            raw_dim: 10,
            context: 10,
            train_speakers: 12,
            dev_speakers: 4,
            eval_speakers: 8,
            utterances_per_speaker: 20,
            min_frames: 30,
            max_frames: 50,
            seed: 1,
            mean_scale: 1.0,
            var_min: 0.5,
            var_max: 1.5,
            self_loop: 0.6,
            successors: 2,
            shift: 0.5,
            speaker_noise: 0.1,
        }
    }
}

macro_rules! spec_fields {
    ($m:ident) => {
        $m!(
            num_states,
            raw_dim,
            context,
            train_speakers,
            dev_speakers,
            eval_speakers,
            utterances_per_speaker,
            min_frames,
            max_frames,
            seed,
            mean_scale,
            var_min,
            var_max,
            self_loop,
            successors,
            shift,
            speaker_noise
        )
    };
}

impl CorpusSpec {
    pub fn num_speakers(&self) -> usize {
        self.train_speakers + self.dev_speakers + self.eval_speakers
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::argument(format!("corpus spec: {m}")));
        if self.num_states < 2 {
            return fail("num_states must be >= 2");
        }
        if self.raw_dim < 1 {
            return fail("raw_dim must be >= 1");
        }
        if self.min_frames < 1 || self.min_frames > self.max_frames {
            return fail("need 1 <= min_frames <= max_frames");
        }
        if !(0.0..1.0).contains(&self.self_loop) {
            return fail("self_loop must be in [0, 1)");
        }
        if self.successors < 1 || self.successors >= self.num_states {
            return fail("successors must be in 1..num_states");
        }
        if !(self.var_min > 0.0 && self.var_min <= self.var_max) {
            return fail("need 0 < var_min <= var_max");
        }
        if self.mean_scale < 0.0 || self.shift < 0.0 || self.speaker_noise < 0.0 {
            return fail("scales must be non-negative");
        }
        if self.utterances_per_speaker == 0 {
            return fail("utterances_per_speaker must be >= 1");
        }
        Ok(())
    }

    /// `key=value` lines; blank lines and `#` comments are ignored.
    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let mut spec = CorpusSpec::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: String| Error::Parse {
                source_name: name.to_string(),
                line: i + 1,
                message: m,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got `{line}`")))?;
            spec.set(key.trim(), value.trim()).map_err(|e| err(e.to_string()))?;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        macro_rules! assign {
            ($($f:ident),*) => {
                match key {
                    $(stringify!($f) => {
                        self.$f = value
                            .parse()
                            .map_err(|_| Error::argument(format!("invalid value `{value}` for {key}")))?;
                    })*
                    _ => return Err(Error::argument(format!("unknown corpus key `{key}`"))),
                }
            };
        }
        spec_fields!(assign);
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        macro_rules! pairs {
            ($($f:ident),*) => {
                vec![$((stringify!($f), self.$f.to_string())),*]
            };
        }
        spec_fields!(pairs)
    }

    pub fn to_text(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}

/// Diagonal Gaussian emissions per state.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionModel {
    /// `S × D`.
    pub means: Matrix,
    /// `S × D`.
    pub variances: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerProfile {
    pub id: String,
    pub split: Split,
    pub scale: Vec<f64>,
    pub offset: Vec<f64>,
    pub noise: f64,
}

/// Feature mean and variance measured on one speaker's generated frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerStats {
    pub speaker: String,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusMetadata {
    /// Frame accuracy (%) of per-frame MAP classification with the
    /// generating densities, per split.
    pub bayes_frame_accuracy: BTreeMap<Split, f64>,
    /// Frame accuracy (%) of Viterbi decoding with the generating
    /// densities and transitions, per split.
    pub bayes_viterbi_accuracy: BTreeMap<Split, f64>,
    pub speaker_stats: Vec<SpeakerStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub spec: CorpusSpec,
    pub emissions: EmissionModel,
    pub transitions: TransitionModel,
    pub speakers: Vec<SpeakerProfile>,
    pub train: Vec<Utterance>,
    pub dev: Vec<Utterance>,
    pub eval: Vec<Utterance>,
    pub metadata: CorpusMetadata,
}

/// Concatenates frames `t-context..=t+context` for every `t`, replicating
/// the first/last frame past the edges.
pub fn splice(frames: &Matrix, context: usize) -> Matrix {
    let (t_len, d) = frames.shape();
    let width = 2 * context + 1;
    let mut out = Matrix::zeros(t_len, d * width);
    for t in 0..t_len {
        let row = out.row_mut(t);
        for w in 0..width {
            let src = (t + w).saturating_sub(context).min(t_len - 1);
            row[w * d..(w + 1) * d].copy_from_slice(frames.row(src));
        }
    }
    out
}

fn gaussian_log_density(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    x.iter()
        .zip(mean)
        .zip(var)
        .map(|((x, m), v)| -0.5 * (ln_2pi + v.ln() + (x - m) * (x - m) / v))
        .sum()
}

fn stationary_distribution(trans: &Matrix) -> Vec<f64> {
    let s = trans.rows();
    let mut p = vec![1.0 / s as f64; s];
    for _ in 0..5000 {
        let mut next = vec![0.0; s];
        for i in 0..s {
            for j in 0..s {
                next[j] += p[i] * trans.get(i, j);
            }
        }
        p = next;
    }
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= sum);
    p
}

/// Puts any rounding residue on the largest entry so the row sums to one.
fn fix_row_sum(row: &mut [f64]) {
    let sum: f64 = row.iter().sum();
    let arg = (0..row.len())
        .max_by(|&a, &b| row[a].total_cmp(&row[b]))
        .unwrap_or(0);
    row[arg] += 1.0 - sum;
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[Utterance] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Eval => &self.eval,
        }
    }

    pub fn speaker(&self, id: &str) -> Option<&SpeakerProfile> {
        self.speakers.iter().find(|s| s.id == id)
    }

    /// Speakers of a split, in corpus order.
    pub fn speakers_in(&self, split: Split) -> Vec<&SpeakerProfile> {
        self.speakers.iter().filter(|s| s.split == split).collect()
    }

    /// Generating log-densities `ln p(x_t | s)` for the utterance's speaker.
    pub fn true_log_likelihoods(&self, utt: &Utterance) -> Result<Matrix> {
        let spk = self
            .speaker(&utt.speaker)
            .ok_or_else(|| Error::state(format!("unknown speaker `{}`", utt.speaker)))?;
        let (s, d) = self.emissions.means.shape();
        if utt.frames.cols() != d {
            return Err(Error::shape("utterance feature dimension differs from the corpus"));
        }
        let mut means = Matrix::zeros(s, d);
        let mut vars = Matrix::zeros(s, d);
        for st in 0..s {
            for k in 0..d {
                let a = spk.scale[k];
                means.set(st, k, a * self.emissions.means.get(st, k) + spk.offset[k]);
                vars.set(st, k, a * a * self.emissions.variances.get(st, k) + spk.noise * spk.noise);
            }
        }
        let mut out = Matrix::zeros(utt.num_frames(), s);
        for t in 0..utt.num_frames() {
            for st in 0..s {
                out.set(t, st, gaussian_log_density(utt.frames.row(t), means.row(st), vars.row(st)));
            }
        }
        Ok(out)
    }

    /// Per-frame MAP state under the generating model.
    pub fn bayes_classify(&self, utt: &Utterance) -> Result<Alignment> {
        let ll = self.true_log_likelihoods(utt)?;
        let prior = self.transitions.log_prior();
        Ok(Alignment(
            (0..ll.rows())
                .map(|t| {
                    let mut best = 0;
                    for st in 1..prior.len() {
                        if ll.get(t, st) + prior[st] > ll.get(t, best) + prior[best] {
                            best = st;
                        }
                    }
                    best
                })
                .collect(),
        ))
    }

    /// Viterbi path under the generating densities and transitions.
    pub fn bayes_decode(&self, utt: &Utterance) -> Result<Alignment> {
        let ll = self.true_log_likelihoods(utt)?;
        Ok(viterbi_scores(&ll, &self.transitions, 1.0))
    }

    fn accuracy_of(&self, split: Split, decode: impl Fn(&Utterance) -> Result<Alignment>) -> Result<f64> {
        let mut correct = 0usize;
        let mut total = 0usize;
        for utt in self.split(split) {
            let Some(reference) = &utt.alignment else {
                continue;
            };
            let hyp = decode(utt)?;
            correct += hyp.0.iter().zip(&reference.0).filter(|(a, b)| a == b).count();
            total += reference.len();
        }
        Ok(if total == 0 { 0.0 } else { 100.0 * correct as f64 / total as f64 })
    }

    /// Frame accuracy (%) of [`Corpus::bayes_classify`] on a split.
    pub fn bayes_frame_accuracy(&self, split: Split) -> Result<f64> {
        self.accuracy_of(split, |u| self.bayes_classify(u))
    }

    pub fn bayes_viterbi_accuracy(&self, split: Split) -> Result<f64> {
        self.accuracy_of(split, |u| self.bayes_decode(u))
    }

    fn compute_metadata(&mut self) -> Result<()> {
        let mut frame = BTreeMap::new();
        let mut seq = BTreeMap::new();
        for split in Split::ALL {
            frame.insert(split, self.bayes_frame_accuracy(split)?);
            seq.insert(split, self.bayes_viterbi_accuracy(split)?);
        }
        let d = self.spec.raw_dim;
        let mut stats = Vec::new();
        for spk in &self.speakers {
            let utts: Vec<&Utterance> = Split::ALL
                .iter()
                .flat_map(|s| self.split(*s))
                .filter(|u| u.speaker == spk.id)
                .collect();
            let n: usize = utts.iter().map(|u| u.num_frames()).sum();
            let mut mean = vec![0.0; d];
            for u in &utts {
                for t in 0..u.num_frames() {
                    for (m, x) in mean.iter_mut().zip(u.frames.row(t)) {
                        *m += x;
                    }
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut variance = vec![0.0; d];
            for u in &utts {
                for t in 0..u.num_frames() {
                    for ((v, x), m) in variance.iter_mut().zip(u.frames.row(t)).zip(&mean) {
                        *v += (x - m) * (x - m);
                    }
                }
            }
            variance.iter_mut().for_each(|v| *v /= n as f64);
            stats.push(SpeakerStats {
                speaker: spk.id.clone(),
                mean,
                variance,
            });
        }
        self.metadata = CorpusMetadata {
            bayes_frame_accuracy: frame,
            bayes_viterbi_accuracy: seq,
            speaker_stats: stats,
        };
        Ok(())
    }
}

/// Samples a corpus from the HMM described by `spec`.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let s = spec.num_states;
    let d = spec.raw_dim;
    let mut rng = Rng::new(spec.seed);

    let mut means = Matrix::zeros(s, d);
    let mut variances = Matrix::zeros(s, d);
    for st in 0..s {
        for k in 0..d {
            means.set(st, k, spec.mean_scale * rng.standard_normal());
            let v = if spec.var_max > spec.var_min {
                rng.uniform(spec.var_min, spec.var_max)
            } else {
                spec.var_min
            };
            variances.set(st, k, v);
        }
    }

    let mut trans = Matrix::zeros(s, s);
    for i in 0..s {
        let mut targets = vec![(i + 1) % s];
        while targets.len() < spec.successors {
            let j = rng.below(s);
            if j != i && !targets.contains(&j) {
                targets.push(j);
            }
        }
        let weights: Vec<f64> = targets.iter().map(|_| rng.uniform(0.5, 1.5)).collect();
        let total: f64 = weights.iter().sum();
        trans.set(i, i, spec.self_loop);
        for (&j, w) in targets.iter().zip(&weights) {
            trans.set(i, j, (1.0 - spec.self_loop) * w / total);
        }
        fix_row_sum(trans.row_mut(i));
    }
    let mut prior = stationary_distribution(&trans);
    fix_row_sum(&mut prior);
    let transitions = TransitionModel::from_probabilities(&trans, &prior)?;

    let mut speakers = Vec::with_capacity(spec.num_speakers());
    let mut train = Vec::new();
    let mut dev = Vec::new();
    let mut eval = Vec::new();
    for n in 0..spec.num_speakers() {
        let split = if n < spec.train_speakers {
            Split::Train
        } else if n < spec.train_speakers + spec.dev_speakers {
            Split::Dev
        } else {
            Split::Eval
        };
        let mut spk_rng = rng.fork();
        let scale: Vec<f64> = (0..d)
            .map(|_| (0.5 * spec.shift * spk_rng.standard_normal()).exp())
            .collect();
        let offset: Vec<f64> = (0..d).map(|_| spec.shift * spk_rng.standard_normal()).collect();
        let profile = SpeakerProfile {
            id: format!("spk{n:03}"),
            split,
            scale,
            offset,
            noise: spec.speaker_noise,
        };
        for u in 0..spec.utterances_per_speaker {
            let len = spec.min_frames + spk_rng.below(spec.max_frames - spec.min_frames + 1);
            let mut states = Vec::with_capacity(len);
            let mut frames = Matrix::zeros(len, d);
            let mut state = spk_rng.categorical(&prior);
            for t in 0..len {
                if t > 0 {
                    state = spk_rng.categorical(trans.row(state));
                }
                states.push(state);
                for k in 0..d {
                    let clean = means.get(state, k) + variances.get(state, k).sqrt() * spk_rng.standard_normal();
                    let noisy = profile.scale[k] * clean + profile.offset[k] + profile.noise * spk_rng.standard_normal();
                    frames.set(t, k, noisy);
                }
            }
            let utt = Utterance {
                id: format!("{}_u{u:03}", profile.id),
                speaker: profile.id.clone(),
                frames,
                alignment: Some(Alignment(states)),
            };
            match split {
                Split::Train => train.push(utt),
                Split::Dev => dev.push(utt),
                Split::Eval => eval.push(utt),
            }
        }
        speakers.push(profile);
    }

    let mut corpus = Corpus {
        spec: spec.clone(),
        emissions: EmissionModel { means, variances },
        transitions,
        speakers,
        train,
        dev,
        eval,
        metadata: CorpusMetadata {
            bayes_frame_accuracy: BTreeMap::new(),
            bayes_viterbi_accuracy: BTreeMap::new(),
            speaker_stats: Vec::new(),
        },
    };
    corpus.compute_metadata()?;
    Ok(corpus)
}

const META_FILE: &str = "corpus.meta";

impl Corpus {
    /// Serialises `corpus.meta`.
    pub fn format_meta(&self) -> String {
        let mut out = String::from("CORPUS v1\n");
        for (k, v) in self.spec.to_pairs() {
            out.push_str(&format!("spec {k}={v}\n"));
        }
        let line = |out: &mut String, head: String, values: &[f64]| {
            out.push_str(&head);
            out.push(' ');
            push_reals(out, values);
            out.push('\n');
        };
        for st in 0..self.spec.num_states {
            line(&mut out, format!("mean {st}"), self.emissions.means.row(st));
        }
        for st in 0..self.spec.num_states {
            line(&mut out, format!("var {st}"), self.emissions.variances.row(st));
        }
        line(&mut out, "prior".into(), &self.transitions.prior_probabilities());
        let trans = self.transitions.transition_probabilities();
        for st in 0..self.spec.num_states {
            line(&mut out, format!("trans {st}"), trans.row(st));
        }
        for spk in &self.speakers {
            line(&mut out, format!("speaker {} {}", spk.id, spk.split), &[spk.noise]);
            line(&mut out, format!("speaker_scale {}", spk.id), &spk.scale);
            line(&mut out, format!("speaker_offset {}", spk.id), &spk.offset);
        }
        for st in &self.metadata.speaker_stats {
            line(&mut out, format!("speaker_mean {}", st.speaker), &st.mean);
            line(&mut out, format!("speaker_var {}", st.speaker), &st.variance);
        }
        for split in Split::ALL {
            for utt in self.split(split) {
                out.push_str(&format!("utt {split} {} {} {}\n", utt.id, utt.speaker, utt.num_frames()));
            }
        }
        for (split, acc) in &self.metadata.bayes_frame_accuracy {
            line(&mut out, format!("bayes_frame_acc {split}"), &[*acc]);
        }
        for (split, acc) in &self.metadata.bayes_viterbi_accuracy {
            line(&mut out, format!("bayes_viterbi_acc {split}"), &[*acc]);
        }
        out.push_str("END\n");
        out
    }

    /// Writes the corpus directory (`corpus.meta`, `train/`, `dev/`, `eval/`).
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = dir.join(META_FILE);
        fs::write(&meta, self.format_meta()).map_err(|e| Error::io(&meta, e))?;
        for split in Split::ALL {
            let sub = dir.join(split.as_str());
            fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            for utt in self.split(split) {
                let feat = sub.join(format!("{}.feat", utt.id));
                fs::write(&feat, format_features(&utt.frames)?).map_err(|e| Error::io(&feat, e))?;
                if let Some(ali) = &utt.alignment {
                    let path = sub.join(format!("{}.ali", utt.id));
                    fs::write(&path, format_alignment(ali)).map_err(|e| Error::io(&path, e))?;
                }
            }
        }
        Ok(())
    }

    /// Reads a corpus directory written by [`Corpus::save`]. Missing
    /// `.ali` files leave `alignment` empty.
    pub fn load(dir: &Path) -> Result<Corpus> {
        let meta_path = dir.join(META_FILE);
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let name = meta_path.display().to_string();
        let mut r = LineReader::new(&name, &text);
        r.expect_header("CORPUS", "v1")?;

        let mut spec = CorpusSpec::default();
        let mut means: Vec<Vec<f64>> = Vec::new();
        let mut vars: Vec<Vec<f64>> = Vec::new();
        let mut prior = Vec::new();
        let mut trans: Vec<Vec<f64>> = Vec::new();
        let mut speakers: Vec<SpeakerProfile> = Vec::new();
        let mut stats: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        let mut listing: Vec<(Split, String, String, usize)> = Vec::new();
        let mut frame_acc = BTreeMap::new();
        let mut viterbi_acc = BTreeMap::new();
        let mut spec_done = false;

        loop {
            let toks = r.tokens()?;
            let Some(&head) = toks.first() else {
                return Err(r.error(r.line_no(), "blank line"));
            };
            if head != "spec" && !spec_done {
                spec.validate().map_err(|e| r.error(r.line_no(), e.to_string()))?;
                spec_done = true;
            }
            let d = spec.raw_dim;
            let s = spec.num_states;
            let indexed = |r: &LineReader, toks: &[&str], expected_idx: usize, n: usize| -> Result<Vec<f64>> {
                if toks.len() < 2 {
                    return Err(r.error(r.line_no(), "missing index"));
                }
                let idx: usize = r.parse(toks[1], "index")?;
                if idx != expected_idx {
                    return Err(r.error(r.line_no(), format!("expected index {expected_idx}, got {idx}")));
                }
                r.parse_reals(&toks[2..], n)
            };
            match head {
                "spec" => {
                    if spec_done {
                        return Err(r.error(r.line_no(), "spec line after data"));
                    }
                    let kv = toks.get(1).ok_or_else(|| r.error(r.line_no(), "empty spec line"))?;
                    let (k, v) = kv
                        .split_once('=')
                        .ok_or_else(|| r.error(r.line_no(), "expected key=value"))?;
                    spec.set(k, v).map_err(|e| r.error(r.line_no(), e.to_string()))?;
                }
                "mean" => means.push(indexed(&r, &toks, means.len(), d)?),
                "var" => vars.push(indexed(&r, &toks, vars.len(), d)?),
                "trans" => trans.push(indexed(&r, &toks, trans.len(), s)?),
                "prior" => prior = r.parse_reals(&toks[1..], s)?,
                "speaker" => {
                    if toks.len() != 4 {
                        return Err(r.error(r.line_no(), "expected `speaker <id> <split> <noise>`"));
                    }
                    speakers.push(SpeakerProfile {
                        id: toks[1].to_string(),
                        split: toks[2].parse().map_err(|e: Error| r.error(r.line_no(), e.to_string()))?,
                        scale: Vec::new(),
                        offset: Vec::new(),
                        noise: r.parse_real(toks[3])?,
                    });
                }
                "speaker_scale" | "speaker_offset" => {
                    let id = toks.get(1).copied().unwrap_or("");
                    let values = r.parse_reals(&toks[2.min(toks.len())..], d)?;
                    let spk = speakers
                        .iter_mut()
                        .find(|p| p.id == id)
                        .ok_or_else(|| r.error(r.line_no(), format!("unknown speaker `{id}`")))?;
                    if head == "speaker_scale" {
                        spk.scale = values;
                    } else {
                        spk.offset = values;
                    }
                }
                "speaker_mean" | "speaker_var" => {
                    let id = toks.get(1).copied().unwrap_or("").to_string();
                    let values = r.parse_reals(&toks[2.min(toks.len())..], d)?;
                    let entry = stats.entry(id).or_default();
                    if head == "speaker_mean" {
                        entry.0 = values;
                    } else {
                        entry.1 = values;
                    }
                }
                "utt" => {
                    if toks.len() != 5 {
                        return Err(r.error(r.line_no(), "expected `utt <split> <id> <speaker> <frames>`"));
                    }
                    let split: Split = toks[1].parse().map_err(|e: Error| r.error(r.line_no(), e.to_string()))?;
                    listing.push((split, toks[2].to_string(), toks[3].to_string(), r.parse(toks[4], "frame count")?));
                }
                "bayes_frame_acc" | "bayes_viterbi_acc" => {
                    if toks.len() != 3 {
                        return Err(r.error(r.line_no(), "expected `<key> <split> <value>`"));
                    }
                    let split: Split = toks[1].parse().map_err(|e: Error| r.error(r.line_no(), e.to_string()))?;
                    let v = r.parse_real(toks[2])?;
                    if head == "bayes_frame_acc" {
                        frame_acc.insert(split, v);
                    } else {
                        viterbi_acc.insert(split, v);
                    }
                }
                "END" => break,
                other => return Err(r.error(r.line_no(), format!("unknown record `{other}`"))),
            }
        }

        let s = spec.num_states;
        if means.len() != s || vars.len() != s || trans.len() != s || prior.len() != s {
            return Err(r.error(r.line_no(), "emission or transition tables are incomplete"));
        }
        let trans = Matrix::from_rows(&trans)?;
        let transitions = TransitionModel::from_probabilities(&trans, &prior)?;
        let emissions = EmissionModel {
            means: Matrix::from_rows(&means)?,
            variances: Matrix::from_rows(&vars)?,
        };
        if let Some(bad) = speakers.iter().find(|p| p.scale.len() != spec.raw_dim || p.offset.len() != spec.raw_dim) {
            return Err(r.error(r.line_no(), format!("speaker `{}` lacks its transform", bad.id)));
        }
        let speaker_stats = speakers
            .iter()
            .filter_map(|p| {
                stats.get(&p.id).map(|(m, v)| SpeakerStats {
                    speaker: p.id.clone(),
                    mean: m.clone(),
                    variance: v.clone(),
                })
            })
            .collect();

        let mut corpus = Corpus {
            spec,
            emissions,
            transitions,
            speakers,
            train: Vec::new(),
            dev: Vec::new(),
            eval: Vec::new(),
            metadata: CorpusMetadata {
                bayes_frame_accuracy: frame_acc,
                bayes_viterbi_accuracy: viterbi_acc,
                speaker_stats,
            },
        };
        for (split, id, speaker, frames) in listing {
            let sub = dir.join(split.as_str());
            let feat_path = sub.join(format!("{id}.feat"));
            let feat_text = fs::read_to_string(&feat_path).map_err(|e| Error::io(&feat_path, e))?;
            let feats = parse_features(&feat_path.display().to_string(), &feat_text)?;
            if feats.rows() != frames || feats.cols() != corpus.spec.raw_dim {
                return Err(Error::shape(format!("{} does not match corpus.meta", feat_path.display())));
            }
            let ali_path = sub.join(format!("{id}.ali"));
            let alignment = if ali_path.exists() {
                let text = fs::read_to_string(&ali_path).map_err(|e| Error::io(&ali_path, e))?;
                let ali = parse_alignment(&ali_path.display().to_string(), &text)?;
                if ali.len() != frames || ali.0.iter().any(|&x| x >= s) {
                    return Err(Error::shape(format!("{} does not match its features", ali_path.display())));
                }
                Some(ali)
            } else {
                None
            };
            let utt = Utterance {
                id,
                speaker,
                frames: feats,
                alignment,
            };
            match split {
                Split::Train => corpus.train.push(utt),
                Split::Dev => corpus.dev.push(utt),
                Split::Eval => corpus.eval.push(utt),
            }
        }
        Ok(corpus)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> CorpusSpec {
        CorpusSpec {
            num_states: 4,
            raw_dim: 3,
            context: 2,
            train_speakers: 2,
            dev_speakers: 1,
            eval_speakers: 2,
            utterances_per_speaker: 3,
            min_frames: 5,
            max_frames: 9,
            seed: 17,
            ..CorpusSpec::default()
        }
    }

    #[test]
    fn splice_context_zero_is_identity() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(splice(&m, 0), m);
    }

    #[test]
    fn splice_dimensions_and_edges() {
        let m = Matrix::zeros(4, 40);
        assert_eq!(splice(&m, 7).cols(), 600);
        let one = Matrix::from_rows(&[vec![1.5, -2.0]]).unwrap();
        let s = splice(&one, 7);
        assert_eq!(s.shape(), (1, 30));
        for w in 0..15 {
            assert_eq!(&s.row(0)[2 * w..2 * w + 2], &[1.5, -2.0]);
        }
        let m = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let s = splice(&m, 1);
        assert_eq!(s.row(0), &[1.0, 1.0, 2.0]);
        assert_eq!(s.row(1), &[1.0, 2.0, 3.0]);
        assert_eq!(s.row(2), &[2.0, 3.0, 3.0]);
    }

    #[test]
    fn splice_constant_frames_gives_constant_rows() {
        let m = Matrix::from_vec(6, 2, [0.25, -1.0].repeat(6)).unwrap();
        let s = splice(&m, 3);
        for t in 1..6 {
            assert_eq!(s.row(t), s.row(0));
        }
    }

    #[test]
    fn spec_text_round_trip() {
        let spec = small_spec();
        let parsed = CorpusSpec::parse("x", &spec.to_text()).unwrap();
        assert_eq!(parsed, spec);
        let err = CorpusSpec::parse("x", "num_states=4\nbogus=1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(CorpusSpec::parse("x", "num_states=1\n").is_err());
    }

    #[test]
    fn generation_is_deterministic_and_consistent() {
        let a = generate_corpus(&small_spec()).unwrap();
        let b = generate_corpus(&small_spec()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train.len(), 6);
        assert_eq!(a.dev.len(), 3);
        assert_eq!(a.eval.len(), 6);
        for utt in a.train.iter().chain(&a.dev).chain(&a.eval) {
            let n = utt.num_frames();
            assert!((5..=9).contains(&n));
            assert_eq!(utt.alignment.as_ref().unwrap().len(), n);
        }
        let prior_sum: f64 = a.transitions.prior_probabilities().iter().sum();
        assert!((prior_sum - 1.0).abs() < 1e-10);
        for split in Split::ALL {
            let acc = a.metadata.bayes_frame_accuracy[&split];
            assert!((0.0..=100.0).contains(&acc));
        }
    }

    #[test]
    fn zero_shift_makes_speakers_identical() {
        let spec = CorpusSpec {
            shift: 0.0,
            ..small_spec()
        };
        let c = generate_corpus(&spec).unwrap();
        for spk in &c.speakers {
            assert!(spk.scale.iter().all(|&a| a == 1.0));
            assert!(spk.offset.iter().all(|&b| b == 0.0));
            assert_eq!(spk.noise, spec.speaker_noise);
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = generate_corpus(&small_spec()).unwrap();
        c.save(dir.path()).unwrap();
        let loaded = Corpus::load(dir.path()).unwrap();
        assert_eq!(loaded, c);
        assert_eq!(loaded.format_meta(), c.format_meta());
    }

    #[test]
    fn truncated_meta_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let c = generate_corpus(&small_spec()).unwrap();
        c.save(dir.path()).unwrap();
        let meta = c.format_meta();
        let cut: String = meta.lines().take(30).map(|l| format!("{l}\n")).collect();
        fs::write(dir.path().join(META_FILE), cut).unwrap();
        match Corpus::load(dir.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 31),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
