//! Per-speaker fine-tuning of a speaker-independent model.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::network::{HighwayNetwork, ParamGroupMask};
use crate::sequence::{state_accuracy, Alignment, TransitionModel};
use crate::training::{ce_loss_and_grad, decode, evaluate, par_map, sgd_step, OptimizerState, SplicedUtterance};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSource {
    /// First-pass decode of the speaker-independent model.
    Pseudo,
    /// Ground-truth alignments.
    Oracle,
}

impl fmt::Display for LabelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelSource::Pseudo => "pseudo",
            LabelSource::Oracle => "oracle",
        })
    }
}

impl FromStr for LabelSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pseudo" => Ok(LabelSource::Pseudo),
            "oracle" => Ok(LabelSource::Oracle),
            other => Err(Error::argument(format!("label source must be pseudo or oracle, got `{other}`"))),
        }
    }
}

/// All utterances of one speaker.
#[derive(Debug, Clone)]
pub struct Speaker {
    pub id: String,
    pub utterances: Vec<SplicedUtterance>,
}

impl Speaker {
    /// Groups utterances by speaker id, keeping first-appearance order.
    pub fn group(utts: &[SplicedUtterance]) -> Vec<Speaker> {
        let mut out: Vec<Speaker> = Vec::new();
        for u in utts {
            match out.iter_mut().find(|s| s.id == u.speaker) {
                Some(s) => s.utterances.push(u.clone()),
                None => out.push(Speaker {
                    id: u.speaker.clone(),
                    utterances: vec![u.clone()],
                }),
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct AdaptConfig {
    /// Per frame: applied to the utterance-summed gradient.
    pub learning_rate: f64,
    pub iterations: usize,
    pub mask: ParamGroupMask,
    pub decode_scale: f64,
    pub threads: usize,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            learning_rate: 2e-4,
            iterations: 5,
            mask: ParamGroupMask::GATES,
            decode_scale: 1.0,
            threads: 1,
        }
    }
}

impl AdaptConfig {
    pub fn to_pairs(&self, source: LabelSource) -> Vec<(String, String)> {
        vec![
            ("labels".into(), source.to_string()),
            ("learning_rate".into(), self.learning_rate.to_string()),
            ("iterations".into(), self.iterations.to_string()),
            ("mask".into(), self.mask.to_string()),
            ("decode_scale".into(), self.decode_scale.to_string()),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptRow {
    pub speaker: String,
    pub iteration: usize,
    pub label_source: LabelSource,
    /// Frame error (%) of the speaker-independent model.
    pub err_si: f64,
    /// Frame error (%) after `iteration` adaptation passes.
    pub err_sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptReport {
    pub config: Vec<(String, String)>,
    /// Frame accuracy (%) of the adaptation targets per speaker.
    pub label_accuracy: Vec<(String, f64)>,
    pub rows: Vec<AdaptRow>,
}

impl AdaptReport {
    /// Mean `(iteration, err_si, err_sd)` over speakers for each iteration.
    pub fn aggregate(&self) -> Vec<(usize, f64, f64)> {
        let max_iter = match self.rows.iter().map(|r| r.iteration).max() {
            Some(m) => m,
            None => return Vec::new(),
        };
        (0..=max_iter)
            .filter_map(|it| {
                let rows: Vec<&AdaptRow> = self.rows.iter().filter(|r| r.iteration == it).collect();
                if rows.is_empty() {
                    return None;
                }
                let n = rows.len() as f64;
                Some((
                    it,
                    rows.iter().map(|r| r.err_si).sum::<f64>() / n,
                    rows.iter().map(|r| r.err_sd).sum::<f64>() / n,
                ))
            })
            .collect()
    }

    /// Rows of one speaker in iteration order.
    pub fn speaker_rows(&self, speaker: &str) -> Vec<&AdaptRow> {
        self.rows.iter().filter(|r| r.speaker == speaker).collect()
    }

    pub fn speakers(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.speaker.as_str()) {
                out.push(&r.speaker);
            }
        }
        out
    }

    /// Mean `err_si − err_sd` at the last iteration.
    pub fn mean_improvement(&self) -> f64 {
        self.aggregate().last().map_or(0.0, |&(_, si, sd)| si - sd)
    }
}

/// First-pass Viterbi labels from the speaker-independent model.
pub fn pseudo_label(
    net: &HighwayNetwork,
    speaker: &Speaker,
    tm: &TransitionModel,
    scale: f64,
) -> Result<Vec<Alignment>> {
    speaker
        .utterances
        .iter()
        .map(|u| decode(net, &u.inputs, tm, scale))
        .collect()
}

fn error_rate(net: &HighwayNetwork, speaker: &Speaker, tm: &TransitionModel, scale: f64) -> Result<f64> {
    Ok(evaluate(net, &speaker.utterances, tm, scale, 1)?.error_rate())
}

/// CE fine-tuning of a copy of `net` on `labels`; returns the adapted
/// model and one row per iteration (iteration 0 is the unadapted model).
pub fn adapt(
    net: &HighwayNetwork,
    speaker: &Speaker,
    labels: &[Alignment],
    tm: &TransitionModel,
    cfg: &AdaptConfig,
    source: LabelSource,
) -> Result<(HighwayNetwork, Vec<AdaptRow>)> {
    if cfg.mask.is_empty() {
        return Err(Error::argument("adaptation mask selects no group"));
    }
    if labels.len() != speaker.utterances.len() {
        return Err(Error::shape(format!(
            "speaker `{}`: {} label sequences for {} utterances",
            speaker.id,
            labels.len(),
            speaker.utterances.len()
        )));
    }
    let targets: Vec<SplicedUtterance> = speaker
        .utterances
        .iter()
        .zip(labels)
        .map(|(u, ali)| {
            if ali.len() != u.num_frames() {
                return Err(Error::shape(format!(
                    "utterance `{}`: {} labels for {} frames",
                    u.id,
                    ali.len(),
                    u.num_frames()
                )));
            }
            Ok(SplicedUtterance {
                alignment: Some(ali.clone()),
                ..u.clone()
            })
        })
        .collect::<Result<_>>()?;

    let err_si = error_rate(net, speaker, tm, cfg.decode_scale)?;
    let row = |iteration, err_sd| AdaptRow {
        speaker: speaker.id.clone(),
        iteration,
        label_source: source,
        err_si,
        err_sd,
    };
    let mut rows = vec![row(0, err_si)];
    let mut adapted = net.clone();
    let mut opt = OptimizerState::new(cfg.learning_rate, 0.0)?;
    for iter in 1..=cfg.iterations {
        for utt in &targets {
            let (_, grads) = ce_loss_and_grad(&adapted, utt)?;
            sgd_step(&mut adapted, &grads, &mut opt, cfg.mask, iter)?;
        }
        if !adapted.params.is_finite() {
            return Err(Error::Numerical(format!(
                "adaptation of `{}` diverged at iteration {iter}",
                speaker.id
            )));
        }
        rows.push(row(iter, error_rate(&adapted, speaker, tm, cfg.decode_scale)?));
    }
    Ok((adapted, rows))
}

/// Adapts every speaker independently from the same SI model.
pub fn adapt_all(
    net: &HighwayNetwork,
    speakers: &[Speaker],
    tm: &TransitionModel,
    cfg: &AdaptConfig,
    source: LabelSource,
) -> Result<AdaptReport> {
    let results = par_map(speakers, cfg.threads, |spk| -> Result<(f64, Vec<AdaptRow>)> {
        let truth: Option<Vec<Alignment>> = spk.utterances.iter().map(|u| u.alignment.clone()).collect();
        let truth = truth.ok_or_else(|| {
            Error::state(format!("speaker `{}` lacks reference alignments", spk.id))
        })?;
        let labels = match source {
            LabelSource::Oracle => truth.clone(),
            LabelSource::Pseudo => pseudo_label(net, spk, tm, cfg.decode_scale)?,
        };
        let mut correct = 0.0;
        let mut frames = 0usize;
        for (l, t) in labels.iter().zip(&truth) {
            correct += state_accuracy(l, t)?;
            frames += t.len();
        }
        let label_acc = if frames == 0 { 0.0 } else { 100.0 * correct / frames as f64 };
        let (_, rows) = adapt(net, spk, &labels, tm, cfg, source)?;
        Ok((label_acc, rows))
    });
    let mut report = AdaptReport {
        config: cfg.to_pairs(source),
        label_accuracy: Vec::new(),
        rows: Vec::new(),
    };
    for (spk, res) in speakers.iter().zip(results) {
        let (acc, rows) = res?;
        report.label_accuracy.push((spk.id.clone(), acc));
        report.rows.extend(rows);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathcore::{Rng, Vector};
    use crate::network::HighwayConfig;

    fn speaker(seed: u64, id: &str, utts: usize) -> Speaker {
        let mut rng = Rng::new(seed);
        Speaker {
            id: id.into(),
            utterances: (0..utts)
                .map(|i| {
                    let states: Vec<usize> = (0..12).map(|_| rng.below(3)).collect();
                    SplicedUtterance {
                        id: format!("{id}_{i}"),
                        speaker: id.into(),
                        inputs: states
                            .iter()
                            .map(|&s| {
                                let mut x: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();
                                x[s] += 1.5;
                                Vector::from(x)
                            })
                            .collect(),
                        alignment: Some(Alignment(states)),
                    }
                })
                .collect(),
        }
    }

    fn net() -> HighwayNetwork {
        HighwayNetwork::init(HighwayConfig::new(3, 4, 2, 3), &mut Rng::new(9)).unwrap()
    }

    #[test]
    fn zero_learning_rate_returns_identical_copy() {
        let si = net();
        let spk = speaker(1, "a", 3);
        let tm = TransitionModel::uniform(3);
        let labels = pseudo_label(&si, &spk, &tm, 1.0).unwrap();
        let cfg = AdaptConfig {
            learning_rate: 0.0,
            ..AdaptConfig::default()
        };
        let (adapted, rows) = adapt(&si, &spk, &labels, &tm, &cfg, LabelSource::Pseudo).unwrap();
        assert_eq!(adapted.params, si.params);
        assert_eq!(rows.len(), 6);
        assert!(rows.iter().all(|r| r.err_sd == r.err_si));
    }

    #[test]
    fn gate_mask_leaves_other_groups_bitwise_equal() {
        let si = net();
        let spk = speaker(1, "a", 3);
        let tm = TransitionModel::uniform(3);
        let labels: Vec<Alignment> = spk.utterances.iter().map(|u| u.alignment.clone().unwrap()).collect();
        let cfg = AdaptConfig {
            learning_rate: 0.05,
            ..AdaptConfig::default()
        };
        let (adapted, _) = adapt(&si, &spk, &labels, &tm, &cfg, LabelSource::Oracle).unwrap();
        assert_eq!(adapted.params.hidden_weights, si.params.hidden_weights);
        assert_eq!(adapted.params.hidden_biases, si.params.hidden_biases);
        assert_eq!(adapted.params.output_weights, si.params.output_weights);
        assert_eq!(adapted.params.output_bias, si.params.output_bias);
        assert_ne!(adapted.params.transform_gate, si.params.transform_gate);
    }

    #[test]
    fn label_length_mismatch_is_shape_error() {
        let si = net();
        let spk = speaker(1, "a", 2);
        let tm = TransitionModel::uniform(3);
        let labels = vec![Alignment(vec![0; 12]), Alignment(vec![0; 5])];
        let err = adapt(&si, &spk, &labels, &tm, &AdaptConfig::default(), LabelSource::Pseudo).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn pseudo_labels_are_deterministic() {
        let si = net();
        let spk = speaker(4, "b", 3);
        let tm = TransitionModel::uniform(3);
        assert_eq!(pseudo_label(&si, &spk, &tm, 1.0).unwrap(), pseudo_label(&si, &spk, &tm, 1.0).unwrap());
    }

    #[test]
    fn speakers_are_isolated_and_iteration_zero_is_si() {
        let si = net();
        let tm = TransitionModel::uniform(3);
        let a = speaker(1, "a", 2);
        let b = speaker(2, "b", 2);
        let cfg = AdaptConfig {
            learning_rate: 0.05,
            iterations: 3,
            ..AdaptConfig::default()
        };
        let both = adapt_all(&si, &[a.clone(), b.clone()], &tm, &cfg, LabelSource::Pseudo).unwrap();
        let only_b = adapt_all(&si, std::slice::from_ref(&b), &tm, &cfg, LabelSource::Pseudo).unwrap();
        assert_eq!(both.speaker_rows("b"), only_b.speaker_rows("b"));
        let threaded = adapt_all(&si, &[a, b.clone()], &tm, &AdaptConfig { threads: 2, ..cfg.clone() }, LabelSource::Pseudo)
            .unwrap();
        assert_eq!(threaded, both);
        let si_err = evaluate(&si, &b.utterances, &tm, 1.0, 1).unwrap().error_rate();
        assert_eq!(only_b.rows[0].err_sd, si_err);
        assert_eq!(only_b.rows[0].err_si, si_err);
    }

    #[test]
    fn zero_speakers_give_empty_report() {
        let report = adapt_all(&net(), &[], &TransitionModel::uniform(3), &AdaptConfig::default(), LabelSource::Oracle)
            .unwrap();
        assert!(report.rows.is_empty());
        assert!(report.aggregate().is_empty());
    }

    #[test]
    fn oracle_needs_alignments() {
        let mut spk = speaker(1, "a", 1);
        spk.utterances[0].alignment = None;
        let err = adapt_all(&net(), &[spk], &TransitionModel::uniform(3), &AdaptConfig::default(), LabelSource::Oracle)
            .unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }
}
