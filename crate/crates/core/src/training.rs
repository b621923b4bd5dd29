//! Cross-entropy and sMBR trainers with parameter-group masking.

use std::time::Instant;

use rand::seq::SliceRandom;

use crate::dataio::{splice, Utterance};
use crate::error::{Error, Result};
use crate::mathcore::{log_sum_exp, Matrix, Rng, Vector};
use crate::network::{Gradients, HighwayNetwork};
pub use crate::network::ParamGroupMask;
use crate::sequence::{
    error_signal_from, forward_backward, lattice_from_paths, nbest_paths, state_accuracy, viterbi_scores,
    Alignment, Lattice, TransitionModel, DEFAULT_ACOUSTIC_SCALE,
};

/// Frames processed per work item when gradients are computed in parallel.
/// Fixed so that the summation order never depends on the thread count.
const CHUNK_FRAMES: usize = 64;

/// An utterance with spliced network inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SplicedUtterance {
    pub id: String,
    pub speaker: String,
    pub inputs: Vec<Vector>,
    pub alignment: Option<Alignment>,
}

impl SplicedUtterance {
    pub fn new(utt: &Utterance, context: usize) -> Self {
        let spliced = splice(&utt.frames, context);
        SplicedUtterance {
            id: utt.id.clone(),
            speaker: utt.speaker.clone(),
            inputs: (0..spliced.rows()).map(|t| Vector::from(spliced.row(t).to_vec())).collect(),
            alignment: utt.alignment.clone(),
        }
    }

    pub fn num_frames(&self) -> usize {
        self.inputs.len()
    }

    fn reference(&self) -> Result<&Alignment> {
        let ali = self
            .alignment
            .as_ref()
            .ok_or_else(|| Error::state(format!("utterance `{}` has no alignment", self.id)))?;
        if ali.len() != self.inputs.len() {
            return Err(Error::shape(format!(
                "utterance `{}`: alignment has {} frames, features have {}",
                self.id,
                ali.len(),
                self.inputs.len()
            )));
        }
        Ok(ali)
    }
}

pub fn splice_all(utts: &[Utterance], context: usize) -> Vec<SplicedUtterance> {
    utts.iter().map(|u| SplicedUtterance::new(u, context)).collect()
}

/// Order-preserving map over `items` on up to `threads` scoped workers.
pub(crate) fn par_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = threads.max(1).min(items.len().max(1));
    if threads == 1 {
        return items.iter().map(f).collect();
    }
    let per = items.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(per)
            .map(|chunk| {
                let f = &f;
                scope.spawn(move || chunk.iter().map(f).collect::<Vec<R>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker thread panicked"))
            .collect()
    })
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(logits);
    logits.iter().map(|v| v - z).collect()
}

/// `T × S` log posteriors `ln ŷ_t`.
pub fn log_posteriors(net: &HighwayNetwork, inputs: &[Vector]) -> Result<Matrix> {
    let traces = net.forward_packed(inputs)?;
    let s = net.config().output_dim;
    let mut out = Matrix::zeros(traces.len(), s);
    for (t, tr) in traces.iter().enumerate() {
        out.row_mut(t).copy_from_slice(&log_softmax(&tr.logits));
    }
    Ok(out)
}

/// Scaled-likelihood acoustic scores `ln ŷ − ln prior`.
pub fn acoustic_from_log_posteriors(log_post: &Matrix, tm: &TransitionModel) -> Result<Matrix> {
    if log_post.cols() != tm.num_states() {
        return Err(Error::shape(format!(
            "network has {} outputs, transition model has {} states",
            log_post.cols(),
            tm.num_states()
        )));
    }
    let mut out = log_post.clone();
    let prior = tm.log_prior();
    for t in 0..out.rows() {
        out.row_mut(t).iter_mut().zip(prior).for_each(|(v, p)| *v -= p);
    }
    Ok(out)
}

/// Viterbi decode of one utterance with the hybrid network.
pub fn decode(net: &HighwayNetwork, inputs: &[Vector], tm: &TransitionModel, scale: f64) -> Result<Alignment> {
    let acoustic = acoustic_from_log_posteriors(&log_posteriors(net, inputs)?, tm)?;
    Ok(viterbi_scores(&acoustic, tm, scale))
}

/// Corpus-level evaluation totals.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalStats {
    pub frames: usize,
    pub correct: usize,
    pub ce: f64,
}

impl EvalStats {
    /// Viterbi frame accuracy in percent.
    pub fn accuracy(&self) -> f64 {
        if self.frames == 0 {
            0.0
        } else {
            100.0 * self.correct as f64 / self.frames as f64
        }
    }

    pub fn error_rate(&self) -> f64 {
        100.0 - self.accuracy()
    }

    /// Mean cross entropy per frame.
    pub fn mean_ce(&self) -> f64 {
        if self.frames == 0 {
            0.0
        } else {
            self.ce / self.frames as f64
        }
    }
}

fn eval_one(net: &HighwayNetwork, utt: &SplicedUtterance, tm: &TransitionModel, scale: f64) -> Result<EvalStats> {
    let reference = utt.reference()?;
    let log_post = log_posteriors(net, &utt.inputs)?;
    let ce = -(0..log_post.rows()).map(|t| log_post.get(t, reference.0[t])).sum::<f64>();
    let hyp = viterbi_scores(&acoustic_from_log_posteriors(&log_post, tm)?, tm, scale);
    Ok(EvalStats {
        frames: reference.len(),
        correct: state_accuracy(&hyp, reference)? as usize,
        ce,
    })
}

/// Viterbi frame accuracy and cross entropy of `net` against the reference
/// alignments of `utts`.
pub fn evaluate(
    net: &HighwayNetwork,
    utts: &[SplicedUtterance],
    tm: &TransitionModel,
    scale: f64,
    threads: usize,
) -> Result<EvalStats> {
    let mut total = EvalStats::default();
    for stats in par_map(utts, threads, |u| eval_one(net, u, tm, scale)) {
        let stats = stats?;
        total.frames += stats.frames;
        total.correct += stats.correct;
        total.ce += stats.ce;
    }
    Ok(total)
}

/// Summed frame cross entropy `−Σ_t ln ŷ_t[y_t]` and its gradient.
pub fn ce_loss_and_grad(net: &HighwayNetwork, utt: &SplicedUtterance) -> Result<(f64, Gradients)> {
    let reference = utt.reference()?;
    let traces = net.forward_packed(&utt.inputs)?;
    let mut grads = Gradients::zeros(net.config());
    let mut loss = 0.0;
    for (tr, &target) in traces.iter().zip(&reference.0) {
        if target >= net.config().output_dim {
            return Err(Error::shape(format!("target state {target} outside the output layer")));
        }
        loss -= log_softmax(&tr.logits)[target];
        let mut g = tr.output.to_vec();
        g[target] -= 1.0;
        net.backward_into(tr, &g, &mut grads)?;
    }
    Ok((loss, grads))
}

/// Per-utterance terms of the CE-smoothed sMBR objective.
#[derive(Debug, Clone)]
pub struct SmbrTerms {
    /// `−Ā + p·CE`.
    pub loss: f64,
    pub expected_accuracy: f64,
    pub ce: f64,
    pub grads: Gradients,
}

/// Loss `−Ā + p·CE` on a fixed lattice topology, rescored with the
/// current network, and its gradient.
pub fn smbr_loss_and_grad(
    net: &HighwayNetwork,
    utt: &SplicedUtterance,
    lat: &Lattice,
    tm: &TransitionModel,
    p: f64,
    k: f64,
) -> Result<SmbrTerms> {
    let reference = utt.reference()?;
    if lat.num_frames() != utt.num_frames() {
        return Err(Error::shape(format!(
            "lattice has {} frames, utterance `{}` has {}",
            lat.num_frames(),
            utt.id,
            utt.num_frames()
        )));
    }
    let traces = net.forward_packed(&utt.inputs)?;
    let s = net.config().output_dim;
    let mut log_post = Matrix::zeros(traces.len(), s);
    for (t, tr) in traces.iter().enumerate() {
        log_post.row_mut(t).copy_from_slice(&log_softmax(&tr.logits));
    }
    let lat = lat.rescored(&acoustic_from_log_posteriors(&log_post, tm)?)?;
    let occ = forward_backward(&lat, reference, k)?;
    let signal = error_signal_from(&lat, &occ, k);

    let mut grads = Gradients::zeros(net.config());
    let mut ce = 0.0;
    for (t, tr) in traces.iter().enumerate() {
        let target = reference.0[t];
        ce -= log_post.get(t, target);
        let sig = signal.row(t);
        let total: f64 = sig.iter().sum();
        let g: Vec<f64> = (0..s)
            .map(|j| {
                let y = if j == target { 1.0 } else { 0.0 };
                -(sig[j] - tr.output[j] * total) + p * (tr.output[j] - y)
            })
            .collect();
        net.backward_into(tr, &g, &mut grads)?;
    }
    Ok(SmbrTerms {
        loss: -occ.expected_accuracy + p * ce,
        expected_accuracy: occ.expected_accuracy,
        ce,
        grads,
    })
}

/// SGD with classical momentum.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Momentum is zero while `epoch <= momentum_start_epoch`.
    pub momentum_start_epoch: usize,
    velocity: Option<Gradients>,
}

impl OptimizerState {
    pub fn new(learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::argument(format!("momentum {momentum} outside [0, 1)")));
        }
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::argument(format!("invalid learning rate {learning_rate}")));
        }
        Ok(OptimizerState {
            learning_rate,
            momentum,
            momentum_start_epoch: 1,
            velocity: None,
        })
    }

    pub fn velocity(&self) -> Option<&Gradients> {
        self.velocity.as_ref()
    }
}

/// `v = m·v + g; θ −= lr·v` on the groups selected by `mask`; `epoch` is
/// 1-based. Deselected groups are not touched at all.
pub fn sgd_step(
    net: &mut HighwayNetwork,
    grads: &Gradients,
    opt: &mut OptimizerState,
    mask: ParamGroupMask,
    epoch: usize,
) -> Result<()> {
    if !grads.params.same_shape(&net.params) {
        return Err(Error::shape("gradient shape does not match the network"));
    }
    let m = if epoch > opt.momentum_start_epoch { opt.momentum } else { 0.0 };
    let masked = grads.clone().apply_mask(mask);
    let velocity = match opt.velocity.take() {
        Some(mut v) if v.params.same_shape(&net.params) => {
            v.scale(m);
            v.add_assign(&masked);
            v
        }
        _ => masked,
    };
    let mut step = velocity.clone();
    step.scale(opt.learning_rate);
    net.apply_update(&step.params, mask);
    opt.velocity = Some(velocity);
    Ok(())
}

fn check_mask(mask: ParamGroupMask) -> Result<()> {
    if mask.is_empty() {
        return Err(Error::argument("parameter mask selects no group"));
    }
    Ok(())
}

fn check_finite_net(net: &HighwayNetwork, when: &str) -> Result<()> {
    if !net.params.is_finite() {
        return Err(Error::Numerical(format!("parameters became non-finite {when}")));
    }
    Ok(())
}

/// One row of a training log. Epoch 0 is the state before training.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub objective: f64,
    pub train_acc: f64,
    pub dev_acc: f64,
    pub seconds: f64,
    /// Values for [`TrainRun::extra_columns`].
    pub extra: Vec<f64>,
}

/// Training log: config echo, the pre-training baseline and one record per
/// completed epoch (or sMBR iteration).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub config: Vec<(String, String)>,
    pub extra_columns: Vec<String>,
    pub baseline: EpochRecord,
    pub records: Vec<EpochRecord>,
}

impl TrainRun {
    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.extra_columns.iter().position(|c| c == name)?;
        Some(
            std::iter::once(&self.baseline)
                .chain(&self.records)
                .map(|r| r.extra[idx])
                .collect(),
        )
    }

    /// Held-out accuracy trajectory including the baseline.
    pub fn dev_curve(&self) -> Vec<f64> {
        std::iter::once(&self.baseline).chain(&self.records).map(|r| r.dev_acc).collect()
    }
}

#[derive(Debug, Clone)]
pub struct CeConfig {
    pub epochs: usize,
    /// Applied to the minibatch-mean gradient.
    pub learning_rate: f64,
    pub momentum: f64,
    pub minibatch: usize,
    pub mask: ParamGroupMask,
    pub seed: u64,
    /// Halve the learning rate whenever held-out cross entropy fails to improve.
    pub halve_on_stall: bool,
    pub decode_scale: f64,
    pub threads: usize,
    pub record_time: bool,
}

impl Default for CeConfig {
    fn default() -> Self {
        CeConfig {
            epochs: 10,
            learning_rate: 0.1,
            momentum: 0.9,
            minibatch: 256,
            mask: ParamGroupMask::ALL,
            seed: 1,
            halve_on_stall: true,
            decode_scale: 1.0,
            threads: 1,
            record_time: false,
        }
    }
}

impl CeConfig {
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("objective".into(), "ce".into()),
            ("epochs".into(), self.epochs.to_string()),
            ("learning_rate".into(), self.learning_rate.to_string()),
            ("momentum".into(), self.momentum.to_string()),
            ("minibatch".into(), self.minibatch.to_string()),
            ("mask".into(), self.mask.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("halve_on_stall".into(), self.halve_on_stall.to_string()),
            ("decode_scale".into(), self.decode_scale.to_string()),
        ]
    }
}

fn batch_gradient(
    net: &HighwayNetwork,
    utts: &[SplicedUtterance],
    batch: &[(usize, usize)],
    threads: usize,
) -> Result<Gradients> {
    let chunks: Vec<&[(usize, usize)]> = batch.chunks(CHUNK_FRAMES).collect();
    let partial = par_map(&chunks, threads, |chunk| -> Result<Gradients> {
        let inputs: Vec<Vector> = chunk.iter().map(|&(u, t)| utts[u].inputs[t].clone()).collect();
        let traces = net.forward_packed(&inputs)?;
        let mut grads = Gradients::zeros(net.config());
        for (tr, &(u, t)) in traces.iter().zip(chunk.iter()) {
            let mut g = tr.output.to_vec();
            g[utts[u].reference()?.0[t]] -= 1.0;
            net.backward_into(tr, &g, &mut grads)?;
        }
        Ok(grads)
    });
    let mut total = Gradients::zeros(net.config());
    for g in partial {
        total.add_assign(&g?);
    }
    Ok(total)
}

/// Frame-level cross-entropy training with shuffled minibatches.
pub fn train_ce(
    net: &mut HighwayNetwork,
    train: &[SplicedUtterance],
    dev: &[SplicedUtterance],
    tm: &TransitionModel,
    cfg: &CeConfig,
) -> Result<TrainRun> {
    check_mask(cfg.mask)?;
    if cfg.minibatch == 0 {
        return Err(Error::argument("minibatch size must be positive"));
    }
    let mut frames = Vec::new();
    for (u, utt) in train.iter().enumerate() {
        let reference = utt.reference()?;
        if reference.0.iter().any(|&s| s >= net.config().output_dim) {
            return Err(Error::shape(format!("utterance `{}` uses states beyond the output layer", utt.id)));
        }
        frames.extend((0..utt.num_frames()).map(|t| (u, t)));
    }
    if frames.is_empty() {
        return Err(Error::argument("training set has no frames"));
    }
    let mut opt = OptimizerState::new(cfg.learning_rate, cfg.momentum)?;
    let mut rng = Rng::new(cfg.seed);
    let record = |net: &HighwayNetwork, epoch: usize, lr: f64, seconds: f64| -> Result<EpochRecord> {
        let tr = evaluate(net, train, tm, cfg.decode_scale, cfg.threads)?;
        let dv = evaluate(net, dev, tm, cfg.decode_scale, cfg.threads)?;
        Ok(EpochRecord {
            epoch,
            objective: tr.mean_ce(),
            train_acc: tr.accuracy(),
            dev_acc: dv.accuracy(),
            seconds,
            extra: vec![dv.mean_ce(), lr],
        })
    };
    let baseline = record(net, 0, opt.learning_rate, 0.0)?;
    let mut best_dev_ce = baseline.extra[0];
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        frames.shuffle(&mut rng);
        for batch in frames.chunks(cfg.minibatch) {
            let mut grads = batch_gradient(net, train, batch, cfg.threads)?;
            grads.scale(1.0 / batch.len() as f64);
            sgd_step(net, &grads, &mut opt, cfg.mask, epoch)?;
        }
        check_finite_net(net, &format!("during CE epoch {epoch}"))?;
        let seconds = if cfg.record_time { start.elapsed().as_secs_f64() } else { 0.0 };
        let rec = record(net, epoch, opt.learning_rate, seconds)?;
        if cfg.halve_on_stall && !dev.is_empty() {
            if rec.extra[0] >= best_dev_ce {
                opt.learning_rate *= 0.5;
            }
            best_dev_ce = best_dev_ce.min(rec.extra[0]);
        }
        records.push(rec);
    }
    Ok(TrainRun {
        config: cfg.to_pairs(),
        extra_columns: vec!["dev_ce".into(), "learning_rate".into()],
        baseline,
        records,
    })
}

#[derive(Debug, Clone)]
pub struct SmbrConfig {
    /// CE smoothing weight.
    pub p: f64,
    /// Acoustic scale.
    pub k: f64,
    pub nbest: usize,
    pub iterations: usize,
    /// Per frame: applied to the utterance-summed gradient.
    pub learning_rate: f64,
    pub momentum: f64,
    pub mask: ParamGroupMask,
    pub seed: u64,
    /// Add the reference path to every lattice.
    pub include_reference: bool,
    pub decode_scale: f64,
    pub threads: usize,
    pub record_time: bool,
}

impl Default for SmbrConfig {
    fn default() -> Self {
        SmbrConfig {
            p: 0.2,
            k: DEFAULT_ACOUSTIC_SCALE,
            nbest: 20,
            iterations: 4,
            learning_rate: 1e-5,
            momentum: 0.9,
            mask: ParamGroupMask::ALL,
            seed: 1,
            include_reference: false,
            decode_scale: 1.0,
            threads: 1,
            record_time: false,
        }
    }
}

impl SmbrConfig {
    pub fn validate(&self) -> Result<()> {
        check_mask(self.mask)?;
        if !(self.p >= 0.0 && self.p.is_finite()) {
            return Err(Error::argument(format!("smoothing weight p = {} must be >= 0", self.p)));
        }
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::argument(format!("acoustic scale k = {} must be > 0", self.k)));
        }
        if self.nbest == 0 {
            return Err(Error::argument("nbest must be positive"));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("objective".into(), "smbr".into()),
            ("p".into(), self.p.to_string()),
            ("k".into(), self.k.to_string()),
            ("nbest".into(), self.nbest.to_string()),
            ("iterations".into(), self.iterations.to_string()),
            ("learning_rate".into(), self.learning_rate.to_string()),
            ("momentum".into(), self.momentum.to_string()),
            ("mask".into(), self.mask.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("include_reference".into(), self.include_reference.to_string()),
            ("decode_scale".into(), self.decode_scale.to_string()),
        ]
    }
}

/// Denominator lattice from the `nbest` best paths of `net` (plus the
/// reference when `include_reference` is set).
pub fn generate_lattice(
    net: &HighwayNetwork,
    utt: &SplicedUtterance,
    tm: &TransitionModel,
    k: f64,
    nbest: usize,
    include_reference: bool,
) -> Result<Lattice> {
    let acoustic = acoustic_from_log_posteriors(&log_posteriors(net, &utt.inputs)?, tm)?;
    let mut paths = nbest_paths(&acoustic, tm, k, nbest)?;
    if include_reference {
        paths.push(utt.reference()?.clone());
    }
    lattice_from_paths(&paths, &acoustic, tm)
}

pub fn generate_lattices(
    net: &HighwayNetwork,
    utts: &[SplicedUtterance],
    tm: &TransitionModel,
    cfg: &SmbrConfig,
) -> Result<Vec<Lattice>> {
    par_map(utts, cfg.threads, |u| {
        generate_lattice(net, u, tm, cfg.k, cfg.nbest, cfg.include_reference)
    })
    .into_iter()
    .collect()
}

/// Sequence training with per-utterance updates on lattices generated once
/// from the seed network.
pub fn train_smbr(
    net: &mut HighwayNetwork,
    train: &[SplicedUtterance],
    dev: &[SplicedUtterance],
    tm: &TransitionModel,
    cfg: &SmbrConfig,
) -> Result<TrainRun> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::argument("training set is empty"));
    }
    let lattices = generate_lattices(net, train, tm, cfg)?;
    let mut opt = OptimizerState::new(cfg.learning_rate, cfg.momentum)?;
    let mut rng = Rng::new(cfg.seed);
    let total_frames: usize = train.iter().map(|u| u.num_frames()).sum::<usize>().max(1);
    let items: Vec<(&SplicedUtterance, &Lattice)> = train.iter().zip(&lattices).collect();

    let record = |net: &HighwayNetwork, epoch: usize, seconds: f64| -> Result<EpochRecord> {
        let terms = par_map(&items, cfg.threads, |(u, lat)| {
            smbr_loss_and_grad(net, u, lat, tm, cfg.p, cfg.k).map(|t| (t.expected_accuracy, t.ce))
        });
        let (mut acc, mut ce) = (0.0, 0.0);
        for t in terms {
            let (a, c) = t?;
            acc += a;
            ce += c;
        }
        let n = total_frames as f64;
        let tr = evaluate(net, train, tm, cfg.decode_scale, cfg.threads)?;
        let dv = evaluate(net, dev, tm, cfg.decode_scale, cfg.threads)?;
        Ok(EpochRecord {
            epoch,
            objective: (-acc + cfg.p * ce) / n,
            train_acc: tr.accuracy(),
            dev_acc: dv.accuracy(),
            seconds,
            extra: vec![acc / n, ce / n],
        })
    };

    let baseline = record(net, 0, 0.0)?;
    let mut records = Vec::with_capacity(cfg.iterations);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for iter in 1..=cfg.iterations {
        let start = Instant::now();
        order.shuffle(&mut rng);
        for &u in &order {
            let terms = smbr_loss_and_grad(net, &train[u], &lattices[u], tm, cfg.p, cfg.k)?;
            sgd_step(net, &terms.grads, &mut opt, cfg.mask, iter)?;
        }
        check_finite_net(net, &format!("during sMBR iteration {iter}"))?;
        let seconds = if cfg.record_time { start.elapsed().as_secs_f64() } else { 0.0 };
        records.push(record(net, iter, seconds)?);
    }
    Ok(TrainRun {
        config: cfg.to_pairs(),
        extra_columns: vec!["expected_acc".into(), "ce".into()],
        baseline,
        records,
    })
}
