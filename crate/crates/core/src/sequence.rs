//! HMM state space, Viterbi decoding, N-best lattices and the lattice
//! forward-backward that yields the expected state accuracy (sMBR) and its
//! gradient.
//!
//! Paths are state sequences `s_1..s_T`. The score of a path is
//!
//! ```text
//! Σ_t k·ac(t, s_t) + gr(t),   gr(1) = -ln S,  gr(t) = ln P(s_t | s_{t-1})
//! ```
//!
//! where `ac(t, s) = ln p(s | x_t) - ln p(s)` is the scaled likelihood the
//! network provides. Lattices store `ac` unscaled so `k` can change without
//! regenerating them. All probability mass is accumulated in log space.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use crate::error::{Error, Result};
use crate::mathcore::{log_add, Matrix};

/// Default acoustic scale for lattice scoring.
pub const DEFAULT_ACOUSTIC_SCALE: f64 = 0.1;

const ROW_SUM_TOLERANCE: f64 = 1e-10;

/// Floor applied to posteriors before taking logs.
const MIN_POSTERIOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    num_states: usize,
    log_transition: Matrix,
    log_prior: Vec<f64>,
}

impl TransitionModel {
    /// Builds the model from probabilities; every transition row and the
    /// prior must each sum to one.
    pub fn from_probabilities(transition: &Matrix, prior: &[f64]) -> Result<Self> {
        let s = prior.len();
        if transition.shape() != (s, s) || s == 0 {
            return Err(Error::shape(format!(
                "transition matrix {:?} does not match {s} states",
                transition.shape()
            )));
        }
        let check = |row: &[f64], what: &str| -> Result<()> {
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::argument(format!("{what} has entries outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::argument(format!("{what} sums to {sum}, not 1")));
            }
            Ok(())
        };
        for r in 0..s {
            check(transition.row(r), &format!("transition row {r}"))?;
        }
        check(prior, "state prior")?;
        if prior.contains(&0.0) {
            return Err(Error::argument("state prior must be strictly positive"));
        }
        let mut log_transition = Matrix::zeros(s, s);
        for (dst, &p) in log_transition.as_mut_slice().iter_mut().zip(transition.as_slice()) {
            *dst = p.ln();
        }
        Ok(TransitionModel {
            num_states: s,
            log_transition,
            log_prior: prior.iter().map(|p| p.ln()).collect(),
        })
    }

    /// Fully connected model with uniform transitions and prior.
    pub fn uniform(num_states: usize) -> Self {
        let p = 1.0 / num_states as f64;
        let t = Matrix::from_vec(num_states, num_states, vec![p; num_states * num_states])
            .expect("finite");
        let prior = vec![p; num_states];
        // Rounding can push row sums off by an ulp or two; that is within tolerance.
        TransitionModel::from_probabilities(&t, &prior).expect("uniform model is valid")
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    /// `ln P(to | from)`; `-inf` for forbidden transitions.
    #[inline]
    pub fn log_transition(&self, from: usize, to: usize) -> f64 {
        self.log_transition.get(from, to)
    }

    pub fn log_prior(&self) -> &[f64] {
        &self.log_prior
    }

    pub fn transition_probabilities(&self) -> Matrix {
        let mut m = self.log_transition.clone();
        m.as_mut_slice().iter_mut().for_each(|v| *v = v.exp());
        m
    }

    pub fn prior_probabilities(&self) -> Vec<f64> {
        self.log_prior.iter().map(|v| v.exp()).collect()
    }

    /// Graph score of entering `state` at frame `t` from `prev`.
    #[inline]
    pub fn graph_score(&self, prev: Option<usize>, state: usize) -> f64 {
        match prev {
            None => -(self.num_states as f64).ln(),
            Some(p) => self.log_transition(p, state),
        }
    }

    /// `ln p(s | x_t) - ln p(s)` for every frame and state.
    pub fn acoustic_scores(&self, posteriors: &Matrix) -> Result<Matrix> {
        if posteriors.cols() != self.num_states {
            return Err(Error::shape(format!(
                "posteriors have {} states, model has {}",
                posteriors.cols(),
                self.num_states
            )));
        }
        let mut out = Matrix::zeros(posteriors.rows(), self.num_states);
        for t in 0..posteriors.rows() {
            for s in 0..self.num_states {
                let p = posteriors.get(t, s).max(MIN_POSTERIOR);
                out.set(t, s, p.ln() - self.log_prior[s]);
            }
        }
        Ok(out)
    }

    /// Total score of a complete path given unscaled acoustic scores.
    pub fn path_score(&self, acoustic: &Matrix, path: &[usize], k: f64) -> f64 {
        let mut total = 0.0;
        let mut prev = None;
        for (t, &s) in path.iter().enumerate() {
            total += k * acoustic.get(t, s) + self.graph_score(prev, s);
            prev = Some(s);
        }
        total
    }
}

/// Per-frame state sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Alignment(pub Vec<usize>);

impl Alignment {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn states(&self) -> &[usize] {
        &self.0
    }
}

impl From<Vec<usize>> for Alignment {
    fn from(v: Vec<usize>) -> Self {
        Alignment(v)
    }
}

/// Number of frames on which `path` and `reference` agree.
pub fn state_accuracy(path: &Alignment, reference: &Alignment) -> Result<f64> {
    if path.len() != reference.len() {
        return Err(Error::shape(format!(
            "alignment lengths differ: {} vs {}",
            path.len(),
            reference.len()
        )));
    }
    Ok(path.0.iter().zip(&reference.0).filter(|(a, b)| a == b).count() as f64)
}

fn check_scale(k: f64) -> Result<()> {
    if k > 0.0 && k.is_finite() {
        Ok(())
    } else {
        Err(Error::argument(format!("acoustic scale must be positive, got {k}")))
    }
}

/// Best path under `k·(ln posterior − ln prior) + ln transition`.
/// Ties go to the lower state id.
pub fn viterbi(posteriors: &Matrix, tm: &TransitionModel, k: f64) -> Result<Alignment> {
    check_scale(k)?;
    let acoustic = tm.acoustic_scores(posteriors)?;
    Ok(viterbi_scores(&acoustic, tm, k))
}

/// Viterbi over precomputed unscaled acoustic scores.
pub fn viterbi_scores(acoustic: &Matrix, tm: &TransitionModel, k: f64) -> Alignment {
    let frames = acoustic.rows();
    let s = tm.num_states();
    if frames == 0 {
        return Alignment::default();
    }
    let mut score: Vec<f64> = (0..s)
        .map(|j| k * acoustic.get(0, j) + tm.graph_score(None, j))
        .collect();
    let mut back = vec![0usize; frames * s];
    for t in 1..frames {
        let mut next = vec![f64::NEG_INFINITY; s];
        for j in 0..s {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for (i, &si) in score.iter().enumerate() {
                let cand = si + tm.log_transition(i, j);
                if cand > best {
                    best = cand;
                    arg = i;
                }
            }
            next[j] = best + k * acoustic.get(t, j);
            back[t * s + j] = arg;
        }
        score = next;
    }
    let mut state = argmax_low(&score);
    let mut path = vec![0; frames];
    for t in (0..frames).rev() {
        path[t] = state;
        if t > 0 {
            state = back[t * s + state];
        }
    }
    Alignment(path)
}

fn argmax_low(v: &[f64]) -> usize {
    let mut arg = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[arg] {
            arg = i;
        }
    }
    arg
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arc {
    pub frame: usize,
    pub from: usize,
    pub to: usize,
    pub state: usize,
    /// Unscaled acoustic log-score.
    pub log_acoustic: f64,
    pub log_graph: f64,
}

/// Acyclic, frame-synchronous lattice. Node 0 is the start node at time 0;
/// every arc advances exactly one frame and every end node sits at time `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    num_frames: usize,
    num_states: usize,
    node_times: Vec<usize>,
    arcs: Vec<Arc>,
    ends: Vec<usize>,
}

impl Lattice {
    /// Validates and normalises a lattice (arcs sorted by frame).
    pub fn new(num_frames: usize, num_states: usize, mut arcs: Vec<Arc>, mut ends: Vec<usize>) -> Result<Self> {
        if num_frames == 0 || arcs.is_empty() {
            return Err(Error::state("lattice has no frames"));
        }
        arcs.sort_by_key(|a| (a.frame, a.from, a.to, a.state));
        let num_nodes = arcs.iter().map(|a| a.from.max(a.to)).max().unwrap_or(0) + 1;
        let mut node_times: Vec<Option<usize>> = vec![None; num_nodes];
        node_times[0] = Some(0);
        for a in &arcs {
            if a.state >= num_states {
                return Err(Error::argument(format!("arc state {} >= {num_states}", a.state)));
            }
            if a.frame >= num_frames {
                return Err(Error::argument(format!("arc frame {} >= {num_frames}", a.frame)));
            }
            if !a.log_acoustic.is_finite() || !a.log_graph.is_finite() {
                return Err(Error::Numerical("non-finite arc score".into()));
            }
            match node_times[a.from] {
                Some(t) if t == a.frame => {}
                _ => {
                    return Err(Error::state(format!(
                        "arc {}->{} at frame {} leaves a node not at that time",
                        a.from, a.to, a.frame
                    )))
                }
            }
            match node_times[a.to] {
                None => node_times[a.to] = Some(a.frame + 1),
                Some(t) if t == a.frame + 1 => {}
                Some(_) => return Err(Error::state(format!("node {} has inconsistent times", a.to))),
            }
        }
        ends.sort_unstable();
        ends.dedup();
        if ends.is_empty() {
            return Err(Error::state("lattice has no end nodes"));
        }
        for &e in &ends {
            if e >= num_nodes || node_times[e] != Some(num_frames) {
                return Err(Error::state(format!("end node {e} is not at time {num_frames}")));
            }
        }
        let node_times: Vec<usize> = node_times
            .into_iter()
            .enumerate()
            .map(|(n, t)| t.ok_or_else(|| Error::state(format!("node {n} is unreachable"))))
            .collect::<Result<_>>()?;

        // Every arc must lie on some complete path.
        let mut reach_end = vec![false; num_nodes];
        for &e in &ends {
            reach_end[e] = true;
        }
        for a in arcs.iter().rev() {
            if reach_end[a.to] {
                reach_end[a.from] = true;
            }
        }
        if let Some(a) = arcs.iter().find(|a| !reach_end[a.to]) {
            return Err(Error::state(format!("arc {}->{} is a dead end", a.from, a.to)));
        }
        Ok(Lattice {
            num_frames,
            num_states,
            node_times,
            arcs,
            ends,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_nodes(&self) -> usize {
        self.node_times.len()
    }

    pub fn node_time(&self, node: usize) -> usize {
        self.node_times[node]
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn ends(&self) -> &[usize] {
        &self.ends
    }

    /// Copy with `log_acoustic` replaced by `acoustic[frame][state]`.
    pub fn rescored(&self, acoustic: &Matrix) -> Result<Lattice> {
        if acoustic.rows() != self.num_frames || acoustic.cols() != self.num_states {
            return Err(Error::shape(format!(
                "rescoring a {}x{} lattice with {:?} scores",
                self.num_frames,
                self.num_states,
                acoustic.shape()
            )));
        }
        let mut out = self.clone();
        for a in &mut out.arcs {
            a.log_acoustic = acoustic.get(a.frame, a.state);
        }
        Ok(out)
    }

    /// Whether `path` is a complete path through the lattice.
    pub fn contains_path(&self, path: &Alignment) -> bool {
        if path.len() != self.num_frames {
            return false;
        }
        let mut frontier = BTreeSet::from([0usize]);
        for (t, &s) in path.0.iter().enumerate() {
            frontier = self
                .arcs
                .iter()
                .filter(|a| a.frame == t && a.state == s && frontier.contains(&a.from))
                .map(|a| a.to)
                .collect();
            if frontier.is_empty() {
                return false;
            }
        }
        frontier.iter().any(|n| self.ends.binary_search(n).is_ok())
    }

    fn frame_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut ranges = Vec::with_capacity(self.num_frames);
        let mut start = 0;
        for t in 0..self.num_frames {
            let end = start + self.arcs[start..].iter().take_while(|a| a.frame == t).count();
            ranges.push(start..end);
            start = end;
        }
        ranges
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Scored(f64);

impl Eq for Scored {}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Exact N-best search (A* over the state trellis with the backward Viterbi
/// score as heuristic). Returns paths best-first.
pub fn nbest_paths(acoustic: &Matrix, tm: &TransitionModel, k: f64, n: usize) -> Result<Vec<Alignment>> {
    check_scale(k)?;
    if n == 0 {
        return Err(Error::argument("n-best size must be at least 1"));
    }
    let frames = acoustic.rows();
    let s = tm.num_states();
    if acoustic.cols() != s {
        return Err(Error::shape("acoustic scores do not match the state inventory"));
    }
    if frames == 0 {
        return Err(Error::state("cannot build a lattice for zero frames"));
    }

    // suffix[t][j]: best score of frames t+1.. given state j at frame t.
    let mut suffix = vec![vec![0.0; s]; frames];
    for t in (0..frames - 1).rev() {
        for i in 0..s {
            let mut best = f64::NEG_INFINITY;
            for j in 0..s {
                let cand = tm.log_transition(i, j) + k * acoustic.get(t + 1, j) + suffix[t + 1][j];
                if cand > best {
                    best = cand;
                }
            }
            suffix[t][i] = best;
        }
    }

    struct Partial {
        state: usize,
        frame: usize,
        parent: Option<usize>,
        score: f64,
    }
    let mut arena: Vec<Partial> = Vec::new();
    let mut heap: BinaryHeap<(Scored, std::cmp::Reverse<usize>)> = BinaryHeap::new();
    for j in 0..s {
        let score = k * acoustic.get(0, j) + tm.graph_score(None, j);
        if score == f64::NEG_INFINITY {
            continue;
        }
        arena.push(Partial {
            state: j,
            frame: 0,
            parent: None,
            score,
        });
        let id = arena.len() - 1;
        heap.push((Scored(score + suffix[0][j]), std::cmp::Reverse(id)));
    }

    let mut out = Vec::new();
    while let Some((_, std::cmp::Reverse(id))) = heap.pop() {
        let (state, frame, score) = (arena[id].state, arena[id].frame, arena[id].score);
        if frame + 1 == frames {
            let mut path = vec![0; frames];
            let mut cur = Some(id);
            while let Some(c) = cur {
                path[arena[c].frame] = arena[c].state;
                cur = arena[c].parent;
            }
            out.push(Alignment(path));
            if out.len() == n {
                break;
            }
            continue;
        }
        for j in 0..s {
            let tr = tm.log_transition(state, j);
            if tr == f64::NEG_INFINITY {
                continue;
            }
            let next = score + tr + k * acoustic.get(frame + 1, j);
            arena.push(Partial {
                state: j,
                frame: frame + 1,
                parent: Some(id),
                score: next,
            });
            let nid = arena.len() - 1;
            heap.push((Scored(next + suffix[frame + 1][j]), std::cmp::Reverse(nid)));
        }
    }
    Ok(out)
}

/// Lattice holding the `n` best paths plus `extra_path` (the numerator
/// alignment) when given. Paths are merged on `(frame, state)` nodes, so the
/// lattice may also admit recombinations of the listed paths.
pub fn nbest_lattice(
    posteriors: &Matrix,
    tm: &TransitionModel,
    k: f64,
    n: usize,
    extra_path: Option<&Alignment>,
) -> Result<Lattice> {
    let acoustic = tm.acoustic_scores(posteriors)?;
    let mut paths = nbest_paths(&acoustic, tm, k, n)?;
    if let Some(extra) = extra_path {
        if extra.len() != acoustic.rows() {
            return Err(Error::shape(format!(
                "extra path has {} frames, posteriors have {}",
                extra.len(),
                acoustic.rows()
            )));
        }
        paths.push(extra.clone());
    }
    lattice_from_paths(&paths, &acoustic, tm)
}

/// Merges complete paths into a trellis-shaped lattice scored with
/// `acoustic` and the transition model.
pub fn lattice_from_paths(paths: &[Alignment], acoustic: &Matrix, tm: &TransitionModel) -> Result<Lattice> {
    let frames = acoustic.rows();
    let s = tm.num_states();
    // (frame, prev_state or None, state)
    let mut edges: BTreeSet<(usize, Option<usize>, usize)> = BTreeSet::new();
    for p in paths {
        if p.len() != frames {
            return Err(Error::shape("path length does not match frame count"));
        }
        let mut prev = None;
        for (t, &st) in p.0.iter().enumerate() {
            if st >= s {
                return Err(Error::argument(format!("state {st} outside inventory of {s}")));
            }
            if tm.graph_score(prev, st) == f64::NEG_INFINITY {
                return Err(Error::argument(format!("path uses a forbidden transition at frame {t}")));
            }
            edges.insert((t, prev, st));
            prev = Some(st);
        }
    }
    // Node ids: 0 = start, then (frame, state) in sorted order.
    let mut node_ids: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for &(t, _, st) in &edges {
        node_ids.entry((t, st)).or_insert(0);
    }
    for (i, id) in node_ids.values_mut().enumerate() {
        *id = i + 1;
    }
    let arcs = edges
        .iter()
        .map(|&(t, prev, st)| Arc {
            frame: t,
            from: prev.map_or(0, |p| node_ids[&(t - 1, p)]),
            to: node_ids[&(t, st)],
            state: st,
            log_acoustic: acoustic.get(t, st),
            log_graph: tm.graph_score(prev, st),
        })
        .collect();
    let ends = node_ids
        .iter()
        .filter(|((t, _), _)| *t + 1 == frames)
        .map(|(_, &id)| id)
        .collect();
    Lattice::new(frames, s, arcs, ends)
}

/// Forward-backward statistics over a lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct Occupancies {
    /// γ(a): posterior probability of each arc (same order as `Lattice::arcs`).
    pub arc_posterior: Vec<f64>,
    /// Ā(a): expected accuracy of the paths through each arc.
    pub arc_accuracy: Vec<f64>,
    /// Ā: expected accuracy over the whole lattice.
    pub expected_accuracy: f64,
    /// Log of the total path mass.
    pub log_total: f64,
}

fn check_reference(lat: &Lattice, reference: &Alignment) -> Result<()> {
    if reference.len() != lat.num_frames {
        return Err(Error::shape(format!(
            "reference has {} frames, lattice has {}",
            reference.len(),
            lat.num_frames
        )));
    }
    Ok(())
}

/// Log-space forward-backward with accuracy propagation.
pub fn forward_backward(lat: &Lattice, reference: &Alignment, k: f64) -> Result<Occupancies> {
    check_scale(k)?;
    check_reference(lat, reference)?;
    let nodes = lat.num_nodes();
    let arcs = &lat.arcs;
    let score: Vec<f64> = arcs.iter().map(|a| k * a.log_acoustic + a.log_graph).collect();
    let acc: Vec<f64> = arcs
        .iter()
        .map(|a| if reference.0[a.frame] == a.state { 1.0 } else { 0.0 })
        .collect();
    let ranges = lat.frame_ranges();

    let mut alpha = vec![f64::NEG_INFINITY; nodes];
    let mut alpha_acc = vec![0.0; nodes];
    alpha[0] = 0.0;
    for range in &ranges {
        for i in range.clone() {
            let a = &arcs[i];
            alpha[a.to] = log_add(alpha[a.to], alpha[a.from] + score[i]);
        }
        for i in range.clone() {
            let a = &arcs[i];
            let w = (alpha[a.from] + score[i] - alpha[a.to]).exp();
            alpha_acc[a.to] += w * (alpha_acc[a.from] + acc[i]);
        }
    }

    let mut beta = vec![f64::NEG_INFINITY; nodes];
    let mut beta_acc = vec![0.0; nodes];
    for &e in &lat.ends {
        beta[e] = 0.0;
    }
    for range in ranges.iter().rev() {
        for i in range.clone() {
            let a = &arcs[i];
            beta[a.from] = log_add(beta[a.from], score[i] + beta[a.to]);
        }
        for i in range.clone() {
            let a = &arcs[i];
            let w = (score[i] + beta[a.to] - beta[a.from]).exp();
            beta_acc[a.from] += w * (beta_acc[a.to] + acc[i]);
        }
    }

    let log_total = lat.ends.iter().fold(f64::NEG_INFINITY, |t, &e| log_add(t, alpha[e]));
    if !log_total.is_finite() {
        return Err(Error::Numerical("lattice total score is not finite".into()));
    }
    let expected_accuracy = lat
        .ends
        .iter()
        .map(|&e| (alpha[e] - log_total).exp() * alpha_acc[e])
        .sum();
    let arc_posterior = arcs
        .iter()
        .enumerate()
        .map(|(i, a)| (alpha[a.from] + score[i] + beta[a.to] - log_total).exp())
        .collect();
    let arc_accuracy = arcs
        .iter()
        .enumerate()
        .map(|(i, a)| alpha_acc[a.from] + acc[i] + beta_acc[a.to])
        .collect();
    Ok(Occupancies {
        arc_posterior,
        arc_accuracy,
        expected_accuracy,
        log_total,
    })
}

/// Expected state accuracy Ā of the lattice against `reference`.
pub fn smbr_value(lat: &Lattice, reference: &Alignment, k: f64) -> Result<f64> {
    Ok(forward_backward(lat, reference, k)?.expected_accuracy)
}

/// `∂Ā / ∂ac(t, s) = k·γ_t(s)·(Ā_t(s) − Ā)` as a `T × S` matrix, where
/// `ac` is the unscaled acoustic log-score of state `s` at frame `t`.
pub fn smbr_error_signal(lat: &Lattice, reference: &Alignment, k: f64) -> Result<Matrix> {
    let occ = forward_backward(lat, reference, k)?;
    Ok(error_signal_from(lat, &occ, k))
}

pub(crate) fn error_signal_from(lat: &Lattice, occ: &Occupancies, k: f64) -> Matrix {
    let mut signal = Matrix::zeros(lat.num_frames, lat.num_states);
    for (i, a) in lat.arcs.iter().enumerate() {
        let d = k * occ.arc_posterior[i] * (occ.arc_accuracy[i] - occ.expected_accuracy);
        signal.set(a.frame, a.state, signal.get(a.frame, a.state) + d);
    }
    signal
}

/// Per-frame state occupancy γ_t(s) implied by arc posteriors.
pub fn state_occupancy(lat: &Lattice, occ: &Occupancies) -> Matrix {
    let mut out = Matrix::zeros(lat.num_frames, lat.num_states);
    for (i, a) in lat.arcs.iter().enumerate() {
        out.set(a.frame, a.state, out.get(a.frame, a.state) + occ.arc_posterior[i]);
    }
    out
}
