//! Central finite-difference checks of the analytic gradients.

use crate::error::Result;
use crate::mathcore::{Rng, Vector};
use crate::network::{HighwayConfig, HighwayNetwork};
use crate::sequence::{Alignment, TransitionModel};
use crate::training::{ce_loss_and_grad, generate_lattice, smbr_loss_and_grad, SplicedUtterance};

pub const FD_STEP: f64 = 1e-5;

/// `|a − n| / max(|a| + |n|, 1e-4)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-4)
}

fn shifted(net: &HighwayNetwork, index: usize, delta: f64) -> HighwayNetwork {
    let mut out = net.clone();
    let mut offset = 0;
    for block in out.params.blocks_mut() {
        if index < offset + block.values.len() {
            block.values[index - offset] += delta;
            break;
        }
        offset += block.values.len();
    }
    out
}

/// Central differences of `f` for every parameter, in flat block order.
pub fn finite_difference_gradient(net: &HighwayNetwork, f: impl Fn(&HighwayNetwork) -> f64) -> Vec<f64> {
    (0..net.parameter_count(None))
        .map(|i| (f(&shifted(net, i, FD_STEP)) - f(&shifted(net, i, -FD_STEP))) / (2.0 * FD_STEP))
        .collect()
}

/// Largest relative error between `analytic` and central differences of `f`.
pub fn max_relative_error(net: &HighwayNetwork, analytic: &[f64], f: impl Fn(&HighwayNetwork) -> f64) -> f64 {
    finite_difference_gradient(net, f)
        .iter()
        .zip(analytic)
        .map(|(n, a)| relative_error(*a, *n))
        .map(|e| if e.is_nan() { f64::INFINITY } else { e })
        .fold(0.0, f64::max)
}

/// Worst relative errors of one random configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub config: HighwayConfig,
    pub frames: usize,
    pub ce: f64,
    pub smbr: f64,
    /// CE-smoothed sMBR with `p = 0.2`.
    pub composite: f64,
}

impl TrialResult {
    pub fn worst(&self) -> f64 {
        self.ce.max(self.smbr).max(self.composite)
    }
}

/// Checks CE, pure sMBR and smoothed sMBR gradients of a random network
/// with the given hidden size and depth on a random utterance.
pub fn run_trial(seed: u64, hidden_dim: usize, num_layers: usize) -> Result<TrialResult> {
    let mut rng = Rng::new(seed);
    let input_dim = 2 + rng.below(4);
    let states = 2 + rng.below(3);
    let frames = 3 + rng.below(4);
    let mut config = HighwayConfig::new(input_dim, hidden_dim, num_layers, states);
    config.gate_bias = rng.below(2) == 1;
    let net = HighwayNetwork::init(config, &mut rng)?;
    let utt = SplicedUtterance {
        id: "trial".into(),
        speaker: "trial".into(),
        inputs: (0..frames)
            .map(|_| Vector::from((0..input_dim).map(|_| rng.standard_normal()).collect::<Vec<_>>()))
            .collect(),
        alignment: Some(Alignment((0..frames).map(|_| rng.below(states)).collect())),
    };
    let tm = TransitionModel::uniform(states);
    let k = rng.uniform(0.1, 1.0);
    let lat = generate_lattice(&net, &utt, &tm, k, 5, true)?;

    let (_, ce_grads) = ce_loss_and_grad(&net, &utt)?;
    let ce = max_relative_error(&net, &ce_grads.params.to_flat(), |n| {
        ce_loss_and_grad(n, &utt).map_or(f64::NAN, |r| r.0)
    });
    let mut smbr_errors = [0.0; 2];
    for (slot, p) in smbr_errors.iter_mut().zip([0.0, 0.2]) {
        let terms = smbr_loss_and_grad(&net, &utt, &lat, &tm, p, k)?;
        *slot = max_relative_error(&net, &terms.grads.params.to_flat(), |n| {
            smbr_loss_and_grad(n, &utt, &lat, &tm, p, k).map_or(f64::NAN, |t| t.loss)
        });
    }
    Ok(TrialResult {
        config,
        frames,
        ce,
        smbr: smbr_errors[0],
        composite: smbr_errors[1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(1.0, 0.0) - 1.0).abs() < 1e-15);
        assert!(relative_error(1e-9, 0.0) < 1e-4);
    }

    #[test]
    fn random_trials_pass() {
        for seed in 0..4 {
            let r = run_trial(seed, 1 + seed as usize, 1 + seed as usize % 3).unwrap();
            assert!(r.worst() < 1e-4, "{r:?}");
        }
    }
}
