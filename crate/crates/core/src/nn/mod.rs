//! Polyp-type classifier: network, optimizer, splits, training and weights.

pub mod adabound;
pub mod net;
pub mod split;
pub mod train;
pub mod weights;

pub use adabound::{AdaBoundConfig, AdaBoundState};
pub use net::{DilatedResNet, NetConfig, NUM_CLASSES};
pub use split::{holdout_split, stratified_kfold};
pub use train::{pooled_confusion, train_kfold, Sample, TrainConfig, TrainReport};
pub use weights::{load_weights, save_weights};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub checked: usize,
}

/// Compares every analytic parameter gradient with a central finite
/// difference of step `h`. The relative error of one element is
/// `|a - n| / max(|a|, |n|, floor)`.
pub fn gradient_check(net: &DilatedResNet, input: &[f64], label: usize, h: f64, floor: f64) -> Result<GradCheck> {
    let mut grads = net.zero_grads();
    net.backward(input, label, &mut grads)?;
    let mut probe = net.clone();
    let mut out = GradCheck { max_rel_error: 0.0, worst_param: String::new(), checked: 0 };
    for (pi, g) in grads.iter().enumerate() {
        for (i, &analytic) in g.iter().enumerate() {
            let orig = probe.params[pi].value[i];
            probe.params[pi].value[i] = orig + h;
            let lp = probe.forward_cached(input)?.loss(label);
            probe.params[pi].value[i] = orig - h;
            let lm = probe.forward_cached(input)?.loss(label);
            probe.params[pi].value[i] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
            if rel > out.max_rel_error {
                out.max_rel_error = rel;
                out.worst_param = format!("{}[{i}]", probe.params[pi].name);
            }
            out.checked += 1;
        }
    }
    Ok(out)
}
