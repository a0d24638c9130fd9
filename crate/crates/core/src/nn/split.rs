//! Stratified hold-out and k-fold splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{domain, Result};

use super::net::NUM_CLASSES;

fn shuffled_by_class(labels: &[usize], seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut by_class = vec![Vec::new(); NUM_CLASSES];
    for (i, &l) in labels.iter().enumerate() {
        if l >= NUM_CLASSES {
            return domain(format!("label {l} out of range"));
        }
        by_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for c in by_class.iter_mut() {
        c.shuffle(&mut rng);
    }
    Ok(by_class)
}

/// Picks the same number of evaluation samples from every class
/// (`round(fraction * smallest class)`); the rest form the training pool.
/// Returns `(train, eval)` as sorted indices into `labels`.
pub fn holdout_split(labels: &[usize], eval_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&eval_fraction) {
        return domain(format!("eval fraction {eval_fraction} outside [0, 1)"));
    }
    let by_class = shuffled_by_class(labels, seed)?;
    let smallest = by_class.iter().map(Vec::len).filter(|&n| n > 0).min().unwrap_or(0);
    let per_class = (smallest as f64 * eval_fraction).round() as usize;
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for c in &by_class {
        eval.extend_from_slice(&c[..per_class.min(c.len())]);
        train.extend_from_slice(&c[per_class.min(c.len())..]);
    }
    train.sort_unstable();
    eval.sort_unstable();
    Ok((train, eval))
}

/// Partitions `0..labels.len()` into `k` folds. Each class is shuffled, the
/// classes are concatenated and the result is dealt round-robin, so fold
/// sizes and per-class fold counts differ by at most one.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return domain("k-fold needs k >= 2");
    }
    let by_class = shuffled_by_class(labels, seed)?;
    if let Some((c, v)) = by_class.iter().enumerate().find(|(_, v)| !v.is_empty() && v.len() < k) {
        return domain(format!("class {c} has {} samples, fewer than {k} folds", v.len()));
    }
    let mut folds = vec![Vec::new(); k];
    for (g, i) in by_class.into_iter().flatten().enumerate() {
        folds[g % k].push(i);
    }
    for f in folds.iter_mut() {
        f.sort_unstable();
    }
    Ok(folds)
}
