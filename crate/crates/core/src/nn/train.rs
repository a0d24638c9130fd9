//! Stratified k-fold training with best-validation checkpointing and pooled
//! evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::imageproc::ImageU8;
use crate::metrics::ConfusionMatrix;
use crate::sub_seed;

use super::adabound::{AdaBoundConfig, AdaBoundState};
use super::net::{argmax, DilatedResNet, NetConfig, NUM_CLASSES};
use super::split::stratified_kfold;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `[3, S, S]` in [0, 1].
    pub input: Vec<f64>,
    pub label: usize,
}

impl Sample {
    /// Converts an interleaved RGB image into a channel-major input in [0, 1].
    pub fn from_image(img: &ImageU8, label: usize) -> Result<Self> {
        if img.channels != 3 || img.width != img.height {
            return domain("classifier input must be a square RGB image");
        }
        let n = img.width * img.height;
        let mut input = vec![0.0; 3 * n];
        for (i, px) in img.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                input[c * n + i] = px[c] as f64 / 255.0;
            }
        }
        Ok(Self { input, label })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub net: NetConfig,
    pub optimizer: AdaBoundConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub folds: usize,
    pub seed: u64,
    #[serde(skip)]
    pub verbose: bool,
}

impl TrainConfig {
    pub fn new(input_size: usize, seed: u64) -> Self {
        Self {
            net: NetConfig::new(input_size),
            optimizer: AdaBoundConfig::default(),
            epochs: 15,
            batch_size: 8,
            folds: 4,
            seed,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub init_seed: u64,
    pub shuffle_seed: u64,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub curve: Vec<EpochStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub split_seed: u64,
    pub folds: Vec<FoldReport>,
}

/// Mean loss and mean gradient over a batch, summed in sample order.
pub fn batch_gradient(net: &DilatedResNet, batch: &[&Sample]) -> Result<(f64, Vec<Vec<f64>>)> {
    if batch.is_empty() {
        return domain("empty batch");
    }
    let mut grads = net.zero_grads();
    let mut loss = 0.0;
    for s in batch {
        loss += net.backward(&s.input, s.label, &mut grads)?;
    }
    let inv = 1.0 / batch.len() as f64;
    grads.iter_mut().flatten().for_each(|g| *g *= inv);
    Ok((loss * inv, grads))
}

/// Mean cross-entropy and accuracy.
pub fn evaluate(net: &DilatedResNet, samples: &[&Sample]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return domain("empty evaluation set");
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for s in samples {
        let p = net.forward(&s.input)?;
        loss -= p[s.label].max(f64::MIN_POSITIVE).ln();
        correct += usize::from(argmax(&p) == s.label);
    }
    Ok((loss / samples.len() as f64, correct as f64 / samples.len() as f64))
}

/// Trains one model, returning the weights of the epoch with the best
/// validation accuracy (earliest on ties).
pub fn train_fold(
    train: &[&Sample],
    val: &[&Sample],
    cfg: &TrainConfig,
    fold: usize,
) -> Result<(DilatedResNet, FoldReport)> {
    if train.is_empty() || val.is_empty() {
        return domain(format!("fold {fold} has an empty training or validation set"));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return domain("epochs and batch size must be positive");
    }
    let init_seed = sub_seed(cfg.seed, 2 * fold as u64 + 1);
    let shuffle_seed = sub_seed(cfg.seed, 2 * fold as u64 + 2);
    let mut net = DilatedResNet::init(cfg.net.clone(), init_seed)?;
    let sizes: Vec<usize> = net.params.iter().map(|p| p.value.len()).collect();
    let mut opt = AdaBoundState::new(cfg.optimizer, &sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = (net.clone(), 0usize, -1.0f64);
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| train[i]).collect();
            let (loss, grads) = batch_gradient(&net, &batch)?;
            total += loss * batch.len() as f64;
            let mut params: Vec<&mut [f64]> = net.params.iter_mut().map(|p| &mut p.value[..]).collect();
            opt.step(&mut params, &grads)?;
        }
        let (val_loss, val_accuracy) = evaluate(&net, val)?;
        let stats = EpochStats { epoch, train_loss: total / train.len() as f64, val_loss, val_accuracy };
        if cfg.verbose {
            eprintln!(
                "fold {fold} epoch {epoch:>2}: loss {:.4} val_loss {:.4} val_acc {:.3}",
                stats.train_loss, val_loss, val_accuracy
            );
        }
        if val_accuracy > best.2 {
            best = (net.clone(), epoch, val_accuracy);
        }
        curve.push(stats);
    }
    let report = FoldReport {
        fold,
        train_size: train.len(),
        val_size: val.len(),
        init_seed,
        shuffle_seed,
        best_epoch: best.1,
        best_val_accuracy: best.2,
        curve,
    };
    Ok((best.0, report))
}

/// Runs stratified k-fold training over the training pool.
pub fn train_kfold(pool: &[Sample], cfg: &TrainConfig) -> Result<(Vec<DilatedResNet>, TrainReport)> {
    let labels: Vec<usize> = pool.iter().map(|s| s.label).collect();
    let split_seed = sub_seed(cfg.seed, 0);
    let folds = stratified_kfold(&labels, cfg.folds, split_seed)?;
    let mut models = Vec::with_capacity(cfg.folds);
    let mut reports = Vec::with_capacity(cfg.folds);
    for (f, val_idx) in folds.iter().enumerate() {
        let val: Vec<&Sample> = val_idx.iter().map(|&i| &pool[i]).collect();
        let train: Vec<&Sample> = folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, idx)| idx.iter().map(|&i| &pool[i]))
            .collect();
        let (net, rep) = train_fold(&train, &val, cfg, f)?;
        models.push(net);
        reports.push(rep);
    }
    Ok((models, TrainReport { config: cfg.clone(), split_seed, folds: reports }))
}

/// Predictions of every model on every sample, pooled into one matrix.
pub fn pooled_confusion(models: &[DilatedResNet], samples: &[Sample]) -> Result<ConfusionMatrix> {
    let mut m = ConfusionMatrix::default();
    for net in models {
        for s in samples {
            let p = net.predict(&s.input)?;
            if s.label >= NUM_CLASSES {
                return domain(format!("label {} out of range", s.label));
            }
            m.counts[s.label][p] += 1;
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn sample(seed: u64, label: usize, size: usize) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Sample { input: (0..3 * size * size).map(|_| rng.random()).collect(), label }
    }

    #[test]
    fn batch_gradient_is_mean_of_sample_gradients() {
        let net = DilatedResNet::init(NetConfig::new(16), 5).unwrap();
        let s: Vec<Sample> = (0..3).map(|i| sample(i, i as usize, 16)).collect();
        let refs: Vec<&Sample> = s.iter().collect();
        let (_, g) = batch_gradient(&net, &refs).unwrap();
        let mut sum = net.zero_grads();
        for x in &s {
            let mut gi = net.zero_grads();
            net.backward(&x.input, x.label, &mut gi).unwrap();
            for (a, b) in sum.iter_mut().flatten().zip(gi.iter().flatten()) {
                *a += b / 3.0;
            }
        }
        for (a, b) in g.iter().flatten().zip(sum.iter().flatten()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn memorises_two_images() {
        let s = [sample(1, 0, 16), sample(2, 3, 16)];
        let refs: Vec<&Sample> = s.iter().collect();
        let mut net = DilatedResNet::init(NetConfig::new(16), 9).unwrap();
        let sizes: Vec<usize> = net.params.iter().map(|p| p.value.len()).collect();
        let mut opt = AdaBoundState::new(AdaBoundConfig::default(), &sizes);
        let mut loss = f64::INFINITY;
        for _ in 0..200 {
            let (l, g) = batch_gradient(&net, &refs).unwrap();
            loss = l;
            let mut params: Vec<&mut [f64]> = net.params.iter_mut().map(|p| &mut p.value[..]).collect();
            opt.step(&mut params, &g).unwrap();
        }
        let (final_loss, _) = batch_gradient(&net, &refs).unwrap();
        assert!(final_loss < 0.01, "loss {loss} -> {final_loss}");
    }

    #[test]
    fn training_is_deterministic() {
        let pool: Vec<Sample> = (0..16).map(|i| sample(i, (i % 4) as usize, 16)).collect();
        let mut cfg = TrainConfig::new(16, 3);
        cfg.epochs = 2;
        let (m1, r1) = train_kfold(&pool, &cfg).unwrap();
        let (m2, r2) = train_kfold(&pool, &cfg).unwrap();
        assert_eq!(r1, r2);
        for (a, b) in m1.iter().zip(&m2) {
            assert_eq!(a.params, b.params);
        }
        assert_eq!(pooled_confusion(&m1, &pool).unwrap().total(), 64);
    }
}
