use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{kl_loss, Architecture, CardiacCycle, VaeModel};
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamConfig, AdamState, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Weight of the KL term in `recon + beta_kl * kl`.
    pub beta_kl: f64,
    pub seed: u64,
    /// Share of the dataset held out for per-epoch evaluation.
    pub eval_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 50, batch_size: 64, lr: 1e-3, beta_kl: 1e-4, seed: 0, eval_fraction: 0.2 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size < 2 {
            return Err(Error::Parameter(format!(
                "epochs ({}) must be >= 1 and batch size ({}) >= 2",
                self.epochs, self.batch_size
            )));
        }
        if !(self.beta_kl >= 0.0 && self.beta_kl.is_finite()) {
            return Err(Error::Parameter(format!("beta_kl must be >= 0, got {}", self.beta_kl)));
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return Err(Error::Parameter(format!("eval_fraction must be in (0, 1), got {}", self.eval_fraction)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Parameter(format!("learning rate must be > 0, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Losses recorded at the end of one epoch. Train figures are batch means in
/// train mode; eval figures decode the posterior mean in eval mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_recon: f64,
    pub train_kl: f64,
    pub eval_recon: f64,
    pub eval_kl: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: VaeModel<f32>,
    pub history: Vec<EpochStats>,
    pub train_indices: Vec<usize>,
    pub eval_indices: Vec<usize>,
    /// Eval-split MSE of always predicting the training-split mean cycle.
    pub baseline_eval_mse: Option<f64>,
}

fn batch_tensor<T: Scalar>(cycles: &[CardiacCycle], idx: &[usize]) -> Result<Tensor<T>> {
    let len = cycles[idx[0]].len();
    let data = idx
        .iter()
        .flat_map(|&i| cycles[i].samples.iter().map(|&v| T::from_f64(v as f64)))
        .collect();
    Tensor::new(&[idx.len(), len], data)
}

/// Splits shuffled indices into batches; a trailing batch of one is merged
/// into its predecessor since batch-norm needs two samples.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < 2) {
        out.pop();
        let n = out.len();
        let start = (n - 1) * size;
        out[n - 1] = &order[start..];
    }
    out
}

/// Mean reconstruction error (decoding `mu`) and mean KL over `idx`, eval mode.
pub fn evaluate(model: &VaeModel<f32>, cycles: &[CardiacCycle], idx: &[usize]) -> Result<(f64, f64)> {
    if idx.is_empty() {
        return Ok((0.0, 0.0));
    }
    let (mut recon, mut kl) = (0.0, 0.0);
    for chunk in idx.chunks(256) {
        let x: Tensor<f32> = batch_tensor(cycles, chunk)?;
        let (mu, logvar) = model.encode_batch(&x)?;
        let xhat = model.decode_batch(&mu)?;
        let d = model.latent_dim();
        for (m, lv) in mu.to_f64_vec().chunks(d).zip(logvar.to_f64_vec().chunks(d)) {
            kl += kl_loss(m, lv);
        }
        let n = model.input_len();
        for (a, b) in x.data().chunks(n).zip(xhat.data().chunks(n)) {
            recon += a.iter().zip(b).map(|(&p, &q)| (p as f64 - q as f64).powi(2)).sum::<f64>() / n as f64;
        }
    }
    Ok((recon / idx.len() as f64, kl / idx.len() as f64))
}

/// Trains the default architecture. See [`train_with`].
pub fn train(dataset: &[CardiacCycle], config: &TrainConfig) -> Result<TrainReport> {
    train_with(dataset, config, Architecture::default())
}

/// Minimises `recon + beta_kl * kl` with Adam.
///
/// A single ChaCha stream seeded from `config.seed` drives, in order: the
/// parameter-initialisation seed, the train/eval split, and per epoch the
/// shuffle followed by the reparameterisation noise of each batch. Identical
/// inputs therefore give bit-identical models and histories.
pub fn train_with(dataset: &[CardiacCycle], config: &TrainConfig, arch: Architecture) -> Result<TrainReport> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for c in dataset {
        c.validate(arch.input_len)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = VaeModel::<f32>::new(arch, rng.next_u64())?;

    let mut all: Vec<usize> = (0..dataset.len()).collect();
    all.shuffle(&mut rng);
    let n_eval = ((dataset.len() as f64 * config.eval_fraction).round() as usize).min(dataset.len() - 1);
    let mut eval_indices = all[..n_eval].to_vec();
    let mut train_indices = all[n_eval..].to_vec();
    eval_indices.sort_unstable();
    train_indices.sort_unstable();
    if train_indices.len() < 2 {
        return Err(Error::Parameter(format!(
            "need at least 2 training cycles, have {}",
            train_indices.len()
        )));
    }

    let mut adam = AdamState::new(AdamConfig { lr: config.lr, ..AdamConfig::default() })?;
    let d = model.latent_dim();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut order = train_indices.clone();
        order.shuffle(&mut rng);
        let (mut recon, mut kl) = (0.0, 0.0);
        for (b, idx) in batches(&order, config.batch_size).into_iter().enumerate() {
            let x: Tensor<f32> = batch_tensor(dataset, idx)?;
            let noise: Vec<f32> =
                (0..idx.len() * d).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect();
            let noise = Tensor::new(&[idx.len(), d], noise)?;
            model.zero_grad();
            let parts = model.loss_and_backward(&x, &noise, config.beta_kl).map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!("{what} at epoch {epoch}, batch {b}")),
                other => other,
            })?;
            adam_step(&mut model.params_mut(), &mut adam).map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!("{what} at epoch {epoch}, batch {b}")),
                other => other,
            })?;
            recon += parts.recon * idx.len() as f64;
            kl += parts.kl * idx.len() as f64;
        }
        let n = train_indices.len() as f64;
        let (eval_recon, eval_kl) = evaluate(&model, dataset, &eval_indices)?;
        let stats = EpochStats { epoch, train_recon: recon / n, train_kl: kl / n, eval_recon, eval_kl };
        info!(
            "epoch {epoch}: train recon {:.6} kl {:.4} | eval recon {:.6} kl {:.4}",
            stats.train_recon, stats.train_kl, stats.eval_recon, stats.eval_kl
        );
        history.push(stats);
    }
    model.train_config = Some(config.clone());
    let baseline_eval_mse = if eval_indices.is_empty() {
        None
    } else {
        let pick = |idx: &[usize]| idx.iter().map(|&i| &dataset[i]).collect::<Vec<_>>();
        Some(mean_cycle_mse(&pick(&train_indices), &pick(&eval_indices))?)
    };
    Ok(TrainReport { model, history, train_indices, eval_indices, baseline_eval_mse })
}

/// Sample-wise mean of a set of cycles.
pub fn mean_cycle(cycles: &[&CardiacCycle]) -> Result<Vec<f64>> {
    let first = cycles.first().ok_or(Error::EmptyDataset)?;
    let mut acc = vec![0.0; first.len()];
    for c in cycles {
        if c.len() != acc.len() {
            return Err(Error::dim("mean_cycle: mixed cycle lengths"));
        }
        for (a, &v) in acc.iter_mut().zip(&c.samples) {
            *a += v as f64;
        }
    }
    acc.iter_mut().for_each(|a| *a /= cycles.len() as f64);
    Ok(acc)
}

/// MSE on `eval` of the constant predictor that always outputs the mean of `train`.
pub fn mean_cycle_mse(train: &[&CardiacCycle], eval: &[&CardiacCycle]) -> Result<f64> {
    let mean = mean_cycle(train)?;
    if eval.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let total: f64 = eval
        .iter()
        .map(|c| c.samples.iter().zip(&mean).map(|(&v, m)| (v as f64 - m).powi(2)).sum::<f64>() / mean.len() as f64)
        .sum();
    Ok(total / eval.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> Vec<CardiacCycle> {
        (0..n)
            .map(|k| {
                CardiacCycle::new(
                    (0..400)
                        .map(|i| {
                            let t = (i as f32 - 200.0) / 10.0;
                            (1.0 + 0.1 * k as f32) * (-t * t).exp()
                        })
                        .collect(),
                )
            })
            .collect()
    }

    #[test]
    fn one_epoch_on_ten_cycles() {
        let data = toy(10);
        let cfg = TrainConfig { epochs: 1, batch_size: 4, seed: 5, ..TrainConfig::default() };
        let report = train(&data, &cfg).unwrap();
        assert_eq!(report.history.len(), 1);
        assert_eq!(report.eval_indices.len(), 2);
        let init = VaeModel::<f32>::new(Architecture::default(), report.model.init_seed).unwrap();
        let changed = init
            .state()
            .iter()
            .zip(report.model.state())
            .any(|((_, a), (_, b))| a.data() != b.data());
        assert!(changed);
    }

    #[test]
    fn same_seed_same_loss_bits() {
        let data = toy(12);
        let cfg = TrainConfig { epochs: 2, batch_size: 5, seed: 9, ..TrainConfig::default() };
        let a = train(&data, &cfg).unwrap();
        let b = train(&data, &cfg).unwrap();
        let bits = |r: &TrainReport| {
            r.history
                .iter()
                .flat_map(|s| [s.train_recon, s.train_kl, s.eval_recon, s.eval_kl])
                .map(f64::to_bits)
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(matches!(train(&[], &TrainConfig::default()), Err(Error::EmptyDataset)));
    }

    #[test]
    fn bad_config_rejected() {
        let data = toy(4);
        let cfg = TrainConfig { eval_fraction: 1.0, ..TrainConfig::default() };
        assert!(matches!(train(&data, &cfg), Err(Error::Parameter(_))));
        let cfg = TrainConfig { beta_kl: -1.0, ..TrainConfig::default() };
        assert!(matches!(train(&data, &cfg), Err(Error::Parameter(_))));
    }

    #[test]
    fn trailing_singleton_batch_is_merged() {
        let order: Vec<usize> = (0..9).collect();
        let b = batches(&order, 4);
        assert_eq!(b.iter().map(|x| x.len()).collect::<Vec<_>>(), vec![4, 5]);
        let b = batches(&order[..6], 4);
        assert_eq!(b.iter().map(|x| x.len()).collect::<Vec<_>>(), vec![4, 2]);
    }

    #[test]
    fn mean_cycle_baseline() {
        let a = CardiacCycle::new(vec![1.0; 4]);
        let b = CardiacCycle::new(vec![3.0; 4]);
        assert_eq!(mean_cycle(&[&a, &b]).unwrap(), vec![2.0; 4]);
        assert_eq!(mean_cycle_mse(&[&a, &b], &[&a]).unwrap(), 1.0);
    }
}
