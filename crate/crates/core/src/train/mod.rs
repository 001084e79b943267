//! Optimization loop: Huber loss, Adam, step decay, best-epoch selection
//! over several seeds, evaluation and checkpoints.

mod adam;
mod checkpoint;

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Dgann, Dropout, ModelConfig};
use crate::preprocess::{make_batches, Batch, BatchOptions, Dataset, DatasetSplit, TargetTransform};
use crate::tensor::{huber_scalar, Tape};

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub decay_every: usize,
    pub decay: f64,
    pub batch_size: usize,
    /// On transformed targets.
    pub huber_delta: f64,
    pub seeds: Vec<u64>,
    pub augment: bool,
    pub standardize: bool,
    /// Stop a seed after this many epochs without a better validation MAE.
    pub patience: Option<usize>,
    /// Linear ramp of the learning rate over the first epochs.
    pub warmup_epochs: usize,
    pub dropout: f64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 600,
            lr0: 1e-5,
            decay_every: 150,
            decay: 0.5,
            batch_size: 64,
            huber_delta: 1.0,
            seeds: vec![0, 1, 2, 3, 4],
            augment: true,
            standardize: true,
            patience: None,
            warmup_epochs: 0,
            dropout: 0.0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("train config", msg));
        if self.epochs == 0 || self.batch_size == 0 || self.decay_every == 0 {
            return bad("epochs, batch_size and decay_every must be positive".into());
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad(format!("decay must lie in (0, 1], got {}", self.decay));
        }
        if !(self.huber_delta > 0.0) {
            return bad(format!("huber_delta must be positive, got {}", self.huber_delta));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.patience == Some(0) {
            return bad("patience must be positive when set".into());
        }
        Ok(())
    }
}

/// `lr0 · decay^⌊e / decay_every⌋`, times the warm-up ramp if any.
pub fn lr_at_epoch(e: usize, cfg: &TrainConfig) -> f64 {
    let lr = cfg.lr0 * cfg.decay.powi((e / cfg.decay_every) as i32);
    if e < cfg.warmup_epochs {
        lr * (e + 1) as f64 / cfg.warmup_epochs as f64
    } else {
        lr
    }
}

/// Mean Huber loss.
pub fn huber_loss(pred: &[f64], target: &[f64], delta: f64) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::invalid(
            "huber_loss",
            format!("{} predictions for {} targets", pred.len(), target.len()),
        ));
    }
    if !(delta > 0.0) {
        return Err(Error::invalid("huber_loss", format!("delta must be positive, got {}", delta)));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| huber_scalar(p - t, delta)).sum::<f64>() / pred.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_mae: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SizeBucket {
    pub n_atoms: usize,
    pub count: usize,
    pub mae: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// Original units, in the order of the evaluated indices.
    pub predictions: Vec<f64>,
    pub targets: Vec<f64>,
    pub mae: f64,
    pub per_size: Vec<SizeBucket>,
}

/// Model predictions in original target units.
pub fn predict_dataset(
    model: &Dgann,
    transform: &TargetTransform,
    dataset: &Dataset,
    idx: &[usize],
    batch_size: usize,
) -> Result<Vec<f64>> {
    let zeros = vec![0.0; dataset.len()];
    let opts = BatchOptions {
        batch_size,
        shuffle: false,
        augment: false,
        seed: 0,
        epoch: 0,
    };
    let mut out = Vec::with_capacity(idx.len());
    for batch in make_batches(dataset, idx, &zeros, opts)? {
        let batch = batch?;
        let raw = model.predict_batch(&batch.graph)?;
        out.extend(transform.inverse(&dataset.counts(&batch.indices), &raw)?);
    }
    Ok(out)
}

/// MAE in original units plus a per-atom-count breakdown.
pub fn evaluate(
    model: &Dgann,
    transform: &TargetTransform,
    dataset: &Dataset,
    idx: &[usize],
    batch_size: usize,
) -> Result<Evaluation> {
    if idx.is_empty() {
        return Err(Error::Data("nothing to evaluate: the molecule list is empty".into()));
    }
    if dataset.target != transform.target {
        return Err(Error::Data(format!(
            "checkpoint predicts '{}' but the data was prepared for '{}'",
            transform.target, dataset.target
        )));
    }
    let predictions = predict_dataset(model, transform, dataset, idx, batch_size)?;
    let targets = dataset.targets(idx);
    let mut buckets: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    let mut total = 0.0;
    for ((p, t), &i) in predictions.iter().zip(&targets).zip(idx) {
        let err = (p - t).abs();
        total += err;
        let b = buckets.entry(dataset.samples[i].molecule.atoms.len()).or_insert((0, 0.0));
        b.0 += 1;
        b.1 += err;
    }
    Ok(Evaluation {
        mae: total / idx.len() as f64,
        per_size: buckets
            .into_iter()
            .map(|(n_atoms, (count, sum))| SizeBucket {
                n_atoms,
                count,
                mae: sum / count as f64,
            })
            .collect(),
        predictions,
        targets,
    })
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub loss: f64,
    pub predictions: Vec<f64>,
}

/// Model and optimizer state for one seed.
pub struct Trainer {
    pub model: Dgann,
    pub adam: AdamState,
    pub config: TrainConfig,
    pub seed: u64,
    dropout: Option<Dropout>,
}

impl Trainer {
    pub fn new(model_config: ModelConfig, config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let model = Dgann::new(model_config, &mut ChaCha8Rng::seed_from_u64(seed))?;
        let adam = AdamState::new(config.adam, &model.params.iter().map(|p| &p.value).collect::<Vec<_>>());
        let dropout = (config.dropout > 0.0).then(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(u64::MAX);
            Dropout {
                rate: config.dropout,
                rng,
            }
        });
        Ok(Trainer {
            model,
            adam,
            config,
            seed,
            dropout,
        })
    }

    /// One optimizer step; returns the batch loss and predictions (in
    /// transformed units) from before the update.
    pub fn step(&mut self, batch: &Batch, lr: f64) -> Result<StepOutput> {
        let mut tape = Tape::new();
        let pv = self.model.register(&mut tape, true);
        let out = self.model.forward_train(&mut tape, pv, &batch.graph, &mut self.dropout)?;
        let pred = tape.huber(out.prediction, &batch.targets, self.config.huber_delta)?;
        let loss = tape.value(pred).item();
        let predictions = tape.value(out.prediction).data().to_vec();
        if !loss.is_finite() {
            return Ok(StepOutput { loss, predictions });
        }
        let mut grads = tape.backward(pred)?;
        let g: Vec<_> = out
            .params
            .iter()
            .map(|&v| grads.take(v).unwrap_or_else(|| crate::tensor::Tensor::zeros(tape.shape(v).to_vec())))
            .collect();
        drop(tape);
        let mut params: Vec<_> = self.model.params.iter_mut().map(|p| &mut p.value).collect();
        self.adam.update(&mut params, &g.iter().collect::<Vec<_>>(), lr)?;
        Ok(StepOutput { loss, predictions })
    }

    /// One pass over `idx`; returns the molecule-weighted mean loss.
    pub fn train_epoch(&mut self, dataset: &Dataset, targets: &[f64], idx: &[usize], epoch: usize) -> Result<f64> {
        let lr = lr_at_epoch(epoch, &self.config);
        let opts = BatchOptions {
            batch_size: self.config.batch_size,
            shuffle: true,
            augment: self.config.augment,
            seed: self.seed,
            epoch,
        };
        let (mut sum, mut n) = (0.0, 0usize);
        for (b, batch) in make_batches(dataset, idx, targets, opts)?.enumerate() {
            let batch = batch?;
            let loss = self.step(&batch, lr)?.loss;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            sum += loss * batch.targets.len() as f64;
            n += batch.targets.len();
        }
        Ok(sum / n.max(1) as f64)
    }
}

#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best epoch of the best seed.
    pub checkpoint: Checkpoint,
    pub runs: Vec<SeedRun>,
    pub selected: usize,
    /// Selected checkpoint on the test split, if it is non-empty.
    pub test: Option<Evaluation>,
}

/// Trains one model per seed and keeps the checkpoint with the lowest
/// validation MAE in original units.
pub fn train(
    model_config: ModelConfig,
    config: &TrainConfig,
    dataset: &Dataset,
    split: &DatasetSplit,
    transform: &TargetTransform,
) -> Result<TrainOutcome> {
    config.validate()?;
    if split.train.is_empty() || split.val.is_empty() {
        return Err(Error::Data("training and validation splits must be non-empty".into()));
    }
    let targets = transform.transform(&dataset.counts(&dataset.all()), &dataset.targets(&dataset.all()))?;
    let mut runs = Vec::new();
    let mut best: Option<(f64, Checkpoint)> = None;
    for &seed in &config.seeds {
        let mut trainer = Trainer::new(model_config, config.clone(), seed)?;
        let mut run = SeedRun {
            seed,
            metrics: Vec::new(),
            best_epoch: 0,
            best_val_mae: f64::INFINITY,
        };
        let mut seed_best = None;
        for epoch in 0..config.epochs {
            let train_loss = trainer.train_epoch(dataset, &targets, &split.train, epoch)?;
            let val = evaluate(&trainer.model, transform, dataset, &split.val, config.batch_size)?;
            run.metrics.push(EpochMetrics {
                epoch,
                lr: lr_at_epoch(epoch, config),
                train_loss,
                val_mae: val.mae,
            });
            log::info!(
                "seed {} epoch {} lr {:.3e} loss {:.6} val MAE {:.6} {}",
                seed,
                epoch,
                lr_at_epoch(epoch, config),
                train_loss,
                val.mae,
                transform.target.unit()
            );
            if val.mae < run.best_val_mae {
                run.best_val_mae = val.mae;
                run.best_epoch = epoch;
                seed_best = Some(Checkpoint::new(
                    &trainer.model,
                    transform.clone(),
                    seed,
                    epoch as u64,
                    val.mae,
                ));
            } else if config.patience.is_some_and(|p| epoch - run.best_epoch >= p) {
                log::info!("seed {}: no improvement for {} epochs, stopping", seed, epoch - run.best_epoch);
                break;
            }
        }
        let seed_best = seed_best.ok_or_else(|| Error::Data(format!("seed {}: validation MAE was never finite", seed)))?;
        if best.as_ref().is_none_or(|(mae, _)| run.best_val_mae < *mae) {
            best = Some((run.best_val_mae, seed_best));
        }
        runs.push(run);
    }
    let (_, checkpoint) = best.expect("at least one seed");
    let selected = runs.iter().position(|r| r.seed == checkpoint.seed).expect("selected seed ran");
    let test = if split.test.is_empty() {
        None
    } else {
        Some(evaluate(&checkpoint.model()?, transform, dataset, &split.test, config.batch_size)?)
    };
    Ok(TrainOutcome {
        checkpoint,
        runs,
        selected,
        test,
    })
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(format!("csv: {}", e))
}

pub fn write_metrics_csv(path: &Path, rows: &[EpochMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["epoch", "lr", "train_loss", "val_mae"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            r.lr.to_string(),
            r.train_loss.to_string(),
            r.val_mae.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_size_csv(path: &Path, rows: &[SizeBucket]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["n_atoms", "count", "mae"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([r.n_atoms.to_string(), r.count.to_string(), r.mae.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
