use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::metrics::{evaluate, MetricsReport};
use crate::error::{invalid, Error, Result};
use crate::manifest::Manifest;
use crate::numcore::{Adam, GradMap};
use crate::posenc::EncodingKind;
use crate::posrec::{ModelConfig, PosRecModel};
use crate::sessgraph::Session;

/// Samples per gradient chunk. Chunks are summed in a fixed order, so the
/// result is the same for any thread count.
pub const GRAD_CHUNK: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Architecture; `num_items` is taken from the data at training time.
    pub model: ModelConfig,
    pub lr: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub l2: f64,
    /// Share of the (time-ordered) training pairs held out for model
    /// selection; 0 disables selection and keeps the final epoch.
    pub val_fraction: f64,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::new(0, 100, EncodingKind::Ldpe),
            lr: 1e-3,
            lr_decay: 0.1,
            decay_every: 3,
            batch_size: 100,
            epochs: 4,
            l2: 1e-5,
            val_fraction: 0.1,
            threads: 1,
        }
    }
}

impl TrainConfig {
    /// Learning rate used during 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let steps = (epoch.max(1) - 1) / self.decay_every.max(1);
        self.lr * self.lr_decay.powi(steps as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid!("learning rate must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.decay_every == 0 {
            return Err(invalid!("batch_size, epochs and decay_every must be positive"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(invalid!("val_fraction must lie in [0, 1), got {}", self.val_fraction));
        }
        if self.l2 < 0.0 || self.threads == 0 {
            return Err(invalid!("l2 must be non-negative and threads positive"));
        }
        Ok(())
    }

    pub fn write_manifest(&self, m: &mut Manifest) {
        self.model.write_manifest(m);
        m.set("lr", self.lr)
            .set("lr_decay", self.lr_decay)
            .set("decay_every", self.decay_every)
            .set("batch_size", self.batch_size)
            .set("epochs", self.epochs)
            .set("l2", self.l2)
            .set("val_fraction", self.val_fraction)
            .set("threads", self.threads);
    }

    pub fn manifest(&self) -> Manifest {
        let mut m = Manifest::new();
        self.write_manifest(&mut m);
        m
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub lr: f64,
    /// Mean per-pair loss over the epoch.
    pub loss: f64,
    pub validation: Option<MetricsReport>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation M@10 (or the last
    /// epoch without validation).
    pub model: PosRecModel,
    pub best_epoch: usize,
    pub epochs: Vec<EpochReport>,
}

/// Runs `f` on a rayon pool of `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| invalid!("cannot start {threads} worker threads: {e}"))?;
    Ok(pool.install(f))
}

/// Validation hold-out: the latest `fraction` of pairs by the time of their
/// last click (pairs without timestamps keep input order).
pub fn holdout(pairs: &[Session], fraction: f64) -> (Vec<Session>, Vec<Session>) {
    let mut ordered = pairs.to_vec();
    ordered.sort_by(|a, b| {
        let ta = a.last_timestamp().unwrap_or(f64::NEG_INFINITY);
        let tb = b.last_timestamp().unwrap_or(f64::NEG_INFINITY);
        ta.total_cmp(&tb)
    });
    let n_val = (fraction * ordered.len() as f64).floor() as usize;
    let val = ordered.split_off(ordered.len() - n_val);
    (ordered, val)
}

/// Loss and gradients of `batch`, computed in fixed-size chunks that run in
/// parallel and are summed in order.
pub fn batch_gradients(model: &PosRecModel, batch: &[Session]) -> Result<(f64, GradMap)> {
    let parts: Vec<(f64, GradMap)> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| model.gradients(chunk))
        .collect::<Result<_>>()?;
    let mut it = parts.into_iter();
    let (mut loss, mut grads) = it.next().ok_or_else(|| invalid!("empty batch"))?;
    for (l, g) in it {
        loss += l;
        grads.accumulate(&g);
    }
    Ok((loss, grads))
}

/// Summed loss of `pairs` under `model`.
pub fn dataset_loss(model: &PosRecModel, pairs: &[Session]) -> Result<f64> {
    let parts: Vec<f64> = pairs
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut tape = crate::numcore::Tape::new();
            let p = model.params().bind(&mut tape);
            let l = model.loss_on_tape(&mut tape, &p, chunk)?;
            Ok(tape.value(l).item())
        })
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().sum())
}

fn dump_batch(batch: &[Session]) -> String {
    batch
        .iter()
        .take(20)
        .map(|s| format!("{}: {:?} -> {:?}", s.id, s.items, s.label))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Mini-batch Adam over `pairs` with a seeded per-epoch shuffle and a
/// step-decayed learning rate.
pub fn train(pairs: &[Session], num_items: usize, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::Data("no training pairs".into()));
    }
    let mut model_cfg = config.model.clone();
    model_cfg.num_items = num_items;
    let mut model = PosRecModel::new(model_cfg)?;
    with_threads(config.threads, || train_loop(&mut model, pairs, config))?.map(|(best_epoch, epochs, best)| {
        TrainOutcome {
            model: best.unwrap_or(model),
            best_epoch,
            epochs,
        }
    })
}

type LoopResult = (usize, Vec<EpochReport>, Option<PosRecModel>);

fn train_loop(model: &mut PosRecModel, pairs: &[Session], config: &TrainConfig) -> Result<LoopResult> {
    let (train, val) = holdout(pairs, config.val_fraction);
    if train.is_empty() {
        return Err(Error::Data("validation hold-out leaves no training pairs".into()));
    }
    let mut opt = Adam::new(config.lr, config.l2);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, PosRecModel)> = None;

    for epoch in 1..=config.epochs {
        opt.lr = config.lr_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(config.model.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<Session> = idx.iter().map(|&i| train[i].clone()).collect();
            let (loss, grads) = batch_gradients(model, &batch)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss {loss} in epoch {epoch}; batch:\n{}",
                    dump_batch(&batch)
                )));
            }
            total += loss;
            opt.step(model.params_mut(), &grads)?;
        }
        let validation = if val.is_empty() {
            None
        } else {
            Some(evaluate(model, &val, &[5, 10])?)
        };
        let mean = total / train.len() as f64;
        log::info!(
            "epoch {epoch}: lr={} loss={mean:.5}{}",
            opt.lr,
            validation
                .as_ref()
                .map(|v| format!(" val {}", v.summary()))
                .unwrap_or_default()
        );
        if let Some(v) = &validation {
            let score = v.mrr_at(10).unwrap();
            if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
                best = Some((score, epoch, model.clone()));
            }
        }
        epochs.push(EpochReport {
            epoch,
            lr: opt.lr,
            loss: mean,
            validation,
        });
    }
    Ok(match best {
        Some((_, e, m)) => (e, epochs, Some(m)),
        None => (config.epochs, epochs, None),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::{last_item_pairs, synth_generate};

    fn small_config() -> TrainConfig {
        let mut c = TrainConfig {
            model: ModelConfig::new(0, 8, EncodingKind::Ldpe),
            ..TrainConfig::default()
        };
        c.model.max_len = 20;
        c.batch_size = 10;
        c.lr = 0.01;
        c.epochs = 1;
        c
    }

    #[test]
    fn schedule() {
        let c = TrainConfig::default();
        let lrs: Vec<f64> = (1..=4).map(|e| c.lr_at(e)).collect();
        for (got, want) in lrs.iter().zip([1e-3, 1e-3, 1e-3, 1e-4]) {
            assert!((got - want).abs() < 1e-15, "{lrs:?}");
        }
        assert!((c.lr_at(7) - 1e-5).abs() < 1e-15);
    }

    #[test]
    fn one_epoch_reduces_loss() {
        let ds = synth_generate(20, 100, (2, 5), 1).unwrap();
        let pairs = last_item_pairs(&ds);
        let mut c = small_config();
        c.val_fraction = 0.0;
        let mut init_cfg = c.model.clone();
        init_cfg.num_items = 20;
        let init = PosRecModel::new(init_cfg).unwrap();
        let out = train(&pairs, 20, &c).unwrap();
        assert!(dataset_loss(&out.model, &pairs).unwrap() < dataset_loss(&init, &pairs).unwrap());
    }

    #[test]
    fn deterministic_across_threads() {
        let ds = synth_generate(15, 60, (2, 6), 4).unwrap();
        let pairs = last_item_pairs(&ds);
        let mut c = small_config();
        c.epochs = 2;
        let a = train(&pairs, 15, &c).unwrap();
        let b = train(&pairs, 15, &c).unwrap();
        assert_eq!(a.model.params(), b.model.params());
        c.threads = 3;
        let t = train(&pairs, 15, &c).unwrap();
        assert_eq!(a.model.params(), t.model.params());
        assert_eq!(a.epochs, t.epochs);
    }

    #[test]
    fn holdout_takes_latest() {
        let ds = synth_generate(15, 20, (2, 3), 2).unwrap();
        let mut pairs = last_item_pairs(&ds);
        pairs.reverse();
        let (tr, val) = holdout(&pairs, 0.1);
        assert_eq!(tr.len(), 18);
        assert_eq!(val.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(), vec!["18", "19"]);
    }

    #[test]
    fn rejects_bad_config() {
        let mut c = small_config();
        c.batch_size = 0;
        assert!(train(&[Session::with_label(vec![1], 2).unwrap()], 5, &c).is_err());
        assert!(train(&[], 5, &small_config()).is_err());
    }
}
