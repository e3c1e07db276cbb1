use std::time::Instant;

use rand::seq::SliceRandom;

use super::{evaluate, Config, Model};
use crate::embedding::Document;
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::synthdoc::{Dataset, Split};
use crate::tensor::{Adam, AdamConfig, Float, Graph};

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub val_f1: Option<f64>,
    pub seconds: f64,
}

/// Result of [`train`]: the best model and the training curves.
#[derive(Clone, Debug)]
pub struct TrainRun {
    pub model: Model,
    pub loss_curve: Vec<f64>,
    pub val_f1_curve: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
    /// Epoch (0-based) whose weights were kept; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
}

/// One Adam step per document, documents shuffled per epoch, learning rate
/// decayed on schedule. Keeps the weights with the best validation F1 (the
/// last epoch's if there is no validation split).
pub fn train(config: &Config, data: &Dataset, mut on_epoch: impl FnMut(&EpochLog)) -> Result<TrainRun> {
    let train_docs = data.split(Split::Train)?;
    let val_docs = data.split(Split::Val)?;
    let mut model = Model::new(config.clone(), data.manifest.vocab(), data.manifest.tags())?;
    model.check_tags(train_docs)?;
    model.check_tags(val_docs)?;
    for d in train_docs {
        d.validate(config.max_len)?;
        if !d.has_tags() {
            return Err(Error::Config(format!("training document {} has no tags", d.id)));
        }
    }

    let mut adam = Adam::new(AdamConfig {
        lr: config.lr as Float,
        ..AdamConfig::default()
    });
    let mut run = TrainRun {
        model: model.clone(),
        loss_curve: Vec::new(),
        val_f1_curve: Vec::new(),
        epoch_seconds: Vec::new(),
        best_epoch: None,
    };
    let mut best_f1 = f64::NEG_INFINITY;
    let mut order: Vec<usize> = (0..train_docs.len()).collect();
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let lr = config.lr_at(epoch);
        adam.set_lr(lr as Float);
        order.shuffle(&mut substream(config.seed, "shuffle", epoch as u64));
        let mut dropout_rng = substream(config.seed, "dropout", epoch as u64);
        let mut total = 0.0;
        for &i in &order {
            total += step(
                &mut model,
                &mut adam,
                &train_docs[i],
                &mut dropout_rng,
                config.grad_clip,
            )?;
        }
        let mean_loss = total / train_docs.len().max(1) as f64;
        let val_f1 = if val_docs.is_empty() {
            None
        } else {
            Some(evaluate(&model, val_docs)?.scores.micro.f1())
        };
        let seconds = start.elapsed().as_secs_f64();
        run.loss_curve.push(mean_loss);
        run.epoch_seconds.push(seconds);
        if let Some(f) = val_f1 {
            run.val_f1_curve.push(f);
        }
        let score = val_f1.unwrap_or(f64::INFINITY);
        if score > best_f1 || val_f1.is_none() {
            best_f1 = score;
            run.model = model.clone();
            run.best_epoch = Some(epoch);
        }
        on_epoch(&EpochLog {
            epoch,
            lr,
            mean_loss,
            val_f1,
            seconds,
        });
        if let (Some(target), Some(f)) = (config.stop_at_val_f1, val_f1) {
            if f >= target {
                break;
            }
        }
    }
    Ok(run)
}

fn step(model: &mut Model, adam: &mut Adam, doc: &Document, rng: &mut crate::rng::Rng, clip: f64) -> Result<f64> {
    let mut g = Graph::new();
    let loss = model.loss(&mut g, doc, Some(rng))?;
    let value = g.value(loss).item() as f64;
    if !value.is_finite() {
        return Err(Error::Input(format!("non-finite loss on document {}", doc.id)));
    }
    let grads = g.backward(loss)?;
    model.store.accumulate(&g, &grads);
    if clip > 0.0 {
        model.store.clip_grad_norm(clip as Float);
    }
    let names: Vec<&str> = g.params().iter().map(|(n, _)| n.as_str()).collect();
    adam.step(&mut model.store, &names)?;
    Ok(value)
}
