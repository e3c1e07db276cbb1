use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Config, Model};
use crate::crfdecode::{gold_entities, Counts, DocEntities, DocPrediction, EntityScores, MatchKey, SeqOrder};
use crate::embedding::{CharMask, Document};
use crate::error::Result;
use crate::synthdoc::NUMERIC_CLASSES;

/// Inference output and entity scores for a set of documents.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub predictions: Vec<DocPrediction>,
    /// Exact `(document, class, text)` matching over every class.
    pub scores: EntityScores,
    /// Located matching restricted to the numeric classes that can share a
    /// text (see [`NUMERIC_CLASSES`]).
    pub pair_scores: EntityScores,
}

/// Runs inference on every document (in parallel; results keep document
/// order) and scores the extracted entities.
pub fn evaluate(model: &Model, docs: &[Document]) -> Result<Evaluation> {
    model.check_tags(docs)?;
    let predictions: Vec<DocPrediction> = docs.par_iter().map(|d| model.predict(d)).collect::<Result<_>>()?;
    let mut gold = Vec::with_capacity(docs.len());
    for d in docs {
        let order = SeqOrder::new(d, &CharMask::from_doc(d, model.config.max_len))?;
        gold.push(DocEntities {
            id: d.id.clone(),
            entities: gold_entities(d, &order, &model.tags)?,
        });
    }
    let predicted: Vec<DocEntities> = predictions
        .iter()
        .map(|p| DocEntities {
            id: p.id.clone(),
            entities: p.entities.clone(),
        })
        .collect();
    let classes = model.tags.classes();
    let pair_classes: Vec<String> = classes
        .iter()
        .filter(|c| NUMERIC_CLASSES.contains(&c.as_str()))
        .cloned()
        .collect();
    Ok(Evaluation {
        scores: EntityScores::compute(&predicted, &gold, MatchKey::Text, Some(classes))?,
        pair_scores: EntityScores::compute(&predicted, &gold, MatchKey::Located, Some(&pair_classes))?,
        predictions,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl From<Counts> for ClassMetrics {
    fn from(c: Counts) -> Self {
        Self {
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
            tp: c.tp,
            predicted: c.predicted,
            gold: c.gold,
        }
    }
}

/// Everything needed to read and reproduce one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub split: String,
    pub documents: usize,
    pub micro: ClassMetrics,
    pub per_class: BTreeMap<String, ClassMetrics>,
    /// Located F1 over the numeric classes.
    pub pair_f1: f64,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
    pub val_f1_curve: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub config: Config,
    pub dataset_hash: Option<String>,
}

impl MetricsReport {
    pub fn new(split: &str, docs: usize, eval: &Evaluation, config: &Config) -> Self {
        Self {
            label: config.ablation_label().to_string(),
            split: split.to_string(),
            documents: docs,
            micro: eval.scores.micro.into(),
            per_class: eval
                .scores
                .per_class
                .iter()
                .map(|(k, v)| (k.clone(), (*v).into()))
                .collect(),
            pair_f1: eval.pair_scores.micro.f1(),
            loss_curve: Vec::new(),
            val_f1_curve: Vec::new(),
            epoch_seconds: Vec::new(),
            best_epoch: None,
            config: config.clone(),
            dataset_hash: None,
        }
    }

    /// Per-class and micro scores as an aligned text table.
    pub fn table(&self) -> String {
        let mut s = format!("{} on {} ({} documents)\n", self.label, self.split, self.documents);
        let _ = writeln!(
            s,
            "{:<10} {:>9} {:>9} {:>9} {:>6} {:>6} {:>6}",
            "class", "precision", "recall", "f1", "tp", "pred", "gold"
        );
        let rows = self
            .per_class
            .iter()
            .map(|(k, v)| (k.as_str(), v))
            .chain([("micro", &self.micro)]);
        for (name, m) in rows {
            let _ = writeln!(
                s,
                "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>6} {:>6} {:>6}",
                name, m.precision, m.recall, m.f1, m.tp, m.predicted, m.gold
            );
        }
        s
    }
}
