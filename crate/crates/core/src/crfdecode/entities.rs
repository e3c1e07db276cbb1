use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::embedding::{Document, Quad};
use crate::error::{Error, Result};

use super::{SeqOrder, TagSet, OUTSIDE};

/// Plurality class of a segment's character tags, with `B-`/`I-` stripped.
/// Ties go to a real class over `O`, then to the lexicographically smaller
/// class name.
pub fn majority_vote(tags: &[usize], tagset: &TagSet) -> String {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for &t in tags {
        *counts.entry(tagset.class_of(t).unwrap_or(OUTSIDE)).or_default() += 1;
    }
    let mut best: Option<(&str, usize)> = None;
    for (&class, &n) in &counts {
        let better = match best {
            None => true,
            Some((b, bn)) => n > bn || (n == bn && b == OUTSIDE && class != OUTSIDE),
        };
        if better {
            best = Some((class, n));
        }
    }
    best.map_or(OUTSIDE, |b| b.0).to_string()
}

/// One extracted field. `segments` lists the source segments in reading
/// order and is not part of the prediction JSON.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Entity {
    pub class: String,
    pub text: String,
    #[serde(skip)]
    pub segments: Vec<usize>,
}

/// Groups segment labels into one entity per class: the texts of all
/// segments of that class in reading order, joined by single spaces.
pub fn extract_entities(doc: &Document, order: &SeqOrder, labels: &[String]) -> Vec<Entity> {
    let mut by_class: BTreeMap<&str, Entity> = BTreeMap::new();
    for span in &order.spans {
        let label = labels[span.segment].as_str();
        if label == OUTSIDE {
            continue;
        }
        let e = by_class.entry(label).or_insert_with(|| Entity {
            class: label.to_string(),
            text: String::new(),
            segments: Vec::new(),
        });
        if !e.text.is_empty() {
            e.text.push(' ');
        }
        e.text.push_str(&doc.segments[span.segment].text);
        e.segments.push(span.segment);
    }
    by_class.into_values().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentPrediction {
    pub text: String,
    #[serde(rename = "box")]
    pub quad: Quad,
    pub tags: Vec<String>,
    pub label: String,
}

/// Prediction output for one document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocPrediction {
    pub id: String,
    pub segments: Vec<SegmentPrediction>,
    pub entities: Vec<Entity>,
}

impl DocPrediction {
    /// Builds the per-segment view from a decoded tag path over `order`.
    pub fn new(doc: &Document, order: &SeqOrder, path: &[usize], tags: &TagSet) -> Self {
        let per_segment = order.split(path);
        let labels: Vec<String> = per_segment.iter().map(|p| majority_vote(p, tags)).collect();
        let segments = doc
            .segments
            .iter()
            .zip(&per_segment)
            .zip(&labels)
            .map(|((s, p), label)| SegmentPrediction {
                text: s.text.clone(),
                quad: s.quad,
                tags: tags.decode(p),
                label: label.clone(),
            })
            .collect();
        Self {
            id: doc.id.clone(),
            segments,
            entities: extract_entities(doc, order, &labels),
        }
    }
}

/// Gold entities, derived by the same majority vote as predictions.
pub fn gold_entities(doc: &Document, order: &SeqOrder, tags: &TagSet) -> Result<Vec<Entity>> {
    let path = order.gold(doc, tags)?;
    Ok(DocPrediction::new(doc, order, &path, tags).entities)
}

/// True positives and totals for entity matching.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.predicted)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.gold)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.predicted += other.predicted;
        self.gold += other.gold;
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// What makes two entities the same.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatchKey {
    /// `(document, class, text)`.
    Text,
    /// `(document, class, text, source segments)`: also tells apart two
    /// segments that share a text.
    Located,
}

/// Entities of one document, paired by id with their counterpart.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DocEntities {
    pub id: String,
    pub entities: Vec<Entity>,
}

/// Micro and per-class entity counts.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EntityScores {
    pub micro: Counts,
    pub per_class: BTreeMap<String, Counts>,
}

impl EntityScores {
    /// Matches predicted against gold entities. Only classes in `classes`
    /// are counted when it is given.
    pub fn compute(
        predicted: &[DocEntities],
        gold: &[DocEntities],
        key: MatchKey,
        classes: Option<&[String]>,
    ) -> Result<Self> {
        let keep = |e: &Entity| classes.is_none_or(|c| c.contains(&e.class));
        let pred_by_id: HashMap<&str, &DocEntities> = predicted.iter().map(|d| (d.id.as_str(), d)).collect();
        if pred_by_id.len() != predicted.len() {
            return Err(Error::Input("duplicate document id among predictions".into()));
        }
        let mut scores = EntityScores::default();
        for c in classes.into_iter().flatten() {
            scores.per_class.entry(c.clone()).or_default();
        }
        let mut bump = |class: String, f: &dyn Fn(&mut Counts)| {
            f(scores.per_class.entry(class).or_default());
            f(&mut scores.micro);
        };
        let mut seen = 0;
        for g in gold {
            let empty = DocEntities::default();
            let p = match pred_by_id.get(g.id.as_str()) {
                Some(p) => {
                    seen += 1;
                    *p
                }
                None => &empty,
            };
            let mut pool: HashMap<Key, usize> = HashMap::new();
            for e in p.entities.iter().filter(|e| keep(e)) {
                let (class, k) = match_key(e, key);
                *pool.entry(k).or_default() += 1;
                bump(class, &|c| c.predicted += 1);
            }
            for e in g.entities.iter().filter(|e| keep(e)) {
                let (class, k) = match_key(e, key);
                let hit = match pool.get_mut(&k) {
                    Some(n) if *n > 0 => {
                        *n -= 1;
                        true
                    }
                    _ => false,
                };
                bump(class, &|c| {
                    c.gold += 1;
                    if hit {
                        c.tp += 1;
                    }
                });
            }
        }
        if seen != predicted.len() {
            return Err(Error::Input(
                "prediction for a document with no gold counterpart".into(),
            ));
        }
        Ok(scores)
    }
}

type Key<'a> = (&'a str, &'a str, Option<&'a [usize]>);

fn match_key(e: &Entity, key: MatchKey) -> (String, Key<'_>) {
    let loc = (key == MatchKey::Located).then_some(e.segments.as_slice());
    (e.class.clone(), (e.class.as_str(), e.text.as_str(), loc))
}

/// Micro `(precision, recall, F1)` over exact `(document, class, text)`
/// matches.
pub fn entity_f1(predicted: &[DocEntities], gold: &[DocEntities]) -> Result<(f64, f64, f64)> {
    let m = EntityScores::compute(predicted, gold, MatchKey::Text, None)?.micro;
    Ok((m.precision(), m.recall(), m.f1()))
}
