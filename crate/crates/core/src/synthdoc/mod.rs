//! Deterministic generator of small labelled documents: layout templates
//! filled from a toy corpus, rendered with dot-matrix glyphs, and stored as
//! JSON lines plus PGM images.
//!
//! A dataset directory holds `manifest.json`, `annotations.jsonl` (one
//! document per line, fields `id`, `segments[{text, box, tags}]`, `image`)
//! and `images/NNNNN.pgm`. Documents are split by position: the first
//! `counts.train` lines are training data, then validation, then test.

pub mod font;
mod io;
mod render;
mod template;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use io::{
    dataset_hash, image_name, load_dataset, read_pgm, save_dataset, write_pgm, ANNOTATIONS_FILE, MANIFEST_FILE,
};
pub use render::{render, RenderStyle};
pub use template::{
    builtin_templates, gen_document, inject_ambiguity, is_bio_legal, template, Align, AmbiguityOutcome, Generator,
    Jitter, LayoutTemplate, Slot, NUMERIC_CLASSES,
};

use crate::crfdecode::TagSet;
use crate::embedding::{Document, Vocab};
use crate::error::{Error, IoContext, Result};
use crate::rng::substream;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateShare {
    pub id: String,
    pub weight: f64,
}

/// Generation counters written back into the saved manifest.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthStats {
    pub documents: usize,
    pub per_template: BTreeMap<String, usize>,
    pub ambiguity_injected: usize,
    pub ambiguity_not_drawn: usize,
    pub ambiguity_ineligible: usize,
}

fn default_page() -> [usize; 2] {
    [256, 256]
}

fn default_templates() -> Vec<TemplateShare> {
    ["receipt", "invoice", "ticket", "license"]
        .into_iter()
        .map(|id| TemplateShare {
            id: id.into(),
            weight: 1.0,
        })
        .collect()
}

fn default_classes() -> Vec<String> {
    ["company", "address", "date", "total"]
        .into_iter()
        .map(String::from)
        .collect()
}

fn default_vocabulary() -> String {
    font::CHARSET.to_string()
}

fn default_jitter() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub seed: u64,
    pub counts: SplitCounts,
    /// `[width, height]` in pixels.
    #[serde(default = "default_page")]
    pub page_size: [usize; 2],
    #[serde(default = "default_templates")]
    pub templates: Vec<TemplateShare>,
    /// Entity classes; the tag set is `O` plus `B-`/`I-` for each.
    #[serde(default = "default_classes")]
    pub classes: Vec<String>,
    #[serde(default = "default_vocabulary")]
    pub vocabulary: String,
    #[serde(default)]
    pub ambiguity_rate: f64,
    /// Multiplier on every template's jitter; 0 places text exactly.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    #[serde(default)]
    pub style: RenderStyle,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<SynthStats>,
}

impl Manifest {
    pub fn new(seed: u64, counts: SplitCounts) -> Self {
        Self {
            seed,
            counts,
            page_size: default_page(),
            templates: default_templates(),
            classes: default_classes(),
            vocabulary: default_vocabulary(),
            ambiguity_rate: 0.0,
            jitter: default_jitter(),
            style: RenderStyle::default(),
            stats: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })
    }

    pub fn tags(&self) -> TagSet {
        TagSet::new(self.classes.iter().cloned())
    }

    pub fn vocab(&self) -> Vocab {
        Vocab::new(self.vocabulary.chars())
    }

    fn resolve_templates(&self) -> Result<Vec<(LayoutTemplate, f64)>> {
        if self.templates.is_empty() {
            return Err(Error::Config("manifest lists no templates".into()));
        }
        self.templates
            .iter()
            .map(|s| {
                let t = template(&s.id).ok_or_else(|| Error::Config(format!("unknown template `{}`", s.id)))?;
                if !(s.weight > 0.0 && s.weight.is_finite()) {
                    return Err(Error::Config(format!("template `{}` needs a positive weight", s.id)));
                }
                Ok((t, s.weight))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let [w, h] = self.page_size;
        if w < 64 || h < 64 || w % 4 != 0 || h % 4 != 0 {
            return Err(Error::Config(format!(
                "page size {w}x{h} must be at least 64 and divisible by 4"
            )));
        }
        if !(0.0..=1.0).contains(&self.ambiguity_rate) {
            return Err(Error::Config("ambiguity_rate must lie in [0, 1]".into()));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(Error::Config("jitter must be a non-negative number".into()));
        }
        self.resolve_templates().map(|_| ())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!(
                "unknown split `{s}` (expected train, val or test)"
            ))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub docs: Vec<Document>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Result<&[Document]> {
        let c = self.manifest.counts;
        if c.total() != self.docs.len() {
            return Err(Error::Config(format!(
                "manifest counts {} documents but the dataset holds {}",
                c.total(),
                self.docs.len()
            )));
        }
        Ok(match split {
            Split::Train => &self.docs[..c.train],
            Split::Val => &self.docs[c.train..c.train + c.val],
            Split::Test => &self.docs[c.train + c.val..],
        })
    }

    /// Largest segment count of any document.
    pub fn max_segments(&self) -> usize {
        self.docs.iter().map(Document::n).max().unwrap_or(0)
    }
}

/// Generates the dataset described by `manifest`. Document `i` draws all of
/// its randomness from its own stream, so the result does not depend on
/// thread scheduling.
pub fn generate(manifest: &Manifest) -> Result<Dataset> {
    manifest.validate()?;
    let templates = manifest.resolve_templates()?;
    let total_weight: f64 = templates.iter().map(|t| t.1).sum();
    let tags = manifest.tags();
    let page = (manifest.page_size[0], manifest.page_size[1]);
    let made: Vec<(Document, &'static str, AmbiguityOutcome)> = (0..manifest.counts.total())
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(manifest.seed, "synth", i as u64);
            let mut pick = rng.gen::<f64>() * total_weight;
            let mut chosen = &templates[templates.len() - 1].0;
            for (t, w) in &templates {
                if pick < *w {
                    chosen = t;
                    break;
                }
                pick -= w;
            }
            let doc = gen_document(chosen, &mut rng, page, &tags, manifest.jitter, &format!("{i:05}"))?;
            let (mut doc, outcome) = inject_ambiguity(&doc, &mut rng, manifest.ambiguity_rate);
            doc.image = render(&doc, &manifest.style);
            Ok((doc, chosen.id, outcome))
        })
        .collect::<Result<_>>()?;

    let mut stats = SynthStats {
        documents: made.len(),
        ..SynthStats::default()
    };
    let mut docs = Vec::with_capacity(made.len());
    for (doc, id, outcome) in made {
        *stats.per_template.entry(id.to_string()).or_default() += 1;
        match outcome {
            AmbiguityOutcome::Injected => stats.ambiguity_injected += 1,
            AmbiguityOutcome::NotDrawn => stats.ambiguity_not_drawn += 1,
            AmbiguityOutcome::Ineligible => stats.ambiguity_ineligible += 1,
        }
        docs.push(doc);
    }
    let mut manifest = manifest.clone();
    manifest.stats = Some(stats);
    Ok(Dataset { manifest, docs })
}
