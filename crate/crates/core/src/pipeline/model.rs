use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Config;
use crate::crfdecode::{
    self, bilstm_project, init_bilstm, init_transitions, order_document, strict_mask, viterbi, DocPrediction, SeqOrder,
    TagSet,
};
use crate::embedding::{self, Document, Vocab};
use crate::error::{Error, IoContext, Result};
use crate::graphrev::{self, GraphOutput};
use crate::rng::Rng;
use crate::tensor::{load_checkpoint, save_checkpoint, Graph, ParamStore, Tensor, Var};

/// Parameters plus everything needed to interpret them.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: Config,
    pub vocab: Vocab,
    pub tags: TagSet,
    pub store: ParamStore,
}

/// Tape handles of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub order: SeqOrder,
    pub emissions: Var,
    pub transitions: Var,
    pub graph: Option<GraphOutput>,
}

/// JSON written next to a checkpoint.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    config: Config,
    vocabulary: String,
    classes: TagSet,
}

pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}

impl Model {
    /// Freshly initialized model. Every parameter draws from its own named
    /// stream, so models that differ only in ablation flags share weights.
    pub fn new(config: Config, vocab: Vocab, tags: TagSet) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let c = &config;
        embedding::init(&mut store, c, vocab.len())?;
        graphrev::init(&mut store, c.seed, c.d, c.d_n)?;
        init_bilstm(&mut store, c.seed, c.d, c.d_lstm, tags.len())?;
        init_transitions(&mut store, c.seed, tags.len())?;
        Ok(Self {
            config,
            vocab,
            tags,
            store,
        })
    }

    pub fn forward(&self, g: &mut Graph, doc: &Document, rng: Option<&mut Rng>) -> Result<Forward> {
        let c = &self.config;
        doc.validate(c.max_len)?;
        let emb = embedding::embed(g, &self.store, c, doc, &self.vocab, rng)?;
        let (e_final, graph) = if c.no_graph {
            let zero = g.constant(Tensor::zeros(&[emb.mask.n, c.d]));
            (graphrev::broadcast_to_chars(g, zero, emb.e, &emb.mask)?, None)
        } else {
            let out = graphrev::forward(g, &self.store, emb.e, &emb.mask, c.k)?;
            (out.e_final, Some(out))
        };
        let order = SeqOrder::new(doc, &emb.mask)?;
        let de = order_document(g, e_final, &order)?;
        let emissions = bilstm_project(g, &self.store, de)?;
        let mut transitions = g.param(&self.store, "crf.transitions")?;
        if c.strict_transitions {
            let m = g.constant(strict_mask(&self.tags));
            transitions = g.add(transitions, m)?;
        }
        Ok(Forward {
            order,
            emissions,
            transitions,
            graph,
        })
    }

    /// CRF negative log-likelihood of the document's gold tags.
    pub fn loss(&self, g: &mut Graph, doc: &Document, rng: Option<&mut Rng>) -> Result<Var> {
        let f = self.forward(g, doc, rng)?;
        let gold = f.order.gold(doc, &self.tags)?;
        Ok(crfdecode::crf_loss(g, f.emissions, f.transitions, &gold)?)
    }

    pub fn predict(&self, doc: &Document) -> Result<DocPrediction> {
        let mut g = Graph::new();
        let f = self.forward(&mut g, doc, None)?;
        let path = viterbi(g.value(f.emissions), g.value(f.transitions))?;
        Ok(DocPrediction::new(doc, &f.order, &path, &self.tags))
    }

    /// Writes the checkpoint and its JSON sidecar (same stem, `.json`).
    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(&self.store, path)?;
        let sidecar = Sidecar {
            config: self.config.clone(),
            vocabulary: self.vocab.as_string(),
            classes: self.tags.clone(),
        };
        let side = sidecar_path(path);
        fs::write(&side, serde_json::to_string_pretty(&sidecar)? + "\n").at(&side)
    }

    /// Loads a checkpoint and checks it against the architecture its sidecar
    /// describes.
    pub fn load(path: &Path) -> Result<Self> {
        let side = sidecar_path(path);
        let text = fs::read_to_string(&side).at(&side)?;
        let s: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", side.display())))?;
        let mut model = Self::new(s.config, Vocab::new(s.vocabulary.chars()), s.classes)?;
        let loaded = load_checkpoint(path)?;
        if loaded.len() != model.store.len() {
            return Err(Error::Checkpoint(format!(
                "{} holds {} parameters, the model has {}",
                path.display(),
                loaded.len(),
                model.store.len()
            )));
        }
        for p in loaded.iter() {
            model
                .store
                .set(&p.name, p.value.clone())
                .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        }
        Ok(model)
    }

    /// Errors unless every document's tags belong to this model's tag set.
    pub fn check_tags(&self, docs: &[Document]) -> Result<()> {
        for d in docs {
            for s in &d.segments {
                if let Some(t) = &s.tags {
                    self.tags
                        .encode(t)
                        .map_err(|e| Error::Config(format!("document {}: {e}", d.id)))?;
                }
            }
        }
        Ok(())
    }
}
