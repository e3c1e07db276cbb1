use std::fmt::{self, Write as _};
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate, train, Config};
use crate::error::{Error, Result};
use crate::synthdoc::{Dataset, Split};

/// A neighbour count, or the largest segment count in the dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KChoice {
    Fixed(usize),
    MaxSegments,
}

impl FromStr for KChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("n") {
            return Ok(KChoice::MaxSegments);
        }
        match s.parse::<usize>() {
            Ok(k) if k > 0 => Ok(KChoice::Fixed(k)),
            _ => Err(Error::Config(format!("K must be a positive integer or N, got `{s}`"))),
        }
    }
}

impl fmt::Display for KChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KChoice::Fixed(k) => write!(f, "{k}"),
            KChoice::MaxSegments => f.write_str("N"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KRow {
    pub k: usize,
    pub val_f1: f64,
}

/// Trains and validates one model per K with the same seed. Runs execute
/// in parallel; each is deterministic on its own.
pub fn sweep_k(config: &Config, data: &Dataset, ks: &[KChoice]) -> Result<Vec<KRow>> {
    if ks.is_empty() {
        return Err(Error::Config("no K values to sweep".into()));
    }
    let n = data.max_segments().max(1);
    let val = data.split(Split::Val)?;
    ks.par_iter()
        .map(|choice| {
            let k = match choice {
                KChoice::Fixed(k) => *k,
                KChoice::MaxSegments => n,
            };
            let cfg = Config { k, ..config.clone() };
            let run = train(&cfg, data, |_| {})?;
            let val_f1 = evaluate(&run.model, val)?.scores.micro.f1();
            Ok(KRow { k, val_f1 })
        })
        .collect()
}

pub fn write_k_csv(rows: &[KRow], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "k,val_f1")?;
    for r in rows {
        writeln!(out, "{},{:.6}", r.k, r.val_f1)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub setting: String,
    pub f1: f64,
    /// Located F1 on the numeric classes.
    pub pair_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub split: String,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// The full model first, then each removal with its change in F1.
    pub fn render(&self) -> String {
        let mut s = format!("ablation on {}\n", self.split);
        let _ = writeln!(
            s,
            "{:<12} {:>8} {:>8} {:>8} {:>8}",
            "setting", "f1", "delta", "pair_f1", "delta"
        );
        let base = &self.rows[0];
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<12} {:>8.4} {:>+8.4} {:>8.4} {:>+8.4}",
                r.setting,
                r.f1,
                r.f1 - base.f1,
                r.pair_f1,
                r.pair_f1 - base.pair_f1
            );
        }
        s
    }
}

/// Configurations of the ablation study, full model first.
pub fn ablation_configs(config: &Config) -> Vec<Config> {
    let base = Config {
        no_text: false,
        no_visual: false,
        no_spatial: false,
        no_graph: false,
        ..config.clone()
    };
    vec![
        base.clone(),
        Config {
            no_spatial: true,
            ..base.clone()
        },
        Config {
            no_text: true,
            ..base.clone()
        },
        Config {
            no_visual: true,
            ..base.clone()
        },
        Config { no_graph: true, ..base },
    ]
}

/// Trains the five settings and scores each on the test split (validation
/// if there is no test data).
pub fn ablate(config: &Config, data: &Dataset) -> Result<AblationTable> {
    let split = if data.split(Split::Test)?.is_empty() {
        Split::Val
    } else {
        Split::Test
    };
    let docs = data.split(split)?;
    let rows = ablation_configs(config)
        .par_iter()
        .map(|cfg| {
            let run = train(cfg, data, |_| {})?;
            let e = evaluate(&run.model, docs)?;
            Ok(AblationRow {
                setting: cfg.ablation_label().to_string(),
                f1: e.scores.micro.f1(),
                pair_f1: e.pair_scores.micro.f1(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(AblationTable {
        split: split.to_string(),
        rows,
    })
}
