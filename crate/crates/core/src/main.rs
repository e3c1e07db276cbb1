use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use grie::pipeline::{self, evaluate, Config, KChoice, MetricsReport, Model};
use grie::synthdoc::{self, Dataset, Manifest, Split};

/// Graph-revised key information extraction on synthetic documents.
#[derive(Parser)]
#[command(name = "grie", version, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset from a manifest.
    Synth {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the manifest seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model and write the checkpoint, its sidecar and a report.
    Train(RunArgs),
    /// Score a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "val")]
        split: Split,
        /// Also write the report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Emit one JSON prediction per document.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// JSONL destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validation F1 for several neighbour counts.
    SweepK {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated values; `N` means the largest segment count.
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,N")]
        ks: Vec<KChoice>,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train the full model and the four single-branch removals.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Also write the table as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

/// Config file plus per-flag overrides.
#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    stop_at_val_f1: Option<f64>,
    #[arg(long)]
    strict_transitions: bool,
    #[arg(long)]
    no_text: bool,
    #[arg(long)]
    no_visual: bool,
    #[arg(long)]
    no_spatial: bool,
    #[arg(long)]
    no_graph: bool,
}

impl RunArgs {
    fn config(&self) -> Result<Config> {
        let mut c = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        if let Some(v) = &self.data {
            c.data_dir = Some(v.clone());
        }
        if let Some(v) = &self.out {
            c.out_dir = Some(v.clone());
        }
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.lr {
            c.lr = v;
        }
        if let Some(v) = self.k {
            c.k = v;
        }
        if let Some(v) = self.d {
            c.d = v;
            c.d_n = v;
            c.d_lstm = v;
        }
        if self.stop_at_val_f1.is_some() {
            c.stop_at_val_f1 = self.stop_at_val_f1;
        }
        c.strict_transitions |= self.strict_transitions;
        c.no_text |= self.no_text;
        c.no_visual |= self.no_visual;
        c.no_spatial |= self.no_spatial;
        c.no_graph |= self.no_graph;
        c.validate()?;
        Ok(c)
    }
}

fn data_dir(c: &Config) -> Result<&Path> {
    c.data_dir
        .as_deref()
        .context("no dataset directory: pass --data or set data_dir in the config")
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn synth(manifest: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut m = Manifest::load(manifest)?;
    if let Some(s) = seed {
        m.seed = s;
    }
    let ds = synthdoc::generate(&m)?;
    synthdoc::save_dataset(&ds, out)?;
    let stats = ds.manifest.stats.as_ref();
    println!(
        "wrote {} documents to {} (ambiguity injected in {})",
        ds.docs.len(),
        out.display(),
        stats.map_or(0, |s| s.ambiguity_injected)
    );
    Ok(())
}

fn train(args: &RunArgs) -> Result<()> {
    let config = args.config()?;
    let dir = data_dir(&config)?;
    let data = synthdoc::load_dataset(dir)?;
    let out = config.out_dir.clone().unwrap_or_else(|| PathBuf::from("run"));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let run = pipeline::train(&config, &data, |e| {
        let val = e.val_f1.map_or("-".to_string(), |f| format!("{f:.4}"));
        eprintln!(
            "epoch {:>3}  lr {:.1e}  loss {:>9.4}  val_f1 {val}  {:.1}s",
            e.epoch + 1,
            e.lr,
            e.mean_loss,
            e.seconds
        );
    })?;
    let checkpoint = out.join("model.grie");
    run.model.save(&checkpoint)?;

    let val = data.split(Split::Val)?;
    let eval = evaluate(&run.model, val)?;
    let mut report = MetricsReport::new("val", val.len(), &eval, &config);
    report.loss_curve = run.loss_curve;
    report.val_f1_curve = run.val_f1_curve;
    report.epoch_seconds = run.epoch_seconds;
    report.best_epoch = run.best_epoch;
    report.dataset_hash = Some(synthdoc::dataset_hash(dir)?);
    write_json(&out.join("report.json"), &report)?;
    print!("{}", report.table());
    println!("checkpoint written to {}", checkpoint.display());
    Ok(())
}

fn load_split(data: &Path, split: Split) -> Result<Dataset> {
    let ds = synthdoc::load_dataset(data)?;
    ds.split(split)?;
    Ok(ds)
}

fn eval(checkpoint: &Path, data: &Path, split: Split, report_path: Option<&Path>) -> Result<()> {
    let model = Model::load(checkpoint)?;
    let ds = load_split(data, split)?;
    let docs = ds.split(split)?;
    let eval = evaluate(&model, docs)?;
    let mut report = MetricsReport::new(&split.to_string(), docs.len(), &eval, &model.config);
    report.dataset_hash = Some(synthdoc::dataset_hash(data)?);
    if let Some(p) = report_path {
        write_json(p, &report)?;
    }
    print!("{}", report.table());
    Ok(())
}

fn predict(checkpoint: &Path, data: &Path, split: Split, out: Option<&Path>) -> Result<()> {
    let model = Model::load(checkpoint)?;
    let ds = load_split(data, split)?;
    let eval = evaluate(&model, ds.split(split)?)?;
    let mut sink: Box<dyn Write> = match out {
        Some(p) => Box::new(io::BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    };
    let written = eval
        .predictions
        .iter()
        .try_for_each(|p| writeln!(sink, "{}", serde_json::to_string(p)?))
        .and_then(|()| sink.flush());
    match written {
        // A closed reader (`| head`) is not a failure.
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn sweep(args: &RunArgs, ks: &[KChoice], csv: Option<&Path>) -> Result<()> {
    let config = args.config()?;
    let data = synthdoc::load_dataset(data_dir(&config)?)?;
    if data.split(Split::Val)?.is_empty() {
        bail!("the K sweep needs a validation split");
    }
    let rows = pipeline::sweep_k(&config, &data, ks)?;
    match csv {
        Some(p) => {
            let f = fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
            pipeline::write_k_csv(&rows, io::BufWriter::new(f))?;
        }
        None => pipeline::write_k_csv(&rows, io::stdout().lock())?,
    }
    Ok(())
}

fn ablate(args: &RunArgs, report: Option<&Path>) -> Result<()> {
    let config = args.config()?;
    let data = synthdoc::load_dataset(data_dir(&config)?)?;
    let table = pipeline::ablate(&config, &data)?;
    if let Some(p) = report {
        write_json(p, &table)?;
    }
    print!("{}", table.render());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { manifest, out, seed } => synth(&manifest, &out, seed),
        Command::Train(args) => train(&args),
        Command::Eval {
            checkpoint,
            data,
            split,
            report,
        } => eval(&checkpoint, &data, split, report.as_deref()),
        Command::Predict {
            checkpoint,
            data,
            split,
            out,
        } => predict(&checkpoint, &data, split, out.as_deref()),
        Command::SweepK { run, ks, csv } => sweep(&run, &ks, csv.as_deref()),
        Command::Ablate { run, report } => ablate(&run, report.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
