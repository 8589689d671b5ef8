//! `latent-plan` subcommands.
//!
//! Configs are `key = value` files; `--set key=value` overrides apply after
//! the file, in order. Errors map to distinct exit codes (see [`exit_code`]).

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{
    evaluate, exit_code, io_err, prepare_data, run_ablation, run_stage, DataSource, PipelineError, RunConfig, Stage,
};
use crate::autodiff::Checkpoint;
use crate::dataset::{curate_corpus, generate_corpus, write_manifest};
use crate::kv::KvMap;

#[derive(Debug, Parser)]
#[command(name = "latent-plan", version, about = "Procedure planning with latent-constrained action diffusion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct ConfigArgs {
    /// `key = value` config file.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set diffusion.epochs=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Read curated samples from this manifest instead of generating the synthetic corpus.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    Vae,
    Classifier,
    Diffusion,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate and curate the synthetic corpus into a manifest plus feature file.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output manifest path; features go to the sibling `<stem>.features.bin`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one stage (or all three in order) into a run directory.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum)]
        stage: StageArg,
        #[arg(long)]
        dir: PathBuf,
    },
    /// Evaluate a trained run; writes report.json and report.csv into the run directory.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        dir: PathBuf,
    },
    /// Train and evaluate the full, no-epsilon and no-injection variants over several seeds.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long)]
        dir: PathBuf,
    },
    /// List the entries of a checkpoint file.
    InspectCheckpoint {
        path: PathBuf,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

impl ConfigArgs {
    pub fn load(&self) -> Result<(RunConfig, DataSource), PipelineError> {
        let mut kv = match &self.config {
            Some(p) => KvMap::parse(&fs::read_to_string(p).map_err(io_err(p))?)?,
            None => KvMap::default(),
        };
        let extra = KvMap::parse(&self.overrides.join("\n"))?;
        kv.merge(&extra);
        let cfg = RunConfig::from_kv(&kv)?;
        cfg.validate().map_err(PipelineError::Config)?;
        let source = match &self.data {
            Some(p) => DataSource::Manifest(p.clone()),
            None => DataSource::Synthetic,
        };
        Ok((cfg, source))
    }
}

#[derive(Debug, Serialize)]
struct EntryInfo<'a> {
    name: &'a str,
    shape: &'a [usize],
    numel: usize,
    /// Small metadata entries are printed in full.
    values: Option<&'a [f64]>,
}

fn inspect(path: &Path, json: bool, out: &mut dyn Write) -> Result<(), PipelineError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let ckpt = Checkpoint::from_bytes(&bytes)?;
    let infos: Vec<EntryInfo> = ckpt
        .entries
        .iter()
        .map(|e| EntryInfo {
            name: &e.name,
            shape: &e.shape,
            numel: e.data.len(),
            values: (e.name.ends_with(".arch")).then_some(e.data.as_slice()),
        })
        .collect();
    let sha = hex::encode(Sha256::digest(&bytes));
    let total: usize = infos.iter().map(|i| i.numel).sum();
    let w = |e: std::io::Error| PipelineError::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    };
    if json {
        let doc = serde_json::json!({ "path": path, "sha256": sha, "values": total, "entries": infos });
        writeln!(out, "{}", serde_json::to_string_pretty(&doc).map_err(|e| PipelineError::Invariant(e.to_string()))?).map_err(w)?;
        return Ok(());
    }
    writeln!(out, "{}  ({} entries, {total} values, sha256 {})", path.display(), infos.len(), &sha[..16]).map_err(w)?;
    let width = infos.iter().map(|i| i.name.len()).max().unwrap_or(0);
    for i in &infos {
        let shape = format!("{:?}", i.shape);
        match i.values {
            Some(v) => writeln!(out, "  {:<width$}  {shape:<12} {v:?}", i.name),
            None => writeln!(out, "  {:<width$}  {shape:<12} {}", i.name, i.numel),
        }
        .map_err(w)?;
    }
    Ok(())
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), PipelineError> {
    let w = |e: std::io::Error| PipelineError::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    };
    match cli.command {
        Command::GenData { cfg, out: path } => {
            let (cfg, _) = cfg.load()?;
            let set = curate_corpus(&generate_corpus(&cfg.dataset)?, cfg.horizon, cfg.curation)?;
            write_manifest(&path, &set)?;
            writeln!(
                out,
                "wrote {} samples (T={}, {}) to {}",
                set.len(),
                cfg.horizon,
                cfg.curation,
                path.display()
            )
            .map_err(w)?;
        }
        Command::Train { cfg, stage, dir } => {
            let (cfg, source) = cfg.load()?;
            let data = prepare_data(&cfg, &source)?;
            let stages: Vec<Stage> = match stage {
                StageArg::Vae => vec![Stage::Vae],
                StageArg::Classifier => vec![Stage::Classifier],
                StageArg::Diffusion => vec![Stage::Diffusion],
                StageArg::All => Stage::ALL.to_vec(),
            };
            for st in stages {
                let s = run_stage(&cfg, &data, st, &dir)?;
                write!(out, "{st}: {} steps, final loss {:.5}", s.losses.len(), s.final_loss()).map_err(w)?;
                if let Some(acc) = s.test_accuracy {
                    write!(out, ", test accuracy {acc:.4}").map_err(w)?;
                }
                writeln!(out, " -> {}", s.checkpoint.display()).map_err(w)?;
            }
        }
        Command::Eval { cfg, dir } => {
            let (cfg, source) = cfg.load()?;
            let data = prepare_data(&cfg, &source)?;
            let r = evaluate(&cfg, &data, &dir)?;
            write!(out, "{}", r.to_csv()).map_err(w)?;
            writeln!(out, "classifier accuracy {:.4}", r.classifier_accuracy).map_err(w)?;
        }
        Command::Ablate { cfg, seeds, dir } => {
            let (cfg, source) = cfg.load()?;
            let data = prepare_data(&cfg, &source)?;
            let r = run_ablation(&cfg, &data, &seeds, &dir)?;
            write!(out, "{}", r.to_csv()).map_err(w)?;
        }
        Command::InspectCheckpoint { path, json } => inspect(&path, json, out)?,
    }
    Ok(())
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit_code::USAGE } else { exit_code::OK };
            let _ = if e.use_stderr() { write!(err, "{e}") } else { write!(out, "{e}") };
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => exit_code::OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
