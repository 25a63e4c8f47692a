//! Command-line front end: binds an experiment configuration to corpus
//! generation, pretraining, cluster evaluation, fine-tuning, decoding and
//! reporting.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::bail;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

pub mod commands;
pub mod config;

pub use config::{ConfigError, ExperimentConfig, EFFECTIVE_CONFIG, PRESETS};

#[derive(Debug, Parser)]
#[command(name = "avhubert", version, about = "Audio-visual masked cluster prediction on a synthetic corpus")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HandFeature {
    Mfcc,
    Hog,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum StreamArg {
    #[value(name = "AV")]
    #[serde(rename = "AV")]
    Av,
    #[value(name = "V")]
    #[serde(rename = "V")]
    V,
    #[value(name = "A")]
    #[serde(rename = "A")]
    A,
}

/// Flags shared by every experiment stage.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment configuration (JSON).
    #[arg(short = 'c', long = "config")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(short = 'o', long = "out")]
    pub out: PathBuf,
    /// Root seed, overriding the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Variant preset applied over the configuration.
    #[arg(long)]
    pub variant: Option<String>,
    /// Upper bound on worker threads.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Floating-point precision of model computations.
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    pub precision: Precision,
    /// Corpus directory, overriding `paths.corpus`.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus.
    GenCorpus(Common),
    /// Run iterative masked-prediction pretraining.
    Pretrain(Common),
    /// Cluster hand or model features and score them against frame phones.
    ClusterEval {
        #[command(flatten)]
        common: Common,
        /// Model checkpoint whose layer features are clustered.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Hand feature clustered when no checkpoint is given.
        #[arg(long, value_enum)]
        features: Option<HandFeature>,
        #[arg(long)]
        layer: Option<usize>,
        #[arg(short = 'k', long)]
        k: Option<usize>,
        /// Streams fed to the model; defaults to those it was trained on.
        #[arg(long, value_enum)]
        stream: Option<StreamArg>,
    },
    /// CTC fine-tuning, from scratch or a pretrained checkpoint, optionally
    /// with pseudo-labeled pretraining data.
    Finetune {
        #[command(flatten)]
        common: Common,
        /// Pretrained checkpoint, overriding `paths.checkpoint`.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Train from a fresh initialization even if a checkpoint is configured.
        #[arg(long, conflicts_with = "init")]
        scratch: bool,
        /// Fine-tuned model that pseudo-labels the pretrain split.
        #[arg(long)]
        labeler: Option<PathBuf>,
    },
    /// Decode the test split with a fine-tuned checkpoint.
    Decode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Tabulate run and decode directories into CSV.
    Report {
        #[arg(short = 'o', long = "out")]
        out: PathBuf,
        /// Run or decode directories.
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
    /// Run the oracle suites.
    Selftest,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig, ConfigError> {
        if self.workers == 0 {
            return Err(ConfigError::field("--workers", "must be at least 1"));
        }
        let mut cfg = ExperimentConfig::load(self.config.as_deref(), self.variant.as_deref(), self.seed)?;
        if let Some(c) = &self.corpus {
            cfg.paths.corpus = Some(c.clone());
        }
        Ok(cfg)
    }
}

fn corpus_dir(cfg: &ExperimentConfig) -> Result<&Path, ConfigError> {
    cfg.paths
        .corpus
        .as_deref()
        .ok_or_else(|| ConfigError::field("paths.corpus", "no corpus directory configured; pass --corpus"))
}

macro_rules! dispatch {
    ($precision:expr, $f:ident($($arg:expr),*)) => {
        match $precision {
            Precision::F32 => commands::$f::<f32>($($arg),*),
            Precision::F64 => commands::$f::<f64>($($arg),*),
        }
    };
}

/// Executes a parsed command line.
pub fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenCorpus(common) => {
            let cfg = common.config()?;
            cfg.write(&common.out)?;
            let manifest = commands::gen_corpus(&cfg, &common.out)?;
            println!("wrote {} utterances to {}", manifest.records.len(), common.out.display());
        }
        Command::Pretrain(common) => {
            let cfg = common.config()?;
            let corpus = commands::open_corpus(&cfg, corpus_dir(&cfg)?)?;
            cfg.write(&common.out)?;
            let record = dispatch!(common.precision, pretrain(&cfg, &corpus, &common.out))?;
            for it in &record.iterations {
                println!("iteration {}: K {} purity {:.4} nmi {:.4}", it.iteration, it.k, it.purity, it.nmi);
            }
        }
        Command::ClusterEval {
            common,
            checkpoint,
            features,
            layer,
            k,
            stream,
        } => {
            let mut cfg = common.config()?;
            if checkpoint.is_some() {
                cfg.paths.checkpoint = checkpoint;
            }
            if cfg.paths.checkpoint.is_some() && features.is_some() {
                bail!(ConfigError::field("--features", "hand features cannot be combined with a checkpoint"));
            }
            let corpus = commands::open_corpus(&cfg, corpus_dir(&cfg)?)?;
            cfg.write(&common.out)?;
            let request = commands::ClusterRequest {
                hand: features,
                layer,
                k,
                stream,
            };
            let s = dispatch!(common.precision, cluster_eval(&cfg, &corpus, &request, &common.out))?;
            println!("{} K {} purity {:.4} nmi {:.4}", s.source.feature_kind, s.k, s.purity, s.nmi);
        }
        Command::Finetune {
            common,
            init,
            scratch,
            labeler,
        } => {
            let mut cfg = common.config()?;
            if init.is_some() {
                cfg.paths.checkpoint = init;
            }
            if scratch {
                cfg.paths.checkpoint = None;
            }
            if labeler.is_some() {
                cfg.paths.labeler = labeler;
            }
            if cfg.paths.labeler.is_some() && cfg.paths.checkpoint.is_none() {
                bail!(ConfigError::field("paths.labeler", "self-training starts from a pretrained checkpoint"));
            }
            let corpus = commands::open_corpus(&cfg, corpus_dir(&cfg)?)?;
            cfg.write(&common.out)?;
            let s = dispatch!(common.precision, finetune(&cfg, &corpus, &common.out))?;
            println!("best step {:?} validation phone error rate {:?}", s.best_step, s.best_score);
        }
        Command::Decode { common, checkpoint } => {
            let mut cfg = common.config()?;
            if checkpoint.is_some() {
                cfg.paths.checkpoint = checkpoint;
            }
            let ckpt = cfg
                .paths
                .checkpoint
                .clone()
                .ok_or_else(|| ConfigError::field("paths.checkpoint", "decode needs a fine-tuned checkpoint"))?;
            let corpus = commands::open_corpus(&cfg, corpus_dir(&cfg)?)?;
            cfg.write(&common.out)?;
            let rec = dispatch!(common.precision, decode(&cfg, &corpus, &ckpt, &common.out))?;
            println!("WER {:.4} over {} utterances", rec.wer, rec.utterances.len());
        }
        Command::Report { out, dirs } => {
            let paths = avhubert::decode::report::report(&dirs, &out)?;
            for p in paths {
                println!("{}", p.display());
            }
        }
        Command::Selftest => {
            let results = avhubert::selftest::run_all();
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            if failed > 0 {
                bail!("{failed} of {} oracle suites failed", results.len());
            }
        }
    }
    Ok(())
}

/// Exit status of a failed command: 2 for configuration problems, 1 for
/// anything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let config = err.chain().any(|e| {
        e.downcast_ref::<ConfigError>().is_some() || matches!(e.downcast_ref::<avhubert::Error>(), Some(avhubert::Error::Config(_)))
    });
    if config {
        2
    } else {
        1
    }
}

/// The error and those of its causes not already quoted in its message.
fn describe(err: &anyhow::Error) -> String {
    let mut msg = err.to_string();
    for cause in err.chain().skip(1) {
        let c = cause.to_string();
        if !msg.contains(&c) {
            msg = format!("{msg}: {c}");
        }
    }
    msg
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            exit_code(&e)
        }
    }
}
