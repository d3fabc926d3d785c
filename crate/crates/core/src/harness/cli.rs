//! Argument parsing and dispatch for the `clueassign` binary.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::archive;
use crate::error::{Error, Result};
use crate::report::ReportFormat;

use super::config::{parse_assigners, FormatName, HarnessConfig};
use super::{SceneSource, OUTPUT_ENTRIES};

#[derive(Debug, Parser)]
#[command(name = "clueassign", version, about = "Multi-clue label assignment harness")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses all available cores, 1 runs sequentially.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output file; standard output when omitted (text formats only).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<FormatArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthPreset {
    /// The configured generator.
    Default,
    /// The configured generator with all jitter disabled.
    Noiseless,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Assign predictions for synthetic or ingested scenes.
    Assign {
        #[arg(long)]
        assigner: String,
        /// Generate scenes instead of reading files.
        #[arg(long, value_enum, conflicts_with_all = ["gt", "pred"])]
        synth: Option<SynthPreset>,
        /// Number of generated scenes.
        #[arg(long)]
        scenes: Option<usize>,
        /// COCO-style ground-truth file.
        #[arg(long, requires = "pred")]
        gt: Option<PathBuf>,
        /// Per-class scored predictions file.
        #[arg(long, requires = "gt")]
        pred: Option<PathBuf>,
    },
    /// Per-size-bucket positive-sample statistics over generated scenes.
    Stats {
        /// Comma-separated assigner names.
        #[arg(long, value_delimiter = ',')]
        assigner: Option<Vec<String>>,
        #[arg(long)]
        scenes: Option<usize>,
    },
    /// Memory update dynamics on synthetic feature clusters.
    MemorySim {
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        momentum: Option<f64>,
    },
    /// Run the enhancement pipeline on saved matrices.
    Enhance {
        #[arg(long)]
        params: PathBuf,
        /// Matrix archive holding an `r_hat` entry.
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        memory: PathBuf,
    },
    /// Write seeded params.bin, features.bin and memory.bin into --out.
    EnhanceInputs {
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        in_features: usize,
        #[arg(long, default_value_t = 4)]
        dim: usize,
        #[arg(long, default_value_t = 2)]
        classes: usize,
    },
}

fn resolve_config(common: &Common) -> Result<HarnessConfig> {
    let mut cfg = match &common.config {
        Some(p) => HarnessConfig::load(p)?,
        None => HarnessConfig::default(),
    };
    if let Some(seed) = common.seed.or(cfg.seed) {
        cfg.apply_seed(seed);
    }
    if let Some(t) = common.threads {
        cfg.threads = t;
    }
    if let Some(f) = common.format {
        cfg.format = match f {
            FormatArg::Json => FormatName::Json,
            FormatArg::Csv => FormatName::Csv,
        };
    }
    Ok(cfg)
}

fn report_format(cfg: &HarnessConfig) -> ReportFormat {
    match cfg.format {
        FormatName::Json => ReportFormat::Json,
        FormatName::Csv => ReportFormat::Csv,
    }
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => fs::write(p, bytes).map_err(|e| Error::io(p, e)),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

/// Sibling path for the CoV table: `report.csv` becomes `report.cov.csv`.
pub fn cov_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.cov.csv"))
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli.common)?;
    let out = cli.common.out.as_deref();
    let format = report_format(&cfg);
    let threads = cfg.threads;
    match cli.command {
        Command::Assign {
            assigner,
            synth,
            scenes,
            gt,
            pred,
        } => {
            let kind = assigner.parse()?;
            let source = match (synth, gt, pred) {
                (Some(preset), _, _) => SceneSource::Synth {
                    cfg: cfg.synth.clone(),
                    count: scenes.unwrap_or(1),
                    noiseless: preset == SynthPreset::Noiseless,
                },
                (None, Some(gt), Some(pred)) => SceneSource::Files { gt, pred },
                _ => {
                    return Err(Error::InvalidConfig(
                        "assign needs --synth <preset> or both --gt and --pred".into(),
                    ))
                }
            };
            let text = super::with_threads(threads, || super::cmd_assign(&cfg.assigner, kind, &source, format))??;
            emit(out, text.as_bytes())
        }
        Command::Stats { assigner, scenes } => {
            let kinds = match assigner {
                Some(names) => parse_assigners(&names)?,
                None => cfg.assigner_kinds()?,
            };
            let n = scenes.unwrap_or(cfg.scenes);
            let res = super::with_threads(threads, || super::cmd_stats(&cfg.assigner, &kinds, &cfg.synth, n, format))??;
            emit(out, res.table.as_bytes())?;
            if let (Some(p), Some(cov)) = (out, &res.cov_table) {
                emit(Some(&cov_path(p)), cov.as_bytes())?;
            }
            for c in &res.report.cov {
                eprintln!("cov {} {}", c.assigner, crate::report::fmt_g6(c.cov));
            }
            Ok(())
        }
        Command::MemorySim { iterations, momentum } => {
            let mut m = cfg.memory_sim.clone();
            if let Some(i) = iterations {
                m.iterations = i;
            }
            if let Some(v) = momentum {
                m.momentum = v;
            }
            emit(out, super::cmd_memory_sim(&m, format)?.as_bytes())
        }
        Command::Enhance {
            params,
            features,
            memory,
        } => {
            let out = out.ok_or_else(|| Error::InvalidConfig("enhance writes a binary archive and needs --out".into()))?;
            let p = archive::read_params(&params)?;
            let f = archive::read_matrices(&features)?;
            let m = archive::read_memory(&memory)?;
            let bytes = super::cmd_enhance(&p, &f, &m)?;
            emit(Some(out), &bytes)?;
            eprintln!("wrote {} to {}", OUTPUT_ENTRIES.join(", "), out.display());
            Ok(())
        }
        Command::EnhanceInputs {
            n,
            in_features,
            dim,
            classes,
        } => {
            let dir = out.ok_or_else(|| Error::InvalidConfig("enhance-inputs needs --out <directory>".into()))?;
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let inputs = super::make_enhance_inputs(cfg.seed.unwrap_or(0), n, in_features, dim, classes)?;
            emit(Some(&dir.join("params.bin")), &inputs.params)?;
            emit(Some(&dir.join("features.bin")), &inputs.features)?;
            emit(Some(&dir.join("memory.bin")), &inputs.memory)
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
/// Failures print a single `error[<category>]: <message>` line.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e.to_string().replace('\n', " "));
            1
        }
    }
}
