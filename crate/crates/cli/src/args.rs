//! Command-line flags. Every flag overrides the matching config-file value.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use threathunt_core::tape::Fault;

use crate::config::RunConfig;
use crate::InputError;

#[derive(Debug, Parser)]
#[command(name = "threathunt", version, about = "Preprocess, augment, train and evaluate the IoT threat classifier")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Seed for every random component.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean, encode, split and standardize a raw CSV into a dataset bundle.
    Preprocess(PreprocessArgs),
    /// Add GAN-generated rows for minority classes to a bundle's training part.
    Augment(AugmentArgs),
    /// Train the classifier on a bundle; writes a checkpoint and history CSV.
    Train(TrainArgs),
    /// Score a checkpoint on a bundle's test part; writes report files.
    Evaluate(EvaluateArgs),
    /// Finite-difference checks of every backward rule.
    Gradcheck(GradcheckArgs),
    /// Print the effective configuration as TOML.
    ShowConfig,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Raw Edge-IIoT CSV.
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    /// Bundle directory to write.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Keep this stratified fraction of the cleaned rows.
    #[arg(long)]
    pub subsample: Option<f64>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// JSON feature recipe replacing the shipped one.
    #[arg(long, value_name = "FILE")]
    pub features: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Input bundle directory.
    #[arg(long, short)]
    pub bundle: Option<PathBuf>,
    /// Augmented bundle directory to write.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Comma-separated classes to multiply by --factor.
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    #[arg(long)]
    pub factor: Option<f64>,
    /// Explicit target, `CLASS=COUNT`; repeatable.
    #[arg(long = "target", value_name = "CLASS=COUNT")]
    pub targets: Vec<String>,
    #[arg(long)]
    pub gan_steps: Option<usize>,
    #[arg(long)]
    pub gan_batch_size: Option<usize>,
    #[arg(long)]
    pub gan_learning_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, short)]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Per-epoch loss/accuracy CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub num_blocks: Option<usize>,
    #[arg(long)]
    pub num_heads: Option<usize>,
    #[arg(long)]
    pub head_size: Option<usize>,
    #[arg(long)]
    pub filters: Option<usize>,
    /// Comma-separated hidden widths of the dense head.
    #[arg(long, value_delimiter = ',')]
    pub mlp_units: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, short)]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Directory for report.json, report.txt and confusion.csv.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Corrupt one backward rule to confirm the check notices.
    #[arg(long, value_name = "RULE", value_parser = parse_fault)]
    pub inject_fault: Option<Fault>,
    /// Also write the summary as JSON.
    #[arg(long, value_name = "FILE")]
    pub json: Option<PathBuf>,
}

fn parse_fault(s: &str) -> Result<Fault, String> {
    s.parse().map_err(|e: threathunt_core::Error| e.to_string())
}

fn set<T>(slot: &mut T, v: &Option<T>)
where
    T: Clone,
{
    if let Some(v) = v {
        *slot = v.clone();
    }
}

fn parse_target(s: &str) -> Result<(String, usize), InputError> {
    let (name, n) = s
        .split_once('=')
        .ok_or_else(|| InputError(format!("--target expects CLASS=COUNT, got `{s}`")))?;
    let n = n
        .trim()
        .parse()
        .map_err(|_| InputError(format!("--target count `{n}` is not a whole number")))?;
    Ok((name.trim().to_string(), n))
}

impl Cli {
    /// Defaults, then the config file, then these flags.
    pub fn resolve_config(&self) -> Result<RunConfig, InputError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        set(&mut cfg.seed, &self.seed);
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        match &self.command {
            Command::Preprocess(a) => {
                if a.input.is_some() {
                    cfg.paths.raw_csv = a.input.clone();
                }
                set(&mut cfg.paths.bundle_dir, &a.out);
                if a.subsample.is_some() {
                    cfg.data.subsample_fraction = a.subsample;
                }
                set(&mut cfg.data.test_fraction, &a.test_fraction);
                if a.features.is_some() {
                    cfg.data.feature_config = a.features.clone();
                }
            }
            Command::Augment(a) => {
                set(&mut cfg.paths.bundle_dir, &a.bundle);
                set(&mut cfg.paths.augmented_dir, &a.out);
                set(&mut cfg.augment.classes, &a.classes);
                set(&mut cfg.augment.factor, &a.factor);
                for t in &a.targets {
                    let (name, n) = parse_target(t)?;
                    cfg.augment.targets.insert(name, n);
                }
                set(&mut cfg.gan.steps, &a.gan_steps);
                set(&mut cfg.gan.batch_size, &a.gan_batch_size);
                set(&mut cfg.gan.learning_rate, &a.gan_learning_rate);
            }
            Command::Train(a) => {
                set(&mut cfg.paths.bundle_dir, &a.bundle);
                set(&mut cfg.paths.checkpoint, &a.checkpoint);
                set(&mut cfg.paths.history, &a.history);
                let m = &mut cfg.model;
                set(&mut m.epochs, &a.epochs);
                set(&mut m.batch_size, &a.batch_size);
                set(&mut m.learning_rate, &a.learning_rate);
                set(&mut m.dropout, &a.dropout);
                set(&mut m.num_blocks, &a.num_blocks);
                set(&mut m.num_heads, &a.num_heads);
                set(&mut m.head_size, &a.head_size);
                set(&mut m.filters, &a.filters);
                set(&mut m.mlp_units, &a.mlp_units);
            }
            Command::Evaluate(a) => {
                set(&mut cfg.paths.bundle_dir, &a.bundle);
                set(&mut cfg.paths.checkpoint, &a.checkpoint);
                set(&mut cfg.paths.report_dir, &a.out);
            }
            Command::Gradcheck(_) | Command::ShowConfig => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.toml");
        std::fs::write(&file, "seed = 7\n[model]\nepochs = 3\nbatch_size = 32\n").unwrap();
        let cli = Cli::parse_from([
            "threathunt",
            "--config",
            file.to_str().unwrap(),
            "train",
            "--epochs",
            "5",
        ]);
        let cfg = cli.resolve_config().unwrap();
        assert_eq!(cfg.model.epochs, 5);
        assert_eq!(cfg.model.batch_size, 32);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.model.learning_rate, 1e-3);
    }

    #[test]
    fn targets_parse() {
        assert_eq!(parse_target("MITM=500").unwrap(), ("MITM".into(), 500));
        assert!(parse_target("MITM").is_err());
        assert!(parse_target("MITM=x").is_err());
    }

    #[test]
    fn fault_names() {
        let cli = Cli::parse_from(["threathunt", "gradcheck", "--inject-fault", "matmul"]);
        match cli.command {
            Command::Gradcheck(a) => assert_eq!(a.inject_fault, Some(Fault::MatMul)),
            _ => unreachable!(),
        }
        assert!(Cli::try_parse_from(["threathunt", "gradcheck", "--inject-fault", "nope"]).is_err());
    }
}
