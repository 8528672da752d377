use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use gpattack_cli::config::{template, ExperimentConfig, Overrides};
use gpattack_cli::{replay, run, Command};
use gpattack_core::KernelFamily;

#[derive(Parser)]
#[command(name = "gpattack", version, about = "Attack experiments against Gaussian process classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit the short- and long-lengthscale victims and report accuracy.
    Train(Common),
    /// Run the evasion attacks against both victims.
    Evade(Common),
    /// Run the model extraction attacks.
    Extract(Common),
    /// Run membership inference against both victims.
    Membership(Common),
    /// Compare the secure ball classifier with a thresholded GP.
    SecureDemo(Common),
    /// Write a configuration template.
    InitConfig {
        /// Use the lengthscale pair of a reference task (e.g. spam, mnist91).
        #[arg(long)]
        reference: Option<String>,
        /// Output file; stdout if omitted.
        output: Option<PathBuf>,
    },
    /// Re-run the experiment recorded in a manifest.
    Replay {
        /// Manifest file or the run directory holding it.
        #[arg(long)]
        manifest: PathBuf,
        /// Write into this directory instead of the recorded one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Rbf,
    Linear,
    Poly,
}

impl From<KernelArg> for KernelFamily {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Rbf => KernelFamily::Rbf,
            KernelArg::Linear => KernelFamily::Linear,
            KernelArg::Poly => KernelFamily::Polynomial,
        }
    }
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    lengthscale_short: Option<f64>,
    #[arg(long)]
    lengthscale_long: Option<f64>,
    #[arg(long, value_enum)]
    kernel: Option<KernelArg>,
    /// `two_moons`, `blobs`, or a CSV file path.
    #[arg(long)]
    data: Option<String>,
}

impl Common {
    fn resolve(self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply(&Overrides {
            seed: self.seed,
            out: self.out,
            lengthscale_short: self.lengthscale_short,
            lengthscale_long: self.lengthscale_long,
            kernel: self.kernel.map(Into::into),
            data: self.data,
        });
        Ok(cfg)
    }
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let (cmd, common) = match cli.command {
        Cmd::Train(c) => (Command::Train, c),
        Cmd::Evade(c) => (Command::Evade, c),
        Cmd::Extract(c) => (Command::Extract, c),
        Cmd::Membership(c) => (Command::Membership, c),
        Cmd::SecureDemo(c) => (Command::SecureDemo, c),
        Cmd::InitConfig { reference, output } => {
            let text = template(reference.as_deref())?.to_toml();
            match output {
                Some(path) => std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{text}"),
            }
            return Ok(());
        }
        Cmd::Replay { manifest, out } => {
            let path = replay(&manifest, out.as_deref())?;
            println!("{}", path.display());
            return Ok(());
        }
    };
    let cfg = common.resolve()?;
    let path = run(cmd, &cfg).with_context(|| format!("{} failed", cmd.name()))?;
    println!("{}", path.display());
    Ok(())
}
