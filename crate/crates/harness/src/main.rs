use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mldgseg_core::trainer::MetaMode;
use mldgseg_core::{Error, Result};
use mldgseg_harness::{
    cmd_evaluate, cmd_export_features, cmd_finetune, cmd_predict, cmd_stats, cmd_sweep, cmd_synth,
    cmd_train, ExperimentConfig, Procedure,
};

#[derive(Parser)]
#[command(name = "mldgseg", version, about = "Meta-learned domain generalization for 3D segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (TOML); built-in desk profile when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// baseline, mldg, oracle, or kshot.
    #[arg(long, global = true)]
    procedure: Option<String>,
    #[arg(long, global = true)]
    k: Option<usize>,
    /// exact or first_order.
    #[arg(long, global = true)]
    meta_mode: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the phantom dataset under <out>/data.
    Synth,
    /// Train the configured procedure (kshot delegates to finetune).
    Train,
    /// k-shot fine-tune the checkpoint named in the config.
    Finetune,
    /// Predict label maps for the target's test subjects.
    Predict,
    /// Score predictions; writes metrics.csv and summary.csv.
    Evaluate,
    /// Paired comparison of the runs listed under `compare`.
    Stats,
    /// Write bottleneck features of test patches from every domain.
    ExportFeatures,
    /// Leave-one-domain-out baseline vs mldg over every domain.
    Sweep,
    /// Print a built-in profile as TOML.
    Profile {
        #[arg(value_enum, default_value_t = ProfileName::Desk)]
        name: ProfileName,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileName {
    Desk,
    Benchmark,
    Paper,
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::read(path)?,
        None => ExperimentConfig::desk(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(p) = &cli.procedure {
        cfg.procedure = p.parse::<Procedure>()?;
    }
    if let Some(k) = cli.k {
        cfg.k = k;
    }
    if let Some(m) = &cli.meta_mode {
        cfg.train.meta_mode = m.parse::<MetaMode>()?;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    if let Command::Profile { name } = cli.command {
        let cfg = match name {
            ProfileName::Desk => ExperimentConfig::desk(),
            ProfileName::Benchmark => ExperimentConfig::benchmark(),
            ProfileName::Paper => ExperimentConfig::paper(),
        };
        print!("{}", toml::to_string(&cfg).map_err(|e| Error::Config(e.to_string()))?);
        return Ok(());
    }
    let cfg = load(cli)?;
    match cli.command {
        Command::Synth => println!("{}", cmd_synth(&cfg)?.display()),
        Command::Train => println!("{}", cmd_train(&cfg)?.display()),
        Command::Finetune => println!("{}", cmd_finetune(&cfg)?.display()),
        Command::Predict => {
            for p in cmd_predict(&cfg)? {
                println!("{}", p.display());
            }
        }
        Command::Evaluate => {
            for r in cmd_evaluate(&cfg)?.records {
                println!("{} dice={:.4} assd={:.4}", r.subject, r.dice, r.assd);
            }
        }
        Command::Stats => {
            for r in cmd_stats(&cfg)? {
                println!(
                    "{} dice={:.2}±{:.2} assd={:.3}±{:.3} {}",
                    r.procedure, r.dice_mean, r.dice_std, r.assd_mean, r.assd_std, r.stars
                );
            }
        }
        Command::ExportFeatures => println!("{}", cmd_export_features(&cfg)?.display()),
        Command::Sweep => {
            let res = cmd_sweep(&cfg)?;
            for r in res.pooled {
                println!("{} dice={:.2}±{:.2} {}", r.procedure, r.dice_mean, r.dice_std, r.stars);
            }
        }
        Command::Profile { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ");
            eprintln!("error kind={} message=\"{msg}\"", e.kind());
            ExitCode::FAILURE
        }
    }
}
