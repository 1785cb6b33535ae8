use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use acpretrain::config::ExperimentConfig;
use acpretrain::error::{Error, Result};
use acpretrain::experiment::{make_expert, run_experiment};
use acpretrain::plot::plot_experiment;
use acpretrain::verify::{run_suite, CertificateRow, Suite};

/// Actor-critic pretraining from reward-free demonstrations.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed override: a single run seed, the expert seed, or the verification seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the config's `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Baseline and pretrained learning curves across seeds.
    Run,
    /// Train an expert to the configured threshold and record demonstrations.
    MakeExpert,
    /// Run a verification sweep and write its certificate.
    Verify {
        /// theorem1, gradients or retrace
        #[arg(long, default_value = "theorem1")]
        suite: String,
    },
    /// Render curves.svg for an experiment directory.
    Plot,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn certificate_csv(rows: &[CertificateRow]) -> String {
    let mut out = String::from("check,detail,error,tolerance,pass\n");
    for r in rows {
        out += &format!("{},\"{}\",{:e},{:e},{}\n", r.check, r.detail.replace('"', "'"), r.error, r.tolerance, r.pass);
    }
    out
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Run => {
            let mut cfg = load_config(&cli)?;
            if let Some(seed) = cli.seed {
                cfg.seeds = vec![seed];
            }
            let out = run_experiment(&cfg, &cfg.out)?;
            for s in &out.summaries {
                println!(
                    "{}: reached {}/{}  median steps-to-threshold {}  IQR [{}, {}]",
                    s.variant.name(),
                    s.reached,
                    s.seeds,
                    s.median,
                    s.q1,
                    s.q3
                );
            }
            println!("wrote {}", out.dir.display());
        }
        Command::MakeExpert => {
            let mut cfg = load_config(&cli)?;
            if let Some(seed) = cli.seed {
                cfg.demos.expert_seed = seed;
            }
            let dir = cfg.out.clone();
            let report = make_expert(&cfg, &dir)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Verify { suite } => {
            let suite: Suite = suite.parse()?;
            let seed = cli.seed.unwrap_or(0);
            let rows = run_suite(suite, seed)?;
            let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
            std::fs::create_dir_all(&dir)?;
            let path = dir.join(format!("certificate_{suite:?}.csv").to_lowercase());
            std::fs::write(&path, certificate_csv(&rows))?;
            let failed: Vec<&CertificateRow> = rows.iter().filter(|r| !r.pass).collect();
            let worst = rows.iter().map(|r| r.error).fold(0.0, f64::max);
            println!("{} checks, {} failed, worst error {worst:e}; certificate {}", rows.len(), failed.len(), path.display());
            if let Some(first) = failed.first() {
                return Err(Error::Verification(format!("{}: {} (error {:e})", first.check, first.detail, first.error)));
            }
        }
        Command::Plot => {
            let cfg = load_config(&cli)?;
            let dir = cli.out.clone().unwrap_or(cfg.out.clone());
            let threshold = cli.config.as_ref().map(|_| cfg.threshold);
            println!("wrote {}", plot_experiment(&dir, threshold)?.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
