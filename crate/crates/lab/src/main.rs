use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Parser, Subcommand};
use exitlab::{emit_plot_data, run, ExperimentConfig};
use exitlab_core::sde::catalog;
use exitlab_core::stats::Rule;
use exitlab_core::TestReport;

#[derive(Parser)]
#[command(
    name = "exitlab",
    version,
    about = "Small-ball exit experiments for SDEs"
)]
struct Cli {
    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Runs the experiment described by a TOML config file.
    Run { config: PathBuf },
    /// Writes KS, exceedance and bias curves from a run manifest.
    PlotData { manifest: PathBuf },
    /// Lists the models and observables.
    Catalog,
}

fn describe(r: &TestReport) -> String {
    let op = match r.rule {
        Rule::PValueAbove => "p >",
        Rule::StatisticAtMost => "<=",
        Rule::StatisticAtLeast => ">=",
    };
    let lhs = match (r.rule, r.p_value) {
        (Rule::PValueAbove, Some(p)) => format!("stat {:.4}, p {p:.4}", r.statistic),
        _ => format!("stat {:.4}", r.statistic),
    };
    let verdict = match (r.gating, r.pass) {
        (true, true) => "PASS",
        (true, false) => "FAIL",
        (false, true) => "ok  ",
        (false, false) => "off ",
    };
    format!(
        "{verdict} n={:<6} {:<24} {lhs} ({op} {})",
        r.provenance.n, r.test_name, r.threshold
    )
}

fn main() -> ExitCode {
    match real_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> anyhow::Result<bool> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(seed) = cli.seed {
                cfg.master_seed = seed;
            }
            if let Some(dir) = cli.out_dir {
                cfg.out_dir = dir;
            }
            let outcome =
                run(&cfg, cli.workers).with_context(|| format!("running {}", config.display()))?;
            for r in &outcome.reports {
                println!("{}", describe(r));
            }
            let gating = outcome.reports.iter().filter(|r| r.gating).count();
            let failed = outcome
                .reports
                .iter()
                .filter(|r| r.gating && !r.pass)
                .count();
            println!(
                "{}: {} of {gating} gating checks passed; manifest {}",
                cfg.experiment,
                gating - failed,
                outcome.manifest_path.display()
            );
            Ok(outcome.passed())
        }
        Command::PlotData { manifest } => {
            let dir = match cli.out_dir {
                Some(d) => d,
                None => manifest.parent().map(PathBuf::from).unwrap_or_default(),
            };
            for path in emit_plot_data(&manifest, &dir)? {
                println!("{}", path.display());
            }
            Ok(true)
        }
        Command::Catalog => {
            println!("models:");
            for id in catalog::model_ids() {
                println!("  {id}");
            }
            println!("observables:");
            for id in catalog::observable_ids() {
                println!("  {id}");
            }
            Ok(true)
        }
    }
}
